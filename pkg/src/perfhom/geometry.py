"""Unit-cell meshing with a circular hole and periodic tiling.

The cell mesh is a structured "union jack" triangulation of the unit square
with step ``h = 2**-L``.  A hole is carved by snapping grid vertices that lie
close to the circle onto it and cutting the triangles that still cross it.
Every vertex off the cell faces is either an untouched grid vertex or lies on
the exact circle, and the face vertices sit at dyadic coordinates ``k * h``,
which is what makes periodic pairing and tiling exact.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometry, MeshQuality, StitchFailure

SIGMA = "SIGMA"
GAMMA = "GAMMA"
FACE_L = "CELL_FACE_L"
FACE_R = "CELL_FACE_R"
FACE_B = "CELL_FACE_B"
FACE_T = "CELL_FACE_T"
CELL_FACES = (FACE_L, FACE_R, FACE_B, FACE_T)

MIN_ANGLE_DEG = 15.0
# vertices closer than SNAP * h to the circle are projected onto it
SNAP = 0.45


@dataclass(frozen=True)
class CellGeometry:
    hole_center: tuple = (0.5, 0.5)
    hole_radius: float = 0.25
    refinement: int = 4

    @property
    def h(self) -> float:
        return 2.0 ** -self.refinement

    def validate(self) -> None:
        if int(self.refinement) != self.refinement or self.refinement < 2:
            raise InvalidGeometry(f"refinement must be an integer >= 2, got {self.refinement}")
        r = self.hole_radius
        if not 0.0 <= r <= 0.4:
            raise InvalidGeometry(f"hole radius {r} outside [0, 0.4]")
        if r == 0.0:
            return
        cx, cy = self.hole_center
        pad = r + 2 * self.h
        if not (0.0 < cx - pad and cx + pad < 1.0 and 0.0 < cy - pad and cy + pad < 1.0):
            raise InvalidGeometry(
                f"hole (center {self.hole_center}, radius {r}) violates the 2h margin "
                f"at refinement {self.refinement}"
            )


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edge_groups: dict = field(default_factory=dict)
    periodic_pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    geometry: CellGeometry | None = None
    # tiling bookkeeping: for meshes produced by tile_perforated_mesh
    n_tiles: int = 1
    cell_triangle: np.ndarray | None = None

    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    @property
    def eps(self) -> float:
        return 1.0 / self.n_tiles

    @property
    def h_max(self) -> float:
        return float(np.sqrt(_edge_lengths_sq(self.vertices, self.triangles).max()))

    def edges(self, tag: str) -> np.ndarray:
        from .errors import MissingTag

        if tag not in self.edge_groups:
            raise MissingTag(f"mesh has no edge group {tag!r}")
        return self.edge_groups[tag]

    def has_edges(self, tag: str) -> bool:
        return tag in self.edge_groups and len(self.edge_groups[tag]) > 0

    def tag_nodes(self, tag: str) -> np.ndarray:
        return np.unique(self.edges(tag).ravel())

    @property
    def uid(self) -> str:
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        return h.hexdigest()[:16]

    def areas(self) -> np.ndarray:
        return signed_areas(self.vertices, self.triangles)


@dataclass(frozen=True)
class QualityReport:
    min_angle: float
    h_max: float
    area: float
    euler_characteristic: int
    n_vertices: int
    n_triangles: int


def signed_areas(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _edge_lengths_sq(vertices, triangles):
    p = vertices[triangles]
    return np.stack(
        [((p[:, (k + 1) % 3] - p[:, k]) ** 2).sum(axis=1) for k in range(3)], axis=1
    )


def min_angles(vertices, triangles) -> np.ndarray:
    """Smallest interior angle of each triangle, in degrees."""
    p = vertices[triangles]
    angles = []
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cos = (a * b).sum(1) / np.sqrt((a * a).sum(1) * (b * b).sum(1))
        angles.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return np.min(angles, axis=0)


def unique_edges(triangles) -> tuple[np.ndarray, np.ndarray]:
    """Sorted unique edges and the number of triangles sharing each."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    return edges, counts


def _structured_grid(n):
    idx = np.arange(n + 1)
    I, J = np.meshgrid(idx, idx)
    vertices = np.column_stack([I.ravel(), J.ravel()]).astype(float) / n
    tris = []
    for j in range(n):
        for i in range(n):
            v00 = j * (n + 1) + i
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            if (i + j) % 2 == 0:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]
    return vertices, np.array(tris, dtype=np.int64)


def _circle_point(p, center, r):
    d = p - center
    return center + r * d / np.hypot(d[0], d[1])


def _carve_hole(vertices, triangles, center, r, h):
    """Snap near-circle vertices, drop interior triangles, cut crossing ones."""
    verts = [v for v in vertices.copy()]
    center = np.asarray(center, dtype=float)
    phi = np.hypot(vertices[:, 0] - center[0], vertices[:, 1] - center[1]) - r
    snapped = (np.abs(phi) < SNAP * h) & (phi > -r)
    for i in np.flatnonzero(snapped):
        verts[i] = _circle_point(vertices[i], center, r)
    sign = np.where(snapped, 0, np.sign(phi)).astype(int)

    cut_points = {}

    def cut(a, b):
        key = (min(a, b), max(a, b))
        if key not in cut_points:
            pa, pb = verts[a], verts[b]
            # |pa + t (pb - pa) - c| = r, root with t in (0, 1)
            d = pb - pa
            f = pa - center
            qa, qb, qc = d @ d, 2 * f @ d, f @ f - r * r
            disc = np.sqrt(qb * qb - 4 * qa * qc)
            ts = [(-qb - disc) / (2 * qa), (-qb + disc) / (2 * qa)]
            t = min(ts, key=lambda t: abs(t - 0.5))
            verts.append(_circle_point(pa + t * d, center, r))
            cut_points[key] = len(verts) - 1
        return cut_points[key]

    out = []
    for tri in triangles:
        s = sign[tri]
        if (s >= 0).all():
            if (s == 0).all():
                continue  # chord triangle inside the disk
            out.append(tuple(tri))
            continue
        if (s <= 0).all():
            continue
        # rotate so the pattern starts at a fixed position, keeping orientation
        for rot in range(3):
            t = np.roll(tri, -rot)
            ss = np.roll(s, -rot)
            if ss[0] < 0 and ss[1] > 0 and ss[2] > 0:
                c1, c2 = cut(t[0], t[1]), cut(t[0], t[2])
                out += _split_quad(verts, c1, t[1], t[2], c2)
                break
            if ss[0] > 0 and ss[1] < 0 and ss[2] < 0:
                out.append((t[0], cut(t[0], t[1]), cut(t[0], t[2])))
                break
            if ss[0] > 0 and ss[1] < 0 and ss[2] == 0:
                out.append((t[0], cut(t[0], t[1]), t[2]))
                break
            if ss[0] > 0 and ss[1] == 0 and ss[2] < 0:
                out.append((t[0], t[1], cut(t[0], t[2])))
                break
        else:  # pragma: no cover - all sign patterns are handled above
            raise MeshQuality(f"unhandled cut pattern {s}")
    return np.array(verts), np.array(out, dtype=np.int64)


def _near_hole(vertices, triangles, center, r, h):
    """Triangles with a vertex within ``3h`` of the circle."""
    d = np.abs(np.hypot(vertices[:, 0] - center[0], vertices[:, 1] - center[1]) - r)
    return (d[triangles] < 3 * h).any(axis=1)


def _edge_owners(tris, active):
    owner = {}
    for t in active:
        tri = tris[t]
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            owner.setdefault((min(a, b), max(a, b)), []).append(t)
    return owner


def _split_long_edges(vertices, triangles, center, r, h):
    """Bisect edges stretched beyond the grid diagonal by snapping.

    Midpoints of hole-boundary edges are pushed back onto the circle.
    """
    limit = 2.0 * h * h * (1 + 1e-12)
    verts = [v for v in vertices]
    tris = [tuple(t) for t in triangles]
    active = set(np.flatnonzero(_near_hole(vertices, triangles, center, r, h)).tolist())
    owner = _edge_owners(tris, active)
    while True:
        long = [(((verts[a] - verts[b]) ** 2).sum(), e) for e in owner for a, b in [e]]
        lsq, edge = max(long)
        if lsq <= limit:
            return np.array(verts), np.array(tris, dtype=np.int64)
        a, b = edge
        owners = owner.pop(edge)
        m = 0.5 * (verts[a] + verts[b])
        if len(owners) == 1:
            m = _circle_point(m, center, r)
        verts.append(m)
        mi = len(verts) - 1
        for i in owners:
            t = tris[i]
            c = next(v for v in t if v != a and v != b)
            # keep counterclockwise order of the original triangle
            pos = {v: n for n, v in enumerate(t)}
            first, second = (a, b) if (pos[b] - pos[a]) % 3 == 1 else (b, a)
            tris[i] = (first, mi, c)
            tris.append((mi, second, c))
            new = len(tris) - 1
            for e, own in ((first, i), (second, new)):
                owner.setdefault((min(e, mi), max(e, mi)), []).append(own)
            owner.setdefault((min(mi, c), max(mi, c)), []).extend([i, new])
            key = (min(second, c), max(second, c))
            owner[key] = [new if o == i else o for o in owner[key]]


def _improve_by_flips(vertices, triangles, center, r, h, max_sweeps=20):
    """Flip edges near the hole while that raises the local minimum angle.

    Flips that would create an edge longer than the grid diagonal are skipped.
    """
    limit = 2.0 * h * h * (1 + 1e-12)
    tris = triangles.copy()
    active = np.flatnonzero(_near_hole(vertices, triangles, center, r, h)).tolist()
    for _ in range(max_sweeps):
        flipped = False
        owner = _edge_owners(tris, active)
        touched = set()
        for (a, b), own in sorted(owner.items()):
            if len(own) != 2:
                continue
            t1, t2 = own
            if t1 in touched or t2 in touched:
                continue
            k1 = next(k for k in range(3) if {tris[t1][k], tris[t1][(k + 1) % 3]} == {a, b})
            k2 = next(k for k in range(3) if {tris[t2][k], tris[t2][(k + 1) % 3]} == {a, b})
            c = tris[t1][(k1 + 2) % 3]
            d = tris[t2][(k2 + 2) % 3]
            p, q = tris[t1][k1], tris[t1][(k1 + 1) % 3]  # t1 = (p, q, c) ccw
            new = np.array([[p, d, c], [d, q, c]])
            if (signed_areas(vertices, new) <= 0).any():
                continue
            if ((vertices[c] - vertices[d]) ** 2).sum() > limit:
                continue
            old_min = min_angles(vertices, tris[[t1, t2]]).min()
            if min_angles(vertices, new).min() > old_min + 1e-9:
                tris[t1], tris[t2] = new
                touched |= {t1, t2}
                flipped = True
        if not flipped:
            break
    return tris


def _smooth(vertices, triangles, center, r, h, sweeps=5):
    """Move free vertices near the hole towards their neighbour average.

    A move is kept only if it raises the minimum angle of the vertex star
    without creating an edge longer than the grid diagonal.
    """
    limit = 2.0 * h * h * (1 + 1e-12)
    vertices = vertices.copy()
    dist = np.hypot(vertices[:, 0] - center[0], vertices[:, 1] - center[1])
    boundary = np.zeros(len(vertices), dtype=bool)
    edges, counts = unique_edges(triangles)
    boundary[edges[counts == 1].ravel()] = True
    on_face = ((vertices == 0.0) | (vertices == 1.0)).any(axis=1)
    free = ~boundary & ~on_face & (np.abs(dist - r) < 3 * h)
    star = {v: [] for v in np.flatnonzero(free)}
    for t, tri in enumerate(triangles):
        for v in tri:
            if v in star:
                star[v].append(t)
    for _ in range(sweeps):
        moved = False
        for v, ts in star.items():
            if not ts:
                continue
            local = triangles[ts]
            nbrs = np.unique(local[local != v])
            old = vertices[v].copy()
            before = min_angles(vertices, local).min()
            vertices[v] = vertices[nbrs].mean(axis=0)
            ok = (
                (signed_areas(vertices, local) > 0).all()
                and (((vertices[nbrs] - vertices[v]) ** 2).sum(axis=1) <= limit).all()
                and min_angles(vertices, local).min() > before + 1e-9
            )
            if ok:
                moved = True
            else:
                vertices[v] = old
        if not moved:
            break
    return vertices


def _split_quad(verts, a, b, c, d):
    """Split CCW quad a-b-c-d along the diagonal giving the larger min angle."""
    cands = [[(a, b, c), (a, c, d)], [(a, b, d), (b, c, d)]]
    ids = [a, b, c, d]
    local = np.array([verts[i] for i in ids])
    pos = {v: k for k, v in enumerate(ids)}
    return max(
        cands,
        key=lambda ts: min_angles(local, np.array([[pos[v] for v in t] for t in ts])).min(),
    )


def _compact(vertices, triangles):
    used = np.unique(triangles)
    remap = -np.ones(len(vertices), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[triangles]


def _boundary_groups(vertices, triangles):
    edges, counts = unique_edges(triangles)
    bnd = edges[counts == 1]
    p0, p1 = vertices[bnd[:, 0]], vertices[bnd[:, 1]]
    groups = {}
    for tag, axis, val in ((FACE_L, 0, 0.0), (FACE_R, 0, 1.0), (FACE_B, 1, 0.0), (FACE_T, 1, 1.0)):
        groups[tag] = (p0[:, axis] == val) & (p1[:, axis] == val)
    on_face = np.any(list(groups.values()), axis=0)
    out = {tag: bnd[mask] for tag, mask in groups.items()}
    out[SIGMA] = bnd[~on_face]
    return out


def _periodic_pairs(vertices, n):
    key = np.rint(vertices * n).astype(np.int64)
    on_grid = np.all(key == vertices * n, axis=1)
    index = {tuple(k): i for i, k in enumerate(key) if on_grid[i]}
    pairs = []
    for j in range(n + 1):
        pairs.append((index[(0, j)], index[(n, j)]))
    for i in range(n):
        pairs.append((index[(i, 0)], index[(i, n)]))
    return np.array(pairs, dtype=np.int64)


def build_cell_mesh(geom: CellGeometry) -> TriMesh:
    geom.validate()
    n = 2 ** geom.refinement
    vertices, triangles = _structured_grid(n)
    if geom.hole_radius > 0:
        vertices, triangles = _carve_hole(
            vertices, triangles, geom.hole_center, geom.hole_radius, geom.h
        )
        vertices, triangles = _split_long_edges(
            vertices, triangles, geom.hole_center, geom.hole_radius, geom.h
        )
        triangles = _improve_by_flips(
            vertices, triangles, geom.hole_center, geom.hole_radius, geom.h
        )
        vertices = _smooth(vertices, triangles, geom.hole_center, geom.hole_radius, geom.h)
        triangles = _improve_by_flips(
            vertices, triangles, geom.hole_center, geom.hole_radius, geom.h
        )
        vertices, triangles = _compact(vertices, triangles)
    groups = _boundary_groups(vertices, triangles)
    mesh = TriMesh(
        vertices=vertices,
        triangles=triangles,
        edge_groups=groups,
        periodic_pairs=_periodic_pairs(vertices, n),
        geometry=geom,
    )
    _check_cell_mesh(mesh)
    return mesh


def _check_cell_mesh(mesh):
    if (mesh.areas() <= 0).any():
        raise MeshQuality("inverted or degenerate triangle after hole carving")
    worst = min_angles(mesh.vertices, mesh.triangles).min()
    if worst < MIN_ANGLE_DEG:
        raise MeshQuality(f"minimum angle {worst:.2f} deg below {MIN_ANGLE_DEG}")
    sigma = mesh.edge_groups[SIGMA]
    if mesh.geometry.hole_radius > 0:
        _check_closed_loop(sigma)
    elif len(sigma):
        raise MeshQuality("unexpected interior boundary in a mesh without hole")


def _check_closed_loop(edges):
    if len(edges) < 3:
        raise MeshQuality("hole boundary has fewer than 3 edges")
    nodes, deg = np.unique(edges.ravel(), return_counts=True)
    if (deg != 2).any():
        raise MeshQuality("hole boundary is not a simple loop")
    adj = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    start = edges[0, 0]
    prev, cur, seen = None, start, 1
    while True:
        nxt = adj[cur][0] if adj[cur][0] != prev else adj[cur][1]
        prev, cur = cur, nxt
        if cur == start:
            break
        seen += 1
    if seen != len(nodes):
        raise MeshQuality("hole boundary splits into several loops")


def tile_perforated_mesh(cell: TriMesh, N: int) -> TriMesh:
    """Stitch ``N x N`` copies of ``cell`` scaled by ``1/N`` into a mesh of the unit square.

    Triangles of copy ``(I, J)`` are stored at ``(J*N + I) * cell.nt + t`` so the
    cell triangle under any fine triangle is ``cell_triangle[t]``.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    n = 2 ** cell.geometry.refinement
    cv = cell.vertices
    grid_key = np.rint(cv * n).astype(np.int64)
    on_grid = np.all(grid_key == cv * n, axis=1)
    face = (cv[:, 0] == 0) | (cv[:, 0] == 1) | (cv[:, 1] == 0) | (cv[:, 1] == 1)
    if not on_grid[face].all():
        raise StitchFailure("cell face vertex off the dyadic grid")

    global_index = {}
    verts = []
    tris = []
    n_inner = 0
    for J in range(N):
        for I in range(N):
            local = np.empty(cell.nv, dtype=np.int64)
            for v in range(cell.nv):
                if face[v]:
                    key = (I * n + grid_key[v, 0], J * n + grid_key[v, 1])
                    idx = global_index.get(key)
                    if idx is None:
                        idx = len(verts)
                        global_index[key] = idx
                        verts.append(((I + cv[v, 0]) / N, (J + cv[v, 1]) / N))
                else:
                    idx = len(verts)
                    n_inner += 1
                    verts.append(((I + cv[v, 0]) / N, (J + cv[v, 1]) / N))
                local[v] = idx
            tris.append(local[cell.triangles])
    vertices = np.array(verts)
    triangles = np.concatenate(tris)

    n_face = int(face.sum())
    expected = (N * n + 1) ** 2 - (N * N) * ((n + 1) ** 2 - n_face)
    if len(global_index) != expected:
        raise StitchFailure(
            f"stitched {len(global_index)} face nodes, expected {expected}"
        )
    edges, counts = unique_edges(triangles)
    if (counts > 2).any():
        raise StitchFailure("non-manifold edge after stitching")
    bnd = edges[counts == 1]
    p0, p1 = vertices[bnd[:, 0]], vertices[bnd[:, 1]]
    outer = np.zeros(len(bnd), dtype=bool)
    for axis in (0, 1):
        for val in (0.0, 1.0):
            outer |= (p0[:, axis] == val) & (p1[:, axis] == val)
    groups = {GAMMA: bnd[outer], SIGMA: bnd[~outer]}
    n_sigma_cell = len(cell.edge_groups.get(SIGMA, ()))
    if len(groups[SIGMA]) != N * N * n_sigma_cell:
        raise StitchFailure("interior cell faces failed to stitch")
    return TriMesh(
        vertices=vertices,
        triangles=triangles,
        edge_groups=groups,
        geometry=cell.geometry,
        n_tiles=N,
        cell_triangle=np.tile(np.arange(cell.nt), N * N),
    )


def mesh_quality_report(mesh: TriMesh) -> QualityReport:
    edges, _ = unique_edges(mesh.triangles)
    return QualityReport(
        min_angle=float(min_angles(mesh.vertices, mesh.triangles).min()),
        h_max=mesh.h_max,
        area=float(mesh.areas().sum()),
        euler_characteristic=int(mesh.nv - len(edges) + mesh.nt),
        n_vertices=mesh.nv,
        n_triangles=mesh.nt,
    )


def sigma_length(mesh: TriMesh) -> float:
    e = mesh.edges(SIGMA)
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


def macro_mesh(level: int) -> TriMesh:
    """No-hole mesh of the unit square with ``GAMMA`` on the whole boundary."""
    return tile_perforated_mesh(build_cell_mesh(CellGeometry(hole_radius=0.0, refinement=level)), 1)


def write_mesh(mesh: TriMesh, path) -> None:
    """Plain-text ``tri-mesh v1`` dump."""
    with open(path, "w") as fh:
        fh.write(f"tri-mesh v1 {mesh.nv} {mesh.nt}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        for tag in sorted(mesh.edge_groups):
            edges = mesh.edge_groups[tag]
            fh.write(f"{tag} {len(edges)}\n")
            for a, b in edges:
                fh.write(f"{a} {b}\n")


def read_mesh(path) -> TriMesh:
    with open(path) as fh:
        lines = fh.read().split("\n")
    head = lines[0].split()
    if head[:2] != ["tri-mesh", "v1"]:
        raise ValueError(f"{path}: not a tri-mesh v1 file")
    nv, nt = int(head[2]), int(head[3])
    vertices = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + nv]]).reshape(nv, 2)
    triangles = np.array(
        [[int(t) for t in ln.split()] for ln in lines[1 + nv:1 + nv + nt]], dtype=np.int64
    ).reshape(nt, 3)
    groups = {}
    pos = 1 + nv + nt
    while pos < len(lines) and lines[pos].strip():
        tag, count = lines[pos].split()
        count = int(count)
        groups[tag] = np.array(
            [[int(t) for t in ln.split()] for ln in lines[pos + 1:pos + 1 + count]], dtype=np.int64
        ).reshape(count, 2)
        pos += 1 + count
    return TriMesh(vertices=vertices, triangles=triangles, edge_groups=groups)


def write_vtk(mesh: TriMesh, path, point_data: dict | None = None) -> None:
    """Legacy ASCII VTK unstructured grid, for visualization only."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nperfhom mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.nv} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r} 0.0\n")
        fh.write(f"CELLS {mesh.nt} {4 * mesh.nt}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {mesh.nt}\n" + "5\n" * mesh.nt)
        if point_data:
            fh.write(f"POINT_DATA {mesh.nv}\n")
            for name, values in point_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.writelines(f"{float(v)!r}\n" for v in values)
