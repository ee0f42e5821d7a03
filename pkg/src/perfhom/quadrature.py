"""Quadrature rules on P1 triangles and boundary edges."""
import numpy as np

# degree-2 rule, barycentric coordinates of the three interior points
TRI_BARY = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
TRI_WEIGHTS = np.full(3, 1 / 3)

_g = 0.5 / np.sqrt(3.0)
# two-point Gauss on [0, 1], as the weight of the second endpoint
EDGE_T = np.array([0.5 - _g, 0.5 + _g])
EDGE_WEIGHTS = np.array([0.5, 0.5])


def triangle_points(vertices, triangles):
    """Quadrature points, shape ``(nt, 3, 2)``."""
    p = vertices[triangles]
    return np.einsum("qk,tkd->tqd", TRI_BARY, p)


def edge_points(vertices, edges):
    """Quadrature points ``(ne, 2, 2)`` and edge lengths ``(ne,)``."""
    a = vertices[edges[:, 0]]
    b = vertices[edges[:, 1]]
    pts = a[:, None, :] + EDGE_T[None, :, None] * (b - a)[:, None, :]
    d = b - a
    return pts, np.hypot(d[:, 0], d[:, 1])


def edge_shape_values():
    """P1 basis values at the edge points, shape ``(2 points, 2 nodes)``."""
    return np.column_stack([1 - EDGE_T, EDGE_T])
