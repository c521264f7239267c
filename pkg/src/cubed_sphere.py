"""
Equiangular cubed-sphere panels.

Each of the six panels is the gnomonic image of a cube face, parametrised by
the equiangular coordinates (alpha, beta) in [-pi/4, pi/4]^2 with cell-centred
points. Everything geometric (embedding, metric, Christoffel symbols, an
orthonormal frame and its connection coefficients) is evaluated analytically
from the embedding, so panels can be evaluated on their natural extension
beyond the face edges. That extension is what the ghost maps use: a ghost
point of one panel lies exactly on a grid line of its neighbour, so ghost
values come from one-dimensional Lagrange interpolation along that line
followed by a rotation between the two panels' frames.
"""
import sys
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
from scipy import sparse

sys.path.append(str(Path(__file__).parent))
from errors import GridError

# (centre, alpha axis, beta axis) per face
FACE_AXES = np.array([
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
    [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]],
    [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
    [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]],
    [[0.0, 0.0, -1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
])
N_FACES = 6
ON_GRID_TOLERANCE = 1e-6
CONNECTION_STEP = 1e-3
FIRST_DIFFERENCE = ((1, 0.5), (-1, -0.5))
SECOND_DIFFERENCE = ((1, 1.0), (0, -2.0), (-1, 1.0))


def cell_centres(resolution: int) -> Tuple[np.ndarray, float]:
    """Equiangular cell-centre coordinates of one panel axis and their spacing."""
    spacing = np.pi / (2 * resolution)
    return -np.pi / 4 + (np.arange(resolution) + 0.5) * spacing, spacing


def embedding_derivatives(face: int, alpha, beta, radius: float):
    """
    Point, first and second coordinate derivatives of the gnomonic embedding.

    Args:
        face: Panel index (0-5).
        alpha: Equiangular alpha coordinates (any shape, broadcast with beta).
        beta: Equiangular beta coordinates.
        radius: Sphere radius.

    Returns:
        Tuple (p, F, H) with shapes (..., 3), (..., 2, 3) and (..., 2, 2, 3):
        the embedded point, the tangent vectors dp/dx^a and d2p/dx^a dx^b.
    """
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    centre, alpha_axis, beta_axis = FACE_AXES[face]
    X, Y = np.tan(alpha), np.tan(beta)
    A, B = 1.0 + X ** 2, 1.0 + Y ** 2

    u = centre + X[..., None] * alpha_axis + Y[..., None] * beta_axis
    du = np.stack([A[..., None] * alpha_axis, B[..., None] * beta_axis], axis=-2)
    ddu = np.zeros(alpha.shape + (2, 2, 3))
    ddu[..., 0, 0, :] = (2.0 * X * A)[..., None] * alpha_axis
    ddu[..., 1, 1, :] = (2.0 * Y * B)[..., None] * beta_axis

    # s_i = u . du_i
    s = np.stack([A * X, B * Y], axis=-1)
    rho = np.sqrt(1.0 + X ** 2 + Y ** 2)

    r1 = rho[..., None]
    dv = du / r1[..., None] - u[..., None, :] * s[..., :, None] / r1[..., None] ** 3

    r3 = rho[..., None, None, None]
    gram = np.einsum('...ik,...jk->...ij', du, du)
    u_ddu = np.einsum('...k,...ijk->...ij', u, ddu)
    ddv = (ddu / r3
           - (du[..., :, None, :] * s[..., None, :, None] + du[..., None, :, :] * s[..., :, None, None]) / r3 ** 3
           - u[..., None, None, :] * (gram + u_ddu)[..., None] / r3 ** 3
           + 3.0 * u[..., None, None, :] * (s[..., :, None] * s[..., None, :])[..., None] / r3 ** 5)

    return radius * u / r1, radius * dv, radius * ddv


def orthonormal_frame(F: np.ndarray, H: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gram-Schmidt frame of the coordinate tangents and its coordinate derivatives.

    Returns:
        (E, dE) with E[..., b, :] the ambient frame vectors and
        dE[..., a, b, :] = d E_b / dx^a.
    """
    F0, F1 = F[..., 0, :], F[..., 1, :]
    H0, H1 = H[..., 0, :, :], H[..., 1, :, :]

    n0 = np.linalg.norm(F0, axis=-1)
    E1 = F0 / n0[..., None]
    dE1 = (H0 - E1[..., None, :] * np.einsum('...k,...jk->...j', E1, H0)[..., None]) / n0[..., None, None]

    a = np.einsum('...k,...k->...', F1, E1)
    W = F1 - a[..., None] * E1
    da = np.einsum('...jk,...k->...j', H1, E1) + np.einsum('...k,...jk->...j', F1, dE1)
    dW = H1 - da[..., None] * E1[..., None, :] - a[..., None, None] * dE1

    nW = np.linalg.norm(W, axis=-1)
    E2 = W / nW[..., None]
    dE2 = (dW - E2[..., None, :] * np.einsum('...k,...jk->...j', E2, dW)[..., None]) / nW[..., None, None]

    return np.stack([E1, E2], axis=-2), np.stack([dE1, dE2], axis=-2)


def panel_geometry(face: int, alpha, beta, radius: float) -> Dict[str, np.ndarray]:
    """Analytic metric, Christoffel symbols, frame and connection on one panel."""
    p, F, H = embedding_derivatives(face, alpha, beta, radius)
    E, dE = orthonormal_frame(F, H)
    metric = np.einsum('...ik,...jk->...ij', F, F)
    metric_inv = np.linalg.inv(metric)
    return {
        "ambient": p,
        "tangents": F,
        "metric": metric,
        "metric_inv": metric_inv,
        # christoffel[..., k, i, j] = Gamma^k_ij
        "christoffel": np.einsum('...kl,...ijm,...lm->...kij', metric_inv, H, F),
        # frame[..., a, b] = e^a_b, chart components of E_b
        "frame": np.einsum('...ab,...bk,...gk->...ag', metric_inv, F, E),
        # coframe[..., b, a] = theta^b_a
        "coframe": np.einsum('...gk,...ak->...ga', E, F),
        # connection[..., a, c, b] = E_c . d_a E_b
        "connection": np.einsum('...gk,...abk->...agb', E, dE),
        "frame_vectors": E,
    }


def connection_derivative(face: int, alpha, beta, radius: float, step: float = CONNECTION_STEP) -> np.ndarray:
    """
    d_a omega_a along each panel axis, shape (..., 2, 2, 2) indexed [a, c, b].

    Fourth-order differences of the analytic connection, which is defined
    beyond the face edges; the result is antisymmetrized in (c, b).
    """
    out = []
    for axis in (0, 1):
        taps = []
        for shift in (2, 1, -1, -2):
            a = alpha + shift * step if axis == 0 else alpha
            b = beta + shift * step if axis == 1 else beta
            taps.append(panel_geometry(face, a, b, radius)["connection"][..., axis, :, :])
        d = (-taps[0] + 8.0 * taps[1] - 8.0 * taps[2] + taps[3]) / (12.0 * step)
        out.append(0.5 * (d - np.swapaxes(d, -1, -2)))
    return np.stack(out, axis=-3)


def cell_areas(
resolution: int, radius: float) -> np.ndarray:
    """Exact areas of the gnomonic cells of one panel, shape (N, N)."""
    edges = -np.pi / 4 + np.arange(resolution + 1) * (np.pi / (2 * resolution))
    t = np.tan(edges)
    X, Y = np.meshgrid(t, t, indexing='ij')
    omega = np.arctan(X * Y / np.sqrt(1.0 + X ** 2 + Y ** 2))
    area = omega[1:, 1:] - omega[:-1, 1:] - omega[1:, :-1] + omega[:-1, :-1]
    return radius ** 2 * area


def lagrange_stencil(position: float, size: int, n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of n_points-point Lagrange interpolation at a fractional index."""
    start = int(np.floor(position)) - (n_points // 2 - 1)
    start = min(max(start, 0), size - n_points)
    nodes = np.arange(start, start + n_points)
    weights = np.ones(n_points)
    for k in range(n_points):
        for m in range(n_points):
            if m != k:
                weights[k] *= (position - nodes[m]) / (nodes[k] - nodes[m])
    return nodes, weights


def _point_index(face, i, j, resolution):
    return face * resolution * resolution + i * resolution + j


def _interior_stencil(resolution: int, axis: int, taps: Tuple[Tuple[int, float], ...]) -> sparse.csr_matrix:
    """Panel-local stencil along one axis; taps reaching past a panel edge are left to the ghosts."""
    n = resolution
    face, i, j = np.meshgrid(np.arange(N_FACES), np.arange(n), np.arange(n), indexing='ij')
    face, i, j = face.ravel(), i.ravel(), j.ravel()
    along = i if axis == 0 else j
    rows, cols, vals = [], [], []
    for shift, weight in taps:
        ok = (along + shift >= 0) & (along + shift < n)
        ii = i + shift if axis == 0 else i
        jj = j + shift if axis == 1 else j
        rows.append(_point_index(face, i, j, n)[ok])
        cols.append(_point_index(face, ii, jj, n)[ok])
        vals.append(np.full(ok.sum(), weight))
    npts = N_FACES * n * n
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(npts, npts))


def _ghost_layer(resolution: int, axis: int, radius: float, interp_points: int):
    """
    Ghost maps for differentiation along one panel axis.

    Returns the (P, G) ghost parts of the centred first and second
    differences, the (G, P) interpolation matrix and the (G, 2, 2) frame
    rotations.
    """
    n = resolution
    centres, spacing = cell_centres(n)
    npts = N_FACES * n * n

    face, line, side = np.meshgrid(np.arange(N_FACES), np.arange(n), np.array([-1, n]), indexing='ij')
    face, line, side = face.ravel(), line.ravel(), side.ravel()
    n_ghost = face.size
    along = -np.pi / 4 + (side + 0.5) * spacing
    across = centres[line]
    alpha, beta = (along, across) if axis == 0 else (across, along)
    owner_along = np.where(side < 0, 0, n - 1)
    owner = (_point_index(face, owner_along, line, n) if axis == 0
             else _point_index(face, line, owner_along, n))
    sign = np.where(side < 0, -1.0, 1.0)

    axes = FACE_AXES[face]
    direction = axes[:, 0] + np.tan(alpha)[:, None] * axes[:, 1] + np.tan(beta)[:, None] * axes[:, 2]
    target = np.argmax(direction @ FACE_AXES[:, 0].T, axis=1)
    t_axes = FACE_AXES[target]
    depth = np.einsum('gk,gk->g', direction, t_axes[:, 0])
    t_alpha = np.arctan(np.einsum('gk,gk->g', direction, t_axes[:, 1]) / depth)
    t_beta = np.arctan(np.einsum('gk,gk->g', direction, t_axes[:, 2]) / depth)
    frac_alpha = (t_alpha + np.pi / 4) / spacing - 0.5
    frac_beta = (t_beta + np.pi / 4) / spacing - 0.5
    on_alpha = np.abs(frac_alpha - np.round(frac_alpha)) < ON_GRID_TOLERANCE
    on_beta = np.abs(frac_beta - np.round(frac_beta)) < ON_GRID_TOLERANCE
    if not np.all(on_alpha | on_beta):
        raise GridError("cubed-sphere ghost point does not lie on a neighbour grid line")

    rows, cols, vals = [], [], []
    for g in range(n_ghost):
        if on_alpha[g]:
            fixed = int(np.round(frac_alpha[g]))
            nodes, weights = lagrange_stencil(frac_beta[g], n, interp_points)
            source = _point_index(target[g], fixed, nodes, n)
        else:
            fixed = int(np.round(frac_beta[g]))
            nodes, weights = lagrange_stencil(frac_alpha[g], n, interp_points)
            source = _point_index(target[g], nodes, fixed, n)
        rows.append(np.full(interp_points, g))
        cols.append(source)
        vals.append(weights)
    interp = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                               shape=(n_ghost, npts))

    rotation = np.empty((n_ghost, 2, 2))
    own_points = np.empty((n_ghost, 3))
    own_frames = np.empty((n_ghost, 2, 3))
    for f in range(N_FACES):
        sel = face == f
        geo = panel_geometry(f, alpha[sel], beta[sel], radius)
        own_points[sel] = geo["ambient"]
        own_frames[sel] = geo["frame_vectors"]
    for f in range(N_FACES):
        sel = target == f
        if not np.any(sel):
            continue
        geo = panel_geometry(f, t_alpha[sel], t_beta[sel], radius)
        if np.max(np.abs(geo["ambient"] - own_points[sel])) > 1e-10 * radius:
            raise GridError("cubed-sphere ghost map is not consistent across a seam")
        rotation[sel] = np.einsum('gak,gbk->gab', own_frames[sel], geo["frame_vectors"])

    ghost_derivative = sparse.csr_matrix((sign / (2.0 * spacing), (owner, np.arange(n_ghost))),
                                         shape=(npts, n_ghost))
    ghost_second = sparse.csr_matrix((np.full(n_ghost, 1.0 / spacing ** 2), (owner, np.arange(n_ghost))),
                                     shape=(npts, n_ghost))
    return ghost_derivative, ghost_second, interp, rotation


def cubed_sphere_mesh(radius: float, resolution: int, interp_points: int = 6) -> Dict[str, object]:
    """
    Geometry arrays and difference operators of a cubed sphere.

    Points are ordered face-major, then alpha index, then beta index.

    Args:
        radius: Sphere radius (Gauss curvature 1/radius^2).
        resolution: Points per panel axis N.
        interp_points: Points of the seam Lagrange interpolation.

    Returns:
        Dict of per-point arrays and per-axis sparse operators.
    """
    if interp_points > resolution:
        raise GridError(f"interpolation stencil of {interp_points} points needs N >= {interp_points}")
    centres, spacing = cell_centres(resolution)
    alpha, beta = np.meshgrid(centres, centres, indexing='ij')

    per_face = [panel_geometry(f, alpha, beta, radius) for f in range(N_FACES)]
    mesh = {key: np.concatenate([geo[key].reshape((-1,) + geo[key].shape[2:]) for geo in per_face])
            for key in ("ambient", "tangents", "metric", "metric_inv", "christoffel",
                        "frame", "coframe", "connection")}
    mesh["connection_derivative"] = np.concatenate(
        [connection_derivative(f, alpha, beta, radius).reshape((-1, 2, 2, 2)) for f in range(N_FACES)])

    coords = np.stack([np.tile(alpha.ravel(), N_FACES), np.tile(beta.ravel(), N_FACES)], axis=-1)
    areas = np.tile(cell_areas(resolution, radius).ravel(), N_FACES)

    derivative, second, ghost_derivative, ghost_second, ghost_interp, ghost_rotation = [], [], [], [], [], []
    for axis in (0, 1):
        derivative.append(_interior_stencil(resolution, axis, FIRST_DIFFERENCE) / spacing)
        second.append(_interior_stencil(resolution, axis, SECOND_DIFFERENCE) / spacing ** 2)
        gd, g2, gi, gr = _ghost_layer(resolution, axis, radius, interp_points)
        ghost_derivative.append(gd)
        ghost_second.append(g2)
        ghost_interp.append(gi)
        ghost_rotation.append(gr)

    mesh.update({
        "coords": coords,
        "chart_index": np.repeat(np.arange(N_FACES), resolution * resolution),
        "weights": areas,
        "spacing": (spacing, spacing),
        "chart_shape": (resolution, resolution),
        "chart_count": N_FACES,
        "derivative": tuple(derivative),
        "second_derivative": tuple(second),
        "ghost_derivative": tuple(ghost_derivative),
        "ghost_second": tuple(ghost_second),
        "ghost_interp": tuple(ghost_interp),
        "ghost_rotation": tuple(ghost_rotation),
    })
    return mesh
