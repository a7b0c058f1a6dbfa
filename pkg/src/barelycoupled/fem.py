"""Linear-triangle finite element operators shared by the flow and heat solvers.

All matrices are returned as ``scipy.sparse.csr_matrix``.  Right-hand-side
operators act on nodal arrays and return integrated (not mass-divided)
nodal contributions.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import SimplexMesh

__all__ = [
    "stiffness_matrix",
    "mass_matrix",
    "divergence_matrices",
    "advection_rhs",
    "edge_coefficients",
    "edge_dissipation",
    "nodal_gradient",
    "element_gradients",
    "scatter_to_nodes",
    "boundary_mass",
    "facet_load",
]


def _assemble(mesh: SimplexMesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.elements, 3, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 3)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    out = mat.tocsr()
    out.sum_duplicates()
    out.sort_indices()
    return out


def stiffness_matrix(mesh: SimplexMesh, coefficient=1.0) -> sp.csr_matrix:
    """K_ij = sum_e c_e A_e grad N_i . grad N_j (c scalar or per-element)."""
    g = mesh.shape_gradients
    coef = np.broadcast_to(np.asarray(coefficient, dtype=float), (mesh.n_elements,))
    local = np.einsum("eid,ejd->eij", g, g) * (coef * mesh.areas)[:, None, None]
    return _assemble(mesh, local)


def mass_matrix(mesh: SimplexMesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix (A/12 off-diagonal, A/6 diagonal)."""
    base = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * base[None]
    return _assemble(mesh, local)


def divergence_matrices(mesh: SimplexMesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Galerkin divergence: (Dx u + Dy w)_i = integral of N_i div(u_h, w_h).

    ``D[i, j] = sum_e (A_e / 3) dN_j/dx``.  The transpose gives the weak
    gradient: ``(Dx^T p)_j = integral of p_h dN_j/dx``.
    """
    g = mesh.shape_gradients
    w = (mesh.areas / 3.0)[:, None, None]
    dx = _assemble(mesh, w * np.broadcast_to(g[:, None, :, 0], (mesh.n_elements, 3, 3)))
    dy = _assemble(mesh, w * np.broadcast_to(g[:, None, :, 1], (mesh.n_elements, 3, 3)))
    return dx, dy


def scatter_to_nodes(mesh: SimplexMesh, local: np.ndarray) -> np.ndarray:
    """Sum (E, 3) element-local nodal values into a nodal array."""
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def element_gradients(mesh: SimplexMesh, field: np.ndarray) -> np.ndarray:
    """Constant per-element gradient; (E, 2) for scalars, (E, c, 2) for vectors."""
    vals = field[mesh.elements]
    if vals.ndim == 2:
        return np.einsum("ek,ekd->ed", vals, mesh.shape_gradients)
    return np.einsum("ekc,ekd->ecd", vals, mesh.shape_gradients)


def advection_rhs(mesh: SimplexMesh, velocity: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Galerkin advection integral_e N_i (v_h . grad u_h), summed to nodes.

    With linear v_h, integral of N_i v_h = A/12 (v_i + sum of element v).
    """
    vel = velocity[mesh.elements]
    weighted = (vel + vel.sum(axis=1, keepdims=True)) * (mesh.areas / 12.0)[:, None, None]
    grad = element_gradients(mesh, field)
    if field.ndim == 1:
        local = np.einsum("ekd,ed->ek", weighted, grad)
        return scatter_to_nodes(mesh, local)
    local = np.einsum("ekd,ecd->ekc", weighted, grad)
    return np.stack([scatter_to_nodes(mesh, local[..., c]) for c in range(field.shape[1])], axis=1)


def edge_coefficients(mesh: SimplexMesh) -> np.ndarray:
    """(Ne, 2) edge vectors k_ij = sum_e (A_e/3)(grad N_j - grad N_i), i < j."""
    n = mesh.n_nodes
    keys = mesh.edges[:, 0] * n + mesh.edges[:, 1]
    order = np.argsort(keys)
    sorted_keys = keys[order]
    coef = np.zeros((len(mesh.edges), 2))
    g = mesh.shape_gradients
    w = (mesh.areas / 3.0)[:, None]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        ni, nj = mesh.elements[:, a], mesh.elements[:, b]
        gi, gj = g[:, a], g[:, b]
        swap = ni > nj
        lo = np.where(swap, nj, ni)
        hi = np.where(swap, ni, nj)
        contrib = w * (gj - gi)
        contrib[swap] *= -1.0
        idx = order[np.searchsorted(sorted_keys, lo * n + hi)]
        np.add.at(coef, idx, contrib)
    return coef


def nodal_gradient(mesh: SimplexMesh, field: np.ndarray) -> np.ndarray:
    """Lumped-mass recovered nodal gradient: M_i grad u_i = sum_e (A_e/3) grad u_e."""
    grad = element_gradients(mesh, field)
    shape = (mesh.n_nodes,) + grad.shape[1:]
    contrib = (grad * (mesh.areas / 3.0).reshape((-1,) + (1,) * (grad.ndim - 1))).reshape(len(grad), -1)
    out = np.empty((mesh.n_nodes, contrib.shape[1]))
    for c in range(contrib.shape[1]):
        out[:, c] = scatter_to_nodes(mesh, np.repeat(contrib[:, c:c + 1], 3, axis=1))
    return (out / mesh.lumped_mass[:, None]).reshape(shape)


def edge_dissipation(mesh: SimplexMesh, coefficients: np.ndarray, velocity: np.ndarray,
                     field: np.ndarray, strength: float = 0.1, high_order: bool = False,
                     scale: np.ndarray | float = 1.0) -> np.ndarray:
    """Upwind-biased edge dissipation, ``strength * |vbar . k_ij| / 2 * (u_j - u_i)``.

    With ``high_order`` the jump is replaced by the difference left after
    subtracting a gradient-based reconstruction, which vanishes for
    quadratic fields and leaves only fourth-order damping.  ``scale``
    multiplies the result (e.g. rho or rho*c_p) and may be per node.
    """
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    vbar = 0.5 * (velocity[i] + velocity[j])
    weight = 0.5 * strength * np.abs(np.einsum("ed,ed->e", vbar, coefficients))
    jump = field[j] - field[i]
    if high_order:
        grad = nodal_gradient(mesh, field)
        dx = mesh.node_coords[j] - mesh.node_coords[i]
        if field.ndim == 1:
            jump = jump - 0.5 * np.einsum("ed,ed->e", grad[i] + grad[j], dx)
        else:
            jump = jump - 0.5 * np.einsum("ecd,ed->ec", grad[i] + grad[j], dx)
    flux = jump * (weight if field.ndim == 1 else weight[:, None])
    n = mesh.n_nodes
    if field.ndim == 1:
        out = np.bincount(i, flux, n) - np.bincount(j, flux, n)
    else:
        out = np.stack([np.bincount(i, flux[:, c], n) - np.bincount(j, flux[:, c], n)
                        for c in range(flux.shape[1])], axis=1)
    if np.ndim(scale):
        return out * (scale if field.ndim == 1 else scale[:, None])
    return out * scale


def boundary_mass(mesh: SimplexMesh, facets: np.ndarray) -> np.ndarray:
    """Lumped boundary length per node over the given facets."""
    out = np.zeros(mesh.n_nodes)
    half = 0.5 * mesh.facet_lengths[facets]
    np.add.at(out, mesh.boundary_facets[facets, 0], half)
    np.add.at(out, mesh.boundary_facets[facets, 1], half)
    return out


def facet_load(mesh: SimplexMesh, facets: np.ndarray, facet_flux: np.ndarray) -> np.ndarray:
    """Nodal load from a piecewise-constant flux on facets (half to each end)."""
    out = np.zeros(mesh.n_nodes)
    half = 0.5 * mesh.facet_lengths[facets] * np.asarray(facet_flux, dtype=float)
    np.add.at(out, mesh.boundary_facets[facets, 0], half)
    np.add.at(out, mesh.boundary_facets[facets, 1], half)
    return out
