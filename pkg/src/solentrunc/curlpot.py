"""Inverse curl with vanishing boundary values.

Two steps:

1. ``newton_inverse_curl`` returns ``w~ = -Lap_h^{-1} curl(u chi_Omega)`` on a
   box padded to twice the size.  The discrete Laplacian is the sum of the
   squared one-dimensional central differences, so it commutes with every
   difference operator and ``curl curl = grad div - Lap`` holds exactly.
   For discretely solenoidal ``u`` this gives ``curl w~ = u`` to rounding.
2. ``boundary_correct`` subtracts a discrete gradient ``D zeta`` so that
   ``w = w~ - D zeta`` vanishes on every cell of depth <= 2, which makes both
   ``w`` and ``grad w`` vanish on the boundary layer.  On that shell the
   values of ``zeta`` are fixed up to constants by integrating along a
   spanning tree.  The remaining nodes (and the constants) make the
   correction as smooth as possible: they minimise the discrete second
   derivatives of ``D zeta``, so a potential that already vanishes on the
   shell is left unchanged.  ``curl`` never sees the correction
   because ``curl D = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .grid import GridDomain, curl, divergence, gradient, hessian, magnitude, norm, NormSpec

__all__ = [
    "Potential",
    "InverseCurlError",
    "newton_inverse_curl",
    "boundary_correct",
    "inverse_curl",
    "estimate_ratio",
    "random_solenoidal_field",
    "smooth_cutoff",
]


class InverseCurlError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Potential:
    dom: GridDomain
    w: np.ndarray
    u: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @cached_property
    def hess(self):
        """``H[i, j, k] = d_j d_k w_i``, computed once."""
        H = hessian(self.w, self.dom)
        H.setflags(write=False)
        return H

    @cached_property
    def hess_magnitude(self):
        return magnitude(self.hess)


# -- step 1: global inverse curl ---------------------------------------------

@lru_cache(maxsize=16)
def _second_difference_eigen(n, h):
    """Eigen-decomposition of the squared zero-fill central difference, size n."""
    D = (np.eye(n, k=1) - np.eye(n, k=-1)) / (2 * h)
    lam, Q = np.linalg.eigh(D @ D)
    return lam, Q


def _apply_axis(a, Q, axis):
    return np.moveaxis(np.tensordot(Q, a, axes=([1], [axis])), 0, axis)


def _padded_shape(dims, pad_factor):
    out = []
    for n in dims:
        m = int(np.ceil(pad_factor * n))
        out.append(m + (m % 2))  # even sizes keep the central difference invertible
    return tuple(out)


def solve_poisson_padded(rhs, h, shape):
    """Solve ``-Lap_h x = rhs`` on a box of ``shape`` with zero fill outside."""
    eig = [_second_difference_eigen(n, h) for n in shape]
    t = rhs
    for ax, (_, Q) in enumerate(eig):
        t = _apply_axis(t, Q.T, ax)
    denom = -(eig[0][0][:, None, None] + eig[1][0][None, :, None] + eig[2][0][None, None, :])
    t = t / denom
    for ax, (_, Q) in enumerate(eig):
        t = _apply_axis(t, Q, ax)
    return t


def newton_inverse_curl(u, dom, pad_factor=2.0, tol=1e-8, return_padded=False):
    """``w~`` with ``curl w~ = u chi_Omega`` on the whole box.

    Raises :class:`InverseCurlError` if ``u chi_Omega`` is not discretely
    solenoidal: ``max|div| > tol * max|u| / h``.
    """
    u = dom.check(np.asarray(u, dtype=float), 1)
    v = np.where(dom.interior_mask, u, 0.0)
    scale = float(np.abs(v).max())
    if scale == 0.0:
        return (np.zeros_like(v), (0, 0, 0)) if return_padded else np.zeros_like(v)
    div = float(np.abs(divergence(v, dom)).max())
    if div > tol * scale / dom.h:
        raise InverseCurlError(
            f"input is not solenoidal: max|div u| = {div:.3e} exceeds {tol:.0e} * max|u| / h = {tol * scale / dom.h:.3e}"
        )
    shape = _padded_shape(dom.dims, pad_factor)
    off = tuple((m - n) // 2 for m, n in zip(shape, dom.dims))
    big = np.zeros((3,) + shape)
    sl = tuple(slice(o, o + n) for o, n in zip(off, dom.dims))
    big[(slice(None),) + sl] = v
    pdom = _BoxOnly(shape, dom.h)
    rhs = curl(big, pdom)
    wt = np.stack([solve_poisson_padded(rhs[i], dom.h, shape) for i in range(3)])
    if return_padded:
        return wt, off
    return wt[(slice(None),) + sl]


class _BoxOnly:
    """Minimal stand-in for a GridDomain when only dims and h are needed."""

    def __init__(self, dims, h):
        self.dims = tuple(dims)
        self.h = h

    def check(self, f, ncomp_axes=None):
        return np.asarray(f)


# -- step 2: gradient correction ----------------------------------------------

def _node_index(dims):
    nd = tuple(n + 2 for n in dims)
    return nd, np.arange(np.prod(nd)).reshape(nd)


def _cell_nodes(nodes, dims, k, sign):
    """Node ids of ``c + sign e_k`` for every box cell ``c`` (halo offset 1)."""
    sl = [slice(1, 1 + n) for n in dims]
    sl[k] = slice(1 + sign, 1 + sign + dims[k])
    return nodes[tuple(sl)]


def _difference_matrix(dims, h, nn):
    """Sparse maps ``zeta (nodes) -> D_k zeta (box cells)`` for k = 0, 1, 2."""
    nodes = np.arange(nn).reshape(tuple(n + 2 for n in dims))
    ncell = int(np.prod(dims))
    rows = np.arange(ncell)
    mats = []
    for k in range(3):
        plus = _cell_nodes(nodes, dims, k, 1).ravel()
        minus = _cell_nodes(nodes, dims, k, -1).ravel()
        data = np.concatenate([np.full(ncell, 0.5 / h), np.full(ncell, -0.5 / h)])
        mats.append(
            sparse.csr_matrix((data, (np.concatenate([rows, rows]), np.concatenate([plus, minus]))), shape=(ncell, nn))
        )
    return mats


def _box_diff_matrix(n, h):
    return sparse.diags([np.full(n - 1, 0.5 / h), np.full(n - 1, -0.5 / h)], [1, -1], format="csr")


def _box_second_matrices(dims, h):
    """Zero-fill ``D_j D_k`` on box cells, upper triangle (j <= k)."""
    I = [sparse.identity(n, format="csr") for n in dims]
    D1 = [_box_diff_matrix(n, h) for n in dims]

    def along(k, op):
        mats = [I[0], I[1], I[2]]
        mats[k] = op
        return sparse.kron(sparse.kron(mats[0], mats[1]), mats[2], format="csr")

    Dk = [along(k, D1[k]) for k in range(3)]
    out = []
    for j in range(3):
        for k in range(j, 3):
            out.append(((j, k), (Dk[j] @ Dk[k]).tocsr()))
    return out


def boundary_correct(w_tilde, dom, compat_tol=1e-8, return_zeta=False):
    """``w = w~ - D zeta`` with ``w = 0`` on cells of depth <= 2.

    Raises :class:`InverseCurlError` when the shell conditions are
    incompatible (``w~`` is not a discrete gradient on the shell) beyond
    ``compat_tol`` relative to the data.
    """
    w_tilde = dom.check(np.asarray(w_tilde, dtype=float), 1)
    dims, h = dom.dims, dom.h
    shell = dom.depth <= 2
    nd, nodes = _node_index(dims)
    nn = int(np.prod(nd))

    # shell conditions: zeta(c + e_k) - zeta(c - e_k) = 2 h w~_k(c)
    a_list, b_list, val_list = [], [], []
    for k in range(3):
        a_list.append(_cell_nodes(nodes, dims, k, -1)[shell])
        b_list.append(_cell_nodes(nodes, dims, k, 1)[shell])
        val_list.append(2 * h * w_tilde[k][shell])
    a = np.concatenate(a_list)
    b = np.concatenate(b_list)
    val = np.concatenate(val_list)
    ne = len(a)
    scale = max(float(np.abs(val).max()) if ne else 0.0, 1e-300)

    # spanning forest of the shell graph; edge ids ride in a separate matrix
    ids = np.arange(1, ne + 1, dtype=float)
    emat = sparse.csr_matrix((np.concatenate([ids, -ids]), (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(nn, nn))
    adj = sparse.csr_matrix((np.ones(2 * ne), (np.concatenate([a, b]), np.concatenate([b, a]))), shape=(nn, nn))
    touched = np.zeros(nn, bool)
    touched[a] = True
    touched[b] = True
    ncomp, comp = csgraph.connected_components(adj, directed=False)
    zeta0 = np.zeros(nn)
    roots = {}
    for node in np.nonzero(touched)[0]:
        c = comp[node]
        if c in roots:
            continue
        roots[c] = node
        order, pred = csgraph.breadth_first_order(adj, node, directed=False, return_predecessors=True)
        pr = pred[order[1:]]
        eid = np.asarray(emat[pr, order[1:]]).ravel()
        sign = np.sign(eid)
        step = sign * val[np.abs(eid).astype(np.int64) - 1]
        # step is zeta(child) - zeta(parent); accumulate in BFS order
        for child, parent, s in zip(order[1:].tolist(), pr.tolist(), step.tolist()):
            zeta0[child] = zeta0[parent] + s
    compat = float(np.abs(zeta0[b] - zeta0[a] - val).max()) / scale if ne else 0.0
    if compat > compat_tol:
        raise InverseCurlError(
            f"boundary shell conditions are incompatible: relative residual {compat:.3e} > {compat_tol:.0e} "
            "(the input is not curl-free where the shell closes a loop)"
        )

    # free unknowns: untouched nodes plus one constant per shell component,
    # minus one pinned constant per parity class (shifting a whole class by a
    # constant does not change D zeta)
    used = np.zeros(nn, bool)  # halo edge and corner nodes never enter D
    for k in range(3):
        for sign in (-1, 1):
            used[_cell_nodes(nodes, dims, k, sign).ravel()] = True
    free_nodes = np.nonzero(~touched & used)[0]
    comp_ids = sorted(roots)
    pinned = set()
    seen = set()
    for c in comp_ids:
        par = tuple(int(x) % 2 for x in np.unravel_index(roots[c], nd))
        if par not in seen:
            seen.add(par)
            pinned.add(c)
    comp_free = [c for c in comp_ids if c not in pinned]
    ncol = len(free_nodes) + len(comp_free)
    rows = [free_nodes]
    cols = [np.arange(len(free_nodes))]
    col_of_comp = {c: len(free_nodes) + j for j, c in enumerate(comp_free)}
    tn = np.nonzero(touched)[0]
    tc = np.array([col_of_comp.get(c, -1) for c in comp[tn]], dtype=np.int64)
    keep = tc >= 0
    rows.append(tn[keep])
    cols.append(tc[keep])
    P = sparse.csr_matrix(
        (np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))), shape=(nn, ncol)
    )

    Dn = _difference_matrix(dims, h, nn)
    wt_flat = [w_tilde[i].ravel() for i in range(3)]
    base = [-(Dn[i] @ zeta0) for i in range(3)]
    if ncol:
        H2 = _box_second_matrices(dims, h)
        blocks, rhs = [], []
        for (j, k), Hjk in H2:
            wgt = 1.0 if j == k else np.sqrt(2.0)  # off-diagonal entries appear twice
            for i in range(3):
                blocks.append(wgt * (Hjk @ (Dn[i] @ P)))
                rhs.append(wgt * (Hjk @ base[i]))
        A = sparse.vstack(blocks).tocsc()
        r = np.concatenate(rhs)
        N = (A.T @ A).tocsc()
        y = splinalg.spsolve(N, A.T @ r)
        zeta = zeta0 + P @ y
    else:
        zeta = zeta0
    w = np.stack([(wt_flat[i] - Dn[i] @ zeta).reshape(dims) for i in range(3)])
    shell_residual = float(np.abs(w[:, shell]).max()) if shell.any() else 0.0
    w[:, shell] = 0.0
    diag = {
        "shell_compat_residual": compat,
        "shell_residual_before_zeroing": shell_residual,
        "free_unknowns": int(ncol),
        "shell_components": int(len(comp_ids)),
    }
    if return_zeta:
        return w, diag, zeta.reshape(nd)
    return w, diag


def trace_norm(w, dom):
    """``max`` over the boundary layer of ``|w| + |grad w|``."""
    bl = dom.boundary_layer
    g = gradient(w, dom, mask_exterior=False)
    return float(np.max(magnitude(w)[bl] + magnitude(g)[bl])) if bl.any() else 0.0


def inverse_curl(u, dom, weight=None, pad_factor=2.0, tol=1e-8):
    """Zero-trace curl potential of a zero-trace solenoidal field."""
    u = dom.check(np.asarray(u, dtype=float), 1)
    wt = newton_inverse_curl(u, dom, pad_factor=pad_factor, tol=tol)
    if not np.any(wt):
        w, diag = np.zeros_like(u), {"shell_compat_residual": 0.0, "free_unknowns": 0, "shell_components": 0}
    else:
        w, diag = boundary_correct(wt, dom)
    uu = np.where(dom.interior_mask, u, 0.0)
    c = curl(w, dom)
    scale = max(float(np.sqrt(np.sum(uu**2))), 1e-300)
    diag["curl_residual"] = float(np.sqrt(np.sum((c - uu) ** 2))) / scale
    diag["curl_residual_max"] = float(np.abs(c - uu).max())
    diag["trace"] = trace_norm(w, dom)
    diag["newton_curl_residual"] = float(np.sqrt(np.sum((curl(wt, dom) - uu)[:, dom.depth >= 2] ** 2))) / scale
    pot = Potential(dom, w, uu, diag)
    if weight is not None:
        diag["weighted_ratio_p2"] = estimate_ratio(pot, 2.0, weight)
    return pot


def estimate_ratio(pot, p, weight=None):
    """``||grad^2 w||_{p,w} / ||grad u||_{p,w}``."""
    wv = None if weight is None else getattr(weight, "values", weight)
    num = norm(pot.hess, NormSpec(p, wv), pot.dom)
    den = norm(gradient(pot.u, pot.dom), NormSpec(p, wv), pot.dom)
    return num / den if den > 0 else 0.0


# -- test fields --------------------------------------------------------------

def smooth_cutoff(dom, width=0.15, margin_cells=2.5):
    """C^2 cutoff: 0 within ``margin_cells`` of the complement, 1 beyond ``width``."""
    from scipy import ndimage

    d = ndimage.distance_transform_edt(np.pad(dom.interior_mask, 1))[1:-1, 1:-1, 1:-1]
    t = np.clip((d - margin_cells) * dom.h / width, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t * t)


def random_solenoidal_field(dom, rng, n_modes=4, width=0.15, spike=None):
    """Zero-trace, discretely solenoidal field ``curl(eta psi)``.

    ``psi`` is a sum of random Gaussian vector bumps with h-independent
    parameters and ``eta`` a cutoff vanishing near the complement of Omega.
    ``spike = (center, radius, amplitude)`` adds a narrow bump to ``psi``.
    """
    X, Y, Z = dom.coords()
    L = np.array(dom.lengths)
    psi = np.zeros((3,) + dom.dims)
    for _ in range(n_modes):
        c = rng.uniform(0.25, 0.75, 3) * L
        s = rng.uniform(0.08, 0.2) * L.min()
        amp = rng.standard_normal(3)
        bump = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * s * s))
        psi += amp[:, None, None, None] * bump
    if spike is not None:
        c, s, amp = spike
        bump = np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * s * s))
        psi += amp * np.array([1.0, -0.5, 0.25])[:, None, None, None] * bump
    eta = smooth_cutoff(dom, width)
    psi *= eta
    psi[:, dom.depth <= 2] = 0.0
    u = curl(psi, dom)
    u[:, dom.depth <= 1] = 0.0
    return u
