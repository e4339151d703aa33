"""Whitney decomposition of grid open sets and its smooth partition of unity.

An open set ``O`` is a boolean cell mask; as a subset of R^3 it is the
interior of the union of its closed cells, and everything outside the
bounding box belongs to the complement.  Dyadic cubes are aligned with the
cell grid: a cube of *side* ``s`` cells (``s`` a power of two) has its lower
corner at a multiple of ``s``.  Its level is ``m = top - log2(s)`` where
``2^top`` cells span the dyadic hull of the box, so for ``h = 2^-top`` the side
length is exactly ``2^-m``.

Selection rule: every cell goes to the largest dyadic cube containing it with
``diam(Q) < dist(Q, O^c)``.  Maximality of that cube gives the upper bound
``dist(Q, O^c) <= 4 diam(Q)`` and the neighbour ratio bound.  Distances
between closed cells are exact (squared distances are integers in cell
units).  Cells whose 2-cell cube fails the lower bound are below grid
resolution (within sqrt(3) cells of O^c); each becomes a one-cell *clamped*
cube, flagged and excluded from the distance test.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import ndimage

__all__ = [
    "WhitneyCover",
    "PartitionOfUnity",
    "decompose",
    "neighbors",
    "cover_from_cubes",
    "partition_of_unity",
    "validate",
    "bump_profile",
    "random_open_set",
    "cover_to_jsonl",
]

SQRT3 = float(np.sqrt(3.0))
MAX_NEIGHBORS = 4**3 - 2**3


@dataclass(frozen=True, eq=False)
class WhitneyCover:
    open_set: np.ndarray
    h: float
    top: int
    origins: np.ndarray  # (N, 3) lower-corner cell indices
    sides: np.ndarray  # (N,) side in cells
    clamped: np.ndarray  # (N,) bool
    labels: np.ndarray = field(repr=False)  # cell -> cube id, -1 off O
    neighbor_sets: tuple = field(repr=False)  # A_i, sorted, includes i

    def __len__(self):
        return len(self.sides)

    @property
    def dims(self):
        return self.open_set.shape

    @property
    def levels(self):
        return self.top - np.log2(self.sides).astype(np.int64)

    @property
    def indices(self):
        return self.origins // self.sides[:, None]

    @property
    def radii(self):
        """``r_i = diam(Q_i)`` in length units."""
        return SQRT3 * self.sides * self.h

    @property
    def centers(self):
        return (self.origins + 0.5 * self.sides[:, None]) * self.h


@dataclass(frozen=True, eq=False)
class PartitionOfUnity:
    """Sampled bumps ``psi_i = tilde_psi_i / sigma`` of a Whitney cover."""

    cover: WhitneyCover
    sigma: np.ndarray
    grad_sigma: np.ndarray

    def psi(self, i):
        """``(slices, psi_i)`` on the index box of the dilated cube 9/8 Q_i."""
        sl, tpsi, _ = _bump_local(self.cover, i)
        sig = self.sigma[sl]
        out = np.zeros_like(tpsi)
        np.divide(tpsi, sig, out=out, where=sig > 0)
        return sl, out

    def grad_psi(self, i):
        sl, tpsi, tgrad = _bump_local(self.cover, i)
        sig = self.sigma[sl]
        gs = self.grad_sigma[(slice(None),) + sl]
        out = np.zeros_like(tgrad)
        ok = sig > 0
        for a in range(3):
            np.divide(tgrad[a] * sig - tpsi * gs[a], sig**2, out=out[a], where=ok)
        return sl, out

    def total(self):
        """``sum_i psi_i`` sampled at the cell centres."""
        out = np.zeros_like(self.sigma)
        np.divide(self.sigma, self.sigma, out=out, where=self.sigma > 0)
        return out

    def weighted_sum(self, coeffs):
        """``sum_i c_i psi_i(x)`` for per-cube coefficients of shape (N, ...)."""
        coeffs = np.asarray(coeffs, dtype=float)
        extra = coeffs.shape[1:]
        acc = np.zeros(extra + self.cover.dims)
        for s in np.unique(self.cover.sides):
            sel = self.cover.sides == s
            k = bump_kernel(int(s))
            acc += _splat(self.cover.origins[sel], coeffs[sel], (k, k, k), _ext(int(s)), self.cover.dims)
        out = np.zeros_like(acc)
        np.divide(acc, self.sigma, out=out, where=self.sigma > 0)
        return out


# -- bump profile ----------------------------------------------------------

def _smoothstep(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def _smoothstep_d(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return 30.0 * tau**2 * (1.0 - tau) ** 2


def bump_profile(t, derivative=False):
    """One-dimensional factor of the bump: 1 on |t| <= 1/2, 0 on |t| >= 9/16.

    The transition is a quintic smoothstep, so the tensor-product bump is C^2.
    """
    t = np.asarray(t, dtype=float)
    tau = (np.abs(t) - 0.5) * 16.0
    if derivative:
        return -16.0 * _smoothstep_d(tau) * np.sign(t)
    return 1.0 - _smoothstep(tau)


def _ext(s):
    """Cells beyond a cube face whose centres fall inside 9/8 Q."""
    return max(0, int(np.ceil(s / 16.0 - 0.5)))


def bump_kernel(s, derivative=False):
    e = _ext(s)
    t = (np.arange(-e, s + e) + 0.5) / s - 0.5
    return bump_profile(t, derivative)


def _splat(origins, coeffs, kernels, ext, dims):
    """Sum over cubes of ``coeffs_i * (kx (x) ky (x) kz)`` placed at ``origins_i - ext``."""
    coeffs = np.asarray(coeffs, dtype=float)
    extra = coeffs.shape[1:]
    L = len(kernels[0])
    big = tuple(n + L for n in dims)
    delta = np.zeros(extra + big)
    idx = (Ellipsis,) + tuple(origins[:, a] for a in range(3))
    np.add.at(delta, idx, np.moveaxis(coeffs, 0, -1))
    arr = delta
    for axis in range(3):
        ax = arr.ndim - 3 + axis
        out = np.zeros_like(arr)
        n = arr.shape[ax]
        for j, kv in enumerate(kernels[axis]):
            if kv == 0.0 or j >= n:
                continue
            src = [slice(None)] * arr.ndim
            dst = [slice(None)] * arr.ndim
            src[ax] = slice(0, n - j)
            dst[ax] = slice(j, n)
            out[tuple(dst)] += kv * arr[tuple(src)]
        arr = out
    return _crop_shift(arr, ext, dims, len(extra))


def _crop_shift(arr, ext, dims, nextra):
    out = np.zeros(arr.shape[:nextra] + tuple(dims))
    src = [slice(None)] * nextra
    dst = [slice(None)] * nextra
    for n in dims:
        # big index b maps to cell b - ext
        src.append(slice(ext, ext + n))
        dst.append(slice(0, n))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _bump_local(cover, i):
    s = int(cover.sides[i])
    e = _ext(s)
    a = cover.origins[i]
    dims = cover.dims
    lo = [max(0, int(a[k]) - e) for k in range(3)]
    hi = [min(dims[k], int(a[k]) + s + e) for k in range(3)]
    sl = tuple(slice(lo[k], hi[k]) for k in range(3))
    l = s * cover.h
    t = [((np.arange(lo[k], hi[k]) + 0.5) - (a[k] + 0.5 * s)) / s for k in range(3)]
    f = [bump_profile(tk) for tk in t]
    df = [bump_profile(tk, derivative=True) / l for tk in t]
    tpsi = f[0][:, None, None] * f[1][None, :, None] * f[2][None, None, :]
    grad = np.stack(
        [
            df[0][:, None, None] * f[1][None, :, None] * f[2][None, None, :],
            f[0][:, None, None] * df[1][None, :, None] * f[2][None, None, :],
            f[0][:, None, None] * f[1][None, :, None] * df[2][None, None, :],
        ]
    )
    return sl, tpsi, grad


# -- decomposition -----------------------------------------------------------

def complement_distance2(open_set):
    """Exact squared distance (cell units) from each closed cell to O^c.

    The complement includes everything outside the box.  The distance between
    closed unit cells at integer offset d is ``sum max(0, |d_k| - 1)^2``, which
    equals the centre distance to the complement dilated by one cell in the
    max-norm.
    """
    comp = np.pad(~np.asarray(open_set, dtype=bool), 2, constant_values=True)
    comp = ndimage.binary_dilation(comp, structure=np.ones((3, 3, 3), dtype=bool))
    d = ndimage.distance_transform_edt(~comp)
    d2 = np.rint(d**2).astype(np.int64)
    return d2[2:-2, 2:-2, 2:-2]


def _block_min(a, s):
    """Min of ``a`` over dyadic blocks of side ``s``; cells beyond the box count as 0."""
    n = a.shape
    m = tuple(-(-k // s) for k in n)
    p = np.zeros(tuple(k * s for k in m), dtype=a.dtype)
    p[: n[0], : n[1], : n[2]] = a
    return p.reshape(m[0], s, m[1], s, m[2], s).min(axis=(1, 3, 5))


def _block_all(mask, s):
    n = mask.shape
    m = tuple(-(-k // s) for k in n)
    p = np.zeros(tuple(k * s for k in m), dtype=bool)
    p[: n[0], : n[1], : n[2]] = mask
    return p.reshape(m[0], s, m[1], s, m[2], s).all(axis=(1, 3, 5))


def _upsample(block, factor, shape):
    up = block.repeat(factor, 0).repeat(factor, 1).repeat(factor, 2)
    out = np.zeros(shape, dtype=block.dtype)
    sl = tuple(slice(0, min(a, b)) for a, b in zip(shape, up.shape))
    out[sl] = up[sl]
    return out


def decompose(open_set, h=None):
    """Whitney cover of a proper, nonempty open cell set.

    Returns cubes sorted by ``(m, index)``; larger cubes come first.
    """
    O = np.asarray(open_set, dtype=bool)
    if O.ndim != 3:
        raise ValueError("open_set must be a 3D mask")
    if not O.any():
        raise ValueError("open_set is empty")
    if O.all():
        raise ValueError("open_set is the whole box; its complement is empty within the grid")
    dims = O.shape
    h = 1.0 / max(dims) if h is None else float(h)
    top = int(np.ceil(np.log2(max(dims))))
    d2 = complement_distance2(O)

    chosen = []  # (side, block index array)
    covered = np.zeros(dims, dtype=bool)
    parent_adm = None
    for j in range(top, -1, -1):
        s = 2**j
        adm = _block_min(d2, s) > 3 * s * s
        sel = adm.copy()
        if parent_adm is not None:
            sel &= ~_upsample(parent_adm, 2, adm.shape)
        parent_adm = adm
        if sel.any():
            chosen.append((s, np.argwhere(sel), False))
            covered |= _upsample(sel, s, dims)
    # cells too close to O^c even for a one-cell cube
    left = O & ~covered
    if left.any():
        chosen.append((1, np.argwhere(left), True))

    origins, sides, clamped = [], [], []
    for s, blocks, cl in chosen:
        origins.append(blocks * s)
        sides.append(np.full(len(blocks), s, dtype=np.int64))
        clamped.append(np.full(len(blocks), cl))
    origins = np.concatenate(origins).astype(np.int64)
    sides = np.concatenate(sides)
    clamped = np.concatenate(clamped)
    levels = top - np.log2(sides).astype(np.int64)
    idx = origins // sides[:, None]
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0], levels))
    origins, sides, clamped = origins[order], sides[order], clamped[order]

    labels = _paint_labels(origins, sides, dims)
    nbrs = _touching_sets(labels, len(sides))
    return WhitneyCover(O.copy(), h, top, origins, sides, clamped, labels, nbrs)


def _paint_labels(origins, sides, dims):
    """Cell -> cube id for dyadically aligned cubes."""
    labels = np.full(dims, -1, dtype=np.int64)
    for s in np.unique(sides):
        s = int(s)
        ids = np.nonzero(sides == s)[0]
        m = tuple(-(-n // s) for n in dims)
        block = np.full(m, -1, dtype=np.int64)
        bi = origins[ids] // s
        block[bi[:, 0], bi[:, 1], bi[:, 2]] = ids
        up = _upsample(block, s, dims)
        np.copyto(labels, up, where=up >= 0)
    return labels


_HALF_OFFSETS = [
    (a, b, c)
    for a in (-1, 0, 1)
    for b in (-1, 0, 1)
    for c in (-1, 0, 1)
    if (a, b, c) > (0, 0, 0)
]


def _touching_sets(labels, n):
    """Cubes touching Q_i (sharing a face, edge or corner), including i itself."""
    keys = []
    nx, ny, nz = labels.shape
    for off in _HALF_OFFSETS:
        src = tuple(slice(max(0, -o), n_ - max(0, o)) for o, n_ in zip(off, (nx, ny, nz)))
        dst = tuple(slice(max(0, o), n_ - max(0, -o)) for o, n_ in zip(off, (nx, ny, nz)))
        a = labels[src].ravel()
        b = labels[dst].ravel()
        ok = (a >= 0) & (b >= 0) & (a != b)
        a, b = a[ok], b[ok]
        keys.append(np.minimum(a, b) * n + np.maximum(a, b))
    keys = np.unique(np.concatenate(keys)) if keys else np.zeros(0, np.int64)
    i, j = keys // n, keys % n
    src = np.concatenate([i, j, np.arange(n)])
    dst = np.concatenate([j, i, np.arange(n)])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    bounds = np.searchsorted(src, np.arange(n + 1))
    return tuple(dst[bounds[k] : bounds[k + 1]] for k in range(n))


def cover_from_cubes(open_set, origins, sides, h=None, clamped=None):
    """Build a cover object from an explicit list of dyadically aligned cubes.

    No Whitney property is enforced; this is meant for synthetic covers and
    deliberately corrupted inputs to ``validate``.
    """
    O = np.asarray(open_set, dtype=bool)
    dims = O.shape
    h = 1.0 / max(dims) if h is None else float(h)
    origins = np.asarray(origins, dtype=np.int64).reshape(-1, 3)
    sides = np.asarray(sides, dtype=np.int64).reshape(-1)
    if np.any(origins % sides[:, None]):
        raise ValueError("cube origins must be multiples of their side")
    clamped = np.zeros(len(sides), bool) if clamped is None else np.asarray(clamped, bool)
    top = int(np.ceil(np.log2(max(dims))))
    labels = _paint_labels(origins, sides, dims)
    return WhitneyCover(O.copy(), h, top, origins, sides, clamped, labels, _touching_sets(labels, len(sides)))


def neighbors(cover, i):
    """``A_i``: cubes whose bump is positive somewhere on the closed cube Q_i.

    A bump is supported in the open dilation 9/8 Q_j, which meets Q_i exactly
    when the two cubes touch (the neighbour ratio bound keeps every nearby
    cube at least half as large, wider than the 1/16 margin of the dilation).
    """
    if not 0 <= i < len(cover):
        raise IndexError(f"cube index {i} out of range for cover of {len(cover)} cubes")
    return cover.neighbor_sets[i]


def partition_of_unity(cover):
    dims = cover.dims
    sigma = np.zeros(dims)
    grad = np.zeros((3,) + dims)
    for s in np.unique(cover.sides):
        s = int(s)
        sel = cover.sides == s
        k = bump_kernel(s)
        dk = bump_kernel(s, derivative=True) / (s * cover.h)
        ones = np.ones(int(sel.sum()))
        org = cover.origins[sel]
        e = _ext(s)
        sigma += _splat(org, ones, (k, k, k), e, dims)
        grad[0] += _splat(org, ones, (dk, k, k), e, dims)
        grad[1] += _splat(org, ones, (k, dk, k), e, dims)
        grad[2] += _splat(org, ones, (k, k, dk), e, dims)
    if np.any(sigma[cover.open_set] < 1.0 - 1e-12):
        raise ValueError("invalid cover: some cell of O is not covered by any cube")
    return PartitionOfUnity(cover, sigma, grad)


# -- validation -------------------------------------------------------------

def _window_min(a, s):
    """``m[i] = min(a[i:i+s])`` along every axis, zero beyond the box."""
    out = a
    for ax in range(3):
        pad = [(0, 0)] * 3
        pad[ax] = (0, s - 1)
        p = np.pad(out, pad, constant_values=0)
        out = np.lib.stride_tricks.sliding_window_view(p, s, axis=ax).min(axis=-1)
    return out


def _coverage_count(origins, lengths, starts_scale, dims):
    """Number of boxes containing each lattice sample (3D difference array)."""
    d = np.zeros(tuple(n + 1 for n in dims), dtype=np.int16)
    lo = np.clip(origins, 0, np.array(dims))
    hi = np.clip(origins + lengths[:, None], 0, np.array(dims))
    keep = np.all(hi > lo, axis=1)
    lo, hi = lo[keep], hi[keep]
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                sign = (-1) ** (cx + cy + cz)
                px = np.where(cx, hi[:, 0], lo[:, 0])
                py = np.where(cy, hi[:, 1], lo[:, 1])
                pz = np.where(cz, hi[:, 2], lo[:, 2])
                np.add.at(d, (px, py, pz), sign)
    for ax in range(3):
        np.cumsum(d, axis=ax, out=d)
    c = d
    return c[: dims[0], : dims[1], : dims[2]]


def dilation_multiplicity(cover, factor=1.5):
    """Max number of open dilated cubes ``factor * Q_i`` sharing a point.

    Dilated faces of the smallest cubes sit on a quarter-cell lattice, so
    counts are taken at the centres of that lattice (points outside the box
    never see more cubes than their mirror points just inside).
    """
    q = 4
    sides = cover.sides
    ext = (factor - 1.0) / 2.0 * sides * q  # quarter units beyond each face
    if not np.allclose(ext, np.round(ext)):
        raise ValueError("dilation factor does not land on the quarter-cell lattice")
    ext = np.round(ext).astype(np.int64)
    lo = cover.origins * q - ext[:, None]
    length = sides * q + 2 * ext
    dims = tuple(n * q for n in cover.dims)
    return int(_coverage_count(lo, length, q, dims).max())


def validate(cover, pou=None, tol=None):
    """Report per property (booleans) plus measured constants.

    ``tol`` is the distance tolerance used for the diam/dist test (default h).
    """
    h = cover.h
    tol = h if tol is None else tol
    O = cover.open_set
    dims = cover.dims
    rep = {"n_cubes": int(len(cover)), "n_clamped": int(cover.clamped.sum())}

    # (a) exact tiling
    count = _coverage_count(cover.origins, cover.sides, 1, dims)
    rep["tiling"] = bool(np.all(count[O] == 1) and np.all(count[~O] == 0))
    rep["tiling_cells"] = int(np.sum(cover.sides.astype(np.int64) ** 3))
    rep["open_cells"] = int(O.sum())

    # (b) diam < dist <= 4 diam for non-clamped cubes
    d2 = complement_distance2(O)
    dist = np.empty(len(cover))
    for s in np.unique(cover.sides):
        sel = cover.sides == s
        wm = _window_min(d2, int(s))
        org = cover.origins[sel]
        inside = np.all((org >= 0) & (org < np.array(dims)), axis=1)
        vals = np.zeros(len(org))
        vals[inside] = wm[org[inside, 0], org[inside, 1], org[inside, 2]]
        dist[sel] = np.sqrt(vals) * h
    diam = cover.radii
    free = ~cover.clamped
    lower = dist[free] > diam[free] - tol
    upper = dist[free] <= 4.0 * diam[free] + tol
    rep["whitney_distance"] = bool(lower.all() and upper.all())
    ratio = dist[free] / diam[free] if free.any() else np.zeros(0)
    rep["dist_over_diam_min"] = float(ratio.min()) if ratio.size else float("nan")
    rep["dist_over_diam_max"] = float(ratio.max()) if ratio.size else float("nan")
    rep["whitney_distance_exact"] = bool(
        np.all(dist[free] > diam[free] * (1 - 1e-12)) and np.all(dist[free] <= 4 * diam[free] * (1 + 1e-12))
    )

    # (c), (d) neighbour ratio and counts
    sets = cover.neighbor_sets
    counts = np.array([len(A) for A in sets]) - 1
    owner = np.repeat(np.arange(len(sets)), counts + 1)
    flat = np.concatenate(sets)
    other = flat != owner
    ratios = cover.sides[flat[other]] / cover.sides[owner[other]]
    if ratios.size == 0:
        ratios = np.ones(1)
    rep["neighbor_ratio_min"] = float(ratios.min())
    rep["neighbor_ratio_max"] = float(ratios.max())
    rep["neighbor_ratio"] = bool(ratios.min() >= 0.5 and ratios.max() <= 2.0)
    rep["max_neighbors"] = int(max(counts))
    rep["mean_neighbors"] = float(np.mean(counts))
    rep["neighbor_count"] = rep["max_neighbors"] <= MAX_NEIGHBORS

    # (e) finite overlap of the 3/2-dilations
    mult = dilation_multiplicity(cover, 1.5)
    rep["overlap_multiplicity"] = mult
    rep["overlap"] = mult <= MAX_NEIGHBORS

    # (f) partition of unity
    if pou is None:
        pou = partition_of_unity(cover)
    tot = pou.total()
    err = float(np.abs(tot[O] - 1.0).max())
    rep["pou_sum_error"] = err
    rep["pou_outside_max"] = float(np.abs(tot[~O]).max()) if (~O).any() else 0.0
    rep["pou_sum"] = bool(err <= 1e-12 and rep["pou_outside_max"] == 0.0)
    # psi_i == 1 on the concentric half cube: sigma must be 1 there
    lab = cover.labels
    X = np.indices(dims)
    half_ok = True
    if (lab >= 0).any():
        cells = lab >= 0
        li = lab[cells]
        s = cover.sides[li]
        t = np.stack([(X[k][cells] - cover.origins[li, k] + 0.5) / s - 0.5 for k in range(3)])
        in_half = np.all(np.abs(t) <= 0.25, axis=0)
        half_ok = bool(np.all(np.abs(pou.sigma[cells][in_half] - 1.0) <= 1e-12))
    rep["pou_bounds"] = half_ok
    rep["grad_bound"] = gradient_constant(pou)
    rep["all_pass"] = bool(
        rep["tiling"]
        and rep["whitney_distance"]
        and rep["neighbor_ratio"]
        and rep["neighbor_count"]
        and rep["overlap"]
        and rep["pou_sum"]
        and rep["pou_bounds"]
    )
    return rep


def gradient_constant(pou):
    """``max_i max_x r_i |grad psi_i(x)|`` over the sampled cell centres.

    Cubes of side <= 8 cells have no transition cells of their own, so their
    bump is ``1/sigma`` on the cube and its gradient is ``-grad sigma / sigma^2``.
    Larger cubes are evaluated one by one.
    """
    cover = pou.cover
    lab = cover.labels
    cells = lab >= 0
    li = lab[cells]
    sig = pou.sigma[cells]
    gs = np.sqrt(np.sum(pou.grad_sigma[:, cells] ** 2, axis=0))
    small = _ext_array(cover.sides[li]) == 0
    best = 0.0
    if small.any():
        best = float(np.max(cover.radii[li[small]] * gs[small] / sig[small] ** 2))
    for i in np.nonzero(_ext_array(cover.sides) > 0)[0]:
        _, g = pou.grad_psi(int(i))
        best = max(best, float(np.sqrt(np.sum(g**2, axis=0)).max()) * cover.radii[i])
    return best


def _ext_array(sides):
    return np.maximum(0, np.ceil(sides / 16.0 - 0.5)).astype(np.int64)


# -- helpers ------------------------------------------------------------------

def random_open_set(n, rng, n_balls=None):
    """Union of random balls clipped to the box (a random proper open set)."""
    n_balls = int(rng.integers(1, 6)) if n_balls is None else n_balls
    x = np.arange(n) + 0.5
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    mask = np.zeros((n, n, n), dtype=bool)
    for _ in range(n_balls):
        c = rng.uniform(0.1 * n, 0.9 * n, size=3)
        r = rng.uniform(0.08 * n, 0.4 * n)
        mask |= (X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2 < r * r
    if mask.all():
        mask[0, 0, 0] = False
    if not mask.any():
        mask[n // 2, n // 2, n // 2] = True
    return mask


def cover_to_jsonl(cover):
    """One JSON object per cube: level, dyadic index, radius, neighbour set."""
    lines = []
    lev, idx, r = cover.levels, cover.indices, cover.radii
    for i in range(len(cover)):
        lines.append(
            json.dumps(
                {
                    "m": int(lev[i]),
                    "index": [int(v) for v in idx[i]],
                    "r": float(r[i]),
                    "A": [int(v) for v in cover.neighbor_sets[i]],
                    "clamped": bool(cover.clamped[i]),
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"
