"""Discrete Hardy-Littlewood maximal function and Muckenhoupt weights.

``Mg(x)`` is the largest average of ``g`` over the open balls ``|y - x| < r``
centred at cell ``x`` for radii on the dyadic ladder ``h, 2h, 4h, ...`` up to
the first radius exceeding the box diagonal.  Averages are taken over the
in-box cells of the ball, with ``g`` extended by zero outside Omega.  The
smallest radius contains only the cell itself, so ``Mg >= g`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .grid import GridDomain, save_snapshot, write_sidecar

__all__ = [
    "Weight",
    "LevelSet",
    "radius_ladder",
    "ball_average",
    "maximal",
    "level_set",
    "ap_constant",
    "make_weight",
    "explicit_weight",
    "a1_constant",
    "weak_type_constant",
    "strong_type_constant",
    "weighted_maximal_constant",
    "export_weight",
    "random_bump_field",
]


@dataclass(frozen=True, eq=False)
class LevelSet:
    lam: float
    mask: np.ndarray

    @property
    def measure_cells(self):
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class Weight:
    """Strictly positive field on the whole box with cached A_p estimates."""

    values: np.ndarray
    provenance: dict
    ap_cache: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(v > 0) or not np.all(np.isfinite(v)):
            raise ValueError("weight values must be finite and strictly positive")

    def ap(self, p, dom, stride=None):
        key = (float(p), stride)
        if key not in self.ap_cache:
            self.ap_cache[key] = ap_constant(self, p, dom, stride=stride)
        return self.ap_cache[key]


def radius_ladder(dom):
    """Radii ``h 2^k`` up to the first one at least the box diagonal."""
    diag = math.sqrt(sum(L * L for L in dom.lengths))
    radii = [dom.h]
    while radii[-1] < diag:
        radii.append(radii[-1] * 2)
    return radii


@lru_cache(maxsize=64)
def _kernel_fft(dims, k, workers):
    """FFT of the indicator of integer offsets with |d| < 2^k, on a padded box."""
    R = min(2**k - 1, max(dims) - 1)
    ax = np.arange(-R, R + 1)
    D2 = ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    ker = (D2 < 4**k).astype(float)
    shape = tuple(n + 2 * R for n in dims)
    fshape = tuple(sfft.next_fast_len(s, real=True) for s in shape)
    K = sfft.rfftn(ker, fshape, workers=workers)
    return R, fshape, K


def _ball_sum(a, k, workers):
    """Sum of ``a`` over the offset ball of radius 2^k cells centred at each cell."""
    dims = a.shape
    if k == 0:
        return a.copy()
    R, fshape, K = _kernel_fft(dims, k, workers)
    A = sfft.rfftn(a, fshape, workers=workers)
    full = sfft.irfftn(A * K, fshape, workers=workers)
    return full[R : R + dims[0], R : R + dims[1], R : R + dims[2]]


@lru_cache(maxsize=64)
def _ball_count(dims, k, workers):
    c = np.rint(_ball_sum(np.ones(dims), k, workers))
    c.setflags(write=False)
    return c


def ball_average(g, dom, radius_index, workers=1):
    """Average of ``g`` over the in-box cells of the ball of radius ``h 2^k``."""
    g = dom.check(np.asarray(g, dtype=float), 0)
    s = _ball_sum(g, radius_index, workers)
    return s / _ball_count(dom.dims, radius_index, workers)


def maximal(g, dom, restrict=True, workers=1, return_argmax=False):
    """Centred dyadic-ladder maximal function of a nonnegative field.

    With ``restrict`` the input is multiplied by the indicator of Omega first.
    """
    g = dom.check(np.asarray(g, dtype=float), 0)
    if np.any(g < 0):
        raise ValueError("maximal expects a nonnegative field (take |g| first)")
    if restrict:
        g = np.where(dom.interior_mask, g, 0.0)
    out = g.copy()
    arg = np.zeros(dom.dims, dtype=np.int8)
    for k in range(1, len(radius_ladder(dom))):
        # FFT rounding can leave tiny negative values where g vanishes
        avg = np.maximum(ball_average(g, dom, k, workers), 0.0)
        better = avg > out
        out[better] = avg[better]
        arg[better] = k
    if return_argmax:
        return out, arg
    return out


def level_set(Mg, lam):
    if not lam > 0:
        raise ValueError(f"level threshold must be positive, got {lam}")
    return LevelSet(float(lam), np.asarray(Mg) > lam)


def _center_axes(dims, stride):
    return [np.arange(stride // 2, n, stride) for n in dims]


def ap_constant(weight, p, dom, stride=None, workers=1):
    """Sampled Muckenhoupt constant ``sup_B (avg w)(avg w^(-1/(p-1)))^(p-1)``.

    Balls are centred on a lattice with spacing ``stride`` cells (default:
    about 8 centres per axis) and use every ladder radius.  Returns
    ``(value, witness)`` with the maximizing ball; the value is a lower bound
    for the true constant.
    """
    if not p > 1:
        raise ValueError(f"A_p needs p > 1, got {p}")
    w = weight.values if isinstance(weight, Weight) else np.asarray(weight, dtype=float)
    w = dom.check(w, 0)
    stride = max(1, min(dom.dims) // 8) if stride is None else int(stride)
    axes = _center_axes(dom.dims, stride)
    lat = np.ix_(*axes)
    dual = w ** (-1.0 / (p - 1.0))
    best, witness = -np.inf, None
    for k, r in enumerate(radius_ladder(dom)):
        mean_w = ball_average(w, dom, k, workers)[lat]
        mean_dual = ball_average(dual, dom, k, workers)[lat]
        val = mean_w * mean_dual ** (p - 1.0)
        j = np.unravel_index(int(np.argmax(val)), val.shape)
        if val[j] > best:
            best = float(val[j])
            center = [float((axes[a][j[a]] + 0.5) * dom.h) for a in range(3)]
            witness = {"center": center, "radius": r}
    return max(best, 1.0), witness


def make_weight(g, eps, p, dom, workers=1):
    """``w = (M(g chi_Omega + 1))^(-eps)`` with ``eps`` in ``(0, p-1)``.

    Negative powers of maximal functions with exponent in (0, 1) are A_1
    weights, so ``w`` lies in A_p whenever ``0 < eps < p - 1``.
    """
    if not 0 < eps < p - 1:
        raise ValueError(
            f"eps={eps} outside (0, p-1) = (0, {p - 1}): the weight (Mg)^(-eps) "
            "is only guaranteed to be an A_p weight when eps/(p-1) lies in (0, 1)"
        )
    g = dom.check(np.asarray(g, dtype=float), 0)
    if np.any(g < 0):
        raise ValueError("make_weight expects a nonnegative base field")
    base = np.where(dom.interior_mask, g, 0.0) + 1.0
    Mg = maximal(base, dom, restrict=False, workers=workers)
    vals = Mg ** (-eps)
    return Weight(vals, {"kind": "maximal-power", "eps": float(eps), "p": float(p)})


def explicit_weight(values, label="explicit"):
    return Weight(np.asarray(values, dtype=float), {"kind": label})


def a1_constant(g, alpha, dom, workers=1):
    """Pointwise ``max M((Mg)^alpha) / (Mg)^alpha`` for ``alpha`` in (0, 1)."""
    if not 0 < alpha < 1:
        raise ValueError("the A_1 property of (Mg)^alpha needs alpha in (0, 1)")
    Mg = maximal(g, dom, workers=workers)
    pos = Mg > 0
    Ma = Mg**alpha
    MMa = maximal(Ma, dom, restrict=False, workers=workers)
    return float(np.max(MMa[pos] / Ma[pos]))


def weak_type_constant(g, dom, lambdas=None, workers=1):
    """``sup_lambda lambda |{Mg > lambda}| / ||g||_1`` over a lambda ladder."""
    g = np.where(dom.interior_mask, np.abs(g), 0.0)
    Mg = maximal(g, dom, workers=workers)
    total = float(g.sum()) * dom.cell_volume
    if lambdas is None:
        lo, hi = float(Mg[Mg > 0].min()), float(Mg.max())
        lambdas = np.geomspace(lo, hi, 40)[:-1]
    vals = [lam * float(np.sum(Mg > lam)) * dom.cell_volume / total for lam in lambdas]
    return float(max(vals))


def strong_type_constant(g, dom, q, workers=1):
    """``||Mg||_q / ||g||_q`` with both norms taken over the whole box."""
    g = np.where(dom.interior_mask, np.abs(g), 0.0)
    Mg = maximal(g, dom, workers=workers)
    return float((np.sum(Mg**q) / np.sum(g**q)) ** (1.0 / q))


def weighted_maximal_constant(f, weight, p, dom, workers=1):
    """``int |Mf|^p w / int |f|^p w``."""
    w = weight.values if isinstance(weight, Weight) else weight
    f = np.where(dom.interior_mask, np.abs(f), 0.0)
    Mf = maximal(f, dom, workers=workers)
    return float(np.sum(Mf**p * w) / np.sum(f**p * w))


def export_weight(weight, dom, path):
    """Binary snapshot of the values plus a JSON sidecar with the provenance."""
    save_snapshot(path, weight.values, dom)
    meta = dict(weight.provenance)
    meta["ap_estimates"] = [
        {"p": k[0], "stride": k[1], "value": v[0], "witness": v[1]} for k, v in sorted(weight.ap_cache.items(), key=str)
    ]
    write_sidecar(str(path) + ".json", meta)


def random_bump_field(dom, rng, n_bumps=6):
    """Nonnegative sum of Gaussian bumps whose parameters do not depend on h."""
    X, Y, Z = dom.coords()
    L = np.array(dom.lengths)
    out = np.zeros(dom.dims)
    for _ in range(n_bumps):
        c = rng.uniform(0.1, 0.9, 3) * L
        s = rng.uniform(0.05, 0.25) * L.min()
        a = rng.uniform(0.5, 2.0)
        out += a * np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * s * s))
    return out
