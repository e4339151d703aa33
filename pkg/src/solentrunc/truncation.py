"""Relative truncation on an open set and the solenoidal Lipschitz truncation.

Given the zero-trace potential ``w`` of ``u`` (``curl w = u``), each Whitney
cube ``Q_i`` of the set receives the affine approximation

    w_i(x) = G_i (x - x_i) + b_i,   G_i = mean of grad w over 3/2 Q_i,
    b_i = mean over 3/2 Q_i of (w - G_i (x - x_i)),

or zero when ``3/2 Q_i`` is not well inside Omega.  Then ``w_O = sum psi_i w_i``
on the set, ``w_O = w`` elsewhere, and ``u_O = curl w_O``.

Grid conventions:

* The cover is built on the set eroded by one cell (6-neighbourhood), so the
  curl stencil of every modified cell stays inside the set and ``u_O = u``
  holds bitwise off the set.
* "Well inside Omega" means every cell centre of the closed ``3/2 Q_i`` lies
  at depth >= 3.  Then ``w_O`` vanishes on depth <= 2 and ``u_O`` keeps a
  zero trace.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import whitney
from .curlpot import Potential, inverse_curl
from .grid import GridDomain, curl, divergence, gradient, magnitude
from .maxweight import level_set, maximal

__all__ = [
    "RelativeTruncation",
    "LipschitzTruncation",
    "local_linearization",
    "linearize_all",
    "relative_truncate",
    "lipschitz_truncate",
    "verify_truncation",
    "poincare_check",
    "pair_check",
    "lambda_unit",
    "REPORT_COLUMNS",
    "report_header",
    "write_report_csv",
]

_SIX = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True, eq=False)
class RelativeTruncation:
    dom: GridDomain
    O: np.ndarray
    cover: object  # WhitneyCover of the eroded set, or None
    G: np.ndarray  # (N, 3, 3) mean gradients
    b: np.ndarray  # (N, 3) compensating means
    centers: np.ndarray  # (N, 3)
    inside: np.ndarray  # (N,) bool
    w_O: np.ndarray
    u_O: np.ndarray
    estimates: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class LipschitzTruncation:
    lam: float
    O: np.ndarray
    u_lam: np.ndarray
    relative: RelativeTruncation
    constants: dict = field(default_factory=dict)


# -- per-cube affine data ------------------------------------------------------

def _summed_area(f):
    """Zero-padded cumulative sums over the three trailing axes."""
    f = np.asarray(f, dtype=float)
    pad = [(0, 0)] * (f.ndim - 3) + [(1, 0)] * 3
    S = np.pad(f, pad)
    for ax in range(f.ndim - 3, f.ndim):
        np.cumsum(S, axis=ax, out=S)
    return S


def _box_sums(S, lo, hi):
    """Sums over index boxes ``[lo, hi)`` (arrays of shape (N, 3))."""
    out = 0.0
    for cx in (0, 1):
        for cy in (0, 1):
            for cz in (0, 1):
                ix = np.where(cx, hi[:, 0], lo[:, 0])
                iy = np.where(cy, hi[:, 1], lo[:, 1])
                iz = np.where(cz, hi[:, 2], lo[:, 2])
                sign = (-1) ** (3 - cx - cy - cz)
                out = out + sign * S[..., ix, iy, iz]
    return out


def dilated_ranges(origins, sides, factor=1.5):
    """Index boxes ``[lo, hi)`` of the cells whose centres lie in closed factor*Q."""
    e4 = np.rint((factor - 1.0) / 2.0 * 4 * sides).astype(np.int64)[:, None]
    a4 = 4 * origins
    s4 = 4 * sides[:, None]
    lo = -((-(a4 - e4 - 2)) // 4)
    hi = (a4 + s4 + e4 - 2) // 4 + 1
    return lo, hi


def linearize_all(w, cover, dom, grad_w=None):
    """Affine data ``(G, b, centers, inside)`` for every cube of ``cover``."""
    n = np.array(dom.dims)
    if grad_w is None:
        grad_w = gradient(w, dom, mask_exterior=False)
    lo, hi = dilated_ranges(cover.origins, cover.sides)
    in_box = np.all(lo >= 0, axis=1) & np.all(hi <= n, axis=1)
    lo_c, hi_c = np.clip(lo, 0, n), np.clip(hi, 0, n)
    count = np.prod(hi_c - lo_c, axis=1).astype(float)
    shallow = _box_sums(_summed_area((dom.depth < 3).astype(float)), lo_c, hi_c)
    inside = in_box & (shallow == 0)
    Sg = _summed_area(grad_w)
    Sw = _summed_area(w)
    G = np.moveaxis(_box_sums(Sg, lo_c, hi_c) / count, -1, 0)  # (N, 3, 3)
    mean_w = np.moveaxis(_box_sums(Sw, lo_c, hi_c) / count, -1, 0)  # (N, 3)
    mean_x = 0.5 * (lo_c + hi_c) * dom.h
    centers = (cover.origins + 0.5 * cover.sides[:, None]) * dom.h
    b = mean_w - np.einsum("nij,nj->ni", G, mean_x - centers)
    G[~inside] = 0.0
    b[~inside] = 0.0
    return G, b, centers, inside


def local_linearization(pot, cover, i):
    """Affine data of one cube: mean gradient, compensating mean, centre, inside flag."""
    sub = whitney.cover_from_cubes(cover.open_set, cover.origins[i : i + 1], cover.sides[i : i + 1], cover.h)
    G, b, c, inside = linearize_all(pot.w, sub, pot.dom)
    return {"G": G[0], "b": b[0], "center": c[0], "inside": bool(inside[0])}


# -- truncations ------------------------------------------------------------------

def _coords(dom):
    return np.stack(dom.coords())


def relative_truncate(u, O, dom, pot=None, weight=None, p=2.0, q=None):
    """Relative truncation of ``u`` on the open set ``O`` with measured estimates."""
    u = dom.check(np.asarray(u, dtype=float), 1)
    O = np.asarray(O, dtype=bool)
    if O.shape != dom.dims:
        raise ValueError("set mask does not match the grid")
    if pot is None:
        pot = inverse_curl(u, dom)
    w = pot.w
    N0 = np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, bool)
    if O.all():
        # the whole box: by convention the truncation is the zero field
        res = RelativeTruncation(dom, O, None, *N0, np.zeros_like(w), np.zeros_like(u))
    else:
        core = ndimage.binary_erosion(O, structure=_SIX, border_value=1)
        if not core.any():
            res = RelativeTruncation(dom, O, None, *N0, w.copy(), u.copy())
        else:
            cover = whitney.decompose(core, dom.h)
            pou = whitney.partition_of_unity(cover)
            G, b, centers, inside = linearize_all(w, cover, dom)
            c = b - np.einsum("nij,nj->ni", G, centers)
            coef = np.concatenate([G.reshape(len(G), 9), c], axis=1)
            acc = pou.weighted_sum(coef)
            X = _coords(dom)
            Gf = acc[:9].reshape((3, 3) + dom.dims)
            w_O = np.einsum("ij...,j...->i...", Gf, X) + acc[9:]
            w_O = np.where(core, w_O, w)
            touched = ndimage.binary_dilation(core, structure=_SIX)
            u_O = u.copy()
            u_O[:, touched] = curl(w_O, dom)[:, touched]
            res = RelativeTruncation(dom, O, cover, G, b, centers, inside, w_O, u_O)
    res.estimates.update(_relative_estimates(u, res, dom, weight, p, q))
    return res


def _relative_estimates(u, res, dom, weight, p, q):
    inside = dom.interior_mask
    gu = magnitude(gradient(u, dom))[inside]
    gd = magnitude(gradient(u - res.u_O, dom))[inside]
    est = {
        "lip2": float(np.sum(gd**p) / np.sum(gu**p)) if np.any(gu) else 0.0,
        "div_max": float(np.abs(divergence(res.u_O, dom)).max()),
        "trace_max": float(np.abs(res.u_O[:, dom.depth <= 1]).max()),
        "identity_off_set": bool(np.array_equal(res.u_O[:, ~res.O], u[:, ~res.O])),
    }
    if weight is not None:
        wv = getattr(weight, "values", weight)[inside]
        est["lip3"] = float(np.sum(gd**p * wv) / np.sum(gu**p * wv)) if np.any(gu) else 0.0
        if q is not None:
            if not q < p:
                raise ValueError("the lower-exponent estimate needs q < p")
            wO = float(np.sum(getattr(weight, "values", weight)[res.O & dom.interior_mask])) * dom.cell_volume
            num = np.sum(gd**q * wv) * dom.cell_volume
            den = wO ** ((p - q) / p) * (np.sum(gu**p * wv) * dom.cell_volume) ** (q / p)
            est["lip4"] = float(num / den) if den > 0 else 0.0
    return est


def lambda_unit(pot):
    """Natural scale for lambda: mean of |grad^2 w| over Omega."""
    return float(np.mean(pot.hess_magnitude[pot.dom.interior_mask]))


def lipschitz_truncate(u, lam, dom, pot=None, Mg=None, weight=None, p=2.0):
    """``u_lam`` from the relative truncation on ``{M(|grad^2 w| chi_Omega) > lam}``."""
    u = dom.check(np.asarray(u, dtype=float), 1)
    if pot is None:
        pot = inverse_curl(u, dom)
    if Mg is None:
        Mg = maximal(pot.hess_magnitude, dom)
    O = level_set(Mg, lam).mask
    rel = relative_truncate(u, O, dom, pot=pot, weight=weight, p=p)
    return LipschitzTruncation(float(lam), O, rel.u_O, rel)


REPORT_COLUMNS = ("lambda", "bad_measure_ratio", "linf_ratio", "lq_diff_ratio", "lq_stab_ratio", "weighted_ratio")


def verify_truncation(u, dom, lambdas, p=2.0, q_list=(1.0, 1.5), weight=None, pot=None):
    """Per-lambda ratios of the truncation estimates plus their sup over the ladder.

    Columns: bad-set measure ``|O| lam^p / int|grad u|^p``, ``||grad u_lam||_inf / lam``,
    ``int_O |grad(u - u_lam)|^q / (lam^(q-p) int|grad u|^p)`` and
    ``||u - u_lam||_q^q(O) / ||u||_q^q`` per q, and with a weight the ratio
    ``int_O |grad(u - u_lam)|^p w / int_Omega |grad(u - u_lam)|^p w`` together
    with ``int_Omega |grad(u - u_lam)|^p w / int_Omega |grad u|^p w``.
    """
    u = dom.check(np.asarray(u, dtype=float), 1)
    if pot is None:
        pot = inverse_curl(u, dom)
    Mg = maximal(pot.hess_magnitude, dom)
    inside = dom.interior_mask
    vol = dom.cell_volume
    gu = magnitude(gradient(u, dom))
    Ip = float(np.sum(gu[inside] ** p)) * vol
    uq = {qq: float(np.sum(magnitude(u)[inside] ** qq)) * vol for qq in q_list}
    wv = None if weight is None else getattr(weight, "values", weight)
    rows = []
    for lam in lambdas:
        lt = lipschitz_truncate(u, lam, dom, pot=pot, Mg=Mg, p=p)
        O = lt.O
        OO = O & inside
        gl = magnitude(gradient(lt.u_lam, dom))
        gd = magnitude(gradient(u - lt.u_lam, dom))
        row = {
            "lambda": float(lam),
            "bad_measure": float(O.sum()) * vol,
            "bad_measure_ratio": float(O.sum()) * vol * lam**p / Ip if Ip > 0 else 0.0,
            "linf_ratio": float(gl[inside].max()) / lam,
            "div_max": float(np.abs(divergence(lt.u_lam, dom)).max()),
            "identity_off_set": bool(np.array_equal(lt.u_lam[:, ~O], u[:, ~O])),
        }
        for qq in q_list:
            row[f"lq_diff_ratio[{qq:g}]"] = float(np.sum(gd[OO] ** qq)) * vol / (lam ** (qq - p) * Ip) if Ip > 0 else 0.0
            diff_q = float(np.sum(magnitude(u - lt.u_lam)[OO] ** qq)) * vol
            row[f"lq_stab_ratio[{qq:g}]"] = diff_q / uq[qq] if uq[qq] > 0 else 0.0
        if wv is not None:
            tot = float(np.sum(gd[inside] ** p * wv[inside]))
            row["weighted_ratio"] = float(np.sum(gd[OO] ** p * wv[OO])) / tot if tot > 0 else 0.0
            den = float(np.sum(gu[inside] ** p * wv[inside]))
            row["weighted_diff_ratio"] = tot / den if den > 0 else 0.0
        rows.append(row)
    keys = [k for k in rows[0] if k not in ("lambda", "bad_measure", "identity_off_set")]
    sup = {k: max(r[k] for r in rows) for k in keys}
    sup["identity_off_set"] = all(r["identity_off_set"] for r in rows)
    return rows, sup


def report_header(q_list):
    head = ["lambda", "bad_measure_ratio", "linf_ratio"]
    head += [f"lq_diff_ratio[{q:g}]" for q in q_list]
    head += [f"lq_stab_ratio[{q:g}]" for q in q_list]
    return head + ["weighted_ratio"]


def write_report_csv(rows, sup, q_list, fh):
    """Write the ladder table plus a final ``sup`` row; absent values stay empty."""
    head = report_header(q_list)
    out = csv.writer(fh, lineterminator="\n")
    out.writerow(head)
    for r in rows:
        out.writerow([repr(float(r[k])) if k in r else "" for k in head])
    out.writerow(["sup"] + [repr(float(sup[k])) if k in sup else "" for k in head[1:]])


# -- local cube checks ------------------------------------------------------------

def poincare_check(pot, cover, p=2.0, min_side=2):
    """``max_i int_{3/2Q_i} |w - w_i|^p / r_i^{2p}  /  int_{3/2Q_i} |grad^2 w|^p``.

    Evaluated over inside, non-clamped cubes of side >= ``min_side`` cells.
    """
    dom = pot.dom
    G, b, centers, inside = linearize_all(pot.w, cover, dom)
    lo, hi = dilated_ranges(cover.origins, cover.sides)
    X = _coords(dom)
    H = pot.hess_magnitude
    best = 0.0
    for i in np.nonzero(inside & ~cover.clamped & (cover.sides >= min_side))[0]:
        sl = tuple(slice(lo[i, k], hi[i, k]) for k in range(3))
        xs = X[(slice(None),) + sl] - centers[i][:, None, None, None]
        wi = np.einsum("ij,j...->i...", G[i], xs) + b[i][:, None, None, None]
        r = np.sqrt(3.0) * cover.sides[i] * dom.h
        num = np.sum(magnitude(pot.w[(slice(None),) + sl] - wi) ** p) / r ** (2 * p)
        den = np.sum(H[sl] ** p)
        if den > 0:
            best = max(best, float(num / den))
    return best


def pair_check(pot, cover):
    """``max`` over touching inside pairs of ``sup_{Q_i cap 3/2Q_j} |w_j - w_i|``
    divided by ``r_i^2 (mean_{3/2Q_i}|grad^2 w| + mean_{3/2Q_j}|grad^2 w|)``.
    """
    dom = pot.dom
    G, b, centers, inside = linearize_all(pot.w, cover, dom)
    lo, hi = dilated_ranges(cover.origins, cover.sides)
    n = np.array(dom.dims)
    lo_c, hi_c = np.clip(lo, 0, n), np.clip(hi, 0, n)
    S = _summed_area(pot.hess_magnitude)
    mean_h = _box_sums(S, lo_c, hi_c) / np.prod(hi_c - lo_c, axis=1)
    sets = cover.neighbor_sets
    owner = np.repeat(np.arange(len(sets)), [len(A) for A in sets])
    other = np.concatenate(sets)
    keep = (owner != other) & inside[owner] & inside[other] & ~cover.clamped[owner] & ~cover.clamped[other]
    i, j = owner[keep], other[keep]
    if len(i) == 0:
        return 0.0
    # cells of Q_i whose centres lie in 3/2 Q_j
    a_lo = np.maximum(cover.origins[i], lo[j])
    a_hi = np.minimum(cover.origins[i] + cover.sides[i][:, None], hi[j])
    ok = np.all(a_hi > a_lo, axis=1)
    i, j, a_lo, a_hi = i[ok], j[ok], a_lo[ok], a_hi[ok]
    if len(i) == 0:
        return 0.0
    best = 0.0
    for corner in range(8):
        pick = np.array([(corner >> k) & 1 for k in range(3)])
        x = (np.where(pick, a_hi - 1, a_lo) + 0.5) * dom.h
        wi = np.einsum("nij,nj->ni", G[i], x - centers[i]) + b[i]
        wj = np.einsum("nij,nj->ni", G[j], x - centers[j]) + b[j]
        diff = np.sqrt(np.sum((wj - wi) ** 2, axis=1))
        r2 = (np.sqrt(3.0) * cover.sides[i] * dom.h) ** 2
        den = r2 * (mean_h[i] + mean_h[j])
        ratio = np.where(den > 0, diff / np.where(den > 0, den, 1.0), 0.0)
        best = max(best, float(ratio.max()))
    return best
