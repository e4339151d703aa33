"""Discrete p-Stokes and p-Navier-Stokes solvers on the cell grid.

Unknowns: velocity components on cells of depth >= 2 (so the velocity is
zero-trace by construction) and pressure on the cells of Omega.  Strain,
divergence and forcing pairings are evaluated on the cells of Omega with the
central differences of :mod:`solentrunc.grid`.  The discrete weak form is

    sum A(eps u) : eps phi - sum pi div phi [+ b(u; u, phi)] = sum f : grad phi

for every velocity test vector ``phi``, together with ``div u = 0`` on Omega,
all sums weighted by the cell volume.  ``b`` is the skew-symmetric
convective form ``b(w; a, phi) = (sum (w.grad a).phi - sum (w.grad phi).a) / 2``.

The collocated gradient of the pressure has a kernel: pressures constant on
each connected class of the graph linking ``c - e_k`` and ``c + e_k``
(checkerboard classes).  One node per class is pinned in the linear solves
and each class is normalized to mean zero afterwards.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .grid import GridDomain, magnitude

__all__ = [
    "StressModel",
    "ForcingSpec",
    "Solution",
    "SolverConfig",
    "SolverError",
    "Discretization",
    "discretization",
    "stress_eval",
    "check_assumptions",
    "solve_stokes",
    "solve_navier_stokes",
    "approximate_forcing",
    "split_forcing",
    "tail_mass",
    "bisect_split_level",
    "recover_pressure",
    "bogovski",
    "bogovski_norm",
    "project_to_divergence_range",
    "convective_form",
    "weak_residual",
    "singular_forcing",
    "manufactured_stokes",
    "random_test_fields",
]


class SolverError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


# -- stress laws -----------------------------------------------------------------

def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t * t)


def _smoothstep_deriv(t):
    inside = (t > 0) & (t < 1)
    return np.where(inside, 30 * t * t * (1 - t) ** 2, 0.0)


@dataclass(frozen=True)
class StressModel:
    """Stress law ``A(z)`` with its structure constants.

    ``kind``:
      * ``"p-laplacian"``: ``A(z) = |z|^(p-2) z``, regularized to
        ``(delta^2 + |z|^2)^((p-2)/2) z`` when the solver passes ``delta > 0``;
      * ``"linear-at-infinity"``: a Carreau law ``(nu + (nu0 - nu)(1+|z|^2)^(-1/2)) z``
        (p = 2) evaluated through the cutoff ``nu z + phi(|z|)(A(z) - nu z)``
        with ``phi`` a quintic smoothstep from ``K/2`` to ``K``;
      * ``"user"``: ``fn(z)`` on arrays of shape ``(..., 3, 3)``.
    """

    kind: str = "p-laplacian"
    p: float = 2.0
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 0.0
    nu: float = 1.0
    nu0: float = 2.0
    delta_tilde: float = 0.25
    fn: object = None

    def __post_init__(self):
        if self.kind not in ("p-laplacian", "linear-at-infinity", "user"):
            raise ValueError(f"unknown stress kind {self.kind!r}")
        if self.kind == "linear-at-infinity":
            if self.p != 2.0:
                raise ValueError("the linear-at-infinity law is a p = 2 law")
            if not 0 < self.delta_tilde <= self.nu / 4:
                raise ValueError("delta_tilde must lie in (0, nu/4] for the cutoff law to stay monotone")
        if self.kind == "user" and not callable(self.fn):
            raise ValueError("a user stress model needs a callable fn(z)")

    @classmethod
    def p_laplacian(cls, p):
        return cls(kind="p-laplacian", p=float(p))

    @classmethod
    def linear_at_infinity(cls, nu=1.0, nu0=2.0, delta_tilde=None):
        dt = nu / 4 if delta_tilde is None else delta_tilde
        return cls(kind="linear-at-infinity", p=2.0, C1=nu, C2=max(nu, nu0), C3=0.0, nu=nu, nu0=nu0, delta_tilde=dt)

    @property
    def K(self):
        """Crossover shear: ``|A(z) - nu z| <= delta_tilde |z|`` for ``|z| >= K``."""
        if self.kind != "linear-at-infinity":
            return None
        ratio = abs(self.nu0 - self.nu) / self.delta_tilde
        return float(max(2.0, np.sqrt(max(ratio * ratio - 1.0, 0.0))))

    @property
    def strong_monotonicity(self):
        """Constant of ``(A(z1)-A(z2)).(z1-z2) >= c |z1-z2|^p`` when known in closed form."""
        if self.kind == "p-laplacian" and self.p >= 2:
            return 2.0 ** (2.0 - self.p)
        if self.kind == "linear-at-infinity":
            return self.nu / 2
        return None

    # radial laws A(z) = mu(|z|) z
    def _mu(self, s, delta):
        if self.kind == "p-laplacian":
            r2 = delta * delta + s * s
            if self.p == 2.0:
                return np.ones_like(s), np.zeros_like(s)
            with np.errstate(divide="ignore", invalid="ignore"):
                mu = np.where(r2 > 0, r2 ** ((self.p - 2) / 2), 0.0)
                dmu_s = np.where(r2 > 0, (self.p - 2) * r2 ** ((self.p - 4) / 2), 0.0)
            return mu, dmu_s
        # linear at infinity
        K = self.K
        c = self.nu0 - self.nu
        kappa = c / np.sqrt(1 + s * s)
        dkappa = -c * s / (1 + s * s) ** 1.5
        t = (s - K / 2) / (K / 2)
        phi = _smoothstep(t)
        dphi = _smoothstep_deriv(t) / (K / 2)
        mu = self.nu + phi * kappa
        dmu = dphi * kappa + phi * dkappa
        with np.errstate(divide="ignore", invalid="ignore"):
            dmu_s = np.where(s > 0, dmu / s, 0.0)
        return mu, dmu_s

    def eval(self, z, delta=0.0):
        z = np.asarray(z, dtype=float)
        if self.kind == "user":
            return np.asarray(self.fn(z), dtype=float)
        s = np.sqrt(np.sum(z * z, axis=(-2, -1)))
        mu, _ = self._mu(s, delta)
        return mu[..., None, None] * z

    def tangent(self, z, delta=0.0):
        """``dA/dz`` as an array ``(..., 9, 9)`` acting on flattened tensors."""
        z = np.asarray(z, dtype=float)
        zf = z.reshape(z.shape[:-2] + (9,))
        if self.kind == "user":
            eps = 1e-6 * (1.0 + np.abs(zf).max())
            T = np.empty(zf.shape + (9,))
            for b in range(9):
                dz = np.zeros(9)
                dz[b] = eps
                ap = self.eval((zf + dz).reshape(z.shape)).reshape(zf.shape)
                am = self.eval((zf - dz).reshape(z.shape)).reshape(zf.shape)
                T[..., :, b] = (ap - am) / (2 * eps)
            return T
        s = np.sqrt(np.sum(zf * zf, axis=-1))
        mu, dmu_s = self._mu(s, delta)
        T = dmu_s[..., None, None] * zf[..., :, None] * zf[..., None, :]
        T += mu[..., None, None] * np.eye(9)
        return T

    def energy_density(self, s, delta=0.0):
        """``F`` with ``dF/dz = A(z)`` for the p-Laplacian law, else None."""
        if self.kind != "p-laplacian":
            return None
        return (delta * delta + s * s) ** (self.p / 2) / self.p

    def to_dict(self):
        out = {"kind": self.kind, "p": self.p, "C1": self.C1, "C2": self.C2, "C3": self.C3}
        if self.kind == "linear-at-infinity":
            out.update(nu=self.nu, nu0=self.nu0, delta_tilde=self.delta_tilde, K=self.K)
        return out


def stress_eval(model, z, delta=0.0):
    if model.p < 1:
        raise ValueError(f"stress exponent p must be >= 1, got {model.p}")
    return model.eval(z, delta)


def check_assumptions(model, sample_count=10000, rng=None, scale=3.0):
    """Sampled margins of coercivity, boundedness, monotonicity and strong monotonicity.

    Each margin is ``lhs - rhs`` of the inequality (nonnegative when it holds),
    divided by ``1 + |rhs|``.  Returns the worst margins with their witnesses.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    p = model.p
    z1 = rng.standard_normal((sample_count, 3, 3)) * scale * rng.random((sample_count, 1, 1)) ** 2
    z2 = rng.standard_normal((sample_count, 3, 3)) * scale * rng.random((sample_count, 1, 1)) ** 2
    a1, a2 = model.eval(z1), model.eval(z2)
    n1 = np.sqrt(np.sum(z1 * z1, axis=(1, 2)))
    nd = np.sqrt(np.sum((z1 - z2) ** 2, axis=(1, 2)))
    C1, C2, C3 = model.C1, model.C2, model.C3

    def worst(lhs, rhs, name, pairs):
        m = (lhs - rhs) / (1.0 + np.abs(rhs))
        i = int(np.argmin(m))
        wit = {"z1": z1[i].tolist()}
        if pairs:
            wit["z2"] = z2[i].tolist()
        return {"name": name, "margin": float(m[i]), "holds": bool(m[i] >= -1e-12), "witness": wit}

    mono = np.sum((a1 - a2) * (z1 - z2), axis=(1, 2))
    rep = {
        "coercivity": worst(np.sum(a1 * z1, axis=(1, 2)), C1 * n1**p - C3, "coercivity", False),
        "boundedness": worst(C2 * n1 ** (p - 1) + C3 ** ((p - 1) / p), np.sqrt(np.sum(a1 * a1, axis=(1, 2))), "boundedness", False),
        "monotonicity": worst(mono, np.zeros_like(mono), "monotonicity", True),
    }
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(nd > 0, mono / nd**p, np.inf)
    rep["strong_monotonicity_estimate"] = float(ratio.min())
    cs = model.strong_monotonicity
    if cs is not None and p >= 2:
        rep["strong_monotonicity"] = worst(mono, cs * nd**p - C3, "strong monotonicity", True)
    if model.kind == "linear-at-infinity":
        big = n1 >= model.K
        dev = np.sqrt(np.sum((a1 - model.nu * z1) ** 2, axis=(1, 2)))
        m = (model.delta_tilde * n1 - dev)[big]
        rep["linear_at_infinity"] = {"name": "linear at infinity", "margin": float(m.min()) if m.size else 0.0, "holds": bool(m.size == 0 or m.min() >= -1e-12)}
    rep["all_hold"] = all(v["holds"] for v in rep.values() if isinstance(v, dict))
    return rep


# -- forcing ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ForcingSpec:
    f: np.ndarray  # (3, 3, *dims)
    q: float
    center: tuple = None
    a: float = None
    strength: float = 1.0
    k: float = None


_E_DEFAULT = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]) / np.sqrt(2.0)


def singular_forcing(dom, center, a, strength=1.0, E=None, q=None):
    """``f = strength |x - x0|^(-a) E`` with the distance capped below at h/2."""
    E = _E_DEFAULT if E is None else np.asarray(E, dtype=float)
    E = E / np.sqrt(np.sum(E * E))
    X, Y, Z = dom.coords()
    r = np.sqrt((X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2)
    r = np.maximum(r, dom.h / 2)
    f = strength * r ** (-a) * E[:, :, None, None, None]
    if q is not None and not a * q < 3:
        raise ValueError(f"a*q = {a * q} >= 3: the family is not in L^q in the continuum")
    return ForcingSpec(f, q, tuple(center), a, strength)


def approximate_forcing(f, k):
    """Radial clamp ``min(k, |f|) f / |f|``."""
    if not k > 0:
        raise ValueError("clamp level k must be positive")
    f = np.asarray(f, dtype=float)
    m = magnitude(f)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(m > k, k / m, 1.0)
    return f * scale


def split_forcing(f, k):
    """``g_k = f chi_{|f| <= k}``, ``b_k = f chi_{|f| > k}``; ``g_k + b_k == f`` bitwise."""
    if not k > 0:
        raise ValueError("split level k must be positive")
    f = np.asarray(f, dtype=float)
    big = magnitude(f) > k
    return np.where(big, 0.0, f), np.where(big, f, 0.0)


def tail_mass(f, k, q, dom, weight=None):
    """``||b_k||_{q,w}^q`` over Omega."""
    _, b = split_forcing(f, k)
    m = magnitude(b)[dom.interior_mask] ** q
    if weight is not None:
        m = m * getattr(weight, "values", weight)[dom.interior_mask]
    return float(np.sum(m)) * dom.cell_volume


def bisect_split_level(f, q, beta, dom, weight=None, iters=200):
    """Smallest level ``k`` (to bisection precision) with ``||b_k||_{q,w}^q <= beta``.

    The tail mass is a non-increasing step function of ``k``; the returned
    dictionary carries the level, the tail mass attained and the mass just
    below the level.
    """
    if not beta > 0:
        raise ValueError("target tail mass must be positive")
    mags = magnitude(f)[dom.interior_mask]
    hi = float(mags.max())
    lo = float(mags[mags > 0].min()) * 0.5 if np.any(mags > 0) else hi
    if tail_mass(f, lo, q, dom, weight) <= beta:
        return {"k": lo, "tail": tail_mass(f, lo, q, dom, weight), "tail_below": None, "iterations": 0}
    it = 0
    for it in range(1, iters + 1):
        mid = np.sqrt(lo * hi)
        if tail_mass(f, mid, q, dom, weight) <= beta:
            hi = mid
        else:
            lo = mid
        if hi / lo - 1 < 1e-14:
            break
    return {"k": hi, "tail": tail_mass(f, hi, q, dom, weight), "tail_below": tail_mass(f, lo, q, dom, weight), "iterations": it}


# -- discretization --------------------------------------------------------------

def _d1(m, h):
    return sp.diags([np.ones(m - 1), -np.ones(m - 1)], [1, -1], shape=(m, m)) * (0.5 / h)


class Discretization:
    """Sparse difference operators restricted to the velocity and pressure cells."""

    def __init__(self, dom: GridDomain):
        self.dom = dom
        n0, n1, n2 = dom.dims
        N = n0 * n1 * n2
        depth = dom.depth.ravel()
        self.V = np.flatnonzero(depth >= 2)
        self.P = np.flatnonzero(depth >= 1)
        nv, npc = len(self.V), len(self.P)
        self.nv, self.npc = nv, npc
        if nv == 0:
            raise ValueError("Omega has no cells of depth >= 2; nothing to solve for")
        h = dom.h
        D = [
            sp.kron(_d1(n0, h), sp.identity(n1 * n2)),
            sp.kron(sp.identity(n0), sp.kron(_d1(n1, h), sp.identity(n2))),
            sp.kron(sp.identity(n0 * n1), _d1(n2, h)),
        ]
        D = [d.tocsr() for d in D]
        self.DP = [d[self.P][:, self.V].tocsr() for d in D]  # V-field derivative sampled on P
        self.DV = [d[self.V][:, self.V].tocsr() for d in D]
        blocks = [[None] * 3 for _ in range(9)]
        sym = [[None] * 3 for _ in range(9)]
        for i in range(3):
            for j in range(3):
                blocks[3 * i + j][i] = self.DP[j]
                if i == j:
                    sym[3 * i + j][i] = self.DP[j]
                else:
                    sym[3 * i + j][i] = 0.5 * self.DP[j]
                    sym[3 * i + j][j] = 0.5 * self.DP[i]
        self.grad = sp.bmat(blocks, format="csr")
        self.sym = sp.bmat(sym, format="csr")
        self.B = sp.hstack(self.DP, format="csr")
        self.vol = dom.cell_volume
        self.lu_cache = {}

    # pressure kernel classes
    @cached_property
    def pressure_classes(self):
        M = abs(self.B).astype(bool).astype(float)
        ncomp, labels = csgraph.connected_components(M @ M.T, directed=False)
        return ncomp, labels

    @cached_property
    def pinned(self):
        ncomp, labels = self.pressure_classes
        first = np.full(ncomp, -1)
        for i in range(len(labels) - 1, -1, -1):
            first[labels[i]] = i
        return np.sort(first)

    @cached_property
    def free_pressure(self):
        keep = np.ones(self.npc, bool)
        keep[self.pinned] = False
        return np.flatnonzero(keep)

    @cached_property
    def _bbt(self):
        Bf = self.B[self.free_pressure]
        return spla.splu((Bf @ Bf.T).tocsc())

    def normalize_pressure(self, pi):
        """Subtract the mean of every kernel class (so the total mean is zero)."""
        ncomp, labels = self.pressure_classes
        sums = np.bincount(labels, pi, ncomp)
        counts = np.bincount(labels, minlength=ncomp)
        return pi - (sums / counts)[labels]

    # field conversion
    def vel_to_field(self, U):
        out = np.zeros((3,) + self.dom.dims)
        flat = out.reshape(3, -1)
        flat[:, self.V] = U.reshape(3, self.nv)
        return out

    def field_to_vel(self, u):
        return np.asarray(u, dtype=float).reshape(3, -1)[:, self.V].ravel()

    def p_to_field(self, pi):
        out = np.zeros(self.dom.dims)
        out.reshape(-1)[self.P] = pi
        return out

    def field_to_p(self, pi):
        return np.asarray(pi, dtype=float).reshape(-1)[self.P]

    def tensor_on_P(self, f):
        """Flatten a ``(3, 3, *dims)`` tensor to the ``9 |P|`` row layout."""
        return np.asarray(f, dtype=float).reshape(9, -1)[:, self.P].ravel()

    def strain(self, U):
        return (self.sym @ U).reshape(3, 3, self.npc).transpose(2, 0, 1)

    def convection(self, W):
        """Matrix of ``a -> b(w; a, .)`` (includes the cell volume)."""
        w = W.reshape(3, self.nv)
        Nb = sum(sp.diags(w[k]) @ self.DV[k] for k in range(3))
        N = sp.block_diag([Nb, Nb, Nb], format="csr")
        return (0.5 * self.vol) * (N - N.T)

    def stiffness(self, model, Z, delta):
        T = model.tangent(Z, delta)  # (npc, 9, 9)
        npc = self.npc
        if model.kind == "p-laplacian" and model.p == 2.0:
            return self.vol * (self.sym.T @ self.sym)
        a, b = np.meshgrid(np.arange(9), np.arange(9), indexing="ij")
        rows = (a[None] * npc + np.arange(npc)[:, None, None]).ravel()
        cols = (b[None] * npc + np.arange(npc)[:, None, None]).ravel()
        W = sp.csr_matrix((T.ravel(), (rows, cols)), shape=(9 * npc, 9 * npc))
        return self.vol * (self.sym.T @ W @ self.sym)


_DISC_CACHE = {}
_DISC_LOCK = threading.Lock()


def discretization(dom, cache_size=2):
    """Shared :class:`Discretization` for a domain (keeps the last few, with their factorizations)."""
    key = (dom.dims, dom.h, hashlib.sha1(np.packbits(dom.interior_mask).tobytes()).hexdigest())
    with _DISC_LOCK:
        disc = _DISC_CACHE.pop(key, None)
        if disc is None:
            disc = Discretization(dom)
        _DISC_CACHE[key] = disc
        while len(_DISC_CACHE) > cache_size:
            _DISC_CACHE.pop(next(iter(_DISC_CACHE)))
    return disc


# -- solution objects --------------------------------------------------------------

@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iter: int = 60
    deltas: tuple = (1e-2, 1e-3, 1e-4)
    picard_max: int = 200
    picard_tol: float = 1e-10
    relax: float = 1.0


@dataclass(eq=False)
class Solution:
    u: np.ndarray
    pi: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _forcing_array(f):
    return f.f if isinstance(f, ForcingSpec) else np.asarray(f, dtype=float)


def _residual(disc, model, U, F, delta, C=None):
    """Velocity residual ``vol (S^T A(eps u) - G^T f) [+ C u]`` and its scale."""
    Z = disc.strain(U)
    A = model.eval(Z, delta)
    Aflat = A.transpose(1, 2, 0).reshape(-1)
    sa = disc.vol * (disc.sym.T @ Aflat)
    gf = disc.vol * (disc.grad.T @ F)
    g = sa - gf
    if C is not None:
        g = g + C @ U
    scale = max(np.abs(sa).max(initial=0.0), np.abs(gf).max(initial=0.0), 1e-300)
    return g, scale, Z


def _energy(disc, model, U, F, delta):
    Z = disc.strain(U)
    s = np.sqrt(np.sum(Z * Z, axis=(1, 2)))
    return disc.vol * (np.sum(model.energy_density(s, delta)) - F @ (disc.grad @ U))


def _kkt_matrix(disc, J):
    Bf = disc.B[disc.free_pressure] * disc.vol
    return sp.bmat([[J, -Bf.T], [-Bf, None]], format="csc")


def _kkt_factor(disc, J, cache_key=None):
    lu = disc.lu_cache.get(cache_key) if cache_key is not None else None
    if lu is None:
        try:
            lu = spla.splu(_kkt_matrix(disc, J))
        except RuntimeError:
            # singular tangent (a degenerate law at zero strain): shift by a tiny Newtonian part
            shift = 1e-10 * max(abs(J).max(), disc.vol) * (disc.sym.T @ disc.sym)
            lu = spla.splu(_kkt_matrix(disc, J + shift))
        if cache_key is not None:
            disc.lu_cache[cache_key] = lu
    return lu


def _gmres(K, rhs, lu, restart=60, maxiter=3):
    M = spla.LinearOperator(K.shape, lu.solve)
    sol, info = spla.gmres(K, rhs, x0=lu.solve(rhs), M=M, rtol=1e-13, atol=1e-300, restart=restart, maxiter=maxiter)
    ok = info == 0 and np.linalg.norm(K @ sol - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1e-300)
    return sol, ok


def _kkt_solve(disc, J, rhs_u, rhs_p, C=None, precond=None, exact=False, state=None):
    """Solve the pinned saddle-point system for ``J (+ C)``.

    ``precond = (key, matrix)`` names a cached symmetric factorization; with
    ``exact`` the matrix equals ``J`` and, without convection, the solve is
    direct.  Otherwise GMRES runs on the full system preconditioned by a
    factorization: the cached one, or the one kept in ``state`` from an
    earlier Newton step (refreshed from the current ``J`` when GMRES stalls).
    The convective part couples the two parity classes of the grid, which makes
    a direct factorization far more expensive than the preconditioned iteration.
    """
    fp = disc.free_pressure
    rhs = np.concatenate([rhs_u, rhs_p[fp]])
    full = J if C is None else J + C
    if precond is not None:
        lu = _kkt_factor(disc, precond[1], precond[0])
        if C is None and exact:
            sol = lu.solve(rhs)
        else:
            K = _kkt_matrix(disc, full)
            sol, ok = _gmres(K, rhs, lu)
            if not ok:
                sol = spla.splu(K).solve(rhs)
    else:
        state = {} if state is None else state
        K = _kkt_matrix(disc, full)
        ok = False
        if state.get("lu") is not None:
            sol, ok = _gmres(K, rhs, state["lu"], restart=40, maxiter=1)
        if not ok:
            state["lu"] = _kkt_factor(disc, J)
            state["factorizations"] = state.get("factorizations", 0) + 1
            if C is None:
                sol = state["lu"].solve(rhs)
            else:
                sol, ok = _gmres(K, rhs, state["lu"])
                if not ok:
                    sol = spla.splu(K).solve(rhs)
    dU = sol[: J.shape[0]]
    pi = np.zeros(disc.npc)
    pi[fp] = sol[J.shape[0] :]
    return dU, pi


def _newtonian_precond(disc, model):
    """Cached Newtonian system for laws whose viscosity stays bounded above and below."""
    if model.kind == "p-laplacian" and model.p == 2.0:
        nu = 1.0
    elif model.kind == "linear-at-infinity":
        nu = model.nu
    else:
        return None
    key = ("newtonian", nu)
    J = None if key in disc.lu_cache else nu * disc.vol * (disc.sym.T @ disc.sym)
    return key, J


def _newton(disc, model, F, delta, U, config, C=None, history=None, state=None):
    """Newton iterations for one regularization level; returns ``(U, pi, iters, res)``."""
    history = [] if history is None else history
    use_energy = C is None and model.energy_density(np.zeros(1), delta) is not None
    pi = np.zeros(disc.npc)
    res = np.inf
    for it in range(1, config.max_iter + 1):
        g, scale, Z = _residual(disc, model, U, F, delta, C)
        r_full = g - disc.vol * (disc.B.T @ pi)
        res = float(np.abs(r_full).max(initial=0.0) / scale)
        div = float(np.abs(disc.B @ U).max(initial=0.0))
        history.append({"delta": delta, "iter": it, "residual": res, "div": div})
        if it > 1 and res <= config.tol:
            return U, pi, it - 1, res
        if not np.any(g) and not np.any(U):
            return U, pi, 0, 0.0
        J = disc.stiffness(model, Z, delta)
        precond = _newtonian_precond(disc, model)
        # the Newtonian p = 2 tangent equals the cached system exactly
        exact = precond is not None and model.kind == "p-laplacian"
        dU, pi_new = _kkt_solve(disc, J, -g, disc.vol * (disc.B @ U), C, precond, exact, state)
        t = 1.0
        if use_energy:
            E0 = _energy(disc, model, U, F, delta)
            slope = float(g @ dU)
            while t > 1e-10:
                if _energy(disc, model, U + t * dU, F, delta) <= E0 + 1e-4 * t * min(slope, 0.0) + 1e-15 * abs(E0):
                    break
                t *= 0.5
        else:
            r0 = np.abs(g - disc.vol * (disc.B.T @ pi_new)).max()
            while t > 1e-10:
                g1, _, _ = _residual(disc, model, U + t * dU, F, delta, C)
                if np.abs(g1 - disc.vol * (disc.B.T @ pi_new)).max() <= (1 - 1e-4 * t) * r0 or r0 == 0:
                    break
                t *= 0.5
        history[-1]["step"] = t
        if t <= 1e-10:
            t = 1.0
        U = U + t * dU
        pi = pi_new
    g, scale, _ = _residual(disc, model, U, F, delta, C)
    res = float(np.abs(g - disc.vol * (disc.B.T @ pi)).max(initial=0.0) / scale)
    if res <= config.tol:
        return U, pi, config.max_iter, res
    raise SolverError(
        f"Newton did not reach tol={config.tol} in {config.max_iter} iterations (residual {res:.3e})", history
    )


def _lp_strain_distance(disc, U1, U2, p):
    d = disc.strain(U1 - U2)
    return float((np.sum(np.sqrt(np.sum(d * d, axis=(1, 2))) ** p) * disc.vol) ** (1 / p))


def _delta_schedule(model, config):
    if model.kind == "p-laplacian" and model.p != 2.0:
        return tuple(config.deltas)
    return (0.0,)


def solve_stokes(model, f, dom, config=None, disc=None, _state=None):
    """Discrete p-Stokes solve with regularization annealing; see module docstring."""
    state = {} if _state is None else _state
    config = SolverConfig() if config is None else config
    if not model.p > 1:
        raise ValueError(f"the Stokes solver needs p > 1, got {model.p}")
    disc = discretization(dom) if disc is None else disc
    F = disc.tensor_on_P(_forcing_array(f))
    U = np.zeros(3 * disc.nv)
    if model.kind == "user" or (model.kind == "p-laplacian" and model.p > 2 and min(config.deltas) == 0):
        # the tangent of these laws can vanish at zero strain: start from the Newtonian solve
        U, _, _, _ = _newton(disc, StressModel.p_laplacian(2), F, 0.0, U, config)
    history, stages = [], []
    pi = np.zeros(disc.npc)
    prev = None
    for delta in _delta_schedule(model, config):
        U, pi, iters, res = _newton(disc, model, F, delta, U, config, history=history, state=state)
        stage = {"delta": delta, "iterations": iters, "residual": res}
        if prev is not None:
            stage["cauchy_tail"] = _lp_strain_distance(disc, U, prev, model.p)
        stages.append(stage)
        prev = U.copy()
    diag = {
        "residual": stages[-1]["residual"],
        "iterations": sum(s["iterations"] for s in stages),
        "delta": stages[-1]["delta"],
        "stages": stages,
        "history": history,
        "div_max": float(np.abs(disc.B @ U).max(initial=0.0)),
        "pressure_classes": int(disc.pressure_classes[0]),
        "factorizations": state.get("factorizations", 0),
    }
    sol = Solution(disc.vel_to_field(U), disc.p_to_field(disc.normalize_pressure(pi)), diag)
    sol.diagnostics["_disc"] = disc
    return sol


def solve_navier_stokes(model, f, dom, config=None, disc=None):
    """Picard iteration on the skew-symmetric convective term around the Stokes solver."""
    config = SolverConfig() if config is None else config
    admissible = (model.kind == "p-laplacian" and model.p > 2) or model.kind == "linear-at-infinity" or (
        model.kind == "p-laplacian" and model.p == 2.0
    )
    if not admissible:
        raise ValueError("Navier-Stokes needs p > 2, or p = 2 (linear or linear-at-infinity)")
    disc = discretization(dom) if disc is None else disc
    F = disc.tensor_on_P(_forcing_array(f))
    deltas = _delta_schedule(model, config)
    delta = deltas[-1]
    state = {}
    stokes = solve_stokes(model, f, dom, config, disc, _state=state)
    U = disc.field_to_vel(stokes.u)
    history, picard = [], []
    best = np.inf
    for m in range(1, config.picard_max + 1):
        C = disc.convection(U)
        Uh, pi, _, _ = _newton(disc, model, F, delta, U, config, C=C, history=history, state=state)
        U = (1 - config.relax) * U + config.relax * Uh
        g, scale, _ = _residual(disc, model, U, F, delta, disc.convection(U))
        pi_ls = _least_squares_pressure(disc, g)
        res = float(np.abs(g - disc.vol * (disc.B.T @ pi_ls)).max(initial=0.0) / scale)
        picard.append(res)
        best = min(best, res)
        if res <= config.picard_tol:
            break
        if not np.isfinite(res) or (m > 5 and res > 1e3 * best):
            raise SolverError("Picard iteration diverges: reduce the forcing or use a stronger relaxation (relax < 1)", picard)
    else:
        raise SolverError(f"Picard iteration did not reach {config.picard_tol} in {config.picard_max} steps", picard)
    diag = {
        "residual": res,
        "picard_iterations": m,
        "picard_history": picard,
        "delta": delta,
        "div_max": float(np.abs(disc.B @ U).max(initial=0.0)),
        "convective_self": float(U @ (disc.convection(U) @ U)),
        "factorizations": state.get("factorizations", 0),
    }
    sol = Solution(disc.vel_to_field(U), disc.p_to_field(disc.normalize_pressure(pi_ls)), diag)
    sol.diagnostics["_disc"] = disc
    return sol


# -- pressure and Bogovski ---------------------------------------------------------

def _least_squares_pressure(disc, g):
    """``pi`` minimizing ``|g - vol B^T pi|`` with the kernel classes pinned."""
    fp = disc.free_pressure
    pi = np.zeros(disc.npc)
    pi[fp] = disc._bbt.solve(disc.B[fp] @ g) / disc.vol
    return pi


def recover_pressure(u, f, model, dom, convective=False, delta=0.0, disc=None):
    """Mean-zero pressure from the velocity residual of the weak form.

    Returns ``(pi_field, residual)`` where the residual is the relative max-norm
    of the weak-form defect left after subtracting the pressure term.
    """
    disc = discretization(dom) if disc is None else disc
    U = disc.field_to_vel(u)
    C = disc.convection(U) if convective else None
    g, scale, _ = _residual(disc, model, U, disc.tensor_on_P(_forcing_array(f)), delta, C)
    pi = _least_squares_pressure(disc, g)
    res = float(np.abs(g - disc.vol * (disc.B.T @ pi)).max(initial=0.0) / scale)
    return disc.p_to_field(disc.normalize_pressure(pi)), res


def project_to_divergence_range(a, dom, disc=None):
    """Subtract the mean of every pressure kernel class (the range of div has zero class sums)."""
    disc = discretization(dom) if disc is None else disc
    return disc.p_to_field(disc.normalize_pressure(disc.field_to_p(a)))


def bogovski(a, dom, disc=None, tol=1e-10):
    """Zero-trace ``v = B^T (B B^T)^(-1) a`` with ``div v = a`` on Omega.

    ``a`` must have mean zero on Omega and, because the collocated divergence
    only reaches class-wise mean-zero data, mean zero on every kernel class.
    """
    disc = discretization(dom) if disc is None else disc
    av = disc.field_to_p(a)
    scale = max(np.abs(av).max(initial=0.0), 1e-300)
    if abs(av.sum()) > tol * scale * len(av):
        raise ValueError("bogovski needs mean-zero data on Omega")
    ncomp, labels = disc.pressure_classes
    class_sums = np.bincount(labels, av, ncomp)
    if np.abs(class_sums).max() > tol * scale * len(av):
        raise ValueError(
            "data is not in the range of the discrete divergence: its mean over each "
            "checkerboard class must vanish (use project_to_divergence_range)"
        )
    fp = disc.free_pressure
    y = np.zeros(disc.npc)
    y[fp] = disc._bbt.solve(av[fp])
    V = disc.B.T @ y
    v = disc.vel_to_field(V)
    resid = float(np.abs(disc.B @ V - av).max(initial=0.0))
    if resid > 1e3 * tol * scale:
        raise SolverError(f"Bogovski solve left a divergence residual {resid:.3e}")
    return v


def bogovski_norm(a, q, dom, disc=None):
    """``||grad Bog(a)||_q / ||a||_q`` on Omega."""
    from .grid import gradient

    v = bogovski(a, dom, disc)
    inside = dom.interior_mask
    num = np.sum(magnitude(gradient(v, dom))[inside] ** q)
    den = np.sum(np.abs(a)[inside] ** q)
    return float((num / den) ** (1 / q))


# -- checks ---------------------------------------------------------------------

def convective_form(w, a, phi, dom, disc=None):
    """``b(w; a, phi)`` of vector fields via the sparse convection matrix."""
    disc = discretization(dom) if disc is None else disc
    C = disc.convection(disc.field_to_vel(w))
    return float(disc.field_to_vel(phi) @ (C @ disc.field_to_vel(a)))


def random_test_fields(dom, count, rng, solenoidal=False):
    """Random zero-trace test fields (smooth bumps times a boundary cutoff)."""
    from .curlpot import random_solenoidal_field, smooth_cutoff

    out = []
    for _ in range(count):
        if solenoidal:
            out.append(random_solenoidal_field(dom, rng, n_modes=3))
        else:
            X, Y, Z = dom.coords()
            c = rng.uniform(0.3, 0.7, 3) * np.array(dom.lengths)
            s = rng.uniform(0.1, 0.3)
            amp = rng.standard_normal(3)
            v = amp[:, None, None, None] * np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * s * s))
            v = v * smooth_cutoff(dom, 0.1) + 0.1 * rng.standard_normal((3,) + dom.dims)
            v[:, dom.depth <= 1] = 0.0
            out.append(v)
    return out


def weak_residual(sol, model, f, dom, tests, delta=None, convective=False, with_pressure=True):
    """``max`` over tests of the weak-form defect divided by the sum of absolute terms."""
    from .grid import divergence, gradient, sym_gradient

    delta = sol.diagnostics.get("delta", 0.0) if delta is None else delta
    f = _forcing_array(f)
    inside = dom.interior_mask
    A = model.eval(np.moveaxis(sym_gradient(sol.u, dom), (0, 1), (-2, -1)), delta)
    A = np.moveaxis(A, (-2, -1), (0, 1))
    Gu = gradient(sol.u, dom)
    worst = 0.0
    for phi in tests:
        e = sym_gradient(phi, dom)
        gphi = gradient(phi, dom)
        terms = [np.sum(A * e, axis=(0, 1)), -np.sum(f * gphi, axis=(0, 1))]
        if with_pressure:
            terms.append(-sol.pi * divergence(phi, dom))
        if convective:
            wa = np.einsum("k...,ik...->i...", sol.u, Gu)
            wphi = np.einsum("k...,ik...->i...", sol.u, gphi)
            terms.append(0.5 * (np.sum(wa * phi, axis=0) - np.sum(wphi * sol.u, axis=0)))
        total = sum(np.sum(t[inside]) for t in terms)
        size = sum(np.sum(np.abs(t[inside])) for t in terms)
        if size > 0:
            worst = max(worst, abs(total) / size)
    return worst


def manufactured_stokes(dom):
    """Smooth ``(u*, pi*)`` on the unit box and the tensor forcing for p = 2.

    ``u* = curl(psi, psi, psi)`` with ``psi = sin^3 sin^3 sin^3`` (pi x), and
    ``pi* = cos cos cos``; the forcing is ``f = eps(u*) - pi* I``.
    """
    X, Y, Z = dom.coords()
    pi_ = np.pi
    s = [np.sin(pi_ * t) for t in (X, Y, Z)]
    c = [np.cos(pi_ * t) for t in (X, Y, Z)]
    s3 = [t**3 for t in s]
    ds3 = [3 * pi_ * s[k] ** 2 * c[k] for k in range(3)]
    d2s3 = [3 * pi_**2 * (2 * s[k] * c[k] ** 2 - s[k] ** 3) for k in range(3)]

    def dpsi(k):
        fac = [s3[0], s3[1], s3[2]]
        fac[k] = ds3[k]
        return fac[0] * fac[1] * fac[2]

    def d2psi(j, k):
        fac = [s3[0], s3[1], s3[2]]
        if j == k:
            fac[j] = d2s3[j]
        else:
            fac[j] = ds3[j]
            fac[k] = ds3[k]
        return fac[0] * fac[1] * fac[2]

    # u = curl(psi, psi, psi) = (d1 - d2, d2 - d0, d0 - d1) psi
    pairs = [(1, 2), (2, 0), (0, 1)]
    u = np.stack([dpsi(a) - dpsi(b) for a, b in pairs])
    G = np.empty((3, 3) + dom.dims)
    for i, (a, b) in enumerate(pairs):
        for j in range(3):
            G[i, j] = d2psi(a, j) - d2psi(b, j)
    eps = 0.5 * (G + np.swapaxes(G, 0, 1))
    pres = c[0] * c[1] * c[2]
    f = eps - pres * np.eye(3)[:, :, None, None, None]
    return u, pres, f
