"""Uniform 3D cell grids, mimetic difference operators and Lebesgue norms.

Fields are plain numpy arrays whose last three axes are the cell axes;
leading axes (if any) index vector or tensor components.  All difference
operators use the central stencil ``(f[i+1] - f[i-1]) / 2h`` with values
beyond the bounding box taken as zero.  Because these one-dimensional
operators commute and are antisymmetric, the discrete identities

    div(curl v) = 0,   curl(grad phi) = 0,   <div t, phi> = -<t, grad phi>

hold up to floating point rounding on the whole box.

A field is *zero-trace* when it vanishes on every cell of depth <= 1, that
is on the exterior and on the boundary layer (see :attr:`GridDomain.depth`).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

__all__ = [
    "GridDomain",
    "NormSpec",
    "diff",
    "gradient",
    "sym_gradient",
    "divergence",
    "curl",
    "hessian",
    "magnitude",
    "norm",
    "integrate",
    "save_snapshot",
    "load_snapshot",
    "write_vtk",
]

STAGGERING_TAGS = ("cell", "face")


@dataclass(frozen=True, eq=False)
class GridDomain:
    """Cell-centred grid on ``[0, n h]^3`` with an interior mask for Omega."""

    dims: tuple
    h: float
    interior_mask: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or min(dims) < 3:
            raise ValueError(f"dims must be three integers >= 3, got {self.dims}")
        if not (self.h > 0 and np.isfinite(self.h)):
            raise ValueError(f"h must be positive, got {self.h}")
        mask = np.asarray(self.interior_mask, dtype=bool)
        if mask.shape != dims:
            raise ValueError(f"interior_mask shape {mask.shape} does not match dims {dims}")
        if not mask.any():
            raise ValueError("interior_mask is empty")
        _, ncomp = ndimage.label(mask)
        if ncomp != 1:
            raise ValueError(f"interior_mask must be connected, found {ncomp} components")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "interior_mask", mask)

    # -- constructors -------------------------------------------------
    @classmethod
    def box(cls, n, length=1.0):
        """Omega equal to the whole box ``[0, length]^3``."""
        return cls((n, n, n), length / n, np.ones((n, n, n), dtype=bool))

    @classmethod
    def ball(cls, n, radius=0.35, center=(0.5, 0.5, 0.5), length=1.0):
        h = length / n
        x = (np.arange(n) + 0.5) * h
        X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
        r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2
        return cls((n, n, n), h, r2 < radius**2)

    @classmethod
    def l_shape(cls, n, length=1.0):
        """Unit box with the quadrant ``x > L/2, y > L/2`` removed (a prism)."""
        h = length / n
        x = (np.arange(n) + 0.5) * h
        X, Y, _ = np.meshgrid(x, x, x, indexing="ij")
        return cls((n, n, n), h, ~((X > length / 2) & (Y > length / 2)))

    @classmethod
    def from_spec(cls, kind, n, **kw):
        kinds = {"box": cls.box, "ball": cls.ball, "L-shape": cls.l_shape, "l-shape": cls.l_shape}
        if kind not in kinds:
            raise ValueError(f"unknown mask generator {kind!r}; expected box, ball or L-shape")
        return kinds[kind](n, **kw)

    # -- derived geometry --------------------------------------------
    @cached_property
    def depth(self):
        """Taxicab distance (in cells) to the nearest cell outside Omega.

        Cells outside the box count as exterior, so exterior cells have depth 0
        and the boundary layer is ``depth == 1``.
        """
        padded = np.pad(self.interior_mask, 1, constant_values=False)
        d = ndimage.distance_transform_cdt(padded, metric="taxicab")
        d = d[1:-1, 1:-1, 1:-1].astype(np.int64)
        d.setflags(write=False)
        return d

    @property
    def boundary_layer(self):
        return self.depth == 1

    @property
    def exterior(self):
        return ~self.interior_mask

    @property
    def trace_free(self):
        """Cells where a zero-trace field may be nonzero."""
        return self.depth >= 2

    @property
    def cell_volume(self):
        return self.h**3

    @property
    def measure(self):
        return float(self.interior_mask.sum()) * self.cell_volume

    @property
    def lengths(self):
        return tuple(n * self.h for n in self.dims)

    def coords(self):
        """Cell-centre coordinate arrays ``(X, Y, Z)`` of full shape."""
        axes = [(np.arange(n) + 0.5) * self.h for n in self.dims]
        return np.meshgrid(*axes, indexing="ij")

    def check(self, f, ncomp_axes=None):
        """Raise if the trailing axes of ``f`` do not match this grid."""
        f = np.asarray(f)
        if f.shape[-3:] != self.dims:
            raise ValueError(f"field shape {f.shape} does not conform to grid dims {self.dims}")
        if ncomp_axes is not None and f.ndim - 3 != ncomp_axes:
            raise ValueError(f"expected {ncomp_axes} component axes, got shape {f.shape}")
        return f

    def zero_trace(self, f):
        """Copy of ``f`` with every cell of depth <= 1 set to zero."""
        f = np.array(self.check(f), dtype=float)
        f[..., ~self.trace_free] = 0.0
        return f


@dataclass(frozen=True)
class NormSpec:
    q: float
    weight: np.ndarray | None = None

    def __post_init__(self):
        if not self.q >= 1:
            raise ValueError(f"norm exponent must satisfy q >= 1, got {self.q}")


# -- difference operators -------------------------------------------------

def _slc(ndim, axis, s):
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def diff(f, axis, h):
    """Central difference along spatial ``axis`` (0, 1, 2) with zero fill."""
    f = np.asarray(f, dtype=float)
    ax = f.ndim - 3 + axis
    nd = f.ndim
    fp = np.zeros_like(f)
    fm = np.zeros_like(f)
    fp[_slc(nd, ax, slice(None, -1))] = f[_slc(nd, ax, slice(1, None))]
    fm[_slc(nd, ax, slice(1, None))] = f[_slc(nd, ax, slice(None, -1))]
    return (fp - fm) * (0.5 / h)


def gradient(v, dom, mask_exterior=True):
    """Gradient of a scalar ``(n,n,n)`` or vector ``(3,n,n,n)`` field.

    For a vector field the result ``G`` has ``G[i, j] = d_j v_i``.  Rows on
    exterior cells are zeroed unless ``mask_exterior`` is False.
    """
    v = dom.check(v)
    if v.ndim == 3:
        g = np.stack([diff(v, k, dom.h) for k in range(3)])
    elif v.ndim == 4 and v.shape[0] == 3:
        g = np.stack([diff(v, k, dom.h) for k in range(3)], axis=1)
    else:
        raise ValueError(f"gradient expects a scalar or 3-vector field, got shape {v.shape}")
    if mask_exterior:
        g[..., dom.exterior] = 0.0
    return g


def sym_gradient(v, dom, mask_exterior=True):
    g = gradient(v, dom, mask_exterior)
    if g.ndim != 5:
        raise ValueError("sym_gradient expects a vector field")
    return 0.5 * (g + np.swapaxes(g, 0, 1))


def divergence(t, dom):
    """Row divergence of a tensor ``(3,3,...)`` or divergence of a vector."""
    t = dom.check(t)
    if t.ndim == 5 and t.shape[:2] == (3, 3):
        return diff(t[:, 0], 0, dom.h) + diff(t[:, 1], 1, dom.h) + diff(t[:, 2], 2, dom.h)
    if t.ndim == 4 and t.shape[0] == 3:
        return diff(t[0], 0, dom.h) + diff(t[1], 1, dom.h) + diff(t[2], 2, dom.h)
    raise ValueError(f"divergence expects a vector or 3x3 tensor field, got shape {t.shape}")


def curl(v, dom):
    v = dom.check(v, 1)
    if v.shape[0] != 3:
        raise ValueError("curl expects a 3-component field")
    h = dom.h
    return np.stack(
        [
            diff(v[2], 1, h) - diff(v[1], 2, h),
            diff(v[0], 2, h) - diff(v[2], 0, h),
            diff(v[1], 0, h) - diff(v[0], 1, h),
        ]
    )


def hessian(v, dom):
    """Second differences ``H[i, j, k] = d_j d_k v_i`` of a vector field.

    Mixed entries are computed once so ``H`` is exactly symmetric in (j, k).
    """
    v = dom.check(v, 1)
    h = dom.h
    first = [diff(v, k, h) for k in range(3)]
    H = np.empty((3, 3, 3) + dom.dims)
    for j in range(3):
        for k in range(j, 3):
            H[:, j, k] = diff(first[k], j, h)
            H[:, k, j] = H[:, j, k]
    return H


def magnitude(f):
    """Pointwise Euclidean (Frobenius) magnitude over the component axes."""
    f = np.asarray(f, dtype=float)
    if f.ndim == 3:
        return np.abs(f)
    return np.sqrt(np.sum(f.reshape((-1,) + f.shape[-3:]) ** 2, axis=0))


def integrate(g, dom, region=None):
    """Midpoint-rule integral of a scalar field over Omega (or ``region``)."""
    g = dom.check(g, 0)
    region = dom.interior_mask if region is None else np.asarray(region, dtype=bool)
    return float(np.sum(g[region])) * dom.cell_volume


def norm(f, spec, dom):
    """``(sum |f|^q w h^3)^(1/q)`` over interior cells; max over Omega for q = inf."""
    if not isinstance(spec, NormSpec):
        spec = NormSpec(*spec) if isinstance(spec, tuple) else NormSpec(spec)
    a = magnitude(dom.check(f))
    inside = dom.interior_mask
    if np.isinf(spec.q):
        return float(a[inside].max())
    w = 1.0
    if spec.weight is not None:
        w = dom.check(spec.weight, 0)[inside]
        if not np.all(w > 0):
            raise ValueError("norm weight must be strictly positive on the interior")
    s = np.sum(a[inside] ** spec.q * w) * dom.cell_volume
    return float(s ** (1.0 / spec.q))


# -- field files -------------------------------------------------------------

_MAGIC = b"SLTFLD01"
_HEADER = struct.Struct("<8s3qqd8s")


def save_snapshot(path, values, dom_or_h, staggering="cell"):
    """Binary field file: fixed header (dims, h, staggering) + row-major float64.

    The header is ``magic, nx, ny, nz, ncomp, h, tag`` packed little-endian;
    the payload has shape ``(ncomp, nx, ny, nz)`` in C order.
    """
    if staggering not in STAGGERING_TAGS:
        raise ValueError(f"unknown staggering tag {staggering!r}")
    h = dom_or_h.h if isinstance(dom_or_h, GridDomain) else float(dom_or_h)
    v = np.asarray(values, dtype="<f8")
    dims = v.shape[-3:]
    ncomp = int(np.prod(v.shape[:-3], dtype=np.int64))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, *dims, ncomp, h, staggering.encode().ljust(8, b"\0")))
        fh.write(np.ascontiguousarray(v).tobytes(order="C"))


def load_snapshot(path):
    """Return ``(values, h, staggering)``; scalar fields come back 3-dimensional."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated field header")
    magic, nx, ny, nz, ncomp, h, tag = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != ncomp * nx * ny * nz:
        raise ValueError(f"{path}: payload size does not match header")
    shape = (nx, ny, nz) if ncomp == 1 else (ncomp, nx, ny, nz)
    return data.reshape(shape).astype(float), h, tag.rstrip(b"\0").decode()


def write_vtk(path, fields, dom, title="solentrunc field"):
    """Legacy ASCII STRUCTURED_POINTS file with cell-centred point data.

    ``fields`` maps names to scalar ``(n,n,n)`` or vector ``(3,n,n,n)`` arrays.
    """
    nx, ny, nz = dom.dims
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx} {ny} {nz}",
        f"ORIGIN {0.5 * dom.h!r} {0.5 * dom.h!r} {0.5 * dom.h!r}",
        f"SPACING {dom.h!r} {dom.h!r} {dom.h!r}",
        f"POINT_DATA {nx * ny * nz}",
    ]
    for name, arr in fields.items():
        arr = dom.check(arr)
        if arr.ndim == 3:
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            vals = arr.ravel(order="F")
            lines.extend(repr(float(x)) for x in vals)
        elif arr.ndim == 4 and arr.shape[0] == 3:
            lines.append(f"VECTORS {name} double")
            comps = [arr[c].ravel(order="F") for c in range(3)]
            lines.extend(f"{a!r} {b!r} {c!r}" for a, b, c in zip(*(map(float, c) for c in comps)))
        else:
            raise ValueError(f"VTK export supports scalar and vector fields, got {arr.shape}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_sidecar(path, meta):
    Path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
