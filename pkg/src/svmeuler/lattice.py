"""Fourier lattice bookkeeping and spectral operators on the torus [0, 2pi)^d.

Coefficients live densely on the cube ``|k|_inf <= n`` as complex arrays of
shape ``(ncomp, 2n+1, ..., 2n+1)``; index ``i`` along a spatial axis is the
wavenumber ``i - n``.  The expansion is ``u(x) = sum_k u_k exp(i k.x)``, so a
coefficient is the torus mean of ``u exp(-i k.x)``.  Inner products and norms
use the true torus measure, ``<u, v> = (2pi)^d sum_k u_k . conj(v_k)``.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.signal import fftconvolve

from .errors import ConfigError, ContractError, DataError

GENERIC = "generic"
DIVERGENCE_FREE = "divergence_free"
_TAGS = (GENERIC, DIVERGENCE_FREE)

REALITY_TOL = 1e-12
DIVERGENCE_TOL = 1e-12

_workers = int(os.environ.get("SVMEULER_THREADS", "1") or 1)


def set_threads(count: int) -> None:
    """Set the number of worker threads handed to scipy.fft."""
    global _workers
    _workers = max(1, int(count))


def default_grid(n: int) -> int:
    """Smallest FFT-friendly grid with at least 3n+1 points (alias-free products)."""
    return sfft.next_fast_len(3 * n + 1, real=True)


@dataclass(frozen=True)
class FourierLattice:
    """Wavevectors ``|k|_inf <= n`` in ``dim`` dimensions plus a physical grid size.

    ``grid=0`` selects :func:`default_grid`.  Two lattices with the same
    ``dim`` and ``n`` hold the same coefficients; ``grid`` only affects
    transforms to and from physical space.
    """

    dim: int
    n: int
    grid: int = 0

    def __post_init__(self):
        problems = []
        if self.dim not in (2, 3):
            problems.append(f"dim must be 2 or 3, got {self.dim}")
        if int(self.n) != self.n or self.n < 1:
            problems.append(f"cutoff n must be a positive integer, got {self.n}")
        if problems:
            raise ConfigError(problems)
        if self.grid == 0:
            object.__setattr__(self, "grid", default_grid(self.n))
        elif self.grid < 2 * self.n + 2:
            raise ConfigError(
                f"grid_points_per_axis={self.grid} too small for cutoff n={self.n} "
                f"(need >= {2 * self.n + 2})"
            )

    def same_modes(self, other: "FourierLattice") -> bool:
        return self.dim == other.dim and self.n == other.n

    @property
    def width(self) -> int:
        return 2 * self.n + 1

    @property
    def shape(self) -> tuple:
        return (self.width,) * self.dim

    @property
    def volume(self) -> float:
        return (2 * np.pi) ** self.dim

    @cached_property
    def dealias_grid(self) -> int:
        return max(self.grid, default_grid(self.n))

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        return np.arange(-self.n, self.n + 1)

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Integer wavevectors as floats, shape ``(dim,) + shape``."""
        axes = [self.axis_wavenumbers.astype(float)] * self.dim
        return np.array(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.wavevectors**2, axis=0)

    @cached_property
    def kinf(self) -> np.ndarray:
        return np.max(np.abs(self.wavevectors), axis=0)

    @cached_property
    def _k2_safe(self) -> np.ndarray:
        return np.where(self.k2 == 0, 1.0, self.k2)

    def mask(self, cutoff: int) -> np.ndarray:
        """Boolean cube selecting ``|k|_inf <= cutoff``."""
        return self.kinf <= cutoff

    def band(self, lower: int, upper: int) -> np.ndarray:
        """Boolean cube selecting ``lower < |k|_inf <= upper``."""
        return (self.kinf > lower) & (self.kinf <= upper)

    def index_of(self, k) -> tuple:
        k = tuple(int(v) for v in k)
        if len(k) != self.dim or max(abs(v) for v in k) > self.n:
            raise ContractError(f"wavevector {k} not on lattice dim={self.dim}, n={self.n}")
        return tuple(v + self.n for v in k)

    def coordinates(self, grid: int | None = None) -> np.ndarray:
        """Physical grid points, shape ``(dim,) + (grid,)*dim``."""
        N = grid or self.grid
        x = 2 * np.pi * np.arange(N) / N
        return np.array(np.meshgrid(*([x] * self.dim), indexing="ij"))


def _spatial_axes(dim: int) -> tuple:
    return tuple(range(-dim, 0))


def _flip(c: np.ndarray, dim: int) -> np.ndarray:
    """Move the coefficient at k to position -k (reverse the spatial axes)."""
    return c[(Ellipsis,) + (slice(None, None, -1),) * dim]


def _component(i: int, dim: int) -> tuple:
    return (Ellipsis, i) + (slice(None),) * dim


def reality_defect(coeffs: np.ndarray, dim: int | None = None) -> float:
    """``max |c_k - conj(c_{-k})|``."""
    dim = coeffs.ndim - 1 if dim is None else dim
    return float(np.max(np.abs(coeffs - np.conj(_flip(coeffs, dim))), initial=0.0))


def _scale(coeffs: np.ndarray) -> float:
    return float(np.max(np.abs(coeffs), initial=0.0))


def _blocks(n: int, N: int, dim: int):
    """(cube slice, half-spectrum slice) pairs covering ``|k|_inf <= n``.

    Leading spatial axes hold k >= 0 at [0, n] and k < 0 at [N-n, N); the last
    axis keeps only k >= 0, as in an rfft layout.
    """
    pos = (slice(n, 2 * n + 1), slice(0, n + 1))
    neg = (slice(0, n), slice(N - n, N))
    out = []
    for choice in itertools.product((pos, neg), repeat=dim - 1):
        src = tuple(c[0] for c in choice) + (slice(n, 2 * n + 1),)
        dst = tuple(c[1] for c in choice) + (slice(0, n + 1),)
        out.append(((Ellipsis,) + src, (Ellipsis,) + dst))
    return out


def cube_to_grid(coeffs: np.ndarray, n: int, N: int, dim: int) -> np.ndarray:
    """Real values on an N^dim grid from Hermitian coefficients.

    The last ``dim`` axes are spatial; leading axes (batch, component) are
    carried through.
    """
    if N < 2 * n + 1:
        raise ConfigError(f"grid {N} cannot represent cutoff {n}")
    lead = coeffs.shape[:-dim]
    half = np.zeros(lead + (N,) * (dim - 1) + (N // 2 + 1,), dtype=complex)
    for src, dst in _blocks(n, N, dim):
        half[dst] = coeffs[src]
    return sfft.irfftn(half, s=(N,) * dim, axes=_spatial_axes(dim), norm="forward", workers=_workers)


def grid_to_cube(values: np.ndarray, n: int, dim: int) -> np.ndarray:
    """Coefficients ``|k|_inf <= n`` of real grid values (last ``dim`` axes).

    Negative last-axis modes come from conjugate symmetry and the k_last = 0
    plane is symmetrised, so ``c_{-k} = conj(c_k)`` holds exactly.
    """
    N = values.shape[-1]
    half = sfft.rfftn(values, axes=_spatial_axes(dim), norm="forward", workers=_workers)
    out = np.empty(values.shape[:-dim] + (2 * n + 1,) * dim, dtype=complex)
    for src, dst in _blocks(n, N, dim):
        out[src] = half[dst]
    flipped = _flip(out[..., n:], dim)
    out[..., :n] = np.conj(flipped[..., :n])
    plane = out[..., n]
    out[..., n] = 0.5 * (plane + np.conj(_flip(plane, dim - 1)))
    return out


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Truncated Fourier representation of a (vector) field.

    ``coeffs`` has shape ``(ncomp,) + lattice.shape``.  Velocity fields have
    ``ncomp == dim``; scalars have one component and gradients ``dim**2``.
    """

    lattice: FourierLattice
    coeffs: np.ndarray
    tag: str = GENERIC

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != self.lattice.dim + 1 or c.shape[1:] != self.lattice.shape:
            raise DataError(
                f"coefficient array shape {c.shape} does not match lattice {self.lattice.shape}"
            )
        if self.tag not in _TAGS:
            raise DataError(f"unknown tag {self.tag!r}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, lattice: FourierLattice, ncomp: int | None = None, tag: str = GENERIC):
        ncomp = lattice.dim if ncomp is None else ncomp
        return cls(lattice, np.zeros((ncomp,) + lattice.shape, dtype=complex), tag)

    @classmethod
    def from_modes(cls, lattice: FourierLattice, modes: dict, tag: str = GENERIC):
        """Build a field from ``{k: coefficient vector}``; nothing is symmetrised."""
        out = None
        for k, vec in modes.items():
            vec = np.atleast_1d(np.asarray(vec, dtype=complex))
            if out is None:
                out = np.zeros((vec.size,) + lattice.shape, dtype=complex)
            out[(slice(None),) + lattice.index_of(k)] = vec
        if out is None:
            out = np.zeros((lattice.dim,) + lattice.shape, dtype=complex)
        return cls(lattice, out, tag)

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]

    @property
    def dim(self) -> int:
        return self.lattice.dim

    @property
    def n(self) -> int:
        return self.lattice.n

    def coefficient(self, k) -> np.ndarray:
        return self.coeffs[(slice(None),) + self.lattice.index_of(k)]

    def with_coeffs(self, coeffs, tag: str | None = None) -> "SpectralField":
        return SpectralField(self.lattice, coeffs, self.tag if tag is None else tag)

    def _check_partner(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if not self.lattice.same_modes(other.lattice) or self.ncomp != other.ncomp:
            raise ContractError("fields live on different lattices")
        return DIVERGENCE_FREE if self.tag == other.tag == DIVERGENCE_FREE else GENERIC

    def __add__(self, other):
        tag = self._check_partner(other)
        if tag is NotImplemented:
            return tag
        return SpectralField(self.lattice, self.coeffs + other.coeffs, tag)

    def __sub__(self, other):
        tag = self._check_partner(other)
        if tag is NotImplemented:
            return tag
        return SpectralField(self.lattice, self.coeffs - other.coeffs, tag)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            return NotImplemented
        return SpectralField(self.lattice, self.coeffs * scalar, self.tag)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.lattice, -self.coeffs, self.tag)

    def max_reality_defect(self) -> float:
        return reality_defect(self.coeffs, self.dim)

    def max_divergence_defect(self) -> float:
        """``max_k |k . u_k|`` (velocity fields only)."""
        if self.ncomp != self.dim:
            raise ContractError("divergence defect needs a velocity field")
        kdotc = np.sum(self.lattice.wavevectors * self.coeffs, axis=0)
        return float(np.max(np.abs(kdotc), initial=0.0))

    def is_divergence_free(self, tol: float = DIVERGENCE_TOL) -> bool:
        return self.max_divergence_defect() <= tol * max(_scale(self.coeffs), 1e-300)

    def check_invariants(self, tol: float = REALITY_TOL) -> None:
        """Raise DataError if reality, zero mean or (when tagged) solenoidality fail."""
        scale = _scale(self.coeffs)
        if self.max_reality_defect() > tol * max(scale, 1e-300):
            raise DataError(f"reality violated: defect {self.max_reality_defect():.3e}")
        zero = self.coefficient((0,) * self.dim)
        if np.any(zero != 0):
            raise DataError("mean mode is not zero")
        if self.tag == DIVERGENCE_FREE and not self.is_divergence_free(tol):
            raise DataError(f"divergence defect {self.max_divergence_defect():.3e}")


@dataclass(frozen=True, eq=False)
class PhysicalField:
    """Grid samples of a real field, ``values`` shape ``(ncomp,) + (grid,)*dim``."""

    lattice: FourierLattice
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expected = (self.lattice.grid,) * self.lattice.dim
        if v.ndim != self.lattice.dim + 1 or v.shape[1:] != expected:
            raise ConfigError(
                f"grid values of shape {v.shape} inconsistent with lattice grid {expected}"
            )
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, lattice: FourierLattice, func):
        """Sample ``func(x)`` where ``x`` has shape ``(dim,) + grid shape``."""
        values = np.asarray(func(lattice.coordinates()), dtype=float)
        return cls(lattice, values)

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]


def forward_transform(f: PhysicalField) -> SpectralField:
    """Coefficients of the trigonometric interpolant, truncated to the lattice.

    The result satisfies ``u_{-k} = conj(u_k)`` exactly.
    """
    lat = f.lattice
    return SpectralField(lat, grid_to_cube(f.values, lat.n, lat.dim))


def inverse_transform(u: SpectralField, grid: int | None = None) -> PhysicalField:
    """Real grid samples of ``u``; raises DataError if ``u`` is not real."""
    lat = u.lattice
    scale = max(_scale(u.coeffs), 1e-300)
    defect = reality_defect(u.coeffs, lat.dim)
    if defect > REALITY_TOL * scale:
        raise DataError(f"coefficients violate u_-k = conj(u_k) (defect {defect:.3e})")
    N = grid or lat.grid
    values = cube_to_grid(u.coeffs, lat.n, N, lat.dim)
    target = lat if N == lat.grid else FourierLattice(lat.dim, lat.n, N)
    return PhysicalField(target, values)


def truncate(u: SpectralField, cutoff: int) -> SpectralField:
    """Zero every mode with ``|k|_inf > cutoff``."""
    if cutoff > u.n or cutoff < 0:
        raise ContractError(f"cutoff {cutoff} outside [0, {u.n}]")
    return u.with_coeffs(u.coeffs * u.lattice.mask(cutoff))


def _leray(coeffs: np.ndarray, lat: FourierLattice) -> np.ndarray:
    """Array-level Helmholtz projection; component axis is ``-(dim+1)``."""
    K = lat.wavevectors
    kdotc = np.sum(K * coeffs, axis=-(lat.dim + 1), keepdims=True)
    return coeffs - K * (kdotc / lat._k2_safe)


def leray_project(u: SpectralField) -> SpectralField:
    """Remove the component of each u_k along k; k = 0 passes through."""
    if u.ncomp != u.dim:
        raise ContractError("Leray projection needs a velocity field")
    return u.with_coeffs(_leray(u.coeffs, u.lattice), DIVERGENCE_FREE)


def galerkin_project(u: SpectralField, n: int | None = None) -> SpectralField:
    """``P_n = T_n o P_H``."""
    n = u.n if n is None else n
    return truncate(leray_project(u), n)


def differentiate(u: SpectralField, kind: str) -> SpectralField:
    """Exact spectral derivative.

    ``gradient`` returns ``ncomp * dim`` components ordered ``d_j u_i`` at
    ``i * dim + j``; ``divergence`` needs a velocity field and returns a scalar;
    ``laplacian`` keeps the component count.
    """
    K = u.lattice.wavevectors
    c = u.coeffs
    if kind == "gradient":
        out = (1j * K[None, :] * c[:, None]).reshape((-1,) + u.lattice.shape)
        return SpectralField(u.lattice, out)
    if kind == "divergence":
        if u.ncomp != u.dim:
            raise ContractError("divergence needs a velocity field")
        return SpectralField(u.lattice, np.sum(1j * K * c, axis=0)[None])
    if kind == "laplacian":
        return u.with_coeffs(-u.lattice.k2 * c)
    raise ContractError(f"unknown derivative kind {kind!r}")


def check_threshold(m: int, n: int) -> None:
    if not 0 <= m < n:
        raise ConfigError(f"viscosity threshold m={m} must satisfy 0 <= m < n={n}")


def spectral_viscosity_term(u: SpectralField, eps: float, m: int, n: int | None = None):
    """``eps div(Q_n grad u)``: multiplier ``-eps |k|^2`` on ``m < |k|_inf <= n``."""
    n = u.n if n is None else n
    check_threshold(m, n)
    if eps < 0:
        raise ConfigError(f"eps must be >= 0, got {eps}")
    return u.with_coeffs(-eps * u.lattice.k2 * u.lattice.band(m, n) * u.coeffs)


def upper_gradient_norm2(u: SpectralField, m: int, n: int | None = None) -> float:
    """``||Q_n grad u||^2 = vol * sum_{m<|k|<=n} |k|^2 |u_k|^2``."""
    n = u.n if n is None else n
    lat = u.lattice
    w = lat.k2 * lat.band(m, n)
    return float(lat.volume * np.sum(w * np.abs(u.coeffs) ** 2))


def _require_solenoidal(u: SpectralField) -> None:
    if u.ncomp != u.dim:
        raise ContractError("convective term needs a velocity field")
    if not u.is_divergence_free():
        raise ContractError(
            f"convective term requires a divergence-free field "
            f"(max |k.u_k| = {u.max_divergence_defect():.3e})"
        )


def _exact_products(c: np.ndarray, n: int, dim: int, out_n: int) -> dict:
    """Exact (alias-free) coefficients of u_i u_j on ``|k|_inf <= out_n``."""
    lo, hi = 2 * n - out_n, 2 * n + out_n + 1
    sl = (Ellipsis,) + (slice(lo, hi),) * dim
    axes = _spatial_axes(dim)
    comp = [c[_component(i, dim)] for i in range(dim)]
    return {
        (i, j): fftconvolve(comp[i], comp[j], axes=axes)[sl]
        for i in range(dim)
        for j in range(i, dim)
    }


def _pseudo_products(c: np.ndarray, n: int, dim: int, N: int) -> dict:
    """u_i u_j on modes ``|k|_inf <= n`` via a grid of N >= 3n+1 points."""
    grid = cube_to_grid(c, n, N, dim)
    pairs = [(i, j) for i in range(dim) for j in range(i, dim)]
    g = [grid[_component(i, dim)] for i in range(dim)]
    prods = np.stack([g[i] * g[j] for i, j in pairs], axis=-(dim + 1))
    F = grid_to_cube(prods, n, dim)
    return {pair: F[_component(p, dim)] for p, pair in enumerate(pairs)}


def _divergence_of_products(prods: dict, lat: FourierLattice) -> np.ndarray:
    K = lat.wavevectors
    d = lat.dim
    rows = []
    for i in range(d):
        acc = 0
        for j in range(d):
            acc = acc + K[j] * prods[(min(i, j), max(i, j))]
        rows.append(1j * acc)
    return np.stack(rows, axis=-(d + 1))


def convective_coeffs(c: np.ndarray, lat: FourierLattice, method: str) -> np.ndarray:
    """Array-level ``P_n div(u (x) u)``; the caller guarantees solenoidal input.

    ``c`` may carry leading batch axes in front of the component axis.
    """
    if method == "dealiased_pseudospectral":
        prods = _pseudo_products(c, lat.n, lat.dim, lat.dealias_grid)
    elif method == "exact_convolution":
        prods = _exact_products(c, lat.n, lat.dim, lat.n)
    else:
        raise ContractError(f"unknown convection method {method!r}")
    B = _leray(_divergence_of_products(prods, lat), lat)
    B[(Ellipsis,) + (lat.n,) * lat.dim] = 0
    return B


def convective_term(u: SpectralField, method: str = "dealiased_pseudospectral"):
    """``P_n(u . grad u)`` for a divergence-free u.

    Uses ``u . grad u = div(u (x) u)``, valid for solenoidal u.  Both methods
    are alias-free: ``exact_convolution`` convolves coefficient cubes directly,
    the pseudo-spectral path multiplies on a grid of at least 3n+1 points.
    """
    _require_solenoidal(u)
    return SpectralField(u.lattice, convective_coeffs(u.coeffs, u.lattice, method), DIVERGENCE_FREE)


def zero_pad_embed(u: SpectralField, n_target: int, grid: int = 0) -> SpectralField:
    """Same coefficients on the larger lattice ``|k|_inf <= n_target``."""
    if n_target < u.n:
        raise ContractError(f"cannot embed cutoff {u.n} into smaller cutoff {n_target}")
    pad = n_target - u.n
    c = np.pad(u.coeffs, [(0, 0)] + [(pad, pad)] * u.dim)
    return SpectralField(FourierLattice(u.dim, n_target, grid), c, u.tag)


def restrict(u: SpectralField, n_target: int) -> SpectralField:
    """Drop modes above ``n_target`` and shrink the lattice accordingly."""
    if n_target > u.n:
        raise ContractError(f"cannot restrict cutoff {u.n} to larger {n_target}")
    cut = u.n - n_target
    sl = (slice(None),) + (slice(cut, u.lattice.width - cut),) * u.dim
    return SpectralField(FourierLattice(u.dim, n_target), u.coeffs[sl].copy(), u.tag)


def to_cutoff(u: SpectralField, n_target: int) -> SpectralField:
    """Embed or restrict, whichever reaches ``n_target``."""
    if n_target >= u.n:
        return zero_pad_embed(u, n_target)
    return restrict(u, n_target)


def inner(u: SpectralField, v: SpectralField) -> float:
    """L2(T^d) inner product (real part; exact for real fields)."""
    if not u.lattice.same_modes(v.lattice):
        n = max(u.n, v.n)
        u, v = to_cutoff(u, n), to_cutoff(v, n)
    return float(u.lattice.volume * np.real(np.vdot(v.coeffs, u.coeffs)))


def l2_norm(u: SpectralField) -> float:
    return float(np.sqrt(u.lattice.volume * np.sum(np.abs(u.coeffs) ** 2)))


def sobolev_norm(u: SpectralField, s: float) -> float:
    """``(vol * sum_k (1+|k|^2)^s |u_k|^2)^(1/2)``."""
    w = (1.0 + u.lattice.k2) ** s
    return float(np.sqrt(u.lattice.volume * np.sum(w * np.abs(u.coeffs) ** 2)))


def evaluate_at(u: SpectralField, points) -> np.ndarray:
    """Exact trigonometric evaluation at arbitrary points, shape ``(P, ncomp)``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != u.dim:
        raise ContractError(f"points must have {u.dim} coordinates")
    ks = u.lattice.axis_wavenumbers
    phases = [np.exp(1j * np.outer(pts[:, a], ks)) for a in range(u.dim)]
    if u.dim == 2:
        vals = np.einsum("cab,pa,pb->pc", u.coeffs, phases[0], phases[1])
    else:
        vals = np.einsum("cabd,pa,pb,pd->pc", u.coeffs, phases[0], phases[1], phases[2])
    return vals.real
