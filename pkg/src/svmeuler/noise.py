"""Truncated cylindrical Wiener process and multiplicative noise coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import lattice as lt
from .errors import ConfigError, ContractError
from .lattice import DIVERGENCE_FREE, PhysicalField, SpectralField

FAMILIES = ("zero", "linear", "saturated_linear", "additive_modes")

_TWO_POW_53 = 2.0**-53


# ---------------------------------------------------------------------------
# Brownian increments
# ---------------------------------------------------------------------------


def _mode_key(seed: int, k: int) -> np.ndarray:
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(k)]).generate_state(2, np.uint64)


def _box_muller(raw: np.ndarray) -> np.ndarray:
    """Standard normals from interleaved uint64 pairs (first draws the radius)."""
    u1 = ((raw[0::2] >> np.uint64(11)).astype(float) + 1.0) * _TWO_POW_53
    u2 = (raw[1::2] >> np.uint64(11)).astype(float) * _TWO_POW_53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def standard_normal_at(seed: int, k: int, j: int) -> float:
    """The j-th standard normal of mode k, computed without generating 0..j-1.

    Philox is counter based: block c yields raw words 4c..4c+3, and normal j
    consumes words 2j and 2j+1.
    """
    gen = np.random.Philox(key=_mode_key(seed, k), counter=[j // 2, 0, 0, 0])
    raw = gen.random_raw(4)
    off = 2 * (j % 2)
    return float(_box_muller(raw[off : off + 2])[0])


def step_count(T: float, dt: float) -> int:
    """Number of steps of size dt covering [0, T] (tolerant to round-off)."""
    return int(math.ceil(round(T / dt, 9)))


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Table of Brownian increments, ``increments[j, k-1] ~ N(0, dt_base)``."""

    seed: int
    K: int
    dt_base: float
    increments: np.ndarray

    @property
    def steps(self) -> int:
        return self.increments.shape[0]

    @property
    def horizon(self) -> float:
        return self.steps * self.dt_base

    def coarsen(self, factor: int) -> "WienerPath":
        """Sum blocks of ``factor`` consecutive increments, left to right."""
        factor = int(factor)
        if factor < 1 or self.steps % factor:
            raise ContractError(f"cannot coarsen {self.steps} steps by factor {factor}")
        blocks = self.increments.reshape(self.steps // factor, factor, self.K)
        acc = blocks[:, 0].copy()
        for s in range(1, factor):
            acc = acc + blocks[:, s]
        return WienerPath(self.seed, self.K, self.dt_base * factor, acc)

    def for_step(self, dt: float) -> "WienerPath":
        """The path seen by a run with time step ``dt`` (an integer multiple of dt_base)."""
        ratio = dt / self.dt_base
        factor = int(round(ratio))
        if factor < 1 or abs(ratio - factor) > 1e-9 * max(1.0, ratio):
            raise ContractError(f"dt={dt} is not a multiple of the base step {self.dt_base}")
        return self if factor == 1 else self.coarsen(factor)

    def increment(self, step: int) -> np.ndarray:
        if not 0 <= step < self.steps:
            raise ContractError(f"step {step} outside path of {self.steps} steps")
        return self.increments[step]

    def brownian_motion(self) -> np.ndarray:
        """Cumulative values W_k(t_j), shape ``(steps + 1, K)`` starting at 0."""
        return np.vstack([np.zeros((1, self.K)), np.cumsum(self.increments, axis=0)])


def sample_path(seed: int, K: int, dt_base: float, T: float) -> WienerPath:
    """Reproducible increments for modes 1..K over ``ceil(T/dt_base)`` steps."""
    if dt_base <= 0 or T <= 0:
        raise ConfigError(f"need dt_base > 0 and T > 0 (got {dt_base}, {T})")
    J = step_count(T, dt_base)
    table = np.empty((J, K))
    scale = math.sqrt(dt_base)
    for k in range(1, K + 1):
        raw = np.random.Philox(key=_mode_key(seed, k)).random_raw(2 * J)
        table[:, k - 1] = scale * _box_muller(raw)
    return WienerPath(int(seed), int(K), float(dt_base), table)


def derive_seed(master: int, index: int) -> int:
    """Independent 64-bit seed for ensemble member ``index``."""
    state = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index), 0x5EED])
    return int(state.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Noise coefficients
# ---------------------------------------------------------------------------


def _default_additive_modes(dim: int, K: int):
    """Solenoidal cosine modes g_k(x) = e_k cos(q_k . x) with unit e_k."""
    if dim == 2:
        qs = [(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2), (2, 1), (1, 2), (2, -1), (1, -2)]
    else:
        qs = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, -1, 0), (1, 0, -1)]
    modes = []
    for i in range(K):
        q = np.array(qs[i % len(qs)], dtype=float) * (1 + i // len(qs))
        if dim == 2:
            e = np.array([-q[1], q[0]])
        else:
            ref = np.array([0.0, 0.0, 1.0]) if abs(q[2]) < abs(q).max() else np.array([1.0, 0.0, 0.0])
            e = np.cross(q, ref)
        modes.append((tuple(int(v) for v in q), tuple(e / np.linalg.norm(e))))
    return tuple(modes)


@dataclass(frozen=True)
class NoiseModel:
    """Family of coefficients sigma_k, k = 1..K.

    linear            sigma_k(u) = alpha_k u
    saturated_linear  sigma_k(u) = alpha_k u / sqrt(1 + |u|^2)
    additive_modes    sigma_k(u)(x) = alpha_k e_k cos(q_k . x), unit e_k
    zero              sigma_k = 0

    ``D0``/``D1`` default to the closed-form growth and Lipschitz constants of
    the family.  ``modes`` lists ``(q_k, e_k)`` for the additive family.
    """

    family: str = "zero"
    alphas: tuple = ()
    D0: float | None = None
    D1: float | None = None
    modes: tuple = field(default=())

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}; choose from {FAMILIES}")
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        s = self.alpha_square_sum
        d0, d1 = {
            "zero": (0.0, 0.0),
            "linear": (s, s),
            "saturated_linear": (s, s),
            "additive_modes": (s, 0.0),
        }[self.family]
        if self.D0 is None:
            object.__setattr__(self, "D0", d0)
        if self.D1 is None:
            object.__setattr__(self, "D1", d1)
        if self.family == "additive_modes" and self.modes:
            if len(self.modes) != self.K:
                raise ConfigError(f"additive_modes needs {self.K} modes, got {len(self.modes)}")
            norm = []
            for q, e in self.modes:
                e = np.asarray(e, dtype=float)
                norm.append((tuple(int(v) for v in q), tuple(e / np.linalg.norm(e))))
            object.__setattr__(self, "modes", tuple(norm))

    @classmethod
    def from_law(cls, family: str, K: int = 8, amplitude: float = 0.1, decay: float = 2.0, **kw):
        """alpha_k = amplitude * k^(-decay)."""
        alphas = tuple(amplitude * k ** (-decay) for k in range(1, K + 1))
        return cls(family, alphas, **kw)

    @property
    def K(self) -> int:
        return len(self.alphas)

    @property
    def alpha_square_sum(self) -> float:
        return float(sum(a * a for a in self.alphas))

    @property
    def is_zero(self) -> bool:
        return self.family == "zero" or not any(self.alphas)

    def additive_modes(self, dim: int):
        return self.modes or _default_additive_modes(dim, self.K)

    # pointwise maps ------------------------------------------------------

    def sigma(self, k: int, values: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
        """sigma_k applied pointwise; ``values`` has the component axis first."""
        if not 1 <= k <= self.K:
            raise IndexError(f"noise mode {k} outside 1..{self.K}")
        a = self.alphas[k - 1]
        if self.family == "zero":
            return np.zeros_like(values)
        if self.family == "linear":
            return a * values
        if self.family == "saturated_linear":
            return a * values / np.sqrt(1.0 + np.sum(values**2, axis=0))
        dim = values.shape[0]
        q, e = self.additive_modes(dim)[k - 1]
        if x is None:
            raise ContractError("additive_modes needs the physical coordinates")
        phase = np.tensordot(np.asarray(q, dtype=float), x, axes=1)
        out = np.asarray(e, dtype=float).reshape((dim,) + (1,) * phase.ndim) * np.cos(phase)
        return a * np.broadcast_to(out, values.shape).copy()


def evaluate_sigma(model: NoiseModel, u: PhysicalField, k: int) -> PhysicalField:
    """Pointwise sigma_k(u) on the grid of ``u`` (k is 1-based)."""
    x = u.lattice.coordinates() if model.family == "additive_modes" else None
    return PhysicalField(u.lattice, model.sigma(k, u.values, x))


def _mode_sum(terms):
    """Sum over noise modes left to right.

    Accepts an array (summed over its last axis) or an iterable of arrays.
    BLAS products would pick a summation order that depends on the batch
    shape; a fixed order keeps every member independent of its batch.
    """
    if isinstance(terms, np.ndarray):
        arr = terms
        terms = (arr[..., k] for k in range(arr.shape[-1]))
    acc = None
    for t in terms:
        acc = t if acc is None else acc + t
    return acc


class NoiseOperator:
    """Noise model bound to a lattice: projected increments and Ito rates.

    All array methods accept coefficient arrays with optional leading batch
    axes, ``(..., dim) + cube``.
    """

    def __init__(self, model: NoiseModel, lat: lt.FourierLattice):
        self.model = model
        self.lat = lat
        self.dim = lat.dim
        self.alphas = np.asarray(model.alphas, dtype=float)
        self._additive = None
        if model.family == "additive_modes" and model.K:
            self._additive = self._project_additive()

    def _project_additive(self) -> np.ndarray:
        x = self.lat.coordinates()
        vals = []
        for q, e in self.model.additive_modes(self.dim):
            phase = np.tensordot(np.asarray(q, dtype=float), x, axes=1)
            vals.append(np.asarray(e).reshape((self.dim,) + (1,) * self.dim) * np.cos(phase))
        return self._projected(np.stack(vals))  # (K, dim) + cube, P_n g_k

    def _projected(self, grid_vals: np.ndarray) -> np.ndarray:
        c = lt.grid_to_cube(grid_vals, self.lat.n, self.dim)
        c = lt._leray(c, self.lat)
        c[(Ellipsis,) + (self.lat.n,) * self.dim] = 0
        return c

    def _saturated_shape(self, c: np.ndarray) -> np.ndarray:
        """P_n of u/sqrt(1+|u|^2) computed on the lattice grid."""
        grid = lt.cube_to_grid(c, self.lat.n, self.lat.grid, self.dim)
        norm2 = np.sum(grid**2, axis=-(self.dim + 1), keepdims=True)
        return self._projected(grid / np.sqrt(1.0 + norm2))

    def increment(self, c: np.ndarray, dW: np.ndarray, fast: bool = True) -> np.ndarray:
        """sum_k P_n F[sigma_k(u)] dW_k.

        ``dW`` has shape ``(..., K)`` matching the batch axes of ``c``.
        ``fast`` uses the spectral identity P_n(alpha u) = alpha P_n u for
        the linear family instead of a grid round trip.
        """
        fam = self.model.family
        if self.model.is_zero:
            return np.zeros_like(c)
        weight = _mode_sum(np.asarray(dW, dtype=float) * self.alphas)
        wshape = weight.shape + (1,) * (self.dim + 1)
        weight = weight.reshape(wshape)
        if fam == "linear":
            if fast:
                proj = lt._leray(c, self.lat) * self.lat.mask(self.lat.n)
            else:
                grid = lt.cube_to_grid(c, self.lat.n, self.lat.grid, self.dim)
                proj = self._projected(grid)
            proj[(Ellipsis,) + (self.lat.n,) * self.dim] = 0
            return weight * proj
        if fam == "saturated_linear":
            return weight * self._saturated_shape(c)
        # additive: sum_k alpha_k dW_k P_n g_k
        coef = np.asarray(dW, dtype=float) * self.alphas
        expand = (Ellipsis,) + (None,) * (self.dim + 1)
        out = _mode_sum(coef[..., k][expand] * self._additive[k] for k in range(self.model.K))
        return np.broadcast_to(out, c.shape).copy()

    def ito_rate(self, c: np.ndarray, fast: bool = True) -> np.ndarray:
        """sum_k ||P_n sigma_k(u)||^2 per batch member."""
        axes = tuple(range(-(self.dim + 1), 0))
        vol = self.lat.volume
        s = self.model.alpha_square_sum
        batch = c.shape[: c.ndim - self.dim - 1]
        fam = self.model.family
        if self.model.is_zero:
            return np.zeros(batch)
        if fam == "linear":
            if fast:
                proj = lt._leray(c, self.lat)
            else:
                proj = self._projected(lt.cube_to_grid(c, self.lat.n, self.lat.grid, self.dim))
            proj[(Ellipsis,) + (self.lat.n,) * self.dim] = 0
            return s * vol * np.sum(np.abs(proj) ** 2, axis=axes)
        if fam == "saturated_linear":
            return s * vol * np.sum(np.abs(self._saturated_shape(c)) ** 2, axis=axes)
        per_mode = vol * np.sum(np.abs(self._additive) ** 2, axis=axes)
        return np.full(batch, float(np.sum(self.alphas**2 * per_mode)))


def projected_noise_increment(model: NoiseModel, u: SpectralField, path: WienerPath, step: int,
                              n: int | None = None) -> SpectralField:
    """sum_k P_n F[sigma_k(u)] dW_k(step), evaluated through the grid."""
    n = u.n if n is None else n
    if n != u.n:
        u = lt.to_cutoff(u, n)
    if path.K != model.K:
        raise ContractError(f"path has {path.K} modes, model has {model.K}")
    op = NoiseOperator(model, u.lattice)
    return SpectralField(u.lattice, op.increment(u.coeffs, path.increment(step), fast=False),
                         DIVERGENCE_FREE)


def ito_energy_rate(model: NoiseModel, u: SpectralField, n: int | None = None) -> float:
    """sum_k ||P_n sigma_k(u)||^2_{L2}, evaluated through the grid."""
    n = u.n if n is None else n
    if n != u.n:
        u = lt.to_cutoff(u, n)
    return float(NoiseOperator(model, u.lattice).ito_rate(u.coeffs, fast=False))


@dataclass
class NoiseContractReport:
    D0_hat: float
    D1_hat: float
    D0: float
    D1: float
    passed: bool

    def as_dict(self):
        return {"D0_hat": self.D0_hat, "D1_hat": self.D1_hat, "D0": self.D0, "D1": self.D1,
                "pass": self.passed}


def verify_noise_contract(model: NoiseModel, sample_count: int = 1000, dim: int = 3,
                          seed: int = 0) -> NoiseContractReport:
    """Empirical growth and Lipschitz constants over random clouds.

    Radii are log-uniform over 1e-4..1e8 so both the small-|u| and the
    asymptotic regimes are probed.
    """
    if sample_count < 100:
        raise ConfigError("sample_count must be >= 100")
    rng = np.random.default_rng(seed)

    def cloud(size):
        d = rng.normal(size=(dim, size))
        d /= np.linalg.norm(d, axis=0)
        return d * 10.0 ** rng.uniform(-4, 8, size=size)

    u, v = cloud(sample_count), cloud(sample_count)
    x = rng.uniform(0, 2 * np.pi, size=(dim, sample_count))
    su = [model.sigma(k, u, x) for k in range(1, model.K + 1)]
    sv = [model.sigma(k, v, x) for k in range(1, model.K + 1)]
    growth = sum(np.sum(s**2, axis=0) for s in su) if su else np.zeros(sample_count)
    lip = sum(np.sum((a - b) ** 2, axis=0) for a, b in zip(su, sv)) if su else np.zeros(sample_count)
    d0_hat = float(np.max(growth / (1.0 + np.sum(u**2, axis=0))))
    d1_hat = float(np.max(lip / np.sum((u - v) ** 2, axis=0)))
    passed = d0_hat <= model.D0 * (1 + 1e-12) and d1_hat <= model.D1 * (1 + 1e-12)
    return NoiseContractReport(d0_hat, d1_hat, float(model.D0), float(model.D1), bool(passed))
