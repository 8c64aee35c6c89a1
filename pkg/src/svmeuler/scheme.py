"""Time integration of the spectral vanishing viscosity scheme.

The state is the Galerkin velocity u_n on ``|k|_inf <= n`` and each step
advances

    du = [-P_n(u . grad u) + eps div(Q_n grad u)] dt + sum_k P_n sigma_k(u) dW_k

with one of three integrators.  Everything below works on coefficient arrays
with a leading batch axis so that ensembles reuse the single-run code path;
a single run is a batch of one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import io as sio
from . import lattice as lt
from . import presets
from .errors import ConfigError, ContractError, DataError, NumericalAbort
from .lattice import DIVERGENCE_FREE, FourierLattice, SpectralField
from .noise import NoiseModel, NoiseOperator, WienerPath, sample_path, step_count

log = logging.getLogger("svmeuler")

INTEGRATORS = ("euler_maruyama", "semi_implicit_em", "deterministic_midpoint")
CONVECTION_METHODS = ("dealiased_pseudospectral", "exact_convolution")
LEDGER_COLUMNS = ("t", "E", "viscous_cum", "ito_cum", "martingale_cum", "residual")

MIDPOINT_TOL = 1e-12
MIDPOINT_MAX_ITER = 100


def default_threshold(n: int) -> int:
    """m = ceil(sqrt(n)), kept strictly below n."""
    return max(0, min(math.ceil(math.sqrt(n)), n - 1))


def viscosity_law(n: int, coefficient: float = 1.0, exponent: float = 1.0) -> float:
    """eps(n) = coefficient * n^(-exponent)."""
    return coefficient * float(n) ** (-exponent)


@dataclass(frozen=True)
class SchemeConfig:
    """Discretisation parameters of one run.

    ``m`` and ``eps`` left as None follow the default laws
    (``ceil(sqrt(n))`` and ``eps_law``, itself defaulting to ``(1, 1)``,
    i.e. eps = 1/n); this keeps ladders consistent when only ``n`` changes.
    """

    n: int = 16
    dim: int = 2
    m: int | None = None
    eps: float | None = None
    eps_law: tuple | None = None
    dt: float = 0.01
    T: float = 1.0
    integrator: str = "euler_maruyama"
    noise: NoiseModel = field(default_factory=NoiseModel)
    convection: str = "dealiased_pseudospectral"
    grid: int = 0

    def __post_init__(self):
        problems = []
        if self.dim not in (2, 3):
            problems.append(f"dim must be 2 or 3, got {self.dim}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            problems.append(f"cutoff n must be a positive integer, got {self.n}")
        elif self.m is not None and not 0 <= self.m < self.n:
            problems.append(f"viscosity threshold m={self.m} must satisfy 0 <= m < n={self.n}")
        if self.eps is not None and self.eps < 0:
            problems.append(f"eps must be >= 0, got {self.eps}")
        if self.eps_law is not None:
            if len(self.eps_law) != 2 or self.eps_law[0] < 0:
                problems.append(f"eps_law must be (coefficient >= 0, exponent), got {self.eps_law}")
            elif self.eps is not None:
                problems.append("give either eps or eps_law, not both")
        if not self.dt > 0:
            problems.append(f"dt must be > 0, got {self.dt}")
        if not self.T >= 0:
            problems.append(f"T must be >= 0, got {self.T}")
        elif self.dt > 0 and self.T > 0:
            ratio = self.T / self.dt
            if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
                problems.append(f"T={self.T} is not a multiple of dt={self.dt}")
        if self.integrator not in INTEGRATORS:
            problems.append(f"integrator must be one of {INTEGRATORS}, got {self.integrator!r}")
        elif self.integrator == "deterministic_midpoint" and not self.noise.is_zero:
            problems.append("deterministic_midpoint requires the zero noise family")
        if self.convection not in CONVECTION_METHODS:
            problems.append(f"convection must be one of {CONVECTION_METHODS}, got {self.convection!r}")
        if self.grid and isinstance(self.n, (int, np.integer)) and self.grid < 2 * self.n + 2:
            problems.append(f"grid {self.grid} too small for cutoff {self.n}")
        if problems:
            raise ConfigError(problems)

    @property
    def threshold(self) -> int:
        return default_threshold(self.n) if self.m is None else int(self.m)

    @property
    def viscosity(self) -> float:
        if self.eps is not None:
            return float(self.eps)
        return viscosity_law(self.n, *(self.eps_law or (1.0, 1.0)))

    @property
    def steps(self) -> int:
        return step_count(self.T, self.dt) if self.T > 0 else 0

    @property
    def lattice(self) -> FourierLattice:
        return FourierLattice(self.dim, self.n, self.grid)

    def replace(self, **changes) -> "SchemeConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["noise"] = {
            "family": self.noise.family,
            "alphas": list(self.noise.alphas),
            "D0": self.noise.D0,
            "D1": self.noise.D1,
            "modes": [[list(q), list(e)] for q, e in self.noise.modes],
        }
        d["eps_law"] = list(self.eps_law) if self.eps_law is not None else None
        return d


@dataclass(frozen=True)
class SolverState:
    time: float
    u: SpectralField
    step_index: int = 0


def initial_state(u0_spec, cfg: SchemeConfig) -> SolverState:
    """``u_n(0) = P_n T_n u0`` for a preset spec, snapshot or field."""
    u0 = presets.build(u0_spec, cfg.dim)
    return SolverState(0.0, presets.discretize(u0, cfg.lattice), 0)


# ---------------------------------------------------------------------------
# Array-level stepping
# ---------------------------------------------------------------------------


class Stepper:
    """One time step of a batch ``(B, dim) + cube`` together with the ledger
    increments (viscous dissipation, Ito correction, martingale)."""

    def __init__(self, cfg: SchemeConfig):
        self.cfg = cfg
        self.lat = cfg.lattice
        self.dim = cfg.dim
        self.dt = float(cfg.dt)
        eps, m = cfg.viscosity, cfg.threshold
        # spectral multiplier of eps div(Q_n grad u)
        self.visc = -eps * self.lat.k2 * self.lat.band(m, cfg.n)
        self.implicit = 1.0 / (1.0 - self.dt * self.visc)
        self.noise = NoiseOperator(cfg.noise, self.lat)
        self._axes = tuple(range(1, self.dim + 2))
        self._zero = (Ellipsis,) + (cfg.n,) * self.dim

    def drift(self, c: np.ndarray) -> np.ndarray:
        return -lt.convective_coeffs(c, self.lat, self.cfg.convection) + self.visc * c

    def energy(self, c: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return 0.5 * self.lat.volume * np.sum(np.abs(c) ** 2, axis=self._axes)

    def dissipation(self, c: np.ndarray) -> np.ndarray:
        """``eps ||Q_n grad u||^2`` per member."""
        return self.lat.volume * np.sum(-self.visc * np.abs(c) ** 2, axis=self._axes)

    def _pairing(self, c: np.ndarray, d: np.ndarray) -> np.ndarray:
        return self.lat.volume * np.real(np.sum(np.conj(c) * d, axis=self._axes))

    def step(self, c: np.ndarray, dW: np.ndarray):
        """Advance every member one step; returns ``(c_new, increments)``.

        ``increments`` maps ledger column names to per-member arrays.
        """
        integ = self.cfg.integrator
        dt = self.dt
        if integ == "deterministic_midpoint":
            new, mid = self._midpoint(c)
            inc = {"viscous": dt * self.dissipation(mid)}
            zero = np.zeros(c.shape[0])
            inc["ito"], inc["martingale"] = zero, zero.copy()
            return new, inc
        noise = self.noise.increment(c, dW)
        if integ == "euler_maruyama":
            new = c + dt * self.drift(c) + noise
        else:
            explicit = -lt.convective_coeffs(c, self.lat, self.cfg.convection)
            new = (c + dt * explicit + noise) * self.implicit
        new[self._zero] = 0
        inc = {
            "viscous": dt * self.dissipation(c),
            "ito": dt * self.noise.ito_rate(c),
            "martingale": self._pairing(c, noise),
        }
        return new, inc

    def _midpoint(self, c: np.ndarray):
        """Solve v = c + dt drift((c+v)/2) by fixed-point iteration.

        Each member iterates until its update is below MIDPOINT_TOL relative
        to its size and then keeps going while the update still shrinks, so
        the result sits at round-off.  Finished members are frozen.
        """
        dt = self.dt
        v = c + dt * self.drift(c)
        B = c.shape[0]
        active = np.arange(B)
        last = np.full(B, np.inf)
        reached = np.zeros(B, dtype=bool)
        for _ in range(MIDPOINT_MAX_ITER):
            ca, va = c[active], v[active]
            new = ca + dt * self.drift(0.5 * (ca + va))
            change = np.max(np.abs(new - va), axis=self._axes)
            scale = np.maximum(np.max(np.abs(new), axis=self._axes), np.finfo(float).tiny)
            v[active] = new
            seen = reached[active]
            done = (change == 0) | (seen & (change >= last[active]))
            reached[active] = seen | (change <= MIDPOINT_TOL * scale)
            last[active] = change
            active = active[~done]
            if active.size == 0:
                break
        else:
            if not np.all(reached):
                raise NumericalAbort(
                    f"midpoint iteration did not converge in {MIDPOINT_MAX_ITER} iterations"
                )
        v[self._zero] = 0
        return v, 0.5 * (c + v)


# ---------------------------------------------------------------------------
# Observers
# ---------------------------------------------------------------------------


class Observer:
    """Hook called after the initial state and after every step."""

    stride = 1

    def wants(self, step: int) -> bool:
        return step % self.stride == 0

    def observe(self, step: int, time: float, coeffs: np.ndarray, ledger: dict) -> None:
        pass

    def get_state(self) -> dict:
        return {}

    def set_state(self, state: dict) -> None:
        pass


class EnergyLedger(Observer):
    """Per-member rows (t, E, viscous_cum, ito_cum, martingale_cum, residual).

    ``residual = E + viscous_cum - E(0) - martingale_cum - ito_cum / 2`` is
    the defect of the Ito energy balance; it vanishes for exact dynamics.
    """

    def __init__(self, stride: int = 1):
        self.stride = max(1, int(stride))
        self._rows: list = []

    def observe(self, step, time, coeffs, ledger):
        self._rows.append(np.stack([np.full_like(ledger["E"], time)] + [ledger[c] for c in LEDGER_COLUMNS[1:]], axis=-1))

    def table(self, member: int = 0) -> np.ndarray:
        """Rows for one member, shape ``(R, 6)``."""
        if not self._rows:
            return np.empty((0, len(LEDGER_COLUMNS)))
        return np.array([r[member] for r in self._rows])

    def column(self, name: str, member: int = 0) -> np.ndarray:
        return self.table(member)[:, LEDGER_COLUMNS.index(name)]

    def get_state(self):
        return {"rows": np.array(self._rows)}

    def set_state(self, state):
        self._rows = list(state["rows"])


class TrajectoryRecorder(Observer):
    """Copies of the coefficient arrays at a step stride."""

    def __init__(self, stride: int = 1):
        self.stride = max(1, int(stride))
        self.steps: list = []
        self.times: list = []
        self.coeffs: list = []

    def observe(self, step, time, coeffs, ledger):
        self.steps.append(step)
        self.times.append(time)
        self.coeffs.append(coeffs.copy())

    def fields(self, lattice: FourierLattice, member: int = 0) -> list:
        return [SpectralField(lattice, c[member], DIVERGENCE_FREE) for c in self.coeffs]

    def at_step(self, step: int) -> np.ndarray:
        return self.coeffs[self.steps.index(step)]

    def get_state(self):
        return {"steps": np.array(self.steps), "times": np.array(self.times), "coeffs": np.array(self.coeffs)}

    def set_state(self, state):
        self.steps = [int(s) for s in state["steps"]]
        self.times = [float(t) for t in state["times"]]
        self.coeffs = list(state["coeffs"])


class ProbeSampler(Observer):
    """Exact point values ``u(t, x)`` at configured probes.

    ``probes`` is a list of ``(t, x)``; each t must be a multiple of dt.
    """

    def __init__(self, probes, dt: float, lattice: FourierLattice):
        self.lattice = lattice
        self.probes = [(float(t), np.asarray(x, dtype=float)) for t, x in probes]
        self.by_step: dict = {}
        for i, (t, x) in enumerate(self.probes):
            s = round(t / dt)
            if abs(s * dt - t) > 1e-9 * max(1.0, t) or x.shape != (lattice.dim,):
                raise ConfigError(f"probe {i} at t={t} is not on the step grid or has wrong dimension")
            self.by_step.setdefault(s, []).append(i)
        self.samples: dict = {}

    def wants(self, step):
        return step in self.by_step

    def observe(self, step, time, coeffs, ledger):
        idx = self.by_step[step]
        pts = np.array([self.probes[i][1] for i in idx])
        for b in range(coeffs.shape[0]):
            vals = lt.evaluate_at(SpectralField(self.lattice, coeffs[b]), pts)
            for j, i in enumerate(idx):
                self.samples.setdefault(i, []).append(vals[j])

    def values(self, probe: int) -> np.ndarray:
        """Samples at probe ``probe``, shape ``(members, dim)``."""
        return np.array(self.samples.get(probe, []))

    def get_state(self):
        return {f"p{i}": np.array(v) for i, v in self.samples.items()}

    def set_state(self, state):
        self.samples = {int(k[1:]): list(v) for k, v in state.items()}


class SnapshotWriter(Observer):
    """Binary snapshots ``snap_<step>.svmf`` (``m<member>_`` prefix for batches)."""

    def __init__(self, directory, stride: int = 1, lattice: FourierLattice | None = None):
        self.directory = directory
        self.stride = max(1, int(stride))
        self.lattice = lattice

    def observe(self, step, time, coeffs, ledger):
        os.makedirs(self.directory, exist_ok=True)
        for b in range(coeffs.shape[0]):
            prefix = "" if coeffs.shape[0] == 1 else f"m{b:04d}_"
            path = os.path.join(self.directory, f"{prefix}snap_{step:06d}.svmf")
            sio.write_snapshot(SpectralField(self.lattice, coeffs[b], DIVERGENCE_FREE), path, time)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def _ledger_view(E0, E, cum) -> dict:
    return {
        "E": E,
        "viscous_cum": cum["viscous"].copy(),
        "ito_cum": cum["ito"].copy(),
        "martingale_cum": cum["martingale"].copy(),
        "residual": E + cum["viscous"] - E0 - cum["martingale"] - 0.5 * cum["ito"],
    }


def config_hash(cfg: SchemeConfig, extra: dict | None = None) -> str:
    """sha256 of the canonical JSON form of everything that shapes a run."""
    payload = {"scheme": cfg.to_dict(), "extra": extra or {}}
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


class Simulation:
    """Batched run of the scheme with observers and checkpointing.

    Parameters
    ----------
    cfg : SchemeConfig
    coeffs : ndarray
        Initial coefficients, shape ``(B, dim) + cube``.
    paths : list of WienerPath or None
        One path per member (any base step dividing ``cfg.dt``).
    observers : sequence of Observer
    on_failure : {"raise", "exclude"}
        What to do with members whose coefficients stop being finite.
    identity : dict, optional
        Extra data folded into the checkpoint hash (seed, initial data, ...).
    """

    def __init__(self, cfg: SchemeConfig, coeffs, paths=None, observers=(), on_failure="raise",
                 identity=None):
        self.cfg = cfg
        self.stepper = Stepper(cfg)
        self.c = np.array(coeffs, dtype=complex)
        if self.c.ndim != cfg.dim + 2 or self.c.shape[1:] != (cfg.dim,) + cfg.lattice.shape:
            raise ContractError(f"initial coefficients have shape {self.c.shape}")
        B = self.c.shape[0]
        K = cfg.noise.K
        if cfg.noise.is_zero:
            self.dW = None
        else:
            if paths is None or len(paths) != B:
                raise ContractError("a noisy run needs one Wiener path per member")
            tables = []
            for p in paths:
                if p.K != K:
                    raise ContractError(f"path has {p.K} modes, noise model has {K}")
                q = p.for_step(cfg.dt)
                if q.steps < cfg.steps:
                    raise ContractError(f"path covers {q.steps} steps, run needs {cfg.steps}")
                tables.append(q.increments[: cfg.steps])
            self.dW = np.stack(tables, axis=1) if tables else None  # (steps, B, K)
        self.observers = list(observers)
        self.on_failure = on_failure
        self.identity = identity or {}
        self.step_index = 0
        self.alive = np.ones(B, dtype=bool)
        self.failures: dict = {}
        self.E0 = self.stepper.energy(self.c)
        self.cum = {k: np.zeros(B) for k in ("viscous", "ito", "martingale")}
        self._advise_step_size()
        self._notify()

    @property
    def batch(self) -> int:
        return self.c.shape[0]

    @property
    def time(self) -> float:
        return self.step_index * self.cfg.dt

    @property
    def done(self) -> bool:
        return self.step_index >= self.cfg.steps

    def _advise_step_size(self):
        lat = self.cfg.lattice
        umax = float(np.max(np.abs(lt.cube_to_grid(self.c, lat.n, lat.grid, lat.dim)), initial=0.0))
        limit = 0.5 / (self.cfg.viscosity * self.cfg.n**2 + self.cfg.n * umax + 1e-300)
        if self.cfg.dt > limit:
            log.warning("dt=%g exceeds the advisory step limit %.3g", self.cfg.dt, limit)

    def _notify(self):
        wanted = [o for o in self.observers if o.wants(self.step_index)]
        if not wanted:
            return
        view = _ledger_view(self.E0, self.stepper.energy(self.c), self.cum)
        for o in wanted:
            o.observe(self.step_index, self.time, self.c, view)

    def state(self, member: int = 0) -> SolverState:
        u = SpectralField(self.cfg.lattice, self.c[member].copy(), DIVERGENCE_FREE)
        return SolverState(self.time, u, self.step_index)

    def step(self):
        if self.done:
            raise ContractError(f"run already reached T={self.cfg.T}")
        j = self.step_index
        dW = np.zeros((self.batch, self.cfg.noise.K)) if self.dW is None else self.dW[j]
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is detected below
            new, inc = self.stepper.step(self.c, dW)
        finite = np.all(np.isfinite(new), axis=tuple(range(1, new.ndim)))
        bad = self.alive & ~finite
        if np.any(bad):
            if self.on_failure == "raise":
                raise NumericalAbort(
                    f"non-finite coefficients at step {j + 1} (t={(j + 1) * self.cfg.dt:g})",
                    self.state(int(np.flatnonzero(bad)[0])),
                )
            for b in np.flatnonzero(bad):
                self.failures[int(b)] = j + 1
                log.warning("member %d aborted with non-finite values at step %d", b, j + 1)
            self.alive &= finite
        new[~finite] = 0
        for key, val in inc.items():
            self.cum[key] = self.cum[key] + np.where(finite, val, 0.0)
        self.c = new
        self.step_index = j + 1
        self._notify()

    def run(self, until: int | None = None, checkpoint_dir=None, checkpoint_every: int = 0):
        """Step until ``until`` (default: the end), checkpointing periodically."""
        stop = self.cfg.steps if until is None else min(until, self.cfg.steps)
        while self.step_index < stop:
            self.step()
            if checkpoint_dir and checkpoint_every and self.step_index % checkpoint_every == 0:
                self.save_checkpoint(checkpoint_dir)
        if checkpoint_dir:
            self.save_checkpoint(checkpoint_dir)
        return self

    # checkpointing -----------------------------------------------------

    def _hash(self) -> str:
        return config_hash(self.cfg, {"batch": self.batch, **self.identity})

    def save_checkpoint(self, directory) -> None:
        meta = {
            "config_hash": self._hash(),
            "step": self.step_index,
            "time": self.time,
            "E0": self.E0.tolist(),
            "cum": {k: v.tolist() for k, v in self.cum.items()},
            "alive": self.alive.tolist(),
            "failures": {str(k): v for k, v in self.failures.items()},
        }
        obs = {}
        for i, o in enumerate(self.observers):
            for key, val in o.get_state().items():
                obs[f"o{i}__{key}"] = val
        sio.write_checkpoint(directory, meta, self.c, obs)

    def restore(self, directory) -> bool:
        """Load a checkpoint; returns False when the run was already complete.

        Raises ContractError if the checkpoint belongs to a different run.
        """
        meta, coeffs, obs = sio.read_checkpoint(directory)
        if meta["config_hash"] != self._hash():
            raise ContractError("checkpoint was written by a different configuration; refusing to resume")
        if coeffs.shape != self.c.shape:
            raise ContractError("checkpoint state has the wrong shape")
        self.c = coeffs
        self.step_index = int(meta["step"])
        self.E0 = np.array(meta["E0"])
        self.cum = {k: np.array(v) for k, v in meta["cum"].items()}
        self.alive = np.array(meta["alive"], dtype=bool)
        self.failures = {int(k): v for k, v in meta["failures"].items()}
        for i, o in enumerate(self.observers):
            prefix = f"o{i}__"
            o.set_state({k[len(prefix):]: v for k, v in obs.items() if k.startswith(prefix)})
        if self.done:
            log.info("checkpoint in %s is already complete; nothing to do", directory)
            return False
        return True


@dataclass
class RunResult:
    state: SolverState
    ledger: EnergyLedger
    observers: list
    simulation: Simulation


def prepare_path(cfg: SchemeConfig, path: WienerPath | None, seed: int) -> WienerPath | None:
    if cfg.noise.is_zero:
        return path
    if path is None:
        return sample_path(seed, cfg.noise.K, cfg.dt, max(cfg.T, cfg.dt))
    return path


def run(cfg: SchemeConfig, u0, path: WienerPath | None = None, observers=(), seed: int = 0,
        energy_stride: int = 1, checkpoint_dir=None, checkpoint_every: int = 0,
        resume: bool = False, stop_at: int | None = None) -> RunResult:
    """Integrate from ``u0`` (preset spec, snapshot spec or field) to ``cfg.T``.

    An :class:`EnergyLedger` is always attached.  With ``resume`` the run
    continues from ``checkpoint_dir`` and produces the same result as an
    uninterrupted run; ``stop_at`` ends the run early (at a step index).
    """
    state0 = initial_state(u0, cfg)
    path = prepare_path(cfg, path, seed)
    ledger = EnergyLedger(energy_stride)
    obs = [ledger] + list(observers)
    identity = {"seed": seed if path is None else path.seed, "u0": _fingerprint(state0.u)}
    sim = Simulation(cfg, state0.u.coeffs[None], None if path is None else [path], obs,
                     identity=identity)
    if resume:
        if checkpoint_dir is None:
            raise ConfigError("resume needs a checkpoint directory")
        sim.restore(checkpoint_dir)
    sim.run(stop_at, checkpoint_dir, checkpoint_every)
    return RunResult(sim.state(0), ledger, list(observers), sim)


def _fingerprint(u: SpectralField) -> str:
    return hashlib.sha256(np.ascontiguousarray(u.coeffs).tobytes()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Field-level API
# ---------------------------------------------------------------------------


def _check_state(state: SolverState, cfg: SchemeConfig) -> np.ndarray:
    u = state.u
    if u.dim != cfg.dim or u.n != cfg.n:
        raise ContractError(f"state lives on dim={u.dim}, n={u.n}; config has dim={cfg.dim}, n={cfg.n}")
    if not u.is_divergence_free():
        raise DataError("state is not divergence-free")
    return u.coeffs[None]


def drift(state: SolverState, cfg: SchemeConfig) -> SpectralField:
    """``-P_n(u . grad u) + eps div(Q_n grad u)``."""
    c = _check_state(state, cfg)
    return SpectralField(cfg.lattice, Stepper(cfg).drift(c)[0], DIVERGENCE_FREE)


def step(state: SolverState, cfg: SchemeConfig, path: WienerPath | None = None) -> SolverState:
    """One step of the configured integrator from ``state``."""
    c = _check_state(state, cfg)
    if state.step_index >= cfg.steps:
        raise ContractError(f"step {state.step_index} would pass T={cfg.T}")
    K = cfg.noise.K
    if cfg.noise.is_zero:
        dW = np.zeros((1, K))
    else:
        if path is None:
            raise ContractError("a noisy step needs a Wiener path")
        dW = path.for_step(cfg.dt).increment(state.step_index)[None]
    with np.errstate(over="ignore", invalid="ignore"):
        new, _ = Stepper(cfg).step(c, dW)
    if not np.all(np.isfinite(new)):
        raise NumericalAbort(f"non-finite coefficients at step {state.step_index + 1}", state)
    j = state.step_index + 1
    return SolverState(j * cfg.dt, SpectralField(cfg.lattice, new[0], DIVERGENCE_FREE), j)
