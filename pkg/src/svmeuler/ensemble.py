"""Monte-Carlo ensembles, empirical Young measures and resolution ladders."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import stats
from scipy.integrate import trapezoid

from . import diagnostics as dg
from . import io as sio
from . import lattice as lt
from .errors import ConfigError, ContractError, DataError, ExperimentError, NumericalAbort
from .lattice import DIVERGENCE_FREE, SpectralField
from .noise import derive_seed, sample_path
from .scheme import (
    LEDGER_COLUMNS,
    EnergyLedger,
    ProbeSampler,
    SchemeConfig,
    Simulation,
    TrajectoryRecorder,
    initial_state,
)

log = logging.getLogger("svmeuler")

MAX_FAILURE_FRACTION = 0.1


@dataclass(frozen=True)
class EnsembleConfig:
    """Monte-Carlo and ladder settings.

    ``probes`` lists ``(t, x)`` sample points; ``ladder`` the cutoffs of a
    resolution study; ``coupled`` must be set for pathwise comparisons.
    """

    M: int = 16
    master_seed: int = 0
    ladder: tuple = (8, 16, 32, 64)
    coupled: bool = True
    probes: tuple = ()
    histogram_bins: int = 20
    batch_size: int = 32

    def __post_init__(self):
        problems = []
        if self.M < 1:
            problems.append(f"member count M must be >= 1, got {self.M}")
        lad = list(self.ladder)
        if not lad or any(b <= a for a, b in zip(lad, lad[1:])) or lad[0] < 1:
            problems.append(f"ladder must be strictly increasing positive cutoffs, got {lad}")
        if self.histogram_bins < 1:
            problems.append("histogram_bins must be >= 1")
        if self.batch_size < 1:
            problems.append("batch_size must be >= 1")
        for i, (t, x) in enumerate(self.probes):
            if t < 0:
                problems.append(f"probe {i} has negative time {t}")
            if any(not 0 <= v < 2 * np.pi for v in x):
                problems.append(f"probe {i} position {tuple(x)} outside [0, 2pi)")
        if problems:
            raise ConfigError(problems)

    def validate_against(self, cfg: SchemeConfig) -> None:
        problems = []
        for i, (t, x) in enumerate(self.probes):
            if t > cfg.T + 1e-12:
                problems.append(f"probe {i} at t={t} is beyond the horizon T={cfg.T}")
            if len(x) != cfg.dim:
                problems.append(f"probe {i} has {len(x)} coordinates, dim is {cfg.dim}")
        if problems:
            raise ConfigError(problems)

    def seeds(self) -> list:
        return [derive_seed(self.master_seed, i) for i in range(self.M)]


def tree_sum(arrays):
    """Pairwise sum in a fixed order, independent of how items were produced."""
    items = list(arrays)
    if not items:
        raise DataError("nothing to sum")
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def tree_mean(arrays):
    items = list(arrays)
    return tree_sum(items) / len(items)


# ---------------------------------------------------------------------------
# Young measures and distances
# ---------------------------------------------------------------------------


@dataclass
class YoungMeasureHistogram:
    """Per-component histogram of ensemble samples at one probe.

    Besides counts every bin keeps the sum and the sum of squares of its
    samples, so histogram moments equal sample moments up to rounding.
    """

    probe: int
    edges: list
    counts: list
    sums: list
    sumsq: list

    @property
    def ncomp(self) -> int:
        return len(self.counts)

    def total(self, comp: int = 0) -> int:
        return int(np.sum(self.counts[comp]))

    def mean(self) -> np.ndarray:
        return np.array([np.sum(s) / np.sum(c) for s, c in zip(self.sums, self.counts)])

    def variance(self) -> np.ndarray:
        m = self.mean()
        return np.array([np.sum(q) / np.sum(c) for q, c in zip(self.sumsq, self.counts)]) - m**2

    def occupied(self, comp: int = 0) -> int:
        return int(np.count_nonzero(self.counts[comp]))


def empirical_young_measure(samples, bins: int = 20, probe: int = 0) -> YoungMeasureHistogram:
    """Histogram of ``samples`` (shape ``(M, ncomp)`` or ``(M,)``) per component."""
    s = np.asarray(samples, dtype=float)
    if s.ndim == 1:
        s = s[:, None]
    if s.shape[0] < 2:
        raise DataError("a Young-measure histogram needs at least 2 samples")
    edges, counts, sums, sumsq = [], [], [], []
    for comp in range(s.shape[1]):
        x = s[:, comp]
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            pad = max(abs(lo), 1.0) * 1e-9
            lo, hi = lo - pad, hi + pad
        e = np.linspace(lo, hi, bins + 1)
        idx = np.clip(np.searchsorted(e, x, side="right") - 1, 0, bins - 1)
        edges.append(e)
        counts.append(np.bincount(idx, minlength=bins))
        sums.append(np.bincount(idx, weights=x, minlength=bins))
        sumsq.append(np.bincount(idx, weights=x * x, minlength=bins))
    return YoungMeasureHistogram(probe, edges, counts, sums, sumsq)


def wasserstein1_1d(a, b) -> float:
    """W1 distance of two empirical measures on the line.

    Equal sizes: mean absolute difference of sorted samples.  Unequal sizes
    fall back to scipy's quantile-function formula.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DataError("W1 needs non-empty sample sets")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    return float(stats.wasserstein_distance(a, b))


# ---------------------------------------------------------------------------
# Field distances and Cesaro means
# ---------------------------------------------------------------------------


def quadrature_grid(n: int, dim: int) -> int:
    """Grid for integrating |u| (a non-smooth function) to ~1e-7 relative."""
    base = 512 if dim == 2 else 96
    return sfft.next_fast_len(max(base, (8 if dim == 2 else 3) * (2 * n + 1)), real=True)


def _padded(a: SpectralField, b: SpectralField):
    if a.dim != b.dim:
        raise ContractError("fields live in different dimensions")
    n = max(a.n, b.n)
    return lt.to_cutoff(a, n), lt.to_cutoff(b, n)


def l1_distance(a: SpectralField, b: SpectralField, grid: int | None = None) -> float:
    """``int |a - b| dx`` (Euclidean norm pointwise) by grid quadrature."""
    a, b = _padded(a, b)
    N = grid or quadrature_grid(a.n, a.dim)
    vals = lt.cube_to_grid(a.coeffs - b.coeffs, a.n, N, a.dim)
    return float(a.lattice.volume * np.mean(np.sqrt(np.sum(vals**2, axis=0))))


def l2_distance(a: SpectralField, b: SpectralField) -> float:
    a, b = _padded(a, b)
    return lt.l2_norm(a - b)


def cesaro_mean(fields, coupled: bool) -> SpectralField:
    """Arithmetic mean of ladder solutions, zero-padded to the top cutoff.

    Refused unless the fields come from one Brownian path (``coupled``).
    """
    if not coupled:
        raise ContractError("Cesaro means are pathwise; trajectories must share the Brownian path")
    fields = list(fields)
    if not fields:
        raise DataError("no fields to average")
    n = max(f.n for f in fields)
    padded = [lt.to_cutoff(f, n).coeffs for f in fields]
    return SpectralField(lt.FourierLattice(fields[0].dim, n), tree_mean(padded), DIVERGENCE_FREE)


def cesaro_gaps(fields, coupled: bool = True) -> list:
    """L1 distances between successive Cesaro means (N, N+1), N = 1.."""
    means = [cesaro_mean(fields[: k + 1], coupled) for k in range(len(fields))]
    return [l1_distance(a, b) for a, b in zip(means, means[1:])]


def is_monotone_decreasing(values, allowed_violations: int = 0) -> bool:
    bad = sum(1 for a, b in zip(values, values[1:]) if not b < a)
    return bad <= allowed_violations


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    cfg: SchemeConfig
    ens: EnsembleConfig
    seeds: list
    final: np.ndarray  # (M, dim) + cube, failed members zeroed
    ledgers: list  # per member (R, 6) tables
    probe_samples: dict  # probe -> (M, dim)
    failures: dict
    histograms: list = field(default_factory=list)

    @property
    def alive(self) -> np.ndarray:
        mask = np.ones(len(self.seeds), dtype=bool)
        mask[list(self.failures)] = False
        return mask

    def member(self, i: int) -> SpectralField:
        return SpectralField(self.cfg.lattice, self.final[i], DIVERGENCE_FREE)

    def mean_field(self, members=None) -> SpectralField:
        idx = np.flatnonzero(self.alive) if members is None else members
        return SpectralField(self.cfg.lattice, tree_mean([self.final[i] for i in idx]), DIVERGENCE_FREE)

    def energies(self) -> np.ndarray:
        """Final energies of the surviving members."""
        return np.array([t[-1, 1] for i, t in enumerate(self.ledgers) if self.alive[i]])

    def stats_rows(self):
        rows = []
        for p, samples in sorted(self.probe_samples.items()):
            s = samples[self.alive]
            mean = tree_mean(list(s))
            var = tree_mean([(x - mean) ** 2 for x in s])
            t, x = self.ens.probes[p]
            for comp in range(s.shape[1]):
                rows.append([p, t, *x, comp, mean[comp], var[comp], int(s.shape[0])])
        return rows


def run_ensemble(ens: EnsembleConfig, cfg: SchemeConfig, u0, out_dir=None,
                 energy_stride: int = 1) -> EnsembleResult:
    """M independent runs with seeds derived from the master seed.

    Members are integrated in batches; results do not depend on the batch
    size.  Members that hit non-finite values are excluded with a warning;
    more than 10% failures is an experiment error.
    """
    ens.validate_against(cfg)
    seeds = ens.seeds()
    u_init = initial_state(u0, cfg).u.coeffs
    finals, ledgers = [], []
    probe_samples: dict = {}
    failures: dict = {}
    for start in range(0, ens.M, ens.batch_size):
        chunk = seeds[start : start + ens.batch_size]
        paths = None if cfg.noise.is_zero else [sample_path(s, cfg.noise.K, cfg.dt, max(cfg.T, cfg.dt)) for s in chunk]
        ledger = EnergyLedger(energy_stride)
        probes = ProbeSampler(ens.probes, cfg.dt, cfg.lattice)
        c0 = np.repeat(u_init[None], len(chunk), axis=0)
        sim = Simulation(cfg, c0, paths, [ledger, probes], on_failure="exclude")
        sim.run()
        finals.append(sim.c)
        ledgers.extend(ledger.table(b) for b in range(len(chunk)))
        for p in range(len(ens.probes)):
            probe_samples.setdefault(p, []).append(probes.values(p))
        failures.update({start + b: s for b, s in sim.failures.items()})
    if len(failures) > MAX_FAILURE_FRACTION * ens.M:
        raise ExperimentError(f"{len(failures)} of {ens.M} members aborted (limit 10%)")
    result = EnsembleResult(
        cfg, ens, seeds, np.concatenate(finals), ledgers,
        {p: np.concatenate(v) for p, v in probe_samples.items()}, failures,
    )
    result.histograms = [
        empirical_young_measure(v[result.alive], ens.histogram_bins, p)
        for p, v in sorted(result.probe_samples.items())
    ]
    if out_dir:
        write_ensemble(result, out_dir)
    return result


def write_ensemble(result: EnsembleResult, out_dir) -> None:
    os.makedirs(os.path.join(out_dir, "members"), exist_ok=True)
    for i, table in enumerate(result.ledgers):
        sio.write_csv(os.path.join(out_dir, "members", f"ledger_{i:04d}.csv"), LEDGER_COLUMNS, table)
    dim = result.cfg.dim
    xs = ["x", "y", "z"][:dim]
    sio.write_csv(os.path.join(out_dir, "stats.csv"),
                  ["probe", "t", *xs, "component", "mean", "variance", "samples"], result.stats_rows())
    rows = []
    for h in result.histograms:
        for comp in range(h.ncomp):
            for b in range(len(h.counts[comp])):
                rows.append([h.probe, comp, b, h.edges[comp][b], h.edges[comp][b + 1], int(h.counts[comp][b])])
    sio.write_csv(os.path.join(out_dir, "histograms.csv"),
                  ["probe", "component", "bin", "lower", "upper", "count"], rows)
    sio.write_json(os.path.join(out_dir, "manifest.json"), {
        "scheme": result.cfg.to_dict(),
        "ensemble": {"M": result.ens.M, "master_seed": result.ens.master_seed,
                     "probes": [[t, list(x)] for t, x in result.ens.probes],
                     "histogram_bins": result.ens.histogram_bins},
        "member_seeds": [str(s) for s in result.seeds],
        "failures": {str(k): v for k, v in result.failures.items()},
    })


# ---------------------------------------------------------------------------
# Resolution ladders
# ---------------------------------------------------------------------------


def ladder_config(cfg: SchemeConfig, n: int, **changes) -> SchemeConfig:
    return cfg.replace(n=n, grid=0, **changes)


def run_ladder(cfg: SchemeConfig, ladder, u0, path=None, record_stride: int | None = None) -> dict:
    """Run every cutoff of the ladder on the same Brownian path.

    Returns ``{n: TrajectoryRecorder}`` (final state only unless a stride
    is given).
    """
    out = {}
    for n in ladder:
        c = ladder_config(cfg, n)
        rec = TrajectoryRecorder(record_stride or max(c.steps, 1))
        state = initial_state(u0, c)
        sim = Simulation(c, state.u.coeffs[None], None if path is None else [path], [rec])
        sim.run()
        if rec.steps[-1] != c.steps:
            rec.observe(c.steps, sim.time, sim.c, {})
        out[n] = rec
    return out


@dataclass
class CesaroReport:
    ladder: list
    gaps: list
    passed: bool

    def rows(self):
        return [[k + 2, self.ladder[k + 1], g] for k, g in enumerate(self.gaps)]


def cesaro_experiment(cfg: SchemeConfig, ladder, u0, seed: int = 0, coupled: bool = True,
                      out_dir=None) -> CesaroReport:
    """Successive Cesaro means of the ladder at time T on one Brownian path.

    Passes when the L1 gaps between successive means decrease.
    """
    path = None
    if not cfg.noise.is_zero:
        path = sample_path(seed, cfg.noise.K, cfg.dt, max(cfg.T, cfg.dt))
    runs = run_ladder(cfg, ladder, u0, path)
    finals = [SpectralField(ladder_config(cfg, n).lattice, runs[n].coeffs[-1][0], DIVERGENCE_FREE)
              for n in ladder]
    gaps = cesaro_gaps(finals, coupled)
    report = CesaroReport(list(ladder), gaps, is_monotone_decreasing(gaps))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        sio.write_csv(os.path.join(out_dir, "cesaro.csv"), ["N", "n_N", "l1_gap"], report.rows())
    return report


@dataclass
class WeakStrongReport:
    ladder: list
    times: list
    l1: dict  # n -> per sample time (mean over members)
    l2: dict
    l1_spacetime: dict
    relative_energy: dict  # n -> series
    gronwall: dict  # n -> GronwallReport
    c: float
    monotone: bool
    passed: bool

    def rows(self):
        out = []
        for n in self.ladder:
            for j, t in enumerate(self.times):
                out.append([n, t, self.l1[n][j], self.l2[n][j], self.relative_energy[n][j],
                            self.gronwall[n].envelope[j]])
        return out


def weak_strong_experiment(cfg: SchemeConfig, ladder, u0, n_ref: int, seeds=(0,), ref_factor: int = 4,
                           samples: int = 10, slack: float = 0.2, ref_changes: dict | None = None,
                           out_dir=None) -> WeakStrongReport:
    """Distances of ladder solutions to a resolved reference on shared paths.

    The reference runs at ``n_ref`` with ``dt / ref_factor``; every ladder
    level and the reference of a member consume the same base path.  Each
    level's relative-energy series (mean over members) is checked against
    the Gronwall envelope with ``c = 2 sup ||grad U||_inf + D1``.
    """
    ladder = list(ladder)
    if n_ref < max(ladder):
        raise ConfigError(f"reference cutoff {n_ref} is below the ladder top {max(ladder)}")
    if ref_factor < 1:
        raise ConfigError("ref_factor must be >= 1")
    steps = cfg.steps
    if steps % samples:
        raise ConfigError(f"{steps} steps do not split into {samples} sample intervals")
    stride = steps // samples
    dt_ref = cfg.dt / ref_factor
    ref_cfg = ladder_config(cfg, n_ref, dt=dt_ref, **(ref_changes or {}))
    times = [j * stride * cfg.dt for j in range(samples + 1)]
    refs, levels = [], {n: [] for n in ladder}
    for seed in seeds:
        path = None if cfg.noise.is_zero else sample_path(seed, cfg.noise.K, dt_ref, max(cfg.T, dt_ref))
        try:
            ref = run_ladder(ref_cfg, [n_ref], u0, path, stride * ref_factor)[n_ref]
        except NumericalAbort as exc:
            raise ExperimentError(f"reference run failed: {exc}") from exc
        refs.append(ref.fields(ref_cfg.lattice))
        for n, rec in run_ladder(cfg, ladder, u0, path, stride).items():
            levels[n].append(rec.fields(ladder_config(cfg, n).lattice))
    c = dg.gronwall_constant([U for member in refs for U in member], cfg.noise.D1)
    l1, l2, l1st, rel, gron = {}, {}, {}, {}, {}
    for n in ladder:
        l1[n] = [float(np.mean([l1_distance(levels[n][s][j], refs[s][j]) for s in range(len(seeds))]))
                 for j in range(len(times))]
        l2[n] = [float(np.mean([l2_distance(levels[n][s][j], refs[s][j]) for s in range(len(seeds))]))
                 for j in range(len(times))]
        l1st[n] = float(trapezoid(l1[n], times)) if len(times) > 1 else l1[n][0]
        rel[n] = [dg.relative_energy([levels[n][s][j] for s in range(len(seeds))],
                                     [refs[s][j] for s in range(len(seeds))])[0] for j in range(len(times))]
        scale = max(dg.energy(refs[0][0]), 1.0)
        gron[n] = dg.gronwall_envelope(times, rel[n], c, slack, floor=1e-13 * scale)
    monotone = is_monotone_decreasing([l1st[n] for n in ladder], allowed_violations=1)
    passed = monotone and all(g.passed for g in gron.values())
    report = WeakStrongReport(ladder, times, l1, l2, l1st, rel, gron, c, monotone, passed)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        sio.write_csv(os.path.join(out_dir, "weak_strong.csv"),
                      ["n", "t", "l1", "l2", "relative_energy", "gronwall_envelope"], report.rows())
    return report
