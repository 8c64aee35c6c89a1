"""Energy balance, a-priori bounds, consistency residuals and relative energy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import lattice as lt
from .errors import ContractError, DataError, SVMError
from .lattice import FourierLattice, SpectralField
from .noise import NoiseOperator, WienerPath
from .scheme import LEDGER_COLUMNS, EnergyLedger, SchemeConfig


def energy(u: SpectralField) -> float:
    """``1/2 ||u||^2_{L2}``."""
    return 0.5 * lt.l2_norm(u) ** 2


# ---------------------------------------------------------------------------
# Ito energy balance
# ---------------------------------------------------------------------------


def ledger_from_states(states, cfg: SchemeConfig, path: WienerPath | None = None) -> np.ndarray:
    """Rebuild the energy ledger from the state after every step.

    Independent of the integrator's own bookkeeping: the viscous, Ito and
    martingale terms are re-evaluated at the left end point of each step
    (the midpoint integrator uses the step midpoint for the viscous term).
    Returns rows in :data:`LEDGER_COLUMNS` order.
    """
    coeffs = [s.u.coeffs if hasattr(s, "u") else np.asarray(s) for s in states]
    if len(coeffs) != cfg.steps + 1:
        raise DataError(f"need {cfg.steps + 1} states (one per step), got {len(coeffs)}")
    lat = cfg.lattice
    vol = lat.volume
    op = NoiseOperator(cfg.noise, lat)
    visc = cfg.viscosity * lat.k2 * lat.band(cfg.threshold, cfg.n)
    noisy = not cfg.noise.is_zero
    if noisy:
        if path is None:
            raise DataError("noisy ledger needs the Wiener path")
        dW = path.for_step(cfg.dt).increments
    rows = []
    cum_v = cum_i = cum_m = 0.0
    E0 = 0.5 * vol * float(np.sum(np.abs(coeffs[0]) ** 2))
    for j, c in enumerate(coeffs):
        E = 0.5 * vol * float(np.sum(np.abs(c) ** 2))
        rows.append([j * cfg.dt, E, cum_v, cum_i, cum_m, E + cum_v - E0 - cum_m - 0.5 * cum_i])
        if j == cfg.steps:
            break
        at = 0.5 * (c + coeffs[j + 1]) if cfg.integrator == "deterministic_midpoint" else c
        cum_v += cfg.dt * vol * float(np.sum(visc * np.abs(at) ** 2))
        if noisy:
            inc = op.increment(c[None], dW[j][None], fast=False)[0]
            cum_i += cfg.dt * float(op.ito_rate(c[None], fast=False)[0])
            cum_m += vol * float(np.real(np.vdot(c, inc)))
    return np.array(rows)


def energy_balance_residual(ledger, expected_rows: int | None = None) -> np.ndarray:
    """Residual column of an energy ledger (one value per recorded time).

    ``ledger`` is an :class:`EnergyLedger` or a row table.  When
    ``expected_rows`` is given a shorter ledger is an error.
    """
    table = ledger.table() if isinstance(ledger, EnergyLedger) else np.asarray(ledger)
    if table.ndim != 2 or table.shape[1] != len(LEDGER_COLUMNS) or len(table) == 0:
        raise DataError("ledger has no rows")
    if expected_rows is not None and len(table) != expected_rows:
        raise DataError(f"ledger has {len(table)} rows, expected {expected_rows}")
    return table[:, LEDGER_COLUMNS.index("residual")]


def observed_order(steps, errors) -> float:
    """Least-squares slope of log(error) against log(step)."""
    steps = np.asarray(steps, dtype=float)
    errors = np.abs(np.asarray(errors, dtype=float))
    if np.any(errors <= 0):
        raise DataError("errors must be positive to fit an order")
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


# ---------------------------------------------------------------------------
# A-priori bound
# ---------------------------------------------------------------------------


def sup_norm_power(ledger, p: float, member: int = 0) -> float:
    """``sup_t ||u(t)||^p`` from the energy column."""
    E = ledger.column("E", member) if isinstance(ledger, EnergyLedger) else np.asarray(ledger)
    return float(np.max(2.0 * E) ** (p / 2))


@dataclass
class AprioriReport:
    p: float
    cutoffs: list
    moments: list
    ratios: list
    initial: float | None
    envelope: float | None
    passed: bool

    def as_dict(self):
        return dict(self.__dict__)


def apriori_check(samples: dict, p: float = 2.0, tol: float = 0.1, initial: float | None = None,
                  growth: float | None = None) -> AprioriReport:
    """Check that ``E[sup_t ||u_n||^p]`` does not explode along a ladder.

    ``samples`` maps each cutoff to per-member values of ``sup_t ||u_n||^p``.
    Passes when every ratio between successive cutoffs is at most 1 + tol
    and, if ``initial`` (= ||u0||^p) and ``growth`` are given, every moment is
    at most ``initial * growth * (1 + tol)``.
    """
    if len(samples) < 2:
        raise ContractError("a-priori check needs at least two resolutions")
    cutoffs = sorted(samples)
    moments = [float(np.mean(samples[n])) for n in cutoffs]
    ratios = [b / a if a > 0 else (1.0 if b == 0 else np.inf) for a, b in zip(moments, moments[1:])]
    ok = all(r <= 1 + tol for r in ratios)
    envelope = None
    if initial is not None:
        envelope = initial * (1.0 if growth is None else growth) * (1 + tol)
        ok = ok and all(mv <= envelope for mv in moments)
    return AprioriReport(p, cutoffs, moments, ratios, initial, envelope, bool(ok))


def gbm_moment_growth(alpha_square_sum: float, p: float, T: float) -> float:
    """Envelope ``exp(p * sum(alpha^2) * T / 2)`` for moment growth under
    linear noise on a steady state (exact for E||u(T)||^2)."""
    return float(np.exp(p * alpha_square_sum * T / 2))


# ---------------------------------------------------------------------------
# Consistency residuals
# ---------------------------------------------------------------------------


@dataclass
class ConsistencyReport:
    phi_id: str
    n: int
    R1_value: float
    R1_scale: float
    N_value: float
    N_bound: float
    C_hat: float = np.nan

    @property
    def R1_bound(self) -> float:
        return self.C_hat * self.R1_scale

    def as_dict(self):
        d = dict(self.__dict__)
        d["R1_bound"] = self.R1_bound
        return d


def _common(u: SpectralField, phi: SpectralField):
    if phi.n < u.n:
        raise ContractError(f"test function has cutoff {phi.n} below the field cutoff {u.n}")
    if phi.dim != u.dim:
        raise ContractError("test function and field have different dimensions")


def high_part(phi: SpectralField, n: int) -> SpectralField:
    """``(I - P_n) phi`` with ``P_n = T_n P_H``."""
    return phi - lt.galerkin_project(phi, n)


def consistency_R1(u: SpectralField, phi: SpectralField, n: int | None = None) -> float:
    """``-int grad (I-P_n)phi : (u (x) u) dx`` by Parseval with exact products."""
    _common(u, phi)
    n = u.n if n is None else n
    if n > phi.n:
        raise ContractError("n exceeds the test function cutoff")
    psi = high_part(phi, n)
    top = 2 * u.n
    prods = lt._exact_products(u.coeffs, u.n, u.dim, top)
    lat = FourierLattice(u.dim, top)
    psi = lt.to_cutoff(psi, top)
    K = lat.wavevectors
    total = 0.0
    for i in range(u.dim):
        for j in range(u.dim):
            grad_ij = 1j * K[j] * psi.coeffs[i]
            total += float(np.real(np.vdot(prods[(min(i, j), max(i, j))], grad_ij)))
    return -lat.volume * total


def consistency_N(u: SpectralField, phi: SpectralField, m: int, eps: float) -> tuple:
    """``eps int (I-P_m) lap(phi) . u dx`` and its bound ``eps ||u|| ||(I-P_m)phi||_{H^2}``.

    The bound is Cauchy-Schwarz; a violation means a projection or
    quadrature bug and raises.
    """
    _common(u, phi)
    hp = high_part(phi, m)
    lap = lt.differentiate(hp, "laplacian")
    value = eps * lt.inner(lap, u)
    bound = eps * lt.l2_norm(u) * lt.sobolev_norm(hp, 2.0)
    if abs(value) > bound * (1 + 1e-12) + 1e-300:
        raise SVMError(f"N residual {value:.6e} exceeds its Cauchy-Schwarz bound {bound:.6e}")
    return value, bound


def consistency_report(u: SpectralField, phi: SpectralField, m: int, eps: float,
                       phi_id: str = "phi", C_hat: float = np.nan) -> ConsistencyReport:
    r1 = consistency_R1(u, phi)
    scale = lt.l2_norm(u) ** 2 * lt.sobolev_norm(high_part(phi, u.n), 1.5)
    nv, nb = consistency_N(u, phi, m, eps)
    return ConsistencyReport(phi_id, u.n, r1, scale, nv, nb, C_hat)


# ---------------------------------------------------------------------------
# Relative energy
# ---------------------------------------------------------------------------


SURROGATES = ("none", "ensemble_variance")


def _as_fields(members) -> list:
    if isinstance(members, SpectralField):
        return [members]
    return list(members)


def defect_surrogate(members, kind: str = "none") -> float:
    """Finite-resolution stand-in for the concentration defect.

    ``ensemble_variance`` is ``max(0, mean 1/2||u||^2 - 1/2||mean u||^2)``,
    the energy that sits in the spread of the ensemble.
    """
    if kind not in SURROGATES:
        raise ContractError(f"unknown surrogate {kind!r}; choose from {SURROGATES}")
    if kind == "none":
        return 0.0
    fields = _as_fields(members)
    n = max(f.n for f in fields)
    fields = [lt.to_cutoff(f, n) for f in fields]
    mean_e = float(np.mean([energy(f) for f in fields]))
    mean_c = np.mean([f.coeffs for f in fields], axis=0)
    return max(0.0, mean_e - energy(SpectralField(fields[0].lattice, mean_c)))


def relative_energy(members, U_ref, surrogate: str = "none") -> tuple:
    """Mean over members of ``1/2 ||u - U||^2`` plus the defect surrogate.

    ``U_ref`` is one field or one per member.  Returns ``(value, H)`` with
    ``value`` including ``H``.
    """
    fields = _as_fields(members)
    refs = _as_fields(U_ref)
    if len(refs) == 1:
        refs = refs * len(fields)
    if len(refs) != len(fields) or not fields:
        raise ContractError("need one reference per member (or a single reference)")
    vals = []
    for u, U in zip(fields, refs):
        if u.dim != U.dim:
            raise ContractError("member and reference live in different dimensions")
        n = max(u.n, U.n)
        vals.append(energy(lt.to_cutoff(u, n) - lt.to_cutoff(U, n)))
    H = defect_surrogate(fields, surrogate)
    return float(np.mean(vals)) + H, H


def grad_sup(U: SpectralField, oversample: int = 2) -> float:
    """``max_x |grad U(x)|_2`` (pointwise operator norm) on an oversampled grid."""
    N = lt.sfft.next_fast_len(oversample * (2 * U.n + 1), real=True)
    grad = lt.differentiate(U, "gradient")
    vals = lt.cube_to_grid(grad.coeffs, U.n, N, U.dim)
    mats = np.moveaxis(vals, 0, -1).reshape(-1, U.dim, U.dim)
    return float(np.max(np.linalg.norm(mats, ord=2, axis=(1, 2))))


def gronwall_constant(references, D1: float) -> float:
    """``c = 2 sup_t ||grad U||_inf + D1``.

    Differentiating 1/2||u-U||^2 along two solutions driven by the same
    noise gives a transport term bounded by ||grad U||_inf ||u-U||^2 and an
    Ito term bounded by D1/2 ||u-U||^2.
    """
    return 2.0 * max(grad_sup(U) for U in _as_fields(references)) + float(D1)


@dataclass
class GronwallReport:
    c: float
    slack: float
    times: np.ndarray
    values: np.ndarray
    envelope: np.ndarray
    passed: bool
    worst_ratio: float = field(default=np.nan)

    def as_dict(self):
        return {"c": self.c, "slack": self.slack, "pass": self.passed, "worst_ratio": self.worst_ratio,
                "times": self.times.tolist(), "values": self.values.tolist(),
                "envelope": self.envelope.tolist()}


def gronwall_envelope(times, values, c: float, slack: float = 0.2, floor: float = 0.0) -> GronwallReport:
    """Pass iff ``values(t) <= values(0) exp(c t) (1 + slack) + floor`` for all t.

    ``floor`` absorbs round-off when the series starts at (numerically) zero.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape or t.size == 0:
        raise DataError("times and values must be non-empty and of equal length")
    if np.any(v < 0):
        raise DataError("relative energy series must be non-negative")
    env = v[0] * np.exp(c * (t - t[0])) * (1 + slack) + floor
    env[0] = max(env[0], v[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(env > 0, v / env, np.where(v > 0, np.inf, 0.0))
    return GronwallReport(float(c), float(slack), t, v, env, bool(np.all(v <= env)), float(np.max(ratio)))


# ---------------------------------------------------------------------------
# Strong time-discretisation error
# ---------------------------------------------------------------------------


def strong_time_error(cfg: SchemeConfig, u0, dts, dt_ref: float, seeds) -> dict:
    """Root-mean-square ``||u_dt(T) - u_ref(T)||`` over seeds, per dt.

    Every run of one seed uses the same base path at ``dt_ref``; the
    coarser runs see exact sums of its increments.
    """
    from .noise import sample_path
    from .scheme import run

    errs = {dt: [] for dt in dts}
    for seed in seeds:
        path = sample_path(seed, cfg.noise.K, dt_ref, cfg.T)
        ref = run(cfg.replace(dt=dt_ref), u0, path).state.u
        for dt in dts:
            u = run(cfg.replace(dt=dt), u0, path).state.u
            errs[dt].append(lt.l2_norm(u - ref) ** 2)
    return {dt: float(np.sqrt(np.mean(v))) for dt, v in errs.items()}
