import logging

import numpy as np
import pytest

from svmeuler import diagnostics as dg
from svmeuler import lattice as lt
from svmeuler import presets
from svmeuler import scheme as sc
from svmeuler.errors import ConfigError, ContractError, DataError, NumericalAbort
from svmeuler.lattice import FourierLattice, SpectralField
from svmeuler.noise import NoiseModel, sample_path
from svmeuler.scheme import SchemeConfig, SolverState

from oracles import brute_convective, random_field

LINEAR = NoiseModel.from_law("linear", K=4, amplitude=0.1)


def shear_mode(n, k, dim=2, amp=1.0):
    """u = (amp sin(k y), 0): a single divergence-free mode pair."""
    lat = FourierLattice(dim, n)
    c = np.zeros((dim,) + lat.shape, dtype=complex)
    idx_p = (0, n) + (n + k,) + (n,) * (dim - 2)
    idx_m = (0, n) + (n - k,) + (n,) * (dim - 2)
    c[idx_p], c[idx_m] = -0.5j * amp, 0.5j * amp
    return SpectralField(lat, c, lt.DIVERGENCE_FREE)


class TestConfig:
    def test_defaults(self):
        cfg = SchemeConfig(n=16)
        assert cfg.threshold == 4
        assert cfg.viscosity == pytest.approx(1 / 16)
        assert cfg.steps == 100

    def test_laws(self):
        assert sc.default_threshold(2) == 1
        assert sc.default_threshold(1) == 0
        assert SchemeConfig(n=8, eps_law=(2.0, 2.0)).viscosity == pytest.approx(2 / 64)

    @pytest.mark.parametrize("kw, fragment", [
        ({"m": 8}, "m=8"),
        ({"m": 9}, "n=8"),
        ({"dt": 0.0}, "dt"),
        ({"T": 1.0, "dt": 0.3}, "multiple"),
        ({"integrator": "rk4"}, "integrator"),
        ({"eps": -1.0}, "eps"),
        ({"eps": 0.1, "eps_law": (1, 1)}, "either"),
        ({"integrator": "deterministic_midpoint", "noise": LINEAR}, "zero noise"),
        ({"convection": "spectral"}, "convection"),
    ])
    def test_rejects(self, kw, fragment):
        with pytest.raises(ConfigError, match=fragment):
            SchemeConfig(n=8, **kw)

    def test_reports_all_problems(self):
        with pytest.raises(ConfigError) as exc:
            SchemeConfig(n=8, m=10, dt=-1.0, integrator="x")
        assert len(exc.value.problems) == 3

    def test_T_zero_allowed(self):
        assert SchemeConfig(T=0.0).steps == 0


class TestInitialState:
    def test_taylor_green_two_modes(self):
        s = sc.initial_state("taylor_green", SchemeConfig(n=4))
        assert np.count_nonzero(np.any(s.u.coeffs != 0, axis=0)) == 4  # (+-1, +-1)
        assert dg.energy(s.u) == pytest.approx((2 * np.pi) ** 2 / 4, rel=1e-14)

    def test_low_modes_unchanged(self):
        u = random_field(2, 4, 0)
        s = sc.initial_state(u, SchemeConfig(n=4))
        assert np.max(np.abs(s.u.coeffs - u.coeffs)) <= 1e-15

    def test_embedding_into_larger_cutoff(self):
        u = random_field(2, 4, 0)
        s = sc.initial_state(u, SchemeConfig(n=8))
        assert lt.l2_norm(s.u) == pytest.approx(lt.l2_norm(u), rel=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_truncation_does_not_increase_norm(self, seed):
        u0 = presets.random_divfree(2, seed=seed, kmax=24)
        s = sc.initial_state(u0, SchemeConfig(n=8))
        # Parseval oracle: the norm is the sum over retained modes only
        lat = u0.lattice
        inside = lat.mask(8)
        kept = np.sqrt(lat.volume * np.sum(np.abs(u0.coeffs[:, inside]) ** 2))
        assert lt.l2_norm(s.u) == pytest.approx(kept, rel=1e-12)
        assert lt.l2_norm(s.u) <= lt.l2_norm(u0) * (1 + 1e-12)

    def test_nonzero_mean_rejected(self):
        u = random_field(2, 4, 1)
        u.coeffs[0, 4, 4] = 1.0
        with pytest.raises(DataError):
            sc.initial_state(u, SchemeConfig(n=4))


class TestDrift:
    def test_taylor_green_is_steady(self):
        cfg = SchemeConfig(n=8)
        d = sc.drift(sc.initial_state("taylor_green", cfg), cfg)
        assert np.max(np.abs(d.coeffs)) <= 1e-15

    def test_zero_field(self):
        cfg = SchemeConfig(n=8)
        state = SolverState(0.0, lt.SpectralField.zeros(cfg.lattice, 2), 0)
        assert np.all(sc.drift(state, cfg).coeffs == 0)

    def test_upper_shear_mode_decays(self):
        cfg = SchemeConfig(n=8, eps=0.05)
        u = shear_mode(8, 5)
        d = sc.drift(SolverState(0.0, u, 0), cfg)
        assert np.allclose(d.coeffs, -0.05 * 25 * u.coeffs, atol=1e-16, rtol=0)

    def test_matches_brute_force(self):
        cfg = SchemeConfig(n=5, eps=0.1, convection="exact_convolution")
        u = random_field(2, 5, 4)
        d = sc.drift(SolverState(0.0, u, 0), cfg).coeffs
        k2 = cfg.lattice.k2
        band = cfg.lattice.band(cfg.threshold, 5)
        expected = -brute_convective(u) - 0.1 * k2 * band * u.coeffs
        assert np.max(np.abs(d - expected)) <= 1e-13

    def test_wrong_cutoff(self):
        with pytest.raises(ContractError):
            sc.drift(SolverState(0.0, random_field(2, 4, 0), 0), SchemeConfig(n=8))


class TestStep:
    @pytest.mark.parametrize("integrator", sc.INTEGRATORS)
    def test_taylor_green_unchanged(self, integrator):
        cfg = SchemeConfig(n=8, integrator=integrator, dt=0.05, T=1.0)
        s0 = sc.initial_state("taylor_green", cfg)
        s = s0
        for _ in range(5):
            s = sc.step(s, cfg)
            assert np.max(np.abs(s.u.coeffs - s0.u.coeffs)) <= 1e-12
        assert s.step_index == 5 and s.time == pytest.approx(0.25)

    @pytest.mark.parametrize("integrator", sc.INTEGRATORS)
    def test_zero_field(self, integrator):
        cfg = SchemeConfig(n=4, integrator=integrator)
        s = sc.step(SolverState(0.0, SpectralField.zeros(cfg.lattice, 2), 0), cfg)
        assert np.all(s.u.coeffs == 0)

    def test_semi_implicit_scalar_recurrence(self):
        eps, dt, k = 0.3, 0.1, 6
        cfg = SchemeConfig(n=8, eps=eps, dt=dt, T=1.0, integrator="semi_implicit_em")
        s = SolverState(0.0, shear_mode(8, k), 0)
        a0 = s.u.coeffs[0, 8, 8 + k]
        for j in range(1, 11):
            s = sc.step(s, cfg)
            assert s.u.coeffs[0, 8, 8 + k] == pytest.approx(a0 / (1 + eps * k * k * dt) ** j, rel=1e-13)

    def test_euler_maruyama_formula(self):
        cfg = SchemeConfig(n=6, noise=LINEAR, dt=0.01, T=0.1)
        u = random_field(2, 6, 2)
        path = sample_path(3, 4, 0.01, 0.1)
        s = sc.step(SolverState(0.0, u, 0), cfg, path)
        w = float(np.dot(LINEAR.alphas, path.increment(0)))
        expected = u.coeffs + 0.01 * sc.drift(SolverState(0.0, u, 0), cfg).coeffs + w * u.coeffs
        assert np.max(np.abs(s.u.coeffs - expected)) <= 1e-15

    @pytest.mark.parametrize("integrator", ["euler_maruyama", "semi_implicit_em"])
    def test_invariants_after_noisy_steps(self, integrator):
        cfg = SchemeConfig(n=8, noise=NoiseModel.from_law("saturated_linear", K=3), integrator=integrator,
                           dt=0.01, T=0.2)
        path = sample_path(1, 3, 0.01, 0.2)
        s = sc.initial_state({"preset": "random_divfree", "seed": 2, "kmax": 8}, cfg)
        for _ in range(20):
            s = sc.step(s, cfg, path)
            assert s.u.is_divergence_free() and lt.reality_defect(s.u.coeffs) <= 1e-12
            assert np.all(s.u.coeffs[:, 8, 8] == 0)

    def test_past_horizon(self):
        cfg = SchemeConfig(n=4, dt=0.1, T=0.1)
        s = sc.step(sc.initial_state("taylor_green", cfg), cfg)
        with pytest.raises(ContractError):
            sc.step(s, cfg)

    def test_noisy_step_needs_path(self):
        cfg = SchemeConfig(n=4, noise=LINEAR)
        with pytest.raises(ContractError):
            sc.step(sc.initial_state("taylor_green", cfg), cfg)

    def test_midpoint_nonconvergence(self):
        cfg = SchemeConfig(n=8, eps=0.0, dt=1.0, T=1.0, integrator="deterministic_midpoint")
        u = random_field(2, 8, 0) * 50
        with pytest.raises(NumericalAbort):
            sc.step(SolverState(0.0, u, 0), cfg)


class TestRun:
    U0 = {"preset": "random_divfree", "seed": 5, "kmax": 8}

    def test_T_zero(self):
        cfg = SchemeConfig(n=8, T=0.0)
        r = sc.run(cfg, self.U0)
        assert r.state.step_index == 0
        assert np.array_equal(r.state.u.coeffs, sc.initial_state(self.U0, cfg).u.coeffs)
        assert r.ledger.table().shape == (1, 6)

    def test_bit_identical_repeat(self):
        cfg = SchemeConfig(n=8, T=0.1, noise=LINEAR)
        a = sc.run(cfg, self.U0, seed=4)
        b = sc.run(cfg, self.U0, seed=4)
        assert np.array_equal(a.state.u.coeffs, b.state.u.coeffs)
        assert np.array_equal(a.ledger.table(), b.ledger.table())
        c = sc.run(cfg, self.U0, seed=5)
        assert not np.array_equal(a.state.u.coeffs, c.state.u.coeffs)

    def test_run_matches_field_steps(self):
        cfg = SchemeConfig(n=6, T=0.05, noise=LINEAR)
        path = sample_path(8, 4, 0.01, 0.05)
        r = sc.run(cfg, self.U0, path)
        s = sc.initial_state(self.U0, cfg)
        for _ in range(5):
            s = sc.step(s, cfg, path)
        assert np.array_equal(r.state.u.coeffs, s.u.coeffs)

    def test_batch_equals_single(self):
        cfg = SchemeConfig(n=6, T=0.05, noise=LINEAR)
        u = [sc.initial_state({"preset": "random_divfree", "seed": s, "kmax": 6}, cfg).u for s in range(3)]
        paths = [sample_path(s, 4, 0.01, 0.05) for s in range(3)]
        sim = sc.Simulation(cfg, np.stack([x.coeffs for x in u]), paths).run()
        for b in range(3):
            single = sc.run(cfg, u[b], paths[b]).state.u.coeffs
            assert np.max(np.abs(sim.c[b] - single)) <= 1e-15

    def test_nan_abort_keeps_last_valid_state(self):
        cfg = SchemeConfig(n=8, eps=0.0, dt=0.5, T=50.0)
        u0 = presets.random_divfree(2, seed=0, kmax=8, amplitude=100.0)
        with pytest.raises(NumericalAbort) as exc:
            sc.run(cfg, u0)
        st = exc.value.state
        assert st is not None and np.all(np.isfinite(st.u.coeffs))
        assert st.step_index >= 1

    def test_observers_fire_at_stride(self, tmp_path):
        cfg = SchemeConfig(n=4, T=0.1)
        rec = sc.TrajectoryRecorder(stride=3)
        snaps = sc.SnapshotWriter(tmp_path, stride=5, lattice=cfg.lattice)
        r = sc.run(cfg, "taylor_green", observers=[rec, snaps], energy_stride=2)
        assert rec.steps == [0, 3, 6, 9]
        assert sorted(p.name for p in tmp_path.iterdir()) == [f"snap_{s:06d}.svmf" for s in (0, 5, 10)]
        assert np.allclose(r.ledger.column("t"), [0, 0.02, 0.04, 0.06, 0.08, 0.1])

    def test_probe_values(self):
        cfg = SchemeConfig(n=4, T=0.1)
        probes = sc.ProbeSampler([(0.0, [0.3, 1.1]), (0.1, [2.0, 0.5])], cfg.dt, cfg.lattice)
        sc.run(cfg, "taylor_green", observers=[probes])
        # 2-D Taylor-Green (-cos x sin y, sin x cos y) is steady
        for i, (x, y) in enumerate([(0.3, 1.1), (2.0, 0.5)]):
            exact = [-np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)]
            assert np.allclose(probes.values(i)[0], exact, atol=1e-14)

    def test_probe_off_grid(self):
        with pytest.raises(ConfigError):
            sc.ProbeSampler([(0.015, [0.0, 0.0])], 0.01, FourierLattice(2, 4))

    def test_step_size_advisory(self, caplog):
        cfg = SchemeConfig(n=16, dt=0.5, T=0.5)
        with caplog.at_level(logging.WARNING, logger="svmeuler"):
            sc.run(cfg, "taylor_green")
        assert any("advisory" in r.message for r in caplog.records)


class TestCheckpoint:
    U0 = {"preset": "random_divfree", "seed": 6, "kmax": 8}

    def test_resume_is_bit_identical(self, tmp_path):
        cfg = SchemeConfig(n=8, T=0.2, noise=LINEAR)
        full = sc.run(cfg, self.U0, seed=3)
        sc.run(cfg, self.U0, seed=3, checkpoint_dir=tmp_path, stop_at=7)
        resumed = sc.run(cfg, self.U0, seed=3, checkpoint_dir=tmp_path, resume=True)
        assert np.array_equal(full.state.u.coeffs, resumed.state.u.coeffs)
        assert np.array_equal(full.ledger.table(), resumed.ledger.table())

    def test_resume_complete_is_noop(self, tmp_path):
        cfg = SchemeConfig(n=4, T=0.05)
        a = sc.run(cfg, "taylor_green", checkpoint_dir=tmp_path)
        b = sc.run(cfg, "taylor_green", checkpoint_dir=tmp_path, resume=True)
        assert b.state.step_index == 5
        assert np.array_equal(a.ledger.table(), b.ledger.table())

    def test_resume_refuses_other_config(self, tmp_path):
        cfg = SchemeConfig(n=4, T=0.1)
        sc.run(cfg, "taylor_green", checkpoint_dir=tmp_path, stop_at=3)
        with pytest.raises(ContractError):
            sc.run(cfg.replace(dt=0.005), "taylor_green", checkpoint_dir=tmp_path, resume=True)


class TestEnergy:
    def test_midpoint_conserves_energy(self):
        cfg = SchemeConfig(n=8, eps=0.0, dt=0.002, T=2.0, integrator="deterministic_midpoint")
        r = sc.run(cfg, {"preset": "random_divfree", "seed": 1, "kmax": 8})
        E = r.ledger.column("E")
        assert len(E) == 1001
        assert np.max(np.abs(E - E[0])) <= 1e-10

    def test_ledger_closes_for_exact_energy_identity(self):
        # semi-implicit with pure viscosity: no convection in a single mode
        cfg = SchemeConfig(n=8, eps=0.1, dt=0.01, T=0.5)
        r = sc.run(cfg, shear_mode(8, 6))
        res = r.ledger.column("residual")
        assert np.max(np.abs(res)) < 0.1 * r.ledger.column("E")[0]

    def test_euler_maruyama_residual_first_order(self):
        u0 = {"preset": "random_divfree", "seed": 1, "kmax": 8}
        dts = (0.01, 0.005, 0.0025)
        res = []
        for dt in dts:
            r = sc.run(SchemeConfig(n=8, dt=dt, T=0.5), u0)
            res.append(np.max(np.abs(r.ledger.column("residual"))))
        assert dg.observed_order(dts, res) >= 0.9


class TestStrongOrder:
    """Strong error against a fine reference on the same path.

    With small noise the drift error dominates and EM looks first order;
    with O(1) multiplicative noise the order falls toward 1/2.
    """

    U0 = {"preset": "random_divfree", "seed": 1, "kmax": 8}
    DTS = (0.02, 0.01, 0.005)

    def _order(self, amplitude):
        cfg = SchemeConfig(n=8, T=0.5, dt=0.01,
                           noise=NoiseModel.from_law("linear", K=4, amplitude=amplitude))
        e = dg.strong_time_error(cfg, self.U0, self.DTS, self.DTS[-1] / 8, range(8))
        return dg.observed_order(self.DTS, [e[d] for d in self.DTS])

    def test_small_noise_first_order(self):
        assert 0.8 <= self._order(0.1) <= 1.3

    def test_large_noise_below_first_order(self):
        assert self._order(1.0) < 0.9
