import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svmeuler import diagnostics as dg
from svmeuler import lattice as lt
from svmeuler import presets
from svmeuler import scheme as sc
from svmeuler.ensemble import EnsembleConfig, run_ensemble
from svmeuler.errors import ContractError, DataError
from svmeuler.lattice import FourierLattice, SpectralField
from svmeuler.noise import NoiseModel, sample_path
from svmeuler.scheme import SchemeConfig

from oracles import direct_R1, direct_eval, grid_points, modes_of, quadrature, random_field

LINEAR = NoiseModel.from_law("linear", K=4, amplitude=0.2)


class TestEnergy:
    def test_zero(self):
        assert dg.energy(SpectralField.zeros(FourierLattice(2, 3))) == 0.0

    def test_unit_mode_pair_matches_quadrature(self):
        lat = FourierLattice(2, 3)
        u = SpectralField.from_modes(lat, {(0, 2): np.array([0.5, 0.0]), (0, -2): np.array([0.5, 0.0])})
        pts = grid_points(16, 2)
        vals = direct_eval(u, pts).real
        assert dg.energy(u) == pytest.approx(0.5 * quadrature(np.sum(vals**2, axis=1), 2), abs=1e-12)

    def test_taylor_green_closed_form(self):
        u = presets.taylor_green(2)
        # int (cos x sin y)^2 + (sin x cos y)^2 = 2 pi^2
        assert dg.energy(u) == pytest.approx(np.pi**2, rel=1e-14)
        vals = direct_eval(u, grid_points(12, 2)).real
        assert 0.5 * quadrature(np.sum(vals**2, axis=1), 2) == pytest.approx(np.pi**2, rel=1e-12)

    def test_random_against_quadrature(self):
        u = random_field(3, 3, 0)
        vals = direct_eval(u, grid_points(8, 3)).real
        assert dg.energy(u) == pytest.approx(0.5 * quadrature(np.sum(vals**2, axis=1), 3), rel=1e-12)


class TestLedger:
    U0 = {"preset": "random_divfree", "seed": 2, "kmax": 8}

    @pytest.mark.parametrize("integrator", ["euler_maruyama", "semi_implicit_em"])
    def test_internal_ledger_matches_recomputation(self, integrator):
        cfg = SchemeConfig(n=8, T=0.1, noise=NoiseModel.from_law("saturated_linear", K=3), integrator=integrator)
        path = sample_path(5, 3, 0.01, 0.1)
        rec = sc.TrajectoryRecorder()
        r = sc.run(cfg, self.U0, path, observers=[rec])
        rebuilt = dg.ledger_from_states([c[0] for c in rec.coeffs], cfg, path)
        assert np.allclose(r.ledger.table(), rebuilt, rtol=1e-12, atol=1e-14)

    def test_midpoint_ledger(self):
        cfg = SchemeConfig(n=6, T=0.1, integrator="deterministic_midpoint", eps=0.2)
        rec = sc.TrajectoryRecorder()
        r = sc.run(cfg, self.U0, observers=[rec])
        rebuilt = dg.ledger_from_states([c[0] for c in rec.coeffs], cfg)
        assert np.allclose(r.ledger.table(), rebuilt, rtol=1e-12, atol=1e-14)

    def test_columns_monotone(self):
        cfg = SchemeConfig(n=8, T=0.2, noise=LINEAR)
        t = sc.run(cfg, self.U0, seed=1).ledger.table()
        assert np.all(np.diff(t[:, 2]) >= 0) and np.all(np.diff(t[:, 3]) >= 0)
        assert t[0, 2] == t[0, 3] == t[0, 4] == t[0, 5] == 0

    def test_missing_rows(self):
        cfg = SchemeConfig(n=4, T=0.1)
        with pytest.raises(DataError):
            dg.ledger_from_states([np.zeros((2, 9, 9))] * 3, cfg)
        r = sc.run(cfg, "taylor_green", energy_stride=2)
        with pytest.raises(DataError):
            dg.energy_balance_residual(r.ledger, expected_rows=11)

    def test_midpoint_residual_tiny(self):
        cfg = SchemeConfig(n=8, T=1.0, dt=0.01, eps=0.0, integrator="deterministic_midpoint")
        r = sc.run(cfg, self.U0)
        assert np.max(np.abs(dg.energy_balance_residual(r.ledger, cfg.steps + 1))) <= 1e-10

    def test_semi_implicit_residual_first_order(self):
        dts = (0.01, 0.005, 0.0025)
        res = [np.max(np.abs(dg.energy_balance_residual(
            sc.run(SchemeConfig(n=8, dt=dt, T=0.5, eps=0.2, integrator="semi_implicit_em"), self.U0).ledger)))
            for dt in dts]
        assert dg.observed_order(dts, res) == pytest.approx(1.0, abs=0.15)

    def test_observed_order_exact(self):
        assert dg.observed_order([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)
        with pytest.raises(DataError):
            dg.observed_order([1, 2], [0, 1])

    def test_gbm_mean_energy(self):
        # steady base: each member is a random multiple of Taylor-Green
        s, T, M = LINEAR.alpha_square_sum, 1.0, 300
        cfg = SchemeConfig(n=4, dt=0.01, T=T, noise=LINEAR)
        res = run_ensemble(EnsembleConfig(M=M, master_seed=3, ladder=(4, 8)), cfg, "taylor_green")
        E_T = res.energies()
        E0 = dg.energy(presets.taylor_green(2))
        se = np.std(E_T, ddof=1) / np.sqrt(M)
        assert abs(np.mean(E_T) - E0 * np.exp(s * T)) <= 3 * se


class TestApriori:
    def test_conservative_flat(self):
        samples = {}
        for n in (8, 16):
            cfg = SchemeConfig(n=n, T=0.5, dt=0.005, eps=0.0, integrator="deterministic_midpoint")
            r = sc.run(cfg, {"preset": "random_divfree", "seed": 0, "kmax": 6})
            samples[n] = [dg.sup_norm_power(r.ledger, 2)]
        rep = dg.apriori_check(samples, p=2, tol=1e-9)
        assert rep.passed
        assert rep.moments[0] == pytest.approx(rep.moments[1], rel=1e-10)

    def test_taylor_green_sup_is_initial(self):
        r = sc.run(SchemeConfig(n=4, T=0.5), "taylor_green")
        assert dg.sup_norm_power(r.ledger, 1) == pytest.approx(lt.l2_norm(presets.taylor_green(2)), rel=1e-14)

    def test_ratio_failure(self):
        rep = dg.apriori_check({8: [1.0], 16: [1.2]}, tol=0.1)
        assert not rep.passed and rep.ratios == [pytest.approx(1.2)]

    def test_envelope(self):
        g = dg.gbm_moment_growth(0.1, 2, 1.0)
        assert g == pytest.approx(np.exp(0.1))
        assert dg.apriori_check({8: [1.0], 16: [1.0]}, initial=1.0, growth=g).passed
        assert not dg.apriori_check({8: [1.5], 16: [1.5]}, initial=1.0, growth=g).passed

    def test_needs_two(self):
        with pytest.raises(ContractError):
            dg.apriori_check({8: [1.0]})


class TestConsistency:
    def test_R1_zero_when_phi_resolved(self):
        u = random_field(2, 6, 0)
        phi = lt.leray_project(random_field(2, 6, 1))
        assert abs(dg.consistency_R1(u, phi)) <= 1e-12

    def test_R1_zero_field(self):
        phi = random_field(2, 10, 1)
        assert dg.consistency_R1(SpectralField.zeros(FourierLattice(2, 6)), phi) == 0.0

    def test_R1_taylor_green_single_mode(self):
        # u (x) u of Taylor-Green reaches |k| = 2, so a mode at n + 1 = 2 sees it.
        # div(u (x) u) is a gradient here, so only a compressible phi gives R1 != 0.
        n = 1
        u = presets.taylor_green(2)
        lat = FourierLattice(2, n + 1)
        phi = SpectralField.from_modes(lat, {(2, 0): np.array([0.7j, 0.0]), (-2, 0): np.array([-0.7j, 0.0])})
        value = dg.consistency_R1(u, phi, n)
        assert abs(value) > 0.1
        assert value == pytest.approx(direct_R1(u, phi, n, 16), abs=1e-11)

    @pytest.mark.parametrize("seed", range(3))
    def test_R1_random_against_direct(self, seed):
        u = random_field(2, 4, seed)
        phi = random_field(2, 7, seed + 10, divfree=False)
        assert dg.consistency_R1(u, phi) == pytest.approx(direct_R1(u, phi, 4, 32), abs=1e-11)

    def test_R1_3d_against_direct(self):
        u = random_field(3, 2, 0)
        phi = random_field(3, 3, 1, divfree=False)
        assert dg.consistency_R1(u, phi) == pytest.approx(direct_R1(u, phi, 2, 12), rel=1e-12, abs=1e-11)

    def test_R1_phi_too_coarse(self):
        with pytest.raises(ContractError):
            dg.consistency_R1(random_field(2, 6, 0), random_field(2, 4, 0))

    def test_N_trivial(self):
        u = random_field(2, 6, 0)
        assert dg.consistency_N(u, random_field(2, 8, 1), 3, 0.0)[0] == 0.0
        low = lt.to_cutoff(lt.leray_project(random_field(2, 3, 1)), 6)
        assert abs(dg.consistency_N(u, low, 3, 0.5)[0]) <= 1e-15

    @pytest.mark.parametrize("seed", range(3))
    def test_N_direct_sum(self, seed):
        u = random_field(2, 6, seed)
        phi = random_field(2, 9, seed + 5)
        m, eps = 2, 0.3
        value, bound = dg.consistency_N(u, phi, m, eps)
        uu = modes_of(u)
        direct = 0.0
        for k, c in modes_of(phi).items():
            if max(abs(v) for v in k) > m and k in uu:
                direct += eps * -(k[0] ** 2 + k[1] ** 2) * np.real(np.vdot(uu[k], c))
        assert value == pytest.approx((2 * np.pi) ** 2 * direct, rel=1e-12)
        assert abs(value) <= bound

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 5), st.floats(0, 2))
    def test_N_bound_property(self, seed, m, eps):
        u = random_field(2, 6, seed)
        phi = random_field(2, 8, seed + 1, decay=0.0)
        value, bound = dg.consistency_N(u, phi, m, eps)
        assert abs(value) <= bound * (1 + 1e-12)

    def test_report(self):
        u = random_field(2, 6, 0)
        phi = random_field(2, 12, 1)
        rep = dg.consistency_report(u, phi, 2, 0.1, "p", C_hat=2.0)
        assert rep.R1_bound == pytest.approx(2.0 * rep.R1_scale)
        assert rep.as_dict()["phi_id"] == "p"


class TestRelativeEnergy:
    def test_identical_members(self):
        u = random_field(2, 6, 0)
        assert dg.relative_energy([u, u, u], u) == (0.0, 0.0)

    def test_single_member_zero_reference(self):
        u = random_field(2, 6, 0)
        zero = SpectralField.zeros(u.lattice)
        value, H = dg.relative_energy([u], zero)
        assert value == pytest.approx(dg.energy(u), rel=1e-15) and H == 0.0
        value, H = dg.relative_energy([u], zero, surrogate="ensemble_variance")
        assert H == pytest.approx(0.0, abs=1e-12)

    def test_plus_minus_pair(self):
        u = random_field(2, 6, 3)
        zero = SpectralField.zeros(u.lattice)
        assert dg.relative_energy([u, u * -1.0], zero)[0] == pytest.approx(dg.energy(u), rel=1e-15)

    def test_surrogate_counts_spread(self):
        u = random_field(2, 6, 3)
        zero = SpectralField.zeros(u.lattice)
        value, H = dg.relative_energy([u, u * -1.0], zero, surrogate="ensemble_variance")
        assert H == pytest.approx(dg.energy(u), rel=1e-14)
        assert value == pytest.approx(2 * dg.energy(u), rel=1e-14)

    def test_algebraic_identity(self):
        members = [random_field(2, 5, s) for s in range(4)]
        U = random_field(2, 8, 9)
        value, _ = dg.relative_energy(members, U)
        expected = np.mean([dg.energy(lt.to_cutoff(m, 8) - U) for m in members])
        assert value == pytest.approx(expected, rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            dg.relative_energy([random_field(2, 4, 0)], random_field(3, 4, 0))

    def test_grad_sup_taylor_green(self):
        # grad of (-cos x sin y, sin x cos y) has operator norm 1 at (0, 0)
        assert dg.grad_sup(presets.taylor_green(2, n=4)) == pytest.approx(1.0, rel=1e-12)
        assert dg.gronwall_constant([presets.taylor_green(2)], 0.5) == pytest.approx(2.5, rel=1e-12)


class TestGronwall:
    def test_constant_series_zero_rate(self):
        t = np.linspace(0, 1, 11)
        assert dg.gronwall_envelope(t, np.ones(11), 0.0, slack=0.0).passed
        assert not dg.gronwall_envelope(t, np.linspace(1, 1.1, 11), 0.0, slack=0.0).passed
        assert dg.gronwall_envelope(t, np.linspace(1, 0.5, 11), 0.0, slack=0.0).passed

    def test_fast_growth_fails(self):
        t = np.linspace(0, 1, 11)
        rep = dg.gronwall_envelope(t, np.exp(2 * t), 1.0)
        assert not rep.passed and rep.worst_ratio > 1

    def test_exact_exponential_passes(self):
        t = np.linspace(0, 2, 21)
        assert dg.gronwall_envelope(t, 0.3 * np.exp(1.5 * t), 1.5, slack=0.0).passed

    def test_zero_series_with_floor(self):
        t = np.linspace(0, 1, 5)
        assert dg.gronwall_envelope(t, np.zeros(5), 3.0).passed
        assert not dg.gronwall_envelope(t, np.array([0, 0, 1e-20, 0, 0]), 3.0).passed
        assert dg.gronwall_envelope(t, np.array([0, 0, 1e-20, 0, 0]), 3.0, floor=1e-18).passed

    def test_bad_input(self):
        with pytest.raises(DataError):
            dg.gronwall_envelope([0, 1], [1.0], 1.0)
        with pytest.raises(DataError):
            dg.gronwall_envelope([0, 1], [1.0, -1.0], 1.0)

    def test_same_data_same_noise_stays_zero(self):
        cfg = SchemeConfig(n=8, T=0.2, noise=LINEAR)
        a = sc.run(cfg, "taylor_green", seed=1, observers=[sc.TrajectoryRecorder(5)])
        b = sc.run(cfg, "taylor_green", seed=1, observers=[sc.TrajectoryRecorder(5)])
        va, vb = a.observers[0].fields(cfg.lattice), b.observers[0].fields(cfg.lattice)
        values = [dg.relative_energy([x], y)[0] for x, y in zip(va, vb)]
        assert dg.gronwall_envelope(a.observers[0].times, values, 1.0).passed
