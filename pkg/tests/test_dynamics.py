import numpy as np
import pytest

from bigdiff import dynamics as dyn
from bigdiff import spectral as sp

DOM = sp.DomainSpec()

trapz = getattr(np, "trapezoid", np.trapz)


def bisect_root(fn, lo, hi, iters=200):
    """Plain bisection oracle."""
    flo = fn(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if flo * fn(mid) <= 0:
            hi = mid
        else:
            lo = mid
            flo = fn(lo)
    return 0.5 * (lo + hi)


USTAR = bisect_root(lambda u: 2 * np.tanh(u) - u, 1.0, 3.0)


class TestNonlinearityLibrary:
    @pytest.mark.parametrize("factory,n", [
        (lambda: dyn.tanh_pitchfork(2.0), 1),
        (lambda: dyn.tanh_pitchfork(0.5), 1),
        (lambda: dyn.saturated_cubic(2.0), 1),
        (lambda: dyn.coupled_tanh(), 2),
        (lambda: dyn.zero_nonlinearity(), 1),
    ])
    def test_builtins_pass_validation(self, factory, n):
        dyn.validate_nonlinearity(factory(), n, rng=np.random.default_rng(1))

    def test_linear_desk_variant_skips_bound(self):
        F = dyn.linear_nonlinearity(5.0)
        assert F.bound is None
        dyn.validate_nonlinearity(F, 1, rng=np.random.default_rng(2))

    def test_bound_violation_detected(self):
        bad = dyn.Nonlinearity("bad", {}, lambda u: 2 * u, lambda u: dyn._diagonal_jacobian(np.full_like(u, 2.0)), bound=1.0, lip=2.0)
        with pytest.raises(ValueError, match="bound"):
            dyn.validate_nonlinearity(bad, 1)

    def test_jacobian_mismatch_detected(self):
        bad = dyn.Nonlinearity("bad", {}, lambda u: np.tanh(u), lambda u: dyn._diagonal_jacobian(np.ones_like(u)), bound=1.0, lip=1.0)
        with pytest.raises(ValueError, match="Jacobian"):
            dyn.validate_nonlinearity(bad, 1)


class TestEvaluateF:
    def test_zero_at_zero(self):
        basis = sp.build_basis(DOM, 8)
        F = dyn.tanh_pitchfork(2.0)
        out = dyn.evaluate_F(sp.constant_field([0.0], basis), F)
        assert np.max(np.abs(out.coeffs)) == 0.0

    def test_constant_maps_to_constant(self):
        basis = sp.build_basis(DOM, 8)
        F = dyn.tanh_pitchfork(2.0)
        out = dyn.evaluate_F(sp.constant_field([0.7], basis), F)
        assert out.coeffs[0, 0] == pytest.approx(2 * np.tanh(0.7), rel=1e-15)
        assert np.max(np.abs(out.coeffs[0, 1:])) < 1e-15

    def test_small_amplitude_linearization(self):
        # 2 tanh(a phi_1) = 2 a phi_1 + O(a^3); Taylor oracle at a = 1e-4
        basis = sp.build_basis(DOM, 16)
        F = dyn.tanh_pitchfork(2.0)
        a = 1e-4
        out = dyn.evaluate_F(sp.mode_field(basis, 1, amplitude=a), F)
        expected = sp.mode_field(basis, 1, amplitude=2 * a)
        assert np.max(np.abs(out.coeffs - expected.coeffs)) < 1e-11


class TestSplitting:
    def test_constant_split(self):
        basis = sp.build_basis(DOM, 8)
        v, w = dyn.split_vw(sp.constant_field([2.5, -1.0], basis))
        assert np.allclose(v, [2.5, -1.0], atol=0)
        assert np.max(np.abs(w.coeffs)) == 0.0

    def test_mode_one_split(self):
        basis = sp.build_basis(DOM, 8)
        f = sp.mode_field(basis, 1)
        v, w = dyn.split_vw(f)
        assert v[0] == 0.0
        assert np.max(np.abs(w.coeffs - f.coeffs)) == 0.0

    def test_recombination_exact(self):
        basis = sp.build_basis(DOM, 16)
        rng = np.random.default_rng(4)
        f = sp.random_field(basis, 2, rng)
        v, w = dyn.split_vw(f)
        recombined = sp.constant_field(v, basis) + w
        assert np.max(np.abs(recombined.coeffs - f.coeffs)) < 1e-15
        assert np.max(np.abs(sp.average_projection(w))) == 0.0


class TestSQSplitting:
    def test_zero_w_reduces_to_F(self):
        basis = sp.build_basis(DOM, 8)
        F = dyn.tanh_pitchfork(2.0)
        w = sp.mode_field(basis, 1, amplitude=0.0)
        v = np.array([0.9])
        assert dyn.S_of(v, w, F)[0] == pytest.approx(2 * np.tanh(0.9), rel=1e-14)
        assert sp.l2_norm(dyn.Q_of(v, w, F)) < 1e-14

    def test_odd_symmetry_zeroes_average(self):
        # F odd, v = 0, w proportional to phi_1 (odd about x = 1/2)
        basis = sp.build_basis(DOM, 16)
        F = dyn.tanh_pitchfork(2.0)
        w = sp.mode_field(basis, 1, amplitude=0.8)
        assert abs(dyn.S_of(np.array([0.0]), w, F)[0]) < 1e-14

    def test_matches_fine_quadrature(self):
        basis = sp.build_basis(DOM, 128)
        F = dyn.tanh_pitchfork(2.0)
        w = sp.mode_field(basis, 1, amplitude=0.3)
        v = np.array([1.0])
        x = np.linspace(0.0, 1.0, 400001)
        values = 2 * np.tanh(1.0 + 0.3 * np.sqrt(2) * np.cos(np.pi * x))
        s_oracle = trapz(values, x)
        assert dyn.S_of(v, w, F)[0] == pytest.approx(s_oracle, abs=1e-10)
        q = dyn.Q_of(v, w, F)
        assert abs(sp.average_projection(q)[0]) < 1e-12
        # Q on the grid equals F(v+w) minus its average
        q_vals = basis.to_grid(q.coeffs)[0]
        direct = 2 * np.tanh(1.0 + 0.3 * np.sqrt(2) * np.cos(np.pi * basis.nodes)) - s_oracle
        assert np.max(np.abs(q_vals - direct)) < 1e-10


class TestLinearSemigroup:
    def test_identity_at_zero(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([3.0])
        rng = np.random.default_rng(8)
        f = sp.random_field(basis, 1, rng)
        out = dyn.linear_semigroup_apply(f, E, 0.0)
        assert np.max(np.abs(out.coeffs - f.coeffs)) == 0.0

    def test_constant_decay(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([3.0])
        out = dyn.linear_semigroup_apply(sp.constant_field([2.0], basis), E, 1.0)
        assert out.coeffs[0, 0] == pytest.approx(2.0 * np.exp(-1.0), rel=1e-15)

    def test_semigroup_property(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([0.5, 2.0])
        rng = np.random.default_rng(10)
        f = sp.random_field(basis, 2, rng)
        once = dyn.linear_semigroup_apply(f, E, 0.7)
        twice = dyn.linear_semigroup_apply(once, E, 0.3)
        direct = dyn.linear_semigroup_apply(f, E, 1.0)
        assert np.max(np.abs(twice.coeffs - direct.coeffs)) < 1e-12


class TestKernelBound:
    def test_brute_force_oracle(self):
        basis = sp.build_basis(DOM, 16)
        E = sp.diffusion([1.5, 4.0])
        for t in (1e-4, 1e-2, 0.3, 2.0):
            gains = [E.eps[i] * basis.eigenvalues[k] + 1.0
                     for i in range(2) for k in range(1, 17)]
            oracle = max(np.exp(-a * t) * np.sqrt(a) for a in gains)
            assert dyn.semigroup_kernel_bound(E, basis, t) == pytest.approx(oracle, rel=1e-14)

    def test_large_t_closed_form(self):
        basis = sp.build_basis(DOM, 16)
        E = sp.diffusion([2.0])
        lam2 = E.second_eigenvalue(basis)
        t = 1.0  # 1/(2t) = 0.5 < lam2
        assert dyn.semigroup_kernel_bound(E, basis, t) == pytest.approx(np.exp(-lam2 * t) * np.sqrt(lam2), rel=1e-14)

    def test_small_t_calculus_bound(self):
        # max_a exp(-a t) sqrt(a) over a > 0 sits at a = 1/(2t)
        basis = sp.build_basis(DOM, 64)
        E = sp.diffusion([1.0])
        for t in (1e-5, 1e-4, 1e-3):
            assert dyn.semigroup_kernel_bound(E, basis, t) <= (2 * np.e * t) ** -0.5 + 1e-14

    def test_two_case_proof_bound(self):
        basis = sp.build_basis(DOM, 32)
        E = sp.diffusion([1.0])
        lam2 = E.second_eigenvalue(basis)
        for t in (1e-3, 0.01, 0.1, 1.0):
            kappa = dyn.semigroup_kernel_bound(E, basis, t)
            bound = np.exp(-lam2 * t) * max(np.sqrt(lam2), (2 * np.e * t) ** -0.5 * np.exp(lam2 * t))
            assert kappa <= bound + 1e-12

    def test_worst_case_field_attains_kappa(self):
        basis = sp.build_basis(DOM, 16)
        E = sp.diffusion([1.0])
        t = 0.05
        gains = E.gains(basis)[0, 1:]
        k_star = 1 + int(np.argmax(np.exp(-gains * t) * np.sqrt(gains)))
        z = sp.mode_field(basis, k_star)
        out = dyn.linear_semigroup_apply(z, E, t)
        ratio = sp.energy_norm(out, E) / sp.l2_norm(z)
        assert ratio == pytest.approx(dyn.semigroup_kernel_bound(E, basis, t), rel=1e-13)

    def test_nonpositive_t_rejected(self):
        basis = sp.build_basis(DOM, 8)
        with pytest.raises(ValueError):
            dyn.semigroup_kernel_bound(sp.diffusion([1.0]), basis, 0.0)


class TestOperationalConstants:
    def test_mu_formula_at_unit_M(self):
        # arbitrary-precision oracle: sqrt(2 sqrt(pi)) and (mu-1)/pi^2
        import mpmath as mp
        mp.mp.dps = 30
        mu_oracle = float(mp.sqrt(2 * mp.sqrt(mp.pi)))
        assert dyn.mu_from_M(1.0) == pytest.approx(mu_oracle, abs=1e-12)
        assert dyn.mu_from_M(1.0) == pytest.approx(1.8827925, abs=1e-6)
        mu_bar = (dyn.mu_from_M(1.0) - 1.0) / np.pi**2
        assert mu_bar == pytest.approx(float((mp.sqrt(2 * mp.sqrt(mp.pi)) - 1) / mp.pi**2), abs=1e-12)
        assert mu_bar == pytest.approx(0.0894456, abs=1e-6)

    def test_gamma_half(self):
        assert np.sqrt(np.pi) == pytest.approx(1.7724539, abs=1e-7)

    def test_M_matches_closed_form_on_horizon(self):
        # On (0, T*] the supremum of kappa(t) e^{lam2 t} sqrt(t) is sqrt(lam2 T*)
        # (the integrand equals sqrt(lam2 t) once t > 1/(2 lam2)), so the
        # operational M grows with both the horizon and d.
        basis = sp.build_basis(DOM, 32)
        for d in (1.0, 4.0, 16.0):
            E = sp.diffusion([d])
            consts = dyn.compute_M_and_mu(E, basis, horizon=10.0)
            lam2 = E.second_eigenvalue(basis)
            assert consts.M == pytest.approx(np.sqrt(lam2 * 10.0), rel=1e-6)
            assert consts.mu == pytest.approx(dyn.mu_from_M(consts.M), rel=1e-15)
            assert consts.mu_bar == pytest.approx((consts.mu - 1) / np.pi**2, rel=1e-15)

    def test_M_increases_with_d(self):
        basis = sp.build_basis(DOM, 16)
        values = [dyn.compute_M_and_mu(sp.diffusion([d]), basis, horizon=10.0).M
                  for d in (1.0, 2.0, 4.0, 8.0)]
        assert all(b > a for a, b in zip(values, values[1:]))


class TestEvolvePDE:
    def test_linear_problem_exact(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([2.0])
        F = dyn.zero_nonlinearity()
        u0 = sp.constant_field([1.0], basis) + sp.mode_field(basis, 1, amplitude=0.5)
        traj = dyn.evolve_pde(u0, E, F, T=1.0, dt=1e-3, stride=100)
        lam2 = E.second_eigenvalue(basis)
        for i, t in enumerate(traj.times):
            assert traj.coeffs[i, 0, 0] == pytest.approx(np.exp(-t), rel=1e-10)
            assert traj.coeffs[i, 0, 1] == pytest.approx(0.5 * np.exp(-lam2 * t), rel=1e-10)

    def test_constant_subspace_matches_ode(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([4.0])
        F = dyn.tanh_pitchfork(2.0)
        traj = dyn.evolve_pde(sp.constant_field([0.3], basis), E, F, T=2.0, dt=1e-3, stride=10)
        assert np.max(traj.w_xhalf) < 1e-11  # constants stay constant
        times, states = dyn.evolve_ode(np.array([0.3]), F, T=2.0, dt=1e-3, stride=10)
        assert np.allclose(times, traj.times, atol=1e-12)
        # agreement is limited by the second-order ETD truncation error
        assert np.max(np.abs(states[:, 0] - traj.v[:, 0])) < 5e-6

    def test_constant_subspace_matches_ode_refined(self):
        # at dt = 2e-5 the ETD2RK truncation error drops below 1e-10
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([4.0])
        F = dyn.tanh_pitchfork(2.0)
        traj = dyn.evolve_pde(sp.constant_field([0.3], basis), E, F, T=0.5, dt=2e-5, stride=2500)
        _, states = dyn.evolve_ode(np.array([0.3]), F, T=0.5, dt=1e-3, stride=50)
        assert np.max(np.abs(states[:, 0] - traj.v[:, 0])) < 1e-10

    def test_etd2rk_second_order(self):
        basis = sp.build_basis(DOM, 16)
        E = sp.diffusion([1.0])
        F = dyn.tanh_pitchfork(2.0)
        u0 = sp.constant_field([0.4], basis) + sp.mode_field(basis, 1, amplitude=0.3)
        finals = {}
        for dt in (4e-3, 2e-3, 1e-3):
            traj = dyn.evolve_pde(u0, E, F, T=1.0, dt=dt, stride=10**6)
            finals[dt] = traj.coeffs[-1]
        e1 = np.linalg.norm(finals[4e-3] - finals[2e-3])
        e2 = np.linalg.norm(finals[2e-3] - finals[1e-3])
        order = np.log2(e1 / e2)
        assert 1.7 < order < 2.3

    def test_etd1_available_and_first_order(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([1.0])
        F = dyn.tanh_pitchfork(2.0)
        u0 = sp.constant_field([0.4], basis)
        finals = {}
        for dt in (4e-3, 2e-3, 1e-3):
            traj = dyn.evolve_pde(u0, E, F, T=1.0, dt=dt, scheme="etd1", stride=10**6)
            finals[dt] = traj.coeffs[-1]
        e1 = np.linalg.norm(finals[4e-3] - finals[2e-3])
        e2 = np.linalg.norm(finals[2e-3] - finals[1e-3])
        assert 0.8 < np.log2(e1 / e2) < 1.3

    def test_blow_up_aborts_with_time(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([1.0])
        F = dyn.linear_nonlinearity(6.0)
        u0 = sp.constant_field([10.0], basis)
        with pytest.raises(dyn.BlowUpError) as err:
            dyn.evolve_pde(u0, E, F, T=10.0, dt=1e-3)
        assert 0 < err.value.time < 10.0

    def test_bad_scheme_rejected(self):
        basis = sp.build_basis(DOM, 8)
        with pytest.raises(ValueError, match="scheme"):
            dyn.evolve_pde(sp.constant_field([1.0], basis), sp.diffusion([1.0]),
                           dyn.zero_nonlinearity(), T=1.0, dt=1e-3, scheme="rk4")

    def test_bookkeeping_identity(self):
        # central differences of v along the trajectory reproduce -v + S(v, w)
        basis = sp.build_basis(DOM, 16)
        E = sp.diffusion([1.0])
        F = dyn.tanh_pitchfork(2.0)
        u0 = sp.constant_field([0.5], basis) + sp.mode_field(basis, 1, amplitude=0.4)
        traj = dyn.evolve_pde(u0, E, F, T=2.0, dt=1e-3, stride=10)
        t, v = traj.times, traj.v[:, 0]
        for i in range(5, len(t) - 5, 7):
            dv = (v[i + 1] - v[i - 1]) / (t[i + 1] - t[i - 1])
            _, w = dyn.split_vw(traj.state(i))
            rhs = -v[i] + dyn.S_of(traj.v[i], w, F)[0]
            assert dv == pytest.approx(rhs, rel=1e-3, abs=1e-8)

    def test_dissipative_absorbing_set(self):
        basis = sp.build_basis(DOM, 16)
        E = sp.diffusion([1.0])
        F = dyn.tanh_pitchfork(2.0)
        u0 = sp.constant_field([3.5], basis) + sp.mode_field(basis, 1, amplitude=1.5)
        traj = dyn.evolve_pde(u0, E, F, T=8.0, dt=1e-3, stride=50)
        tail = traj.times > 4.0
        assert np.all(np.abs(traj.v[tail, 0]) <= F.bound + 0.1)
        assert np.all(traj.w_xhalf[tail] <= F.bound)

    def test_csv_columns(self, tmp_path):
        basis = sp.build_basis(DOM, 8)
        traj = dyn.evolve_pde(sp.constant_field([0.5, 0.1], basis), sp.diffusion([1.0, 2.0]),
                              dyn.coupled_tanh(), T=0.1, dt=1e-2, stride=2)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "t,v_1,v_2,w_xhalf,w_l2,Q_l2"


class TestEvolveODE:
    def test_pure_decay(self):
        times, states = dyn.evolve_ode(np.array([1.0]), dyn.zero_nonlinearity(), T=1.0, dt=1e-3)
        assert states[-1, 0] == pytest.approx(np.exp(-1.0), abs=1e-9)

    def test_equilibrium_is_fixed(self):
        _, states = dyn.evolve_ode(np.array([0.0]), dyn.tanh_pitchfork(2.0), T=5.0, dt=1e-3)
        assert np.max(np.abs(states)) == 0.0

    def test_converges_to_bistable_state(self):
        _, states = dyn.evolve_ode(np.array([0.1]), dyn.tanh_pitchfork(2.0), T=30.0, dt=1e-3)
        assert states[-1, 0] == pytest.approx(USTAR, abs=1e-8)
        assert USTAR == pytest.approx(1.91501, abs=1e-5)


class TestDecayFit:
    def test_linear_problem_rate_exact(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([2.0])
        u0 = sp.constant_field([1.0], basis) + sp.mode_field(basis, 1, amplitude=0.5)
        traj = dyn.evolve_pde(u0, E, dyn.zero_nonlinearity(), T=1.5, dt=1e-3, stride=10)
        fit = dyn.decay_rate_fit(traj, "w_xhalf")
        lam2 = E.second_eigenvalue(basis)
        assert abs(fit.fitted_rate - lam2) / lam2 < 1e-3
        assert fit.residual < 1e-8

    def test_tanh_rate_respects_one_sided_bound(self):
        basis = sp.build_basis(DOM, 16)
        E = sp.diffusion([2.0])
        F = dyn.tanh_pitchfork(2.0)
        u0 = sp.constant_field([1.8], basis) + sp.mode_field(basis, 1, amplitude=0.3)
        traj = dyn.evolve_pde(u0, E, F, T=1.5, dt=1e-3, stride=10)
        consts = dyn.compute_M_and_mu(E, basis, horizon=10.0)
        fit = dyn.decay_rate_fit(traj, "w_xhalf", mu=consts.mu)
        assert fit.fitted_rate >= fit.theoretical_rate
        fit_q = dyn.decay_rate_fit(traj, "Q_norm", mu=consts.mu)
        assert fit_q.fitted_rate >= fit_q.theoretical_rate

    def test_constant_quantity(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([1.0])
        traj = dyn.evolve_pde(sp.constant_field([1.0], basis), E, dyn.zero_nonlinearity(),
                              T=1.0, dt=1e-2, stride=10)
        fake = dyn.Trajectory(times=traj.times, coeffs=traj.coeffs, basis=basis,
                              diffusion=E, v=traj.v, w_xhalf=np.full_like(traj.times, 0.7),
                              w_l2=traj.w_l2, q_l2=traj.q_l2)
        fit = dyn.decay_rate_fit(fake, "w_xhalf")
        assert fit.fitted_rate == pytest.approx(0.0, abs=1e-14)
        assert fit.residual == pytest.approx(0.0, abs=1e-14)

    def test_underflow_window_truncated_and_flagged(self):
        basis = sp.build_basis(DOM, 8)
        E = sp.diffusion([64.0])
        u0 = sp.constant_field([1.0], basis) + sp.mode_field(basis, 1, amplitude=0.5)
        traj = dyn.evolve_pde(u0, E, dyn.zero_nonlinearity(), T=5.0, dt=1e-3, stride=10)
        fit = dyn.decay_rate_fit(traj, "w_xhalf")
        assert fit.truncated
        lam2 = E.second_eigenvalue(basis)
        assert abs(fit.fitted_rate - lam2) / lam2 < 1e-3
