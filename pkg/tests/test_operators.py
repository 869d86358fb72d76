import numpy as np
import pytest

from levylab.core import (
    Atoms,
    Chi1,
    Chi2,
    ConstantTripletField,
    LevyTriplet,
    StableLike,
    TripletField,
    UserDensity,
)
from levylab.errors import ValidationError
from levylab.operators import (
    TestFunction,
    apply_operator,
    bump,
    chi_drift_adjustment,
    chi_quadratic_matrix,
    convergence_gaps,
    default_test_functions,
    measure_integral,
    pmp_spot_check,
    vanishing_test_functions,
)


def combine(f, g, alpha, beta):
    return TestFunction(
        name="combo",
        fn=lambda p: alpha * f.fn(p) + beta * g.fn(p),
        grad=lambda p: alpha * f.grad(p) + beta * g.grad(p),
        hess=lambda p: alpha * f.hess(p) + beta * g.hess(p),
        support_low=np.minimum(f.support_low, g.support_low),
        support_high=np.maximum(f.support_high, g.support_high),
        hess_bound=abs(alpha) * f.hess_bound + abs(beta) * g.hess_bound,
    )


class TestTestFunction:
    def test_bump_derivatives_match_finite_differences(self):
        for radius in (0.5, 1.0, 2.0):
            bump([0.3], radius).validate_derivatives(seed=radius_hash(radius))

    def test_bump_support(self):
        f = bump([1.0], 0.5)
        assert f.value_at([1.0]) == pytest.approx(1.0)
        assert f.value_at([1.6]) == 0.0
        assert np.all(f.grad(np.array([[1.7]])) == 0.0)

    def test_derivative_validation_catches_errors(self):
        f = bump([0.0], 1.0)
        broken = TestFunction(
            name="broken", fn=f.fn, grad=lambda p: 2.0 * f.grad(p), hess=f.hess,
            support_low=f.support_low, support_high=f.support_high,
            hess_bound=f.hess_bound)
        with pytest.raises(ValidationError):
            broken.validate_derivatives()


def radius_hash(r):
    return int(r * 10)


class TestApplyOperator:
    def test_pure_second_derivative(self):
        f = bump([0.0], 2.0)
        trip = LevyTriplet([0.0], [[1.0]], None)
        expected = 0.5 * f.hess_at([0.0])[0, 0]
        assert apply_operator(trip, Chi2(), f, [0.0]) == pytest.approx(expected, abs=1e-14)

    def test_pure_drift(self):
        f = bump([0.0], 2.0)
        trip = LevyTriplet([1.0], [[0.0]], None)
        expected = f.grad_at([0.5])[0]
        assert apply_operator(trip, Chi2(), f, [0.5]) == pytest.approx(expected, abs=1e-14)

    def test_single_atom_outside_unit_ball(self):
        f = bump([2.0], 0.5)  # f(2)=1, f(0)=0
        trip = LevyTriplet([0.0], [[0.0]], Atoms([((2.0,), 0.5)]))
        assert apply_operator(trip, Chi2(), f, [0.0]) == pytest.approx(0.5, abs=1e-14)

    def test_cemetery_atom(self):
        f = bump([0.0], 1.0)
        from levylab.core import DELTA
        trip = LevyTriplet([0.0], [[0.0]], Atoms([(DELTA, 2.0)], dim=1))
        # f(DELTA) = 0, so the jump integral is -2 f(a)
        assert apply_operator(trip, Chi2(), f, [0.0]) == pytest.approx(-2.0, abs=1e-12)

    def test_base_point_atom_rejected(self):
        f = bump([0.0], 1.0)
        trip = LevyTriplet([0.0], [[0.0]], Atoms([((0.3,), 1.0)]))
        with pytest.raises(ValidationError):
            apply_operator(trip, Chi2(), f, [0.3])

    def test_stable_vs_brute_force(self):
        # independent oracle: direct quadrature with the singular core excluded
        # and Taylor-bounded; tail to infinity in closed form
        from scipy.integrate import quad
        f = bump([0.0], 2.0)
        c, alpha = 1.0, 1.2
        trip = LevyTriplet([0.0], [[0.0]], StableLike(c=c, alpha=alpha, dim=1))
        a = 0.3
        fa = f.value_at([a])
        ga = f.grad_at([a])[0]

        def integrand(h):
            chi = h if abs(h) < 1 else 0.0
            return (f.value_at([a + h]) - fa - chi * ga) * c * abs(h) ** (-1 - alpha)

        inner, _ = quad(integrand, 1e-6, 8.0, limit=800, epsabs=1e-12)
        inner2, _ = quad(integrand, -8.0, -1e-6, limit=800, epsabs=1e-12)
        tail = -fa * 2 * c * 8.0 ** (-alpha) / alpha
        core = 0.5 * f.hess_at([a])[0, 0] * trip.jumps.truncated_second_moment(1e-6)
        val = apply_operator(trip, Chi2(), f, [a])
        assert val == pytest.approx(inner + inner2 + tail + core, abs=5e-6)

    def test_linearity(self, scratch_rng):
        f1 = bump([0.2], 1.5)
        f2 = bump([-0.4], 0.8)
        trip = LevyTriplet([0.3], [[0.7]], StableLike(c=0.5, alpha=1.1, dim=1))
        for _ in range(5):
            al, be = scratch_rng.uniform(-2, 2, size=2)
            comb = combine(f1, f2, al, be)
            lhs = apply_operator(trip, Chi2(), comb, [0.1])
            rhs = al * apply_operator(trip, Chi2(), f1, [0.1]) \
                + be * apply_operator(trip, Chi2(), f2, [0.1])
            assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_refinement_stability(self):
        f = bump([0.0], 2.0)
        trip = LevyTriplet([0.0], [[0.0]], StableLike(c=1.0, alpha=1.5, dim=1))
        coarse = apply_operator(trip, Chi2(), f, [0.1], tol_abs=1e-8, tol_rel=1e-6)
        fine = apply_operator(trip, Chi2(), f, [0.1], tol_abs=5e-9, tol_rel=5e-7)
        assert abs(coarse - fine) < 1e-8 + 1e-6 * abs(fine)

    def test_compensation_invariance(self, scratch_rng):
        # switching conventions with the matching drift adjustment is exact
        for case in range(6):
            if case % 2 == 0:
                nu = Atoms([((1.5,), 0.8), ((-0.4,), 1.2)])
            else:
                nu = StableLike(c=0.7, alpha=0.8, dim=1)
            delta = np.array([scratch_rng.uniform(-1, 1)])
            a = np.array([scratch_rng.uniform(-0.3, 0.3)])
            f = bump([0.1], 1.8)
            adj = chi_drift_adjustment(nu, Chi1(), Chi2(), a=a)
            v1 = apply_operator(LevyTriplet(delta, [[0.4]], nu), Chi1(), f, a,
                                tol_abs=1e-11, tol_rel=1e-10)
            v2 = apply_operator(LevyTriplet(delta + adj, [[0.4]], nu), Chi2(), f, a,
                                tol_abs=1e-11, tol_rel=1e-10)
            assert v1 == pytest.approx(v2, abs=1e-8)

    def test_two_dimensional_stable(self):
        # isotropic quadratic behaviour: value matches the radial closed form
        # L f = (1/2) tr(H) * S1 * integral r^(1-a) over compensated region...
        # cross-checked against a dense polar quadrature oracle instead.
        f = bump([0.0, 0.0], 1.5)
        trip = LevyTriplet([0.0, 0.0], np.zeros((2, 2)), StableLike(c=1.0, alpha=1.0, dim=2))
        val = apply_operator(trip, Chi2(), f, [0.0, 0.0])
        # oracle: G(r) = mean over angles of f(r theta) - f(0), compensation odd
        from scipy.integrate import quad
        angles = 2 * np.pi * (np.arange(512) + 0.5) / 512

        def g_of_r(r):
            pts = np.stack([r * np.cos(angles), r * np.sin(angles)], axis=1)
            return float(np.mean(f(pts)) - f.value_at([0.0, 0.0])) * 2 * np.pi

        body, _ = quad(lambda r: g_of_r(r) * r ** -2, 1e-4, 1.6, limit=400)
        head = 0.5 * np.trace(f.hess_at([0.0, 0.0])) * np.pi * (1e-4) ** 1  # ~0 anyway
        tail = -f.value_at([0.0, 0.0]) * 2 * np.pi * 1.6 ** (-1.0)
        assert val == pytest.approx(body + head + tail, rel=2e-3)


class TestMeasureIntegral:
    def test_atom_sum(self):
        f = bump([2.0], 0.5)
        nu = Atoms([((2.0,), 1.5), ((5.0,), 7.0)])
        assert measure_integral(nu, f, [0.0], margin=0.5) == pytest.approx(1.5)

    def test_vanishing_precondition(self):
        f = bump([0.5], 0.5)
        nu = Atoms([((2.0,), 1.0)])
        with pytest.raises(ValidationError, match="does not vanish"):
            measure_integral(nu, f, [0.3], margin=0.25)

    def test_stable_tail_integral(self):
        # f == 1 on its plateau is impossible for bumps; use the closed form
        # with a narrow bump and a quadrature cross-check
        from scipy.integrate import quad
        f = bump([3.0], 0.8)
        nu = StableLike(c=1.0, alpha=1.2, dim=1)
        val = measure_integral(nu, f, [0.0], margin=0.5)
        oracle, _ = quad(lambda h: f.value_at([h]) * abs(h) ** -2.2, 2.2, 3.8, limit=400)
        assert val == pytest.approx(oracle, rel=1e-6)


class TestChiQuadraticMatrix:
    def test_chi2_equals_truncated_second_moment(self):
        nu = StableLike(c=1.0, alpha=1.0, dim=1)
        m = chi_quadratic_matrix(nu, Chi2(), [0.0])
        assert m[0, 0] == pytest.approx(nu.truncated_second_moment(1.0), rel=1e-9)

    def test_chi1_stable_closed_form(self):
        # integral of h^2/(1+h^2)^2 * |h|^{-2} dh over R equals pi/2
        nu = StableLike(c=1.0, alpha=1.0, dim=1)
        m = chi_quadratic_matrix(nu, Chi1(), [0.0])
        assert m[0, 0] == pytest.approx(np.pi / 2, rel=1e-8)

    def test_atoms(self):
        nu = Atoms([((0.5,), 2.0), ((3.0,), 5.0)])
        m = chi_quadratic_matrix(nu, Chi2(), [0.0])
        assert m[0, 0] == pytest.approx(2.0 * 0.25)  # the far atom is not compensated


class TestConvergenceGaps:
    def test_identical_fields_have_zero_gaps(self):
        field = ConstantTripletField(
            LevyTriplet([0.2], [[0.5]], StableLike(c=1.0, alpha=1.1, dim=1)))
        reports = convergence_gaps([field], field, Chi2(), [-1.0], [1.0],
                                   grid_points=5)
        assert reports[0].max_gap == pytest.approx(0.0, abs=1e-10)

    def test_stable_alpha_sequence_gaps_shrink(self):
        alpha = 1.2

        def make(n):
            a_n = alpha + 1.0 / n
            return ConstantTripletField(
                LevyTriplet([0.0], [[0.0]], StableLike(c=1.0, alpha=a_n, dim=1)))

        limit = ConstantTripletField(
            LevyTriplet([0.0], [[0.0]], StableLike(c=1.0, alpha=alpha, dim=1)))
        ns = [10, 100, 1000]
        reports = convergence_gaps([make(n) for n in ns], limit, Chi2(),
                                   [-1.0], [1.0], grid_points=3,
                                   labels=[str(n) for n in ns])
        gaps = [r.max_gap for r in reports]
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-2

    def test_scheme_field_gaps_shrink(self):
        # the normalized single-step law against its limit, shrinking in n
        from levylab.stable import StableField, scheme_triplet_field, stable_triplet_field
        fld = StableField.constant(1.0, 1.2, 1)
        limit = stable_triplet_field(fld)
        reports = convergence_gaps(
            [scheme_triplet_field(fld, n) for n in (10, 1000)], limit, Chi2(),
            [-1.0], [1.0], grid_points=3, labels=["10", "1000"])
        assert reports[0].max_gap > reports[1].max_gap
        assert reports[1].max_gap < 5e-2

    def test_offending_testfn_reported(self):
        field = ConstantTripletField(LevyTriplet([0.0], [[1.0]], None))
        inside = bump([0.0], 0.5)  # overlaps the grid
        with pytest.raises(ValidationError, match="bump"):
            convergence_gaps([field], field, Chi2(), [-1.0], [1.0],
                             testfns=[inside], grid_points=3)


class TestPMP:
    def test_brownian_passes(self):
        field = ConstantTripletField(LevyTriplet([0.0], [[1.0]], None))
        rep = pmp_spot_check(field, Chi2(), default_test_functions(1), seed=2)
        assert rep.all_ok

    def test_drift_only_passes(self):
        field = ConstantTripletField(LevyTriplet([2.0], [[0.0]], None))
        rep = pmp_spot_check(field, Chi2(), default_test_functions(1), seed=3)
        assert rep.all_ok

    def test_non_psd_diffusion_violates(self):
        field = ConstantTripletField(LevyTriplet.unchecked([0.0], [[-1.0]]))
        rep = pmp_spot_check(field, Chi2(), [bump([0.0], 1.0)], seed=4)
        assert not rep.all_ok
        assert rep.violations[0].operator_value > 0


def test_user_density_jump_integral_matches_stable():
    stable = StableLike(c=0.9, alpha=1.1, dim=1)
    user = UserDensity(density=stable.density, dim=1,
                       tail_mass_fn=lambda r: stable.tail_mass(r),
                       second_moment_fn=lambda r: stable.truncated_second_moment(r))
    f = bump([0.0], 1.5)
    trip_s = LevyTriplet([0.0], [[0.0]], stable)
    trip_u = LevyTriplet([0.0], [[0.0]], user)
    vs = apply_operator(trip_s, Chi2(), f, [0.2])
    vu = apply_operator(trip_u, Chi2(), f, [0.2], tol_abs=1e-7, tol_rel=1e-6)
    assert vu == pytest.approx(vs, abs=5e-6)


def test_asymmetric_user_density_drift_adjustment():
    # an asymmetric density has a nonzero convention adjustment; cross-check
    # against direct quadrature of (chi2 - chi1) against the density
    from scipy.integrate import quad

    def rho(h):
        h = np.atleast_2d(h)[:, 0]
        out = np.zeros_like(h)
        pos = h > 0
        out[pos] = np.abs(h[pos]) ** -2.5
        neg = h < 0
        out[neg] = 0.5 * np.abs(h[neg]) ** -2.5
        return out

    nu = UserDensity(density=rho, dim=1,
                     tail_mass_fn=lambda r: (1.5 / 1.5) * r ** -1.5,
                     second_moment_fn=lambda r: (1.5 / 0.5) * r ** 0.5)
    adj = chi_drift_adjustment(nu, Chi1(), Chi2(), tol_abs=1e-9)

    def dev(h):
        chi2 = h if abs(h) < 1 else 0.0
        chi1 = h / (1 + h * h)
        return (chi2 - chi1) * float(rho(np.array([[h]]))[0])

    # the tail decays like h^{-3.5}; 2000 leaves a remainder below 1e-8
    oracle = (quad(dev, 1e-9, 2000.0, limit=800)[0]
              + quad(dev, -2000.0, -1e-9, limit=800)[0])
    assert adj[0] == pytest.approx(oracle, abs=5e-6)


def test_vanishing_test_functions_avoid_box():
    fns = vanishing_test_functions([-1.0], [1.0], 1, margin=0.5)
    for f in fns:
        assert f.support_distance([0.9]) >= 0.5
        assert f.support_distance([-0.9]) >= 0.5
