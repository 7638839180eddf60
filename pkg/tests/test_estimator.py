import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import least_squares

from conftest import UE_DIR, random_state, small_scenario
from risloc import estimator as est
from risloc.channel import RisPhaseProfile, default_scenario, flm_approx, h_vector, observe
from risloc.errors import DegenerateModel, NumericalFailure, RankDeficient, ValidationError
from risloc.estimator import (
    ConvergenceConfig,
    GridSpec,
    LinearizedModel,
    SearchRegion,
    VelocityLinearModel,
    alpha_from_pd,
    alpha_from_vd,
    alpha_hat,
    build_linearized_model,
    build_velocity_model,
    concentrated_objective,
    find_pos_vel,
    gradient_descent_6d,
    grad_flm,
    init_pos_gain,
    pd_hat,
    ref_pos_gain,
    ref_vel,
    static_objective,
    vd_hat,
)
from risloc.geometry import cartesian_to_spherical, unit_vector_jacobian, unit_vector_to

COARSE = GridSpec(n_theta=90, n_phi=45, n_rho=60, rho_max=4.0)
TIGHT = ConvergenceConfig(objective_tolerance=1e-40)
RELINEARIZE = ConvergenceConfig(objective_tolerance=1e-40, relinearize=True)


def quad(y, alpha, base, jac, d):
    r = y - alpha * (base + 1j * (jac.T @ d))
    return float(np.real(np.vdot(r, r)))


def exact_minimizer(y, alpha, base, jac):
    """Minimize ||y/alpha - base - j jac^T d|| through 50-digit normal equations."""
    A = 1j * jac.T
    rhs = y / alpha - base
    mat = mp.matrix(np.vstack([A.real, A.imag]).tolist())
    vec = mp.matrix(np.concatenate([rhs.real, rhs.imag]).tolist())
    with mp.workdps(50):
        d = mp.lu_solve(mat.T * mat, mat.T * vec)
    return np.array([float(x) for x in d])


def random_instances(n, seed=0, velocity=False):
    """Linear models around random anchors with noisy, slightly offset observations."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        scen = small_scenario(seed=i % 5, rho=rng.uniform(1.0, 4.0))
        p, v = random_state(rng, (1.0, 4.0), 5.0)
        if velocity:
            model = build_velocity_model(p, v, scen)
            truth = h_vector(p, v + rng.normal(0, 0.2, 3), scen)
        else:
            model = build_linearized_model(p, v, scen)
            truth = h_vector(p + rng.normal(0, 2e-4, 3), v, scen)
        alpha = complex(rng.normal(), rng.normal())
        y = alpha * truth + 0.05 * np.linalg.norm(truth) / math.sqrt(truth.size) * (rng.normal(size=truth.size) + 1j * rng.normal(size=truth.size))
        out.append((model, alpha, y))
    return out


# ---------------------------------------------------------------------------
# gain and objectives


def test_alpha_hat_examples(small):
    p, v = small.ue.position, small.ue.velocity
    h = h_vector(p, v, small)
    a0 = complex(0.3, -1.2)
    assert alpha_hat(p, v, a0 * h, small) == pytest.approx(a0, rel=1e-13)
    # project a random vector off h
    rng = np.random.default_rng(1)
    z = rng.normal(size=h.size) + 1j * rng.normal(size=h.size)
    z -= h * np.vdot(h, z) / np.vdot(h, h)
    assert abs(alpha_hat(p, v, z, small)) < 1e-14 * np.linalg.norm(z)


def test_alpha_hat_local_optimality(small):
    rng = np.random.default_rng(2)
    p, v = small.ue.position, small.ue.velocity
    h = h_vector(p, v, small)
    for _ in range(20):
        y = rng.normal(size=h.size) + 1j * rng.normal(size=h.size)
        a = alpha_hat(p, v, y, small)
        base = np.linalg.norm(y - a * h) ** 2
        for step in (1e-6, -1e-6, 1e-6j, -1e-6j):
            assert np.linalg.norm(y - (a + step) * h) ** 2 > base


def test_alpha_hat_zero_response():
    model = LinearizedModel(np.zeros(4, complex), np.zeros((3, 4), complex), np.zeros(3), np.zeros(3))
    with pytest.raises(DegenerateModel):
        alpha_from_pd(model, np.zeros(3), np.ones(4))


def test_concentrated_objective_matches_projection(small):
    rng = np.random.default_rng(4)
    for _ in range(100):
        p, v = random_state(rng, (1.0, 5.0), 10.0)
        y = rng.normal(size=12) + 1j * rng.normal(size=12)
        h = h_vector(p, v, small)
        proj = y - h * (np.vdot(h, y) / np.vdot(h, h))
        assert concentrated_objective(p, v, y, small) == pytest.approx(np.linalg.norm(proj) ** 2, rel=1e-10)


def test_concentrated_objective_extremes(small):
    p, v = small.ue.position, small.ue.velocity
    y = observe(small, 0, noise=False).y
    assert concentrated_objective(p, v, y, small) <= 1e-20 * np.linalg.norm(y) ** 2
    h = h_vector(p, v, small)
    z = np.roll(np.conj(h), 1)
    z -= h * np.vdot(h, z) / np.vdot(h, h)
    assert concentrated_objective(p, v, z, small) == pytest.approx(np.linalg.norm(z) ** 2, rel=1e-12)


@given(st.floats(0.1, 10.0), st.floats(-math.pi, math.pi))
def test_objective_scales_with_observation(mag, phase):
    scen = small_scenario()
    y = observe(scen, 5).y
    c = mag * complex(math.cos(phase), math.sin(phase))
    p, v = scen.ue.position + 0.01, scen.ue.velocity
    j1 = concentrated_objective(p, v, y, scen)
    assert concentrated_objective(p, v, c * y, scen) == pytest.approx(abs(c) ** 2 * j1, rel=1e-10)


def test_static_objective_models():
    scen = default_scenario(2.0, 0.0)
    y = observe(scen, 0, noise=False).y
    s = cartesian_to_spherical(scen.ue.position)
    assert static_objective(s.theta, s.phi, y, scen, "NF", s.rho) <= 1e-18 * np.linalg.norm(y) ** 2
    ff = static_objective(s.theta, s.phi, y, scen, "FF")
    assert static_objective(s.theta, s.phi, y, scen, "FF", rho=7.0) == ff
    with pytest.raises(ValidationError):
        static_objective(s.theta, s.phi, y, scen, "NF")
    with pytest.raises(ValidationError):
        static_objective(s.theta, s.phi, y, scen, "XX")


def test_far_field_objective_prefers_true_angles():
    scen = default_scenario(8.0, 0.0)
    y = observe(scen, 0, noise=False).y
    s = cartesian_to_spherical(scen.ue.position)
    ten = math.radians(10)
    at_truth = static_objective(s.theta, s.phi, y, scen, "FF")
    for dth, dph in ((ten, 0), (-ten, 0), (0, ten), (0, -ten)):
        assert at_truth < static_objective(s.theta + dth, s.phi + dph, y, scen, "FF")


# ---------------------------------------------------------------------------
# grid initialization


def test_init_pos_gain_noiseless_static():
    scen = default_scenario(2.0, 0.0)
    grid = GridSpec()
    y = observe(scen, 0, noise=False).y
    p, a, trace, sph = init_pos_gain(y, scen, grid)
    truth = cartesian_to_spherical(scen.ue.position)
    dtheta = (sph.theta - truth.theta + math.pi) % (2 * math.pi) - math.pi
    assert abs(dtheta) <= 2 * math.pi / grid.n_theta
    assert abs(sph.phi - truth.phi) <= math.pi / (grid.n_phi - 1)
    assert abs(sph.rho - truth.rho) <= 2 * grid.rho_max / grid.n_rho
    assert a == pytest.approx(alpha_hat(p, np.zeros(3), y, scen))
    assert trace.iterations <= 5


def test_init_pos_gain_trace_and_iteration_count(table1):
    y = observe(table1, 0).y
    _, _, trace, sph = init_pos_gain(y, table1)
    assert np.all(np.diff(trace.objectives) <= 0)
    assert trace.iterations <= 5 and trace.converged
    assert sph.phi <= math.pi / 2


def test_init_pos_gain_rejects_non_finite(small):
    y = observe(small, 0).y.copy()
    y[3] = np.nan
    with pytest.raises(NumericalFailure):
        init_pos_gain(y, small, COARSE)


def test_grid_argmin_invariances():
    scen = small_scenario(rho=2.0, speed=0.0)
    y = observe(scen, 1).y
    p1, _, _, _ = init_pos_gain(y, scen, COARSE)
    p2, _, _, _ = init_pos_gain((0.3 - 2.1j) * y, scen, COARSE)
    np.testing.assert_array_equal(p1, p2)
    # a common phase on every reflection coefficient is absorbed by the gain
    rotated = scen.__class__(scen.rf, scen.ris, scen.bs_position, scen.ue, RisPhaseProfile(scen.profile.phases + 1.234))
    p3, _, _, _ = init_pos_gain(y, rotated, COARSE)
    np.testing.assert_array_equal(p1, p3)


def test_grid_never_returns_mirror_image():
    scen = small_scenario(rho=2.0, speed=0.0)
    for seed in range(5):
        p, _, _, sph = init_pos_gain(observe(scen, seed).y, scen, COARSE)
        assert p[2] >= 0 and sph.phi <= math.pi / 2


def test_dictionary_cache_reuse(small):
    est.dictionary_cache.clear()
    before = est.dictionary_cache.hits
    y = observe(small, 0).y
    init_pos_gain(y, small, COARSE)
    init_pos_gain(observe(small, 1).y, small, COARSE)
    assert est.dictionary_cache.hits > before


def test_grid_spec_validation():
    with pytest.raises(ValidationError):
        GridSpec(n_theta=1)
    with pytest.raises(ValidationError):
        GridSpec(rho_max=0.0)
    g = GridSpec()
    assert g.thetas()[1] == pytest.approx(2 * math.pi / 180)
    assert g.rhos()[0] == pytest.approx(12 / 200) and g.rhos()[-1] == 12.0
    assert g.ff_phis()[-1] == pytest.approx(math.pi / 2) and g.nf_phis()[-1] == pytest.approx(math.pi)


def test_convergence_config_validation():
    with pytest.raises(ValidationError):
        ConvergenceConfig(objective_tolerance=0.0)
    with pytest.raises(ValidationError):
        ConvergenceConfig(max_outer_iterations=0)


# ---------------------------------------------------------------------------
# gradients and linear models


def test_grad_flm_static(table1):
    p = 2 * UE_DIR
    ris = table1.ris
    g = grad_flm(p, np.zeros(3), 7, 33, ris, 1e-6)
    np.testing.assert_allclose(g, unit_vector_to(p, ris.elements[32]) - unit_vector_to(p, ris.reference), atol=1e-15)


def test_grad_flm_finite_differences(table1):
    rng = np.random.default_rng(8)
    ris = table1.ris
    for _ in range(100):
        p, v = random_state(rng, (1.0, 5.0), 20.0)
        ell, m, ts = int(rng.integers(1, 41)), int(rng.integers(1, 1025)), 10 ** rng.uniform(-6, -3)
        g = grad_flm(p, v, ell, m, ris, ts)
        fd = np.empty(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-6
            fd[k] = (flm_approx(p + e, v, ell, m, ris, ts) - flm_approx(p - e, v, ell, m, ris, ts)) / 2e-6
        assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(g)


def test_unit_vector_jacobian_projector_structure():
    rng = np.random.default_rng(9)
    for _ in range(20):
        p, pm = rng.normal(size=3) * 3, rng.normal(size=3) * 0.1
        J = unit_vector_jacobian(p, pm)
        np.testing.assert_allclose(J, J.T, atol=1e-15)
        assert np.linalg.norm(J @ (pm - p)) < 1e-14


def test_linearized_model_consistency(table1):
    p0, v = table1.ue.position, table1.ue.velocity
    model = build_linearized_model(p0, v, table1)
    h0 = h_vector(p0, v, table1)
    np.testing.assert_allclose(model.response, h0, atol=1e-12 * np.max(np.abs(h0)))
    rng = np.random.default_rng(10)
    for _ in range(5):
        d = rng.normal(size=3)
        d *= 1e-3 / np.linalg.norm(d)
        err = np.linalg.norm(model.predict(d) - h_vector(p0 + d, v, table1)) / np.linalg.norm(h0)
        assert err < 1e-3
    assert np.allclose(model.normal_matrix(), model.normal_matrix().T)


def test_linearized_models_full_rank_with_three_pilots():
    for seed in range(10):
        scen = small_scenario(seed=seed, num_pilots=3)
        pm = build_linearized_model(scen.ue.position, scen.ue.velocity, scen)
        vm = build_velocity_model(scen.ue.position, scen.ue.velocity, scen)
        assert np.linalg.eigvalsh(pm.normal_matrix())[0] > 0
        assert np.linalg.eigvalsh(vm.normal_matrix())[0] > 0


def test_velocity_model_consistency(table1):
    p, v0 = table1.ue.position, table1.ue.velocity
    model = build_velocity_model(p, v0, table1)
    h0 = h_vector(p, v0, table1)
    np.testing.assert_allclose(model.response, h0, atol=1e-12 * np.max(np.abs(h0)))
    static = build_velocity_model(p, np.zeros(3), table1)
    np.testing.assert_allclose(static.response, h_vector(p, np.zeros(3), table1), atol=1e-12 * np.max(np.abs(h0)))
    rng = np.random.default_rng(12)
    for _ in range(5):
        d = rng.normal(size=3)
        d *= 0.1 / np.linalg.norm(d)
        err = np.linalg.norm(model.predict(d) - h_vector(p, v0 + d, table1)) / np.linalg.norm(h0)
        assert err < 1e-3


# ---------------------------------------------------------------------------
# closed-form updates


@pytest.mark.parametrize("velocity", [False, True])
def test_closed_form_matches_dense_minimizer(velocity):
    solve = vd_hat if velocity else pd_hat
    for model, alpha, y in random_instances(50, seed=int(velocity), velocity=velocity):
        base, jac = (model.response, model.slopes) if velocity else (model.response, model.slopes)
        d = solve(model, alpha, y)
        np.testing.assert_allclose(d, exact_minimizer(y, alpha, base, jac), atol=1e-8, rtol=1e-9)


def test_closed_form_matches_iterative_minimizer():
    for model, alpha, y in random_instances(5, seed=3):
        d = pd_hat(model, alpha, y)
        scale = 1e-3

        def resid(x):
            r = y / alpha - model.predict(scale * x)
            return np.concatenate([r.real, r.imag])

        res = least_squares(resid, np.zeros(3), method="lm", x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        np.testing.assert_allclose(scale * res.x, d, atol=1e-8, rtol=1e-6)


@pytest.mark.parametrize("velocity", [False, True])
def test_closed_form_first_order_optimality(velocity):
    solve = vd_hat if velocity else pd_hat
    for model, alpha, y in random_instances(20, seed=5, velocity=velocity):
        base, jac = (model.response, model.slopes) if velocity else (model.response, model.slopes)
        d = solve(model, alpha, y)
        best = quad(y, alpha, base, jac, d)
        for k in range(3):
            for s in (1e-7, -1e-7):
                e = np.zeros(3)
                e[k] = s
                assert quad(y, alpha, base, jac, d + e) >= best * (1 - 1e-14)


def test_pd_hat_matched_and_zero(table1):
    model = build_linearized_model(table1.ue.position, table1.ue.velocity, table1)
    alpha = complex(1e-8, -2e-8)
    target = np.array([3e-4, -1e-4, 2e-4])
    np.testing.assert_allclose(pd_hat(model, alpha, alpha * model.predict(target)), target, atol=1e-10)
    np.testing.assert_allclose(pd_hat(model, alpha, alpha * model.response), 0, atol=1e-13)
    assert alpha_from_pd(model, target, alpha * model.predict(target)) == pytest.approx(alpha, rel=1e-12)
    assert alpha_from_pd(model, np.zeros(3), observe(table1, 0).y) == pytest.approx(
        alpha_hat(table1.ue.position, table1.ue.velocity, observe(table1, 0).y, table1), rel=1e-12
    )


def test_vd_hat_matched_and_zero(table1):
    model = build_velocity_model(table1.ue.position, np.zeros(3), table1)
    alpha = complex(-3e-8, 1e-8)
    target = np.array([1.5, -0.5, 2.0])
    np.testing.assert_allclose(vd_hat(model, alpha, alpha * model.predict(target)), target, atol=1e-10)
    np.testing.assert_allclose(vd_hat(model, alpha, alpha * model.response), 0, atol=1e-10)
    assert alpha_from_vd(model, target, alpha * model.predict(target)) == pytest.approx(alpha, rel=1e-12)
    y = observe(table1, 0).y
    assert alpha_from_vd(model, np.zeros(3), y) == pytest.approx(alpha_hat(table1.ue.position, np.zeros(3), y, table1), rel=1e-12)


@pytest.mark.parametrize("velocity", [False, True])
def test_alpha_from_residual_local_optimality(velocity, small):
    model = (build_velocity_model if velocity else build_linearized_model)(small.ue.position, small.ue.velocity, small)
    fn = alpha_from_vd if velocity else alpha_from_pd
    rng = np.random.default_rng(13)
    d = rng.normal(size=3) * (0.1 if velocity else 1e-4)
    y = rng.normal(size=12) + 1j * rng.normal(size=12)
    a = fn(model, d, y)
    m = model.predict(d)
    best = np.linalg.norm(y - a * m) ** 2
    for step in (1e-6, -1e-6, 1e-6j, -1e-6j):
        assert np.linalg.norm(y - (a + step) * m) ** 2 > best


def test_closed_form_errors():
    # one complex pilot gives two real equations for three unknowns
    L = 1
    rng = np.random.default_rng(0)
    slopes = rng.normal(size=(3, L)) + 1j * rng.normal(size=(3, L))
    response = rng.normal(size=L) + 1j * rng.normal(size=L)
    model = LinearizedModel(response, slopes, np.zeros(3), np.zeros(3))
    with pytest.raises(RankDeficient):
        pd_hat(model, 1.0, response)
    vmodel = VelocityLinearModel(response, slopes, np.zeros(3), np.zeros(3))
    with pytest.raises(RankDeficient):
        vd_hat(vmodel, 1.0, response)
    good = build_linearized_model(UE_DIR * 2, np.zeros(3), small_scenario())
    with pytest.raises(DegenerateModel):
        pd_hat(good, 0.0, good.response)


# ---------------------------------------------------------------------------
# refinements


def test_ref_pos_gain_noiseless_offset(table1):
    y = observe(table1, 0, noise=False).y
    p0 = table1.ue.position + 5e-3 * np.array([0.6, -0.8, 0.0])
    a0 = alpha_hat(p0, table1.ue.velocity, y, table1)
    once = ref_pos_gain(y, table1.ue.velocity, p0, a0, table1, TIGHT)
    # a single linearization leaves only the second-order curvature error
    assert np.linalg.norm(once.estimate - table1.ue.position) < 0.2e-3
    assert np.all(np.diff(once.trace.objectives) <= 1e-12 * once.trace.objectives[0])
    assert once.trace.failure is None
    again = ref_pos_gain(y, table1.ue.velocity, p0, a0, table1, RELINEARIZE)
    assert np.linalg.norm(again.estimate - table1.ue.position) < 1e-9


def test_ref_pos_gain_at_truth(table1):
    y = observe(table1, 0, noise=False).y
    p = table1.ue.position
    res = ref_pos_gain(y, table1.ue.velocity, p, table1.ue.gain, table1)
    assert np.linalg.norm(res.estimate - p) < 1e-9
    assert res.trace.objectives[0] <= 1e-20 * np.linalg.norm(y) ** 2


def test_ref_pos_gain_relinearize_improves_large_offsets(table1):
    y = observe(table1, 0, noise=False).y
    p0 = table1.ue.position + np.array([0.02, -0.01, 0.01])
    a0 = alpha_hat(p0, table1.ue.velocity, y, table1)
    once = ref_pos_gain(y, table1.ue.velocity, p0, a0, table1, TIGHT)
    again = ref_pos_gain(y, table1.ue.velocity, p0, a0, table1, RELINEARIZE)
    assert np.linalg.norm(again.estimate - table1.ue.position) < np.linalg.norm(once.estimate - table1.ue.position)


def test_ref_pos_gain_stops_at_region_boundary(table1):
    y = observe(table1, 0).y
    res = ref_pos_gain(y, table1.ue.velocity, table1.ue.position, table1.ue.gain, table1, region=SearchRegion(max_range=1.0))
    assert res.trace.hit_boundary
    np.testing.assert_array_equal(res.estimate, table1.ue.position)


def test_ref_pos_gain_flags_zero_gain(table1):
    res = ref_pos_gain(np.zeros(40, complex) + 1e-30, table1.ue.velocity, table1.ue.position, 0.0, table1)
    assert res.trace.failure is not None
    np.testing.assert_array_equal(res.estimate, table1.ue.position)


@pytest.mark.parametrize("rho", [1.0, 2.0, 4.0, 7.0, 10.0])
def test_ref_vel_noiseless(rho):
    scen = default_scenario(rho, 1.0)
    y = observe(scen, 0, noise=False).y
    p = scen.ue.position
    a0 = alpha_hat(p, np.zeros(3), y, scen)
    once = ref_vel(y, np.zeros(3), p, a0, scen, TIGHT)
    assert np.linalg.norm(once.estimate - scen.ue.velocity) < 0.1
    assert np.all(np.diff(once.trace.objectives) <= 1e-12 * once.trace.objectives[0])
    again = ref_vel(y, np.zeros(3), p, a0, scen, RELINEARIZE)
    assert np.linalg.norm(again.estimate - scen.ue.velocity) < 1e-6


def test_ref_vel_at_truth(table1):
    y = observe(table1, 0, noise=False).y
    res = ref_vel(y, table1.ue.velocity, table1.ue.position, table1.ue.gain, table1)
    assert np.linalg.norm(res.estimate - table1.ue.velocity) < 1e-9


def test_alternating_loops_monotone_noisy(table1):
    for seed in range(5):
        y = observe(table1, seed).y
        p0, a0, _, _ = init_pos_gain(y, table1)
        rv = ref_vel(y, np.zeros(3), p0, a0, table1)
        rp = ref_pos_gain(y, rv.estimate, p0, rv.alpha, table1)
        for tr in (rv.trace, rp.trace):
            assert np.all(np.diff(tr.objectives) <= 1e-12 * tr.objectives[0])


# ---------------------------------------------------------------------------
# descent and full pipeline


def test_descent_at_truth(table1):
    y = observe(table1, 0, noise=False).y
    p, v, trace = gradient_descent_6d(table1.ue.position, table1.ue.velocity, y, table1)
    assert np.linalg.norm(p - table1.ue.position) < 1e-9
    assert np.linalg.norm(v - table1.ue.velocity) < 1e-9


def test_descent_basin(table1):
    y = observe(table1, 0, noise=False).y
    p0 = table1.ue.position + 1e-3 * np.array([1.0, 0.0, 0.0])
    v0 = table1.ue.velocity + 0.01 * np.array([0.0, 1.0, 0.0])
    p, v, trace = gradient_descent_6d(p0, v0, y, table1)
    assert np.linalg.norm(p - table1.ue.position) < 1e-6
    assert np.linalg.norm(v - table1.ue.velocity) < 1e-6
    assert np.all(np.diff(trace.objectives) < 0)


def test_descent_never_worse_and_respects_region(table1):
    y = observe(table1, 4).y
    p0, v0 = table1.ue.position + 0.05, np.array([5.0, 0.0, 0.0])
    start = concentrated_objective(p0, v0, y, table1)
    region = SearchRegion(max_range=2.1)
    p, v, trace = gradient_descent_6d(p0, v0, y, table1, region=region)
    assert concentrated_objective(p, v, y, table1) <= start
    assert region.contains(p)
    assert np.all(np.diff(trace.objectives) <= 0)
    with pytest.raises(ValidationError):
        gradient_descent_6d(p0, v0, y, table1, region=SearchRegion(max_range=1.0))


@pytest.fixture(scope="module")
def noiseless_run(table1):
    y = observe(table1, 0, noise=False).y
    return y, find_pos_vel(y, table1)


def test_find_pos_vel_noiseless(table1, noiseless_run):
    y, res = noiseless_run
    assert np.linalg.norm(res.position - table1.ue.position) < 1e-3
    assert np.linalg.norm(res.velocity - table1.ue.velocity) < 1e-3
    assert concentrated_objective(res.position, res.velocity, y, table1) < 1e-12 * np.linalg.norm(y) ** 2
    assert res.alpha == pytest.approx(table1.ue.gain, rel=1e-6)


def test_find_pos_vel_trace(noiseless_run):
    _, res = noiseless_run
    names = [s.name for s in res.stage_trace]
    assert names[0] == "grid" and names[-1] == "descent"
    assert names.count("ref_vel") == res.iterations["outer"] == names.count("ref_pos")
    assert all(math.isfinite(s.objective) for s in res.stage_trace)
    assert res.iterations["outer"] <= 30 and res.iterations["grid"] <= 5
    assert np.all(np.diff(res.outer_trace) <= 0)
    assert not res.failed


def test_find_pos_vel_deterministic(table1):
    y = observe(table1, 7).y
    a = find_pos_vel(y, table1)
    b = find_pos_vel(y, table1)
    assert a.position.tobytes() == b.position.tobytes()
    assert a.velocity.tobytes() == b.velocity.tobytes()
    assert a.outer_trace == b.outer_trace


def test_search_region():
    r = SearchRegion(max_range=3.0)
    assert r.contains([0, 0, 2.9]) and not r.contains([0, 0, 3.1])
    assert not r.contains([0, 0, -0.5])
    assert SearchRegion(3.0, front_only=False).contains([0, 0, -0.5])
    assert not r.contains([np.nan, 0, 1])
