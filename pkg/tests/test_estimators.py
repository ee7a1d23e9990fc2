import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from repcal.errors import DegenerateInputError
from repcal.estimators import (
    SolverOptions,
    alternating_nls,
    alternating_projection_ab,
    basic_nls,
    estimate_gamma_closed_form,
    fit_ab,
    ingenuous_estimate,
    nls_objective,
    onoff_estimate,
    precalibrated_estimate,
    rank_one_approx,
    update_h_kron,
    update_z,
)
from repcal.model import (
    MeasurementSet,
    PreprocessedSet,
    Scenario,
    ScenarioConfig,
    generate_scenario,
    preprocess,
    take_calibration_measurements,
    take_onoff_measurements,
)

from conftest import random_complex, unit_phases


def _truth(s):
    return s.h_true, s.z_true, s.a_true, s.b_true, s.gamma


def _rel_err(g_hat, g):
    return abs(g_hat - g) / abs(g)


# -- rank-one projection ------------------------------------------------------

def test_rank_one_of_zero():
    np.testing.assert_array_equal(rank_one_approx(np.zeros((3, 4))), 0)


def test_rank_one_of_outer_product():
    rng = np.random.default_rng(0)
    u, v = random_complex(rng, 3), random_complex(rng, 4)
    m = np.outer(u, v.conj())
    np.testing.assert_allclose(rank_one_approx(m), m, atol=1e-13)


def test_rank_one_of_diagonal():
    np.testing.assert_allclose(rank_one_approx(np.diag([3.0, 1.0])), np.diag([3.0, 0.0]), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_rank_one_beats_random_candidates(seed):
    rng = np.random.default_rng(seed)
    m = random_complex(rng, (3, 4))
    best = np.linalg.norm(m - rank_one_approx(m))
    for _ in range(1000):
        u, v = random_complex(rng, 3), random_complex(rng, 4)
        cand = np.outer(u, v)
        # optimal scaling of the candidate direction, so the oracle is strong
        cand *= np.vdot(cand, m) / np.vdot(cand, cand)
        assert best <= np.linalg.norm(m - cand) + 1e-12


def test_rank_one_error_is_tail_singular_values():
    rng = np.random.default_rng(3)
    m = random_complex(rng, (5, 4))
    sv = np.linalg.svd(m, compute_uv=False)
    assert np.linalg.norm(m - rank_one_approx(m)) == pytest.approx(np.sqrt(np.sum(sv[1:] ** 2)), rel=1e-12)


# -- ingenuous estimator --------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_ingenuous_exact_without_noise(default_config, seed):
    s = generate_scenario(default_config, seed)
    ms = take_calibration_measurements(s, 0.0, seed)
    assert _rel_err(ingenuous_estimate(ms), s.gamma) < 1e-10


def test_ingenuous_reciprocal_repeater(default_config):
    s = generate_scenario(default_config, 3)
    s = Scenario(**{**s.__dict__, "beta": s.alpha})
    ms = take_calibration_measurements(s, 0.0, 1)
    assert ingenuous_estimate(ms) == pytest.approx(1.0, abs=1e-12)


def test_ingenuous_zero_denominator():
    x = np.array([[1.0, 2.0]])
    ms = MeasurementSet(x_ab0=x, x_ab1=x, x_ba0=np.array([[1.0], [1.0]]), x_ba1=np.array([[-1.0], [2.0]]))
    with pytest.raises(DegenerateInputError):
        ingenuous_estimate(ms)


def test_ingenuous_heavy_tails_report(default_config):
    # diagnostic only: print how erratic the element-wise ratio is at 10 dB
    sigma = 10 ** (-10 / 20)
    errors = []
    for seed in range(1000):
        s = generate_scenario(default_config, seed)
        errors.append(abs(ingenuous_estimate(take_calibration_measurements(s, sigma, seed + 5000)) - s.gamma))
    q50, q99 = np.quantile(errors, [0.5, 0.99])
    print(f"\ningenuous @10 dB: median |err| = {q50:.3g}, p99 = {q99:.3g}, ratio = {q99 / q50:.1f}, max = {max(errors):.3g}")


# -- objective -----------------------------------------------------------------

def test_objective_zero_at_truth(noise_free):
    s, _, p = noise_free
    assert nls_objective(*_truth(s), p) < 1e-25


def test_objective_perturbed_h(noise_free):
    s, _, _ = noise_free
    rng = np.random.default_rng(1)
    h, z = s.h_true, s.z_true
    eye_a, eye_b = np.ones(4, complex), np.ones(3, complex)
    p = PreprocessedSet(r1=h, r2=z, r3=h.T, r4=s.gamma * z.T)
    delta = random_complex(rng, h.shape)
    assert nls_objective(h + delta, z, eye_a, eye_b, s.gamma, p) == pytest.approx(2 * np.linalg.norm(delta) ** 2, rel=1e-12)


def test_objective_scalar_example():
    one = np.ones((1, 1))
    p = PreprocessedSet(r1=2 * one, r2=0 * one, r3=0 * one, r4=0 * one)
    assert nls_objective(one, 0 * one, np.ones(1), np.ones(1), 0.0, p) == pytest.approx(2.0)


def test_objective_shape_mismatch(noise_free):
    s, _, p = noise_free
    with pytest.raises(ValueError):
        nls_objective(s.h_true, s.z_true, np.ones(3), s.b_true, s.gamma, p)


def test_objective_at_truth_is_half_noise_energy(default_config):
    s = generate_scenario(default_config, 4)
    noisy = take_calibration_measurements(s, 0.3, 77)
    clean = take_calibration_measurements(s, 0.0, 77)
    energy = sum(np.linalg.norm(getattr(noisy, k) - getattr(clean, k)) ** 2 for k in ("x_ab0", "x_ab1", "x_ba0", "x_ba1"))
    assert nls_objective(*_truth(s), preprocess(noisy)) == pytest.approx(energy / 2, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mag=st.floats(0.01, 100.0), phase=st.floats(-np.pi, np.pi))
def test_gauge_invariance(seed, mag, phase):
    rng = np.random.default_rng(seed)
    c = mag * np.exp(1j * phase)
    p = PreprocessedSet(*(random_complex(rng, sh) for sh in [(3, 4), (3, 4), (4, 3), (4, 3)]))
    h, z = random_complex(rng, (3, 4)), random_complex(rng, (3, 4))
    a, b, g = random_complex(rng, 4), random_complex(rng, 3), complex(random_complex(rng, ()))
    f0 = nls_objective(h, z, a, b, g, p)
    assert nls_objective(h, z, c * a, b / c, g, p) == pytest.approx(f0, rel=1e-10)
    g0 = estimate_gamma_closed_form(a, b, z, p.r4)
    assert estimate_gamma_closed_form(c * a, b / c, z, p.r4) == pytest.approx(g0, rel=1e-10)


# -- alternating projection for A and B -------------------------------------------

def test_ab_identity_fit():
    rng = np.random.default_rng(2)
    h = random_complex(rng, (3, 4))
    fit = fit_ab(h, h.T)
    # a_i b_j must be constant: gauge-equivalent to A = B = I
    outer = np.outer(fit.a, fit.b)
    np.testing.assert_allclose(outer, outer[0, 0], atol=1e-10)
    assert fit.trace[-1] < 1e-12


@pytest.mark.parametrize("seed", range(20))
def test_ab_recovers_random_unit_modulus(seed):
    rng = np.random.default_rng(seed)
    h = random_complex(rng, (3, 4))
    a_true, b_true = unit_phases(rng, 4), unit_phases(rng, 3)
    r3 = a_true[:, None] * h.T * b_true[None, :]
    a, b = alternating_projection_ab(h, r3, opts=SolverOptions(ab_iters=100))
    assert np.linalg.norm(r3 - a[:, None] * h.T * b[None, :]) ** 2 < 1e-10


def test_ab_normalization():
    rng = np.random.default_rng(5)
    h = random_complex(rng, (3, 4))
    a, b = alternating_projection_ab(h, random_complex(rng, (4, 3)))
    assert np.linalg.norm(a) == pytest.approx(1.0, rel=1e-12)


def _monotone(trace, scale):
    # exact block minimization: non-increasing up to rounding, whose floor
    # for an exact fit is about (machine eps * ||data||)^2
    floor = 1e-28 * scale
    return all(t1 <= t0 * (1 + 1e-12) + floor for t0, t1 in zip(trace, trace[1:]))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m_a=st.integers(1, 6), m_b=st.integers(1, 6), extended=st.booleans())
def test_ab_objective_non_increasing(seed, m_a, m_b, extended):
    rng = np.random.default_rng(seed)
    h = random_complex(rng, (m_b, m_a))
    r3 = random_complex(rng, (m_a, m_b))
    kwargs = {}
    if extended:
        kwargs = dict(z_hat=random_complex(rng, (m_b, m_a)), gamma=complex(random_complex(rng, ())), r4=random_complex(rng, (m_a, m_b)))
    fit = fit_ab(h, r3, **kwargs)
    scale = np.linalg.norm(r3) ** 2 + (np.linalg.norm(kwargs["r4"]) ** 2 if extended else 0.0)
    assert _monotone(fit.trace, scale)


def test_ab_zero_column_is_degenerate():
    h = np.ones((3, 4), dtype=complex)
    h[:, 2] = 0
    with pytest.raises(DegenerateInputError):
        alternating_projection_ab(h, np.ones((4, 3)))


def test_ab_extended_requires_all_terms():
    h = np.ones((3, 4))
    with pytest.raises(ValueError):
        fit_ab(h, h.T, z_hat=h)


# -- closed-form gamma -------------------------------------------------------------

@pytest.fixture
def abz():
    rng = np.random.default_rng(8)
    return random_complex(rng, 4), random_complex(rng, 3), random_complex(rng, (3, 4))


def test_gamma_closed_form_examples(abz):
    a, b, z = abz
    model = a[:, None] * z.T * b[None, :]
    assert estimate_gamma_closed_form(a, b, z, model) == pytest.approx(1.0, abs=1e-14)
    c = 0.5 * np.exp(1j * np.pi / 3)
    assert estimate_gamma_closed_form(a, b, z, c * model) == pytest.approx(c, abs=1e-14)
    assert estimate_gamma_closed_form(a, b, z, np.zeros((4, 3))) == 0


def test_gamma_closed_form_matches_real_least_squares(abz):
    a, b, z = abz
    r4 = random_complex(np.random.default_rng(1), (4, 3))
    m = (a[:, None] * z.T * b[None, :]).ravel()
    # real-valued regression on [Re g, Im g]
    design = np.block([[m.real[:, None], -m.imag[:, None]], [m.imag[:, None], m.real[:, None]]])
    target = np.concatenate([r4.ravel().real, r4.ravel().imag])
    sol = np.linalg.lstsq(design, target, rcond=None)[0]
    assert estimate_gamma_closed_form(a, b, z, r4) == pytest.approx(complex(sol[0], sol[1]), abs=1e-12)


def test_gamma_closed_form_local_optimality(abz):
    a, b, z = abz
    r4 = random_complex(np.random.default_rng(2), (4, 3))
    model = a[:, None] * z.T * b[None, :]
    g = estimate_gamma_closed_form(a, b, z, r4)
    base = np.linalg.norm(r4 - g * model) ** 2
    for ang in np.linspace(0, 2 * np.pi, 16, endpoint=False):
        assert np.linalg.norm(r4 - (g + 1e-4 * np.exp(1j * ang)) * model) ** 2 >= base


def test_gamma_closed_form_unobservable():
    with pytest.raises(DegenerateInputError):
        estimate_gamma_closed_form(np.ones(4), np.ones(3), np.zeros((3, 4)), np.ones((4, 3)))


# -- H update -------------------------------------------------------------------

def _h_kron_dense(a, b, r1, r3):
    """Dense stacked least squares with column-major vec."""
    m_b, m_a = r1.shape
    f = np.vstack([np.eye(m_a * m_b), np.kron(np.diag(a), np.diag(b))])
    x = np.concatenate([r1.ravel(order="F"), r3.T.ravel(order="F")])
    vec_h = np.linalg.lstsq(f, x, rcond=None)[0]
    return vec_h.reshape((m_b, m_a), order="F")


def test_h_update_identity():
    rng = np.random.default_rng(0)
    r1, r3 = random_complex(rng, (3, 4)), random_complex(rng, (4, 3))
    np.testing.assert_allclose(update_h_kron(np.ones(4), np.ones(3), r1, r3), (r1 + r3.T) / 2, atol=1e-15)


def test_h_update_scalar():
    one = np.ones((1, 1))
    assert update_h_kron(np.ones(1), np.ones(1), 2 * one, 4 * one)[0, 0] == pytest.approx(3.0)


def test_h_update_noise_free(noise_free):
    s, _, p = noise_free
    np.testing.assert_allclose(update_h_kron(s.a_true, s.b_true, p.r1, p.r3), s.h_true, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m_a=st.integers(1, 5), m_b=st.integers(1, 5))
def test_h_update_matches_dense_kronecker(seed, m_a, m_b):
    rng = np.random.default_rng(seed)
    a, b = random_complex(rng, m_a), random_complex(rng, m_b)
    r1, r3 = random_complex(rng, (m_b, m_a)), random_complex(rng, (m_a, m_b))
    np.testing.assert_allclose(update_h_kron(a, b, r1, r3), _h_kron_dense(a, b, r1, r3), atol=1e-10)


def test_h_update_local_optimality():
    rng = np.random.default_rng(4)
    a, b = random_complex(rng, 4), random_complex(rng, 3)
    r1, r3 = random_complex(rng, (3, 4)), random_complex(rng, (4, 3))

    def cost(h):
        return np.linalg.norm(r1 - h) ** 2 + np.linalg.norm(r3 - a[:, None] * h.T * b[None, :]) ** 2

    h = update_h_kron(a, b, r1, r3)
    base = cost(h)
    for _ in range(200):
        assert cost(h + 1e-4 * random_complex(rng, h.shape)) >= base


# -- Z update ---------------------------------------------------------------------

def test_z_update_gamma_zero():
    rng = np.random.default_rng(0)
    r2, r4 = random_complex(rng, (3, 4)), random_complex(rng, (4, 3))
    a, b = random_complex(rng, 4), random_complex(rng, 3)
    np.testing.assert_allclose(update_z(a, b, 0.0, r2, r4), rank_one_approx(r2), atol=1e-14)


def test_z_update_noise_free(noise_free):
    s, _, p = noise_free
    np.testing.assert_allclose(update_z(s.a_true, s.b_true, s.gamma, p.r2, p.r4), s.z_true, atol=1e-12)


def test_z_update_scalar():
    one = np.ones((1, 1))
    assert update_z(np.ones(1), np.ones(1), 1.0, one, 3 * one)[0, 0] == pytest.approx(2.0)


def test_z_update_zero_diagonal():
    with pytest.raises(DegenerateInputError):
        update_z(np.array([1, 0, 1, 1]), np.ones(3), 1.0, np.ones((3, 4)), np.ones((4, 3)))


# -- basic and alternating NLS -------------------------------------------------------

@pytest.mark.parametrize("seed", range(10))
def test_basic_nls_noise_free(default_config, seed):
    s = generate_scenario(default_config, seed)
    est = basic_nls(preprocess(take_calibration_measurements(s, 0.0, seed)))
    assert _rel_err(est.gamma_hat, s.gamma) < 1e-6


def test_basic_nls_unit_reciprocity():
    s = generate_scenario(ScenarioConfig(random_reciprocity=False), 6)
    est = basic_nls(preprocess(take_calibration_measurements(s, 0.0, 1)))
    outer = np.outer(est.a_hat, est.b_hat)
    np.testing.assert_allclose(outer, outer[0, 0], atol=1e-9)
    assert est.gamma_hat == pytest.approx(s.gamma, abs=1e-10)


def test_estimate_invariants(default_config):
    s = generate_scenario(default_config, 2)
    p = preprocess(take_calibration_measurements(s, 0.1, 3))
    for est in (basic_nls(p), alternating_nls(p, basic_nls(p))):
        assert np.linalg.matrix_rank(est.z_hat, tol=1e-10 * np.linalg.norm(est.z_hat)) == 1
        assert est.objective == pytest.approx(nls_objective(est.h_hat, est.z_hat, est.a_hat, est.b_hat, est.gamma_hat, p), rel=1e-12)
        assert np.linalg.norm(est.a_hat) == pytest.approx(1.0, rel=1e-12)
        assert est.a_hat[0].imag == 0 and est.a_hat[0].real >= 0


@pytest.mark.parametrize("seed", range(10))
def test_alternating_noise_free(default_config, seed):
    s = generate_scenario(default_config, seed)
    p = preprocess(take_calibration_measurements(s, 0.0, seed))
    est = alternating_nls(p, basic_nls(p))
    assert _rel_err(est.gamma_hat, s.gamma) < 1e-6
    assert est.objective < 1e-10


@pytest.mark.parametrize("seed", range(30))
def test_alternating_never_worse_than_init(default_config, seed):
    s = generate_scenario(default_config, seed)
    p = preprocess(take_calibration_measurements(s, 10 ** (-seed / 20), seed))
    init = basic_nls(p)
    est = alternating_nls(p, init, record=True)
    assert est.objective <= init.objective
    assert all(t1 <= t0 for t0, t1 in zip(est.trace, est.trace[1:]))
    for value, it in zip(est.trace, est.history):
        assert nls_objective(it["h"], it["z"], it["a"], it["b"], it["gamma"], p) == pytest.approx(value, rel=1e-12)


def test_alternating_stops_on_increase():
    # a heavily noisy case where the approximate Z step can overshoot
    cfg = ScenarioConfig()
    flagged = 0
    for seed in range(100):
        s = generate_scenario(cfg, seed)
        p = preprocess(take_calibration_measurements(s, 3.0, seed))
        init = basic_nls(p)
        est = alternating_nls(p, init)
        assert est.objective <= init.objective
        flagged += est.terminated_on_increase
    assert flagged > 0


def test_alternating_improves_on_average(default_config):
    sigma = 10 ** (-20 / 20)
    eb, ea = [], []
    for seed in range(200):
        s = generate_scenario(default_config, seed)
        p = preprocess(take_calibration_measurements(s, sigma, seed + 10_000))
        init = basic_nls(p)
        eb.append(init.gamma_hat - s.gamma)
        ea.append(alternating_nls(p, init).gamma_hat - s.gamma)
    assert np.mean(np.abs(ea) ** 2) < np.mean(np.abs(eb) ** 2)


# -- pre-calibrated and on/off variants ------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_precalibrated_noise_free(default_config, seed):
    s = generate_scenario(default_config, seed)
    p = preprocess(take_calibration_measurements(s, 0.0, seed))
    est = precalibrated_estimate(p, s.a_true, s.b_true)
    assert _rel_err(est.gamma_hat, s.gamma) < 1e-10


def test_precalibrated_first_round_matches_basic_with_known_arrays():
    s = generate_scenario(ScenarioConfig(random_reciprocity=False), 3)
    p = preprocess(take_calibration_measurements(s, 0.2, 4))
    ones_a, ones_b = np.ones(4, complex), np.ones(3, complex)
    est = precalibrated_estimate(p, ones_a, ones_b, SolverOptions(outer_iters=1))
    expected = estimate_gamma_closed_form(ones_a, ones_b, rank_one_approx(p.r2), p.r4)
    assert est.gamma_hat == pytest.approx(expected, abs=1e-14)


def test_precalibrated_beats_basic(default_config):
    sigma = 10 ** (-15 / 20)
    eb, ep = [], []
    for seed in range(300):
        s = generate_scenario(default_config, seed)
        p = preprocess(take_calibration_measurements(s, sigma, seed + 20_000))
        eb.append(basic_nls(p).gamma_hat - s.gamma)
        ep.append(precalibrated_estimate(p, s.a_true, s.b_true).gamma_hat - s.gamma)
    rmse_b, rmse_p = np.sqrt(np.mean(np.abs(eb) ** 2)), np.sqrt(np.mean(np.abs(ep) ** 2))
    print(f"\n15 dB: basic rmse {rmse_b:.4g}, precalibrated rmse {rmse_p:.4g}")
    assert rmse_p <= rmse_b


@pytest.mark.parametrize("seed", range(5))
def test_onoff_noise_free(default_config, seed):
    s = generate_scenario(default_config, seed)
    y_on, y_off = take_onoff_measurements(s, 0.0, seed)
    assert _rel_err(onoff_estimate(y_on, y_off).gamma_hat, s.gamma) < 1e-10


def test_onoff_agrees_with_phase_flip(default_config):
    s = generate_scenario(default_config, 8)
    y_on, y_off = take_onoff_measurements(s, 0.0, 1)
    flip = basic_nls(preprocess(take_calibration_measurements(s, 0.0, 1))).gamma_hat
    assert onoff_estimate(y_on, y_off).gamma_hat == pytest.approx(flip, abs=1e-10)


def test_onoff_without_repeater_gain_is_degenerate(default_config):
    s = generate_scenario(default_config, 8)
    s = Scenario(**{**s.__dict__, "alpha": 0.0, "beta": 0.0})
    y_on, y_off = take_onoff_measurements(s, 0.0, 1)
    with pytest.raises(DegenerateInputError):
        onoff_estimate(y_on, y_off)


def test_solver_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(ab_iters=0)
    with pytest.raises(ValueError):
        SolverOptions(ab_tol=0.0)
