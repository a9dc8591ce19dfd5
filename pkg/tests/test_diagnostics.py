import numpy as np
import pytest
import sympy
from hypothesis import given, strategies as st

from tsuji_ke.diagnostics import (
    ConvergenceSeries, DiagnosticError, bergman_extremal_gap, contour_derivatives,
    convergence_series, curvature_coefficient, curvature_coefficient_contour, ddbar_fd,
    einstein_ratio_contour, einstein_ratio_fd, einstein_residual, envelope_from_log_ratios,
    envelope_monotonicity, lemma22_quadrature, rate_fit, synthetic_potential,
)
from tsuji_ke.iteration import gram, init_state, run_chain
from tsuji_ke.sampling import sample_fs
from tsuji_ke.variety import VarietyError, canonical_power_basis, evaluate_basis


@pytest.fixture(scope="module")
def chain(perturbed, perturbed_set):
    return run_chain(perturbed, 1, 7, S=perturbed_set)


@pytest.fixture(scope="module")
def disk_points():
    rng = np.random.default_rng(3)
    return 0.3 * (rng.random(12) - 0.5 + 1j * (rng.random(12) - 0.5))


# ---------------------------------------------------------------- extremal

def test_extremal_identity_gram(quartic, quartic_set):
    s = init_state(quartic, 1)
    p = quartic_set.point(5)
    G = np.eye(6, dtype=complex)
    r = bergman_extremal_gap(s, p, quartic_set, None, quartic, G=G)
    v = evaluate_basis(canonical_power_basis(quartic, 2), p)
    assert r["rho"] == pytest.approx(np.sum(np.abs(v) ** 2), rel=1e-14)
    assert np.allclose(np.conj(r["coefficients"]), v / np.linalg.norm(v))


def test_extremal_on_chain(chain, perturbed, perturbed_set):
    st_ = chain[0][3]
    G = gram(st_, canonical_power_basis(perturbed, st_.power + 1), perturbed_set, None, perturbed)
    for k in range(10):
        r = bergman_extremal_gap(st_, perturbed_set.point(97 * k), perturbed_set, None, perturbed,
                                 G=G, seed=k)
        assert r["gap"] <= 1e-9
        assert r["ok_random"] and r["max_random_ratio"] <= 1 + 1e-12


def test_extremal_singular(quartic, quartic_set):
    G = np.zeros((6, 6), dtype=complex)
    with pytest.raises(DiagnosticError):
        bergman_extremal_gap(init_state(quartic, 1), quartic_set.point(0), quartic_set, None,
                             quartic, G=G)


# ---------------------------------------------------------------- lemma 2.2

def test_lemma22_m100():
    r = lemma22_quadrature(1, 100, 16)
    assert r["analytic"] == pytest.approx(1 / 101, rel=1e-15)
    assert r["abs_error"] <= 1e-8


def test_lemma22_surface_value():
    r = lemma22_quadrature(2, 50, 16)
    assert r["analytic"] == pytest.approx(1 / (51 * 52), rel=1e-15)


@pytest.mark.parametrize("n,m,b", [(1, 20, 1.0), (1, 60, 2.0), (2, 30, 1.0), (2, 80, 3.0)])
def test_lemma22_against_closed_form(n, m, b):
    # oracle: exact antiderivative of (1-s)^m s^(n-1)/(n-1)! from sympy
    s = sympy.Symbol("s")
    R = min(sympy.Rational(b) * sympy.log(m) ** 2 / m, 1)
    exact = sympy.integrate((1 - s) ** m * s ** (n - 1) / sympy.factorial(n - 1), (s, 0, R))
    r = lemma22_quadrature(n, m, b)
    assert r["numeric"] == pytest.approx(float(sympy.N(exact, 30)), rel=1e-13)


def test_lemma22_superpolynomial():
    ms = [20, 50, 100, 200]
    errs = [lemma22_quadrature(1, m, 1.0)["abs_error"] for m in ms]
    slope = np.polyfit(np.log(ms), np.log(errs), 1)[0]
    assert slope < -4
    assert all(b < a for a, b in zip(errs, errs[1:]))


@pytest.mark.parametrize("args", [(3, 10, 1.0), (1, 4, 1.0), (1, 10, 0.0)])
def test_lemma22_preconditions(args):
    with pytest.raises(ValueError):
        lemma22_quadrature(*args)


# ---------------------------------------------------------------- curvature operators

@pytest.mark.parametrize("kind", ["flat", "fubini", "hyperbolic", "poincare"])
def test_synthetic_fd(kind, disk_points):
    phi, _, g, res = synthetic_potential(kind)
    gf, ratio = einstein_ratio_fd(phi, disk_points)
    assert np.allclose(gf, g(disk_points), rtol=1e-7, atol=0)
    assert np.allclose(np.abs(1 - ratio), res, rtol=0, atol=1e-7)


@pytest.mark.parametrize("kind", ["flat", "fubini", "hyperbolic", "poincare"])
def test_synthetic_contour(kind, disk_points):
    _, psi, g, res = synthetic_potential(kind)
    gc, ratio = einstein_ratio_contour(psi, disk_points)
    assert np.allclose(gc, g(disk_points), rtol=1e-10, atol=0)
    assert np.allclose(np.abs(1 - ratio), res, rtol=0, atol=1e-9)


@pytest.mark.parametrize("m", [1, 7, 20])
def test_flat_independent_of_m(m, disk_points):
    phi = lambda t: np.log(np.exp(m * np.abs(t) ** 2)) / m
    assert np.allclose(ddbar_fd(phi, disk_points), 1.0, rtol=1e-9)


def test_fd_order():
    # plain 4th-order stencil: halving h divides the error by about 16
    phi, _, g, _ = synthetic_potential("hyperbolic")
    t0 = np.array([0.3 + 0.2j])
    e1 = abs(ddbar_fd(phi, t0, 0.08, richardson=False)[0] / g(t0)[0] - 1)
    e2 = abs(ddbar_fd(phi, t0, 0.04, richardson=False)[0] / g(t0)[0] - 1)
    assert 12 < e1 / e2 < 20


def test_contour_taylor_coefficients():
    # psi = t^2 u^3 has a single coefficient
    c = contour_derivatives(lambda t, u: t ** 2 * u ** 3, np.array([0.0j]))
    assert c[0, 2, 3] == pytest.approx(1.0, abs=1e-12)
    # only low orders are meaningful: rounding is amplified by r^-(j+k)
    low = c[0, :5, :5].copy()
    low[2, 3] = 0
    assert np.max(np.abs(low)) < 1e-9


def test_fd_matches_contour_on_chain(chain, perturbed, perturbed_set):
    pts = perturbed_set.subset(np.arange(0, 600, 30))
    for s in chain[0][2:]:
        g = curvature_coefficient(s, perturbed, pts)
        gc, _ = curvature_coefficient_contour(s, perturbed, pts)
        assert np.allclose(g, gc, rtol=1e-6)


def test_curvature_single_point(chain, perturbed, perturbed_set):
    s = chain[0][3]
    g = curvature_coefficient(s, perturbed, perturbed_set.point(3))
    assert isinstance(g, float) and g > 0


def test_curvature_curves_only(surface):
    S = sample_fs(surface, 10, 0)
    with pytest.raises(VarietyError):
        curvature_coefficient(init_state(surface, 1), surface, S)


def test_einstein_residual_runs(chain, perturbed, perturbed_set):
    r = einstein_residual(chain[0][4], perturbed_set.subset(np.arange(100)), perturbed)
    assert r["skipped"] == []
    assert 0 <= r["median"] <= r["sup"]
    assert np.all(r["values"] >= 0)


# ---------------------------------------------------------------- rates and envelopes

def test_rate_fit_self():
    ms = np.arange(4, 20)
    r = rate_fit(ms, 0.5 * np.log(ms) / ms)
    assert r["C"] == pytest.approx(0.5, rel=1e-14) and r["R2"] == pytest.approx(1.0, rel=1e-14)


def test_rate_fit_faster_decay_is_reported():
    ms = np.arange(4, 20)
    r = rate_fit(ms, 1.0 / ms ** 2)
    assert 0 < r["R2"] < 1


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_rate_fit_scale(k, seed):
    rng = np.random.default_rng(seed)
    ms = np.arange(3, 15)
    d = rng.random(len(ms)) + 0.1
    a, b = rate_fit(ms, d), rate_fit(ms, k * d)
    assert b["C"] == pytest.approx(k * a["C"], rel=1e-12)
    assert b["R2"] == pytest.approx(a["R2"], rel=1e-12)


@pytest.mark.parametrize("ms,d", [([1, 2, 3], [1, 2, 3]), ([2, 3, 4, 5], [1, 1, 1, 1]),
                                  ([2, 3, 4, 5], [1, 0, 1, 1])])
def test_rate_fit_errors(ms, d):
    with pytest.raises(ValueError):
        rate_fit(ms, d)


def test_envelope_product_chain():
    ms = np.arange(1, 15)
    logs = np.log(ms + 1.0)[:, None] * np.ones((1, 4))
    r = envelope_from_log_ratios(ms, logs)
    assert r["A"] == pytest.approx(1.0, rel=1e-12)
    assert r["violations"] == []


def test_envelope_constant_chain():
    r = envelope_from_log_ratios(np.arange(1, 8), np.zeros((7, 3)))
    assert r["A"] == 0.0 and r["violations"] == []


def test_envelope_on_chain(chain, perturbed_set):
    r = envelope_monotonicity(chain[0], perturbed_set.subset(np.arange(200)))
    assert r["A"] >= 0
    with pytest.raises(ValueError):
        envelope_monotonicity(chain[0][:3], perturbed_set)


def test_series_csv(chain, perturbed, perturbed_set):
    states, rep, _ = chain
    probe = perturbed_set.subset(np.arange(60))
    ser = convergence_series(states, probe, perturbed, rep)
    text = ser.to_csv().splitlines()
    assert text[0] == "m,sup_delta,mean_delta,einstein_sup,einstein_median,L_value,trace_residual,holder_slack"
    assert len(text) == len(states)
    assert ser.fit is not None and "C" in ser.fit
    assert '"sup_label": "sampled sup"' in ser.to_json()


def test_series_validate():
    s = ConvergenceSeries(m=[1, 2], sup_delta=[0.1])
    with pytest.raises(ValueError):
        s.validate()
