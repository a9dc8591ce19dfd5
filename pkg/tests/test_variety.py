import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tsuji_ke.diagnostics import ddbar_fd
from tsuji_ke.sampling import sample_fs
from tsuji_ke.variety import (
    VarietyError, VarietyPoint, canonical_power_basis, chart_select, eval_monomials,
    evaluate_basis, lift_curve_chart, monomial_exponents, normalize_coords, parse_hypersurface,
    residue_fs_density, smoothness_probe,
)


def test_parse_quartic(quartic):
    assert quartic.ambient_projective_dim == 2
    assert quartic.degree == 4
    assert quartic.canonical_twist == 1
    assert quartic.genus == 3
    assert quartic.pivot == (4, 0, 0)


def test_parse_unicode_and_table_agree():
    a = parse_hypersurface("x⁴ + y⁴ + z⁴ + 2i x y z²")
    b = parse_hypersurface(a.to_table())
    assert a.content_hash() == b.content_hash()
    assert np.isclose(a.coefficients[np.argmax(np.abs(a.coefficients.imag))], 2j)


def test_quintic_threefold_twist(surface):
    assert surface.n == 2
    assert surface.canonical_twist == 1
    assert surface.fs_mass == pytest.approx(5 / 2)


@pytest.mark.parametrize("text,msg", [
    ("x^3 + y^3 + z^3", "not ample"),
    ("x^4 + y^3 + z^4", "homogeneous"),
    ("x^4 - x^4", "zero"),
    ("x^4 + y^4", r"P\^2"),
])
def test_parse_rejects(text, msg):
    with pytest.raises(VarietyError, match=msg):
        parse_hypersurface(text)


def test_singular_input_fails_probe():
    X = parse_hypersurface("x^2*y^2", ambient_dim=2, require_ample=False)
    r = smoothness_probe(X, 500, 0)
    assert r["failures"] == r["trials"]


def test_smooth_probe_passes(perturbed):
    r = smoothness_probe(perturbed, 2000, 0)
    assert r["failures"] == 0 and r["min_gradient_norm"] > 1e-3


@pytest.mark.parametrize("m,size", [(1, 3), (2, 6), (4, 14), (12, 46)])
def test_basis_size_quartic(quartic, m, size):
    # Riemann-Roch on a genus 3 curve: h^0(mK) = (2m-1)(g-1) for m >= 2, g for m = 1
    assert len(canonical_power_basis(quartic, m)) == size


def test_basis_excludes_pivot_multiples(quartic):
    b = canonical_power_basis(quartic, 6)
    assert not np.any(b.exponents[:, 0] >= 4)
    assert np.all(b.exponents.sum(axis=1) == 6)


def test_basis_scale_gives_fs_metric(quartic, rng):
    # identity coefficients reproduce |z|^{2D} on the full monomial list
    D = 3
    exps = monomial_exponents(3, D)
    scale = np.sqrt([math.factorial(D) / np.prod([math.factorial(e) for e in r]) for r in exps])
    z = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    v = eval_monomials(z, exps) * scale
    assert np.sum(np.abs(v) ** 2) == pytest.approx(np.sum(np.abs(z) ** 2) ** D, rel=1e-13)


@given(st.integers(2, 5), st.integers(0, 7))
def test_monomial_count(n_vars, degree):
    exps = monomial_exponents(n_vars, degree)
    assert len(exps) == math.comb(degree + n_vars - 1, n_vars - 1)
    assert len({tuple(r) for r in exps}) == len(exps)


@given(st.lists(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
                min_size=3, max_size=3).filter(lambda v: max(abs(c) for c in v) > 1e-3))
def test_normalize_coords(v):
    z, a = normalize_coords(np.array(v))
    assert z[a] == 1
    assert np.all(np.abs(z) <= 1 + 1e-12)


def test_chart_select_rejects_off_variety(quartic):
    with pytest.raises(VarietyError, match="off the variety"):
        chart_select(quartic, [1.0, 0.3, 0.2])


def test_residue_charts_give_same_density(perturbed, perturbed_set):
    # the residue frame is one form for every admissible j, so Phi must not depend on j
    S = perturbed_set.subset(np.arange(200))
    phi = residue_fs_density(perturbed, S)
    alt = []
    for k in range(S.count):
        p = S.point(k)
        other = [j for j in range(3) if j not in (p.chart_affine, p.chart_residue)][0]
        alt.append(residue_fs_density(perturbed, VarietyPoint(p.homogeneous_coords, p.chart_affine, other)))
    assert np.allclose(alt, phi, rtol=1e-8)


def test_density_against_pullback_hessian(perturbed, perturbed_set):
    # independent oracle: g_FS = ddbar log |Z(t)|^2 along the local chart by finite differences
    S = perturbed_set.subset(np.arange(0, 400, 20))
    phi = residue_fs_density(perturbed, S)
    for k in range(S.count):
        p = S.point(k)
        j, a = p.chart_residue, p.chart_affine
        loc = 3 - a - j
        t0 = p.homogeneous_coords[loc]

        def logz(t):
            z, ok = lift_curve_chart(perturbed, p, t)
            assert ok.all()
            return np.log(np.sum(np.abs(z) ** 2, axis=-1))

        g = ddbar_fd(logz, np.array([t0]))[0]
        Fj = perturbed.gradient(p.homogeneous_coords)[j]
        assert phi[k] == pytest.approx(1 / (abs(Fj) ** 2 * g), rel=1e-7)


def test_evaluate_basis_single_point(quartic, quartic_set):
    b = canonical_power_basis(quartic, 2)
    p = quartic_set.point(0)
    assert evaluate_basis(b, p).shape == (6,)
    assert np.allclose(evaluate_basis(b, p), evaluate_basis(b, quartic_set)[0])


def test_fs_mass_by_sampling(quartic):
    S = sample_fs(quartic, 20000, 5)
    # symmetry of the Fermat quartic: each |z_i|^2/|z|^2 integrates to mass / 3
    z = S.coords
    f = np.abs(z[:, 0]) ** 2 / np.sum(np.abs(z) ** 2, axis=1)
    assert np.sum(S.weights * f) == pytest.approx(4 / 3, abs=0.03)
