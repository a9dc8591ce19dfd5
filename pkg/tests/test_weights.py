import numpy as np
import pytest

from tsuji_ke.weights import (
    WeightError, WeightSpec, eval_weight, make_weight, normalize_weight_sup, weight_factor,
)


def test_constant_weight_is_one(quartic_set):
    w = make_weight("constant_one", epsilon=0.3)
    assert np.array_equal(weight_factor(w, quartic_set), np.ones(quartic_set.count))
    assert eval_weight(w, quartic_set.point(0)) == 1.0


def test_normalised_sup_is_one(quartic_set):
    w = normalize_weight_sup(make_weight("polynomial_zero", "x^2", 0.5, ambient_dim=2), quartic_set)
    b = eval_weight(w, quartic_set)
    assert b.max() == pytest.approx(1.0, rel=1e-15)
    assert np.all((b >= 0) & (b <= 1 + 1e-15))


def test_beta_formula(quartic_set):
    w = normalize_weight_sup(make_weight("polynomial_zero", "x^2", 1.0, ambient_dim=2), quartic_set)
    z = quartic_set.coords
    raw = np.abs(z[:, 0] ** 2) ** 2 / np.sum(np.abs(z) ** 2, axis=1) ** 2
    assert np.allclose(eval_weight(w, quartic_set), raw / raw.max(), rtol=1e-14)


def test_factor_raises_to_epsilon(quartic_set):
    w = normalize_weight_sup(make_weight("polynomial_zero", "x", 0.25, ambient_dim=2), quartic_set)
    assert np.allclose(weight_factor(w, quartic_set), eval_weight(w, quartic_set) ** 0.25)


@pytest.mark.parametrize("eps", [0.0, -0.1, 1.5])
def test_epsilon_range(eps):
    with pytest.raises(WeightError):
        make_weight("constant_one", epsilon=eps)


def test_unknown_kind():
    with pytest.raises(WeightError):
        make_weight("gaussian")


def test_missing_Q():
    with pytest.raises(WeightError):
        make_weight("polynomial_zero", None, 0.5)


def test_dict_roundtrip(quartic_set):
    w = normalize_weight_sup(make_weight("polynomial_zero", "x^2 + y*z", 0.5, ambient_dim=2),
                             quartic_set)
    v = WeightSpec.from_dict(w.to_dict())
    assert np.array_equal(eval_weight(v, quartic_set), eval_weight(w, quartic_set))
