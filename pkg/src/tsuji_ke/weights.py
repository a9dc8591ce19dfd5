"""The weight beta (0 <= beta <= 1) and exponent epsilon of the modified iteration.

beta is either identically 1 or a normalised squared section modulus

    beta(z) = |Q(z)|^2 / (c |z|^{2k}),

with ``c`` chosen so that the sampled maximum of beta on X equals 1.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .variety import Hypersurface, VarietyPoint, as_arrays, eval_monomials, parse_hypersurface

KINDS = ("constant_one", "polynomial_zero")


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightSpec:
    kind: str
    epsilon: float
    Q: Hypersurface | None = None
    norm_constant: float = 1.0

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant_one"

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "epsilon": self.epsilon, "norm_constant": self.norm_constant}
        if self.Q is not None:
            doc["Q"] = self.Q.to_table()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "WeightSpec":
        w = make_weight(doc["kind"], doc.get("Q"), doc["epsilon"])
        return replace(w, norm_constant=float(doc.get("norm_constant", 1.0)))


def make_weight(kind: str, Q=None, epsilon: float = 1.0, ambient_dim: int | None = None) -> WeightSpec:
    """Build a weight.  ``Q`` may be a text polynomial, a coefficient table or a Hypersurface."""
    if kind not in KINDS:
        raise WeightError(f"unknown weight kind {kind!r}")
    if not (0 < epsilon <= 1):
        raise WeightError(f"epsilon must lie in (0, 1], got {epsilon}")
    if kind == "constant_one":
        return WeightSpec(kind, float(epsilon))
    if Q is None:
        raise WeightError("polynomial_zero weight needs Q")
    if not isinstance(Q, Hypersurface):
        try:
            Q = parse_hypersurface(Q, ambient_dim=ambient_dim, require_ample=False)
        except ValueError as exc:
            raise WeightError(str(exc)) from exc
    return WeightSpec(kind, float(epsilon), Q)


def _raw_beta(w: WeightSpec, coords):
    Q = w.Q
    k = Q.degree
    zz = np.sum(np.abs(coords) ** 2, axis=-1)
    return np.abs(eval_monomials(coords, Q.exponents) @ Q.coefficients) ** 2 / zz ** k


def normalize_weight_sup(w: WeightSpec, S) -> WeightSpec:
    """Fix the normalisation so that max over S of beta is 1."""
    if w.is_constant:
        return w
    if S.count == 0:
        raise WeightError("cannot normalise on an empty sample")
    top = float(np.max(_raw_beta(w, S.coords)))
    if top <= 0:
        raise WeightError("Q vanishes on every sample point")
    return replace(w, norm_constant=top)


def eval_weight(w: WeightSpec, points):
    """beta at the given point(s); raising to epsilon is left to the caller."""
    if isinstance(points, VarietyPoint):
        z = points.homogeneous_coords[None, :]
    else:
        z = np.asarray(points.coords if hasattr(points, "coords") else as_arrays(points)[0])
    if w.is_constant:
        vals = np.ones(len(z))
    else:
        vals = _raw_beta(w, z) / w.norm_constant
    return float(vals[0]) if isinstance(points, VarietyPoint) else vals


def weight_factor(w: WeightSpec | None, points):
    """beta^epsilon per point; exactly 1.0 for the constant weight."""
    if w is None or w.is_constant:
        return np.ones(len(as_arrays(points)[0]))
    return eval_weight(w, points) ** w.epsilon
