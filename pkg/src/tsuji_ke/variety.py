"""Smooth projective hypersurfaces, their charts and pluricanonical sections.

A point of ``X = {F = 0}`` in ``P^N`` is always stored with its max-modulus
coordinate (the *affine chart*) set to 1.  Sections of ``K_X^m`` are homogeneous
polynomials of degree ``m (d - N - 1)`` written against the Poincare residue
frame

    omega = (-1)^pos(j) dz_L / (dF/dz_j)        (dz_L: the n remaining coords)

where ``pos(j)`` is the position of ``j`` among the non-affine coordinates.
With that sign this is the same holomorphic form for every admissible ``j``,
so frame coefficients of a section are just the polynomial evaluated in the
affine chart.  The residue index only decides which coordinate is solved for
when the Fubini-Study density ``Phi = |omega|^2 / vol_FS`` is computed.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

TOL_ON_VARIETY = 1e-9
RECHART_RATIO = 1e-6
SINGULAR_FLOOR = 1e-10
SMOOTHNESS_FLOOR = 1e-6

_DEFAULT_NAMES = ("x", "y", "z", "w", "u", "v", "s", "r")
_SUPERSCRIPTS = str.maketrans("⁰¹²³⁴⁵⁶⁷⁸⁹", "0123456789")


class VarietyError(ValueError):
    """Raised for unsupported varieties, off-variety points and chart failures."""


@dataclass(frozen=True)
class Hypersurface:
    """A degree ``d`` hypersurface ``{F = 0}`` in ``P^N``.

    ``exponents`` has one row per monomial of ``F`` (length ``N + 1``) and
    ``coefficients`` the matching complex coefficients.
    """

    ambient_projective_dim: int
    degree: int
    exponents: np.ndarray
    coefficients: np.ndarray
    _grad: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        exps = np.asarray(self.exponents, dtype=np.int64)
        coeffs = np.asarray(self.coefficients, dtype=np.complex128)
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "coefficients", coeffs)
        grad = []
        for i in range(self.ambient_projective_dim + 1):
            mask = exps[:, i] > 0
            de = exps[mask].copy()
            de[:, i] -= 1
            grad.append((de, coeffs[mask] * exps[mask, i]))
        object.__setattr__(self, "_grad", tuple(grad))

    @property
    def n(self) -> int:
        """Complex dimension of X."""
        return self.ambient_projective_dim - 1

    @property
    def canonical_twist(self) -> int:
        return self.degree - self.ambient_projective_dim - 1

    @property
    def coefficient_scale(self) -> float:
        return float(np.sum(np.abs(self.coefficients)))

    @property
    def genus(self) -> int:
        if self.n != 1:
            raise VarietyError("genus is only defined here for plane curves")
        return (self.degree - 1) * (self.degree - 2) // 2

    @property
    def fs_mass(self) -> float:
        """Total mass of X for the volume form omega_FS^n / n!."""
        return self.degree / math.factorial(self.n)

    @property
    def pivot(self) -> tuple:
        """Leading monomial of F in graded-lexicographic order."""
        return max(tuple(int(e) for e in row) for row in self.exponents)

    def evaluate(self, z):
        return eval_monomials(z, self.exponents) @ self.coefficients

    def gradient(self, z):
        z = np.asarray(z, dtype=np.complex128)
        cols = [eval_monomials(z, de) @ c if len(c) else np.zeros(z.shape[:-1], complex)
                for de, c in self._grad]
        return np.stack(cols, axis=-1)

    def to_table(self) -> list:
        return [{"exponent": [int(e) for e in row], "re": float(c.real), "im": float(c.imag)}
                for row, c in zip(self.exponents, self.coefficients)]

    def content_hash(self) -> str:
        payload = json.dumps({"N": self.ambient_projective_dim, "terms": self.to_table()},
                             sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class VarietyPoint:
    homogeneous_coords: np.ndarray
    chart_affine: int
    chart_residue: int


@dataclass(frozen=True)
class CanonicalBasis:
    """Monomial basis of H^0(X, K_X^m) modulo F.

    Monomials are carried with the factor ``sqrt(D! / alpha!)`` so that the
    identity coefficient matrix is the Fubini-Study metric ``|z|^{2D}``.
    """

    power: int
    exponents: np.ndarray
    scale: np.ndarray
    reduction_rule: tuple

    def __len__(self):
        return len(self.exponents)

    @property
    def degree(self) -> int:
        return int(self.exponents[0].sum()) if len(self.exponents) else 0


def eval_monomials(z, exponents):
    """Evaluate ``z^alpha`` for every row ``alpha`` of ``exponents``.

    ``z`` has shape ``(..., N+1)``; the result has shape ``(..., len(exponents))``.
    """
    z = np.asarray(z, dtype=np.complex128)
    exponents = np.asarray(exponents, dtype=np.int64)
    top = int(exponents.max()) if exponents.size else 0
    powers = np.empty(z.shape + (top + 1,), dtype=np.complex128)
    powers[..., 0] = 1.0
    for e in range(1, top + 1):
        powers[..., e] = powers[..., e - 1] * z
    out = np.ones(z.shape[:-1] + (len(exponents),), dtype=np.complex128)
    for i in range(z.shape[-1]):
        out = out * powers[..., i, exponents[:, i]]
    return out


def monomial_exponents(n_vars: int, degree: int) -> np.ndarray:
    """All exponent vectors of total ``degree`` in graded-lex (descending) order."""
    if degree < 0:
        return np.zeros((0, n_vars), dtype=np.int64)
    rows = []
    for bars in itertools.combinations(range(degree + n_vars - 1), n_vars - 1):
        prev, row = -1, []
        for b in bars:
            row.append(b - prev - 1)
            prev = b
        row.append(degree + n_vars - 2 - prev)
        rows.append(row)
    rows.sort(reverse=True)
    return np.array(rows, dtype=np.int64).reshape(-1, n_vars)


# --------------------------------------------------------------------------- parsing

def _variable_order(names, variables):
    if variables is not None:
        return list(variables)
    indexed = [re.fullmatch(r"([a-zA-Z]+)_?(\d+)", nm) for nm in names]
    if names and all(indexed):
        return sorted(names, key=lambda nm: int(re.fullmatch(r"[a-zA-Z]+_?(\d+)", nm).group(1)))
    if all(nm in _DEFAULT_NAMES for nm in names):
        k = max(_DEFAULT_NAMES.index(nm) for nm in names) + 1
        return list(_DEFAULT_NAMES[:k])
    return sorted(names)


def _parse_text(text: str, variables=None, ambient_dim=None):
    import sympy
    from sympy.parsing.sympy_parser import (
        convert_xor, implicit_multiplication_application, parse_expr, standard_transformations)

    src = text.replace("−", "-")
    src = re.sub(r"([⁰¹²³⁴⁵⁶⁷⁸⁹]+)", lambda mt: "^" + mt.group(1).translate(_SUPERSCRIPTS), src)
    src = re.sub(r"(?<![A-Za-z_])i(?![A-Za-z_0-9])", "I", src)
    expr = parse_expr(src, transformations=standard_transformations
                      + (implicit_multiplication_application, convert_xor))
    if sympy.expand(expr) == 0:
        raise VarietyError("defining polynomial is identically zero")
    names = sorted(str(s) for s in expr.free_symbols)
    order = _variable_order(names, variables)
    if ambient_dim is not None:
        if len(order) > ambient_dim + 1:
            raise VarietyError(f"{len(order)} variables do not fit in P^{ambient_dim}")
        if variables is None and all(nm in _DEFAULT_NAMES for nm in order):
            order = list(_DEFAULT_NAMES[:ambient_dim + 1])
    syms = [sympy.Symbol(nm) for nm in order]
    poly = sympy.Poly(sympy.expand(expr), *syms)
    terms = [(list(mon), complex(sympy.N(c))) for mon, c in poly.terms()]
    return len(syms) - 1, terms


def parse_hypersurface(spec, variables=None, ambient_dim=None, require_ample=True) -> Hypersurface:
    """Build a :class:`Hypersurface` from a text polynomial or a coefficient table.

    ``spec`` is either a string such as ``"x^4 + y^4 + z^4"`` (unicode
    superscripts and ``i`` for the imaginary unit are accepted) or a list of
    ``{"exponent": [...], "re": .., "im": ..}`` records.
    """
    if isinstance(spec, str):
        N, terms = _parse_text(spec, variables, ambient_dim)
    else:
        rows = list(spec)
        if not rows:
            raise VarietyError("empty coefficient table")
        terms = [(list(r["exponent"]), complex(r.get("re", 0.0), r.get("im", 0.0))) for r in rows]
        N = len(terms[0][0]) - 1
        if any(len(e) != N + 1 for e, _ in terms):
            raise VarietyError("exponent vectors of inconsistent length")
    terms = [(e, c) for e, c in terms if c != 0]
    if not terms:
        raise VarietyError("defining polynomial is identically zero")
    degrees = {sum(e) for e, _ in terms}
    if len(degrees) != 1:
        raise VarietyError(f"polynomial is not homogeneous (degrees {sorted(degrees)})")
    d = degrees.pop()
    if N < 2:
        raise VarietyError("ambient space must be at least P^2")
    X = Hypersurface(N, d, np.array([e for e, _ in terms]), np.array([c for _, c in terms]))
    if require_ample and X.canonical_twist < 1:
        raise VarietyError(f"degree {d} <= N+1 = {N + 1}: canonical bundle is not ample")
    return X


# --------------------------------------------------------------------------- charts

def normalize_coords(z):
    """Divide by the max-modulus coordinate (lowest index on ties)."""
    z = np.asarray(z, dtype=np.complex128)
    affine = np.argmax(np.abs(z), axis=-1)
    lead = np.take_along_axis(z, affine[..., None], axis=-1)
    out = z / lead
    np.put_along_axis(out, affine[..., None], 1.0 + 0j, axis=-1)
    return out, affine


def select_residue(grad, affine):
    """argmax_j |dF/dz_j| over j != affine; lowest index wins exact ties."""
    mag = np.abs(grad).copy()
    np.put_along_axis(mag, np.asarray(affine)[..., None], -1.0, axis=-1)
    return np.argmax(mag, axis=-1)


def chart_arrays(X: Hypersurface, raw, tol=TOL_ON_VARIETY):
    """Vectorised :func:`chart_select`: returns ``(coords, affine, residue)``."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.complex128))
    if raw.shape[-1] != X.ambient_projective_dim + 1:
        raise VarietyError("coordinate vector has the wrong length")
    if np.any(np.all(raw == 0, axis=-1)):
        raise VarietyError("zero vector is not a projective point")
    z, affine = normalize_coords(raw)
    scale = X.coefficient_scale
    resid = np.abs(X.evaluate(z))
    bad = np.flatnonzero(resid > tol * scale)
    if bad.size:
        k = int(bad[0])
        raise VarietyError(f"point {k} is off the variety: |F| = {resid[k]:.3e}")
    grad = X.gradient(z)
    gnorm = np.linalg.norm(grad, axis=-1)
    bad = np.flatnonzero(gnorm < SINGULAR_FLOOR * scale)
    if bad.size:
        raise VarietyError(f"point {int(bad[0])} is singular (gradient vanishes)")
    residue = select_residue(grad, affine)
    return z, affine, residue


def chart_select(X: Hypersurface, raw_coords) -> VarietyPoint:
    z, a, j = chart_arrays(X, raw_coords)
    return VarietyPoint(z[0], int(a[0]), int(j[0]))


def as_arrays(points):
    """Return ``(coords, affine, residue)`` arrays for a point, a batch or a SampleSet."""
    if isinstance(points, VarietyPoint):
        return (points.homogeneous_coords[None, :], np.array([points.chart_affine]),
                np.array([points.chart_residue]))
    return points.coords, points.affine, points.residue


# --------------------------------------------------------------------------- sections

def canonical_power_basis(X: Hypersurface, m: int) -> CanonicalBasis:
    """Basis of H^0(X, K_X^m): degree ``m (d-N-1)`` monomials not divisible by the pivot.

    ``{F}`` is a Groebner basis of the principal ideal it generates, so the
    monomials outside the pivot's multiples are a basis of the quotient in
    every degree, and for hypersurfaces that quotient is H^0(X, O(D)).
    """
    if m < 1:
        raise VarietyError("power must be >= 1")
    D = m * X.canonical_twist
    exps = monomial_exponents(X.ambient_projective_dim + 1, D)
    pivot = np.array(X.pivot)
    if D >= X.degree:
        exps = exps[~np.all(exps >= pivot, axis=1)]
    logscale = (math.lgamma(D + 1) - np.sum([[math.lgamma(e + 1) for e in row] for row in exps], axis=1))
    return CanonicalBasis(m, exps, np.exp(0.5 * logscale), ("grlex-pivot-complement", X.pivot))


def evaluate_basis(basis: CanonicalBasis, points):
    """Frame coefficients of the basis sections in the residue frame ``omega^m``.

    Returns shape ``(len(basis),)`` for a single :class:`VarietyPoint`, else
    ``(K, len(basis))``.
    """
    z, _, _ = as_arrays(points)
    vals = eval_monomials(z, basis.exponents) * basis.scale
    return vals[0] if isinstance(points, VarietyPoint) else vals


def _fs_pullback_det(z, grad, residue, affine):
    """det of the pulled-back omega_FS metric in the local coords of the residue chart."""
    K, n1 = z.shape
    idx = np.arange(n1)
    gj = np.take_along_axis(grad, residue[:, None], axis=1)[:, 0]
    zz = np.sum(np.abs(z) ** 2, axis=1)
    local = np.array([[i for i in idx if i != a and i != j] for a, j in zip(affine, residue)])
    n = local.shape[1]
    T = np.zeros((K, n, n1), dtype=np.complex128)
    rows = np.arange(K)
    for l in range(n):
        T[rows, l, local[:, l]] = 1.0
        T[rows, l, residue] = -grad[rows, local[:, l]] / gj
    inner = np.einsum("kli,kmi->klm", T, T.conj())
    proj = np.einsum("kli,ki->kl", T, z.conj())
    g = inner / zz[:, None, None] - proj[:, :, None] * proj.conj()[:, None, :] / zz[:, None, None] ** 2
    det = np.real(np.linalg.det(g)) if n > 1 else np.real(g[:, 0, 0])
    return det, gj


def residue_fs_density(X: Hypersurface, points):
    """Phi = |omega|^2 / (omega_FS^n / n!) at the given point(s).

    Both sides carry the ``(sqrt(-1)/2pi)^n`` normalisation, so in the residue
    chart Phi = 1 / (|dF/dz_j|^2 det g_FS).
    """
    z, a, j = as_arrays(points)
    grad = X.gradient(z)
    det, gj = _fs_pullback_det(z, grad, np.asarray(j), np.asarray(a))
    if np.any(~(det > 0)):
        raise VarietyError("degenerate pulled-back Fubini-Study metric")
    phi = 1.0 / (np.abs(gj) ** 2 * det)
    return float(phi[0]) if isinstance(points, VarietyPoint) else phi


def fs_volume_density(X: Hypersurface, coords, affine, residue):
    """det g_FS in the residue chart's local coordinates (used by the chart quadrature)."""
    grad = X.gradient(coords)
    det, _ = _fs_pullback_det(coords, grad, residue, affine)
    return det


# --------------------------------------------------------------------------- lines

def line_polynomials(X: Hypersurface, P, Q):
    """Coefficients (ascending) of ``t -> F(P + t Q)`` for each row of P, Q."""
    d = X.degree
    t = np.exp(2j * np.pi * np.arange(d + 1) / (d + 1))
    pts = P[:, None, :] + t[None, :, None] * Q[:, None, :]
    vals = X.evaluate(pts)
    return np.fft.fft(vals, axis=1) / (d + 1)


def polynomial_roots(coeffs):
    """Roots of each ascending-coefficient row via batched companion matrices."""
    L, k = coeffs.shape
    d = k - 1
    monic = coeffs[:, :d] / coeffs[:, d:]
    comp = np.zeros((L, d, d), dtype=np.complex128)
    comp[:, 0, :] = -monic[:, ::-1]
    if d > 1:
        comp[:, np.arange(1, d), np.arange(d - 1)] = 1.0
    return np.linalg.eigvals(comp)


def polish_roots(coeffs, roots, steps=40, tol=1e-12):
    """Newton polish of polynomial roots (Horner evaluation)."""
    r = roots.copy()
    d = coeffs.shape[1] - 1
    for _ in range(steps):
        f = np.zeros_like(r)
        df = np.zeros_like(r)
        scale = np.zeros(r.shape)
        for k in range(d, -1, -1):
            df = df * r + f
            f = f * r + coeffs[:, k:k + 1]
            scale = scale * np.abs(r) + np.abs(coeffs[:, k:k + 1])
        done = np.abs(f) <= tol * scale
        if np.all(done):
            break
        step = np.where(done | (df == 0), 0, f / np.where(df == 0, 1, df))
        r = r - step
    return r


def intersect_lines(X: Hypersurface, P, Q, polish=True):
    """All intersection points of the lines ``P + t Q`` with X, shape ``(L, d, N+1)``.

    Also returns a boolean mask of lines whose intersection is well conditioned
    (nonvanishing leading coefficient, distinct roots).
    """
    coeffs = line_polynomials(X, P, Q)
    lead = np.abs(coeffs[:, -1])
    ok = lead > 1e-12 * np.max(np.abs(coeffs), axis=1)
    safe = coeffs.copy()
    safe[~ok, -1] = 1.0
    roots = polynomial_roots(safe)
    if polish:
        roots = polish_roots(safe, roots)
    if X.degree > 1:
        gaps = np.abs(roots[:, :, None] - roots[:, None, :])
        gaps[:, np.arange(X.degree), np.arange(X.degree)] = np.inf
        ok &= gaps.min(axis=(1, 2)) >= 1e-8
    ok &= np.all(np.isfinite(roots), axis=1)
    pts = P[:, None, :] + roots[:, :, None] * Q[:, None, :]
    return pts, ok


def random_lines(rng, count, n_vars):
    P = rng.standard_normal((count, n_vars)) + 1j * rng.standard_normal((count, n_vars))
    Q = rng.standard_normal((count, n_vars)) + 1j * rng.standard_normal((count, n_vars))
    return P, Q


def smoothness_probe(X: Hypersurface, trials: int, seed: int, floor=SMOOTHNESS_FLOOR) -> dict:
    """Sample points on X by random lines and report the smallest scaled gradient norm.

    The scaled norm is ``|grad F(z)| / (d * sum|c|)`` at max-modulus-normalised z.
    No root-conditioning rejection is applied, so singular loci do show up.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n_lines = -(-trials // X.degree)
    P, Q = random_lines(rng, n_lines, X.ambient_projective_dim + 1)
    pts, _ = intersect_lines(X, P, Q)
    z, _ = normalize_coords(pts.reshape(-1, X.ambient_projective_dim + 1)[:trials])
    gnorm = np.linalg.norm(X.gradient(z), axis=1) / (X.degree * X.coefficient_scale)
    return {"trials": int(len(z)), "min_gradient_norm": float(gnorm.min()),
            "failures": int(np.sum(gnorm < floor))}


# --------------------------------------------------------------------------- local curve charts

def lift_curve_chart(X: Hypersurface, base: VarietyPoint, t, steps=40):
    """Points of a plane curve near ``base`` parametrised by the local coordinate.

    The chart keeps ``z_affine = 1`` and uses the remaining non-residue
    coordinate as ``t``; the residue coordinate is solved by Newton starting
    from its value at ``base``.  Returns ``(coords, converged)``.
    """
    t = np.asarray(t, dtype=np.complex128)
    z, ok = lift_curve_charts(X, base.homogeneous_coords[None, :], np.array([base.chart_affine]),
                              np.array([base.chart_residue]), t.reshape(1, -1), steps)
    return z.reshape(t.shape + (3,)), ok.reshape(t.shape)


def lift_curve_charts(X: Hypersurface, coords, affine, residue, t, steps=40, polish=2):
    """Batched :func:`lift_curve_chart`: ``t`` has shape ``(K, Q)`` for K base points.

    After the residual test passes, ``polish`` extra Newton steps are taken so
    the solved coordinate is accurate to rounding (finite differences of the
    result would otherwise amplify the stopping tolerance).
    """
    if X.n != 1:
        raise VarietyError("local curve charts need a plane curve")
    coords = np.asarray(coords, dtype=np.complex128)
    t = np.asarray(t, dtype=np.complex128)
    K, Q = t.shape
    rows = np.repeat(np.arange(K), Q)
    a = np.repeat(np.asarray(affine), Q)
    j = np.repeat(np.asarray(residue), Q)
    k = 3 - a - j
    z = coords[rows].copy()
    flat = np.arange(K * Q)
    z[flat, k] = t.ravel()
    z[flat, a] = coords[rows, a]
    scale = X.coefficient_scale
    converged = np.zeros(K * Q, dtype=bool)
    for _ in range(steps):
        f = X.evaluate(z)
        converged = np.abs(f) <= 1e-13 * scale
        if np.all(converged):
            break
        fj = X.gradient(z)[flat, j]
        z[flat, j] -= np.where(converged, 0, f / fj)
    for _ in range(polish):
        f = X.evaluate(z)
        fj = X.gradient(z)[flat, j]
        step = f / fj
        z[flat, j] -= np.where(np.isfinite(step), step, 0)
    converged &= np.isfinite(z).all(axis=1)
    return z.reshape(K, Q, 3), converged.reshape(K, Q)
