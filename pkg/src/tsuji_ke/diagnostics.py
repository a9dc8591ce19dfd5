"""Convergence diagnostics for chains of metrics.

Curvature conventions (curves only).  In a local holomorphic coordinate t a
Kaehler form is written omega = g (i/2pi) dt ^ dtbar, and ``ddbar`` below
means d^2/dt dtbar = Laplacian / 4.  The metric attached to a state at power
m has potential phi = (1/m) log B_m along the curve, so g = ddbar phi.  The
frame factor |dF/dz_j|^{-2} that turns B_m^{1/m} into a volume form is the
modulus of a nonvanishing holomorphic function and has ddbar log = 0, which is
why it never enters.  With Ric = -(i/2pi) ddbar log g the Einstein condition
Ric = -omega reads ddbar log g = g, and the residual is |1 - ddbar log g / g|.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import mpmath
import numpy as np
from scipy import linalg

from .iteration import MetricState, eta_ratio, gram, quadratic_form
from .sampling import SampleSet
from .variety import (
    Hypersurface, VarietyError, VarietyPoint, as_arrays, canonical_power_basis, evaluate_basis,
    lift_curve_charts,
)
from .weights import WeightSpec

FD_STEP = 1e-2
FD_OUTER = 2e-2
CONTOUR_RADIUS = 0.05
CONTOUR_NODES = 16
MAX_SKIP_FRACTION = 0.2


class DiagnosticError(RuntimeError):
    pass


# --------------------------------------------------------------------------- extremal property

def bergman_extremal_gap(state: MetricState, p, S: SampleSet, w: WeightSpec | None, X: Hypersurface,
                         G=None, n_random=200, seed=0) -> dict:
    """Compare the Bergman density at p with the best value of a unit-norm section.

    G is the inner product on power m+1 sections built from (state, S, w).  A
    section with coefficient vector x has value x^T v(p) and squared norm
    x^T G conj(x); writing y = conj(x) the supremum of |y^* v|^2 over y^* G y
    = 1 is attained at y = G^{-1} v / sqrt(rho) with rho = v^* G^{-1} v.
    """
    if G is None:
        G = gram(state, canonical_power_basis(X, state.power + 1), S, w, X)
    try:
        cf = linalg.cho_factor(G, lower=True)
    except linalg.LinAlgError as exc:
        raise DiagnosticError("Gram matrix is not positive definite") from exc
    basis = canonical_power_basis(X, state.power + 1)
    v = evaluate_basis(basis, p if isinstance(p, VarietyPoint) else p)
    v = np.atleast_2d(v)[0]
    Gv = linalg.cho_solve(cf, v)
    rho = float(np.real(np.vdot(v, Gv)))
    y = Gv / math.sqrt(rho)
    norm = float(np.real(np.vdot(y, G @ y)))
    extremal = abs(np.vdot(y, v)) ** 2 / norm
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((n_random, len(v))) + 1j * rng.standard_normal((n_random, len(v)))
    norms = np.real(np.einsum("ka,ab,kb->k", Y.conj(), G, Y))
    vals = np.abs(Y.conj() @ v) ** 2 / norms
    return {"rho": rho, "extremal": extremal, "gap": abs(rho - extremal) / rho,
            "max_random_ratio": float(vals.max() / rho),
            "coefficients": np.conj(y), "ok_random": bool(np.all(vals <= rho * (1 + 1e-12)))}


# --------------------------------------------------------------------------- local volume lemma

def lemma22_quadrature(n: int, m: int, b: float, dps=40) -> dict:
    """Integral of (1 - |z|^2)^m over the ball |z|^2 <= b / a_m in C^n, a_m = m / (log m)^2.

    The volume form is the Euclidean one normalised so that the unit ball has
    volume 1/n!; in s = |z|^2 the integrand becomes (1-s)^m s^(n-1) / (n-1)!.
    The radius is clipped at the unit sphere, beyond which (1 - |z|^2)^m is no
    longer a local volume comparison.  The full unit-ball integral is m!/(m+n)!.
    """
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    if m < 5:
        raise ValueError("m must be >= 5")
    if not b > 0:
        raise ValueError("b must be positive")
    with mpmath.workdps(dps):
        a_m = mpmath.mpf(m) / mpmath.log(m) ** 2
        R = min(mpmath.mpf(b) / a_m, mpmath.mpf(1))
        f = lambda s: (1 - s) ** m * s ** (n - 1) / mpmath.factorial(n - 1)
        # split near the peak at s = 0 where the integrand varies on scale 1/m
        nodes = sorted({mpmath.mpf(0), min(R, mpmath.mpf(4) / m), min(R, mpmath.mpf(20) / m), R})
        value, err = mpmath.quad(f, nodes, error=True)
        analytic = mpmath.factorial(m) / mpmath.factorial(m + n)
        if err > mpmath.mpf(10) ** (-dps // 2):
            raise DiagnosticError(f"quadrature did not converge (error estimate {err})")
        return {"numeric": float(value), "analytic": float(analytic),
                "abs_error": float(abs(value - analytic)), "radius_sq": float(R),
                "clipped": bool(R == 1)}


# --------------------------------------------------------------------------- finite differences

# 4th-order second derivative stencil, offsets -2..2
_D2 = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_OFF = np.array([-2, -1, 0, 1, 2])


def _stencil(h):
    """Offsets (complex) and weights for ddbar = Laplacian / 4 at step h."""
    offs = np.concatenate([_OFF * h, 1j * _OFF * h])
    wts = np.concatenate([_D2, _D2]) / (4.0 * h * h)
    return offs, wts


def _richardson_offsets(h):
    o1, w1 = _stencil(h)
    o2, w2 = _stencil(h / 2)
    # 4th-order error cancels in (16 D(h/2) - D(h)) / 15
    offs = np.concatenate([o1, o2])
    wts = np.concatenate([-w1 / 15.0, 16.0 * w2 / 15.0])
    # merge duplicate offsets so each function value is computed once
    key = np.round(offs / (h / 2)).astype(complex)
    uniq, inv = np.unique(key, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv, wts)
    return uniq * (h / 2), merged


def ddbar_fd(fn, t0, h=FD_STEP, richardson=True):
    """ddbar of a real function of t at each point of t0 (shape (K,)).

    ``fn`` maps a (K, Q) array of t values to (K, Q) real values.
    """
    offs, wts = _richardson_offsets(h) if richardson else _stencil(h)
    t0 = np.asarray(t0, dtype=np.complex128)
    vals = fn(t0[:, None] + offs[None, :])
    return vals @ wts


def einstein_ratio_fd(phi, t0, h=FD_STEP, H=FD_OUTER):
    """(ddbar log g) / g with g = ddbar phi, by nested finite differences.

    Returns (g, ratio) at each point of t0.
    """
    t0 = np.asarray(t0, dtype=np.complex128)
    g = ddbar_fd(phi, t0, h)

    def log_g(t):
        K, Q = t.shape
        inner = ddbar_fd(lambda s: _flat_call(phi, s, K, Q), t.reshape(-1), h)
        return np.log(inner).reshape(K, Q)

    return g, ddbar_fd(log_g, t0, H) / g


def _flat_call(phi, s, K, Q):
    """Evaluate phi on s of shape (K*Q, P) where phi expects leading dimension K."""
    P = s.shape[1]
    return phi(s.reshape(K, Q * P)).reshape(K * Q, P)


# --------------------------------------------------------------------------- curve potentials

@dataclass
class _Charts:
    coords: np.ndarray
    affine: np.ndarray
    residue: np.ndarray

    @property
    def local_index(self):
        return 3 - self.affine - self.residue

    @property
    def t0(self):
        return self.coords[np.arange(len(self.coords)), self.local_index]


def _charts(points) -> _Charts:
    z, a, j = as_arrays(points)
    return _Charts(np.asarray(z), np.asarray(a), np.asarray(j))


def state_potential(state: MetricState, X: Hypersurface, points):
    """phi(t) = (1/m) log B_m along the local chart of each base point.

    Returns ``(phi, charts, failed)`` where ``phi`` maps a (K, Q) array of t
    values to (K, Q) potentials and ``failed`` accumulates chart failures.
    """
    ch = _charts(points)
    failed = np.zeros(len(ch.coords), dtype=bool)

    def phi(t):
        z, ok = lift_curve_charts(X, ch.coords, ch.affine, ch.residue, t)
        failed[:] |= ~ok.all(axis=1)
        K, Q = t.shape
        V = evaluate_basis(state.basis, _Pts(z.reshape(-1, 3)))
        B = quadratic_form(state.P, V).reshape(K, Q)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.log(B) / state.power

    return phi, ch, failed


@dataclass
class _Pts:
    coords: np.ndarray
    affine: None = None
    residue: None = None


def curvature_coefficient(state: MetricState, X: Hypersurface, points, h=FD_STEP):
    """Kaehler coefficient g_m = ddbar (1/m) log B_m in the local chart coordinate.

    Fourth-order central differences, Richardson-extrapolated over h and h/2.
    Returns an array (NaN where the chart lift failed) or a float for a single point.
    """
    if X.n != 1:
        raise VarietyError("curvature diagnostics are implemented for curves only")
    phi, ch, failed = state_potential(state, X, points)
    g = ddbar_fd(phi, ch.t0, h)
    g[failed] = np.nan
    return float(g[0]) if isinstance(points, VarietyPoint) else g


def contour_derivatives(psi, t0, r=CONTOUR_RADIUS, K=CONTOUR_NODES):
    """Taylor coefficients of a polarised potential by a 2-D FFT on a torus.

    ``psi(t, u)`` must be holomorphic in both variables near (t0, conj t0)
    with psi(t, conj t) the real potential; t and u are arrays of shape
    (B, K, K).  Returns c[j, k] = d^j_t d^k_u psi / (j! k!) for j, k < K.
    """
    t0 = np.asarray(t0, dtype=np.complex128)
    circle = r * np.exp(2j * np.pi * np.arange(K) / K)
    t = t0[:, None, None] + circle[None, :, None]
    u = np.conj(t0)[:, None, None] + circle[None, None, :]
    vals = psi(t, u)
    c = np.fft.fft2(vals, axes=(1, 2)) / (K * K)
    jj = np.arange(K)
    return c / (r ** (jj[:, None] + jj[None, :]))[None]


def einstein_ratio_contour(psi, t0, scale=1.0, r=CONTOUR_RADIUS, K=CONTOUR_NODES):
    """(g, ddbar log g / g) from Taylor coefficients of ``scale * psi`` (see contour_derivatives)."""
    c = contour_derivatives(psi, t0, r, K) * scale
    g = c[:, 1, 1]
    gt, gu, gtu = 2 * c[:, 2, 1], 2 * c[:, 1, 2], 4 * c[:, 2, 2]
    ric = gtu / g - gt * gu / g ** 2
    return np.real(g), np.real(ric / g)


def state_polarized_log(state: MetricState, X: Hypersurface, points):
    """psi(t, u) = log B_m(t, u) with B polarised: conj(v(Z(conj u)))^T P v(Z(t)).

    Normalised by B_m at the base point so the FFT sees values of order one.
    """
    ch = _charts(points)
    Kb = len(ch.coords)

    def vals(t):
        z, ok = lift_curve_charts(X, ch.coords, ch.affine, ch.residue, t.reshape(Kb, -1))
        if not ok.all():
            raise DiagnosticError("chart lift failed on the contour")
        return evaluate_basis(state.basis, _Pts(z.reshape(-1, 3))).reshape(Kb, -1, len(state.basis))

    def psi(t, u):
        Vt = vals(t[:, :, 0])
        Vs = vals(np.conj(u[:, 0, :]))
        Bm = np.einsum("kja,ab,kib->kij", Vs.conj(), state.P, Vt)
        V0 = evaluate_basis(state.basis, _Pts(ch.coords))
        B0 = quadratic_form(state.P, V0)
        return np.log(Bm / B0[:, None, None])

    return psi, ch


def curvature_coefficient_contour(state: MetricState, X: Hypersurface, points,
                                  r=CONTOUR_RADIUS, K=CONTOUR_NODES):
    """Independent evaluation of (g_m, ddbar log g_m / g_m) by Cauchy contours of the polarised potential."""
    psi, ch = state_polarized_log(state, X, points)
    return einstein_ratio_contour(psi, ch.t0, 1.0 / state.power, r, K)


# --------------------------------------------------------------------------- synthetic potentials

def synthetic_potential(kind: str, m: int = 1):
    """Closed-form test potentials phi = (1/m) log Btilde and their exact g.

    flat:        Btilde = exp(m |t|^2),          g = 1
    fubini:      Btilde = (1 + |t|^2)^m,         g = (1 + |t|^2)^-2
    hyperbolic:  Btilde = (1 - |t|^2)^(-2m),     g = 2 (1 - |t|^2)^-2  (Einstein: residual 0)
    poincare:    Btilde = (1 - |t|^2)^(-m),      g = (1 - |t|^2)^-2    (Ric = -2 omega: residual 1)

The Fubini-Study sphere has Ric = +2 omega, so its residual is 3.

    Returns ``(phi, psi, g_exact, residual_exact)``; psi is the polarised
    potential used by the contour method.
    """
    table = {
        "flat": (lambda t: np.abs(t) ** 2, lambda t, u: t * u,
                 lambda t: np.ones_like(np.abs(t)), 1.0),
        "fubini": (lambda t: np.log1p(np.abs(t) ** 2), lambda t, u: np.log(1 + t * u),
                   lambda t: (1 + np.abs(t) ** 2) ** -2.0, 3.0),
        "hyperbolic": (lambda t: -2 * np.log1p(-np.abs(t) ** 2), lambda t, u: -2 * np.log(1 - t * u),
                       lambda t: 2 * (1 - np.abs(t) ** 2) ** -2.0, 0.0),
        "poincare": (lambda t: -np.log1p(-np.abs(t) ** 2), lambda t, u: -np.log(1 - t * u),
                     lambda t: (1 - np.abs(t) ** 2) ** -2.0, 1.0),
    }
    if kind not in table:
        raise ValueError(f"unknown synthetic potential {kind!r}")
    return table[kind]


# --------------------------------------------------------------------------- Einstein residual

def einstein_residual_values(phi, t0, h=FD_STEP, H=FD_OUTER):
    g, ratio = einstein_ratio_fd(phi, t0, h, H)
    return g, np.abs(1.0 - ratio)


def einstein_residual(state: MetricState, probe, X: Hypersurface, h=FD_STEP, H=FD_OUTER) -> dict:
    """Pointwise |1 - ddbar log g_m / g_m| over the probe points.

    Points whose chart lift fails, or where g_m is not positive, are skipped
    and counted.  More than 20% skipped is an error.
    """
    if X.n != 1:
        raise VarietyError("curvature diagnostics are implemented for curves only")
    phi, ch, failed = state_potential(state, X, probe)
    with np.errstate(invalid="ignore", divide="ignore"):
        g, e = einstein_residual_values(phi, ch.t0, h, H)
    bad = failed | ~np.isfinite(e) | ~(g > 0)
    if bad.mean() > MAX_SKIP_FRACTION:
        raise DiagnosticError(f"{int(bad.sum())} of {len(bad)} probe points skipped")
    vals = e[~bad]
    return {"sup": float(vals.max()), "mean": float(vals.mean()), "median": float(np.median(vals)),
            "skipped": np.flatnonzero(bad).tolist(), "values": e}


# --------------------------------------------------------------------------- rates and envelopes

def rate_fit(ms, deltas) -> dict:
    """Least-squares fit delta_m ~ C log m / m (no intercept).

    R^2 is the uncentred coefficient of determination, the standard choice for
    a model through the origin.
    """
    ms = np.asarray(ms, dtype=float)
    d = np.asarray(deltas, dtype=float)
    if len(ms) < 4 or len(ms) != len(d):
        raise ValueError("rate_fit needs at least 4 points")
    if np.any(~(d > 0)):
        raise ValueError("deltas must be positive")
    if np.all(d == d[0]):
        raise ValueError("degenerate series: all values equal")
    x = np.log(ms) / ms
    C = float(x @ d / (x @ x))
    r2 = float((x @ d) ** 2 / ((x @ x) * (d @ d)))
    return {"C": C, "R2": r2, "model": "C*log(m)/m"}


def envelope_from_log_ratios(ms, log_ratios) -> dict:
    """Envelope analysis of S_m = m log(h_m^{1/m} / h_ref) sampled over probes.

    ``log_ratios`` has shape (len(ms), P).  The upper and lower envelopes
    S_m^+ = max_p, S_m^- = min_p should have increments Delta_m with
    1 - A/m <= exp(Delta_m) <= 1 + A/m; A' is the smallest such A.  A
    violation is an m where |Delta_m| grew compared with the previous step.
    """
    ms = np.asarray(ms)
    S = np.asarray(log_ratios, dtype=float)
    up, lo = S.max(axis=1), S.min(axis=1)
    dup, dlo = np.diff(up), np.diff(lo)
    mm = ms[1:].astype(float)
    cand = np.concatenate([mm * np.expm1(dup), mm * np.expm1(dlo),
                           -mm * np.expm1(dup), -mm * np.expm1(dlo)])
    A = float(max(0.0, cand.max())) if cand.size else 0.0
    mag = np.maximum(np.abs(dup), np.abs(dlo))
    viol = [int(ms[k + 1]) for k in range(1, len(mag)) if mag[k] > mag[k - 1] * (1 + 1e-12) + 1e-15]
    return {"A": A, "violations": viol, "upper_increments": dup.tolist(),
            "lower_increments": dlo.tolist()}


def envelope_monotonicity(states, probe, reference: MetricState | None = None) -> dict:
    """Envelope analysis of a chain against ``reference`` (default: its last state)."""
    if len(states) < 4:
        raise ValueError("envelope analysis needs at least 4 states")
    ref = reference if reference is not None else states[-1]
    ms = [s.power for s in states]
    logs = np.array([s.power * np.log(eta_ratio(s, ref, probe)) for s in states])
    return envelope_from_log_ratios(ms, logs)


# --------------------------------------------------------------------------- series

CSV_COLUMNS = ("m", "sup_delta", "mean_delta", "einstein_sup", "einstein_median", "L_value",
               "trace_residual", "holder_slack")


@dataclass
class ConvergenceSeries:
    """Per-m convergence record.  Sups are sampled sups over a finite probe set."""

    m: list = field(default_factory=list)
    sup_delta: list = field(default_factory=list)
    inf_delta: list = field(default_factory=list)
    mean_delta: list = field(default_factory=list)
    einstein_sup: list = field(default_factory=list)
    einstein_median: list = field(default_factory=list)
    L_value: list = field(default_factory=list)
    trace_residual: list = field(default_factory=list)
    holder_slack: list = field(default_factory=list)
    fit: dict | None = None
    envelope: dict | None = None

    def validate(self):
        n = len(self.m)
        for name in CSV_COLUMNS + ("inf_delta",):
            if len(getattr(self, name)) != n:
                raise ValueError(f"series column {name} has inconsistent length")
        for v in self.einstein_sup + self.einstein_median:
            if v is not None and v < 0:
                raise ValueError("negative residual")

    def to_csv(self) -> str:
        self.validate()
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for k in range(len(self.m)):
            wr.writerow(["" if getattr(self, c)[k] is None else repr(getattr(self, c)[k])
                         for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {"fit": self.fit, "envelope": self.envelope, "sup_label": "sampled sup",
               "series": {k: v for k, v in asdict(self).items() if k not in ("fit", "envelope")}}
        return json.dumps(doc, sort_keys=True, indent=1)


def convergence_series(states, probe, X: Hypersurface, report=None, einstein=True,
                       einstein_probe=None) -> ConvergenceSeries:
    """Build the series delta_m = |log eta(state_m, state_{m+1})| over the probe set.

    ``report`` (a ChainReport) supplies L, trace residual and Hoelder slack for
    the state at each m when available.
    """
    out = ConvergenceSeries()
    by_m = {e["m"]: e for e in report.steps} if report is not None else {}
    curves = einstein and X.n == 1
    for a, b in zip(states[:-1], states[1:]):
        d = np.abs(np.log(eta_ratio(a, b, probe)))
        out.m.append(a.power)
        out.sup_delta.append(float(d.max()))
        out.inf_delta.append(float(d.min()))
        out.mean_delta.append(float(d.mean()))
        if curves:
            er = einstein_residual(a, einstein_probe if einstein_probe is not None else probe, X)
            out.einstein_sup.append(er["sup"])
            out.einstein_median.append(er["median"])
        else:
            out.einstein_sup.append(None)
            out.einstein_median.append(None)
        e = by_m.get(a.power, {})
        out.L_value.append(e.get("L"))
        out.trace_residual.append(e.get("trace_residual"))
        out.holder_slack.append(e.get("holder_slack"))
    if len(out.m) >= 4:
        try:
            out.fit = rate_fit(out.m, out.sup_delta)
        except ValueError as exc:
            out.fit = {"error": str(exc)}
        out.envelope = envelope_monotonicity(states, probe)
    return out
