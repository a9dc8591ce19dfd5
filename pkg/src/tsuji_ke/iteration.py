"""Tsuji's iteration h_m -> h_{m+1} on a shared weighted sample of X.

Convention: a metric h_m on K_X^m is stored through a Hermitian matrix P with

    h_m(omega^m, omega^m)(p) = 1 / B_m(p),    B_m(p) = v(p)^* P v(p),

where v(p) are the residue-frame coefficients of the basis sections.  The
update constant (m+n+1)!/(m+1)! is folded into P when stepping, so no other
code needs to carry it.

With a sample S of points p_k, FS masses w_k and the residue density Phi,
the inner product on H^0(K_X^{m+1}) is the Hermitian matrix

    G = sum_k  w_k beta^eps(p_k) Phi(p_k) / B_m(p_k) * v(p_k) v(p_k)^*

and the next state is P_{m+1} = (m+1)!/(m+n+1)! * G^{-1}.  Because all sums
run over one fixed positive-weight sample, the trace identity and the Hoelder
recursion for L_m hold exactly up to rounding.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from threadpoolctl import threadpool_limits

from .sampling import SampleSet, sample_fs
from .variety import (
    CanonicalBasis, Hypersurface, VarietyPoint, as_arrays, canonical_power_basis, evaluate_basis,
    residue_fs_density,
)
from .weights import WeightSpec, weight_factor

STATE_VERSION = 1
COND_CAP = 1e12
CHUNK = 4096
M_CAP = 64


class IterationError(RuntimeError):
    """Numerical failure of a step (singular Gram matrix, corrupt state)."""

    def __init__(self, message, cond=None, min_eig=None, partial=None):
        super().__init__(message)
        self.cond = cond
        self.min_eig = min_eig
        self.partial = partial


@dataclass(frozen=True)
class MetricState:
    power: int
    basis: CanonicalBasis
    P: np.ndarray
    variety_hash: str
    provenance: dict = field(default_factory=lambda: {"kind": "initial"})

    @property
    def size(self) -> int:
        return len(self.basis)

    def scaled(self, c: float) -> "MetricState":
        """The state for c * h_m (P is divided by c)."""
        return MetricState(self.power, self.basis, self.P / c, self.variety_hash,
                           dict(self.provenance, scaled=c))


def factorial_ratio(m: int, n: int) -> float:
    """m! / (m+n)!, in log space once the factorials get large."""
    if m + n <= 20:
        return math.factorial(m) / math.factorial(m + n)
    return math.exp(math.lgamma(m + 1) - math.lgamma(m + n + 1))


def init_state(X: Hypersurface, m0: int, init="identity") -> MetricState:
    """Initial metric on K_X^{m0}; the identity is the Fubini-Study metric."""
    if m0 < 1:
        raise ValueError("m0 must be >= 1")
    basis = canonical_power_basis(X, m0)
    D = len(basis)
    if isinstance(init, str):
        if init != "identity":
            raise ValueError(f"unknown init {init!r}")
        P = np.eye(D, dtype=np.complex128)
    else:
        P = np.asarray(init, dtype=np.complex128)
        if P.shape != (D, D):
            raise ValueError(f"initial matrix must be {D}x{D}, got {P.shape}")
        if not np.allclose(P, P.conj().T, rtol=0, atol=1e-12 * np.abs(P).max()):
            raise ValueError("initial matrix is not Hermitian")
        if np.linalg.eigvalsh(P).min() <= 0:
            raise ValueError("initial matrix is not positive definite")
    return MetricState(m0, basis, P, X.content_hash(), {"kind": "initial", "init": "identity"
                                                          if isinstance(init, str) else "user"})


# --------------------------------------------------------------------------- kernels

def _chunks(count, size=CHUNK):
    return [(s, min(s + size, count)) for s in range(0, count, size)]


def _map_chunks(fn, count, threads=1):
    """Apply fn to fixed chunks; results come back in chunk order."""
    bounds = _chunks(count)
    with threadpool_limits(limits=1):
        if threads > 1 and len(bounds) > 1:
            with ThreadPoolExecutor(max_workers=threads) as ex:
                return list(ex.map(fn, bounds))
        return [fn(b) for b in bounds]


def quadratic_form(P, V):
    """Real part of v^* P v for each row v of V."""
    return np.real(np.sum(V.conj() * (V @ P.T), axis=1))


def eval_B(state: MetricState, points, threads=1):
    """B_m = v^* P v at the point(s): the inverse of h_m in the residue frame."""
    z, a, j = as_arrays(points)

    def part(b):
        V = evaluate_basis(state.basis, _Batch(z[b[0]:b[1]]))
        return quadratic_form(state.P, V)

    out = np.concatenate(_map_chunks(part, len(z), threads))
    return float(out[0]) if isinstance(points, VarietyPoint) else out


@dataclass(frozen=True)
class _Batch:
    coords: np.ndarray

    @property
    def affine(self):
        return None

    @property
    def residue(self):
        return None


def sample_density(X: Hypersurface, S: SampleSet):
    """Phi at every point of S."""
    return residue_fs_density(X, S)


def point_measure(state: MetricState, S: SampleSet, w: WeightSpec | None, phi, threads=1):
    """mu_k = w_k beta^eps Phi / B_m: the discrete measure behind T_{m+1}."""
    B = eval_B(state, S, threads)
    if np.any(~(B > 0)) or np.any(~np.isfinite(B)):
        k = int(np.flatnonzero(~(B > 0) | ~np.isfinite(B))[0])
        raise IterationError(f"B_m is not positive at sample {k} (corrupt state)")
    return S.weights * weight_factor(w, S) * phi / B


def assemble_gram(V_of, mu, count, threads=1):
    """G = sum_k mu_k v_k v_k^* with a fixed chunk partition and summation order.

    ``V_of(lo, hi)`` returns the basis values for points lo..hi-1.
    """
    def part(b):
        V = V_of(*b)
        A = np.sqrt(mu[b[0]:b[1]])[:, None] * V
        return A.T @ A.conj()

    parts = _map_chunks(part, count, threads)
    G = parts[0].copy()
    for p in parts[1:]:
        G += p
    G = 0.5 * (G + G.conj().T)
    if not np.all(np.isfinite(G)):
        raise IterationError("non-finite Gram entry")
    return G


def gram(state: MetricState, target_basis: CanonicalBasis, S: SampleSet, w: WeightSpec | None,
         X: Hypersurface, phi=None, threads=1):
    if phi is None:
        phi = sample_density(X, S)
    mu = point_measure(state, S, w, phi, threads)
    return assemble_gram(lambda lo, hi: evaluate_basis(target_basis, _Batch(S.coords[lo:hi])),
                         mu, S.count, threads)


def invert_gram(G, scale, cond_cap=COND_CAP):
    """scale * G^{-1} through a Cholesky factorisation, symmetrised."""
    eig = np.linalg.eigvalsh(G)
    lo, hi = float(eig[0]), float(eig[-1])
    cond = hi / lo if lo > 0 else math.inf
    if lo <= 0 or cond > cond_cap:
        raise IterationError(f"Gram matrix numerically singular: cond={cond:.3e}, "
                             f"min eigenvalue={lo:.3e}", cond=cond, min_eig=lo)
    cf = linalg.cho_factor(G, lower=True)
    Ginv = linalg.cho_solve(cf, np.eye(len(G), dtype=G.dtype))
    P = scale * 0.5 * (Ginv + Ginv.conj().T)
    return P, {"cond": cond, "min_eig": lo}


def step(state: MetricState, S: SampleSet, w: WeightSpec | None, X: Hypersurface, phi=None,
         threads=1, ridge=0.0, cond_cap=COND_CAP) -> MetricState:
    """One iteration: the metric on K_X^{m+1} built from T_{m+1} on S.

    ``ridge`` adds ``ridge * tr(G)/dim`` to the diagonal; it exists only to
    inject a fault for the verification suite and breaks the trace identity.
    """
    m = state.power
    target = canonical_power_basis(X, m + 1)
    G = gram(state, target, S, w, X, phi, threads)
    if ridge:
        G = G + ridge * np.real(np.trace(G)) / len(G) * np.eye(len(G))
    P, info = invert_gram(G, factorial_ratio(m + 1, X.n), cond_cap)
    prov = {"kind": "stepped", "from_power": m, "sample": S.content_hash(),
            "epsilon": None if w is None or w.is_constant else w.epsilon,
            "weight": "constant_one" if w is None or w.is_constant else "polynomial_zero",
            "cond": info["cond"], "min_eig": info["min_eig"]}
    return MetricState(m + 1, target, P, state.variety_hash, prov)


# --------------------------------------------------------------------------- functionals

def eta_ratio(state_a: MetricState, state_b: MetricState, points, threads=1):
    """h_a^{1/m_a} / h_b^{1/m_b} at the point(s).

    Both are metrics on K_X written against the same residue frame omega, so
    the frame factors cancel exactly: the ratio is B_b^{1/m_b} / B_a^{1/m_a}
    and no density factor enters.
    """
    if state_a.variety_hash != state_b.variety_hash:
        raise ValueError("states belong to different varieties")
    Ba = eval_B(state_a, points, threads)
    Bb = eval_B(state_b, points, threads)
    return np.exp(np.log(Bb) / state_b.power - np.log(Ba) / state_a.power)


def functional_L(state: MetricState, S: SampleSet, w: WeightSpec | None, X: Hypersurface,
                 phi=None, threads=1) -> float:
    """L_m = sum_k w_k beta^eps B_m^{1/m} Phi, the sampled integral of beta^eps h_m^{-1/m}."""
    if phi is None:
        phi = sample_density(X, S)
    B = eval_B(state, S, threads)
    terms = S.weights * weight_factor(w, S) * B ** (1.0 / state.power) * phi
    if not np.all(np.isfinite(terms)):
        raise IterationError("non-finite term in L")
    return float(np.sum(terms))


def trace_constant(state: MetricState, X: Hypersurface) -> float:
    """c_m = m!/(m+n)! * dim H^0(K_X^m)."""
    return factorial_ratio(state.power, X.n) * state.size


def trace_identity_check(state: MetricState, previous: MetricState, S: SampleSet,
                         w: WeightSpec | None, X: Hypersurface, phi=None, threads=1) -> dict:
    """Compare sum_k w_k beta^eps (B_m / B_{m-1}) Phi with c_m.

    Only meaningful when ``state`` was stepped from ``previous`` on exactly
    this sample and weight; otherwise the status is ``not applicable``.
    """
    prov = state.provenance
    linked = (prov.get("kind") == "stepped" and prov.get("sample") == S.content_hash()
              and prov.get("from_power") == previous.power)
    c = trace_constant(state, X)
    if not linked:
        return {"status": "not applicable", "value": None, "c_m": c, "residual": None}
    if phi is None:
        phi = sample_density(X, S)
    Bm = eval_B(state, S, threads)
    Bp = eval_B(previous, S, threads)
    value = float(np.sum(S.weights * weight_factor(w, S) * (Bm / Bp) * phi))
    return {"status": "ok", "value": value, "c_m": c, "residual": abs(value - c) / c}


def holder_check(L_m: float, L_prev: float, c_m: float, m: int, rtol=1e-12) -> dict:
    """Slack in L_m <= c_m^{1/m} L_{m-1}^{(m-1)/m}; negative beyond rtol means a bug."""
    bound = c_m ** (1.0 / m) * L_prev ** ((m - 1.0) / m)
    slack = bound - L_m
    return {"slack": slack, "relative": slack / bound, "bound": bound,
            "ok": bool(slack >= -rtol * bound)}


# --------------------------------------------------------------------------- chains

@dataclass
class ChainReport:
    steps: list = field(default_factory=list)
    policy: str = "shared"

    def add(self, **entry):
        self.steps.append(entry)

    def column(self, name):
        return [s.get(name) for s in self.steps]


def run_chain(X: Hypersurface, m0: int, m_max: int, init="identity", w: WeightSpec | None = None,
              sampling_policy="shared", seed=0, n_points=50000, S: SampleSet | None = None,
              threads=1, ridge=0.0, m_cap=M_CAP, on_state=None):
    """Iterate from m0 to m_max.

    With the ``shared`` policy one sample (``S`` or ``sample_fs(X, n_points,
    seed)``) serves every step and the trace and Hoelder identities are checked
    and recorded.  The ``fresh`` policy redraws the sample at every step (seed
    ``seed + m``); those checks are then reported as not applicable.

    Returns ``(states, report, S)`` where states[0] is the initial state.  A
    failing step raises :class:`IterationError` whose ``partial`` attribute
    holds the states and report computed so far.
    """
    if not (m0 < m_max <= m_cap):
        raise ValueError(f"need m0 < m_max <= {m_cap}, got m0={m0}, m_max={m_max}")
    if sampling_policy not in ("shared", "fresh"):
        raise ValueError(f"unknown sampling policy {sampling_policy!r}")
    state = init_state(X, m0, init) if isinstance(init, (str, np.ndarray, list)) else init
    if sampling_policy == "shared" and S is None:
        S = sample_fs(X, n_points, seed)
    phi = sample_density(X, S) if sampling_policy == "shared" else None
    states = [state]
    report = ChainReport(policy=sampling_policy)
    L_prev = functional_L(state, S, w, X, phi, threads) if sampling_policy == "shared" else None
    if on_state:
        on_state(state)
    for m in range(m0, m_max):
        t0 = time.perf_counter()
        if sampling_policy == "fresh":
            S_step = sample_fs(X, n_points, seed + m)
            phi_step = sample_density(X, S_step)
        else:
            S_step, phi_step = S, phi
        try:
            new = step(state, S_step, w, X, phi_step, threads, ridge)
        except IterationError as exc:
            exc.partial = (states, report)
            raise
        entry = {"m": new.power, "cond": new.provenance["cond"],
                 "min_eig": new.provenance["min_eig"], "weight_sum": float(np.sum(S_step.weights)),
                 "L": None, "trace_residual": None, "holder_slack": None, "holder_ok": None}
        if sampling_policy == "shared":
            L = functional_L(new, S, w, X, phi, threads)
            tr = trace_identity_check(new, state, S, w, X, phi, threads)
            hc = holder_check(L, L_prev, tr["c_m"], new.power)
            entry.update(L=L, trace_residual=tr["residual"], holder_slack=hc["relative"],
                         holder_ok=hc["ok"])
            L_prev = L
        entry["seconds"] = time.perf_counter() - t0
        report.add(**entry)
        states.append(new)
        state = new
        if on_state:
            on_state(new)
    return states, report, S


# --------------------------------------------------------------------------- persistence

def state_to_json(state: MetricState) -> str:
    prov = {k: v for k, v in state.provenance.items() if k not in ("cond", "min_eig")}
    doc = {
        "version": STATE_VERSION,
        "variety": state.variety_hash,
        "m": state.power,
        "basis": [[int(e) for e in row] for row in state.basis.exponents],
        "P": [[[float(c.real), float(c.imag)] for c in row] for row in state.P],
        "convention": "B-inverse",
        "provenance": prov,
    }
    return json.dumps(doc, sort_keys=True)


def state_from_json(X: Hypersurface, text: str) -> MetricState:
    doc = json.loads(text)
    if doc.get("version") != STATE_VERSION or doc.get("convention") != "B-inverse":
        raise ValueError("unsupported state file")
    if doc["variety"] != X.content_hash():
        raise ValueError("state belongs to a different variety")
    basis = canonical_power_basis(X, int(doc["m"]))
    if basis.exponents.tolist() != doc["basis"]:
        raise ValueError("basis in state file does not match this variety's basis")
    P = np.array([[complex(a, b) for a, b in row] for row in doc["P"]])
    return MetricState(int(doc["m"]), basis, P, doc["variety"], doc.get("provenance", {}))
