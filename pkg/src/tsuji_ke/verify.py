"""Built-in property suite run by ``tsuji-ke verify``.

Every check returns ``(passed, detail)``.  Sizes are kept small so the whole
suite runs in well under a minute; the chain checks use the configured
variety, seed and weight.
"""
from __future__ import annotations

import numpy as np

from .config import RunConfig
from .diagnostics import (
    bergman_extremal_gap, einstein_ratio_fd, lemma22_quadrature, synthetic_potential,
)
from .iteration import eval_B, factorial_ratio, gram, init_state, run_chain, step
from .sampling import sample_fs
from .variety import canonical_power_basis, eval_monomials, evaluate_basis, monomial_exponents
from .weights import make_weight, normalize_weight_sup

VERIFY_POINTS = 20000
VERIFY_STEPS = 5


class _Ctx:
    def __init__(self, cfg: RunConfig, ridge=0.0):
        self.cfg = cfg
        self.ridge = ridge
        self.X = cfg.variety()
        self.S = sample_fs(self.X, min(cfg.n_points, VERIFY_POINTS), cfg.seed)
        w = cfg.weights(self.X)[-1]
        self.w = normalize_weight_sup(w, self.S)
        self.m0 = cfg.m0
        self.m1 = min(cfg.m_max, cfg.m0 + VERIFY_STEPS)
        self._chain = None

    def chain(self):
        if self._chain is None:
            self._chain = run_chain(self.X, self.m0, self.m1, w=self.w, S=self.S, ridge=self.ridge)
        return self._chain


def check_trace_identity(c: _Ctx):
    _, rep, _ = c.chain()
    worst = max(rep.column("trace_residual"))
    return worst <= 1e-8, f"max relative residual {worst:.3e}"


def check_holder(c: _Ctx):
    _, rep, _ = c.chain()
    worst = min(rep.column("holder_slack"))
    return all(rep.column("holder_ok")), f"min relative slack {worst:.3e}"


def check_lemma22(c: _Ctx):
    r = lemma22_quadrature(1, 100, 16)
    ms = [20, 50, 100, 200]
    errs = [lemma22_quadrature(1, m, 1.0)["abs_error"] for m in ms]
    slope = np.polyfit(np.log(ms), np.log(errs), 1)[0]
    return r["abs_error"] <= 1e-8 and slope < -4, f"error {r['abs_error']:.2e}, sweep slope {slope:.2f}"


def check_extremal(c: _Ctx):
    states, _, _ = c.chain()
    st = states[-2]
    G = gram(st, canonical_power_basis(c.X, st.power + 1), c.S, c.w, c.X)
    worst, rand_ok = 0.0, True
    for k in range(10):
        r = bergman_extremal_gap(st, c.S.point(37 * k), c.S, c.w, c.X, G=G, seed=k)
        worst = max(worst, r["gap"])
        rand_ok &= r["ok_random"]
    return worst <= 1e-9 and rand_ok, f"max gap {worst:.2e}"


def check_basis_invariance(c: _Ctx):
    st = step(init_state(c.X, c.m0), c.S, c.w, c.X)
    m = st.power
    G = gram(init_state(c.X, c.m0), st.basis, c.S, c.w, c.X)
    rng = np.random.default_rng(c.cfg.seed)
    D = len(G)
    A = rng.standard_normal((D, D)) + 1j * rng.standard_normal((D, D))
    G2 = A @ G @ A.conj().T
    P2 = factorial_ratio(m, c.X.n) * np.linalg.inv(G2)
    pts = c.S.subset(np.arange(200))
    V2 = evaluate_basis(st.basis, pts) @ A.T
    B2 = np.real(np.sum(V2.conj() * (V2 @ P2.T), axis=1))
    err = float(np.max(np.abs(B2 / eval_B(st, pts) - 1)))
    return err <= 1e-9, f"max relative change {err:.2e}"


def check_init_scaling(c: _Ctx):
    a = run_chain(c.X, c.m0, c.m1, w=c.w, S=c.S)[0]
    b = run_chain(c.X, c.m0, c.m1, init=init_state(c.X, c.m0).scaled(7.0), w=c.w, S=c.S)[0]
    pts = c.S.subset(np.arange(500))
    err = max(float(np.max(np.abs(eval_B(x, pts) / eval_B(y, pts) * (1 / 7.0) - 1)))
              for x, y in zip(a, b))
    return err <= 1e-10, f"max deviation from h -> 7h {err:.2e}"


def check_beta_one(c: _Ctx):
    one = make_weight("constant_one", epsilon=0.5)
    a = run_chain(c.X, c.m0, c.m0 + 2, S=c.S)[0]
    b = run_chain(c.X, c.m0, c.m0 + 2, w=one, S=c.S)[0]
    same = all(np.array_equal(x.P, y.P) for x, y in zip(a, b))
    return same, "bitwise equal" if same else "differs"


def check_curvature(c: _Ctx):
    rng = np.random.default_rng(0)
    t0 = 0.3 * (rng.random(10) - 0.5 + 1j * (rng.random(10) - 0.5))
    worst = 0.0
    for kind in ("flat", "fubini", "hyperbolic"):
        phi, _, g, res = synthetic_potential(kind)
        gf, ratio = einstein_ratio_fd(phi, t0)
        worst = max(worst, float(np.max(np.abs(gf / g(t0) - 1))),
                    float(np.max(np.abs(np.abs(1 - ratio) - res))))
    return worst <= 1e-7, f"max error {worst:.2e}"


def check_dimension(c: _Ctx):
    X = c.X
    if X.n != 1:
        return True, "skipped (not a curve)"
    g = X.genus
    bad = []
    rng = np.random.default_rng(1)
    for m in range(2, 13):
        basis = canonical_power_basis(X, m)
        if len(basis) != (2 * m - 1) * (g - 1):
            bad.append(m)
            continue
        # rank of all degree-D monomials on many points equals dim H^0
        D = basis.degree
        full = monomial_exponents(3, D)
        pts = c.S.subset(rng.choice(c.S.count, 4 * len(full), replace=False))
        sv = np.linalg.svd(eval_monomials(pts.coords, full), compute_uv=False)
        rank = int(np.sum(sv > sv[0] * 1e-9))
        if rank != len(basis):
            bad.append(m)
    return not bad, "all sizes match" if not bad else f"mismatch at m={bad}"


def check_sampling_mass(c: _Ctx):
    err = abs(float(np.sum(c.S.weights)) - c.X.fs_mass)
    return err <= 1e-9 * c.X.fs_mass, f"|sum w - mass| = {err:.2e}"


CHECKS = {
    "trace_identity": check_trace_identity,
    "holder": check_holder,
    "lemma22": check_lemma22,
    "extremal": check_extremal,
    "basis_invariance": check_basis_invariance,
    "init_scaling": check_init_scaling,
    "beta_one_reduction": check_beta_one,
    "curvature_synthetic": check_curvature,
    "dimension_law": check_dimension,
    "sampling_mass": check_sampling_mass,
}


def run_suite(cfg: RunConfig, only=None, ridge=0.0):
    """Run the named checks (all by default).  Returns a list of (name, passed, detail)."""
    names = list(CHECKS) if only is None else [only]
    for n in names:
        if n not in CHECKS:
            raise KeyError(n)
    ctx = _Ctx(cfg, ridge)
    rows = []
    for n in names:
        try:
            ok, detail = CHECKS[n](ctx)
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((n, bool(ok), detail))
    return rows
