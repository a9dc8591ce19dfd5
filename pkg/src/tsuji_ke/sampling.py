"""Fubini-Study distributed point sets on X and weighted sums over them."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .variety import (
    Hypersurface, VarietyError, VarietyPoint, chart_arrays, fs_volume_density,
    intersect_lines, polish_roots, polynomial_roots, random_lines, select_residue,
)

SAMPLESET_VERSION = 1
MAX_LINE_DRAWS = 50
MIN_RESOLUTION = 8


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampleSet:
    """Points on X with their Fubini-Study mass.

    ``coords`` are max-modulus normalised homogeneous coordinates.  Random-line
    sets are stored line by line (``block`` consecutive points per line), which
    is what the standard error estimate relies on.
    """

    coords: np.ndarray
    affine: np.ndarray
    residue: np.ndarray
    weights: np.ndarray
    seed: int
    method: str
    block: int = 1

    @property
    def count(self) -> int:
        return len(self.weights)

    def __len__(self):
        return self.count

    def point(self, k: int) -> VarietyPoint:
        return VarietyPoint(self.coords[k], int(self.affine[k]), int(self.residue[k]))

    def subset(self, idx) -> "SampleSet":
        idx = np.asarray(idx)
        return SampleSet(self.coords[idx], self.affine[idx], self.residue[idx],
                         self.weights[idx], self.seed, self.method, 1)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.coords).tobytes())
        h.update(np.ascontiguousarray(self.weights).tobytes())
        h.update(f"{self.method}:{self.seed}".encode())
        return h.hexdigest()[:16]


def from_points(X: Hypersurface, coords, weights, seed=0, method="custom", block=1) -> SampleSet:
    z, a, j = chart_arrays(X, coords)
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(z),) or np.any(~(w > 0)):
        raise SamplingError("weights must be positive, one per point")
    return SampleSet(z, a, j, w, int(seed), method, block)


def sample_fs(X: Hypersurface, n_points: int, seed: int) -> SampleSet:
    """Intersect random lines with X; every intersection point gets equal mass.

    ``ceil(n_points / d)`` lines are drawn from the unitarily invariant
    measure, so the returned set has ``d * ceil(n_points / d)`` points.  Lines
    with a nearly repeated root or a root at infinity are redrawn.
    """
    d = X.degree
    if n_points < d:
        raise SamplingError(f"n_points must be >= degree {d}")
    n_lines = -(-n_points // d)
    rng = np.random.default_rng(seed)
    kept = []
    have = 0
    for _ in range(MAX_LINE_DRAWS):
        P, Q = random_lines(rng, n_lines - have, X.ambient_projective_dim + 1)
        pts, ok = intersect_lines(X, P, Q)
        pts = pts[ok]
        if len(pts):
            try:
                chart_arrays(X, pts.reshape(-1, pts.shape[-1]))
            except VarietyError:
                # drop offending lines one at a time; rare
                good = []
                for line in pts:
                    try:
                        chart_arrays(X, line)
                        good.append(line)
                    except VarietyError:
                        pass
                pts = np.array(good).reshape(-1, d, pts.shape[-1])
        kept.append(pts)
        have += len(pts)
        if have == n_lines:
            break
    else:
        raise SamplingError(f"root finding failed repeatedly ({have}/{n_lines} lines)")
    allpts = np.concatenate(kept).reshape(-1, X.ambient_projective_dim + 1)
    z, a, j = chart_arrays(X, allpts)
    w = np.full(len(z), X.fs_mass / len(z))
    return SampleSet(z, a, j, w, int(seed), "random-line", d)


def _smooth_step(r, lo):
    """C^3 polynomial step: 0 for r <= lo, 1 for r >= 1."""
    u = np.clip((r - lo) / (1 - lo), 0.0, 1.0)
    return u ** 4 * (35 - 84 * u + 70 * u ** 2 - 20 * u ** 3)


def _partition_weight(values, lo=0.5):
    """Smooth partition of unity over the last axis, supported where |v_i| >= lo * max |v|."""
    mag = np.abs(values)
    p = _smooth_step(mag / mag.max(axis=-1, keepdims=True), lo)
    return p / p.sum(axis=-1, keepdims=True)


def curve_chart_quadrature(X: Hypersurface, resolution: int, cutoff=0.5) -> SampleSet:
    """Deterministic tensor-grid quadrature for a plane curve.

    For each affine chart ``a`` and each choice ``j`` of the solved coordinate,
    the remaining coordinate ``t`` runs over a ``resolution x resolution`` grid
    on ``[-1/cutoff, 1/cutoff]^2``; the ``d`` roots in ``z_j`` give curve points
    with FS mass ``det g_FS * cell / pi``.  Each point's mass is split by a
    smooth partition of unity over (affine chart, solved coordinate), built
    from ``|z_a|`` and ``|dF/dz_j|`` and vanishing once either drops below
    ``cutoff`` times the maximum.  No mass is counted twice, the grid covers
    the whole support, and branch points of the projection carry no weight.
    """
    if X.n != 1:
        raise VarietyError("chart quadrature is only implemented for plane curves")
    if resolution < MIN_RESOLUTION:
        raise SamplingError(f"resolution must be >= {MIN_RESOLUTION}")
    radius = 1.0 / cutoff
    h = 2 * radius / resolution
    axis = -radius + h * (np.arange(resolution) + 0.5)
    t = (axis[:, None] + 1j * axis[None, :]).ravel()
    d = X.degree
    blocks_z, blocks_w = [], []
    dropped = 0
    for a in range(3):
        for j in range(3):
            if j == a:
                continue
            k = 3 - a - j
            base = np.zeros((len(t), 3), dtype=np.complex128)
            base[:, a] = 1.0
            base[:, k] = t
            # F(base + s e_j) as a polynomial in s, sampled on the unit circle
            s = np.exp(2j * np.pi * np.arange(d + 1) / (d + 1))
            pts = base[:, None, :] + s[None, :, None] * np.eye(3)[j]
            coeffs = np.fft.fft(X.evaluate(pts), axis=1) / (d + 1)
            lead = np.abs(coeffs[:, -1])
            ok = lead > 1e-12 * np.abs(coeffs).max(axis=1)
            coeffs[~ok, -1] = 1.0
            roots = polish_roots(coeffs, polynomial_roots(coeffs))
            good = ok[:, None] & np.isfinite(roots)
            dropped += int(np.sum(~good))
            z = np.repeat(base[:, None, :], d, axis=1)
            z[:, :, j] = roots
            z = z[good]
            grad = X.gradient(z)
            det = fs_volume_density(X, z, np.full(len(z), a), np.full(len(z), j))
            others = [i for i in range(3) if i != a]
            pa = _partition_weight(z, cutoff)[:, a]
            pj = _partition_weight(grad[:, others], cutoff)[:, others.index(j)]
            w = det * pa * pj * h * h / np.pi
            keep = np.isfinite(w) & (w > 0)
            blocks_z.append(z[keep])
            blocks_w.append(w[keep])
    z = np.concatenate(blocks_z)
    w = np.concatenate(blocks_w)
    zn, aff, res = chart_arrays(X, z)
    sset = SampleSet(zn, aff, res, w, 0, "chart-quadrature", 1)
    object.__setattr__(sset, "dropped", dropped)
    return sset


def mc_integrate(S: SampleSet, density) -> dict:
    """Weighted sum of ``density`` over S.

    ``density`` is either an array with one value per point or a callable
    taking the SampleSet and returning such an array.  The standard error
    treats each random line as one independent draw.
    """
    vals = density(S) if callable(density) else density
    vals = np.asarray(vals)
    if vals.shape != (S.count,):
        raise ValueError("density must give one value per point")
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise ValueError(f"non-finite density value at point {int(bad[0])}")
    value = np.sum(S.weights * vals)
    if S.method != "random-line":
        return {"value": value, "stderr": None}
    per_line = (S.weights * vals).reshape(-1, S.block).sum(axis=1)
    L = len(per_line)
    stderr = float(np.std(per_line * L, ddof=1) / math.sqrt(L)) if L > 1 else float("nan")
    return {"value": value, "stderr": stderr}


# --------------------------------------------------------------------------- persistence

def sampleset_to_json(S: SampleSet, variety_hash: str | None = None) -> str:
    doc = {
        "version": SAMPLESET_VERSION,
        "method": S.method,
        "seed": S.seed,
        "block": S.block,
        "variety": variety_hash,
        "points": [[[float(c.real), float(c.imag)] for c in row] for row in S.coords],
        "weights": [float(w) for w in S.weights],
    }
    return json.dumps(doc, sort_keys=True)


def sampleset_from_json(X: Hypersurface, text: str) -> SampleSet:
    doc = json.loads(text)
    if doc.get("version") != SAMPLESET_VERSION:
        raise SamplingError(f"unsupported SampleSet version {doc.get('version')}")
    if doc.get("variety") not in (None, X.content_hash()):
        raise SamplingError("SampleSet was produced for a different variety")
    pts = np.array([[complex(re_, im_) for re_, im_ in row] for row in doc["points"]])
    w = np.array(doc["weights"], dtype=float)
    z, a, j = chart_arrays(X, pts)
    return SampleSet(z, a, j, w, int(doc["seed"]), doc["method"], int(doc.get("block", 1)))


__all__ = ["SampleSet", "SamplingError", "sample_fs", "curve_chart_quadrature", "mc_integrate",
           "from_points", "sampleset_to_json", "sampleset_from_json", "select_residue"]
