"""Run configuration: TOML or JSON with sections variety, chain, weight, sampling, probe, output."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli

from .iteration import M_CAP
from .sampling import MIN_RESOLUTION
from .variety import Hypersurface, parse_hypersurface
from .weights import KINDS, WeightSpec, make_weight


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    equation: str | list
    ambient_dim: int | None = None
    m0: int = 1
    m_max: int = 8
    init: str = "identity"
    policy: str = "shared"
    checkpoint: int = 1
    weight_kind: str = "constant_one"
    weight_Q: str | list | None = None
    epsilons: list = field(default_factory=lambda: [1.0])
    method: str = "random-line"
    n_points: int = 50000
    resolution: int = 96
    seed: int = 0
    probe_points: int = 500
    probe_seed: int | None = None
    einstein_points: int = 200
    out: str = "run"
    threads: int = 1

    def variety(self) -> Hypersurface:
        try:
            return parse_hypersurface(self.equation, ambient_dim=self.ambient_dim)
        except ValueError as exc:
            raise ConfigError("variety.equation", str(exc)) from exc

    def weights(self, X: Hypersurface) -> list[WeightSpec]:
        try:
            return [make_weight(self.weight_kind, self.weight_Q, e, X.ambient_projective_dim)
                    for e in self.epsilons]
        except ValueError as exc:
            raise ConfigError("weight", str(exc)) from exc

    @property
    def probe_seed_value(self) -> int:
        return self.seed + 1 if self.probe_seed is None else self.probe_seed

    def to_dict(self) -> dict:
        return asdict(self)

    def content_hash(self) -> str:
        """Hash of everything that can change results (threads and output dir excluded)."""
        doc = {k: v for k, v in self.to_dict().items() if k not in ("threads", "out")}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _get(doc, section, key, default, kind, field_name=None):
    name = field_name or f"{section}.{key}"
    val = doc.get(section, {}).get(key, default)
    if val is None:
        return None
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ConfigError(name, f"expected an integer, got {val!r}")
    if kind is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise ConfigError(name, f"expected a number, got {val!r}")
    if kind is str and not isinstance(val, str):
        raise ConfigError(name, f"expected a string, got {val!r}")
    return val


def config_from_dict(doc: dict) -> RunConfig:
    """Validate a parsed config document; errors name the offending field."""
    unknown = set(doc) - {"variety", "chain", "weight", "sampling", "probe", "output"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    var = doc.get("variety")
    if not var or ("equation" not in var and "table" not in var):
        raise ConfigError("variety.equation", "missing variety specification")
    equation = var.get("equation", var.get("table"))
    amb = _get(doc, "variety", "ambient_dim", None, int)

    m0 = _get(doc, "chain", "m0", 1, int)
    m_max = _get(doc, "chain", "m_max", 8, int)
    if m0 < 1:
        raise ConfigError("chain.m0", "must be >= 1")
    if not m0 < m_max <= M_CAP:
        raise ConfigError("chain.m_max", f"need m0 < m_max <= {M_CAP}")
    init = _get(doc, "chain", "init", "identity", str)
    if init != "identity":
        raise ConfigError("chain.init", "only 'identity' is supported from a config file")
    policy = _get(doc, "chain", "policy", "shared", str)
    if policy not in ("shared", "fresh"):
        raise ConfigError("chain.policy", "must be 'shared' or 'fresh'")
    checkpoint = _get(doc, "chain", "checkpoint", 1, int)
    if checkpoint < 1:
        raise ConfigError("chain.checkpoint", "must be >= 1")
    threads = _get(doc, "chain", "threads", 1, int)
    if threads < 1:
        raise ConfigError("chain.threads", "must be >= 1")

    kind = _get(doc, "weight", "kind", "constant_one", str)
    if kind not in KINDS:
        raise ConfigError("weight.kind", f"must be one of {KINDS}")
    Q = doc.get("weight", {}).get("Q")
    if kind == "polynomial_zero" and Q is None:
        raise ConfigError("weight.Q", "polynomial_zero weight needs Q")
    eps = doc.get("weight", {}).get("epsilon", 1.0)
    eps = list(eps) if isinstance(eps, (list, tuple)) else [eps]
    if not eps:
        raise ConfigError("weight.epsilon", "empty list")
    for e in eps:
        if isinstance(e, bool) or not isinstance(e, (int, float)) or not 0 < e <= 1:
            raise ConfigError("weight.epsilon", f"values must lie in (0, 1], got {e!r}")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("weight.epsilon", "list must be strictly decreasing")

    method = _get(doc, "sampling", "method", "random-line", str)
    if method not in ("random-line", "chart-quadrature"):
        raise ConfigError("sampling.method", "must be 'random-line' or 'chart-quadrature'")
    if method == "chart-quadrature" and policy == "fresh":
        raise ConfigError("chain.policy", "the deterministic quadrature cannot be redrawn per step")
    n_points = _get(doc, "sampling", "n_points", 50000, int)
    if n_points < 1:
        raise ConfigError("sampling.n_points", "must be positive")
    resolution = _get(doc, "sampling", "resolution", 96, int)
    if resolution < MIN_RESOLUTION:
        raise ConfigError("sampling.resolution", f"must be >= {MIN_RESOLUTION}")
    seed = _get(doc, "sampling", "seed", 0, int)

    probe_points = _get(doc, "probe", "n_points", 500, int)
    if probe_points < 1:
        raise ConfigError("probe.n_points", "must be positive")
    probe_seed = _get(doc, "probe", "seed", None, int)
    einstein_points = _get(doc, "probe", "einstein_points", 200, int)
    out = _get(doc, "output", "dir", "run", str)

    cfg = RunConfig(equation, amb, m0, m_max, init, policy, checkpoint, kind, Q,
                    [float(e) for e in eps], method, n_points, resolution, seed, probe_points,
                    probe_seed, einstein_points, out, threads)
    X = cfg.variety()
    if method == "chart-quadrature" and X.n != 1:
        raise ConfigError("sampling.method", "chart quadrature needs a plane curve")
    cfg.weights(X)
    return cfg


def load_config(path) -> RunConfig:
    """Read a ``.toml`` or ``.json`` config file."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(raw.decode("utf-8"))
        else:
            doc = tomli.loads(raw.decode("utf-8"))
    except (ValueError, tomli.TOMLDecodeError) as exc:
        raise ConfigError("file", f"cannot parse {path.name}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("file", "top level must be a table")
    return config_from_dict(doc)
