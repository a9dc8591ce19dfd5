"""Command line front end: iterate, verify, report, sample.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure
(including failed verification checks), 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .diagnostics import DiagnosticError, convergence_series
from .iteration import (
    ChainReport, IterationError, eval_B, run_chain, state_from_json, state_to_json,
)
from .sampling import (
    SamplingError, curve_chart_quadrature, sample_fs, sampleset_from_json, sampleset_to_json,
)
from .variety import VarietyError, residue_fs_density
from .verify import CHECKS, run_suite
from .weights import WeightError, WeightSpec, eval_weight, normalize_weight_sup

log = logging.getLogger("tsuji_ke")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
BETA_STUDY_FLOOR = 0.5


def write_atomic(path: Path, text: str):
    """Write-then-rename so a crash never leaves a half-written file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def build_sample(cfg: RunConfig, X):
    if cfg.method == "chart-quadrature":
        return curve_chart_quadrature(X, cfg.resolution)
    return sample_fs(X, cfg.n_points, cfg.seed)


def _chain_dir(out: Path, k: int) -> Path:
    return out / f"chain_{k:02d}"


# --------------------------------------------------------------------------- commands

def cmd_iterate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    X = cfg.variety()
    vhash = X.content_hash()
    S = build_sample(cfg, X) if cfg.policy == "shared" else None
    norm_set = S if S is not None else sample_fs(X, cfg.n_points, cfg.seed)
    weights = [normalize_weight_sup(w, norm_set) for w in cfg.weights(X)]
    manifest = {
        "config": cfg.to_dict() | {"threads": None, "out": None},
        "config_hash": cfg.content_hash(),
        "seed": cfg.seed,
        "variety": vhash,
        "sampleset": S.content_hash() if S is not None else None,
        "versions": {"tsuji_ke": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "chains": [],
    }
    if S is not None:
        write_atomic(out / "sampleset.json", sampleset_to_json(S, vhash) + "\n")
    status = EXIT_OK
    for k, w in enumerate(weights):
        cdir = _chain_dir(out, k)
        entry = {"dir": cdir.name, "epsilon": w.epsilon, "weight": w.to_dict(), "states": [],
                 "status": "running"}
        manifest["chains"].append(entry)

        def save(state, cdir=cdir, entry=entry):
            last = state.power == cfg.m_max
            if (state.power - cfg.m0) % cfg.checkpoint == 0 or last:
                name = f"state_m{state.power:03d}.json"
                write_atomic(cdir / name, state_to_json(state) + "\n")
                entry["states"].append(name)

        log.info("chain %d: epsilon=%s m=%d..%d", k, w.epsilon, cfg.m0, cfg.m_max)
        try:
            _, rep, _ = run_chain(X, cfg.m0, cfg.m_max, cfg.init, w, cfg.policy, cfg.seed,
                                  cfg.n_points, S, cfg.threads, on_state=save)
            entry["status"] = "complete"
        except IterationError as exc:
            rep = exc.partial[1] if exc.partial else None
            entry["status"] = "failed"
            entry["failure"] = {"message": str(exc), "cond": exc.cond, "min_eig": exc.min_eig}
            status = EXIT_NUMERIC
        if rep is not None:
            write_atomic(cdir / "report.json", _dump({"policy": rep.policy, "steps": rep.steps}))
        write_atomic(out / "manifest.json", _dump(manifest))
        if status != EXIT_OK:
            log.error("chain %d failed: %s", k, entry["failure"]["message"])
            break
    return status


def cmd_verify(cfg: RunConfig, only=None, ridge=0.0) -> int:
    if only is not None and only not in CHECKS:
        raise ConfigError("--only", f"unknown check {only!r}; choose from {sorted(CHECKS)}")
    rows = run_suite(cfg, only, ridge)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["check", "status", "detail"])
    for name, ok, detail in rows:
        wr.writerow([name, "pass" if ok else "fail", detail])
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    write_atomic(Path(cfg.out) / "verify.csv", buf.getvalue())
    return EXIT_OK if all(ok for _, ok, _ in rows) else EXIT_NUMERIC


def _load_chain(X, cdir: Path, names):
    states = []
    for name in names:
        states.append(state_from_json(X, (cdir / name).read_text(encoding="utf-8")))
    return states


def cmd_report(directory) -> int:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.is_file():
        raise FileNotFoundError(f"no manifest.json in {d}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    cfg_doc = dict(manifest["config"], out=str(d), threads=1)
    cfg = RunConfig(**cfg_doc)
    X = cfg.variety()
    if X.content_hash() != manifest["variety"]:
        raise ConfigError("manifest.variety", "variety hash does not match the configuration")
    S = None
    if manifest.get("sampleset"):
        S = sampleset_from_json(X, (d / "sampleset.json").read_text(encoding="utf-8"))
        if S.content_hash() != manifest["sampleset"]:
            raise ConfigError("sampleset", "SampleSet hash does not match the manifest")
    probe = sample_fs(X, cfg.probe_points, cfg.probe_seed_value)
    eprobe = probe.subset(np.arange(min(cfg.einstein_points, probe.count)))
    finals, weights = [], []
    for entry in manifest["chains"]:
        if not entry["states"]:
            continue
        cdir = d / entry["dir"]
        states = _load_chain(X, cdir, entry["states"])
        for st in states[1:]:
            if st.variety_hash != manifest["variety"] or (
                    S is not None and st.provenance.get("sample") != manifest["sampleset"]):
                raise ConfigError(f"{entry['dir']}/state_m{st.power:03d}.json",
                                  "mixed hashes: state was not produced from this run's sample")
        rpath = cdir / "report.json"
        report = None
        if rpath.is_file():
            rdoc = json.loads(rpath.read_text(encoding="utf-8"))
            report = ChainReport(rdoc["steps"], rdoc["policy"])
        ser = convergence_series(states, probe, X, report, einstein=X.n == 1, einstein_probe=eprobe)
        write_atomic(cdir / "series.csv", ser.to_csv())
        write_atomic(cdir / "series.json", ser.to_json() + "\n")
        finals.append(states[-1])
        weights.append(WeightSpec.from_dict(entry["weight"]))
    if not finals:
        raise FileNotFoundError(f"no state files found under {d}")
    if len(finals) > 1:
        write_epsilon_study(d, X, finals, weights, probe)
    return EXIT_OK


def epsilon_table(X, finals, weights, probe):
    """Per-probe values of h^{1/m} against the Fubini-Study volume, one column per epsilon.

    The value 1 / (B_m^{1/m} Phi) does not depend on the residue frame.
    Returns (beta, values) with values of shape (probes, epsilons).
    """
    phi = residue_fs_density(X, probe)
    vals = np.stack([1.0 / (eval_B(s, probe) ** (1.0 / s.power) * phi) for s in finals], axis=1)
    beta = eval_weight(weights[0], probe) if not weights[0].is_constant else np.ones(probe.count)
    return beta, vals


def stabilization(beta, vals, floor=BETA_STUDY_FLOOR) -> dict:
    """Max over probes with beta >= floor of successive epsilon differences."""
    sel = vals[beta >= floor]
    diffs = [float(np.max(np.abs(sel[:, j] - sel[:, j + 1]))) for j in range(vals.shape[1] - 1)]
    return {"probes_used": int(len(sel)), "max_successive_diff": diffs,
            "decreasing": all(b < a for a, b in zip(diffs, diffs[1:]))}


def write_epsilon_study(d: Path, X, finals, weights, probe):
    beta, vals = epsilon_table(X, finals, weights, probe)
    eps = [w.epsilon for w in weights]
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["probe", "beta"] + [f"eps={e!r}" for e in eps])
    for k in range(len(beta)):
        wr.writerow([k, repr(float(beta[k]))] + [repr(float(v)) for v in vals[k]])
    write_atomic(d / "epsilon_table.csv", buf.getvalue())
    summary = stabilization(beta, vals) | {"epsilons": eps, "beta_floor": BETA_STUDY_FLOOR}
    write_atomic(d / "epsilon_study.json", _dump(summary))


def cmd_sample(cfg: RunConfig) -> int:
    X = cfg.variety()
    S = build_sample(cfg, X)
    write_atomic(Path(cfg.out) / "sampleset.json", sampleset_to_json(S, X.content_hash()) + "\n")
    print(f"{S.count} points, method {S.method}, hash {S.content_hash()}")
    return EXIT_OK


# --------------------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsuji-ke", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config=True):
        sp.add_argument("--config", required=need_config, help="TOML or JSON run configuration")
        sp.add_argument("--out", help="output directory (overrides output.dir)")
        sp.add_argument("--seed", type=int, help="sampling seed (overrides sampling.seed)")
        sp.add_argument("--threads", type=int, help="worker threads; results do not depend on it")

    common(sub.add_parser("iterate", help="run the chain(s) and write states"))
    v = sub.add_parser("verify", help="run the built-in property suite")
    common(v)
    v.add_argument("--only", help=f"run a single check: {', '.join(CHECKS)}")
    v.add_argument("--inject-ridge", type=float, default=0.0, help=argparse.SUPPRESS)
    r = sub.add_parser("report", help="convergence series from a run directory")
    r.add_argument("directory")
    common(sub.add_parser("sample", help="write a SampleSet"))
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        cfg = replace(cfg, threads=args.threads)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.directory)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "iterate":
            return cmd_iterate(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.only, args.inject_ridge)
        return cmd_sample(cfg)
    except (ConfigError, VarietyError, WeightError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (IterationError, SamplingError, DiagnosticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
