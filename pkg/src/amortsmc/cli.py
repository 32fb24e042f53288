"""Command-line front end: train proposals, run inference, benchmark, inspect.

Usage::

    amortsmc <train|infer|benchmark|inspect> --model NAME [--particles K]
        [--proposal prior|learned] [--seed S] [--artifact PATH] [--data PATH]
        [--out DIR] [--set key=value ...]

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 degenerate weights.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import models
from .inference import PROPOSALS, posterior_summary, run_inference
from .made import DimensionMismatch
from .models import ModelBundle
from .smc import DegenerateWeights, ResamplingScheme, unique_ancestries
from .training import TrainArtifact, TrainConfig, train_all

log = logging.getLogger("amortsmc")

OUT_ENV = "AMORTSMC_OUT"
COMMANDS = ("train", "infer", "benchmark", "inspect")
DEFAULT_GRID = (5, 10, 50, 100, 500, 1000, 5000)
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_DEGENERATE = 0, 1, 2, 3

_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"adam", "seed"}
_BENCH_KEYS = {"grid", "seeds", "ancestry_K"}
_SCHEME_KEYS = {"scheme", "trigger", "threshold"}


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    model: str
    particles: int = 1000
    proposal: str = "prior"
    seed: int = 0
    artifact: Path | None = None
    data: Path | None = None
    out: Path = Path(".")
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.model not in models.BUILDERS:
            raise UsageError(f"unknown model {self.model!r}; choose from {sorted(models.BUILDERS)}")
        if self.particles < 1:
            raise UsageError("--particles must be at least 1")
        if self.proposal not in PROPOSALS:
            raise UsageError(f"--proposal must be one of {PROPOSALS}")
        if self.command in ("infer",) and self.proposal == "learned" and self.artifact is None:
            raise UsageError("the learned proposal needs --artifact")
        if self.command == "benchmark" and self.artifact is None:
            raise UsageError("benchmark compares against learned proposals and needs --artifact")


# -- overrides -------------------------------------------------------------

def parse_value(text: str):
    """JSON scalars, comma-separated tuples, or bare strings."""
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = parse_value(value.strip())
    return out


def _split_overrides(name: str, overrides: dict, base: dict | None = None):
    cfg_cls = models.CONFIGS[name]
    fields = {f.name for f in dataclasses.fields(cfg_cls)}
    sequences = {f.name for f in dataclasses.fields(cfg_cls) if "tuple" in str(f.type)}
    model_kw, train_kw, rest = {}, {}, {}
    for k, v in overrides.items():
        if k in fields:
            if k in sequences and not isinstance(v, (list, tuple)):
                v = (v,)  # a single hidden width or mean
            model_kw[k] = tuple(v) if isinstance(v, (list, tuple)) else v
        elif k in _TRAIN_KEYS:
            train_kw[k] = v
        elif k in _BENCH_KEYS | _SCHEME_KEYS:
            rest[k] = v
        else:
            raise UsageError(f"unknown override {k!r} for model {name!r}")
    merged = {}
    for k, v in (base or {}).items():
        if k in fields:
            merged[k] = tuple(v) if isinstance(v, list) else v
    merged.update(model_kw)
    try:
        config = cfg_cls(**merged)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad model override: {exc}") from None
    return config, train_kw, rest


# -- data -----------------------------------------------------------------

def _load_data(name: str, path: Path | None, config):
    """Returns the (possibly resized) config and builder keyword arguments."""
    if path is None:
        return config, {}
    if not Path(path).exists():
        raise FileNotFoundError(f"data file {path} does not exist")
    if name == "pump":
        t, y = models.load_pump_fixture(path)
        return replace(config, N=len(t)), {"data": (t, y)}
    if name == "regression":
        z, t = models.load_table(path, 2)
        return config, {"data": (z, t)}
    if name == "fhmm":
        episode_cfg, ys = models.read_episode(path)
        keep = {k: getattr(config, k) for k in ("transition_hidden", "initial_hidden")}
        return replace(episode_cfg, **keep), {"ys": ys}
    (y,) = models.load_table(path, 1)
    return config, {"data": float(y[0])}


def resolve_bundle(rc: RunConfig, artifact: TrainArtifact | None = None):
    base = artifact.model_config if artifact is not None else None
    config, train_kw, rest = _split_overrides(rc.model, rc.overrides, base)
    config, data_kw = _load_data(rc.model, rc.data, config)
    if artifact is not None and rc.model == "regression" and "data" in data_kw:
        n_data, n_trained = len(data_kw["data"][0]), artifact.model_config.get("N")
        if n_data != n_trained:
            raise DimensionMismatch(
                f"regression artifact was trained with fixed N={n_trained}; the data has {n_data} rows")
    if rc.model == "regression" and "data" in data_kw:
        config = replace(config, N=len(data_kw["data"][0]))
    toy_y = data_kw.pop("data", None) if rc.model == "conjugate-toy" else None
    bundle = models.build(rc.model, config, **data_kw)
    if toy_y is not None:
        bundle.data = {models.var("y"): toy_y}
    train = replace(bundle.train_config, seed=rc.seed, **train_kw)
    return bundle, train, rest


def _scheme(rest: dict) -> ResamplingScheme:
    try:
        return ResamplingScheme(rest.get("scheme", "systematic"), rest.get("trigger", "ess"),
                                float(rest.get("threshold", 0.5)))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# -- output ---------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _write_manifest(path: Path, rc: RunConfig, files: list[str], wall: float, extra: dict | None = None) -> None:
    man = {
        "command": rc.command, "model": rc.model, "particles": rc.particles, "proposal": rc.proposal,
        "seed": rc.seed, "artifact": None if rc.artifact is None else str(rc.artifact),
        "data": None if rc.data is None else str(rc.data),
        "overrides": {k: list(v) if isinstance(v, tuple) else v for k, v in rc.overrides.items()},
        "files": files, "wall_time_seconds": wall,
    }
    man.update(extra or {})
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _artifact_path(rc: RunConfig) -> Path:
    return rc.artifact if rc.artifact is not None else rc.out / f"{rc.model}-artifact.json"


def _load_artifact(rc: RunConfig) -> TrainArtifact:
    path = _artifact_path(rc)
    if not path.exists():
        raise FileNotFoundError(f"artifact {path} does not exist")
    art = TrainArtifact.load(path)
    if art.model_name != rc.model:
        raise ValueError(f"artifact {path} was trained for {art.model_name!r}, not {rc.model!r}")
    return art


# -- commands -------------------------------------------------------------

def cmd_train(rc: RunConfig) -> list[Path]:
    start = time.perf_counter()
    bundle, train, _ = resolve_bundle(rc)
    art = train_all(bundle.model, bundle.inverse, bundle.specs, train, bundle.model_config)
    path = _artifact_path(rc)
    path.parent.mkdir(parents=True, exist_ok=True)
    art.save(path)
    trace = rc.out / f"{rc.model}-train-trace.csv"
    _write_csv(trace, ("model", "seed", "network", "epoch", "step", "validation_nll"),
               ((rc.model, rc.seed, k, r.epoch, r.step, r.validation_nll)
                for k, rows in art.traces.items() for r in rows))
    manifest = rc.out / f"{rc.model}-train-manifest.json"
    _write_manifest(manifest, rc, [str(path), str(trace)], time.perf_counter() - start)
    return [path, trace, manifest]


METRIC_HEADER = ("model", "proposal", "K", "seed", "metric", "step", "variable", "value")


def metric_rows(rc: RunConfig, ps) -> list[tuple]:
    head = (rc.model, rc.proposal, rc.particles, rc.seed)
    rows = [head + ("log_evidence", "", "", ps.log_evidence)]
    for h in ps.history:
        for key in ("ess", "unique_ancestries", "resampled"):
            rows.append(head + (key, h["step"], "", h[key]))
    for s in posterior_summary(ps):
        rows.append(head + ("posterior_mean", "", s["variable"], s["mean"]))
        rows.append(head + ("posterior_stdev", "", s["variable"], s["stdev"]))
    return rows


def cmd_infer(rc: RunConfig) -> list[Path]:
    start = time.perf_counter()
    art = _load_artifact(rc) if rc.proposal == "learned" else None
    bundle, _, rest = resolve_bundle(rc, art)
    ps = run_inference(bundle, rc.proposal, rc.particles, rc.seed, art, scheme=_scheme(rest))
    metrics = rc.out / f"{rc.model}-infer-{rc.proposal}-K{rc.particles}-seed{rc.seed}.csv"
    _write_csv(metrics, METRIC_HEADER, metric_rows(rc, ps))
    manifest = metrics.with_suffix(".json")
    _write_manifest(manifest, rc, [str(metrics)], time.perf_counter() - start,
                    {"log_evidence": ps.log_evidence})
    return [metrics, manifest]


BENCH_HEADER = ("model", "K", "seed", "proposal", "log_evidence", "mean_ess", "final_unique_ancestries")
SUMMARY_HEADER = ("model", "K", "proposal", "n_seeds", "mean_log_evidence", "stdev_log_evidence")
ANCESTRY_HEADER = ("model", "K", "seed", "proposal", "step", "unique_ancestries")


def cmd_benchmark(rc: RunConfig) -> list[Path]:
    start = time.perf_counter()
    art = _load_artifact(rc)
    bundle, _, rest = resolve_bundle(rc, art)
    grid = rest.get("grid", DEFAULT_GRID)
    grid = sorted({int(k) for k in (grid if isinstance(grid, (list, tuple)) else (grid,))})
    n_seeds = int(rest.get("seeds", 10))
    seeds = [rc.seed + i for i in range(n_seeds)]
    scheme = _scheme(rest)
    rows, evid = [], {}
    for K in grid:
        for s in seeds:
            for prop in sorted(PROPOSALS):
                ps = run_inference(bundle, prop, K, s, art, scheme=scheme)
                mean_ess = float(np.mean([h["ess"] for h in ps.history]))
                rows.append((rc.model, K, s, prop, ps.log_evidence, mean_ess, unique_ancestries(ps)))
                evid.setdefault((K, prop), []).append(ps.log_evidence)
    out = rc.out / f"{rc.model}-benchmark.csv"
    _write_csv(out, BENCH_HEADER, rows)
    summary = rc.out / f"{rc.model}-benchmark-summary.csv"
    _write_csv(summary, SUMMARY_HEADER,
               ((rc.model, K, p, len(v), float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0)
                for (K, p), v in sorted(evid.items())))
    files = [out, summary]
    if rc.model == "fhmm":
        K = int(rest.get("ancestry_K", 100))
        anc = []
        for s in seeds:
            for prop in sorted(PROPOSALS):
                ps = run_inference(bundle, prop, K, s, art, scheme=scheme)
                anc += [(rc.model, K, s, prop, h["step"], h["unique_ancestries"]) for h in ps.history]
        trace = rc.out / f"{rc.model}-ancestry.csv"
        _write_csv(trace, ANCESTRY_HEADER, anc)
        files.append(trace)
    manifest = rc.out / f"{rc.model}-benchmark-manifest.json"
    _write_manifest(manifest, rc, [str(f) for f in files], time.perf_counter() - start,
                    {"grid": grid, "seeds": seeds})
    return files + [manifest]


def inspect_report(bundle: ModelBundle) -> str:
    m, inv = bundle.model, bundle.inverse
    lines = [f"model: {bundle.name}",
             f"latents: {len(m.latents)}  observed: {len(m.observed)}",
             f"plates: {', '.join(f'{p.name} x{p.count}' for p in m.plates) or 'none'}",
             f"inverse factors: {len(inv.factors)}"]
    for i, f in enumerate(inv.factors):
        lines.append(f"  {i:>3}  {f.describe()}")
    lines.append(f"networks: {len(bundle.specs)}")
    for key, s in bundle.specs.items():
        sh = s.shape
        head = "bernoulli" if sh.head == "bernoulli" else f"mixture({sh.n_components})"
        hidden = "x".join(str(h) for h in sh.hidden_sizes) or "none"
        idx = s.factor_indices
        served = f"{idx[0]}" if len(idx) == 1 else f"{idx[0]}-{idx[-1]}" if list(idx) == list(
            range(idx[0], idx[-1] + 1)) else ",".join(map(str, idx))
        lines.append(f"  {key}: factors {served}; {sh.n_targets} targets, {sh.n_cond} inputs ({s.feature}); "
                     f"hidden {hidden}; head {head}")
    return "\n".join(lines) + "\n"


def cmd_inspect(rc: RunConfig) -> str:
    bundle, _, _ = resolve_bundle(rc)
    return inspect_report(bundle)


# -- entry point -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="amortsmc", description="Amortized proposals for importance sampling and SMC.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--model", required=True, choices=sorted(models.BUILDERS))
    p.add_argument("--particles", "-K", type=int, default=1000)
    p.add_argument("--proposal", choices=PROPOSALS, default="prior")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--artifact", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE", default=[])
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def parse_args(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    out = ns.out or Path(os.environ.get(OUT_ENV, "."))
    return RunConfig(ns.command, ns.model, ns.particles, ns.proposal, ns.seed, ns.artifact, ns.data,
                     out, parse_overrides(ns.overrides)), ns.verbose


def main(argv=None) -> int:
    try:
        rc, verbose = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"amortsmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(message)s")
    try:
        if rc.command == "inspect":
            sys.stdout.write(cmd_inspect(rc))
            return EXIT_OK
        files = {"train": cmd_train, "infer": cmd_infer, "benchmark": cmd_benchmark}[rc.command](rc)
        for f in files:
            print(f)
        return EXIT_OK
    except UsageError as exc:
        print(f"amortsmc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateWeights as exc:
        print(f"amortsmc: degenerate weights: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except Exception as exc:  # any submodule failure is a runtime error
        print(f"amortsmc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
