"""Command-line front end: scenarios, sweeps and reports.

Verbs::

    urllc-orch run <scenario|preset> [--out DIR] [--workers N]
    urllc-orch validate <scenario|preset>
    urllc-orch train-mdn <dataset.npz> <out-model> [--k K --epochs E ...]
    urllc-orch convert-trace <in.csv> <out.csv>

Exit codes: 0 ok, 1 configuration error, 2 runtime error. Reports go under
``$URLLC_ORCH_OUT`` (default ``./results``) unless ``--out`` is given.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .domain import CellConfig, ServiceSpec, validate_config
from .errors import BadGeneratorParams, ConfigError, EmptyTrace, OrchError, ParseError, ReportError, TooFewUes
from .near_rt import BoundEvaluator, allocate_guaranteed, brute_force_allocate, n_compositions
from .rb_estimator import EmpiricalEstimator, PessimisticEstimator
from .rt_ctl import DEFAULT_ETA, DEFAULT_TAU, thresholds
from .simulator import ESTIMATORS, MODES, SimRun, run as run_sim, service_seed, snc_validation
from .trace_io import TraceRecord, history_from_stream, make_source, window, write_trace

OUT_ENV = "URLLC_ORCH_OUT"
KINDS = ("simulate", "validate_snc", "complexity")
SWEEP_AXES = {"seed", "n_cell_rb", "t_obs", "t_out", "n_services"}
PRESETS = ("validate_snc", "complexity", "endtoend_compare")
CONFIG_ERRORS = (ConfigError, ParseError, BadGeneratorParams, EmptyTrace, TooFewUes)
RECORD_HEADER = ("service_id", "arrival_tti", "completion_tti", "delay_s", "excess_norm")


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    cell: CellConfig
    services: tuple[ServiceSpec, ...]
    modes: tuple[str, ...] = ("oranus",)
    sweep: Mapping[str, tuple] = field(default_factory=dict)
    horizon: int = 20_000
    estimator: str = "empirical"
    eta: float = DEFAULT_ETA
    tau: float = DEFAULT_TAU
    delta_shrink: float = 0.9
    dedicated_rbs: tuple[int, ...] | None = None
    mdn_model: str | None = None
    save_dataset: bool = False
    output: str | None = None
    workers: int = 1

    def points(self) -> list[dict[str, Any]]:
        """Cartesian product of the sweep axes, in declaration order."""
        axes = list(self.sweep)
        return [dict(zip(axes, combo)) for combo in itertools.product(*(self.sweep[a] for a in axes))]

    def at(self, point: Mapping[str, Any]) -> tuple[CellConfig, tuple[ServiceSpec, ...], int]:
        """(cell, services, seed) at one sweep point."""
        cell_kw = {k: point[k] for k in ("n_cell_rb", "t_obs", "t_out") if k in point}
        cell = replace(self.cell, **cell_kw)
        services = self.services
        if "n_services" in point:
            services = services[: point["n_services"]]
        return cell, services, int(point.get("seed", self.cell.rng_seed))


def _int_list(value, name: str) -> tuple:
    if not isinstance(value, (list, tuple)):
        value = [value]
    if len(value) == 0:
        raise ConfigError(f"sweep axis {name!r} is empty")
    try:
        return tuple(int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"sweep axis {name!r} must hold integers") from None


def _resolve_sources(source: Mapping[str, Any], base: Path) -> dict:
    src = dict(source)
    if src.get("kind") == "trace":
        if "path" not in src:
            raise ConfigError("trace source needs a path")
        path = Path(src["path"])
        if not path.is_absolute():
            path = base / path
        if not path.is_file():
            raise ConfigError(f"trace file not found: {path}")
        src["path"] = str(path)
    return src


def parse_scenario(doc: Mapping[str, Any], base_dir: Path | str = ".") -> Scenario:
    """Build and fully validate a scenario from its parsed YAML document."""
    if not isinstance(doc, Mapping):
        raise ConfigError("scenario must be a mapping")
    base = Path(base_dir)
    known = {
        "name", "kind", "cell", "services", "modes", "sweep", "horizon", "estimator", "eta", "tau",
        "delta_shrink", "dedicated_rbs", "mdn_model", "save_dataset", "output", "workers", "seed",
    }
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    kind = doc.get("kind", "simulate")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    try:
        cell = CellConfig(**{**dict(doc.get("cell") or {}), "rng_seed": int(doc.get("seed", 0))})
    except TypeError as exc:
        raise ConfigError(f"cell: {exc}") from None
    raw_services = doc.get("services") or []
    if not isinstance(raw_services, list) or not raw_services:
        raise ConfigError("services must be a nonempty list")
    services = []
    for i, s in enumerate(raw_services):
        try:
            services.append(
                ServiceSpec(int(s.get("id", i)), float(s["w_th"]), float(s["epsilon"]), _resolve_sources(s.get("source", {}), base))
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"services[{i}]: missing or bad field {exc}") from None
    modes = tuple(doc.get("modes", ["oranus"]))
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise ConfigError(f"modes must be a nonempty subset of {MODES}, got {list(modes)}")
    sweep_doc = doc.get("sweep") or {"seed": [cell.rng_seed]}
    if not isinstance(sweep_doc, Mapping) or not sweep_doc:
        raise ConfigError("sweep must be a nonempty mapping of axis -> values")
    extra = set(sweep_doc) - SWEEP_AXES
    if extra:
        raise ConfigError(f"unknown sweep axes {sorted(extra)}; allowed {sorted(SWEEP_AXES)}")
    sweep = {k: _int_list(v, k) for k, v in sweep_doc.items()}
    estimator = doc.get("estimator", "empirical")
    if estimator not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {ESTIMATORS}")
    mdn_model = doc.get("mdn_model")
    if estimator == "mdn":
        if not mdn_model:
            raise ConfigError("estimator 'mdn' needs mdn_model")
        mp = Path(mdn_model) if Path(mdn_model).is_absolute() else base / mdn_model
        if not mp.is_file():
            raise ConfigError(f"mdn model not found: {mp}")
        mdn_model = str(mp)
    dedicated = doc.get("dedicated_rbs")
    sc = Scenario(
        name=str(doc.get("name", "scenario")),
        kind=kind,
        cell=cell,
        services=tuple(services),
        modes=modes,
        sweep=sweep,
        horizon=int(doc.get("horizon", 20_000)),
        estimator=estimator,
        eta=float(doc.get("eta", DEFAULT_ETA)),
        tau=float(doc.get("tau", DEFAULT_TAU)),
        delta_shrink=float(doc.get("delta_shrink", 0.9)),
        dedicated_rbs=tuple(int(v) for v in dedicated) if dedicated is not None else None,
        mdn_model=mdn_model,
        save_dataset=bool(doc.get("save_dataset", False)),
        output=doc.get("output"),
        workers=int(doc.get("workers", 1)),
    )
    check_scenario(sc)
    return sc


def check_scenario(sc: Scenario) -> None:
    if not 0 < sc.delta_shrink < 1:
        raise ConfigError("delta_shrink must be in (0,1)")
    if sc.workers < 1:
        raise ConfigError("workers must be >= 1")
    for point in sc.points():
        cell, services, _ = sc.at(point)
        if not services:
            raise ConfigError(f"no services at sweep point {point}")
        validate_config(cell, services)
        if sc.horizon < cell.t_obs + cell.t_out:
            raise ConfigError(f"horizon ({sc.horizon}) must be >= t_obs + t_out at {point}")
        if sc.kind == "simulate":
            for s in services:
                thresholds(s.w_th, cell.t_slot, sc.eta, sc.tau)
        if sc.kind == "validate_snc" and sc.dedicated_rbs is not None:
            if len(sc.dedicated_rbs) != len(services) or min(sc.dedicated_rbs) < 1:
                raise ConfigError("dedicated_rbs needs one positive entry per service")
        for s in services:
            if s.source.get("kind") != "trace":
                make_source(s.source, 1, 0)
        if "n_services" in point and point["n_services"] > len(sc.services):
            raise ConfigError(f"n_services={point['n_services']} exceeds the {len(sc.services)} services listed")


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario file, or a shipped preset by name."""
    path = Path(ref)
    if not path.is_file() and str(ref) in PRESETS:
        text = resources.files("urllc_orch.presets").joinpath(f"{ref}.yaml").read_text()
        base = Path(".")
    elif path.is_file():
        text, base = path.read_text(), path.parent
    else:
        raise ConfigError(f"no scenario file or preset named {ref!r} (presets: {', '.join(PRESETS)})")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{ref}: invalid YAML: {exc}") from None
    return parse_scenario(doc, base)


# ---------------------------------------------------------------------------
# reports


def fmt_num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.9g" % x


def _json_safe(obj):
    if isinstance(obj, Mapping):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_json_safe(v) for v in obj]
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float("%.9g" % x) if math.isfinite(x) else fmt_num(x)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else fmt_num(v) for v in r])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(_json_safe(obj), sort_keys=True, indent=2) + "\n"


def emit_report(path: str | Path, results, fmt: str, header: Sequence[str] | None = None) -> Path:
    """Write ``results`` as CSV (``header`` + rows) or JSON; byte-stable for equal input."""
    path = Path(path)
    if fmt == "csv":
        if header is None:
            raise ValueError("csv reports need a header")
        text = csv_text(header, results)
    elif fmt == "json":
        if results is None or (hasattr(results, "__len__") and len(results) == 0):
            raise ValueError("nothing to report")
        text = json_text(results)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


# ---------------------------------------------------------------------------
# experiments


def point_tag(point: Mapping[str, Any]) -> str:
    return "_".join(f"{k}{v}" for k, v in point.items()) or "base"


def _load_mdn(sc: Scenario):
    if sc.estimator != "mdn":
        return None
    from .mdn import load_model

    return load_model(sc.mdn_model)


def simulate_point(sc: Scenario, point: Mapping[str, Any], mode: str, out_dir: Path) -> dict:
    cell, services, seed = sc.at(point)
    spec = SimRun(mode, cell, services, sc.horizon, seed, sc.eta, sc.tau, sc.estimator, sc.delta_shrink,
                  mdn_model=_load_mdn(sc))
    res = run_sim(spec)
    stem = out_dir / point_tag(point) / mode
    emit_report(stem.with_suffix(".csv"), res.records(), "csv", RECORD_HEADER)
    viol = res.violation()
    summary = {
        "scenario": sc.name,
        "mode": mode,
        "point": dict(point),
        "violation_probability": {str(k): v for k, v in viol.items()},
        "n_records": {str(s.id): int(np.sum(res.service_id == s.id)) for s in services},
        "mean_rb_utilization": float(res.utilization().mean()) / cell.n_cell_rb,
        "allocations": res.allocations,
    }
    emit_report(stem.with_suffix(".json"), summary, "json")
    emit_report(stem.parent / f"{mode}.timing.json", {"runtime_s": res.runtime_s}, "json")
    if sc.save_dataset:
        x, y = res.mdn_dataset()
        np.savez(stem.parent / f"{mode}.mdn_dataset.npz", x=x, y=y)
    return {"point": point_tag(point), "mode": mode, "violation": viol}


def validation_point(sc: Scenario, point: Mapping[str, Any]) -> list[tuple]:
    cell, services, seed = sc.at(point)
    n_rbs = sc.dedicated_rbs or (cell.n_cell_rb // len(services),) * len(services)
    rows = []
    for s, n in zip(services, n_rbs):
        v = snc_validation(s, n, cell.t_obs, sc.horizon, seed, cell.t_slot, sc.delta_shrink)
        rows.append((v.t_obs, v.seed, v.service_id, v.n_rbs, v.w_model, v.w_sim, v.rel_error, v.n_packets))
    return rows


def complexity_point(sc: Scenario, point: Mapping[str, Any]) -> tuple[tuple, float]:
    """Guaranteed-RB descent vs. exhaustive search on windows drawn from the sources."""
    cell, services, seed = sc.at(point)
    windows = []
    for s in services:
        st = make_source(s.source, cell.t_obs, service_seed(seed, s.id))
        windows.append(window(history_from_stream(st, s.id), cell.t_obs - 1, cell.t_obs))
    est = EmpiricalEstimator.from_windows(windows, cell.n_cell_rb) if sc.estimator == "empirical" else PessimisticEstimator()
    ev = BoundEvaluator(windows, services, cell, est, sc.delta_shrink)
    t0 = time.perf_counter()
    alg = allocate_guaranteed(windows, est, cell, services, sc.delta_shrink, evaluator=ev)
    t_alg = time.perf_counter() - t0
    bf = brute_force_allocate(windows, est, cell, services, sc.delta_shrink, evaluator=ev)
    gap = (alg.objective - bf.objective) / bf.objective * 100 if math.isfinite(bf.objective) and bf.objective > 0 else 0.0
    row = (cell.n_cell_rb, len(services), seed, alg.objective, bf.objective, gap, alg.iterations,
           n_compositions(cell.n_cell_rb, len(services)), " ".join(map(str, alg.n_min)), " ".join(map(str, bf.n_min)))
    return row, t_alg


VALIDATION_HEADER = ("t_obs", "seed", "service_id", "n_rbs", "w_model_s", "w_sim_s", "rel_error_pct", "n_packets")
COMPLEXITY_HEADER = ("n_cell_rb", "n_services", "seed", "g_alg", "g_brute", "gap_pct", "iterations",
                     "enumeration", "n_min_alg", "n_min_brute")


def _task(args):
    kind, sc, point, mode, out_dir = args
    if kind == "simulate":
        return simulate_point(sc, point, mode, out_dir)
    if kind == "validate_snc":
        return validation_point(sc, point)
    return complexity_point(sc, point)


def run_experiment(sc: Scenario, out_root: str | Path | None = None, workers: int | None = None) -> Path:
    """Run every sweep point (and mode) of a scenario; return its output directory."""
    root = Path(out_root if out_root is not None else os.environ.get(OUT_ENV, "results"))
    out_dir = root / (sc.output or sc.name)
    workers = workers or sc.workers
    if sc.kind == "simulate":
        tasks = [(sc.kind, sc, p, m, out_dir) for p in sc.points() for m in sc.modes]
    else:
        tasks = [(sc.kind, sc, p, None, out_dir) for p in sc.points()]
    t0 = time.perf_counter()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    elapsed = time.perf_counter() - t0

    if sc.kind == "simulate":
        summary = {"scenario": sc.name, "runs": results}
    elif sc.kind == "validate_snc":
        rows = [r for chunk in results for r in chunk]
        emit_report(out_dir / "relative_error.csv", rows, "csv", VALIDATION_HEADER)
        summary = {"scenario": sc.name, "by_t_obs": _validation_summary(rows)}
    else:
        rows = [r for r, _ in results]
        emit_report(out_dir / "complexity.csv", rows, "csv", COMPLEXITY_HEADER)
        summary = {"scenario": sc.name, "max_gap_pct": max(r[5] for r in rows),
                   "max_iterations": max(r[6] for r in rows)}
        emit_report(out_dir / "complexity.timing.json", {"alg_runtime_s": [t for _, t in results]}, "json")
    emit_report(out_dir / "summary.json", summary, "json")
    emit_report(out_dir / "timing.json", {"runtime_s": elapsed}, "json")
    return out_dir


def _validation_summary(rows) -> dict:
    out = {}
    for t_obs in sorted({r[0] for r in rows}):
        err = np.array([r[6] for r in rows if r[0] == t_obs])
        fin = err[np.isfinite(err)]
        out[str(t_obs)] = {
            "runs": int(err.size),
            "conservative_fraction": float(np.mean(err >= 0)),
            "negative_runs": int(np.sum(err < 0)),
            "mean_rel_error_pct": float(fin.mean()) if fin.size else math.inf,
        }
    return out


# ---------------------------------------------------------------------------
# trace conversion

FALCON_COLUMNS = {
    "sfn": ("sfn", "system_frame_number", "frame"),
    "subframe": ("subframe", "sf", "subframe_index"),
    "rnti": ("rnti", "ue_id", "ue"),
    "bits": ("tbs", "tbs_sum", "bits", "tbs_bits"),
    "rbs": ("nof_prb", "prb", "nprb", "rbs", "l_prb"),
}
SFN_PERIOD = 1024


def convert_falcon(in_path: str | Path, out_path: str | Path) -> int:
    """Convert a FALCON-style DCI log into the ``tti,ue_id,bits,rbs`` trace format.

    The absolute subframe ``sfn * 10 + subframe`` is unwrapped across SFN
    roll-overs and shifted so the first row is TTI 0; rows for the same
    (TTI, UE) are summed. Returns the number of records written.
    """
    with open(in_path, newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        dialect = csv.Sniffer().sniff(sample, delimiters=",;\t") if sample else csv.excel
        reader = csv.reader(fh, dialect)
        header = [h.strip().lower() for h in next(reader, [])]
        cols = {}
        for key, names in FALCON_COLUMNS.items():
            hit = next((header.index(n) for n in names if n in header), None)
            if hit is None and key != "rbs":
                raise ConfigError(f"{in_path}: no column for {key} (tried {', '.join(names)})")
            cols[key] = hit
        acc: dict[tuple[int, int], list[int]] = {}
        prev, wraps = None, 0
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(c.strip() for c in row):
                continue
            try:
                sf = int(row[cols["sfn"]]) * 10 + int(row[cols["subframe"]])
                ue = int(float(row[cols["rnti"]]))
                bits = int(float(row[cols["bits"]]))
                rbs = int(float(row[cols["rbs"]])) if cols["rbs"] is not None else 0
            except (ValueError, IndexError) as exc:
                raise ParseError(lineno, str(exc)) from None
            if prev is not None and sf < prev - SFN_PERIOD * 5:
                wraps += 1
            prev = sf
            tti = sf + wraps * SFN_PERIOD * 10
            cell = acc.setdefault((tti, ue), [0, 0])
            cell[0] += bits
            cell[1] += rbs
    if not acc:
        raise EmptyTrace(f"{in_path}: no rows")
    base = min(t for t, _ in acc)
    records = [TraceRecord(t - base, ue, b, r) for (t, ue), (b, r) in acc.items()]
    write_trace(out_path, records)
    return len(records)


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="urllc-orch", description="uRLLC RB orchestration experiments")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run a scenario file or preset")
    r.add_argument("scenario")
    r.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./results)")
    r.add_argument("--workers", type=int)
    v = sub.add_parser("validate", help="check a scenario without running it")
    v.add_argument("scenario")
    t = sub.add_parser("train-mdn", help="train an MDN on an .npz dataset with arrays x and y")
    t.add_argument("dataset")
    t.add_argument("out_model")
    t.add_argument("--k", type=int, default=3)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--sigma-max", type=float, default=100.0, help="upper std clamp, e.g. n_cell_rb")
    c = sub.add_parser("convert-trace", help="convert a FALCON-style DCI log to the trace CSV format")
    c.add_argument("input")
    c.add_argument("output")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "validate":
            sc = load_scenario(args.scenario)
            n_runs = len(sc.points()) * (len(sc.modes) if sc.kind == "simulate" else 1)
            print(f"ok: {sc.name} ({sc.kind}), {n_runs} run(s)")
        elif args.verb == "run":
            sc = load_scenario(args.scenario)
            out = run_experiment(sc, args.out, args.workers)
            print(f"wrote {out}")
        elif args.verb == "train-mdn":
            from .mdn import MdnHyperparams, mdn_train, save_model

            try:
                data = np.load(args.dataset)
                x, y = data["x"], data["y"]
            except (OSError, KeyError, ValueError) as exc:
                raise ConfigError(f"{args.dataset}: need an .npz with arrays x and y ({exc})") from None
            hp = MdnHyperparams(k=args.k, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                                seed=args.seed, sigma_max=args.sigma_max)
            model, report = mdn_train(x, y, hp, return_report=True)
            save_model(model, args.out_model)
            print(f"wrote {args.out_model} (best epoch {report.best_epoch})")
        elif args.verb == "convert-trace":
            n = convert_falcon(args.input, args.output)
            print(f"wrote {n} records to {args.output}")
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (OrchError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
