"""Command-line front end.

Subcommands::

    softsensor simulate --scenario 1 --reps 20 --out runs/
    softsensor offline --config configs/ds6_like.yaml
    softsensor online --config configs/ds6_like.yaml --jobs 4
    softsensor compare runs/traces --reference pls-TS_MW_W50_n2
    softsensor validate-config configs/ds1_like.yaml
    softsensor study --reps 5

Exit status is 0 when every requested run finished, 1 when some cells failed
(they are listed on stderr) and 2 for usage or configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import simulator as sim
from .data import DataError, Dataset, build_fir_matrix, load_dataset, segment
from .evaluation import RobustTestConfig, compare, pct_rmse
from .learners import LEARNERS, normalize_learner
from .offline import run_offline
from .online import SCHEMES, TUNING_MODES, OnlineConfig, read_trace_csv, run_online
from .tuning import cv_score

ENV_OUT = "SOFTSENSOR_OUT"
DEFAULT_OUT = "softsensor-out"
EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` holds one message per field."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class DatasetSpec:
    source: str = "simulator"  # "simulator" or "file"
    scenario: int = 0
    rep: int = 0
    preselect: Optional[int] = None
    path: Optional[str] = None
    delimiter: str = ","
    columns: Optional[dict] = None
    target: Optional[str] = None
    sample_period: Optional[float] = None


@dataclass(frozen=True)
class TuningSection:
    folds: int = 10
    repeats: int = 20
    lasso_grid: Optional[tuple] = None


@dataclass(frozen=True)
class OfflineSection:
    lags: tuple = (0,)
    select_lag: bool = True
    segments: int = 1
    train_size: int = 300
    test_size: int = 400


@dataclass(frozen=True)
class OnlineSection:
    schemes: tuple = ("MW",)
    lags: tuple = (0,)
    initial_ts: int = 300
    W: tuple = (50,)
    nn: tuple = (50,)
    tuning_modes: tuple = ("TS",)
    alpha_md: float = 0.01
    growth_factor: float = 0.2


@dataclass(frozen=True)
class EvaluationSection:
    reference: str = "pls"
    gamma: float = 0.1
    alpha: float = 0.01


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    dataset: DatasetSpec
    learners: tuple
    seed: int = 0
    tuning: TuningSection = TuningSection()
    offline: Optional[OfflineSection] = None
    online: Optional[OnlineSection] = None
    evaluation: EvaluationSection = EvaluationSection()
    output: Optional[str] = None
    base_dir: Optional[str] = None  # where relative data paths resolve; not hashed

    def canonical(self) -> dict:
        d = asdict(self)
        d.pop("output")
        d.pop("base_dir")
        return d

    def hash(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return ExperimentConfig(**{**self.__dict__, "seed": int(seed)})


class _Reader:
    """Pulls typed fields out of nested mappings, collecting every error."""

    def __init__(self):
        self.errors = []

    def section(self, raw, path, cls):
        if raw is None:
            return None
        if not isinstance(raw, dict):
            self.errors.append(f"{path}: expected a mapping")
            return None
        known = {f for f in cls.__dataclass_fields__} - {"base_dir"}
        for key in raw:
            if key not in known:
                self.errors.append(f"{path}.{key}: unknown field")
        return {k: v for k, v in raw.items() if k in known}

    def int_(self, d, key, path, lo=None, hi=None):
        v = d.get(key)
        if isinstance(v, bool) or not isinstance(v, int):
            self.errors.append(f"{path}.{key}: expected an integer, got {v!r}")
            return None
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            self.errors.append(f"{path}.{key}: {v} outside [{lo}, {hi if hi is not None else 'inf'}]")
        return v

    def float_(self, d, key, path, lo, hi, lo_closed=False):
        v = d.get(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.errors.append(f"{path}.{key}: expected a number, got {v!r}")
            return None
        if not ((lo <= v) if lo_closed else (lo < v)) or not v < hi:
            self.errors.append(f"{path}.{key}: {v} outside {'[' if lo_closed else '('}{lo}, {hi})")
        return float(v)

    def list_(self, d, key, path, item=int, lo=None, choices=None):
        v = d.get(key)
        if not isinstance(v, (list, tuple)) or not v:
            self.errors.append(f"{path}.{key}: expected a non-empty list")
            return ()
        out = []
        for x in v:
            if item is int and (isinstance(x, bool) or not isinstance(x, int)):
                self.errors.append(f"{path}.{key}: {x!r} is not an integer")
            elif item is float and (isinstance(x, bool) or not isinstance(x, (int, float))):
                self.errors.append(f"{path}.{key}: {x!r} is not a number")
            elif item is str and not isinstance(x, str):
                self.errors.append(f"{path}.{key}: {x!r} is not a string")
            elif choices is not None and x not in choices:
                self.errors.append(f"{path}.{key}: {x!r} not one of {list(choices)}")
            elif lo is not None and x < lo:
                self.errors.append(f"{path}.{key}: {x!r} below {lo}")
            else:
                out.append(item(x))
                continue
        if len(set(out)) != len(out):
            self.errors.append(f"{path}.{key}: duplicate entries")
        return tuple(out)


def parse_config(raw) -> ExperimentConfig:
    """Validate a decoded config mapping; raises :class:`ConfigError`."""
    r = _Reader()
    top = r.section(raw, "config", ExperimentConfig)
    if top is None:
        raise ConfigError(r.errors or ["config: empty document"])

    name = top.get("name", "experiment")
    if not isinstance(name, str) or not name:
        r.errors.append("name: expected a non-empty string")

    seed = r.int_({"seed": top.get("seed", 0)}, "seed", "config", lo=0)

    ds_raw = r.section(top.get("dataset"), "dataset", DatasetSpec)
    dataset = None
    if ds_raw is None:
        if "dataset" not in top:
            r.errors.append("dataset: missing section")
    else:
        ds = {**asdict(DatasetSpec()), **ds_raw}
        if ds["source"] == "simulator":
            r.int_(ds, "scenario", "dataset", 0, len(sim.SCENARIOS) - 1)
            r.int_(ds, "rep", "dataset", lo=0)
            if ds["preselect"] is not None:
                r.int_(ds, "preselect", "dataset", 1, len(sim.SENSOR_NAMES))
            for key in ("path", "columns"):
                if ds[key] is not None:
                    r.errors.append(f"dataset.{key}: only valid with source 'file'")
        elif ds["source"] == "file":
            if not isinstance(ds["path"], str):
                r.errors.append("dataset.path: required for source 'file'")
            cols = ds["columns"]
            if not isinstance(cols, dict) or not cols:
                r.errors.append("dataset.columns: expected a mapping column -> role")
            else:
                for col, role in cols.items():
                    if role not in ("process", "target", "ignore"):
                        r.errors.append(f"dataset.columns.{col}: unknown role {role!r}")
                targets = [c for c, role in cols.items() if role == "target"]
                if not targets:
                    r.errors.append("dataset.columns: no target column")
                if ds["target"] is not None and ds["target"] not in targets:
                    r.errors.append(f"dataset.target: {ds['target']!r} is not a target column")
            if ds["preselect"] is not None:
                r.errors.append("dataset.preselect: only valid with source 'simulator'")
            if not isinstance(ds["delimiter"], str) or len(ds["delimiter"]) != 1:
                r.errors.append("dataset.delimiter: expected a single character")
        else:
            r.errors.append(f"dataset.source: expected 'simulator' or 'file', got {ds['source']!r}")
        dataset = DatasetSpec(**ds)

    learners = ()
    if "learners" not in top:
        r.errors.append("learners: at least one learner is required")
    else:
        learners = r.list_(top, "learners", "config", str, choices=LEARNERS)

    tun = {**asdict(TuningSection()), **(r.section(top.get("tuning"), "tuning", TuningSection) or {})}
    r.int_(tun, "folds", "tuning", lo=2)
    r.int_(tun, "repeats", "tuning", lo=1)
    if tun["lasso_grid"] is not None:
        tun["lasso_grid"] = r.list_(tun, "lasso_grid", "tuning", float, lo=0)

    offline = None
    if top.get("offline") is not None:
        off = {**asdict(OfflineSection()), **(r.section(top["offline"], "offline", OfflineSection) or {})}
        off["lags"] = r.list_(off, "lags", "offline", int, lo=0)
        for key in ("segments", "train_size", "test_size"):
            r.int_(off, key, "offline", lo=1)
        if not isinstance(off["select_lag"], bool):
            r.errors.append("offline.select_lag: expected true or false")
        offline = OfflineSection(**off)

    online = None
    if top.get("online") is not None:
        on = {**asdict(OnlineSection()), **(r.section(top["online"], "online", OnlineSection) or {})}
        on["schemes"] = r.list_(on, "schemes", "online", str, choices=SCHEMES)
        on["lags"] = r.list_(on, "lags", "online", int, lo=0)
        on["W"] = r.list_(on, "W", "online", int, lo=2)
        on["nn"] = r.list_(on, "nn", "online", int, lo=2)
        on["tuning_modes"] = r.list_(on, "tuning_modes", "online", str, choices=TUNING_MODES)
        r.int_(on, "initial_ts", "online", lo=2)
        r.float_(on, "alpha_md", "online", 0.0, 1.0)
        r.float_(on, "growth_factor", "online", 0.0, math.inf)
        online = OnlineSection(**on)

    if offline is None and online is None:
        r.errors.append("config: at least one scheme is required (an 'offline' or 'online' section)")

    ev = {**asdict(EvaluationSection()), **(r.section(top.get("evaluation"), "evaluation",
                                                      EvaluationSection) or {})}
    r.float_(ev, "gamma", "evaluation", 0.0, 0.5, lo_closed=True)
    r.float_(ev, "alpha", "evaluation", 0.0, 1.0)
    if ev["reference"] not in learners:
        r.errors.append(f"evaluation.reference: learner {ev['reference']!r} is not in learners")
    if online is not None and ev["reference"] != "rvm" and "TS" not in online.tuning_modes:
        r.errors.append("online.tuning_modes: the reference is tuned on the initial set; include TS")

    output = top.get("output")
    if output is not None and not isinstance(output, str):
        r.errors.append("output: expected a path string")

    if online is not None and dataset is not None and online.initial_ts and online.lags:
        room = online.initial_ts - max(online.lags)
        if "MW" in online.schemes or "MW-D" in online.schemes:
            for w in online.W:
                if w > room:
                    r.errors.append(f"online.W: window {w} exceeds the {room} labeled rows "
                                    "available before the first query")
        if "JITL" in online.schemes:
            for k in online.nn:
                if k > room:
                    r.errors.append(f"online.nn: {k} neighbours exceed the {room} labeled rows "
                                    "available before the first query")

    if r.errors:
        raise ConfigError(r.errors)
    return ExperimentConfig(
        name=name, dataset=dataset, learners=tuple(normalize_learner(x) for x in learners),
        seed=seed, tuning=TuningSection(**tun), offline=offline, online=online,
        evaluation=EvaluationSection(**ev), output=output,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config: file not found: {path}"])
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"config: not valid YAML: {exc}"]) from None
    cfg = parse_config(raw)
    return ExperimentConfig(**{**cfg.__dict__, "base_dir": str(path.parent)})


def check_against_data(cfg: ExperimentConfig, ds: Dataset):
    """Checks that need the data itself; run before any model is fitted."""
    errors = []
    N = ds.n_samples
    if cfg.offline is not None:
        try:
            segment(N, cfg.offline.segments, cfg.offline.train_size, cfg.offline.test_size)
        except DataError as exc:
            errors.append(f"offline.segments: {exc}")
        if max(cfg.offline.lags) >= cfg.offline.train_size:
            errors.append("offline.lags: lag order reaches past the training block")
    if cfg.online is not None and cfg.online.initial_ts >= N:
        errors.append(f"online.initial_ts: {cfg.online.initial_ts} leaves no queries in {N} rows")
    if errors:
        raise ConfigError(errors)


def load_experiment_data(cfg: ExperimentConfig):
    """Returns ``(dataset, target_index, provenance lines)``."""
    spec = cfg.dataset
    if spec.source == "simulator":
        plant_seed = sim.derive_seeds(cfg.seed, spec.rep + 1)[spec.rep]
        out = sim.simulate(spec.scenario, plant_seed)
        if spec.preselect is not None:
            out = sim.preselect_correlated(out, spec.preselect)
        return out.dataset, 0, [f"scenario={spec.scenario}", f"plant_seed={plant_seed}"]
    path = Path(spec.path)
    if not path.is_absolute() and cfg.base_dir:
        # relative data paths are resolved against the config file
        path = Path(cfg.base_dir) / path
    try:
        ds = load_dataset(path, spec.columns, spec.delimiter, spec.sample_period)
    except (DataError, FileNotFoundError) as exc:
        raise ConfigError([f"dataset: {exc}"]) from None
    target = spec.target or ds.target_names[0]
    return ds, ds.target_names.index(target), [f"data={Path(spec.path).name}"]


# ---------------------------------------------------------------------------
# output helpers

def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def output_root(flag: Optional[str], cfg: Optional[ExperimentConfig] = None) -> Path:
    if flag:
        return Path(flag)
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    return Path(os.environ.get(ENV_OUT) or DEFAULT_OUT)


def _stamp(config_hash: str, seed: int, extra=()) -> list:
    return [f"config_hash={config_hash}", f"seed={seed}", *extra]


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, default=_jsonable) + "\n"


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def _csv_text(header_lines, columns, rows) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _run_cells(func, cells, jobs: int) -> list:
    """``[(ok, result_or_message)]`` in cell order, serial or in worker processes."""
    if jobs <= 1 or len(cells) <= 1:
        return [_guarded(func, c) for c in cells]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_guarded, [func] * len(cells), cells))


def _guarded(func, cell):
    try:
        return True, func(cell)
    except Exception as exc:  # reported per cell, the remaining cells still run
        return False, f"{type(exc).__name__}: {exc}"


def _report_failures(failures) -> int:
    for label, msg in failures:
        print(f"FAILED {label}: {msg}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def _simulate_cell(cell):
    scenario, rep, seed, preselect = cell
    out = sim.simulate(scenario, seed)
    if preselect:
        out = sim.preselect_correlated(out, preselect)
    return out


def cmd_simulate(args) -> int:
    if args.list:
        for s in sim.scenario_catalog():
            print(json.dumps(s, sort_keys=True))
        return EXIT_OK
    if args.scenario is None:
        print("simulate: --scenario is required (or --list)", file=sys.stderr)
        return EXIT_USAGE
    seed = args.seed or 0
    params = {"command": "simulate", "scenario": args.scenario, "reps": args.reps,
              "seed": seed, "preselect": args.preselect, "plant": sim.PLANT_VERSION}
    chash = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()
    root = output_root(args.out) / "data"
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"simulate: cannot create {root}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    seeds = sim.derive_seeds(seed, args.reps)
    cells = [(args.scenario, k, s, args.preselect) for k, s in enumerate(seeds)]
    results = _run_cells(_simulate_cell, cells, args.jobs)
    files, failures = [], []
    for (scenario, k, s, _), (ok, res) in zip(cells, results):
        name = f"scenario{scenario}_rep{k:02d}.csv"
        if not ok:
            failures.append((name, res))
            continue
        atomic_write(root / name, sim.csv_text(res, _stamp(chash, seed, [f"rep={k}"])))
        files.append({"file": name, "rep": k, "seed": s})
    manifest = {"config_hash": chash, "seed": seed, "scenario": sim.get_scenario(args.scenario).__dict__,
                "reps": args.reps, "plant_version": sim.PLANT_VERSION, "files": files,
                "preselect": args.preselect}
    atomic_write(root / f"scenario{args.scenario}_manifest.json", _json(manifest))
    return _report_failures(failures)


# ---------------------------------------------------------------------------
# offline

@dataclass(frozen=True)
class _OfflineCell:
    segment: int
    learner: str
    lag: int
    train: range
    test: range
    cfg: ExperimentConfig
    target_index: int
    ds: Dataset = field(repr=False, compare=False)


def _offline_cell(c: _OfflineCell) -> dict:
    tun = c.cfg.tuning
    grid = tun.lasso_grid if c.learner == "lasso" else None
    res = run_offline(c.ds, c.learner, c.train, c.test, c.lag, tun.folds, tun.repeats,
                      c.cfg.seed, grid, c.target_index)
    # the lag order is ranked by the same repeated CV that picks the parameter
    if not (c.cfg.offline.select_lag and len(c.cfg.offline.lags) > 1):
        score = math.nan
    elif c.learner == "rvm":
        dm = build_fir_matrix(c.ds, c.target_index, c.lag)
        rows = np.array([r for r in c.train if r >= dm.row_offset]) - dm.row_offset
        score = cv_score("rvm", dm.X[rows], dm.y[rows], None, tun.folds, tun.repeats, c.cfg.seed)
    else:
        score = float(np.min(res.tuning["cv_curve"]))
    return {"result": res, "cv_rmse": score, "p": (c.lag + 1) * c.ds.n_vars}


def cmd_offline(cfg: ExperimentConfig, root: Path, jobs: int) -> int:
    if cfg.offline is None:
        raise ConfigError(["offline: section missing"])
    ds, ti, prov = load_experiment_data(cfg)
    check_against_data(cfg, ds)
    off = cfg.offline
    chash = cfg.hash()
    stamp = _stamp(chash, cfg.seed, prov)
    segs = segment(ds, off.segments, off.train_size, off.test_size)
    cells = [_OfflineCell(k, lr, lag, tr, te, cfg, ti, ds)
             for k, (tr, te) in enumerate(segs) for lr in cfg.learners for lag in off.lags]
    results = _run_cells(_offline_cell, cells, jobs)

    failures, done = [], {}
    for c, (ok, res) in zip(cells, results):
        if ok:
            done[(c.segment, c.learner, c.lag)] = res
        else:
            failures.append((f"offline seg{c.segment} {c.learner} n={c.lag}", res))

    curve_rows, selected = [], {}
    for k in range(len(segs)):
        for lr in cfg.learners:
            avail = [lag for lag in off.lags if (k, lr, lag) in done]
            for lag in avail:
                d = done[(k, lr, lag)]
                curve_rows.append([k, lr, lag, d["p"], _num(d["cv_rmse"]),
                                   repr(d["result"].rmse())])
            if not avail:
                continue
            if len(avail) == 1 or not off.select_lag:
                best = avail[0]
            else:
                # ties keep the shorter lag order
                best = min(avail, key=lambda lag: (done[(k, lr, lag)]["cv_rmse"], lag))
            selected[(k, lr)] = best

    ref = cfg.evaluation.reference
    tcfg = RobustTestConfig(cfg.evaluation.gamma, cfg.evaluation.alpha)
    box_rows, table_rows, errors = [], [], {}
    for lr in cfg.learners:
        segs_ok = [k for k in range(len(segs)) if (k, lr) in selected and (k, ref) in selected]
        if len(segs_ok) != len(segs):
            continue
        errors[lr] = np.concatenate([done[(k, lr, selected[(k, lr)])]["result"].errors
                                     for k in segs_ok])
        for k in segs_ok:
            res = done[(k, lr, selected[(k, lr)])]["result"]
            ref_res = done[(k, ref, selected[(k, ref)])]["result"]
            box_rows.append([lr, k, repr(pct_rmse(ref_res.rmse(), res.rmse()))])
            table_rows.append([k, lr, res.lag_order, (res.lag_order + 1) * ds.n_vars,
                               _num(res.param), repr(res.rmse())])
            var = res.variance if res.variance is not None else np.full(res.y.size, np.nan)
            trace = _csv_text(stamp + [f"learner={lr}", f"segment={k}", f"lag={res.lag_order}"],
                              ["t", "y", "yhat", "variance"],
                              [[int(t), repr(float(a)), repr(float(b)), repr(float(v))]
                               for t, a, b, v in zip(res.t, res.y, res.yhat, var)])
            atomic_write(root / "traces" / f"{lr}_offline_seg{k}.csv", trace)

    atomic_write(root / "plots" / "offline_rmse_vs_lag.csv",
                 _csv_text(stamp, ["segment", "learner", "lag", "p", "cv_rmse", "test_rmse"],
                           curve_rows))
    atomic_write(root / "plots" / "offline_pct_rmse_boxplot.csv",
                 _csv_text(stamp, ["learner", "segment", "pct_rmse"], box_rows))
    atomic_write(root / "reports" / "offline_selected.csv",
                 _csv_text(stamp, ["segment", "learner", "lag", "p", "param", "test_rmse"],
                           table_rows))
    if ref in errors:
        rep = compare(errors, ref, tcfg, config={"config_hash": chash, "seed": cfg.seed})
        atomic_write(root / "reports" / "offline_report.csv",
                     "".join(f"# {s}\n" for s in stamp) + rep.to_csv())
        atomic_write(root / "reports" / "offline_report.json", rep.to_json() + "\n")
        atomic_write(root / "reports" / "offline_report.txt", rep.to_text())
    else:
        failures.append(("offline report", f"reference {ref!r} has no completed runs"))
    return _report_failures(failures)


# ---------------------------------------------------------------------------
# online

@dataclass(frozen=True)
class _OnlineCell:
    name: str
    group: tuple  # (scheme, param name, param value, lag): traces compared together
    learner_label: str
    oc: OnlineConfig
    ds: Dataset = field(repr=False, compare=False)


def trace_name(learner: str, mode: str, scheme: str, param: int, lag: int) -> str:
    label = learner if learner == "rvm" else f"{learner}-{mode}"
    pname = "NN" if scheme == "JITL" else "W"
    return f"{label}_{scheme}_{pname}{param}_n{lag}"


def _online_cells(cfg: ExperimentConfig, ds: Dataset, ti: int) -> list:
    on = cfg.online
    tun = cfg.tuning
    cells = []
    for lag in on.lags:
        for scheme in on.schemes:
            params = on.nn if scheme == "JITL" else on.W
            for param in params:
                for lr in cfg.learners:
                    modes = ("TS",) if lr == "rvm" else on.tuning_modes
                    for mode in modes:
                        oc = OnlineConfig(
                            scheme, lr, W=param, nn_count=param, tuning_mode=mode,
                            initial_ts_size=on.initial_ts, lag_order=lag, alpha_md=on.alpha_md,
                            growth_factor=on.growth_factor, seed=cfg.seed, folds=tun.folds,
                            ts_repeats=tun.repeats,
                            grid=tun.lasso_grid if lr == "lasso" else None, target_index=ti,
                        )
                        name = trace_name(lr, mode, scheme, param, lag)
                        label = lr if lr == "rvm" else f"{lr}-{mode}"
                        cells.append(_OnlineCell(name, (scheme, param, lag), label, oc, ds))
    return cells


def _online_cell(c: _OnlineCell):
    return run_online(c.ds, c.oc)


def cmd_online(cfg: ExperimentConfig, root: Path, jobs: int) -> int:
    if cfg.online is None:
        raise ConfigError(["online: section missing"])
    ds, ti, prov = load_experiment_data(cfg)
    check_against_data(cfg, ds)
    chash = cfg.hash()
    stamp = _stamp(chash, cfg.seed, prov)
    cells = _online_cells(cfg, ds, ti)
    results = _run_cells(_online_cell, cells, jobs)

    failures, traces = [], {}
    for c, (ok, res) in zip(cells, results):
        if not ok:
            failures.append((c.name, res))
            continue
        traces[c.name] = res
        atomic_write(root / "traces" / f"{c.name}.csv", res.to_csv(stamp + [f"trace={c.name}"]))
        atomic_write(root / "traces" / f"{c.name}.json",
                     _json({"config_hash": chash, "seed": cfg.seed, **res.to_dict()}))

    ref = cfg.evaluation.reference
    ref_label = ref if ref == "rvm" else f"{ref}-TS"
    tcfg = RobustTestConfig(cfg.evaluation.gamma, cfg.evaluation.alpha)
    groups = {}
    for c in cells:
        groups.setdefault(c.group, []).append(c)
    rows, plot_rows, reports = [], [], {}
    for (scheme, param, lag), members in groups.items():
        ref_cell = next(c for c in members if c.learner_label == ref_label)
        if ref_cell.name not in traces:
            failures.append((f"{scheme} {param} n={lag}", f"reference {ref_cell.name} failed"))
            continue
        errs = {c.learner_label: traces[c.name].errors for c in members if c.name in traces}
        rep = compare(errs, ref_label, tcfg)
        reports[f"{scheme}_{param}_n{lag}"] = rep.to_dict()
        for c in members:
            if c.name not in traces:
                continue
            tr = traces[c.name]
            t = rep.robust_t.get(c.learner_label)
            wil = rep.wilcoxon.get(c.learner_label)
            rows.append([
                c.name, c.oc.learner, c.oc.tuning_mode if c.oc.learner != "rvm" else "",
                scheme, param, lag, len(tr), repr(rep.rmse[c.learner_label]),
                repr(rep.pct_rmse[c.learner_label]),
                "" if t is None else repr(t.statistic), "" if t is None else t.df,
                "" if t is None else repr(t.p_value), "" if t is None else ("x" if t.reject else ""),
                "" if wil is None else repr(wil.p_value),
            ])
            plot_rows.append([c.learner_label, scheme, lag, param, repr(tr.rmse())])

    cols = ["trace", "learner", "tuning", "scheme", "param", "lag", "n_queries", "rmse",
            "pct_rmse", "robust_t", "df", "p_value", "significant", "wilcoxon_p"]
    atomic_write(root / "reports" / "online_report.csv", _csv_text(stamp, cols, rows))
    atomic_write(root / "reports" / "online_report.json",
                 _json({"config_hash": chash, "seed": cfg.seed, "reference": ref_label,
                        "groups": reports}))
    atomic_write(root / "plots" / "online_rmse_vs_param.csv",
                 _csv_text(stamp, ["learner", "scheme", "lag", "param", "rmse"], plot_rows))
    return _report_failures(failures)


# ---------------------------------------------------------------------------
# compare

class CompareError(ValueError):
    pass


def _trace_files(paths) -> list:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        elif p.is_file():
            files.append(p)
        else:
            raise CompareError(f"no such trace file or directory: {p}")
    if len(files) < 1:
        raise CompareError("no trace files given")
    return files


def compare_traces(paths, reference: Optional[str] = None, force: bool = False,
                   cfg: RobustTestConfig = RobustTestConfig()):
    """EvalReport over stored traces; names are the file stems."""
    files = _trace_files(paths)
    data, hashes = {}, set()
    for f in files:
        tr = read_trace_csv(f.read_text())
        meta = dict(line.split("=", 1) for line in tr["header"] if "=" in line)
        hashes.add(meta.get("config_hash", "unknown"))
        cols = tr["columns"]
        if not {"t", "y", "yhat"} <= cols.keys():
            raise CompareError(f"{f}: not a prediction trace (needs t, y, yhat columns)")
        data[f.stem] = cols
    if len(hashes) > 1 and not force:
        raise CompareError(f"traces come from different configurations {sorted(hashes)}; "
                           "use --force to compare anyway")
    if reference is None:
        cands = [n for n in data if n.startswith("pls-TS")] or list(data)
        reference = cands[0]
    if reference not in data:
        raise CompareError(f"reference trace {reference!r} not among {sorted(data)}")
    ref = data[reference]
    for name, cols in data.items():
        if cols["t"].size != ref["t"].size:
            raise CompareError(f"trace {name!r} has {cols['t'].size} queries, "
                               f"reference has {ref['t'].size}")
        if not np.array_equal(cols["t"], ref["t"]):
            raise CompareError(f"trace {name!r} predicts different rows than the reference")
    errors = {n: c["y"] - c["yhat"] for n, c in data.items()}
    joined = sorted(hashes)[0] if len(hashes) == 1 else "mixed"
    return compare(errors, reference, cfg, config={"config_hash": joined}), joined


def cmd_compare(args) -> int:
    tcfg = RobustTestConfig(args.gamma, args.alpha)
    try:
        rep, chash = compare_traces(args.traces, args.reference, args.force, tcfg)
    except (CompareError, ValueError) as exc:
        print(f"compare: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sys.stdout.write(rep.to_text())
    if args.out or os.environ.get(ENV_OUT):
        root = output_root(args.out) / "reports"
        atomic_write(root / "compare.csv", f"# config_hash={chash}\n" + rep.to_csv())
        atomic_write(root / "compare.json", rep.to_json() + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# study (drift scenarios on the simulated plant)

def cmd_study(args) -> int:
    from .study import StudyConfig, run_study

    scen = tuple(args.scenarios) if args.scenarios else StudyConfig.scenarios
    scfg = StudyConfig(scenarios=scen, reps=args.reps, base_seed=args.seed or 0,
                       ts_repeats=args.ts_repeats)
    res = run_study(scfg, progress=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    root = output_root(args.out)
    chash = hashlib.sha256(json.dumps(asdict(scfg), sort_keys=True).encode()).hexdigest()
    stamp = _stamp(chash, scfg.base_seed)
    atomic_write(root / "reports" / "study.json", res.to_json() + "\n")
    body = res.curves_csv().split("\n", 1)
    atomic_write(root / "plots" / "study_rmse_vs_W.csv",
                 _csv_text(stamp, body[0].split(","), []) + body[1])
    summary = res.summary()
    summary.pop("seconds")
    print(json.dumps(summary, sort_keys=True, indent=1))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="softsensor", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("simulate", help="simulate drift scenarios to CSV")
    p.add_argument("--scenario", type=int, choices=range(len(sim.SCENARIOS)))
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--preselect", type=int, help="keep the k most correlated sensors")
    p.add_argument("--list", action="store_true", help="print the scenario catalog")
    common(p, config=False)

    common(sub.add_parser("offline", help="static models with lag-order selection"))
    common(sub.add_parser("online", help="moving-window and JITL prediction streams"))

    p = sub.add_parser("compare", help="robust tests over stored traces")
    p.add_argument("traces", nargs="+", help="trace CSV files or directories")
    p.add_argument("--reference", help="trace name (file stem) used as reference")
    p.add_argument("--gamma", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--force", action="store_true", help="allow traces from different configs")
    p.add_argument("--out")

    p = sub.add_parser("validate-config", help="check an experiment file")
    p.add_argument("config")

    p = sub.add_parser("study", help="offline versus moving windows over the drift scenarios")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--scenarios", type=int, nargs="+", choices=range(1, len(sim.SCENARIOS)))
    p.add_argument("--ts-repeats", type=int, default=20)
    p.add_argument("--verbose", action="store_true")
    common(p, config=False)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "reps", 1) < 1:
        print("--reps must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "study":
            return cmd_study(args)
        if args.command == "validate-config":
            cfg = load_config(args.config)
            ds, _, _ = load_experiment_data(cfg)
            check_against_data(cfg, ds)
            print(json.dumps({"config_hash": cfg.hash(), **cfg.canonical()}, sort_keys=True,
                             indent=1, default=list))
            return EXIT_OK
        cfg = load_config(args.config).with_seed(args.seed)
        root = output_root(args.out, cfg)
        if args.command == "offline":
            return cmd_offline(cfg, root, args.jobs)
        return cmd_online(cfg, root, args.jobs)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
