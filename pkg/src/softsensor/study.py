"""Drift-scenario study on the simulated plant: static models versus moving windows.

For every drift scenario and repetition the plant is simulated once; the
19-sensor design with two lags and a 10-sensor preselected design without
lags are then evaluated offline (train on rows 0-299, test on 300-699) and
with TS-tuned moving windows over a grid of window sizes.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import simulator as sim
from .data import build_fir_matrix
from .evaluation import pct_rmse
from .learners import fit, predict_many
from .online import OnlineConfig, run_online
from .tuning import cv_tune, make_spec

FULL, PRE = "full", "preselected"


@dataclass(frozen=True)
class StudyConfig:
    scenarios: tuple = (1, 2, 3, 4, 5, 6, 7, 8)
    reps: int = 5
    base_seed: int = 0
    W_grid: tuple = (30, 40, 50, 60, 70)
    near_opt_W: tuple = (40, 50)
    pre_W_grid: Optional[tuple] = None  # defaults to near_opt_W
    learners: tuple = ("pls", "lasso", "rvm")
    full_lag: int = 2
    pre_k: int = 10
    pre_lag: int = 0
    folds: int = 10
    ts_repeats: int = 20
    n_train: int = sim.N_TRAIN
    min_gain_pct: float = 20.0
    min_scenarios_won: int = 6

    def designs(self):
        yield FULL, self.full_lag, tuple(self.W_grid)
        yield PRE, self.pre_lag, tuple(self.pre_W_grid or self.near_opt_W)


@dataclass
class StudyResult:
    config: StudyConfig
    # (design, "offline" | W, learner, scenario) -> RMSE per repetition
    rmse: dict = field(default_factory=dict)
    seconds: float = 0.0

    def add(self, design, scheme, learner, scenario, value):
        self.rmse.setdefault((design, scheme, learner, scenario), []).append(float(value))

    def mean(self, design, scheme, learner, scenarios=None) -> float:
        scenarios = scenarios or self.config.scenarios
        return float(np.mean([np.mean(self.rmse[(design, scheme, learner, s)]) for s in scenarios]))

    def near_opt_mean(self, design, learner) -> float:
        return float(np.mean([self.mean(design, W, learner) for W in self.config.near_opt_W]))

    def gain(self, design, learner, reference="pls") -> float:
        """%RMSE of ``learner`` over the reference near the optimal window size."""
        return pct_rmse(self.near_opt_mean(design, reference), self.near_opt_mean(design, learner))

    # criteria ---------------------------------------------------------------
    def scenarios_won_by_mw(self) -> list:
        cfg = self.config
        won = []
        for s in cfg.scenarios:
            mw = np.mean([self.mean(FULL, W, lr, [s]) for W in cfg.W_grid for lr in cfg.learners])
            off = np.mean([self.mean(FULL, "offline", lr, [s]) for lr in cfg.learners])
            if mw < off:
                won.append(s)
        return won

    def check_a(self) -> bool:
        return len(self.scenarios_won_by_mw()) >= self.config.min_scenarios_won

    def check_b(self) -> bool:
        return all(self.gain(FULL, lr) >= self.config.min_gain_pct for lr in ("lasso", "rvm"))

    def check_c(self) -> bool:
        return all(self.gain(PRE, lr) < self.gain(FULL, lr) for lr in ("lasso", "rvm"))

    def summary(self) -> dict:
        return {
            "scenarios_won_by_mw": self.scenarios_won_by_mw(),
            "gain_full": {lr: self.gain(FULL, lr) for lr in ("lasso", "rvm")},
            "gain_preselected": {lr: self.gain(PRE, lr) for lr in ("lasso", "rvm")},
            "a": self.check_a(),
            "b": self.check_b(),
            "c": self.check_c(),
            "seconds": self.seconds,
        }

    def curves_csv(self) -> str:
        """RMSE-versus-W table per design and learner, averaged over scenarios."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design", "scheme", "learner", "rmse"])
        for design, _, grid in self.config.designs():
            for lr in self.config.learners:
                w.writerow([design, "offline", lr, repr(self.mean(design, "offline", lr))])
                for W in grid:
                    w.writerow([design, f"MW{W}", lr, repr(self.mean(design, W, lr))])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{"design": k[0], "scheme": str(k[1]), "learner": k[2], "scenario": k[3],
                 "rmse": v} for k, v in sorted(self.rmse.items(), key=lambda kv: str(kv[0]))]
        return json.dumps({"config": asdict(self.config), "summary": self.summary(),
                           "cells": rows}, sort_keys=True, indent=1)


def _tuned_param(learner, X, y, cfg: StudyConfig, seed: int):
    if learner == "rvm":
        return None
    spec = make_spec(learner, X, cfg.folds, cfg.ts_repeats, seed)
    return cv_tune(X, y, spec).best_param


def run_study(cfg: StudyConfig = StudyConfig(),
              progress: Optional[Callable[[str], None]] = None) -> StudyResult:
    res = StudyResult(cfg)
    start = time.perf_counter()
    for scenario in cfg.scenarios:
        for rep, out in enumerate(sim.repeat_batch(scenario, cfg.reps, cfg.base_seed)):
            datasets = {FULL: out.dataset, PRE: sim.preselect_correlated(out, cfg.pre_k).dataset}
            for design, lag, grid in cfg.designs():
                ds = datasets[design]
                dm = build_fir_matrix(ds, 0, lag)
                off = dm.row_offset
                Xtr, ytr = dm.X[: cfg.n_train - off], dm.y[: cfg.n_train - off]
                Xte, yte = dm.X[cfg.n_train - off:], dm.y[cfg.n_train - off:]
                for lr in cfg.learners:
                    # one tuning on the training rows serves the static model and
                    # every TS-tuned window
                    param = _tuned_param(lr, Xtr, ytr, cfg, out.seed)
                    model = fit(lr, Xtr, ytr, param)
                    pred, _ = predict_many(model, Xte)
                    res.add(design, "offline", lr, scenario, np.sqrt(np.mean((yte - pred) ** 2)))
                    for W in grid:
                        oc = OnlineConfig("MW", lr, W=W, tuning_mode="TS",
                                          initial_ts_size=cfg.n_train, lag_order=lag,
                                          seed=out.seed, folds=cfg.folds,
                                          ts_repeats=cfg.ts_repeats,
                                          grid=None if param is None else (param,))
                        res.add(design, W, lr, scenario, run_online(ds, oc).rmse())
            if progress:
                progress(f"scenario {scenario} rep {rep + 1}/{cfg.reps} "
                         f"{time.perf_counter() - start:.0f}s")
    res.seconds = time.perf_counter() - start
    return res
