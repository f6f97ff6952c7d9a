"""Batch orchestration, per-trial tables and summary statistics."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import load_dataset, preprocess
from .errors import FitFailure, InvalidArgument
from .fitting import (LQR_VARIANTS, FitConfig, canonical_model, filter_outlier_fits, fit_trial)

log = logging.getLogger(__name__)

ROW_FIELDS = ["trial_id", "participant", "recording", "trial_index", "direction", "id_bits",
              "model", "n_samples", "sse", "max_error", "k", "d", "r", "delta", "n_tilde",
              "excluded", "reason", "notes"]
PARAM_FIELDS = ("k", "d", "r", "delta")


@dataclass
class ComparisonRow:
    trial_id: str
    model: str
    sse: float = math.nan
    max_error: float = math.nan
    params: dict = field(default_factory=dict)
    excluded: bool = False
    reason: str = ""
    participant: str = ""
    recording: str = ""
    trial_index: int = 0
    direction: str = ""
    id_bits: Optional[float] = None
    n_samples: int = 0
    notes: str = ""

    def to_csv(self):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return "" if math.isnan(v) else repr(v)
            return str(v)

        out = {
            "trial_id": self.trial_id, "participant": self.participant,
            "recording": self.recording, "trial_index": self.trial_index,
            "direction": self.direction, "id_bits": self.id_bits, "model": self.model,
            "n_samples": self.n_samples, "sse": self.sse, "max_error": self.max_error,
            "k": self.params.get("k"), "d": self.params.get("d"), "r": self.params.get("r"),
            "delta": self.params.get("delta"), "n_tilde": self.params.get("N_tilde"),
            "excluded": int(self.excluded), "reason": self.reason, "notes": self.notes,
        }
        return {k: fmt(v) for k, v in out.items()}

    @classmethod
    def from_csv(cls, rec):
        def num(key):
            v = rec.get(key, "")
            return float(v) if v != "" else None

        params = {k: num(k) for k in PARAM_FIELDS if num(k) is not None}
        if num("n_tilde") is not None:
            params["N_tilde"] = int(num("n_tilde"))
        sse_v, me_v = num("sse"), num("max_error")
        return cls(trial_id=rec["trial_id"], model=rec["model"],
                   sse=math.nan if sse_v is None else sse_v,
                   max_error=math.nan if me_v is None else me_v,
                   params=params, excluded=rec["excluded"] == "1", reason=rec["reason"],
                   participant=rec["participant"], recording=rec["recording"],
                   trial_index=int(rec["trial_index"]), direction=rec["direction"],
                   id_bits=num("id_bits"), n_samples=int(rec["n_samples"]),
                   notes=rec.get("notes", ""))


def write_rows(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.to_csv())


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [ComparisonRow.from_csv(rec) for rec in csv.DictReader(fh)]


def summary(values):
    """Mean, sample SD (n - 1) and standard error of a list of numbers."""
    values = np.asarray(values, dtype=float)
    n = int(values.size)
    mean = float(values.mean())
    if n < 2:
        return {"mean": mean, "se": 0.0, "sd": 0.0, "n": n, "sd_defined": False}
    sd = float(values.std(ddof=1))
    return {"mean": mean, "se": sd / math.sqrt(n), "sd": sd, "n": n, "sd_defined": True}


def aggregate_stats(rows):
    """Per-model summary of SSE and Maximum Error over retained rows."""
    out = {}
    models = sorted({r.model for r in rows})
    for model in models:
        kept = [r for r in rows if r.model == model and not r.excluded and not math.isnan(r.sse)]
        if not kept:
            log.warning("no retained rows for model %s; omitted from summary", model)
            continue
        out[model] = {"sse": summary([r.sse for r in kept]),
                      "max_error": summary([r.max_error for r in kept])}
    return out


def _id_key(id_bits):
    return "unknown" if id_bits is None else f"{id_bits:.6g}"


def parameter_distributions(rows, min_id_for_participants=2.0 + 1e-6):
    """Fitted-parameter summaries grouped by participant and by task ID.

    The per-participant grouping leaves out the easiest tasks
    (ID <= 2), whose parameters behave differently.
    """
    out = {}
    for model in sorted({r.model for r in rows}):
        kept = [r for r in rows if r.model == model and not r.excluded]
        names = [p for p in PARAM_FIELDS if any(p in r.params for r in kept)]
        if not names:
            continue
        by_part, by_id = {}, {}
        for r in kept:
            if r.id_bits is None or r.id_bits >= min_id_for_participants:
                by_part.setdefault(r.participant, []).append(r)
            by_id.setdefault(_id_key(r.id_bits), []).append(r)

        def describe(group):
            res = {}
            for p in names:
                vals = np.array([r.params[p] for r in group if p in r.params])
                if vals.size:
                    q1, med, q3 = np.percentile(vals, [25, 50, 75])
                    res[p] = {**summary(vals), "median": float(med), "q1": float(q1),
                              "q3": float(q3), "min": float(vals.min()), "max": float(vals.max())}
            return res

        out[model] = {"by_participant": {k: describe(v) for k, v in sorted(by_part.items())},
                      "by_id": {k: describe(v) for k, v in sorted(by_id.items())}}
    return out


@dataclass
class PipelineConfig:
    fit: FitConfig = field(default_factory=FitConfig)
    px_per_m: Optional[float] = None
    threshold_fraction: float = 0.005
    sg_window: int = 101
    sg_degree: int = 4
    outlier_scope: str = "global"  # global | participant | task

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        fit = FitConfig.from_dict(data.pop("fit", {}))
        known = set(cls.__dataclass_fields__) - {"fit"}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgument(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(fit=fit, **data)
        if cfg.outlier_scope not in ("global", "participant", "task"):
            raise InvalidArgument("outlier_scope must be global, participant or task")
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidArgument(f"cannot read config {path}: {exc}") from None


def load_trials(dataset_dir, cfg):
    """All trials of a dataset as ``(trimmed, untrimmed)`` lists, in file order."""
    recs = load_dataset(dataset_dir, px_per_m=cfg.px_per_m)
    trimmed, untrimmed = [], []
    for rec in recs:
        t, u = preprocess(rec, cfg.threshold_fraction, cfg.sg_window, cfg.sg_degree)
        trimmed += t
        untrimmed += u
    return trimmed, untrimmed


def _base_row(trial, model):
    return ComparisonRow(trial_id=trial.trial_id, model=model, participant=trial.participant,
                         recording=trial.recording, trial_index=trial.index + 1,
                         direction=trial.direction, id_bits=trial.task.id_bits,
                         n_samples=len(trial.trajectory), excluded=trial.excluded,
                         reason=trial.reason)


def _fit_job(job):
    model, trial, fit_cfg = job
    try:
        return fit_trial(model, trial.trajectory, trial.task, fit_cfg, trial_id=trial.trial_id)
    except FitFailure as exc:
        return exc


def fit_model(model, trimmed, untrimmed, fit_cfg, jobs=1):
    """Fit one model to every retained trial; returns ``(trial, FitResult | FitFailure)``.

    The reaction-time variant sees the untrimmed trials.
    """
    model = canonical_model(model)
    source = untrimmed if model == "2OL-LQR3" else trimmed
    todo = [t for t in source if not t.excluded]
    work = [(model, t, fit_cfg) for t in todo]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fit_job, work))
    else:
        results = [_fit_job(w) for w in work]
    return list(zip(todo, results))


def _outlier_groups(pairs, scope):
    groups = {}
    for trial, res in pairs:
        if scope == "participant":
            key = trial.participant
        elif scope == "task":
            key = (trial.participant, _id_key(trial.task.id_bits))
        else:
            key = None
        groups.setdefault(key, []).append((trial, res))
    return groups


def outlier_trials(pairs, cfg):
    """Trial ids whose fitted damping is an outlier within its group."""
    dropped = set()
    for group in _outlier_groups(pairs, cfg.outlier_scope).values():
        fits = [res for _, res in group if not isinstance(res, Exception)]
        if len(fits) < 2:
            continue
        _, out = filter_outlier_fits(fits, key="d", n_sd=cfg.fit.outlier_sd)
        dropped |= {f.trial_id for f in out}
    return dropped


def rows_for(model, pairs, drop=frozenset()):
    rows = []
    for trial, res in pairs:
        row = _base_row(trial, model)
        if isinstance(res, Exception):
            row.excluded, row.reason = True, "fit-failed"
        else:
            row.sse, row.max_error, row.params, row.notes = res.sse, res.max_error, res.params, res.notes
            row.n_samples = len(res.model_positions)
            if trial.trial_id in drop:
                row.excluded, row.reason = True, "outlier-d"
        rows.append(row)
    return rows


def run_fit(dataset_dir, model, cfg, jobs=1):
    trimmed, untrimmed = load_trials(dataset_dir, cfg)
    model = canonical_model(model)
    pairs = fit_model(model, trimmed, untrimmed, cfg.fit, jobs)
    drop = outlier_trials(pairs, cfg) if model in LQR_VARIANTS else set()
    return rows_for(model, pairs, drop)


def _safe_name(text):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text)


def run_compare(dataset_dir, models, cfg, out_dir, jobs=1):
    """Fit every requested model on the same retained trials and write the report bundle.

    A trial whose damping is an outlier for any LQR model is dropped for all
    models, so that every model is summarised over identical trials.
    """
    models = [canonical_model(m) for m in models]
    trimmed, untrimmed = load_trials(dataset_dir, cfg)
    fitted = {m: fit_model(m, trimmed, untrimmed, cfg.fit, jobs) for m in models}
    drop = set()
    for m in models:
        if m in LQR_VARIANTS:
            drop |= outlier_trials(fitted[m], cfg)
    rows = []
    for m in models:
        rows += rows_for(m, fitted[m], drop)
    rows.sort(key=lambda r: (r.participant, r.recording, r.trial_index, models.index(r.model)))

    out = Path(out_dir)
    plot_dir = out / "plot_data"
    plot_dir.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "per_trial.csv")
    with open(out / "aggregate.json", "w", encoding="utf-8") as fh:
        json.dump(aggregate_stats(rows), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "parameters.json", "w", encoding="utf-8") as fh:
        json.dump(parameter_distributions(rows), fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_plot_data(fitted, untrimmed, plot_dir)
    return rows


def write_plot_data(fitted, untrimmed, plot_dir):
    """One CSV per trial: user positions and every model's positions on a shared time axis."""
    by_id = {t.trial_id: t for t in untrimmed}
    per_trial = {}
    for model, pairs in fitted.items():
        for trial, res in pairs:
            if isinstance(res, Exception):
                continue
            per_trial.setdefault(trial.trial_id, {})[model] = (trial, res)
    for trial_id in sorted(per_trial):
        full = by_id[trial_id].trajectory
        times = full.times
        cols = {"time_s": times, "user_pos_m": full.positions}
        for model, (trial, res) in per_trial[trial_id].items():
            series = np.full(len(times), np.nan)
            offset = int(round((trial.trajectory.start_time - full.start_time) / full.h))
            series[offset:offset + len(res.model_positions)] = res.model_positions
            cols[f"{model}_pos_m"] = series
        path = Path(plot_dir) / f"{_safe_name(trial_id)}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(cols))
            for i in range(len(times)):
                writer.writerow(["" if np.isnan(c[i]) else repr(float(c[i])) for c in cols.values()])
