"""Ingestion and preprocessing of reciprocal pointing recordings.

Canonical recording format (one file per participant and task)::

    time_s,pos_m,click,success
    0.000,0.0012,0,
    0.002,0.0013,0,
    ...
    1.000,0.1498,1,1

``pos_px`` may replace ``pos_m``; it is then divided by ``px_per_m``.
``click`` marks the last sample of a trial and ``success`` is read on click
rows only.  An optional sidecar ``<stem>.json`` describes the task::

    {"participant": "P1", "targets": [0.15, -0.15], "width": 0.01}

``targets[0]`` is the target of the first trial; trials alternate between the
two.  Sidecar lengths use the same unit as the position column.  Without a
sidecar the targets are estimated from the click positions.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidArgument, RecordingError
from .model import TaskSpec, Trajectory

log = logging.getLogger(__name__)

SAMPLING_TOLERANCE = 1e-6
SG_DEGREE = 4
SG_WINDOW = 101
REACTION_THRESHOLD = 0.005


@dataclass
class RawRecording:
    participant: str
    name: str
    h: float
    times: np.ndarray
    positions: np.ndarray  # metres
    clicks: np.ndarray  # 0-based row index of each trial's last sample
    success: np.ndarray  # one flag per click
    targets: Optional[tuple] = None  # (first trial target, other target), metres
    width: Optional[float] = None  # metres
    trial_targets: Optional[np.ndarray] = None  # per-sample target column, if recorded

    def __len__(self):
        return len(self.positions)


@dataclass
class TrialRecord:
    index: int  # 0-based position of the trial within its recording
    direction: str
    trajectory: Trajectory
    task: TaskSpec
    participant: str = ""
    recording: str = ""
    rows: tuple = (0, 0)  # half-open row range in the recording
    success: bool = True
    excluded: bool = False
    reason: str = ""
    trimmed: int = 0  # frames dropped from the start

    @property
    def trial_id(self):
        return f"{self.participant}/{self.recording}/{self.index + 1}"


def _sidecar(path):
    side = path.with_suffix(".json")
    if side.exists():
        with open(side, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def _check_uniform(times, first_line=2):
    if len(times) < 2:
        return None
    diffs = np.diff(times)
    h = (times[-1] - times[0]) / (len(times) - 1)
    bad = np.flatnonzero(np.abs(diffs - h) > SAMPLING_TOLERANCE)
    if h <= 0 or bad.size:
        line = first_line + int(bad[0]) + 1 if bad.size else first_line
        raise RecordingError(f"non-uniform sampling (expected step {h:.6g} s)", line=line)
    return float(h)


def parse_recording(path, px_per_m=None, h=None):
    """Read one recording in the canonical CSV format."""
    path = Path(path)
    meta = _sidecar(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise RecordingError("empty file", line=1) from None
        if "time_s" not in header:
            raise RecordingError("missing time_s column", line=1)
        if "pos_m" in header:
            pos_col, scale = header.index("pos_m"), 1.0
        elif "pos_px" in header:
            if not px_per_m:
                raise RecordingError("pos_px column needs a px_per_m factor", line=1)
            pos_col, scale = header.index("pos_px"), 1.0 / px_per_m
        else:
            raise RecordingError("missing pos_m / pos_px column", line=1)
        t_col = header.index("time_s")
        click_col = header.index("click") if "click" in header else None
        succ_col = header.index("success") if "success" in header else None
        times, positions, clicks, success = [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                times.append(float(row[t_col]))
                positions.append(float(row[pos_col]) * scale)
                is_click = click_col is not None and row[click_col].strip() not in ("", "0")
                if is_click:
                    clicks.append(len(times) - 1)
                    flag = row[succ_col].strip() if succ_col is not None and succ_col < len(row) else ""
                    success.append(flag in ("", "1"))
            except (ValueError, IndexError) as exc:
                raise RecordingError(f"malformed row {row!r} ({exc})", line=lineno) from None
    if not times:
        raise RecordingError("no samples", line=2)
    times = np.array(times)
    step = _check_uniform(times)
    if h is not None and step is not None and abs(step - h) > SAMPLING_TOLERANCE:
        raise RecordingError(f"sampling step {step:.6g} s differs from configured {h} s")
    length_scale = scale
    targets = meta.get("targets")
    if targets is not None:
        targets = tuple(float(t) * length_scale for t in targets)
    width = meta.get("width")
    return RawRecording(
        participant=str(meta.get("participant", path.parent.name)),
        name=path.stem,
        h=step if step is not None else float(h or 0.0),
        times=times,
        positions=np.array(positions),
        clicks=np.array(clicks, dtype=int),
        success=np.array(success, dtype=bool),
        targets=targets,
        width=float(width) * length_scale if width is not None else None,
    )


def load_adapter_config(path):
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if "columns" not in cfg:
        raise InvalidArgument("adapter config needs a 'columns' mapping")
    return cfg


def parse_with_adapter(path, cfg, px_per_m=None):
    """Read a recording in a foreign column layout described by ``cfg``.

    ``cfg["columns"]`` maps ``time``, ``pos`` and optionally ``click``,
    ``success``, ``target`` and ``width`` to column names.  Without a click
    column, a trial ends on the row before the target column changes value.
    Lengths are divided by ``px_per_m`` when ``cfg["position_unit"] == "px"``.
    """
    import pandas as pd

    cols = cfg["columns"]
    path = Path(path)
    try:
        df = pd.read_csv(path)
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise RecordingError(f"{path}: {exc}") from None
    missing = [c for key, c in cols.items() if c not in df.columns]
    if missing:
        raise RecordingError(f"{path}: missing columns {missing}", line=1)
    scale = 1.0
    if cfg.get("position_unit", "m") == "px":
        factor = cfg.get("px_per_m", px_per_m)
        if not factor:
            raise RecordingError("pixel positions need px_per_m")
        scale = 1.0 / factor
    times = df[cols["time"]].to_numpy(dtype=float)
    if "time_scale" in cfg:
        times = times * cfg["time_scale"]
    step = _check_uniform(times)
    positions = df[cols["pos"]].to_numpy(dtype=float) * scale
    target = df[cols["target"]].to_numpy(dtype=float) * scale if "target" in cols else None
    if "click" in cols:
        clicks = np.flatnonzero(df[cols["click"]].to_numpy() != 0)
    elif target is not None:
        clicks = np.append(np.flatnonzero(np.diff(target) != 0), len(target) - 1)
    else:
        raise RecordingError(f"{path}: need a click or target column to segment trials")
    if "success" in cols:
        success = df[cols["success"]].to_numpy()[clicks] != 0
    else:
        success = np.ones(len(clicks), dtype=bool)
    width = None
    if "width" in cols:
        width = float(df[cols["width"]].iloc[0]) * scale
    return RawRecording(participant=path.parent.name, name=path.stem, h=step,
                        times=times, positions=positions, clicks=clicks, success=success,
                        width=width, trial_targets=target)


def load_dataset(dataset_dir, px_per_m=None, adapter=None):
    """Parse every recording below ``dataset_dir``, sorted by path.

    An ``adapter.json`` in the directory (or the ``adapter`` argument)
    switches from the canonical format to a mapped column layout.
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise InvalidArgument(f"dataset directory {root} does not exist")
    if adapter is None and (root / "adapter.json").exists():
        adapter = load_adapter_config(root / "adapter.json")
    if adapter is not None:
        files = sorted(root.glob(adapter.get("glob", "**/*.csv")))
        recs = [parse_with_adapter(p, adapter, px_per_m) for p in files]
    else:
        files = sorted(p for p in root.rglob("*.csv"))
        recs = [parse_recording(p, px_per_m=px_per_m) for p in files]
    if not recs:
        raise InvalidArgument(f"no recordings found in {root}")
    return recs


def _sg_operator(degree, window, deriv_order):
    """Weights mapping one window of samples to the derivative of its fitted polynomial.

    Row ``j`` evaluates at window offset ``j``.  Offsets are scaled to
    [-1, 1] before the least-squares fit; on raw sample offsets the
    Vandermonde matrix is badly conditioned and the weights lose accuracy.
    """
    m = window // 2
    z = (np.arange(window) - m) / m
    V = np.vander(z, degree + 1, increasing=True)
    fit = np.linalg.pinv(V)  # polynomial coefficients from samples
    D = np.zeros((window, degree + 1))
    for i in range(deriv_order, degree + 1):
        falling = math.prod(range(i - deriv_order + 1, i + 1))
        D[:, i] = falling * z ** (i - deriv_order)
    return D @ fit, m


def savitzky_golay(series, degree=SG_DEGREE, window=SG_WINDOW, deriv_order=0, h=1.0):
    """Savitzky-Golay smoothing or differentiation.

    Each output sample is the ``deriv_order``-th derivative of the
    least-squares polynomial fitted over the centred window.  The first and
    last half-windows are evaluated off-centre on the polynomial of the first
    and last full window.
    """
    series = np.asarray(series, dtype=float)
    if window % 2 == 0 or window <= degree:
        raise InvalidArgument(f"window must be odd and exceed degree, got {window}/{degree}")
    if deriv_order not in (0, 1, 2):
        raise InvalidArgument("deriv_order must be 0, 1 or 2")
    if len(series) < window:
        raise InvalidArgument(f"series of length {len(series)} is shorter than window {window}")
    op, m = _sg_operator(degree, window, deriv_order)
    windows = np.lib.stride_tricks.sliding_window_view(series, window)
    out = np.empty_like(series)
    out[m:len(series) - m] = windows @ op[m]
    out[:m] = op[:m] @ windows[0]
    out[len(series) - m:] = op[m + 1:] @ windows[-1]
    return out / (m * h) ** deriv_order


def _infer_targets(rec):
    """Target pair (first trial's target, the other) from click positions."""
    if rec.targets is not None:
        return rec.targets
    at_clicks = rec.positions[rec.clicks]
    first = float(np.mean(at_clicks[0::2]))
    if len(at_clicks) > 1:
        other = float(np.mean(at_clicks[1::2]))
    else:
        other = float(rec.positions[0])
    return first, other


def segment_trials(rec, sg_window=SG_WINDOW, sg_degree=SG_DEGREE):
    """Split a recording at its clicks; trial n covers rows (click_{n-1}, click_n].

    Velocity and acceleration come from the Savitzky-Golay filter run once
    over the whole recording, so trials carry no filter edge effects except
    at the recording boundaries.
    """
    if len(rec.clicks) == 0:
        return []
    window = min(sg_window, len(rec) if len(rec) % 2 else len(rec) - 1)
    vel = savitzky_golay(rec.positions, sg_degree, window, 1, rec.h)
    acc = savitzky_golay(rec.positions, sg_degree, window, 2, rec.h)
    first_target, other_target = _infer_targets(rec)
    trials = []
    start = 0
    for i, end in enumerate(rec.clicks):
        stop = int(end) + 1
        if rec.trial_targets is not None:
            target = float(rec.trial_targets[start])
            prev = float(rec.trial_targets[start - 1]) if start > 0 else (
                other_target if rec.targets else float(rec.positions[0]))
        else:
            target, prev = (first_target, other_target) if i % 2 == 0 else (other_target, first_target)
        direction = "right" if target >= prev else "left"
        distance = abs(target - prev)
        if rec.width and distance > 0:
            task = TaskSpec.from_geometry(target, distance, rec.width, direction)
        else:
            task = TaskSpec(target=target, width=rec.width, distance=distance or None,
                            direction=direction)
        if stop - start < 2:
            log.warning("skipping %s trial %d: fewer than 2 samples", rec.name, i + 1)
            start = stop
            continue
        traj = Trajectory(h=rec.h, positions=rec.positions[start:stop].copy(),
                          velocities=vel[start:stop].copy(), accelerations=acc[start:stop].copy(),
                          start_time=float(rec.times[start]))
        trials.append(TrialRecord(index=i, direction=direction, trajectory=traj, task=task,
                                  participant=rec.participant, recording=rec.name,
                                  rows=(start, stop), success=bool(rec.success[i])))
        start = stop
    return trials


def trim_reaction(trial, threshold_fraction=REACTION_THRESHOLD):
    """Drop the frames before the acceleration first reaches a fraction of its peak.

    Rightward trials use the positive peak, leftward trials the negative one.
    Trials that never reach the threshold are returned marked as excluded.
    """
    traj = trial.trajectory
    acc = np.asarray(traj.accelerations, dtype=float)
    if trial.direction == "right":
        peak = acc.max()
        hits = np.flatnonzero(acc >= threshold_fraction * peak) if peak > 0 else np.array([], int)
    else:
        peak = acc.min()
        hits = np.flatnonzero(acc <= threshold_fraction * peak) if peak < 0 else np.array([], int)
    if hits.size == 0:
        return replace(trial, excluded=True, reason="no-movement")
    first = int(hits[0])
    if first == 0:
        return trial
    if len(acc) - first < 2:
        return replace(trial, excluded=True, reason="no-movement")
    cut = Trajectory(h=traj.h, positions=traj.positions[first:], velocities=traj.velocities[first:],
                     accelerations=acc[first:], start_time=traj.start_time + first * traj.h)
    return replace(trial, trajectory=cut, trimmed=trial.trimmed + first)


def exclude_error_trials(trials):
    """Exclude every failed trial and the trial right after it."""
    out = []
    prev_failed = False
    for t in trials:
        if not t.success:
            t = replace(t, excluded=True, reason=t.reason or "failed")
        elif prev_failed:
            t = replace(t, excluded=True, reason=t.reason or "after-failure")
        prev_failed = not t.success
        out.append(t)
    return out


def preprocess(rec, threshold_fraction=REACTION_THRESHOLD, sg_window=SG_WINDOW,
               sg_degree=SG_DEGREE):
    """Segment, exclude error trials and trim reaction time.

    Returns ``(trimmed, untrimmed)`` lists with matching order; excluded
    trials stay in both lists, flagged.
    """
    untrimmed = exclude_error_trials(segment_trials(rec, sg_window, sg_degree))
    trimmed = [t if t.excluded else trim_reaction(t, threshold_fraction) for t in untrimmed]
    untrimmed = [u if not t.excluded else replace(u, excluded=True, reason=t.reason)
                 for u, t in zip(untrimmed, trimmed)]
    return trimmed, untrimmed
