"""Noise-free synthetic recordings generated by the models themselves.

A fitted model starts from the filtered velocity and acceleration at a
trial's first sample, which depend on the recording itself.  The generator
therefore iterates: simulate every trial from the current start estimates,
filter the resulting recording, re-read the start values, until they stop
changing.  Fitting the output with the generating parameters then reproduces
the positions to rounding error.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .data import REACTION_THRESHOLD, SG_DEGREE, SG_WINDOW, savitzky_golay
from .fitting import model_positions


def _trim_offset(acc, direction, threshold):
    if direction == "right":
        hits = np.flatnonzero(acc >= threshold * acc.max())
    else:
        hits = np.flatnonzero(acc <= threshold * acc.min())
    return int(hits[0]) if hits.size else 0


def generate_recording(model, params, targets=(0.15, -0.15), samples=300, h=0.002,
                       success=None, tol=1e-13, max_rounds=300, threshold=REACTION_THRESHOLD):
    """Reciprocal recording whose trial ``i`` is ``model`` run with ``params[i]``.

    Trial 1 starts at rest on ``targets[1]`` and moves to ``targets[0]``;
    later trials start where the previous one ended.  When the reaction-time
    trimming would cut a trial's first frames, the model segment is restarted
    at the first kept frame, so trimmed trials stay exactly reproducible.
    Returns a dict with ``times``, ``positions``, ``clicks`` (0-based rows),
    ``success``, ``targets`` and the per-trial model start ``offsets``.
    """
    n_trials = len(params)
    samples = [samples] * n_trials if np.isscalar(samples) else list(samples)
    bounds = np.cumsum([0] + samples)
    total = int(bounds[-1])
    directions = ["right" if targets[i % 2] >= targets[(i + 1) % 2] else "left"
                  for i in range(n_trials)]
    offsets = np.zeros(n_trials, dtype=int)
    starts_v = np.zeros(n_trials)
    starts_a = np.zeros(n_trials)
    positions = np.full(total, float(targets[1]))

    def simulate():
        p_prev = targets[1]
        for i, lam in enumerate(params):
            row = bounds[i] + offsets[i]
            p_start = positions[row] if offsets[i] else p_prev
            seg = model_positions(model, lam, samples[i] - offsets[i], h, p_start,
                                  starts_v[i], starts_a[i], targets[i % 2])
            positions[row:bounds[i + 1]] = seg
            p_prev = seg[-1]

    for _ in range(max_rounds):
        simulate()
        vel = savitzky_golay(positions, SG_DEGREE, SG_WINDOW, 1, h)
        acc = savitzky_golay(positions, SG_DEGREE, SG_WINDOW, 2, h)
        new_off = np.array([_trim_offset(acc[bounds[i]:bounds[i + 1]], directions[i], threshold)
                            for i in range(n_trials)])
        rows = bounds[:-1] + new_off
        new_v, new_a = vel[rows], acc[rows]
        change = max(np.max(np.abs(new_v - starts_v)), np.max(np.abs(new_a - starts_a)) * h)
        moved = np.any(new_off != offsets)
        offsets, starts_v, starts_a = new_off, new_v, new_a
        if change < tol and not moved:
            break
    simulate()
    return {
        "times": h * np.arange(total),
        "positions": positions.copy(),
        "clicks": bounds[1:] - 1,
        "success": np.ones(n_trials, bool) if success is None else np.asarray(success, bool),
        "targets": tuple(targets),
        "offsets": offsets,
    }


def write_recording(path, rec, participant="P1", width=None):
    """Write a generated recording in the canonical CSV format plus JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clicks = {int(c): bool(s) for c, s in zip(rec["clicks"], rec["success"])}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time_s", "pos_m", "click", "success"])
        for i, (t, p) in enumerate(zip(rec["times"], rec["positions"])):
            if i in clicks:
                writer.writerow([repr(float(t)), repr(float(p)), 1, int(clicks[i])])
            else:
                writer.writerow([repr(float(t)), repr(float(p)), 0, ""])
    meta = {"participant": participant, "targets": list(rec["targets"])}
    if width is not None:
        meta["width"] = width
    with open(path.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
