"""Windowed spike features and labeled, mean-centered feature matrices.

Feature layout is encoding-major, then taxel, then window: all SA windows of
taxel 1, SA taxel 2, ..., then RA taxel 1, ... .
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .spike_codec import SpikeTrain

WINDOW = 0.1
MODES = {"speed_scaled": (36, 20), "unscaled": (36, 60), "realtime": (9, 20)}


def _n_windows(duration: float, window: float) -> int:
    return max(int(math.ceil(duration / window - 1e-9)), 0)


def window_counts(train: SpikeTrain, window: float = WINDOW, n_windows: int | None = None) -> np.ndarray:
    if not window > 0:
        raise ValueError("window must be positive")
    if n_windows is None:
        n_windows = _n_windows(train.duration, window)
    if n_windows == 0:
        return np.zeros(0)
    idx = np.floor(train.times / window + 1e-9).astype(np.int64)
    # a spike exactly at the trial end belongs to the last real window
    last = max(_n_windows(train.duration, window) - 1, 0)
    idx = np.minimum(idx, last)
    idx = idx[idx < n_windows]
    return np.bincount(idx, minlength=n_windows).astype(float)


def windowed_sr(train: SpikeTrain, window: float = WINDOW, n_windows: int | None = None,
                norm: float = 1.0) -> np.ndarray:
    """Per-window spike rate (spikes/s) times ``norm``."""
    return window_counts(train, window, n_windows) / window * norm


def windowed_sc(train: SpikeTrain, window: float = WINDOW, n_windows: int | None = None) -> np.ndarray:
    return window_counts(train, window, n_windows)


def last_or_pad(values: np.ndarray, n: int = 20) -> np.ndarray:
    """Keep the last ``n`` values, or zero-pad at the end up to ``n``."""
    values = np.asarray(values, dtype=float)
    if values.size >= n:
        return values[values.size - n:]
    return np.concatenate([values, np.zeros(n - values.size)])


@dataclass
class FeatureVector:
    values: np.ndarray
    mode: str

    def __len__(self):
        return int(self.values.size)


def build_feature_vector(trains, mode: str, speed: float = 120.0,
                         reference_speed: float = 120.0, window: float = WINDOW,
                         window_real_durations=None) -> FeatureVector:
    """Assemble one trial's feature vector.

    ``speed_scaled`` expects warped trains (SA then RA, 2 s long) and divides
    SA rates by the warp factor's inverse (``speed / reference_speed``).
    ``unscaled`` uses 60 windows, zero past the trial end. ``realtime`` takes 9
    SA trains; with ``window_real_durations`` each scaled window's count is
    divided by the real time it spans, otherwise by ``window``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    n_trains, n_win = MODES[mode]
    trains = list(trains)
    if len(trains) != n_trains:
        raise ValueError(f"{mode} mode needs {n_trains} spike trains, got {len(trains)}")
    parts = []
    if mode == "realtime":
        for tr in trains:
            counts = window_counts(tr, window)
            if window_real_durations is not None:
                real = np.asarray(window_real_durations, dtype=float)[:counts.size]
                real = np.concatenate([real, np.zeros(counts.size - real.size)])
                rates = np.divide(counts, real, out=np.zeros_like(counts), where=real > 1e-12)
            else:
                rates = counts / window
            parts.append(last_or_pad(rates, n_win))
        return FeatureVector(np.concatenate(parts), mode)
    half = n_trains // 2
    norm = speed / reference_speed if mode == "speed_scaled" else 1.0
    for tr in trains[:half]:
        parts.append(windowed_sr(tr, window, n_win, norm))
    for tr in trains[half:]:
        parts.append(windowed_sc(tr, window, n_win))
    return FeatureVector(np.concatenate(parts), mode)


def feature_names(mode: str) -> list[str]:
    n_trains, n_win = MODES[mode]
    names = []
    for t in range(n_trains):
        enc = "SA" if mode == "realtime" or t < n_trains // 2 else "RA"
        taxel = t % (n_trains if mode == "realtime" else n_trains // 2) + 1
        names.extend(f"{enc}{taxel:02d}_w{w:02d}" for w in range(n_win))
    return names


def window_real_durations(segments, n_windows: int = 20, window: float = WINDOW) -> np.ndarray:
    """Real time (s) mapped into each scaled-time window by a list of warp segments.

    A batch of real length L warped by factor f covers scaled time
    ``[s, s + f*L)``; each scaled second of it stands for ``1/f`` real seconds.
    """
    out = np.zeros(n_windows)
    for seg in segments:
        if seg.scaled_length <= 0:
            continue
        a, b = seg.scaled_start, seg.scaled_start + seg.scaled_length
        ratio = seg.real_length / seg.scaled_length
        w0 = int(math.floor(a / window + 1e-9))
        w1 = min(int(math.ceil(b / window - 1e-9)), n_windows)
        for w in range(max(w0, 0), w1):
            lo, hi = max(a, w * window), min(b, (w + 1) * window)
            if hi > lo:
                out[w] += (hi - lo) * ratio
    return out


@dataclass
class FeatureMatrix:
    values: np.ndarray
    labels: pd.DataFrame
    columns: list = field(default_factory=list)
    mean: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.labels) != self.values.shape[0]:
            raise ValueError("label count must equal row count")

    def __len__(self):
        return self.values.shape[0]

    def subset(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(self.values[rows], self.labels.iloc[rows].reset_index(drop=True),
                             self.columns, self.mean)

    def to_csv(self, path) -> None:
        feats = pd.DataFrame(self.values, columns=self.columns or None)
        if not self.columns:
            feats.columns = [f"f{i}" for i in range(self.values.shape[1])]
        pd.concat([self.labels.reset_index(drop=True), feats], axis=1).to_csv(
            path, index=False, float_format="%.10g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path, label_columns=("texture", "group", "speed", "force", "trial")):
        df = pd.read_csv(path, comment="#")
        lab = [c for c in df.columns if c in label_columns]
        feats = df.drop(columns=lab)
        return cls(feats.to_numpy(float), df[lab], list(feats.columns))


def assemble_and_center(vectors, labels, fit_mean=True, columns=None) -> FeatureMatrix:
    """Stack vectors into a matrix and subtract a column mean.

    ``fit_mean=True`` computes and stores the mean of these rows; an array
    subtracts that supplied mean instead (session recalibration); ``False``
    leaves the matrix uncentered.
    """
    rows = [np.asarray(getattr(v, "values", v), dtype=float) for v in vectors]
    lengths = {r.size for r in rows}
    if len(lengths) > 1:
        raise ValueError(f"feature vectors have mixed lengths {sorted(lengths)}")
    values = np.vstack(rows) if rows else np.zeros((0, 0))
    if not isinstance(labels, pd.DataFrame):
        labels = pd.DataFrame({"texture": list(labels)})
    if isinstance(fit_mean, (bool, np.bool_)):
        mean = values.mean(axis=0) if fit_mean else None
    else:
        mean = np.asarray(fit_mean, dtype=float)
        if mean.shape != (values.shape[1],):
            raise ValueError("supplied mean has wrong length")
    if mean is not None:
        values = values - mean
    return FeatureMatrix(values, labels.reset_index(drop=True), list(columns or []), mean)
