"""Speed-invariant spike-time warping, offline and in streaming batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spike_codec import SpikeTrain


@dataclass(frozen=True)
class WarpConfig:
    reference_speed: float = 120.0
    batch_period: float = 0.1

    def __post_init__(self):
        if not self.reference_speed > 0:
            raise ValueError("reference_speed must be positive")
        if not self.batch_period > 0:
            raise ValueError("batch_period must be positive")


OFFLINE = WarpConfig(120.0)
STREAMING = WarpConfig(100.0, 0.1)


def warp_offline(train: SpikeTrain, speed: float, cfg: WarpConfig = OFFLINE) -> SpikeTrain:
    """Scale spike times and duration by ``speed / reference_speed``."""
    if not speed > 0:
        raise ValueError(f"speed must be positive, got {speed}")
    factor = speed / cfg.reference_speed
    if factor == 1.0:
        return SpikeTrain(train.times.copy(), train.duration)
    return SpikeTrain(train.times * factor, train.duration * factor)


@dataclass
class Segment:
    """One processed batch: where it landed in scaled time and its real length."""

    scaled_start: float
    scaled_length: float
    real_length: float
    velocity: float


@dataclass
class StreamWarpState:
    scaled_clock: float = 0.0
    real_clock: float = 0.0
    last_real: float = 0.0
    last_scaled: float = 0.0
    frozen_batches: int = 0
    segments: list = field(default_factory=list)


def warp_stream_batch(state: StreamWarpState, spikes, velocity: float,
                      cfg: WarpConfig = STREAMING, batch_length: float | None = None):
    """Warp the spikes of one real-time batch and advance ``state`` by one batch.

    Each gap since the previously emitted spike (the scan start for the first
    spike) is multiplied by ``velocity / reference_speed``; a gap that straddles
    a batch boundary takes the factor of the batch holding its later spike.
    ``batch_length`` overrides ``cfg.batch_period`` for a final partial batch.
    Returns the scaled spike times of this batch.
    """
    if velocity < 0:
        raise ValueError("velocity must be non-negative")
    length = cfg.batch_period if batch_length is None else float(batch_length)
    spikes = np.asarray(spikes, dtype=float)
    start, end = state.real_clock, state.real_clock + length
    if spikes.size:
        if np.any(np.diff(spikes) <= 0) or spikes[0] <= state.last_real and state.last_real > 0:
            raise ValueError("spikes must be strictly increasing and after previous batch")
        if spikes[0] < start - 1e-12 or spikes[-1] > end + 1e-9:
            raise ValueError(f"spikes outside batch [{start}, {end}]")
    factor = velocity / cfg.reference_speed
    out = np.empty(spikes.size)
    last_real, last_scaled = state.last_real, state.last_scaled
    for i, t in enumerate(spikes):
        last_scaled = last_scaled + (t - last_real) * factor
        last_real = t
        out[i] = last_scaled
    state.last_real, state.last_scaled = last_real, last_scaled
    state.segments.append(Segment(state.scaled_clock, length * factor, length, velocity))
    state.scaled_clock += length * factor
    state.real_clock = end
    if factor == 0.0:
        state.frozen_batches += 1
    return out
