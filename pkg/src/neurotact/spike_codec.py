"""Izhikevich SA/RA spike encoding of analog taxel signals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import signal

SAMPLE_RATE = 1000.0
# Base Euler substeps per 1 ms sample; drives of 70 and 160 and above use 4x
# and 10x as many. This keeps spike counts within one spike/s of a 0.01 ms
# reference integration up to drives of several hundred.
SUBSTEPS = 10
V_PEAK = 30.0
RA_CUTOFF_HZ = 20.0
ROW_BLOCK = 16  # neurons integrated together per kernel call


@dataclass(frozen=True)
class IzhikevichParams:
    a: float = 0.02
    b: float = 0.2
    c: float = -65.0
    d: float = 6.0
    k: float = 1.0


# Tonic spiking preset with the SA and RA input gains.
SA_PARAMS = IzhikevichParams(k=100.0)
RA_PARAMS = IzhikevichParams(k=3.0)


@dataclass
class NeuronState:
    v: float = -65.0
    u: float = -13.0

    @classmethod
    def resting(cls, params: IzhikevichParams) -> "NeuronState":
        return cls(v=-65.0, u=params.b * -65.0)


@dataclass
class SpikeTrain:
    """Ordered spike times (s) over a trial of known duration (s)."""

    times: np.ndarray
    duration: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1:
            raise ValueError("spike times must be one-dimensional")
        self.duration = float(self.duration)
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.times.size:
            if self.times[0] < 0:
                raise ValueError("spike times must be non-negative")
            if self.times[-1] > self.duration + 1e-9:
                raise ValueError(
                    f"spike at {self.times[-1]} s after end of trial ({self.duration} s)"
                )

    def __len__(self):
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, SpikeTrain):
            return NotImplemented
        return self.duration == other.duration and np.array_equal(self.times, other.times)

    @property
    def is_strictly_increasing(self) -> bool:
        return bool(np.all(np.diff(self.times) > 0))


@dataclass
class IntegrationResult:
    v: np.ndarray  # membrane voltage at the end of each sample
    train: SpikeTrain
    pre_reset_v: np.ndarray  # voltage at each threshold crossing, before reset


@njit(cache=True, inline="always")
def _n_substeps(drive, base):
    # Large drives fire fast, where coarse Euler steps lose spikes.
    if drive < 70.0:
        return base
    if drive < 160.0:
        return 4 * base
    return 10 * base


@njit(cache=True)
def _izh_kernel(current, a, b, c, d, v0, u0, substeps, fs, t0, record):
    n = current.shape[0]
    v = v0
    u = u0
    cap = 64
    times = np.empty(cap)
    peaks = np.empty(cap)
    vtrace = np.empty(n if record else 0)
    count = 0
    for i in range(n):
        I = current[i]
        ns = _n_substeps(I, substeps)
        h = 1000.0 / fs / ns  # ms per substep
        for j in range(ns):
            dv = 0.04 * v * v + 5.0 * v + 140.0 - u + I
            du = a * (b * v - u)
            v += h * dv
            u += h * du
            if v >= 30.0:
                if count == cap:
                    cap *= 2
                    nt = np.empty(cap)
                    nt[:count] = times[:count]
                    times = nt
                    np_ = np.empty(cap)
                    np_[:count] = peaks[:count]
                    peaks = np_
                times[count] = t0 + (i + (j + 1.0) / ns) / fs
                peaks[count] = v
                count += 1
                v = c
                u += d
        if record:
            vtrace[i] = v
    return times[:count], peaks[:count], vtrace, v, u


@njit(cache=True)
def _izh_rows(current, a, b, c, d, v, u, substeps, fs, t0):
    # current is [samples, neurons]. All neurons advance together so their
    # independent updates overlap in the CPU; each keeps its own step count.
    n, m = current.shape
    cap = 256
    times = np.empty(cap)
    rows = np.empty(cap, dtype=np.int64)
    ns = np.empty(m, dtype=np.int64)
    count = 0
    h0 = 1000.0 / fs / substeps
    for i in range(n):
        top = substeps
        for r in range(m):
            ns[r] = _n_substeps(current[i, r], substeps)
            top = max(top, ns[r])
        for j in range(top):
            fired = False
            if top == substeps:
                # common case: every neuron on the base step, no branches
                for r in range(m):
                    vr = v[r]
                    ur = u[r]
                    vn = vr + h0 * (0.04 * vr * vr + 5.0 * vr + 140.0 - ur + current[i, r])
                    u[r] = ur + h0 * (a * (b * vr - ur))
                    v[r] = vn
                    fired |= vn >= 30.0
            else:
                for r in range(m):
                    if j < ns[r]:
                        vr = v[r]
                        ur = u[r]
                        h = 1000.0 / fs / ns[r]
                        vn = vr + h * (0.04 * vr * vr + 5.0 * vr + 140.0 - ur + current[i, r])
                        u[r] = ur + h * (a * (b * vr - ur))
                        v[r] = vn
                        fired |= vn >= 30.0
            if fired:
                for r in range(m):
                    if v[r] >= 30.0 and j < ns[r]:
                        if count == cap:
                            cap *= 2
                            nt = np.empty(cap)
                            nt[:count] = times[:count]
                            times = nt
                            nr = np.empty(cap, dtype=np.int64)
                            nr[:count] = rows[:count]
                            rows = nr
                        times[count] = t0 + (i + (j + 1.0) / ns[r]) / fs
                        rows[count] = r
                        count += 1
                        v[r] = c
                        u[r] += d
    return times[:count], rows[:count]


def _check_finite(current):
    bad = np.flatnonzero(~np.isfinite(current))
    if bad.size:
        raise ValueError(f"non-finite input current at sample index {int(bad[0])}")


def integrate(params: IzhikevichParams, current, fs: float = SAMPLE_RATE,
              state: NeuronState | None = None, substeps: int = SUBSTEPS,
              t0: float = 0.0) -> IntegrationResult:
    """Integrate the model for a sampled input current.

    The effective drive is ``params.k * current``. Each sample is held constant
    over its period and integrated with ``substeps`` forward Euler steps (more
    for large drives, see ``SUBSTEPS``); a spike
    is recorded at the end of the substep where ``v >= 30`` and the state is
    reset (``v = c``, ``u += d``). ``state`` is updated in place when given, so
    consecutive blocks of one stream can be integrated piecewise.
    """
    current = np.ascontiguousarray(current, dtype=float)
    if current.ndim != 1:
        raise ValueError("current must be one-dimensional")
    _check_finite(current)
    if state is None:
        state = NeuronState.resting(params)
    times, peaks, vtrace, v, u = _izh_kernel(
        params.k * current, params.a, params.b, params.c, params.d,
        float(state.v), float(state.u), int(substeps), float(fs), float(t0), True,
    )
    state.v, state.u = v, u
    duration = current.size / fs
    return IntegrationResult(vtrace, SpikeTrain(times, t0 + duration), peaks)


def integrate_rows(params: IzhikevichParams, currents, fs: float = SAMPLE_RATE,
                   states=None, substeps: int = SUBSTEPS, t0: float = 0.0) -> list[SpikeTrain]:
    """Integrate one independent neuron per row of ``currents``; same scheme as :func:`integrate`.

    ``states`` (a list of :class:`NeuronState`, one per row) is updated in place.
    """
    currents = np.ascontiguousarray(np.atleast_2d(currents), dtype=float)
    _check_finite(currents.ravel())
    m, n = currents.shape
    if states is None:
        states = [NeuronState.resting(params) for _ in range(m)]
    if len(states) != m:
        raise ValueError(f"expected {m} neuron states, got {len(states)}")
    v = np.array([s.v for s in states], dtype=float)
    u = np.array([s.u for s in states], dtype=float)
    parts_t, parts_r = [], []
    for lo in range(0, m, ROW_BLOCK):
        hi = min(lo + ROW_BLOCK, m)
        vb, ub = v[lo:hi].copy(), u[lo:hi].copy()
        t, r = _izh_rows(np.ascontiguousarray(params.k * currents[lo:hi].T), params.a,
                         params.b, params.c, params.d, vb, ub, int(substeps), float(fs),
                         float(t0))
        v[lo:hi], u[lo:hi] = vb, ub
        parts_t.append(t)
        parts_r.append(r + lo)
    times = np.concatenate(parts_t) if parts_t else np.zeros(0)
    rows = np.concatenate(parts_r) if parts_r else np.zeros(0, dtype=np.int64)
    for k, st in enumerate(states):
        st.v, st.u = float(v[k]), float(u[k])
    order = np.argsort(rows, kind="stable")
    bounds = np.searchsorted(rows[order], np.arange(m + 1))
    end = t0 + n / fs
    return [SpikeTrain(times[order[bounds[k]:bounds[k + 1]]], end) for k in range(m)]


def spike_counts(params: IzhikevichParams, currents, fs: float = SAMPLE_RATE,
                 substeps: int = SUBSTEPS) -> np.ndarray:
    """Spike counts for each row of a 2-D array of input currents (fresh neurons)."""
    return np.array([len(t) for t in integrate_rows(params, currents, fs, substeps=substeps)])


def spike_rate(train: SpikeTrain) -> float:
    if train.duration <= 0:
        raise ValueError("spike rate undefined for zero-duration train")
    return len(train) / train.duration


def encode_sa(channel, coeff: float = 1.0, params: IzhikevichParams = SA_PARAMS,
              fs: float = SAMPLE_RATE) -> SpikeTrain:
    if not coeff > 0:
        raise ValueError(f"force scaling coefficient must be positive, got {coeff}")
    channel = np.asarray(channel, dtype=float)
    return integrate(params, coeff * channel, fs).train


_LOWPASS_CACHE: dict = {}


def lowpass(channel, cutoff: float = RA_CUTOFF_HZ, fs: float = SAMPLE_RATE) -> np.ndarray:
    """Causal 2nd-order Butterworth lowpass, started at steady state on the first sample."""
    key = (cutoff, fs)
    if key not in _LOWPASS_CACHE:
        b, a = signal.butter(2, cutoff, fs=fs)
        _LOWPASS_CACHE[key] = (b, a, signal.lfilter_zi(b, a))
    b, a, zi = _LOWPASS_CACHE[key]
    channel = np.asarray(channel, dtype=float)
    if channel.size == 0:
        return channel.copy()
    out, _ = signal.lfilter(b, a, channel, zi=zi * channel[0])
    return out


def ra_current(channel, fs: float = SAMPLE_RATE, rectify: bool = False) -> np.ndarray:
    """Lowpass-filtered first difference of the channel, in normalized units per second."""
    smoothed = lowpass(channel, fs=fs)
    deriv = np.zeros_like(smoothed)
    deriv[1:] = np.diff(smoothed) * fs
    if rectify:
        np.abs(deriv, out=deriv)
    return deriv


def encode_ra(channel, params: IzhikevichParams = RA_PARAMS, fs: float = SAMPLE_RATE,
              rectify: bool = False) -> SpikeTrain:
    return integrate(params, ra_current(channel, fs, rectify), fs).train


def encode_trial(samples, coeffs=None, fs: float = SAMPLE_RATE,
                 rectify: bool = False) -> list[SpikeTrain]:
    """Encode an ``[n_samples x n_taxels]`` trace into SA trains then RA trains.

    ``samples`` may also be a :class:`~neurotact.drum_sim.SensorTrace`.
    """
    samples = np.asarray(getattr(samples, "samples", samples), dtype=float)
    n_taxels = samples.shape[1]
    if coeffs is None:
        coeffs = np.ones(n_taxels)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (n_taxels,):
        raise ValueError(
            f"expected {n_taxels} force coefficients, got {coeffs.size}")
    if np.any(~(coeffs > 0)):
        raise ValueError("force scaling coefficients must be positive")
    sa = integrate_rows(SA_PARAMS, (samples * coeffs).T, fs)
    ra = integrate_rows(RA_PARAMS, np.stack([ra_current(samples[:, i], fs, rectify)
                                             for i in range(n_taxels)]), fs)
    return sa + ra


def format_train(train: SpikeTrain) -> str:
    """One-line text form: duration (s) then spike times in ms."""
    parts = [repr(train.duration)]
    parts.extend(f"{t * 1000.0:.4f}" for t in train.times)
    return " ".join(parts)


def parse_train(line: str) -> SpikeTrain:
    fields = line.split()
    if not fields:
        raise ValueError("empty spike train line")
    duration = float(fields[0])
    times = np.array([float(x) for x in fields[1:]]) / 1000.0
    return SpikeTrain(times, duration)


def write_trains(path, trains) -> None:
    with open(path, "w") as fh:
        for tr in trains:
            fh.write(format_train(tr) + "\n")


def read_trains(path) -> list[SpikeTrain]:
    with open(path) as fh:
        return [parse_train(line) for line in fh if line.strip()]


def isi_cv(train: SpikeTrain, skip: int = 1) -> float:
    isi = np.diff(train.times)[skip:]
    if isi.size < 2:
        return math.nan
    return float(isi.std() / isi.mean())
