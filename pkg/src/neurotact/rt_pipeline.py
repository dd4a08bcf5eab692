"""Simulated human-operated scans and the streaming speed-invariant classifier.

A scan is a stream of 9-channel tactile frames at 1 kHz interleaved with
velocity updates every 100 ms and closed by an end-of-scan marker once the
finger has travelled 200 mm. Streams are processed causally: SA encoding with
carried neuron state, batch-wise spike-time warping and windowed spike rates.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .classify import (_Accumulator, _fit_predict_sweep, kfold_eval, lda_fit, lda_predict,
                       pca_fit, pca_project, LdaModel, PcaBasis)
from .drum_sim import (ADC_LEVELS, TEXTURES, SimConfig, pressure_field, force_gain,
                       REFERENCE_FORCE)
from .features import WINDOW, FeatureVector, build_feature_vector, window_real_durations
from .spike_codec import SA_PARAMS, SAMPLE_RATE, NeuronState, SpikeTrain, integrate_rows
from .speed_warp import STREAMING, StreamWarpState, WarpConfig, warp_stream_batch

RT_TEXTURES = ("A", "B", "D", "L", "N")
PROFILES = ("slow", "medium", "fast", "slow_to_fast", "fast_to_slow")
TRAINED_PROFILES = ("slow", "medium")
SCAN_LENGTH = 200.0      # mm
PLATE_START = 50.0       # mm, the scan covers the middle of a 300 mm plate
N_CHANNELS = 9
LIVE_PCS = 25
NOMINAL = {"slow": 50.0, "medium": 100.0, "fast": 150.0}

FRAME, VELOCITY, END = 1, 2, 3
STREAM_MAGIC = b"SS"
STREAM_VERSION = 1


class StreamError(ValueError):
    pass


@dataclass(frozen=True)
class VelocityProfile:
    """Intended velocity as a function of position along the scan.

    ``jitter`` bounds the relative deviation from the nominal curve; half of it
    is a per-scan level offset and half a slow positional wobble.
    """

    kind: str
    seed: int = 0
    jitter: float = 0.1
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PROFILES:
            raise ValueError(f"unknown velocity profile {self.kind!r}")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def nominal(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        frac = np.clip(x / SCAN_LENGTH, 0.0, 1.0)
        if self.kind in NOMINAL:
            v = np.full_like(x, NOMINAL[self.kind])
        elif self.kind == "slow_to_fast":
            v = 50.0 + 100.0 * frac
        else:
            v = 150.0 - 100.0 * frac
        return self.scale * v

    def velocity(self, x) -> np.ndarray:
        """Realized velocity (mm/s) at positions ``x`` (mm)."""
        base = self.nominal(x)
        if self.jitter == 0:
            return base
        rng = np.random.default_rng([self.seed, 7])
        level = rng.uniform(-1.0, 1.0)
        lam = rng.uniform(60.0, 200.0, 2)
        ph = rng.uniform(0.0, 2.0 * np.pi, 2)
        x = np.asarray(x, dtype=float)
        wobble = 0.5 * (np.sin(2 * np.pi * x / lam[0] + ph[0])
                        + np.sin(2 * np.pi * x / lam[1] + ph[1]))
        return base * (1.0 + self.jitter * (0.5 * level + 0.5 * wobble))


@dataclass(frozen=True)
class SessionParams:
    """Per-taxel sensor drift fixed for one recording session."""

    gains: tuple
    offsets: tuple
    seed: int = 0

    @classmethod
    def draw(cls, seed: int, gain_range: float = 0.10, offset_range: float = 0.02):
        rng = np.random.default_rng([seed, 11])
        return cls(tuple(1.0 + gain_range * rng.uniform(-1, 1, N_CHANNELS)),
                   tuple(offset_range * rng.uniform(-1, 1, N_CHANNELS)), seed)

    @classmethod
    def neutral(cls):
        return cls((1.0,) * N_CHANNELS, (0.0,) * N_CHANNELS)

    def apply(self, analog: np.ndarray) -> np.ndarray:
        return analog * np.asarray(self.gains) + np.asarray(self.offsets)


@dataclass
class ScanStream:
    """Recorded scan: raw 10-bit frames, velocity updates and the end marker.

    ``frames`` is [n, 9]; frame i is stamped ``i / 1000`` s. ``velocities[k]``
    is the tracker's average velocity over batch k, reported at
    ``(k + 1) * 0.1`` s; the final partial batch's velocity travels with the
    end marker at ``end_time``.
    """

    frames: np.ndarray
    velocities: np.ndarray
    end_time: float
    end_velocity: float
    texture: str = ""
    profile: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.frames.shape[0] / SAMPLE_RATE

    def events(self):
        """Time-ordered ``(type, timestamp, payload)`` tuples."""
        n = self.frames.shape[0]
        per = int(round(STREAMING.batch_period * SAMPLE_RATE))
        for i in range(n):
            yield FRAME, i / SAMPLE_RATE, self.frames[i]
            if (i + 1) % per == 0 and (i + 1) // per <= self.velocities.size:
                k = (i + 1) // per
                yield VELOCITY, k * STREAMING.batch_period, float(self.velocities[k - 1])
        yield END, self.end_time, float(self.end_velocity)

    def to_bytes(self) -> bytes:
        meta = json.dumps({"texture": self.texture, "profile": self.profile,
                           "meta": self.meta}).encode()
        out = [STREAM_MAGIC, struct.pack("<HI", STREAM_VERSION, len(meta)), meta]
        for kind, t, payload in self.events():
            if kind == FRAME:
                out.append(struct.pack("<Bd9H", FRAME, t, *payload))
            else:
                out.append(struct.pack("<Bdd", kind, t, payload))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ScanStream":
        if data[:2] != STREAM_MAGIC:
            raise StreamError("not a scan stream log")
        version, mlen = struct.unpack_from("<HI", data, 2)
        if version != STREAM_VERSION:
            raise StreamError(f"unsupported stream version {version}")
        pos = 8
        try:
            head = json.loads(data[pos:pos + mlen])
        except ValueError as exc:
            raise StreamError(f"corrupt stream header: {exc}") from exc
        pos += mlen
        frames, vels = [], []
        end = None
        fsize, vsize = struct.calcsize("<Bd9H"), struct.calcsize("<Bdd")
        while pos < len(data):
            kind = data[pos]
            if kind == FRAME:
                if pos + fsize > len(data):
                    raise StreamError("truncated frame event")
                frames.append(struct.unpack_from("<Bd9H", data, pos)[2:])
                pos += fsize
            elif kind in (VELOCITY, END):
                if pos + vsize > len(data):
                    raise StreamError("truncated event")
                _, t, value = struct.unpack_from("<Bdd", data, pos)
                pos += vsize
                if kind == VELOCITY:
                    vels.append(value)
                else:
                    end = (t, value)
                    break
            else:
                raise StreamError(f"unknown event type {kind} at byte {pos}")
        if end is None:
            raise StreamError("stream has no end-of-scan marker")
        return cls(np.asarray(frames, dtype=np.uint16).reshape(-1, N_CHANNELS),
                   np.asarray(vels, dtype=float), end[0], end[1],
                   head.get("texture", ""), head.get("profile", ""), head.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ScanStream":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def trajectory(profile: VelocityProfile, fs: float = SAMPLE_RATE, length: float = SCAN_LENGTH,
               step: float = 0.01):
    """Frame positions (mm) and the time (s) the scan reaches ``length``.

    Time as a function of position is the integral of 1/v, evaluated on a
    ``step`` mm grid and inverted at the frame instants.
    """
    grid = np.linspace(0.0, length, int(round(length / step)) + 1)
    v = profile.velocity(grid)
    if np.any(v <= 0):
        raise ValueError("velocity profile must stay positive")
    inv = 1.0 / v
    t = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(grid))])
    end = float(t[-1])
    n = int(math.ceil(end * fs - 1e-6))   # tolerate quadrature round-off
    return np.interp(np.arange(n) / fs, t, grid), end, (t, grid)


def simulate_scan(texture: str, profile: VelocityProfile, session: SessionParams, seed,
                  cfg: SimConfig = SimConfig(), tracker_noise: float = 0.03,
                  force_jitter: float = 0.05, noise: bool = True) -> ScanStream:
    """One operator scan over the middle 200 mm of a texture plate."""
    if texture not in RT_TEXTURES:
        raise ValueError(f"realtime textures are {RT_TEXTURES}, got {texture!r}")
    rng = np.random.default_rng(seed)
    xs, end, (t_grid, x_grid) = trajectory(profile)
    n = xs.size
    start = PLATE_START + cfg.start_jitter * rng.standard_normal()
    force = REFERENCE_FORCE * max(1.0 + force_jitter * rng.standard_normal(), 0.1)
    top = pressure_field(TEXTURES[texture], start + xs, cfg)[:, :N_CHANNELS]
    gain = cfg.taxel_gains()[:N_CHANNELS] * force_gain(force, cfg.taxel_exponents()[:N_CHANNELS])
    analog = session.apply(cfg.baseline + gain * top)
    if noise:
        analog = analog + cfg.noise * rng.standard_normal(analog.shape)
    frames = np.clip(np.rint(analog * (ADC_LEVELS - 1)), 0, ADC_LEVELS - 1).astype(np.uint16)
    # tracker: mean velocity over each 100 ms batch, with multiplicative error
    per = int(round(STREAMING.batch_period * SAMPLE_RATE))
    n_full = n // per
    edges = np.interp(np.arange(n_full + 1) * STREAMING.batch_period, t_grid, x_grid)
    v = np.diff(edges) / STREAMING.batch_period
    err = 1.0 + tracker_noise * rng.uniform(-1.0, 1.0, n_full + 1)
    rest = n - n_full * per
    # average over the motion itself, which stops inside the last frame period
    moving = end - n_full * STREAMING.batch_period
    v_end = (SCAN_LENGTH - edges[-1]) / moving if rest and moving > 0 else 0.0
    return ScanStream(frames, v * err[:n_full], n / SAMPLE_RATE, v_end * err[-1],
                      texture, profile.kind, {"session": session.seed})


@dataclass(frozen=True)
class Normalizer:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def full_scale(cls):
        return cls(np.zeros(N_CHANNELS), np.full(N_CHANNELS, ADC_LEVELS - 1.0))

    @classmethod
    def fit(cls, streams):
        lo = np.min([s.frames.min(axis=0) for s in streams], axis=0).astype(float)
        hi = np.max([s.frames.max(axis=0) for s in streams], axis=0).astype(float)
        return cls(lo, hi)

    def __call__(self, frames) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (np.asarray(frames, dtype=float) - self.lo) / span


@dataclass
class StreamOutput:
    scaled: FeatureVector | None
    unscaled: FeatureVector | None
    real_trains: list
    scaled_trains: list | None


def run_stream_both(stream: ScanStream, cfg: WarpConfig = STREAMING,
                    normalizer: Normalizer | None = None, scaled_length: float = 2.0) -> StreamOutput:
    """Process a stream once and emit both the speed-scaled and unscaled vectors."""
    if stream.end_time is None or not math.isfinite(stream.end_time):
        raise StreamError("stream has no end-of-scan marker")
    norm = normalizer or Normalizer.full_scale()
    per = int(round(cfg.batch_period * SAMPLE_RATE))
    data = norm(stream.frames)
    n = data.shape[0]
    states = [NeuronState.resting(SA_PARAMS) for _ in range(N_CHANNELS)]
    warps = [StreamWarpState() for _ in range(N_CHANNELS)]
    real = [[] for _ in range(N_CHANNELS)]
    scaled = [[] for _ in range(N_CHANNELS)]
    n_batches = math.ceil(n / per)
    for k in range(n_batches):
        lo, hi = k * per, min((k + 1) * per, n)
        trains = integrate_rows(SA_PARAMS, data[lo:hi].T, states=states, t0=lo / SAMPLE_RATE)
        if k < stream.velocities.size:
            vel = float(stream.velocities[k])
        else:
            vel = float(stream.end_velocity)
        for c, tr in enumerate(trains):
            real[c].append(tr.times)
            scaled[c].append(warp_stream_batch(warps[c], tr.times, max(vel, 0.0), cfg,
                                               batch_length=(hi - lo) / SAMPLE_RATE))
    duration = n / SAMPLE_RATE
    real_trains = [SpikeTrain(np.concatenate(r) if r else np.zeros(0), duration) for r in real]
    unscaled = build_feature_vector(real_trains, "realtime")
    clip = []
    for s in scaled:
        t = np.concatenate(s) if s else np.zeros(0)
        clip.append(SpikeTrain(t[t < scaled_length], scaled_length))
    n_win = int(round(scaled_length / WINDOW))
    durations = window_real_durations(warps[0].segments, n_win, WINDOW)
    scaled_vec = build_feature_vector(clip, "realtime", window_real_durations=durations)
    return StreamOutput(scaled_vec, unscaled, real_trains, clip)


def run_stream(stream: ScanStream, cfg: WarpConfig = STREAMING, speed_scaling: bool = True,
               normalizer: Normalizer | None = None) -> FeatureVector:
    """180-long realtime feature vector of one stream."""
    out = run_stream_both(stream, cfg, normalizer)
    return out.scaled if speed_scaling else out.unscaled


# -- sessions and protocols ---------------------------------------------------

@dataclass
class RtSet:
    """Feature vectors of a set of scans from one session."""

    scaled: np.ndarray
    unscaled: np.ndarray
    textures: np.ndarray
    profiles: np.ndarray

    def matrix(self, speed_scaling: bool) -> np.ndarray:
        return self.scaled if speed_scaling else self.unscaled


@dataclass
class RtDataset:
    """One train/test session pair as used by the realtime protocols.

    ``train`` (20 scans per texture) comes from the training session;
    ``calibration`` (10 per texture) and ``test`` (20 per texture) from a later
    session with different sensor drift.
    """

    train: RtSet
    calibration: RtSet
    test: RtSet
    index: int = 0


def rt_seed(master: int, dataset: int, role: int, texture: int, profile: int, trial: int):
    return np.random.SeedSequence([master, 1, dataset, role, texture, profile, trial])


def _collect(master, dataset, role, per_profile, session, normalizer, cfg, sim):
    rows_s, rows_u, tex, prof = [], [], [], []
    for ti, t in enumerate(RT_TEXTURES):
        for pi, p in enumerate(PROFILES):
            for k in range(per_profile):
                seed = rt_seed(master, dataset, role, ti, pi, k)
                profile = VelocityProfile(p, int(seed.generate_state(1)[0]))
                stream = simulate_scan(t, profile, session, seed, sim)
                out = run_stream_both(stream, STREAMING, normalizer)
                rows_s.append(out.scaled.values)
                rows_u.append(out.unscaled.values)
                tex.append(t)
                prof.append(p)
    return RtSet(np.vstack(rows_s), np.vstack(rows_u), np.asarray(tex), np.asarray(prof))


def build_rt_dataset(master: int, index: int, sim: SimConfig = SimConfig()) -> RtDataset:
    train_session = SessionParams.draw(int(np.random.SeedSequence([master, 2, index, 0])
                                           .generate_state(1)[0]))
    test_session = SessionParams.draw(int(np.random.SeedSequence([master, 2, index, 1])
                                          .generate_state(1)[0]))
    # the initial recording (10 per texture) fixes the per-taxel normalization
    init = []
    for ti, t in enumerate(RT_TEXTURES):
        for pi, p in enumerate(PROFILES):
            for k in range(2):
                seed = rt_seed(master, index, 0, ti, pi, k)
                init.append(simulate_scan(t, VelocityProfile(p, int(seed.generate_state(1)[0])),
                                          train_session, seed, sim))
    norm = Normalizer.fit(init)
    train = _collect(master, index, 1, 4, train_session, norm, STREAMING, sim)
    cal = _collect(master, index, 2, 2, test_session, norm, STREAMING, sim)
    test = _collect(master, index, 3, 4, test_session, norm, STREAMING, sim)
    return RtDataset(train, cal, test, index)


def _recenter(test: np.ndarray, train_mean: np.ndarray, session_mean: np.ndarray) -> np.ndarray:
    # the PCA basis subtracts the training mean, so shifting by the difference
    # centers the test rows on their own session mean
    return test - session_mean + train_mean


def _label_index(textures):
    classes = np.asarray(RT_TEXTURES)
    return classes, np.searchsorted(classes, textures)


def _stratified_take(rng, groups, fraction):
    idx = []
    for g in np.unique(groups):
        members = rng.permutation(np.flatnonzero(groups == g))
        idx.extend(members[:int(round(fraction * members.size))].tolist())
    return np.sort(np.asarray(idx, dtype=np.int64))


def _pc_range(pcs, n_train):
    return [p for p in pcs if p <= n_train - 1]


def fig4b_offline(data: list[RtDataset], pcs, speed_scaling: bool, n_repeats=100, seed=0,
                  k: int = 4) -> dict:
    """4-fold cross-validation within each training set."""
    merged = None
    for d in data:
        X = d.train.matrix(speed_scaling)
        res = kfold_eval(X, d.train.textures, _pc_range(pcs, X.shape[0] * (k - 1) // k),
                         k=k, n_repeats=n_repeats, seed=[seed, d.index],
                         dispersion_kind="sem")
        merged = res if merged is None else {p: merged[p].merged(res[p]) for p in merged}
    return merged


def _split_eval(data, pcs, speed_scaling, n_repeats, seed, select_train, test_buckets):
    classes = np.asarray(RT_TEXTURES)
    out = {b: None for b in test_buckets}
    for d in data:
        X = d.train.matrix(speed_scaling)
        _, y = _label_index(d.train.textures)
        rng = np.random.default_rng([seed, d.index])
        session_mean = d.calibration.matrix(speed_scaling).mean(axis=0)
        T = d.test.matrix(speed_scaling)
        _, ty = _label_index(d.test.textures)
        accs = {b: _Accumulator(pcs, classes.size, "sem") for b in test_buckets}
        use = None
        for _ in range(n_repeats):
            tr = select_train(rng, d.train)
            use = _pc_range(pcs, tr.size)
            for a in accs.values():
                a.pcs = use
                a.start_repeat()
            train_mean = X[tr].mean(axis=0)
            Tc = _recenter(T, train_mean, session_mean)
            sets = [(Tc[m], ty[m]) for m in (test_buckets[b](d.test) for b in test_buckets)]
            _fit_predict_sweep(X[tr], y[tr], sets, use, classes.size,
                               [accs[b] for b in test_buckets])
            for a in accs.values():
                a.end_repeat()
        for b in test_buckets:
            res = accs[b].results()
            out[b] = res if out[b] is None else {p: out[b][p].merged(res[p]) for p in use}
    return out


def crosssession_train(rng, s: RtSet) -> np.ndarray:
    """75% of each texture's training scans."""
    return _stratified_take(rng, s.textures, 0.75)


def trained_profiles(s: RtSet) -> np.ndarray:
    return np.isin(s.profiles, TRAINED_PROFILES)


def extrapolation_train(rng, s: RtSet) -> np.ndarray:
    """75% of the slow and medium scans of each texture and profile."""
    keep = np.flatnonzero(trained_profiles(s))
    groups = np.char.add(np.char.add(s.textures[keep], "/"), s.profiles[keep])
    return keep[_stratified_take(rng, groups, 0.75)]


def fig4b_crosssession(data, pcs, speed_scaling, n_repeats=100, seed=0) -> dict:
    """Train on 75% of the training set, test on all 100 scans of the new session."""
    res = _split_eval(data, pcs, speed_scaling, n_repeats, seed, crosssession_train,
                      {"new-session": lambda s: np.ones(s.textures.size, bool)})
    return res["new-session"]


def fig4c_extrapolation(data, pcs, speed_scaling, n_repeats=100, seed=0) -> dict:
    """Train on 75% of the slow and medium scans; test trained and untrained profiles."""
    return _split_eval(data, pcs, speed_scaling, n_repeats, seed, extrapolation_train, {
        "trained-profiles": trained_profiles,
        "untrained-profiles": lambda s: ~trained_profiles(s)})


@dataclass
class LiveModel:
    basis: PcaBasis
    lda: LdaModel
    session_mean: np.ndarray
    n_components: int = LIVE_PCS


def train_live(train: np.ndarray, textures, calibration: np.ndarray,
               n_components: int = LIVE_PCS) -> LiveModel:
    basis = pca_fit(train, n_components)
    lda = lda_fit(pca_project(basis, train), textures)
    return LiveModel(basis, lda, np.asarray(calibration, dtype=float).mean(axis=0), n_components)


def classify_live(model: LiveModel, feature, truth: str | None = None):
    """Predict one scan's texture after centering on the calibrated session mean."""
    x = np.asarray(getattr(feature, "values", feature), dtype=float)
    if x.shape != model.session_mean.shape:
        raise ValueError(f"feature has length {x.size}, model expects {model.session_mean.size}")
    z = pca_project(model.basis, (x - model.session_mean + model.basis.mean)[None, :],
                    model.n_components)
    label = str(lda_predict(model.lda, z)[0])
    return label, (None if truth is None else label == truth)


def s5_demo(data, pcs, speed_scaling) -> dict:
    """Model trained on every training scan, scored on each session's 100 live scans."""
    classes = np.asarray(RT_TEXTURES)
    acc = _Accumulator(_pc_range(pcs, data[0].train.textures.size), classes.size)
    for d in data:
        X = d.train.matrix(speed_scaling)
        _, y = _label_index(d.train.textures)
        T = _recenter(d.test.matrix(speed_scaling), X.mean(axis=0),
                      d.calibration.matrix(speed_scaling).mean(axis=0))
        _, ty = _label_index(d.test.textures)
        acc.start_repeat()
        _fit_predict_sweep(X, y, [(T, ty)], acc.pcs, classes.size, [acc])
        acc.end_repeat()
    return acc.results()


PROTOCOLS = ("fig4b_offline", "fig4b_crosssession", "fig4c_extrapolation", "s5_demo")


def run_protocol(which: str, data: list[RtDataset], pcs, n_repeats: int = 100, seed: int = 0) -> dict:
    """Results for both pipeline variants: ``{"speed": ..., "original": ...}``."""
    if which not in PROTOCOLS:
        raise ValueError(f"unknown realtime protocol {which!r}")
    out = {}
    for name, scaling in (("speed", True), ("original", False)):
        if which == "fig4b_offline":
            out[name] = fig4b_offline(data, pcs, scaling, n_repeats, seed)
        elif which == "fig4b_crosssession":
            out[name] = fig4b_crosssession(data, pcs, scaling, n_repeats, seed)
        elif which == "fig4c_extrapolation":
            out[name] = fig4c_extrapolation(data, pcs, scaling, n_repeats, seed)
        else:
            out[name] = s5_demo(data, pcs, scaling)
    return out



def save_rt_datasets(path, data: list[RtDataset]) -> None:
    arrays = {}
    for d in data:
        for role in ("train", "calibration", "test"):
            st = getattr(d, role)
            for key in ("scaled", "unscaled", "textures", "profiles"):
                arrays[f"{d.index}_{role}_{key}"] = getattr(st, key)
    np.savez_compressed(path, **arrays)


def load_rt_datasets(path) -> list[RtDataset]:
    with np.load(path, allow_pickle=False) as z:
        indices = sorted({int(k.split("_")[0]) for k in z.files})
        out = []
        for i in indices:
            sets = {role: RtSet(*(z[f"{i}_{role}_{key}"] for key in
                                  ("scaled", "unscaled", "textures", "profiles")))
                    for role in ("train", "calibration", "test")}
            out.append(RtDataset(sets["train"], sets["calibration"], sets["test"], i))
    return out
