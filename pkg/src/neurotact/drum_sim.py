"""Synthetic rotating-drum trials for a 3x3x2 taxel array.

Textures are periodic height profiles scanned at a programmed speed and
contact force. Each taxel reading is a baseline plus a force-dependent gain
applied to the local contact pressure, with Gaussian noise and 10-bit
quantization. The bottom layer sees a spatially and temporally smoothed copy
of the top-layer pressure.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d

SAMPLE_RATE = 1000.0
N_TAXELS = 18
GRID = 3
PITCH_MM = 5.0
ADC_LEVELS = 1024
SPEEDS = (40, 60, 80, 100, 120)
FORCES = (250, 500, 1000)
REFERENCE_FORCE = 500

GROUPS = ("smooth", "circular_ridges", "rectangular_ridges", "waves")
# (height_scale, space_scale) in label order within each non-smooth group
VARIANTS = (
    ("base", 1.0, 1.0),
    ("double_height", 2.0, 1.0),
    ("double_space", 1.0, 2.0),
    ("half_height", 0.5, 1.0),
    ("half_space", 1.0, 0.5),
)

TRACE_MAGIC = b"TX"
TRACE_VERSION = 1


class DatasetError(Exception):
    """Raised for missing or corrupt dataset files."""


@dataclass(frozen=True)
class TextureSpec:
    id: str
    group: str
    height_scale: float = 1.0
    space_scale: float = 1.0
    base_height: float = 1.0
    base_spacing: float = 6.0

    @property
    def period(self) -> float:
        return self.base_spacing * self.space_scale

    @property
    def amplitude(self) -> float:
        return self.base_height * self.height_scale


def texture_set(base_height: float = 1.0, base_spacing: float = 6.0) -> list[TextureSpec]:
    """The 16 textures A-P: smooth control, then 5 variants of each ridge group."""
    specs = [TextureSpec("A", "smooth", 1.0, 1.0, base_height, base_spacing)]
    label = ord("B")
    for group in GROUPS[1:]:
        for _, hs, ss in VARIANTS:
            specs.append(TextureSpec(chr(label), group, hs, ss, base_height, base_spacing))
            label += 1
    return specs


TEXTURES = {s.id: s for s in texture_set()}


@dataclass(frozen=True)
class TrialCondition:
    speed: float
    force: float
    scan_length: float = 240.0

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError(f"speed must be positive, got {self.speed}")
        if not self.force > 0:
            raise ValueError(f"force must be positive, got {self.force}")

    @property
    def duration(self) -> float:
        return self.scan_length / self.speed

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * SAMPLE_RATE))


def conditions(scan_length: float = 240.0) -> list[TrialCondition]:
    return [TrialCondition(s, f, scan_length) for s in SPEEDS for f in FORCES]


@dataclass
class SensorTrace:
    samples: np.ndarray
    condition: TrialCondition
    texture: str
    trial_id: int = 0
    sample_rate: float = SAMPLE_RATE

    @property
    def duration(self) -> float:
        return self.samples.shape[0] / self.sample_rate


def texture_profile(spec: TextureSpec, position):
    """Surface height (mm) at scan position(s) in mm."""
    x = np.asarray(position, dtype=float)
    if spec.group == "smooth":
        return np.zeros_like(x)
    s, h = spec.period, spec.amplitude
    phase = np.mod(x, s)
    if spec.group == "waves":
        return h / 2.0 * (1.0 + np.sin(2.0 * np.pi * x / s))
    if spec.group == "rectangular_ridges":
        return np.where(phase < s / 2.0, h, 0.0)
    if spec.group == "circular_ridges":
        r = s / 4.0
        z = 1.0 - ((phase - r) / r) ** 2
        return np.where(phase < s / 2.0, h * np.sqrt(np.clip(z, 0.0, None)), 0.0)
    raise ValueError(f"unknown texture group {spec.group!r}")


def force_gain(force, exponent=0.7, reference: float = REFERENCE_FORCE):
    """Concave, strictly increasing sensor gain versus contact force."""
    return (np.asarray(force, dtype=float) / reference) ** exponent


@dataclass(frozen=True)
class SimConfig:
    baseline: float = 0.05        # fraction of full scale
    contact: float = 0.15         # pressure of flat contact at reference force
    height_gain: float = 0.12     # full-scale fraction per mm of texture height
    force_exponent: float = 0.7
    taxel_variation: float = 0.05
    exponent_spread: float = 0.2  # per-taxel deviation of the force exponent
    force_jitter: float = 0.05    # per-trial relative error of the drum force loop
    noise: float = 0.03
    type2_window_ms: int = 50
    sensor_seed: int = 1234
    start_jitter: float = 1.0     # mm, std of the drum start position per trial
    plate_modulation: float = 0.3  # relative ridge-height variation along each printed plate

    def taxel_gains(self) -> np.ndarray:
        rng = np.random.default_rng(self.sensor_seed)
        return 1.0 + self.taxel_variation * rng.uniform(-1.0, 1.0, N_TAXELS)

    def taxel_exponents(self) -> np.ndarray:
        rng = np.random.default_rng([self.sensor_seed, 1])
        return self.force_exponent + self.exponent_spread * rng.uniform(-1.0, 1.0, N_TAXELS)

    def gain(self, force) -> np.ndarray:
        """Per-taxel force gain: strictly increasing and concave in force."""
        return self.taxel_gains() * force_gain(force, self.taxel_exponents())


def taxel_offsets() -> np.ndarray:
    """Along-scan offset (mm) of each top-layer taxel, row-major 3x3."""
    return np.tile(np.arange(GRID) * PITCH_MM, GRID)


def _type2_pressure(top: np.ndarray, window: int) -> np.ndarray:
    # top: [n, 9] in row-major grid order; box over the 3 along-scan neighbours
    grid = top.reshape(top.shape[0], GRID, GRID)
    padded = np.concatenate([grid[:, :, :1], grid, grid[:, :, -1:]], axis=2)
    spatial = (padded[:, :, :-2] + padded[:, :, 1:-1] + padded[:, :, 2:]) / 3.0
    # edge taxels average only the neighbours that exist
    spatial[:, :, 0] = grid[:, :, :2].mean(axis=2)
    spatial[:, :, -1] = grid[:, :, -2:].mean(axis=2)
    flat = spatial.reshape(top.shape[0], GRID * GRID)
    if window > 1:
        flat = uniform_filter1d(flat, window, axis=0, mode="nearest")
    return flat


def plate_modulation(spec: TextureSpec, position, cfg: SimConfig):
    """Slow, plate-specific multiplicative variation of ridge height.

    A fixed sum of long-wavelength sinusoids per texture plate, standing in for
    print and mounting irregularities; 1 everywhere when disabled.
    """
    x = np.asarray(position, dtype=float)
    if cfg.plate_modulation == 0:
        return np.ones_like(x)
    index = sorted(TEXTURES).index(spec.id) if spec.id in TEXTURES else 0
    rng = np.random.default_rng([cfg.sensor_seed, 99, index])
    wavelengths = rng.uniform(15.0, 80.0, 4)
    phases = rng.uniform(0.0, 2.0 * np.pi, 4)
    weights = rng.uniform(0.5, 1.0, 4)
    wave = sum(w * np.sin(2.0 * np.pi * x / lam + ph)
               for w, lam, ph in zip(weights, wavelengths, phases))
    return 1.0 + cfg.plate_modulation * wave / weights.sum()


def pressure_field(spec: TextureSpec, positions: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Noise-free contact pressure for 18 taxels along a trajectory of positions (mm)."""
    pos = np.asarray(positions, dtype=float)[:, None] + taxel_offsets()[None, :]
    height = texture_profile(spec, pos) * plate_modulation(spec, pos, cfg)
    top = cfg.contact + cfg.height_gain * height
    bottom = _type2_pressure(top, cfg.type2_window_ms)
    return np.concatenate([top, bottom], axis=1)


def simulate_analog(spec: TextureSpec, cond: TrialCondition, seed, cfg: SimConfig = SimConfig(),
                    noise: bool = True) -> np.ndarray:
    """Pre-quantization readings in full-scale units, shape [n_samples, 18]."""
    rng = np.random.default_rng(seed)
    phase = cfg.start_jitter * rng.standard_normal()
    jitter = 1.0 + cfg.force_jitter * rng.standard_normal()
    eps = rng.standard_normal((cond.n_samples, N_TAXELS))
    t = np.arange(cond.n_samples) / SAMPLE_RATE
    pressure = pressure_field(spec, phase + cond.speed * t, cfg)
    gain = cfg.gain(cond.force * max(jitter, 0.1))
    analog = cfg.baseline + gain[None, :] * pressure
    if noise:
        analog = analog + cfg.noise * eps
    return analog


def quantize(analog: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(analog * (ADC_LEVELS - 1)), 0, ADC_LEVELS - 1).astype(np.uint16)


def simulate_trial(spec: TextureSpec, cond: TrialCondition, seed, cfg: SimConfig = SimConfig(),
                   trial_id: int = 0) -> SensorTrace:
    """Raw 10-bit trial, before dataset-level normalization."""
    raw = quantize(simulate_analog(spec, cond, seed, cfg))
    return SensorTrace(raw, cond, spec.id, trial_id)


# -- persistence ------------------------------------------------------------

def write_trace(path, raw: np.ndarray) -> None:
    raw = np.ascontiguousarray(raw, dtype="<u2")
    if raw.ndim != 2 or raw.shape[1] != N_TAXELS:
        raise ValueError(f"trace must be [n, {N_TAXELS}]")
    header = TRACE_MAGIC + struct.pack("<HI", TRACE_VERSION, raw.shape[0])
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(raw.tobytes())
    except OSError as exc:
        raise DatasetError(f"cannot write trace file {path}: {exc}") from exc


def read_trace(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read trace file {path}: {exc}") from exc
    if len(data) < 8 or data[:2] != TRACE_MAGIC:
        raise DatasetError(f"{path}: not a trace file")
    version, n = struct.unpack("<HI", data[2:8])
    if version != TRACE_VERSION:
        raise DatasetError(f"{path}: unsupported trace version {version}")
    body = data[8:]
    if len(body) != n * N_TAXELS * 2:
        raise DatasetError(f"{path}: truncated trace ({len(body)} bytes for {n} samples)")
    return np.frombuffer(body, dtype="<u2").reshape(n, N_TAXELS)


def trial_seed(master_seed: int, tex_index: int, cond_index: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, 0, tex_index, cond_index, trial])


def trace_name(texture: str, cond: TrialCondition, trial: int) -> str:
    return f"{texture}_{int(cond.speed)}_{int(cond.force)}_{trial:03d}.trc"


@dataclass
class DatasetManifest:
    textures: list
    conditions: list            # [[speed, force], ...]
    trials: int
    seed: int
    scan_length: float = 240.0
    taxel_min: list = field(default_factory=list)
    taxel_max: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)
    files: dict = field(default_factory=dict)   # "A/40/250/0" -> relative path
    sim_config: dict = field(default_factory=dict)

    def key(self, texture: str, speed, force, trial: int) -> str:
        return f"{texture}/{int(speed)}/{int(force)}/{int(trial)}"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


class Dataset:
    """A generated dataset on disk: manifest plus trace files."""

    def __init__(self, root, manifest: DatasetManifest):
        self.root = Path(root)
        self.manifest = manifest
        lo = np.asarray(manifest.taxel_min, dtype=float)
        hi = np.asarray(manifest.taxel_max, dtype=float)
        self._lo = lo
        self._span = np.where(hi > lo, hi - lo, 1.0)
        self._degenerate = ~(hi > lo)

    @classmethod
    def open(cls, root) -> "Dataset":
        path = Path(root) / "manifest.json"
        try:
            manifest = DatasetManifest.from_dict(json.loads(path.read_text()))
        except FileNotFoundError as exc:
            raise FileNotFoundError(f"no dataset manifest at {path}") from exc
        except (ValueError, TypeError) as exc:
            raise DatasetError(f"corrupt manifest {path}: {exc}") from exc
        return cls(root, manifest)

    @property
    def textures(self) -> list:
        return list(self.manifest.textures)

    @property
    def conditions(self) -> list[TrialCondition]:
        return [TrialCondition(s, f, self.manifest.scan_length) for s, f in self.manifest.conditions]

    def raw(self, texture: str, speed, force, trial: int) -> np.ndarray:
        key = self.manifest.key(texture, speed, force, trial)
        try:
            rel = self.manifest.files[key]
        except KeyError as exc:
            raise DatasetError(f"dataset has no trial {key}") from exc
        return read_trace(self.root / rel)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return normalize_samples(raw, self._lo, self._span, self._degenerate)

    def trace(self, texture: str, speed, force, trial: int) -> SensorTrace:
        cond = TrialCondition(speed, force, self.manifest.scan_length)
        samples = self.normalize(self.raw(texture, speed, force, trial))
        return SensorTrace(samples, cond, texture, trial)

    def traces(self):
        for tex in self.manifest.textures:
            for cond in self.conditions:
                for k in range(self.manifest.trials):
                    yield self.trace(tex, cond.speed, cond.force, k)


def normalize_samples(raw, lo, span, degenerate=None) -> np.ndarray:
    out = (np.asarray(raw, dtype=float) - lo) / span
    if degenerate is not None and np.any(degenerate):
        out[:, degenerate] = 0.0
    return out


def normalize_traces(traces, lo=None, hi=None):
    """Map each taxel's global [min, max] over ``traces`` onto [0, 1].

    Returns ``(normalized_traces, degenerate_mask)``; constant taxels come out
    as zeros and are flagged. Already-normalized input spanning [0, 1] is
    returned unchanged.
    """
    arrays = [np.asarray(getattr(t, "samples", t), dtype=float) for t in traces]
    if lo is None or hi is None:
        lo = np.min([a.min(axis=0) for a in arrays], axis=0)
        hi = np.max([a.max(axis=0) for a in arrays], axis=0)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    degenerate = ~(hi > lo)
    span = np.where(degenerate, 1.0, hi - lo)
    return [normalize_samples(a, lo, span, degenerate) for a in arrays], degenerate


def generate_dataset(root, trials: int = 20, seed: int = 0, textures=None,
                     conds=None, cfg: SimConfig = SimConfig(), progress=None) -> Dataset:
    """Simulate and persist every (texture, condition, trial) triple.

    Deterministic in ``seed``; per-taxel global min/max go to the manifest.
    """
    if trials < 1:
        raise ValueError("trials per cell must be at least 1")
    root = Path(root)
    specs = [TEXTURES[t] for t in textures] if textures else texture_set()
    conds = list(conds) if conds else conditions()
    try:
        (root / "traces").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {root}: {exc}") from exc
    lo = np.full(N_TAXELS, ADC_LEVELS, dtype=float)
    hi = np.full(N_TAXELS, -1.0)
    files = {}
    all_specs = {s.id: i for i, s in enumerate(texture_set())}
    for spec in specs:
        ti = all_specs[spec.id]
        for ci, cond in enumerate(conds):
            for k in range(trials):
                trace = simulate_trial(spec, cond, trial_seed(seed, ti, ci, k), cfg, k)
                rel = f"traces/{trace_name(spec.id, cond, k)}"
                write_trace(root / rel, trace.samples)
                lo = np.minimum(lo, trace.samples.min(axis=0))
                hi = np.maximum(hi, trace.samples.max(axis=0))
                files[f"{spec.id}/{int(cond.speed)}/{int(cond.force)}/{k}"] = rel
            if progress:
                progress(spec.id, cond)
    manifest = DatasetManifest(
        textures=[s.id for s in specs],
        conditions=[[c.speed, c.force] for c in conds],
        trials=trials, seed=seed,
        scan_length=conds[0].scan_length,
        taxel_min=lo.tolist(), taxel_max=hi.tolist(),
        degenerate=[int(i) for i in np.flatnonzero(~(hi > lo))],
        files=files, sim_config=asdict(cfg),
    )
    try:
        (root / "manifest.json").write_text(manifest.to_json())
    except OSError as exc:
        raise DatasetError(f"cannot write manifest {root / 'manifest.json'}: {exc}") from exc
    return Dataset(root, manifest)
