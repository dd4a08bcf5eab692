"""Offline dataset encoding into the four pipeline variants."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .drum_sim import TEXTURES, DatasetError
from .features import FeatureMatrix, build_feature_vector, feature_names
from .force_cal import ForceScalingTable
from .spike_codec import SA_PARAMS, RA_PARAMS, SpikeTrain, integrate_rows, ra_current
from .speed_warp import OFFLINE, WarpConfig, warp_offline

# name -> (force_scaling, speed_scaling)
VARIANTS = {
    "original": (False, False),
    "speed": (False, True),
    "force": (True, False),
    "speed_force": (True, True),
}
VARIANT_TITLES = {
    "original": "Original",
    "speed": "Speed Scaled",
    "force": "Force Scaled",
    "speed_force": "Speed and Force Scaled",
}


def variant_name(force_scaling: bool, speed_scaling: bool) -> str:
    for name, flags in VARIANTS.items():
        if flags == (force_scaling, speed_scaling):
            return name
    raise AssertionError("unreachable")


def sa_trains(samples: np.ndarray, coeffs=None) -> list[SpikeTrain]:
    n_tax = samples.shape[1]
    coeffs = np.ones(n_tax) if coeffs is None else np.asarray(coeffs, dtype=float)
    return integrate_rows(SA_PARAMS, (samples * coeffs).T)


def ra_trains(samples: np.ndarray, rectify: bool = False) -> list[SpikeTrain]:
    return integrate_rows(RA_PARAMS, np.stack([ra_current(samples[:, i], rectify=rectify)
                                               for i in range(samples.shape[1])]))


def trial_trains(samples, speed, coeffs=None, force_scaling=True, speed_scaling=True,
                 warp: WarpConfig = OFFLINE, rectify: bool = False) -> list[SpikeTrain]:
    """The 36 spike trains of one trial for one pipeline variant.

    With force scaling off the coefficients are ignored (all 1); with speed
    scaling off no warping happens.
    """
    samples = np.asarray(samples, dtype=float)
    trains = sa_trains(samples, coeffs if force_scaling else None) + ra_trains(samples, rectify)
    if speed_scaling:
        trains = [warp_offline(t, speed, warp) for t in trains]
    return trains


def variant_vector(sa, ra, speed, speed_scaling, warp: WarpConfig = OFFLINE) -> np.ndarray:
    trains = sa + ra
    if speed_scaling:
        trains = [warp_offline(t, speed, warp) for t in trains]
        return build_feature_vector(trains, "speed_scaled", speed, warp.reference_speed).values
    return build_feature_vector(trains, "unscaled", speed).values


def trial_features(samples, speed, coeffs, variants=VARIANTS, warp: WarpConfig = OFFLINE,
                   rectify: bool = False) -> dict:
    """Feature vectors for several variants, sharing the encodings between them."""
    samples = np.asarray(samples, dtype=float)
    ra = ra_trains(samples, rectify)
    sa = {}
    for v in variants:
        force = VARIANTS[v][0] and coeffs is not None
        if force not in sa:
            sa[force] = sa_trains(samples, coeffs if force else None)
    return {v: variant_vector(sa[VARIANTS[v][0] and coeffs is not None], ra, speed,
                              VARIANTS[v][1], warp)
            for v in variants}


def encode_dataset(dataset, table: ForceScalingTable | None, variants=VARIANTS,
                   progress=None) -> dict:
    """Feature matrices (uncentered) for every trial of a dataset, per variant."""
    rows = {v: [] for v in variants}
    labels = []
    for tex in dataset.textures:
        for cond in dataset.conditions:
            s, f = int(cond.speed), int(cond.force)
            coeffs = table.lookup(tex, s, f) if table is not None else None
            for k in range(dataset.manifest.trials):
                tr = dataset.trace(tex, s, f, k)
                feats = trial_features(tr.samples, s, coeffs, variants)
                for v in variants:
                    rows[v].append(feats[v])
                labels.append((tex, TEXTURES[tex].group, s, f, k))
            if progress:
                progress(tex, cond)
    lab = pd.DataFrame(labels, columns=["texture", "group", "speed", "force", "trial"])
    out = {}
    for v in variants:
        mode = "speed_scaled" if VARIANTS[v][1] else "unscaled"
        out[v] = FeatureMatrix(np.vstack(rows[v]), lab.copy(), feature_names(mode))
    return out


LABEL_COLUMNS = ["texture", "group", "speed", "force", "trial"]


def save_features(path, mats: dict) -> None:
    """All variants' feature matrices in one compressed archive."""
    first = next(iter(mats.values()))
    arrays = {f"values_{v}": m.values for v, m in mats.items()}
    for col in LABEL_COLUMNS:
        values = first.labels[col].to_numpy()
        arrays[f"label_{col}"] = values.astype(str) if values.dtype == object else values
    np.savez_compressed(path, **arrays)


def load_features(path, variants=None) -> dict:
    try:
        with np.load(path, allow_pickle=False) as z:
            lab = pd.DataFrame({c: z[f"label_{c}"] for c in LABEL_COLUMNS})
            have = [k[len("values_"):] for k in z.files if k.startswith("values_")]
            out = {}
            for v in (variants or have):
                if v not in have:
                    raise DatasetError(f"{path} has no features for variant {v!r}")
                mode = "speed_scaled" if VARIANTS[v][1] else "unscaled"
                out[v] = FeatureMatrix(z[f"values_{v}"], lab.copy(), feature_names(mode))
    except (OSError, ValueError, KeyError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise DatasetError(f"corrupt feature archive {path}: {exc}") from exc
    return out
