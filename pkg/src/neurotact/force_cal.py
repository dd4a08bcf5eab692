"""Per-cell force scaling coefficients that equalize SA spike rates across forces."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .drum_sim import FORCES, N_TAXELS, REFERENCE_FORCE, SPEEDS, DatasetError
from .spike_codec import SA_PARAMS, SAMPLE_RATE, spike_counts

EPSILON = 0.1           # spikes/s
COEFF_MAX = 5.0
MAX_ITER = 40
BRACKET_TOL = 1e-4


def target_rate(rates) -> float:
    """Mean SA spike rate over the reference-force trials of one cell."""
    rates = np.asarray(list(rates), dtype=float)
    if rates.size == 0:
        raise ValueError("no reference-force trials for this cell")
    return float(rates.mean())


def bisect_coefficient(rate_fn, target: float, eps: float = EPSILON, hi: float = COEFF_MAX,
                       max_iter: int = MAX_ITER, tol: float = BRACKET_TOL):
    """Binary search for c in (0, hi] with ``|rate_fn(c) - target| < eps``.

    ``rate_fn`` must be non-decreasing. Returns ``(c, converged, residual)``;
    when no c qualifies the coefficient is clamped to ``hi``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    r_hi = rate_fn(hi)
    if abs(r_hi - target) < eps:
        return hi, True, abs(r_hi - target)
    if r_hi < target:
        return hi, False, abs(r_hi - target)
    lo = 0.0
    best = abs(r_hi - target)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        r = rate_fn(mid)
        best = min(best, abs(r - target))
        if abs(r - target) < eps:
            return mid, True, abs(r - target)
        if r < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return COEFF_MAX, False, best


def ensemble_rate_fn(channels, fs: float = SAMPLE_RATE):
    """Mean SA spike rate over a stack of equal-length trials, as a function of c."""
    channels = np.atleast_2d(np.asarray(channels, dtype=float))
    duration = channels.shape[1] / fs

    def rate(c):
        return float(spike_counts(SA_PARAMS, c * channels, fs).mean() / duration)
    return rate


def bisect_many(rates_fn, targets, eps: float = EPSILON, hi: float = COEFF_MAX,
                max_iter: int = MAX_ITER, tol: float = BRACKET_TOL):
    """Run :func:`bisect_coefficient` for many independent problems in lockstep.

    ``rates_fn(cs, active)`` returns the rates of the problems flagged in
    ``active`` at coefficients ``cs[active]``. Results match the scalar search
    entry by entry.
    """
    targets = np.asarray(targets, dtype=float)
    if eps <= 0:
        raise ValueError("eps must be positive")
    m = targets.size
    coeff = np.full(m, float(hi))
    conv = np.zeros(m, bool)
    resid = np.zeros(m)
    every = np.ones(m, bool)
    r_hi = np.asarray(rates_fn(np.full(m, float(hi)), every), dtype=float)
    err = np.abs(r_hi - targets)
    conv[:] = err < eps
    resid[:] = err
    active = ~conv & (r_hi >= targets)
    lo = np.zeros(m)
    up = np.full(m, float(hi))
    best = err.copy()
    for _ in range(max_iter):
        if not active.any():
            break
        mid = 0.5 * (lo + up)
        r = np.zeros(m)
        r[active] = rates_fn(mid, active)
        e = np.abs(r - targets)
        best = np.where(active, np.minimum(best, e), best)
        hit = active & (e < eps)
        coeff[hit], conv[hit], resid[hit] = mid[hit], True, e[hit]
        go = active & ~hit
        lo = np.where(go & (r < targets), mid, lo)
        up = np.where(go & (r >= targets), mid, up)
        done = go & (up - lo < tol)
        coeff[done], resid[done] = COEFF_MAX, best[done]
        active = go & ~done
    coeff[active], resid[active] = COEFF_MAX, best[active]
    return coeff, conv, resid


def solve_coefficient(channels, target: float, eps: float = EPSILON):
    """Coefficient scaling ``channels`` so their mean SA rate matches ``target``.

    ``channels`` is one trial or a stack of trials of the same cell.
    Returns ``(coefficient, converged)``.
    """
    c, ok, _ = bisect_coefficient(ensemble_rate_fn(channels), target, eps)
    return c, ok


@dataclass
class CalibrationReport:
    total: int
    converged: int
    clamped: int
    fixed: int
    residuals: np.ndarray
    converged_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.converged_mask is None:
            self.converged_mask = np.isfinite(self.residuals)

    @property
    def converged_fraction(self) -> float:
        solved = self.total - self.fixed
        return self.converged / solved if solved else 1.0

    def summary(self) -> dict:
        return {"total": self.total, "converged": self.converged, "clamped": self.clamped,
                "fixed": self.fixed, "converged_fraction": self.converged_fraction,
                "max_residual_converged": float(np.max(self.residuals[self.converged_mask],
                                                       initial=0.0))}


@dataclass
class ForceScalingTable:
    textures: list
    speeds: list
    forces: list
    coefficients: np.ndarray      # [texture, taxel, speed, force]
    converged: np.ndarray
    targets: np.ndarray           # [texture, taxel, speed]
    residuals: np.ndarray
    epsilon: float = EPSILON

    def lookup(self, texture: str, speed, force) -> np.ndarray:
        try:
            t = self.textures.index(texture)
            s = self.speeds.index(speed)
            f = self.forces.index(force)
        except ValueError as exc:
            raise KeyError(f"no force coefficients for ({texture}, {speed}, {force})") from exc
        return self.coefficients[t, :, s, f].copy()

    def report(self) -> CalibrationReport:
        ref = np.zeros(self.coefficients.shape, bool)
        ref[..., self.forces.index(REFERENCE_FORCE)] = True
        total = self.coefficients.size
        fixed = int(ref.sum())
        conv = int((self.converged & ~ref).sum())
        return CalibrationReport(total, conv, total - fixed - conv, fixed,
                                 np.where(ref, np.nan, self.residuals), self.converged & ~ref)

    def to_json(self) -> str:
        return json.dumps({
            "dimensions": {"texture": self.textures, "taxel": N_TAXELS,
                           "speed": self.speeds, "force": self.forces},
            "order": ["texture", "taxel", "speed", "force"],
            "coefficients": self.coefficients.ravel().tolist(),
            "converged": "".join("1" if c else "0" for c in self.converged.ravel()),
            "targets": self.targets.ravel().tolist(),
            "residuals": [None if not np.isfinite(r) else r for r in self.residuals.ravel()],
            "epsilon": self.epsilon,
        })

    @classmethod
    def from_json(cls, text: str) -> "ForceScalingTable":
        try:
            d = json.loads(text)
            dims = d["dimensions"]
            shape = (len(dims["texture"]), dims["taxel"], len(dims["speed"]), len(dims["force"]))
            coeffs = np.asarray(d["coefficients"], dtype=float).reshape(shape)
            conv = np.array([ch == "1" for ch in d["converged"]]).reshape(shape)
            targets = np.asarray(d["targets"], dtype=float).reshape(shape[:3])
            res = np.array([np.nan if r is None else r for r in d["residuals"]]).reshape(shape)
        except (KeyError, ValueError, TypeError) as exc:
            raise DatasetError(f"corrupt force scaling table: {exc}") from exc
        return cls(list(dims["texture"]), list(dims["speed"]), list(dims["force"]),
                   coeffs, conv, targets, res, d.get("epsilon", EPSILON))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ForceScalingTable":
        with open(path) as fh:
            return cls.from_json(fh.read())


def unit_table(textures, speeds=SPEEDS, forces=FORCES) -> ForceScalingTable:
    shape = (len(textures), N_TAXELS, len(speeds), len(forces))
    return ForceScalingTable(list(textures), list(speeds), list(forces), np.ones(shape),
                             np.ones(shape, bool), np.zeros(shape[:3]), np.zeros(shape))


def calibrate_cell(stacks: dict, eps: float = EPSILON, fs: float = SAMPLE_RATE):
    """Solve one (texture, speed) cell.

    ``stacks`` maps force -> array [trials, samples, taxels] of normalized
    readings. Returns per-force coefficient, converged and residual arrays of
    shape [taxels, forces] plus the per-taxel target rates.
    """
    forces = sorted(stacks)
    if REFERENCE_FORCE not in stacks:
        raise ValueError("cell has no reference-force trials")
    ref = stacks[REFERENCE_FORCE]
    n_tax = ref.shape[2]
    duration = ref.shape[1] / fs
    coeffs = np.ones((n_tax, len(forces)))
    conv = np.ones((n_tax, len(forces)), bool)
    resid = np.zeros((n_tax, len(forces)))
    targets = np.zeros(n_tax)
    for i in range(n_tax):
        counts = spike_counts(SA_PARAMS, ref[:, :, i], fs)
        targets[i] = target_rate(counts / duration)
    others = [j for j, f in enumerate(forces) if f != REFERENCE_FORCE]
    # problem p = (force index k, taxel i); its channels are all trials of that pair
    chans = [np.ascontiguousarray(stacks[forces[j]].transpose(2, 0, 1)) for j in others]
    n_trials = [c.shape[1] for c in chans]
    probs = [(k, i) for k in range(len(others)) for i in range(n_tax)]

    def rates(cs, active):
        idx = np.flatnonzero(active)
        rows = np.concatenate([cs[p] * chans[probs[p][0]][probs[p][1]] for p in idx])
        counts = spike_counts(SA_PARAMS, rows, fs)
        splits = np.cumsum([n_trials[probs[p][0]] for p in idx])[:-1]
        return np.array([c.mean() / duration for c in np.split(counts, splits)])

    if probs:
        c, ok, r = bisect_many(rates, np.tile(targets, len(others)), eps)
        for p, (k, i) in enumerate(probs):
            coeffs[i, others[k]], conv[i, others[k]], resid[i, others[k]] = c[p], ok[p], r[p]
    return coeffs, conv, resid, targets


def calibrate(dataset, eps: float = EPSILON, progress=None):
    """Solve the full coefficient table for a :class:`~neurotact.drum_sim.Dataset`.

    Returns ``(ForceScalingTable, CalibrationReport)``.
    """
    textures = dataset.textures
    speeds = sorted({int(c.speed) for c in dataset.conditions})
    forces = sorted({int(c.force) for c in dataset.conditions})
    have = {(int(c.speed), int(c.force)) for c in dataset.conditions}
    missing = [(s, f) for s in speeds for f in forces if (s, f) not in have]
    if REFERENCE_FORCE not in forces:
        missing.extend((s, REFERENCE_FORCE) for s in speeds)
    if missing:
        raise DatasetError(f"dataset lacks speed-force cells: {missing}")
    shape = (len(textures), N_TAXELS, len(speeds), len(forces))
    coeffs = np.ones(shape)
    conv = np.ones(shape, bool)
    resid = np.zeros(shape)
    targets = np.zeros(shape[:3])
    n = dataset.manifest.trials
    for ti, tex in enumerate(textures):
        for si, s in enumerate(speeds):
            stacks = {f: np.stack([dataset.trace(tex, s, f, k).samples for k in range(n)])
                      for f in forces}
            c, ok, r, tg = calibrate_cell(stacks, eps)
            coeffs[ti, :, si, :] = c
            conv[ti, :, si, :] = ok
            resid[ti, :, si, :] = r
            targets[ti, :, si] = tg
            if progress:
                progress(tex, s)
    table = ForceScalingTable(textures, speeds, forces, coeffs, conv, targets, resid, eps)
    return table, table.report()


def apply_force_scaling(trace, table: ForceScalingTable) -> np.ndarray:
    """The 18 SA coefficients for a trial's (texture, speed, force)."""
    cond = trace.condition
    return table.lookup(trace.texture, int(cond.speed), int(cond.force))
