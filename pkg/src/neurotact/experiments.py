"""Experiment runners, result CSVs, the 50-PC summary table and figures.

Every CSV starts with ``#`` comment lines carrying the resolved run
configuration and seed, so a published file can be regenerated.

Seed derivation: the dataset is generated from the master seed; experiment
``name`` draws from ``SeedSequence([master, EXPERIMENT_IDS[name]])``. All
variants of one experiment share that seed so they resample the same trials.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import stats
from .classify import BUCKETS, extrapolation_eval, kfold_eval
from .pipeline import VARIANT_TITLES, VARIANTS

EXPERIMENT_IDS = {"fig3a": 1, "fig3b": 2, "fig3cf": 3, "fig4": 4, "s5": 5}
TABLE_ROWS = (
    ("Individual Textures", "fig3a", None),
    ("Texture Groups", "fig3b", None),
    ("Untrained Speed and Force", "fig3cf", "untrained-both"),
    ("Untrained Force", "fig3cf", "untrained-force"),
    ("Untrained Speed", "fig3cf", "untrained-speed"),
    ("Trained Speed and Force", "fig3cf", "trained-both"),
)


@dataclass
class RunConfig:
    command: str = "suite"
    dataset: str = "desk_data"
    out: str = "results"
    seed: int = 7
    trials: int = 20
    pcs: list = field(default_factory=lambda: [1, 50])   # inclusive range
    force_scaling: bool | None = None    # None runs both settings
    speed_scaling: bool | None = None
    repeats: int = 20
    per_class: int | None = None         # trials drawn per texture; default 1/3 of them
    rt_repeats: int = 100
    rt_datasets: int = 3
    write_trains: bool = False

    def __post_init__(self):
        if self.trials < 4:
            raise ValueError("at least 4 trials per cell are needed")
        lo, hi = self.pc_bounds
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid PC range {self.pcs}")
        if self.repeats < 2:
            raise ValueError("at least 2 repeats are needed for dispersion statistics")

    @property
    def pc_bounds(self):
        pcs = self.pcs if isinstance(self.pcs, (list, tuple)) else [self.pcs, self.pcs]
        if len(pcs) == 1:
            pcs = [pcs[0], pcs[0]]
        return int(pcs[0]), int(pcs[1])

    def pc_list(self) -> list[int]:
        lo, hi = self.pc_bounds
        return list(range(lo, hi + 1))

    def variants(self) -> list[str]:
        out = []
        for name, (force, speed) in VARIANTS.items():
            if self.force_scaling is not None and force != self.force_scaling:
                continue
            if self.speed_scaling is not None and speed != self.speed_scaling:
                continue
            out.append(name)
        return out

    def sample_per_class(self, n_conditions: int = 15) -> int:
        return self.per_class or max(self.trials * n_conditions // 3, 4)

    def experiment_seed(self, name: str) -> int:
        seq = np.random.SeedSequence([self.seed, EXPERIMENT_IDS[name]])
        return int(seq.generate_state(1)[0])

    def to_dict(self) -> dict:
        return asdict(self)


# -- comparisons ----------------------------------------------------------------

def compare_welch(a: dict, b: dict) -> dict:
    """Per-PC Welch t and Cohen's d between two result sweeps (a minus b)."""
    out = {}
    for p in a:
        if p not in b:
            continue
        x, y = a[p].accuracies, b[p].accuracies
        t, _, pv = stats.welch_t(x, y)
        d = stats.cohen_d(x, y)
        out[p] = {"stat": t, "p": pv, "effect": d,
                  "marker": stats.significance_marker(pv, d, "d")}
    return out


def compare_proportions(a: dict, b: dict, n: int | None = None) -> dict:
    """Per-PC two-proportion z-test and Cohen's h between two result sweeps.

    With ``n`` each mean accuracy is a proportion over ``n`` samples;
    otherwise the pooled correct/tested counts are used.
    """
    out = {}
    for p in a:
        if p not in b:
            continue
        pa, pb = a[p].mean, b[p].mean
        if n is None:
            z, pv = stats.two_prop_z(a[p].correct, a[p].tested, b[p].correct, b[p].tested)
        else:
            z, pv = stats.two_prop_z(pa * n, n, pb * n, n)
        h = stats.cohen_h(pa, pb)
        out[p] = {"stat": z, "p": pv, "effect": h, "marker": stats.significance_marker(pv, h, "h")}
    return out


# -- offline experiments --------------------------------------------------------

def run_fig3a(mats: dict, cfg: RunConfig) -> dict:
    """Individual-texture task, repeated 4-fold CV, per variant."""
    seed = cfg.experiment_seed("fig3a")
    return {v: kfold_eval(m.values, m.labels["texture"].to_numpy(), cfg.pc_list(), k=4,
                          n_repeats=cfg.repeats, seed=seed, per_class=cfg.sample_per_class())
            for v, m in mats.items()}


def run_fig3b(mats: dict, cfg: RunConfig) -> dict:
    """Texture-group task; trials are drawn per texture, labels are groups."""
    seed = cfg.experiment_seed("fig3b")
    return {v: kfold_eval(m.values, m.labels["group"].to_numpy(), cfg.pc_list(), k=4,
                          n_repeats=cfg.repeats, seed=seed, per_class=cfg.sample_per_class(),
                          strata=m.labels["texture"].to_numpy())
            for v, m in mats.items()}


def run_fig3cf(mats: dict, cfg: RunConfig) -> dict:
    """Speed-force extrapolation: ``{bucket: {variant: {pc: result}}}``."""
    seed = cfg.experiment_seed("fig3cf")
    out = {b: {} for b in BUCKETS}
    for v, m in mats.items():
        res = extrapolation_eval(m.values, m.labels["texture"].to_numpy(),
                                 m.labels["speed"].to_numpy(), m.labels["force"].to_numpy(),
                                 cfg.pc_list(), seed=seed, n_repeats=cfg.repeats)
        for b in BUCKETS:
            out[b][v] = res[b]
    return out


# -- CSV output -------------------------------------------------------------------

def csv_header(cfg: RunConfig, experiment: str, seed: int | None, extra: dict | None = None) -> str:
    lines = [f"# experiment: {experiment}",
             f"# seed: {seed if seed is not None else cfg.seed}",
             f"# config: {json.dumps(cfg.to_dict(), sort_keys=True)}"]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return "\n".join(lines) + "\n"


def results_frame(results: dict, baseline: str | None = "original", test: str = "welch",
                  n: int | None = None) -> pd.DataFrame:
    """Long table: variant, pcs, mean_accuracy, dispersion, n plus comparison columns.

    Comparison columns hold the test of each variant against ``baseline``
    (empty for the baseline itself or when it is absent).
    """
    rows = []
    for v, sweep in results.items():
        cmp = {}
        if baseline in results and v != baseline:
            if test == "welch":
                cmp = compare_welch(sweep, results[baseline])
            else:
                cmp = compare_proportions(sweep, results[baseline], n)
        for p, r in sweep.items():
            c = cmp.get(p, {})
            rows.append({"variant": v, "pcs": p, "mean_accuracy": r.mean,
                         "dispersion": r.dispersion, "dispersion_kind": r.dispersion_kind,
                         "n": r.n, "stat": c.get("stat", np.nan), "p": c.get("p", np.nan),
                         "effect": c.get("effect", np.nan), "marker": c.get("marker", "")})
    return pd.DataFrame(rows)


def repeats_frame(results: dict) -> pd.DataFrame:
    """Per-repeat accuracies in long form: variant, pcs, repeat, accuracy."""
    rows = [{"variant": v, "pcs": p, "repeat": i, "accuracy": a}
            for v, sweep in results.items() for p, r in sweep.items()
            for i, a in enumerate(np.asarray(r.accuracies))]
    return pd.DataFrame(rows)


def write_csv(path, frame: pd.DataFrame, header: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header)
        frame.to_csv(fh, index=False, float_format="%.10g", lineterminator="\n")


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", keep_default_na=False,
                       na_values=["", "nan", "NaN"])


def write_experiment(out_dir, name: str, results: dict, cfg: RunConfig, title: str,
                     test: str = "welch", n: int | None = None, seed: int | None = None,
                     baseline: str = "original", extra: dict | None = None,
                     figures: bool = True) -> Path:
    frame = results_frame(results, baseline, test, n)
    path = Path(out_dir) / f"{name}.csv"
    head = csv_header(cfg, name, seed, extra)
    write_csv(path, frame, head)
    write_csv(path.with_name(f"{name}_repeats.csv"), repeats_frame(results), head)
    if figures:
        plot_sweep(path.with_suffix(".png"), frame, title)
    return path


# -- summary table --------------------------------------------------------------------

def table1(out_dir, pcs: int = 50) -> pd.DataFrame:
    """Mean and dispersion (%) at ``pcs`` for the six offline tasks and four variants."""
    out_dir = Path(out_dir)
    records = []
    for label, exp, bucket in TABLE_ROWS:
        name = exp if bucket is None else f"{exp}_{bucket}"
        path = out_dir / f"{name}.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing experiment output {path}; run exp-{exp} first")
        df = read_csv(path)
        at = df[df["pcs"] == pcs]
        if at.empty:
            raise ValueError(f"{path} has no results at {pcs} PCs")
        rec = {"task": label}
        for v in VARIANTS:
            row = at[at["variant"] == v]
            rec[f"{v}_mean"] = 100.0 * row["mean_accuracy"].iloc[0] if len(row) else np.nan
            rec[f"{v}_sd"] = 100.0 * row["dispersion"].iloc[0] if len(row) else np.nan
        records.append(rec)
    return pd.DataFrame(records)


def format_table1(table: pd.DataFrame, pcs: int = 50) -> str:
    head = [f"Classification accuracy with {pcs} PCs (%)", ""]
    cols = ["task"] + [f"{VARIANT_TITLES[v]} mu | sigma" for v in VARIANTS]
    head.append("\t".join(cols))
    for _, r in table.iterrows():
        cells = [r["task"]] + [f"{r[f'{v}_mean']:.2f} | {r[f'{v}_sd']:.2f}" for v in VARIANTS]
        head.append("\t".join(cells))
    return "\n".join(head) + "\n"


# -- figures -----------------------------------------------------------------------------

COLORS = {"original": "black", "force": "tab:red", "speed": "tab:blue", "speed_force": "tab:green"}


def plot_sweep(path, frame: pd.DataFrame, title: str) -> None:
    """Accuracy versus PCs with error bars and significance markers."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    groups = list(frame.groupby("variant", sort=False))
    for k, (v, df) in enumerate(groups):
        ax.errorbar(df["pcs"], 100 * df["mean_accuracy"], yerr=100 * df["dispersion"],
                    label=VARIANT_TITLES.get(v, v), color=COLORS.get(v), lw=1, capsize=1.5)
        marked = df[df["marker"].astype(str).str.len() > 0]
        for _, r in marked.iterrows():
            ax.annotate(r["marker"], (r["pcs"], 100 * r["mean_accuracy"]),
                        textcoords="offset points", xytext=(0, 4 + 6 * k), ha="center",
                        fontsize=6, color=COLORS.get(v))
    ax.set_xlabel("principal components")
    ax.set_ylabel("accuracy (%)")
    ax.set_title(title)
    ax.set_ylim(0, 105)
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
