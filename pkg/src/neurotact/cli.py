"""Command-line entry point: dataset generation, calibration, encoding, experiments, reports."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import experiments as ex
from .classify import BUCKETS, lda_fit, pca_fit, pca_project, save_model
from .drum_sim import Dataset, DatasetError, SimConfig, generate_dataset
from .force_cal import ForceScalingTable, calibrate
from .pipeline import VARIANTS, encode_dataset, load_features, save_features, trial_trains
from .rt_pipeline import (LIVE_PCS, PROTOCOLS, StreamError, build_rt_dataset, classify_live,
                          load_rt_datasets, run_protocol, save_rt_datasets, train_live)
from .spike_codec import write_trains

log = logging.getLogger("neurotact")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CORRUPT = 4
EXIT_INVALID = 5

COMMANDS = ("gen", "calibrate", "encode", "train", "exp-fig3a", "exp-fig3b", "exp-fig3cf",
            "exp-fig4", "exp-s5", "report", "suite")

TABLE_FILE = "force_scaling.json"
FEATURE_FILE = "features.npz"
RT_FILE = "realtime.npz"


class MissingInput(Exception):
    pass


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _pcs(text: str) -> list[int]:
    for sep in ("-", ":"):
        if sep in text:
            lo, hi = text.split(sep, 1)
            return [int(lo), int(hi)]
    return [int(text), int(text)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings; flags override it")
    common.add_argument("--dataset", help="dataset directory")
    common.add_argument("--out", help="output directory for artifacts")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--trials", type=int, help="trials per texture and speed-force cell")
    common.add_argument("--pcs", type=_pcs, help="PC count or inclusive range, e.g. 50 or 1-50")
    common.add_argument("--force-scaling", type=_on_off, help="on|off")
    common.add_argument("--speed-scaling", type=_on_off, help="on|off")
    common.add_argument("--repeats", type=int, help="classification repeats per PC count")
    common.add_argument("--per-class", type=int, help="trials drawn per texture in k-fold tasks")
    common.add_argument("--rt-repeats", type=int, help="repeats per realtime dataset")
    common.add_argument("--rt-datasets", type=int, help="number of simulated realtime sessions")
    common.add_argument("--write-trains", action="store_true", default=None,
                        help="encode: also write every spike train as text")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="neurotact", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    helps = {
        "gen": "generate the synthetic drum dataset",
        "calibrate": "solve force scaling coefficients",
        "encode": "encode every trial and write feature matrices",
        "train": "fit a PCA+LDA model on all trials of each selected variant",
        "exp-fig3a": "individual texture classification sweep",
        "exp-fig3b": "texture group classification sweep",
        "exp-fig3cf": "speed-force extrapolation sweeps (four buckets)",
        "exp-fig4": "realtime offline, cross-session and extrapolation protocols",
        "exp-s5": "realtime live demonstration",
        "report": "summary table at one PC count",
        "suite": "everything from generation to report",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> ex.RunConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingInput(f"config file {path} not found")
        try:
            values.update(json.loads(path.read_text()))
        except ValueError as exc:
            raise DatasetError(f"config file {path} is not valid JSON: {exc}") from exc
    known = {f.name for f in fields(ex.RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for name in known:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    values["command"] = args.command
    if args.command == "report" and args.pcs is None and "pcs" not in values:
        values["pcs"] = [50, 50]
    return ex.RunConfig(**values)


# -- stages ---------------------------------------------------------------------------

def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingInput(f"{path} not found; {hint}")
    return path


def _out(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _open_dataset(cfg) -> Dataset:
    _need(Path(cfg.dataset) / "manifest.json", "run `neurotact gen` first")
    return Dataset.open(cfg.dataset)


def cmd_gen(cfg) -> dict:
    t = time.time()
    ds = generate_dataset(cfg.dataset, trials=cfg.trials, seed=cfg.seed, cfg=SimConfig())
    n = len(ds.manifest.files)
    log.info("generated %d trials in %s", n, cfg.dataset)
    return {"trials": n, "seconds": time.time() - t}


def cmd_calibrate(cfg) -> dict:
    ds = _open_dataset(cfg)
    t = time.time()
    table, report = calibrate(ds)
    out = _out(cfg)
    table.save(out / TABLE_FILE)
    summary = dict(report.summary(), seconds=time.time() - t)
    (out / "calibration_report.json").write_text(json.dumps(summary, indent=1))
    log.info("calibration: %.1f%% converged", 100 * report.converged_fraction)
    return summary


def _needs_force(cfg) -> bool:
    return any(VARIANTS[v][0] for v in cfg.variants())


def cmd_encode(cfg) -> dict:
    ds = _open_dataset(cfg)
    out = _out(cfg)
    table = None
    if _needs_force(cfg):
        table = ForceScalingTable.load(_need(out / TABLE_FILE, "run `neurotact calibrate` first"))
    t = time.time()
    mats = encode_dataset(ds, table, cfg.variants())
    save_features(out / FEATURE_FILE, mats)
    if cfg.write_trains:
        _write_all_trains(ds, table, cfg, out / "trains")
    log.info("encoded %d trials for %s", len(next(iter(mats.values()))), ", ".join(mats))
    return {"trials": len(next(iter(mats.values()))), "seconds": time.time() - t}


def _write_all_trains(ds, table, cfg, root: Path) -> None:
    for v in cfg.variants():
        force, speed = VARIANTS[v]
        (root / v).mkdir(parents=True, exist_ok=True)
        for tr in ds.traces():
            s, f = int(tr.condition.speed), int(tr.condition.force)
            coeffs = table.lookup(tr.texture, s, f) if force else None
            trains = trial_trains(tr.samples, s, coeffs, force, speed)
            write_trains(root / v / f"{tr.texture}_{s}_{f}_{tr.trial_id:03d}.txt", trains)


def _features(cfg) -> dict:
    path = _need(Path(cfg.out) / FEATURE_FILE, "run `neurotact encode` first")
    return load_features(path, cfg.variants())


def cmd_train(cfg) -> dict:
    mats = _features(cfg)
    out = _out(cfg)
    n = cfg.pc_bounds[1]
    for v, m in mats.items():
        basis = pca_fit(m.values, n)
        model = lda_fit(pca_project(basis, m.values), m.labels["texture"].to_numpy())
        save_model(out / f"model_{v}.json", basis, model, basis.mean, n)
    return {"variants": list(mats), "pcs": n}


def cmd_fig3a(cfg) -> dict:
    res = ex.run_fig3a(_features(cfg), cfg)
    ex.write_experiment(_out(cfg), "fig3a", res, cfg, "Individual textures",
                        seed=cfg.experiment_seed("fig3a"))
    return _summary_at(res, cfg)


def cmd_fig3b(cfg) -> dict:
    res = ex.run_fig3b(_features(cfg), cfg)
    ex.write_experiment(_out(cfg), "fig3b", res, cfg, "Texture groups",
                        seed=cfg.experiment_seed("fig3b"))
    return _summary_at(res, cfg)


def cmd_fig3cf(cfg) -> dict:
    res = ex.run_fig3cf(_features(cfg), cfg)
    out = _out(cfg)
    summary = {}
    for b in BUCKETS:
        ex.write_experiment(out, f"fig3cf_{b}", res[b], cfg, f"Extrapolation: {b}",
                            seed=cfg.experiment_seed("fig3cf"), extra={"bucket": b})
        summary[b] = _summary_at(res[b], cfg)
    return summary


def _summary_at(res: dict, cfg) -> dict:
    p = cfg.pc_bounds[1]
    return {v: round(sweep[p].mean, 4) for v, sweep in res.items() if p in sweep}


def _rt_data(cfg):
    out = _out(cfg)
    path = out / RT_FILE
    if path.exists():
        data = load_rt_datasets(path)
        if len(data) == cfg.rt_datasets:
            return data
    seed = cfg.experiment_seed("fig4")
    data = [build_rt_dataset(seed, i) for i in range(cfg.rt_datasets)]
    save_rt_datasets(path, data)
    return data


def cmd_fig4(cfg) -> dict:
    data = _rt_data(cfg)
    out = _out(cfg)
    seed = cfg.experiment_seed("fig4")
    n = cfg.rt_repeats * len(data)
    summary = {}
    for which in PROTOCOLS[:3]:
        res = run_protocol(which, data, cfg.pc_list(), cfg.rt_repeats, seed)
        if which == "fig4c_extrapolation":
            for b in res["speed"]:
                sub = {"speed": res["speed"][b], "original": res["original"][b]}
                name = f"fig4c_{b}"
                ex.write_experiment(out, name, sub, cfg, f"Realtime extrapolation: {b}",
                                    test="proportion", n=n, seed=seed,
                                    extra={"protocol": which, "bucket": b, "n": n})
                summary[name] = _summary_at(sub, ex.RunConfig(pcs=[LIVE_PCS, LIVE_PCS]))
        else:
            ex.write_experiment(out, which, res, cfg, which, seed=seed,
                                extra={"protocol": which, "n": n})
            summary[which] = _summary_at(res, ex.RunConfig(pcs=[LIVE_PCS, LIVE_PCS]))
    return summary


def cmd_s5(cfg) -> dict:
    data = _rt_data(cfg)
    out = _out(cfg)
    res = run_protocol("s5_demo", data, cfg.pc_list())
    n = sum(d.test.textures.size for d in data)
    ex.write_experiment(out, "s5", res, cfg, "Realtime demonstration", test="proportion",
                        seed=cfg.experiment_seed("fig4"), extra={"n": n})
    # live classification at the deployed PC count, one row per scan
    rows = []
    for d in data:
        for scaling, name in ((True, "speed"), (False, "original")):
            model = train_live(d.train.matrix(scaling), d.train.textures,
                               d.calibration.matrix(scaling), LIVE_PCS)
            for x, truth, prof in zip(d.test.matrix(scaling), d.test.textures, d.test.profiles):
                label, ok = classify_live(model, x, truth)
                rows.append({"session": d.index, "variant": name, "profile": prof,
                             "truth": truth, "predicted": label, "correct": int(ok)})
    live = pd.DataFrame(rows)
    ex.write_csv(out / "s5_live.csv", live, ex.csv_header(cfg, "s5_live", cfg.experiment_seed("fig4"),
                                                       {"pcs": LIVE_PCS}))
    return live.groupby("variant")["correct"].mean().round(4).to_dict()


def cmd_report(cfg) -> dict:
    out = _out(cfg)
    pcs = cfg.pc_bounds[1]
    table = ex.table1(out, pcs)
    ex.write_csv(out / f"table1_{pcs}pcs.csv", table, ex.csv_header(cfg, "report", None))
    text = ex.format_table1(table, pcs)
    (out / f"table1_{pcs}pcs.txt").write_text(text)
    print(text, end="")
    return {"rows": len(table)}


def cmd_suite(cfg) -> dict:
    timings = {}
    steps = [("gen", cmd_gen), ("calibrate", cmd_calibrate), ("encode", cmd_encode),
             ("exp-fig3a", cmd_fig3a), ("exp-fig3b", cmd_fig3b), ("exp-fig3cf", cmd_fig3cf),
             ("exp-fig4", cmd_fig4), ("exp-s5", cmd_s5)]
    if not _needs_force(cfg):
        steps = [s for s in steps if s[0] != "calibrate"]
    start = time.time()
    for name, fn in steps:
        t = time.time()
        fn(cfg)
        timings[name] = round(time.time() - t, 2)
        log.info("%s done in %.1f s", name, timings[name])
    lo, hi = cfg.pc_bounds
    if lo <= 50 <= hi and set(cfg.variants()) == set(VARIANTS):
        report_cfg = ex.RunConfig(**dict(cfg.to_dict(), pcs=[50, 50], command="report"))
        cmd_report(report_cfg)
    timings["total"] = round(time.time() - start, 2)
    (Path(cfg.out) / "timings.json").write_text(json.dumps(timings, indent=1))
    return timings


HANDLERS = {"gen": cmd_gen, "calibrate": cmd_calibrate, "encode": cmd_encode, "train": cmd_train,
            "exp-fig3a": cmd_fig3a, "exp-fig3b": cmd_fig3b, "exp-fig3cf": cmd_fig3cf,
            "exp-fig4": cmd_fig4, "exp-s5": cmd_s5, "report": cmd_report, "suite": cmd_suite}


def run(cfg: ex.RunConfig) -> int:
    try:
        result = HANDLERS[cfg.command](cfg)
    except MissingInput as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        log.error("missing input: %s", exc)
        return EXIT_MISSING
    except (DatasetError, StreamError) as exc:
        log.error("corrupt input: %s", exc)
        return EXIT_CORRUPT
    except ValueError as exc:
        log.error("invalid setting: %s", exc)
        return EXIT_INVALID
    if cfg.command != "report":
        print(json.dumps(result, default=_jsonable))
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except MissingInput as exc:
        log.error("%s", exc)
        return EXIT_MISSING
    except DatasetError as exc:
        log.error("%s", exc)
        return EXIT_CORRUPT
    except (ValueError, TypeError) as exc:
        log.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
