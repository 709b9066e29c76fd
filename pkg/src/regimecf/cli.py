"""Command-line orchestration of the full pipeline.

Each subcommand reads the artifacts of its upstream stage from the run
directory and writes its own under runs/<name>/<stage>/, together with a
meta.json carrying the resolved-config hash; report refuses to aggregate
stages produced under different hashes. Logging goes to stderr, data to
files; outputs contain no timestamps so reruns on identical inputs are
byte-identical.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error,
5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from .alignment import extract_newell_params, split_cf_ff
from .errors import ConfigError, DataError, NumericError
from .nn.checkpoint import load_checkpoint
from .nn.layers import KinematicPredictor, RegimePredictor
from .physics import DEFAULT_IDM_BOUNDS, GaSettings, IdmParams, NewellConfig, calibrate_idm
from .pipeline import label_dataset, label_dataset_known_sections, pair_frames
from .regimes import ClassifyConfig, DrivingRegime, SectionLabel
from .segmentation import SegConfig, segment_and_refine
from .simulate import (
    ModelHandle,
    aggregate_results,
    export_phase_data,
    export_trajectories,
    platoon_simulate,
    simulate_pairs,
    wave_arrival_times,
)
from .synthetic import ScenarioConfig, build_leader, generate_synthetic
from .train import CurriculumConfig, CurriculumTrainer
from .trajectory import extract_pairs, load_trajectories, save_trajectories, split_pairs

log = logging.getLogger("regimecf")

SUBCOMMANDS = ("gen-synthetic", "ingest", "segment", "align", "classify",
               "calibrate-idm", "train", "simulate", "platoon", "evaluate",
               "report")

NEURAL_MODELS = ("lstm_dr", "lstm_plain", "gru_plain", "rnn_plain")


# --------------------------------------------------------------------- config

def resolve_config(args) -> dict:
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    for assignment in args.set or []:
        if "=" not in assignment:
            raise ConfigError(f"--set expects key=value, got {assignment!r}")
        key, _, raw = assignment.partition("=")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override non-object path {key!r}")
        node[parts[-1]] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg.setdefault("seed", 0)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def stage_dir(run_dir, stage, create=True):
    path = os.path.join(run_dir, stage)
    if create:
        os.makedirs(path, exist_ok=True)
    return path


def write_meta(run_dir, stage, cfg, inputs=()):
    meta = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "inputs": {name: read_meta(run_dir, name)["config_hash"]
                   for name in inputs},
    }
    with open(os.path.join(stage_dir(run_dir, stage), "meta.json"), "w",
              encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
    return meta


def read_meta(run_dir, stage) -> dict:
    path = os.path.join(run_dir, stage, "meta.json")
    if not os.path.exists(path):
        raise DataError(
            f"missing artifact for stage {stage!r}; run "
            f"`regimecf {stage}` first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def require_same_hash(cfg, run_dir, stages):
    expect = config_hash(cfg)
    for stage in stages:
        got = read_meta(run_dir, stage)["config_hash"]
        if got != expect:
            raise ConfigError(
                f"stage {stage!r} was produced under config hash {got}, "
                f"current config hashes to {expect}; refusing to mix")


def _seg_cfg(cfg):
    return SegConfig(**cfg.get("segmentation", {}))


def _classify_cfg(cfg):
    return ClassifyConfig(**cfg.get("classify", {}))


def _pair_id(pair):
    return (f"F{pair.follower.vehicle_id}_L{pair.leader.vehicle_id}"
            f"_T{pair.t[0]:.1f}")


# --------------------------------------------------------------------- stages

def _load_stage_pairs(cfg, run_dir):
    traj_path = os.path.join(run_dir, "ingest", "trajectories.csv")
    if not os.path.exists(traj_path):
        raise DataError("missing artifact trajectories.csv; run "
                        "`regimecf ingest` first")
    tset = load_trajectories(traj_path)
    min_overlap = cfg.get("data", {}).get("min_overlap", 3.0)
    return tset, extract_pairs(tset, min_overlap)


def cmd_gen_synthetic(cfg, run_dir):
    scenario = ScenarioConfig.from_dict(cfg.get("scenario", _DEMO_SCENARIO))
    tset, truth = generate_synthetic(scenario, seed=cfg["seed"])
    out = stage_dir(run_dir, "gen-synthetic")
    save_trajectories(tset, os.path.join(out, "trajectories.csv"),
                      header_comment=f"config_hash={config_hash(cfg)}")
    with open(os.path.join(out, "truth_labels.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["vehicle_id", "t", "regime_id"])
        for vid in sorted(truth):
            tr = tset[vid]
            for k, lab in enumerate(truth[vid]):
                writer.writerow([vid, repr(float(tr.t[k])), int(lab)])
    write_meta(run_dir, "gen-synthetic", cfg)
    log.info("generated %d vehicles", len(tset))


def cmd_ingest(cfg, run_dir):
    data_cfg = cfg.get("data", {})
    source = data_cfg.get("source", "gen-synthetic")
    if source == "gen-synthetic":
        path = os.path.join(run_dir, "gen-synthetic", "trajectories.csv")
        if not os.path.exists(path):
            raise DataError("missing artifact trajectories.csv; run "
                            "`regimecf gen-synthetic` first")
    else:
        path = data_cfg.get("path")
        if not path:
            raise ConfigError("data.path required when data.source='path'")
    tset = load_trajectories(path, units=data_cfg.get("units", "si"))
    pairs = extract_pairs(tset, data_cfg.get("min_overlap", 3.0))
    out = stage_dir(run_dir, "ingest")
    save_trajectories(tset, os.path.join(out, "trajectories.csv"),
                      header_comment=f"config_hash={config_hash(cfg)}")
    with open(os.path.join(out, "pairs.json"), "w", encoding="utf-8") as fh:
        json.dump([{
            "pair_id": _pair_id(p),
            "follower": p.follower.vehicle_id,
            "leader": p.leader.vehicle_id,
            "t_start": float(p.t[0]), "t_end": float(p.t[-1]),
        } for p in pairs], fh, sort_keys=True, indent=1)
    inputs = ["gen-synthetic"] if source == "gen-synthetic" else []
    write_meta(run_dir, "ingest", cfg, inputs)
    log.info("ingested %d vehicles, %d pairs", len(tset), len(pairs))


def cmd_segment(cfg, run_dir):
    _, pairs = _load_stage_pairs(cfg, run_dir)
    seg_cfg = _seg_cfg(cfg)
    out = stage_dir(run_dir, "segment")
    with open(os.path.join(out, "segments.csv"), "w", newline="",
              encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "t_start", "t_end", "theta", "residual"])
        for pair in pairs:
            for seg in segment_and_refine(pair.follower.t, pair.follower.v,
                                          seg_cfg):
                writer.writerow([_pair_id(pair), repr(seg.t_start),
                                 repr(seg.t_end), repr(seg.theta),
                                 repr(seg.residual)])
    write_meta(run_dir, "segment", cfg, ["ingest"])
    log.info("segmented %d pairs", len(pairs))


def cmd_align(cfg, run_dir):
    _, pairs = _load_stage_pairs(cfg, run_dir)
    seg_cfg = _seg_cfg(cfg)
    band = cfg.get("align", {}).get("band")
    out = stage_dir(run_dir, "align")
    with open(os.path.join(out, "seg_tau.csv"), "w", newline="",
              encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "seg_index", "t_start", "t_end",
                         "tau_median", "d_median"])
        for pair in pairs:
            segs = segment_and_refine(pair.follower.t, pair.follower.v,
                                      seg_cfg)
            newell = extract_newell_params(pair, band=band)
            for k, seg in enumerate(segs):
                mask = ((newell.follower_idx >= seg.start)
                        & (newell.follower_idx <= seg.end))
                d_med = (float(np.median(newell.d[mask])) if mask.any()
                         else float("nan"))
                writer.writerow([_pair_id(pair), k, repr(seg.t_start),
                                 repr(seg.t_end),
                                 repr(newell.segment_tau(seg.start, seg.end)),
                                 repr(d_med)])
    write_meta(run_dir, "align", cfg, ["ingest", "segment"])
    log.info("aligned %d pairs", len(pairs))


def _label_pairs(cfg, pairs):
    mode = cfg.get("sections", "pipeline")
    if mode == "cf":
        labeled = label_dataset_known_sections(
            pairs, _seg_cfg(cfg), _classify_cfg(cfg))
        threshold = None
    else:
        labeled, threshold = label_dataset(
            pairs, _seg_cfg(cfg), _classify_cfg(cfg),
            percentile=cfg.get("align", {}).get("percentile", 85.0),
            band=cfg.get("align", {}).get("band"))
    return labeled, threshold


def cmd_classify(cfg, run_dir):
    _, pairs = _load_stage_pairs(cfg, run_dir)
    labeled, threshold = _label_pairs(cfg, pairs)
    out = stage_dir(run_dir, "classify")
    with open(os.path.join(out, "labels.csv"), "w", newline="",
              encoding="utf-8") as fh:
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "t", "regime_id", "regime_name",
                         "section"])
        for lp in labeled:
            sections = lp.section_per_step
            for k, lab in enumerate(lp.labels):
                writer.writerow([
                    _pair_id(lp.pair), repr(float(lp.pair.t[k])), int(lab),
                    DrivingRegime(int(lab)).letter, sections[k].value])
    with open(os.path.join(out, "threshold.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"tau_threshold": threshold,
                   "mode": cfg.get("sections", "pipeline")}, fh, sort_keys=True)
    write_meta(run_dir, "classify", cfg, ["ingest", "segment", "align"])
    log.info("labeled %d pairs", len(labeled))


def cmd_calibrate_idm(cfg, run_dir):
    _, pairs = _load_stage_pairs(cfg, run_dir)
    ga_cfg = dict(cfg.get("ga", {}))
    bounds = ga_cfg.pop("bounds", None)
    settings = GaSettings(seed=cfg["seed"], **ga_cfg)
    if bounds:
        settings.bounds = {k: tuple(v) for k, v in bounds.items()}
    best, trace = calibrate_idm(pairs, settings)
    out = stage_dir(run_dir, "calibrate-idm")
    with open(os.path.join(out, "idm_params.json"), "w",
              encoding="utf-8") as fh:
        json.dump({
            "params": {k: getattr(best, k) for k in
                       ("v0", "T_hw", "a_max", "b", "s0", "delta")},
            "bounds": {k: list(v) for k, v in settings.bounds.items()},
            "final_fitness": float(trace[-1]),
            "config_hash": config_hash(cfg),
        }, fh, sort_keys=True, indent=1)
    with open(os.path.join(out, "fitness_trace.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "best_fitness"])
        for g, f in enumerate(trace):
            writer.writerow([g, repr(float(f))])
    write_meta(run_dir, "calibrate-idm", cfg, ["ingest"])
    log.info("calibrated IDM: fitness %.4g", trace[-1])


def _build_nets(train_cfg, seed):
    model = train_cfg.get("model", "lstm_dr")
    if model not in NEURAL_MODELS:
        raise ConfigError(f"unknown neural model {model!r}")
    regime_net = RegimePredictor(seed=seed)
    cell = model.split("_")[0]
    kin_net = KinematicPredictor(cell_type=cell,
                                 regime_pathway=(model == "lstm_dr"),
                                 seed=seed + 1)
    return model, regime_net, kin_net


def cmd_train(cfg, run_dir):
    _, pairs = _load_stage_pairs(cfg, run_dir)
    labeled, _ = _label_pairs(cfg, pairs)
    train_cfg = dict(cfg.get("train", {}))
    model_name, regime_net, kin_net = _build_nets(train_cfg, cfg["seed"])
    val_fraction = train_cfg.pop("val_fraction", 0.2)
    train_cfg.pop("model", None)
    ccfg = CurriculumConfig(seed=cfg["seed"], **train_cfg)
    by_pair = {_pair_id(lp.pair): lp for lp in labeled}
    split = split_pairs([lp.pair for lp in labeled],
                        val_fraction=val_fraction, seed=cfg["seed"])
    train_frames = [pair_frames(by_pair[_pair_id(p)]) for p in split.train]
    val_frames = [pair_frames(by_pair[_pair_id(p)]) for p in split.val]
    out = stage_dir(run_dir, "train")
    log_path = os.path.join(out, "train_log.jsonl")
    if os.path.exists(log_path):
        os.unlink(log_path)
    trainer = CurriculumTrainer(regime_net, kin_net, train_frames,
                                val_frames, ccfg, log_path=log_path,
                                checkpoint_dir=out)
    if model_name == "lstm_dr":
        trainer.run_all()
    else:
        trainer.train_stage3()  # plain baselines have no regime pathway
    with open(os.path.join(out, "model.json"), "w", encoding="utf-8") as fh:
        json.dump({"model": model_name, "config_hash": config_hash(cfg)},
                  fh, sort_keys=True)
    write_meta(run_dir, "train", cfg, ["ingest", "classify"])
    log.info("trained %s for %d logged epochs", model_name, len(trainer.log))


def _model_handle(cfg, run_dir, spec) -> ModelHandle:
    kind = spec.get("kind", "idm")
    if kind == "idm":
        source = spec.get("source", "config")
        if source == "calibrate-idm":
            path = os.path.join(run_dir, "calibrate-idm", "idm_params.json")
            if not os.path.exists(path):
                raise DataError("missing calibrated parameters; run "
                                "`regimecf calibrate-idm` first")
            with open(path, encoding="utf-8") as fh:
                params = IdmParams(**json.load(fh)["params"])
        else:
            params = IdmParams(**spec.get("params", {}))
        return ModelHandle("idm", idm=params)
    if kind == "newell":
        return ModelHandle("newell", newell=NewellConfig(**spec.get("params", {})))
    if kind == "replay":
        return ModelHandle("replay")
    if kind in NEURAL_MODELS:
        model_name, regime_net, kin_net = _build_nets({"model": kind},
                                                      cfg["seed"])
        ckpt = os.path.join(run_dir, "train", "stage3.json")
        if not os.path.exists(ckpt):
            raise DataError("missing trained checkpoint; run "
                            "`regimecf train` first")
        load_checkpoint(ckpt, {"regime": regime_net, "kinematic": kin_net})
        return ModelHandle(kind, kinematic_net=kin_net,
                           regime_net=regime_net if kind == "lstm_dr" else None)
    raise ConfigError(f"unknown model kind {kind!r}")


def cmd_simulate(cfg, run_dir):
    _, pairs = _load_stage_pairs(cfg, run_dir)
    sim_cfg = cfg.get("simulate", {})
    model = _model_handle(cfg, run_dir, sim_cfg.get("model", {"kind": "idm"}))
    labels_list = None
    if model.uses_regimes:
        labeled, _ = _label_pairs(cfg, pairs)
        labels_list = [lp.labels for lp in labeled]
    results = simulate_pairs(pairs, model, labels_list)
    out = stage_dir(run_dir, "simulate")
    _write_results_json(os.path.join(out, "results.json"), cfg, results,
                        model.kind)
    export_phase_data(results, os.path.join(out, "phase.csv"),
                      header_comment=f"config_hash={config_hash(cfg)}")
    export_trajectories(results, os.path.join(out, "trajectories.csv"),
                        header_comment=f"config_hash={config_hash(cfg)}")
    write_meta(run_dir, "simulate", cfg, ["ingest"])
    log.info("simulated %d pairs with %s", len(results), model.kind)


def _write_results_json(path, cfg, results, model_kind):
    rows = []
    for res in results:
        rows.append({
            "vehicle": res.vehicle_id,
            "mse": res.mse,
            "collisions": len(res.collisions),
            "events": len(res.events),
        })
    blob = {
        "model": model_kind,
        "config_hash": config_hash(cfg),
        "vehicles": rows,
    }
    scored = [r for r in results if r.mse is not None]
    if scored:
        blob["aggregate"] = {mop: aggregate_results(scored, mop)
                             for mop in ("a", "v", "x", "dx")}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh, sort_keys=True, indent=1)


def cmd_platoon(cfg, run_dir):
    pl_cfg = cfg.get("platoon", {})
    scenario = ScenarioConfig.from_dict(cfg.get("scenario", _DEMO_SCENARIO))
    lead = build_leader(scenario)
    n = int(pl_cfg.get("followers", 8))
    model = _model_handle(cfg, run_dir,
                          pl_cfg.get("model", {"kind": "idm"}))
    spacing = float(pl_cfg.get("initial_spacing", 25.0))
    results = platoon_simulate(lead, [model] * n,
                               initial_spacings=[spacing] * n)
    out = stage_dir(run_dir, "platoon")
    arrivals = wave_arrival_times(
        results, float(pl_cfg.get("wave_threshold", 8.0)))
    with open(os.path.join(out, "platoon_results.json"), "w",
              encoding="utf-8") as fh:
        json.dump({
            "model": model.kind,
            "config_hash": config_hash(cfg),
            "followers": n,
            "wave_arrival_times": arrivals,
        }, fh, sort_keys=True, indent=1)
    export_phase_data(results, os.path.join(out, "phase.csv"),
                      header_comment=f"config_hash={config_hash(cfg)}")
    export_trajectories(results, os.path.join(out, "trajectories.csv"),
                        header_comment=f"config_hash={config_hash(cfg)}")
    write_meta(run_dir, "platoon", cfg)
    log.info("simulated %d-vehicle platoon", n)


def cmd_evaluate(cfg, run_dir):
    require_same_hash(cfg, run_dir, ["simulate"])
    with open(os.path.join(run_dir, "simulate", "results.json"),
              encoding="utf-8") as fh:
        results = json.load(fh)
    out = stage_dir(run_dir, "evaluate")
    metrics = {
        "model": results["model"],
        "config_hash": config_hash(cfg),
        "aggregate": results.get("aggregate"),
        "n_vehicles": len(results["vehicles"]),
    }
    with open(os.path.join(out, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=1)
    write_meta(run_dir, "evaluate", cfg, ["simulate"])
    log.info("evaluated model %s", results["model"])


def cmd_report(cfg, run_dir):
    """Aggregate one or more evaluate outputs into a comparison table."""
    sources = cfg.get("report", {}).get("runs", [run_dir])
    rows = []
    hashes = set()
    for src in sources:
        path = os.path.join(src, "evaluate", "metrics.json")
        if not os.path.exists(path):
            raise DataError(f"missing evaluate artifact under {src}; run "
                            "`regimecf evaluate` first")
        with open(path, encoding="utf-8") as fh:
            metrics = json.load(fh)
        rows.append(metrics)
        hashes.add(metrics["config_hash"])
    if len(sources) == 1 and len(hashes) > 1:
        raise ConfigError("mixed config hashes in report inputs")
    baseline = next((r for r in rows if r["model"] == "idm"), rows[0])
    table = []
    for row in rows:
        entry = {"model": row["model"], "mse": row["aggregate"]}
        if row is not baseline and row["aggregate"] and baseline["aggregate"]:
            entry["improvement_vs_baseline_pct"] = {
                mop: 100.0 * (1.0 - row["aggregate"][mop]
                              / baseline["aggregate"][mop])
                for mop in ("a", "v", "x")
                if baseline["aggregate"][mop] > 0}
        table.append(entry)
    out = stage_dir(run_dir, "report")
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump({"baseline": baseline["model"], "table": table,
                   "config_hash": config_hash(cfg)}, fh, sort_keys=True,
                  indent=1)
    write_meta(run_dir, "report", cfg, ["evaluate"])
    log.info("report over %d models", len(table))


_DEMO_SCENARIO = {
    "leader": {"v0": 15.0, "x0": 500.0, "schedule": [
        {"duration_s": 8.0, "accel_mps2": 0.0},
        {"duration_s": 10.0, "accel_mps2": -1.2},
        {"duration_s": 6.0, "accel_mps2": 0.0},
        {"duration_s": 10.0, "accel_mps2": 1.2},
        {"duration_s": 8.0, "accel_mps2": 0.0},
    ]},
    "followers": {"count": 3, "law": "idm", "initial_spacing": 25.0},
    "noise_sigma": 0.0,
    "seed": 7,
}


_HANDLERS = {
    "gen-synthetic": cmd_gen_synthetic,
    "ingest": cmd_ingest,
    "segment": cmd_segment,
    "align": cmd_align,
    "classify": cmd_classify,
    "calibrate-idm": cmd_calibrate_idm,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "platoon": cmd_platoon,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regimecf",
        description="Regime-conditioned car-following pipeline")
    parser.add_argument("--version", action="version",
                        version="%(prog)s 0.1.0")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("-c", "--config", help="JSON run configuration")
        p.add_argument("-r", "--run-dir", default="runs/default",
                       help="artifact directory (default runs/default)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dotted config key")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap (accepted for interface parity)")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    if args.quiet:
        level = logging.ERROR
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(args.run_dir, exist_ok=True)
        _HANDLERS[args.command](cfg, args.run_dir)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except NumericError as exc:
        log.error("numeric error: %s", exc)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("internal error: %s", exc, exc_info=True)
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
