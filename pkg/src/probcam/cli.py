"""Command-line entry point.

Subcommands:
    generate  -- build a scenario (scene, rig, matches, ground-truth images)
                 and write it to disk with a config-hash manifest
    train     -- run the optimization, writing the iteration history CSV, the
                 confidence trace CSV, a summary JSON and a final checkpoint
    eval      -- score a finished run (or two raw point files) as JSON
    ablate    -- run the 2x2 component grid over a seed list and tabulate it

Shared flags: ``--config`` (JSON file), ``--preset`` (named defaults),
``--seed`` (rederives every per-stage seed), ``--out`` (output directory).
``train`` additionally takes ``--ablate <name>`` to switch off one component.
The environment variable ``PCM_THREADS`` caps worker parallelism; this
implementation is single-process single-thread, so it is recorded in the
manifest and otherwise a no-op.

Exit codes: 0 success, 2 validation/config, 3 numerical failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, evaluation, probpose, trainer
from .config import (
    ExperimentConfig, ScenarioArtifacts, build_scenario, config_sha256,
    config_to_dict, load_config, preset_config, save_config, with_master_seed,
)
from .errors import (
    ConfigError, FileFormatError, InvalidArgumentError, NumericalFailureError,
    ProbcamError,
)
from .scene import load_image_blob, load_scenario, save_image_blob, save_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

# --ablate names -> TrainConfig overrides.  "no-damping" keeps the
# uncertainty loss but removes its only feedback path; "no-uncertainty" and
# "no-confidence" are the ablation-grid axes.
ABLATION_VARIANTS = {
    "full": {},
    "no-damping": {"kappa": 0.0},
    "no-uncertainty": {"use_uncertainty": False},
    "no-confidence": {"use_confidence": False},
    "neither": {"use_uncertainty": False, "use_confidence": False},
}
GRID_ORDER = ["full", "no-uncertainty", "no-confidence", "neither"]


def _resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.preset is not None:
        cfg = preset_config(args.preset)
    else:
        cfg = preset_config("desk-outlier")
    if getattr(args, "seed", None) is not None:
        cfg = with_master_seed(cfg, args.seed)
    return cfg


def _apply_variant(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    if name not in ABLATION_VARIANTS:
        raise ConfigError("--ablate", f"unknown variant {name!r}; "
                          f"choose from {sorted(ABLATION_VARIANTS)}")
    train = dataclasses.replace(cfg.train, **ABLATION_VARIANTS[name])
    return ExperimentConfig(cfg.scenario, train, cfg.eval)


def _write_manifest(out_dir: Path, command: str, cfg: ExperimentConfig, extra=None):
    manifest = {
        "command": command,
        "config_sha256": config_sha256(cfg),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "threads": int(os.environ.get("PCM_THREADS", "1")),
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        manifest.update(extra)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def _evaluate_result(result, artifacts: ScenarioArtifacts, cfg: ExperimentConfig):
    return evaluation.evaluate_reconstruction(
        result.scene, result.bank.poses(canonicalize=True),
        artifacts.true_scene, artifacts.rig.true_poses,
        n_points=cfg.eval.n_points, seed=cfg.eval.seed,
        outlier_flags=artifacts.rig.outlier_flags, tau=cfg.eval.tau,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = build_scenario(cfg)
    save_config(out_dir / "config.json", cfg)
    save_scenario(out_dir / "scenario.json", artifacts.true_scene,
                  artifacts.rig, artifacts.matches)
    for i, img in enumerate(artifacts.gt.images):
        save_image_blob(out_dir / f"gt_cam{i:02d}", img, i)
    _write_manifest(out_dir, "generate", cfg,
                    {"n_cameras": artifacts.rig.n_cameras,
                     "n_outliers": int(artifacts.rig.outlier_flags.sum())})
    print(f"generated scenario with {artifacts.rig.n_cameras} cameras "
          f"({int(artifacts.rig.outlier_flags.sum())} outliers) in {out_dir}")
    return EXIT_OK


def _load_generated(scenario_dir: Path, cfg: ExperimentConfig) -> ScenarioArtifacts:
    from .scene import GroundTruthImages

    true_scene, rig, matches = load_scenario(scenario_dir / "scenario.json")
    if matches is None:
        raise InvalidArgumentError("scenario file lacks the match table")
    images = []
    for i in range(rig.n_cameras):
        img, header = load_image_blob(scenario_dir / f"gt_cam{i:02d}")
        if header.get("camera_id") != i:
            raise FileFormatError(str(scenario_dir / f"gt_cam{i:02d}.json"),
                                  f"camera id {header.get('camera_id')} at position {i}")
        images.append(img)
    from .renderer import RenderParams

    params = RenderParams(n_samples=cfg.train.n_samples, t_near=cfg.train.t_near,
                          t_far=cfg.train.t_far, s=cfg.train.s_init)
    if cfg.scenario.scene_init == "perturbed":
        from .testkit import rng_stream

        scene_init = trainer.perturb_scene(
            true_scene, rng_stream(cfg.scenario.scene_init_seed, "scene-init"),
            center_sigma=cfg.scenario.scene_init_sigma,
            radius_frac=cfg.scenario.scene_init_radius_frac)
    else:
        scene_init = true_scene.with_params(true_scene.centers, true_scene.radii)
    return ScenarioArtifacts(true_scene, scene_init, rig, matches,
                             GroundTruthImages(images), params)


def _train_once(cfg: ExperimentConfig, out_dir: Path, artifacts=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    if artifacts is None:
        artifacts = build_scenario(cfg)
    t0 = time.monotonic()
    result = trainer.train(artifacts.scene_init, artifacts.rig, artifacts.matches,
                           artifacts.gt, cfg.train, out_dir=out_dir)
    elapsed = time.monotonic() - t0
    report = _evaluate_result(result, artifacts, cfg)

    trainer.write_history_csv(out_dir / "run_history.csv", result.history)
    trainer.write_confidence_csv(out_dir / "confidence_trace.csv",
                                 result.confidence_trace)
    probpose.save_checkpoint(out_dir / "checkpoint_final.json", result.bank,
                             result.scene, result.log_s, len(result.history))
    save_config(out_dir / "config.json", cfg)
    # keeps the run self-contained so `eval --run` needs nothing else
    save_scenario(out_dir / "scenario.json", artifacts.true_scene,
                  artifacts.rig, artifacts.matches)
    summary = trainer.result_summary(result)
    summary["metrics"] = report.summary()
    summary["outlier_flags"] = [bool(f) for f in artifacts.rig.outlier_flags]
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return result, report, elapsed, artifacts


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.ablate is not None:
        cfg = _apply_variant(cfg, args.ablate)
    out_dir = Path(args.out)
    artifacts = None
    if args.scenario is not None:
        artifacts = _load_generated(Path(args.scenario), cfg)
    result, report, elapsed, _ = _train_once(cfg, out_dir, artifacts)
    _write_manifest(out_dir, "train", cfg, {"elapsed_seconds": round(elapsed, 3)})
    final = result.final_losses()
    print(f"trained {len(result.history)} iterations in {elapsed:.1f}s; "
          f"final color loss {final['loss_color']:.5f}, "
          f"chamfer {report.chamfer:.4f} (x10 units), f-score {report.f_score:.3f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.points_est is not None or args.points_true is not None:
        if args.points_est is None or args.points_true is None:
            raise InvalidArgumentError("--points-est and --points-true go together")
        est = evaluation.load_points_blob(args.points_est)
        true = evaluation.load_points_blob(args.points_true)
        cd, acc, comp = evaluation.chamfer_l1(est, true)
        fs, precision, recall = evaluation.f_score_stats(est, true, args.tau)
        metrics = {"cd": cd, "accuracy": acc, "completeness": comp,
                   "f_score": fs, "precision": precision, "recall": recall,
                   "per_camera_pose_errors": []}
    elif args.run is not None:
        run_dir = Path(args.run)
        cfg = load_config(run_dir / "config.json")
        bank, scene, _log_s, _it = probpose.load_checkpoint(run_dir / "checkpoint_final.json")
        true_scene, rig, _ = load_scenario(run_dir / "scenario.json")
        report = evaluation.evaluate_reconstruction(
            scene, bank.poses(canonicalize=True), true_scene, rig.true_poses,
            n_points=cfg.eval.n_points, seed=cfg.eval.seed,
            outlier_flags=rig.outlier_flags, tau=cfg.eval.tau)
        metrics = {"cd": report.chamfer, "accuracy": report.accuracy,
                   "completeness": report.completeness, "f_score": report.f_score,
                   "precision": report.precision, "recall": report.recall,
                   "per_camera_pose_errors": [
                       {"camera": i, "rot_deg": float(r), "trans": float(t),
                        "outlier": bool(rig.outlier_flags[i])}
                       for i, (r, t) in enumerate(zip(report.rot_errors_deg,
                                                      report.trans_errors))]}
    else:
        raise InvalidArgumentError("eval needs either --run or --points-est/--points-true")

    blob = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out is not None:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(blob + "\n")
    print(blob)
    return EXIT_OK


ABLATION_COLUMNS = ["variant", "seed", "chamfer", "f_score",
                    "rot_error_inlier_deg", "rot_error_outlier_deg",
                    "trans_error_inlier", "config_sha256"]
SUMMARY_COLUMNS = ["variant", "n_seeds", "mean_chamfer", "mean_f_score",
                   "mean_rot_error_inlier_deg", "mean_rot_error_outlier_deg",
                   "best_chamfer", "config_sha256"]


def cmd_ablate(args) -> int:
    base = _resolve_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise InvalidArgumentError("--seeds must list at least one integer")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for variant in GRID_ORDER:
        for seed in seeds:
            cfg = _apply_variant(with_master_seed(base, seed), variant)
            run_dir = out_dir / f"{variant}_seed{seed}"
            _result, report, _elapsed, _arts = _train_once(cfg, run_dir)
            s = report.summary()
            rows.append({
                "variant": variant, "seed": seed,
                "chamfer": report.chamfer, "f_score": report.f_score,
                "rot_error_inlier_deg": s.get("rot_error_inlier_deg",
                                              s["rot_error_mean_deg"]),
                "rot_error_outlier_deg": s.get("rot_error_outlier_deg", 0.0),
                "trans_error_inlier": s.get("trans_error_inlier",
                                            s["trans_error_mean"]),
                "config_sha256": config_sha256(cfg),
            })
            print(f"{variant} seed {seed}: chamfer {report.chamfer:.4f}, "
                  f"f-score {report.f_score:.3f}")

    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATION_COLUMNS)
        for row in rows:
            w.writerow([trainer._format_cell(row[c]) for c in ABLATION_COLUMNS])

    means = []
    for variant in GRID_ORDER:
        sub = [r for r in rows if r["variant"] == variant]
        means.append({
            "variant": variant, "n_seeds": len(sub),
            "mean_chamfer": float(np.mean([r["chamfer"] for r in sub])),
            "mean_f_score": float(np.mean([r["f_score"] for r in sub])),
            "mean_rot_error_inlier_deg": float(np.mean(
                [r["rot_error_inlier_deg"] for r in sub])),
            "mean_rot_error_outlier_deg": float(np.mean(
                [r["rot_error_outlier_deg"] for r in sub])),
            "config_sha256": config_sha256(_apply_variant(base, variant)),
        })
    best = min(m["mean_chamfer"] for m in means)
    for m in means:
        m["best_chamfer"] = m["mean_chamfer"] == best
    with open(out_dir / "ablation_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for m in means:
            w.writerow([trainer._format_cell(m[c]) for c in SUMMARY_COLUMNS])
    _write_manifest(out_dir, "ablate", base, {"seeds": seeds})
    for m in means:
        flag = "  <- best CD" if m["best_chamfer"] else ""
        print(f"{m['variant']:>16s}: CD {m['mean_chamfer']:.4f} "
              f"F {m['mean_f_score']:.3f}{flag}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probcam",
        description="Pose-uncertainty-aware scene optimization on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--preset", help="named preset (desk-outlier, paper-defaults)")
        p.add_argument("--seed", type=int, help="master seed overriding per-stage seeds")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p_gen = sub.add_parser("generate", help="write scenario artifacts")
    add_common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="run the optimization")
    add_common(p_train)
    p_train.add_argument("--scenario", help="directory produced by `generate` "
                         "(default: build the scenario in-process)")
    p_train.add_argument("--ablate", help="switch off one component: "
                         + ", ".join(sorted(ABLATION_VARIANTS)))
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="score a run or two point files")
    p_eval.add_argument("--run", help="directory produced by `train`")
    p_eval.add_argument("--points-est", help="prefix of estimated points blob")
    p_eval.add_argument("--points-true", help="prefix of reference points blob")
    p_eval.add_argument("--tau", type=float, default=0.64,
                        help="f-score threshold in x10 units")
    p_eval.add_argument("--out", help="write the metrics JSON here as well")
    p_eval.set_defaults(func=cmd_eval)

    p_abl = sub.add_parser("ablate", help="run the 2x2 component grid")
    add_common(p_abl)
    p_abl.add_argument("--seeds", default="1,2,3,4,5",
                       help="comma-separated seed list (default 1..5)")
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalFailureError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileFormatError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except ProbcamError as err:  # remaining domain errors are validation-like
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
