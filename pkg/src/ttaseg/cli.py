"""Command-line entry points: run, eval, phantom, experiment.

Configuration precedence: command-line flags override keys of the JSON
config document given via ``--config``. Exit codes: 0 success, 1 internal
error, 2 usage/input error; failures print a machine-readable JSON object
to stderr. Artifact files never contain nondeterministic content: a run
with a fixed config and seed is byte-reproducible (pass ``--timings`` to
opt into wall-clock fields in the manifest, which breaks that).
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
import time
from pathlib import Path

from . import __version__
from .engine import TtaConfig, run_tta
from .errors import TtaSegError
from .experiment import ExperimentConfig, run_experiment
from .external import ExternalPredictor, ExternalPredictorPool
from .geometry import AugmentationPrior
from .metrics import (
    DEFAULT_REGIONS,
    RegionSpec,
    evaluate_case,
    summarize,
    write_report_csv,
    write_report_json,
)
from .nifti import load_label_map, load_volume, save_label_map, save_volume
from .phantom import PhantomSpec, generate_phantom
from .predictors import ConstantPredictor, PerturbedPredictor, ThresholdPredictor
from .uncertainty import entropy_map
from .volume import normalize


class UsageError(Exception):
    """Bad input or configuration; maps to exit code 2."""


def _load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON in {path}: {exc}") from exc


def build_predictor(spec: dict):
    """Instantiate a predictor from its config document."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise UsageError(f"predictor spec must be an object with a 'type': {spec!r}")
    kind = spec["type"]
    if kind == "threshold":
        return ThresholdPredictor(
            spec["thresholds"],
            channel=spec.get("channel", 0),
            softness=spec.get("softness", 0.0),
            channels=spec.get("channels", 1),
        )
    if kind == "constant":
        return ConstantPredictor(spec["probs"], channels=spec.get("channels", 1))
    if kind == "perturbed":
        base = build_predictor(spec["base"])
        return PerturbedPredictor(base, spec["flip_rate"], spec.get("seed", 0))
    if kind == "external":
        command = spec["command"]
        if isinstance(command, str):
            command = shlex.split(command)
        timeout = spec.get("timeout", 300.0)
        pool = int(spec.get("pool", 1))
        if pool > 1:
            return ExternalPredictorPool(command, pool, timeout)
        return ExternalPredictor(command, timeout)
    raise UsageError(f"unknown predictor type {kind!r}")


def _parse_predictor_flag(value: str) -> dict:
    value = value.strip()
    if value.startswith("{"):
        return json.loads(value)
    return _load_json(value)


def _resolve_run_config(args) -> dict:
    config = dict(_load_json(args.config)) if args.config else {}
    if "config" in config and "samples" in config:
        # a run manifest was passed; rerun from its embedded config
        config = dict(config["config"])
    if args.input:
        config["inputs"] = list(args.input)
    if args.out:
        config["output_dir"] = args.out
    if args.predictor:
        config["predictor"] = _parse_predictor_flag(args.predictor)
    if args.seed is not None:
        config["seed"] = args.seed
    if args.samples is not None:
        config["num_samples"] = args.samples
    if args.fusion:
        config["fusion"] = args.fusion
    if args.no_normalize:
        config["normalize"] = False
    if args.save_samples:
        config["save_samples"] = True
    config.setdefault("normalize", True)
    config.setdefault("num_samples", 20)
    config.setdefault("seed", 0)
    config.setdefault("fusion", "majority-vote")
    config.setdefault("save_samples", False)
    if not config.get("inputs"):
        raise UsageError("no input volumes given (use --input or config 'inputs')")
    if not config.get("output_dir"):
        raise UsageError("no output directory given (use --out or config 'output_dir')")
    if "predictor" not in config:
        raise UsageError("no predictor given (use --predictor or config 'predictor')")
    return config


def _effective_seed(root_seed, case_index: int, num_cases: int):
    if num_cases == 1:
        return root_seed
    if isinstance(root_seed, list):
        return root_seed + [case_index]
    return [root_seed, case_index]


def _as_seed(value):
    """Config seeds may be an int or a list of ints (split streams)."""
    if isinstance(value, list):
        return tuple(int(v) for v in value)
    return int(value)


def cmd_run(args) -> int:
    config = _resolve_run_config(args)
    out_dir = Path(config["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [Path(p) for p in config["inputs"]]
    for p in inputs:
        if not p.exists():
            raise UsageError(f"input volume not found: {p}")

    predictor = build_predictor(config["predictor"])
    prior = AugmentationPrior.from_json(config.get("prior", {}))
    class_labels = config.get("class_labels")

    for case_index, path in enumerate(inputs):
        started = time.monotonic()
        case = path.stem
        volume = load_volume(path)
        if config["normalize"]:
            volume = normalize(volume)
        seed = _effective_seed(config["seed"], case_index, len(inputs))
        tta_cfg = TtaConfig(
            num_samples=config["num_samples"],
            prior=prior,
            seed=_as_seed(seed),
            fusion=config["fusion"],
            keep_samples=True,
            class_labels=tuple(class_labels) if class_labels else None,
        )
        result = run_tta(volume, predictor, tta_cfg, jobs=args.jobs,
                         check_normalization=config["normalize"])

        seg_path = out_dir / f"{case}_seg.nii"
        unc_path = out_dir / f"{case}_uncertainty.nii"
        save_label_map(result.labels, seg_path)
        save_volume(entropy_map(result.stack).as_volume(), unc_path)

        case_config = dict(config)
        case_config["inputs"] = [str(path)]
        case_config["seed"] = seed
        manifest = {
            "case": case,
            "version": __version__,
            "config": case_config,
            "effective_seed": seed,
            "samples": [p.to_json() for p in result.params],
            "outputs": {
                "segmentation": seg_path.name,
                "uncertainty": unc_path.name,
            },
        }
        if config["save_samples"]:
            samples_dir = out_dir / f"{case}_samples"
            samples_dir.mkdir(exist_ok=True)
            for i, m in enumerate(result.stack.maps):
                save_label_map(m, samples_dir / f"sample_{i:03d}_seg.nii")
            manifest["outputs"]["samples_dir"] = samples_dir.name
        if args.timings:
            manifest["timings"] = {"total_s": time.monotonic() - started}
        manifest_path = out_dir / f"{case}_manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        print(f"{case}: wrote {seg_path.name}, {unc_path.name}, {manifest_path.name}")
    return 0


def _parse_regions(value) -> tuple[RegionSpec, ...]:
    if value is None:
        return DEFAULT_REGIONS
    doc = json.loads(value) if value.strip().startswith("{") else _load_json(value)
    return tuple(RegionSpec(name, tuple(labels)) for name, labels in doc.items())


def cmd_eval(args) -> int:
    gt_dir = Path(args.gt)
    pred_dir = Path(args.pred)
    for d in (gt_dir, pred_dir):
        if not d.is_dir():
            raise UsageError(f"not a directory: {d}")
    regions = _parse_regions(args.regions)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    gt_files = sorted(gt_dir.glob("*.nii"))
    if not gt_files:
        raise UsageError(f"no .nii files in {gt_dir}")
    cases = {}
    for gt_path in gt_files:
        case = gt_path.stem
        candidates = [pred_dir / gt_path.name, pred_dir / f"{case}_seg.nii"]
        pred_path = next((c for c in candidates if c.exists()), None)
        if pred_path is None:
            raise UsageError(f"no prediction for case {case!r} in {pred_dir}")
        gt = load_label_map(gt_path)
        pred = load_label_map(pred_path)
        cases[case] = evaluate_case(pred, gt, regions)

    summary = summarize(cases.values())
    write_report_json(out_dir / "report.json", cases, summary)
    write_report_csv(out_dir / "report.csv", cases)
    print(f"evaluated {len(cases)} case(s); wrote report.json and report.csv "
          f"to {out_dir}")
    return 0


def cmd_phantom(args) -> int:
    spec = PhantomSpec.from_json(_load_json(args.spec)) if args.spec else PhantomSpec()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    volume, gt = generate_phantom(spec, args.seed)
    name = args.name
    save_volume(volume, out_dir / f"{name}_image.nii")
    save_label_map(gt, out_dir / f"{name}_gt.nii")
    doc = {"seed": args.seed, "spec": spec.to_json()}
    (out_dir / f"{name}_spec.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {name}_image.nii, {name}_gt.nii, {name}_spec.json to {out_dir}")
    return 0


def cmd_experiment(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = ExperimentConfig(trials=args.trials, num_samples=args.samples,
                              flip_rate=args.flip_rate)

    def sink(kind, trial, obj):
        if kind == "gt":
            save_label_map(obj, out_dir / "gt.nii")
        elif kind == "segmentation":
            save_label_map(obj, out_dir / f"trial_{trial:02d}_seg.nii")
        elif kind == "uncertainty":
            save_volume(obj.as_volume(), out_dir / f"trial_{trial:02d}_uncertainty.nii")

    verdict = run_experiment(args.seed, config, artifact_sink=sink)
    (out_dir / "verdict.json").write_text(
        json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    print(f"TTA improves fused Dice in {verdict['improved_trials']}/"
          f"{config.trials} trials (need {verdict['min_improved']}); "
          f"boundary entropy dominates in {verdict['boundary_trials']}/"
          f"{config.trials}; control delta "
          f"{verdict['control']['abs_delta']:.3f} Dice points")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttaseg",
        description="Test-time augmentation engine for 3D multi-class segmentation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="TTA inference on one or more volumes")
    run.add_argument("--config", help="JSON config document (or a run manifest)")
    run.add_argument("--input", action="append", help="input volume (.nii); repeatable")
    run.add_argument("--out", help="output directory")
    run.add_argument("--predictor", help="predictor spec: inline JSON or a JSON file")
    run.add_argument("--seed", type=json.loads, default=None,
                     help="run seed: integer or JSON list of integers")
    run.add_argument("--samples", type=int, default=None,
                     help="number of Monte Carlo samples (default 20)")
    run.add_argument("--fusion", choices=("majority-vote", "prob-average"))
    run.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                     help="parallel sample evaluations (concurrent-safe "
                          "predictors); default: available cores")
    run.add_argument("--no-normalize", action="store_true",
                     help="skip per-channel z-normalization of the input")
    run.add_argument("--save-samples", action="store_true",
                     help="also write the per-sample label maps")
    run.add_argument("--timings", action="store_true",
                     help="record wall-clock timings in the manifest "
                          "(breaks byte-reproducibility)")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="evaluate predictions against ground truth")
    ev.add_argument("--pred", required=True, help="directory with predicted label maps")
    ev.add_argument("--gt", required=True, help="directory with ground-truth label maps")
    ev.add_argument("--regions", help="region spec: inline JSON or a JSON file "
                                      '(default {"ET":[4],"WT":[1,2,4],"TC":[1,4]})')
    ev.add_argument("--out", required=True, help="output directory for reports")
    ev.set_defaults(func=cmd_eval)

    ph = sub.add_parser("phantom", help="generate a nested-sphere phantom")
    ph.add_argument("--spec", help="phantom spec JSON file (defaults when omitted)")
    ph.add_argument("--seed", type=int, default=0)
    ph.add_argument("--out", required=True, help="output directory")
    ph.add_argument("--name", default="phantom")
    ph.set_defaults(func=cmd_phantom)

    ex = sub.add_parser("experiment",
                        help="run the synthetic fused-vs-single-sample experiment")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--out", required=True, help="output directory")
    ex.add_argument("--trials", type=int, default=20)
    ex.add_argument("--samples", type=int, default=20)
    ex.add_argument("--flip-rate", type=float, default=0.2)
    ex.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except TtaSegError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is an internal error
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
