"""Command-line entry point: phantom generation, resampling, training,
prediction and evaluation.

Options may come from flags or an optional key=value config file
(flags win). Every run writes an effective-config dump next to its
outputs so any result can be reproduced from the dump plus the seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import metrics, pipeline, unet
from .checkpoint import load_checkpoint, save_checkpoint
from .nrrd import read_nrrd, write_nrrd
from .phantom import PhantomSpec, generate_phantom
from .preprocess import threshold_gtv30
from .resample import ResampleSpec, resample
from .rng import stream_rng


class CliError(Exception):
    pass


def _load_config_file(path):
    values = {}
    with open(path) as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    return values


def _apply_config_file(args, parser_defaults):
    """File values fill in options the command line left at their default."""
    if not getattr(args, "config", None):
        return args
    values = _load_config_file(args.config)
    for key, val in values.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) != parser_defaults.get(key):
            continue  # explicit flag wins
        current = parser_defaults.get(key)
        if isinstance(current, bool):
            setattr(args, key, val.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(val))
        elif isinstance(current, float):
            setattr(args, key, float(val))
        else:
            setattr(args, key, val)
    return args


def _dump_effective_config(args, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "effective_config.txt")
    with open(path, "w") as f:
        for key in sorted(vars(args)):
            if key in ("func", "config", "subparser"):
                continue
            f.write(f"{key}={getattr(args, key)}\n")


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("VSEG_THREADS")
    return int(env) if env else 1


def _parse_spacing(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise CliError(f"spacing must be three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


# -- subcommands --

def cmd_phantom(args):
    if args.count < 1:
        raise CliError("--count must be at least 1")
    _dump_effective_config(args, args.out)
    entries = []
    for i in range(args.count):
        case_seed = int(stream_rng(args.seed, "phantom", i).integers(2 ** 31))
        spec = PhantomSpec(seed=case_seed, dims=(args.grid,) * 3)
        case = generate_phantom(spec, case_id=f"case_{i:03d}")
        case_dir = os.path.join(args.out, case.case_id)
        os.makedirs(case_dir, exist_ok=True)
        paths = {}
        for name, vol in (("pet", case.pet), ("prostate", case.prostate),
                          ("gtv", case.gtv_label), ("histo", case.histo_ref)):
            p = os.path.join(case_dir, f"{name}.nrrd")
            write_nrrd(vol, p)
            paths[name] = os.path.relpath(p, args.out)
        entries.append({
            "id": case.case_id,
            "pet_path": paths["pet"],
            "prostate_path": paths["prostate"],
            "gtv_path": paths["gtv"],
            "histo_path": paths["histo"],
        })
    pipeline.write_manifest(entries, os.path.join(args.out, "manifest.json"))
    print(f"wrote {args.count} phantom case(s) to {args.out}")
    return 0


def cmd_resample(args):
    vol = read_nrrd(args.input, kind=args.kind or None)
    spec = ResampleSpec(target_spacing=_parse_spacing(args.spacing),
                        method=args.method)
    out = resample(vol, spec)
    write_nrrd(out, args.out)
    print(f"resampled {vol.dims} @ {vol.spacing} -> {out.dims} @ {out.spacing}")
    return 0


def cmd_train(args):
    cases = pipeline.load_manifest(args.manifest)
    cfg = pipeline.TrainConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                               crop=args.crop, base_channels=args.base_channels,
                               eval_fraction=args.eval_fraction)
    _dump_effective_config(args, args.out)
    train_cases, eval_cases = pipeline.split_cohort(cases, cfg.eval_fraction, cfg.seed)
    print(f"training on {len(train_cases)} cases, evaluating on {len(eval_cases)}")

    def progress(row):
        print("epoch {epoch}: train_loss={train_loss:.4f} eval_loss={eval_loss:.4f} "
              "eval_dsc={eval_dsc:.4f}".format(**row))

    result = pipeline.train(train_cases, eval_cases, cfg, progress=progress)
    pipeline.write_curve_csv(result.curve, os.path.join(args.out, "curves.csv"))
    meta = {"epochs": cfg.epochs, "best_epoch": result.best_epoch,
            "final_train_loss": result.curve[-1]["train_loss"],
            "final_eval_loss": result.curve[-1]["eval_loss"]}
    save_checkpoint(result.model, result.norm_stats,
                    os.path.join(args.out, "checkpoint_final.vseg"), meta)
    save_checkpoint(result.best_model, result.norm_stats,
                    os.path.join(args.out, "checkpoint_best.vseg"),
                    {**meta, "selected": "best_eval_loss"})
    print(f"done; best epoch {result.best_epoch}, "
          f"final eval loss {result.curve[-1]['eval_loss']:.4f}")
    return 0


def cmd_predict(args):
    t0 = time.perf_counter()
    model, norm_stats, _ = load_checkpoint(args.checkpoint)
    pet = read_nrrd(args.pet, kind="pet")
    prostate = read_nrrd(args.prostate, kind="mask")
    t_load = time.perf_counter() - t0

    mask, timing = pipeline.predict(model, norm_stats, pet, prostate, crop=args.crop)

    t1 = time.perf_counter()
    os.makedirs(args.out, exist_ok=True)
    _dump_effective_config(args, args.out)
    write_nrrd(mask, os.path.join(args.out, "gtv.nrrd"))
    t_store = time.perf_counter() - t1

    timings = {
        "load_sec": t_load,
        "compute_sec": timing["compute_sec"],
        "store_sec": t_store,
        "total_sec": t_load + timing["compute_sec"] + t_store,
    }
    with open(os.path.join(args.out, "timing.json"), "w") as f:
        json.dump(timings, f, indent=2)
    print(f"predicted GTV in {timings['total_sec']:.2f} s "
          f"(load {t_load:.2f}, compute {timing['compute_sec']:.2f}, "
          f"store {t_store:.2f})")
    return 0


def _evaluate_records(pred_by_id, ref_cases):
    records = []
    for case in ref_cases:
        if case.case_id not in pred_by_id:
            raise CliError(f"no prediction for case {case.case_id}")
        pred = pred_by_id[case.case_id]
        ref = case.gtv_label
        if ref is None:
            raise CliError(f"reference manifest lacks a GTV for case {case.case_id}")
        spacing = case.pet.spacing
        rec = metrics.EvaluationRecord(case_id=case.case_id)
        pm = pred.data > 0
        rm = ref.data > 0
        rec.dsc = metrics.dsc(pm, rm)
        if pm.any() and rm.any():
            rec.hd_mm = metrics.hausdorff_mm(pm, rm, spacing)
            rec.assd_mm = metrics.assd_mm(pm, rm, spacing)
        rec.vol_pred_ml = metrics.volume_ml(pm, spacing)
        rec.vol_ref_ml = metrics.volume_ml(rm, spacing)
        if case.histo_ref is not None:
            sens, spec_, nseg = metrics.segment_sens_spec(
                pm, case.histo_ref.data > 0, case.prostate.data > 0)
            rec.sensitivity, rec.specificity, rec.segment_count = sens, spec_, nseg
        records.append(rec)
    return records


def cmd_evaluate(args):
    ref_cases = pipeline.load_manifest(args.ref_manifest)
    os.makedirs(args.out, exist_ok=True)
    _dump_effective_config(args, args.out)

    with open(args.pred_manifest) as f:
        pred_entries = json.load(f)
    base = os.path.dirname(os.path.abspath(args.pred_manifest))
    pred_by_id = {}
    for e in pred_entries:
        p = e["gtv_path"]
        if not os.path.isabs(p):
            p = os.path.join(base, p)
        pred_by_id[str(e["id"])] = read_nrrd(p, kind="mask")

    records = _evaluate_records(pred_by_id, ref_cases)
    metrics.write_case_csv(records, os.path.join(args.out, "cases.csv"))
    metrics.write_summary_csv(metrics.cohort_report(records),
                              os.path.join(args.out, "summary.csv"))

    if args.method == "gtv30":
        baseline = {c.case_id: threshold_gtv30(c.pet, c.prostate)
                    for c in ref_cases}
        records30 = _evaluate_records(baseline, ref_cases)
        metrics.write_case_csv(records30, os.path.join(args.out, "cases_gtv30.csv"))
        metrics.write_summary_csv(metrics.cohort_report(records30),
                                  os.path.join(args.out, "summary_gtv30.csv"))
    print(f"evaluated {len(records)} case(s); reports in {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vseg",
        description="Volumetric PET tumour segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file (flags override)")
        p.add_argument("--seed", type=int, default=0, help="global random seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker count (VSEG_THREADS env is the fallback; "
                            "1 guarantees bit-reproducibility)")

    p = sub.add_parser("phantom", help="generate synthetic PET cases")
    common(p)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--grid", type=int, default=64, help="phantom grid extent (voxels)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantom, subparser=p)

    p = sub.add_parser("resample", help="resample a volume to a target spacing")
    common(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="trilinear",
                   choices=("nearest", "trilinear", "bspline3", "gaussian"))
    p.add_argument("--spacing", default="2,2,2")
    p.add_argument("--kind", choices=("pet", "mask"), default=None)
    p.set_defaults(func=cmd_resample, subparser=p)

    p = sub.add_parser("train", help="train the segmentation network")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=1019)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--eval-fraction", type=float, default=10.0 / 152.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train, subparser=p)

    p = sub.add_parser("predict", help="segment one case with a trained model")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pet", required=True)
    p.add_argument("--prostate", required=True)
    p.add_argument("--crop", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict, subparser=p)

    p = sub.add_parser("evaluate", help="score predictions against references")
    common(p)
    p.add_argument("--pred-manifest", required=True)
    p.add_argument("--ref-manifest", required=True)
    p.add_argument("--method", choices=("gtv30",), default=None,
                   help="also evaluate the SUVmax-threshold baseline")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate, subparser=p)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    # option defaults live on the chosen subparser, not the root parser
    defaults = {k: args.subparser.get_default(k) for k in vars(args)}
    try:
        args = _apply_config_file(args, defaults)
        _threads(args)  # validated; kernels are single-threaded numpy
        return args.func(args)
    except (CliError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
