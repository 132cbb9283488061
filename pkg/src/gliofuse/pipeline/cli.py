"""``gliofuse`` command line.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..clsnet import classify
from ..fusion import DEFAULT_GRID, fuse, grid_search_alpha
from ..phantom import generate_cohort
from ..segnet import segment_volume
from ..voxio import (CaseRecord, LabelMask, NiftiError, discover_cases, load_case, load_cases,
                     preprocess_case, read_nifti_array, save_case, split_dataset, write_nifti,
                     write_nifti_array)
from ..voxio.nifti import NiftiHeader
from .checkpoint import CheckpointError, load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, derive_seed, desk_preset, load_config
from .evaluate import (REPORT_NAME, classification_report, compare_runs, dumps, evaluate_dirs,
                       evaluate_files)
from .gradsuite import run_suite
from .train import TrainingDiverged, classification_samples, slice_samples, train_model, volume_samples

FUSED_SUFFIX = "fused"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of dotted-key overrides")
    p.add_argument("--preset", choices=("full", "desk"), default="full")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gliofuse", description="2D/3D UNET fusion and subclass classification")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="write synthetic phantom cases in BraTS layout")
    _common(p)
    p.add_argument("--cases", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--shape", type=int, nargs=3, default=(32, 32, 32))
    p.add_argument("--noise", type=float, default=0.02)

    p = sub.add_parser("preprocess", help="normalise, crop and remap labels")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, nargs=3)

    p = sub.add_parser("train-seg", help="train a 2D or 3D UNET")
    _common(p)
    p.add_argument("--mode", choices=("2d", "3d"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--base", type=int)
    p.add_argument("--no-augment", action="store_true")

    p = sub.add_parser("fuse", help="fuse 2D and 3D probability maps")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--seg2d", required=True, help="2D checkpoint")
    p.add_argument("--seg3d", required=True, help="3D checkpoint")
    p.add_argument("--out", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float)
    g.add_argument("--grid", action="store_true", help="grid-search alpha on the validation cases")

    p = sub.add_parser("train-cls", help="train the subclass classifier on fused slices")
    _common(p)
    p.add_argument("--fused", required=True)
    p.add_argument("--data", required=True, help="preprocessed cases holding the truth masks")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--width-scale", type=float)

    p = sub.add_parser("evaluate", help="segmentation (and optional classification) report")
    p.add_argument("--pred", help="single predicted label file")
    p.add_argument("--truth", help="single truth label file")
    p.add_argument("--pred-dir")
    p.add_argument("--data", help="truth cases in BraTS layout")
    p.add_argument("--cls", help="classifier checkpoint; adds a per-slice classification block")
    p.add_argument("--out", help="directory for report.json")

    p = sub.add_parser("gradcheck", help="finite-difference audit of every primitive and loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-case", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("report", help="compare runs with ANOVA and Kruskal-Wallis")
    p.add_argument("--compare", nargs="+", required=True, metavar="RUN")
    p.add_argument("--metric", default="dice")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = desk_preset() if getattr(args, "preset", "full") == "desk" else RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    for flag, key in (("epochs", "epochs"), ("lr", "lr"), ("batch", "batch")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[f"{'cls' if args.command == 'train-cls' else 'seg'}.{key}"] = v
    if getattr(args, "mode", None):
        overrides["seg.mode"] = args.mode
        if cfg.seg.unet is not None:
            overrides["seg.unet.spatial_rank"] = int(args.mode[0])
    if getattr(args, "depth", None) is not None:
        overrides["seg.unet.depth"] = args.depth
    if getattr(args, "base", None) is not None:
        overrides["seg.unet.base_channels"] = args.base
    if getattr(args, "no_augment", False):
        overrides["seg.augment"] = False
    if getattr(args, "width_scale", None) is not None:
        overrides["cls.resnet.width_scale"] = args.width_scale
    # mode first so a default spec is created with the right rank
    if "seg.mode" in overrides:
        apply_overrides(cfg, {"seg.mode": overrides.pop("seg.mode")})
    return apply_overrides(cfg, overrides)


def _out(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_generate(args, cfg: RunConfig) -> int:
    out = _out(args.out)
    for case in generate_cohort(args.cases, tuple(args.shape), derive_seed(cfg.seed, "generate"), args.noise):
        # stored with the raw enhancing-tumour code 4, as distributed datasets do
        raw = case.mask.labels.copy()
        raw[raw == 3] = 4
        save_case(out, CaseRecord(case.case_id, case.modalities, LabelMask(raw, case.mask.spacing)))
    print(f"wrote {args.cases} cases to {out}")
    return 0


def cmd_preprocess(args, cfg: RunConfig) -> int:
    out = _out(args.out)
    target = tuple(args.target) if args.target else tuple(cfg.crop)
    ids = discover_cases(args.data)
    if not ids:
        raise ValueError(f"no cases under {args.data}")
    for cid in ids:
        save_case(out, preprocess_case(load_case(args.data, cid), target))
    split = split_dataset(ids, cfg.split_ratio, derive_seed(cfg.seed, "split"))
    (out / "split.json").write_text(dumps({"train": list(split.train), "validation": list(split.validation),
                                           "seed": split.seed}))
    print(f"preprocessed {len(ids)} cases to {out}")
    return 0


def _split(data_dir, cfg: RunConfig, ids):
    path = Path(data_dir) / "split.json"
    if path.exists():
        s = json.loads(path.read_text())
        return list(s["train"]), list(s["validation"])
    split = split_dataset(ids, cfg.split_ratio, derive_seed(cfg.seed, "split"))
    return list(split.train), list(split.validation)


def cmd_train_seg(args, cfg: RunConfig) -> int:
    out = _out(args.out)
    cases = {c.case_id: c for c in load_cases(args.data, require_mask=True)}
    if not cases:
        raise ValueError(f"no labelled cases under {args.data}")
    train_ids, val_ids = _split(args.data, cfg, sorted(cases))
    make = slice_samples if args.mode == "2d" else volume_samples
    train = make([cases[i] for i in train_ids])
    val = make([cases[i] for i in val_ids]) if val_ids else None
    kind = f"seg{args.mode}"
    result = train_model(kind, cfg, train, val, log_path=out / f"{kind}_log.csv")
    result.best.meta.update({"train": train_ids, "validation": val_ids})
    save_checkpoint(out / f"{kind}.ckpt", result.best)
    print(f"{kind}: best validation dice {result.best_metric:.4f} at epoch {result.best_epoch}")
    return 0


def _load_model(path, kind_prefix):
    ckpt = load_checkpoint(path)
    if not ckpt.kind.startswith(kind_prefix):
        raise ValueError(f"{path}: expected a {kind_prefix} checkpoint, found {ckpt.kind}")
    return ckpt, model_from_checkpoint(ckpt)


def cmd_fuse(args, cfg: RunConfig) -> int:
    out = _out(args.out)
    ck2, m2 = _load_model(args.seg2d, "seg2d")
    _, m3 = _load_model(args.seg3d, "seg3d")
    cases = load_cases(args.data)
    if not cases:
        raise ValueError(f"no cases under {args.data}")
    maps = {c.case_id: (segment_volume(m2, c, "2d"), segment_volume(m3, c, "3d")) for c in cases}
    alpha = cfg.fusion.alpha if args.alpha is None else args.alpha
    if args.grid or (cfg.fusion.grid and args.alpha is None):
        val_ids = set(ck2.meta.get("validation") or [])
        pool = [c for c in cases if c.mask is not None and (not val_ids or c.case_id in val_ids)]
        if not pool:
            raise ValueError("grid search needs labelled validation cases")
        alpha, table = grid_search_alpha([(*maps[c.case_id], c.mask.labels) for c in pool], DEFAULT_GRID)
        with open(out / "alpha_scores.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("alpha", "mean_dice"))
            for a, s in table:
                w.writerow((a, repr(s)))
    for c in cases:
        fused = fuse(*maps[c.case_id], alpha).astype(np.float32)
        folder = _out(out / c.case_id)
        # class axis last, as 4D NIfTI images store it
        grid = np.moveaxis(fused, 0, -1)
        write_nifti_array(folder / f"{c.case_id}_{FUSED_SUFFIX}.nii", NiftiHeader.for_array(grid), grid)
        write_nifti(folder / f"{c.case_id}_pred.nii", None, LabelMask(fused.argmax(axis=0).astype(np.uint8)))
    (out / "fusion.json").write_text(dumps({"alpha": alpha, "cases": [c.case_id for c in cases]}))
    print(f"fused {len(cases)} cases at alpha {alpha}")
    return 0


def read_fused(folder, case_id) -> np.ndarray:
    _, grid = read_nifti_array(Path(folder) / case_id / f"{case_id}_{FUSED_SUFFIX}.nii")
    if grid.ndim != 4 or grid.shape[-1] != 4:
        raise ValueError(f"{case_id}: fused map must be (D, H, W, 4), got {grid.shape}")
    return np.moveaxis(grid, -1, 0).astype(np.float32)


def _cls_samples(fused_dir, data_dir, ids):
    fused = [read_fused(fused_dir, cid) for cid in ids]
    masks = [load_case(data_dir, cid, require_mask=True).mask.labels for cid in ids]
    return classification_samples(fused, masks, ids)


def cmd_train_cls(args, cfg: RunConfig) -> int:
    out = _out(args.out)
    ids = [p.name for p in sorted(Path(args.fused).iterdir())
           if p.is_dir() and (p / f"{p.name}_{FUSED_SUFFIX}.nii").exists()]
    if not ids:
        raise ValueError(f"no fused maps under {args.fused}")
    train_ids, val_ids = _split(args.data, cfg, ids)
    train_ids = [i for i in train_ids if i in ids]
    val_ids = [i for i in val_ids if i in ids]
    train = _cls_samples(args.fused, args.data, train_ids)
    val = _cls_samples(args.fused, args.data, val_ids) if val_ids else None
    result = train_model("cls", cfg, train, val, log_path=out / "cls_log.csv")
    result.best.meta.update({"train": train_ids, "validation": val_ids})
    save_checkpoint(out / "cls.ckpt", result.best)
    print(f"cls: best validation accuracy {result.best_metric:.4f} at epoch {result.best_epoch}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if args.pred or args.truth:
        if not (args.pred and args.truth):
            raise UsageError("evaluate: --pred and --truth go together")
        sys.stdout.write(evaluate_files(args.pred, args.truth).to_json() + "\n")
        return 0
    if not (args.pred_dir and args.data):
        raise UsageError("evaluate: give --pred/--truth or --pred-dir/--data")
    report = evaluate_dirs(args.pred_dir, args.data)
    if args.cls:
        _, model = _load_model(args.cls, "cls")
        samples = _cls_samples(args.pred_dir, args.data, sorted(report["cases"]))
        _, labels = classify(model, samples.x)
        report["classification"] = classification_report(labels, samples.y)
    text = dumps(report)
    if args.out:
        path = _out(args.out) / REPORT_NAME
        path.write_text(text)
        agg = report["aggregate"]
        print(f"{len(report['cases'])} cases: mean foreground dice {agg['dice']['macro']:.4f}, "
              f"total dice {agg['total_dice']:.4f}; report at {path}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    entries = run_suite(args.seed, args.per_case, args.tol)
    for e in entries:
        status = "PASS" if e.report.passed else "FAIL"
        print(f"{status} {e.name:<18} shape={e.shape} max_rel_error={e.report.max_rel_error:.3e}")
    failed = sum(not e.report.passed for e in entries)
    print(f"{len(entries) - failed}/{len(entries)} checks passed")
    return 0 if failed == 0 else 2


def cmd_report(args, cfg: RunConfig) -> int:
    sys.stdout.write(dumps(compare_runs(args.compare, args.metric)))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train-seg": cmd_train_seg,
    "fuse": cmd_fuse,
    "train-cls": cmd_train_cls,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        cfg = resolve_config(args)
        cfg = replace(cfg, task=args.command)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, NiftiError, CheckpointError, TrainingDiverged, KeyError) as exc:
        print(f"gliofuse: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
