"""
Command line entry point::

    iterseg phantom  --config CFG --out-image IMG.nrrd --out-mask MASK.nrrd
    iterseg train    --config CFG --dataset-dir DIR --out-model NET.bin [--curve CSV]
    iterseg segment  (--model NET.bin | --oracle --reference MASK.nrrd) --image IMG.nrrd
                     --out-mask OUT.nrrd [--report JSON] [--direction up|down] [--trace JSONL]
    iterseg evaluate --reference MASK.nrrd --automatic OUT.nrrd --report JSON

Exit codes: 0 success, 1 pipeline failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build, load_config
from .metrics import evaluate_scan
from .network import TinyFCN
from .nrrd_io import NrrdFormatError, read_nrrd, write_nrrd
from .phantom import PhantomConfigError, generate
from .pipeline import segment_image
from .segmentor import NetworkSegmentor, OracleSegmentor
from .training import TrainingError, train, write_history_csv
from .traversal import write_trace
from .volume import InstanceMask, VoxelGrid, resample_mask_to_grid

log = logging.getLogger("iterseg")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _versions() -> dict:
    return {"iterseg": __version__, "numpy": np.__version__}


def _load_config(path):
    if path is None:
        return {}
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return load_config(path)


def _read(path, kind):
    if not Path(path).is_file():
        raise UsageError(f"{kind} file not found: {path}")
    volume = read_nrrd(path)
    expected = InstanceMask if kind == "mask" else VoxelGrid
    if not isinstance(volume, expected):
        raise UsageError(f"{path} does not contain a {'uint16 mask' if kind == 'mask' else 'float image'}")
    return volume


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_phantom(args) -> int:
    values = _load_config(args.config)
    cfg = build(values, "phantom")
    image, mask = generate(cfg)
    write_nrrd(image, args.out_image)
    write_nrrd(mask, args.out_mask)
    return EXIT_OK


def _load_dataset(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise UsageError(f"dataset directory not found: {directory}")
    pairs = []
    for image_path in sorted(directory.glob("*_image.nrrd")):
        mask_path = image_path.with_name(image_path.name.replace("_image.nrrd", "_mask.nrrd"))
        if not mask_path.is_file():
            raise UsageError(f"missing mask for {image_path}: expected {mask_path}")
        pairs.append((_read(image_path, "image"), _read(mask_path, "mask")))
    if not pairs:
        raise UsageError(f"no '*_image.nrrd' files in {directory}")
    return pairs


def cmd_train(args) -> int:
    values = _load_config(args.config)
    trainer_cfg = build(values, "trainer")
    net_cfg = build(values, "network")
    loss_cfg = build(values, "loss", n_max=values.get("loss", {}).get("n_max", trainer_cfg.n_max))
    dataset = _load_dataset(args.dataset_dir)
    net, history = train(dataset, net_cfg, trainer_cfg, loss_cfg)
    net.save(args.out_model)
    write_history_csv(history, args.curve or str(args.out_model) + ".csv")
    return EXIT_OK


def cmd_segment(args) -> int:
    values = _load_config(args.config)
    traversal_cfg = build(values, "traversal")
    if args.direction:
        traversal_cfg = replace(traversal_cfg, direction=args.direction)
    pipeline_cfg = build(values, "pipeline")
    image = _read(args.image, "image")

    if args.oracle:
        if not args.reference:
            raise UsageError("--oracle requires --reference")
        reference = _read(args.reference, "mask")

        def factory(working):
            return OracleSegmentor(resample_mask_to_grid(reference, working))
    else:
        if not args.model:
            raise UsageError("either --model or --oracle is required")
        if not Path(args.model).is_file():
            raise UsageError(f"model file not found: {args.model}")
        try:
            net = TinyFCN.load(args.model)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if tuple(net.config.patch_size) != traversal_cfg.patch_size:
            traversal_cfg = replace(traversal_cfg, patch_size=net.config.patch_size, step=None)

        def factory(working):
            return NetworkSegmentor(net, traversal_cfg.direction)

    out = segment_image(image, factory, traversal_cfg, pipeline_cfg.working_spacing)
    write_nrrd(out.mask, args.out_mask)
    if args.trace:
        write_trace(out.result.trace, args.trace)
    report = {
        "scan": str(args.image),
        "direction": traversal_cfg.direction,
        "instances": [
            {"id": r.instance_id, "label": r.final_label, "raw_label_value": r.raw_label_value,
             "completeness_prob": r.completeness_prob, "complete": r.complete,
             "in_output": r.in_output, "converged_center": list(r.converged_center),
             "n_iterations": r.n_iterations, "forced_midpoint": r.forced_midpoint}
            for r in out.result.records],
        "aggregates": {"n_detected": len(out.result.records),
                       "n_output": len(out.mask.instance_ids()),
                       "iterations": out.result.iterations},
        "diagnostic": out.result.diagnostic,
        "versions": _versions(),
    }
    if args.report:
        _write_json(report, args.report)
    if out.result.diagnostic:
        print(f"iterseg: {out.result.diagnostic}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_evaluate(args) -> int:
    reference = _read(args.reference, "mask")
    automatic = _read(args.automatic, "mask")
    if reference.dims != automatic.dims:
        raise UsageError(f"grid mismatch: {reference.dims} vs {automatic.dims}")
    report = evaluate_scan(reference, automatic, scan=str(args.automatic),
                           direction=args.direction).to_dict()
    report["versions"] = _versions()
    _write_json(report, args.report)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iterseg", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic image/mask pair")
    p.add_argument("--config")
    p.add_argument("--out-image", required=True)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="train the patch network")
    p.add_argument("--config")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--out-model", required=True)
    p.add_argument("--curve", help="training-curve CSV (default: <out-model>.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment and label one scan")
    p.add_argument("--config")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model")
    src.add_argument("--oracle", action="store_true")
    p.add_argument("--reference", help="reference mask driving the oracle")
    p.add_argument("--image", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--report")
    p.add_argument("--direction", choices=("up", "down"))
    p.add_argument("--trace", help="write the traversal trace as JSON lines")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="compare an automatic mask with the reference")
    p.add_argument("--reference", required=True)
    p.add_argument("--automatic", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--direction", choices=("up", "down"), default="up")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, NrrdFormatError, OSError) as exc:
        print(f"iterseg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, PhantomConfigError) as exc:
        print(f"iterseg: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
