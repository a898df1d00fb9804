"""Command-line entry points: extract / odin / verify."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionError, ExtractionJob, extract, extract_odin_scores
from .verify import verify_layout


def _add_job_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--backbone", required=True, choices=("resnet18", "resnet50", "swin_t"))
    parser.add_argument("--dataset", required=True, choices=("cifar10", "fake", "imagefolder"))
    parser.add_argument("--split", default="val")
    parser.add_argument("--augment", action="store_true",
                        help="use the backbone's training augmentation")
    parser.add_argument("--batch", type=int, default=64)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--weights", default=None,
                        help="'pretrained' or a state-dict path (default: random init)")
    parser.add_argument("--data-root", default="data")
    parser.add_argument("--limit", type=int, default=None, help="cap the number of samples")
    parser.add_argument("--seed", type=int, default=0)


def _job_from(args: argparse.Namespace, out_dir: str) -> ExtractionJob:
    return ExtractionJob(
        backbone=args.backbone,
        dataset=args.dataset,
        out_dir=out_dir,
        split=args.split,
        augment=args.augment,
        batch_size=args.batch,
        device=args.device,
        weights=args.weights,
        data_root=args.data_root,
        limit=args.limit,
        seed=args.seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowood-extract",
        description="export classifier features/logits/head to an NPY directory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="export a feature directory")
    _add_job_args(p)
    p.add_argument("--out", required=True, help="output feature directory")

    p = sub.add_parser("odin", help="export ODIN scores (needs input gradients)")
    _add_job_args(p)
    p.add_argument("--out", required=True, help="output scores file (.npy)")
    p.add_argument("--temperature", type=float, default=1000.0)
    p.add_argument("--perturbation", type=float, default=0.0014)

    p = sub.add_parser("verify", help="re-validate an exported feature directory")
    p.add_argument("directory")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            out = extract(_job_from(args, args.out))
            print(f"exported {out}")
        elif args.command == "odin":
            out = extract_odin_scores(
                _job_from(args, "."),
                temperature=args.temperature,
                perturbation=args.perturbation,
                out_file=args.out,
            )
            print(f"wrote {out}")
        else:
            report = verify_layout(args.directory)
            print(report.render())
            return 0 if report.ok else 1
    except (ExtractionError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
