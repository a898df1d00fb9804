"""Command-line pipeline: synth -> train -> score -> eval, plus stats/sample.

Every command writes its fully resolved configuration as JSON next to its
outputs, so runs are reproducible from the artifacts alone. Errors exit
nonzero with a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import features, flow, metrics, scores
from .errors import FlowOodError
from .npyio import read_npy, write_npy


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {value!r}")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowood",
        description="OOD detection via feature density estimation with a Glow-style flow",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a flow on a feature directory")
    p.add_argument("--features", required=True, help="ID training feature directory")
    p.add_argument("--val", help="validation feature directory (default: 90/10 split)")
    p.add_argument("--ood-probe", help="OOD feature directory for per-epoch diagnostics")
    p.add_argument("--out", required=True, help="model output file")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--blocks", type=int, default=10)
    p.add_argument("--hidden", type=int, default=2048)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", type=_parse_bool, default=True, metavar="BOOL")
    p.add_argument("--arch", choices=("glow", "realnvp"), default="glow")
    p.add_argument("--eval-every", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score a feature directory")
    p.add_argument("--model", help="flow model file (fde only)")
    p.add_argument("--features", required=True)
    p.add_argument("--method", choices=("fde", "msp", "energy", "react"), required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--react-percentile", type=float, default=90.0)
    p.add_argument("--id-train", help="ID training feature directory (react only)")
    p.add_argument("--normalize", type=_parse_bool, default=True, metavar="BOOL")
    p.add_argument("--out", required=True, help="scores output file (.npy)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="AUROC + histograms for an ID/OOD score pair")
    p.add_argument("--id-scores", required=True)
    p.add_argument("--ood-scores", required=True)
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="feature-space uniformity and tolerance")
    p.add_argument("--features", required=True)
    p.add_argument("--t", type=float, default=2.0)
    p.add_argument("--out", required=True, help="report output file (.json)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample", help="draw feature vectors from a trained flow")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="samples output file (.npy)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("synth", help="generate a synthetic clustered benchmark")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--id-clusters", type=int, default=10)
    p.add_argument("--ood-clusters", type=int, default=5)
    p.add_argument("--per-cluster", type=int, default=500)
    p.add_argument("--spread", type=float, default=0.05)
    p.add_argument("--norm-mean", type=float, default=10.0)
    p.add_argument("--norm-std", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    return parser


def cmd_train(args: argparse.Namespace) -> None:
    train_fs = features.load_feature_set(args.features)
    if args.val:
        val_fs = features.load_feature_set(args.val)
    else:
        train_fs, val_fs = features.split(train_fs, 0.9, seed=args.seed)
    ood = features.load_feature_set(args.ood_probe).features if args.ood_probe else None

    config = flow.TrainConfig(
        blocks=args.blocks,
        hidden_width=args.hidden,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        normalize_features=args.normalize,
        eval_every=args.eval_every,
        arch=args.arch,
    )
    model, history = flow.train(train_fs.features, val_fs.features, ood, config)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    flow.save_model(out, model)
    history.to_csv(out.parent / "history.csv")
    _write_json(
        out.parent / "train_config.json",
        {
            "command": "train",
            "features": args.features,
            "val": args.val,
            "ood_probe": args.ood_probe,
            "out": str(out),
            "blocks": config.blocks,
            "hidden_width": config.hidden_width,
            "learning_rate": config.learning_rate,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "seed": config.seed,
            "normalize_features": config.normalize_features,
            "eval_every": config.eval_every,
            "arch": config.arch,
        },
    )
    final = history.entries[-1]
    msg = f"trained {config.arch} D={model.dim} blocks={config.blocks} val_nll={final.val_nll:.4f}"
    if final.auroc is not None:
        msg += f" auroc={final.auroc:.4f}"
    print(msg)


def cmd_score(args: argparse.Namespace) -> None:
    fs = features.load_feature_set(args.features)
    params_extra: dict = {}
    if args.method == "fde":
        if not args.model:
            raise FlowOodError("fde scoring needs --model")
        model = flow.load_model(args.model)
        sv = scores.fde_score(model, fs, normalize=args.normalize)
    elif args.method in ("msp", "energy"):
        if fs.logits is None:
            raise FlowOodError(f"{args.features}: missing logits.npy (required for {args.method})")
        if args.method == "msp":
            sv = scores.msp_score(fs.logits)
        else:
            sv = scores.energy_score(fs.logits, temperature=args.temperature)
    else:  # react
        if fs.head_weight is None or fs.head_bias is None:
            raise FlowOodError(
                f"{args.features}: missing head_weight.npy / head_bias.npy (required for react)"
            )
        if not args.id_train:
            raise FlowOodError("react scoring needs --id-train to fit the clip threshold")
        id_fs = features.load_feature_set(args.id_train)
        threshold = scores.fit_react_threshold(id_fs.features, percentile=args.react_percentile)
        sv = scores.react_energy_score(fs, threshold, temperature=args.temperature)
        params_extra["react_percentile"] = args.react_percentile

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_npy(out, sv.values.astype(np.float64))

    sidecar: dict = {
        "method": sv.method,
        "params": {**sv.params, **params_extra},
        "model_file": args.model,
        "feature_dir": args.features,
    }
    _, norms = features.l2_normalize(fs.features)
    sidecar["feature_norms"] = [float(v) for v in norms]
    if fs.labels is not None and fs.logits is not None:
        predicted = fs.logits.argmax(axis=1)
        sidecar["correct"] = [int(v) for v in (predicted == fs.labels)]
    _write_json(out.with_suffix(out.suffix + ".json"), sidecar)
    print(f"wrote {out} ({sv.values.size} {sv.method} scores)")


def cmd_eval(args: argparse.Namespace) -> None:
    id_scores = read_npy(args.id_scores)
    ood_scores = read_npy(args.ood_scores)
    method = "unknown"
    sidecar = Path(args.id_scores + ".json")
    if sidecar.exists():
        method = json.loads(sidecar.read_text()).get("method", "unknown")
    report = metrics.evaluate(id_scores, ood_scores, bins=args.bins, method=method)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = {
        "command": "eval",
        "id_scores": args.id_scores,
        "ood_scores": args.ood_scores,
        "bins": args.bins,
    }
    metrics.write_report_json(out / "report.json", report, extra={"config": config})
    metrics.write_histogram_csv(out / "id_hist.csv", report.id_histogram)
    metrics.write_histogram_csv(out / "ood_hist.csv", report.ood_histogram)
    print(f"auroc={report.auroc:.4f} (n_id={report.n_id}, n_ood={report.n_ood})")


def cmd_stats(args: argparse.Namespace) -> None:
    fs = features.load_feature_set(args.features)
    normalized, _ = features.l2_normalize(fs.features)
    report = metrics.geometry_report(normalized, fs.labels, t=args.t)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    config = {"command": "stats", "features": args.features, "t": args.t}
    metrics.write_report_json(out, report, extra={"config": config})
    if report.warning:
        print(f"warning: {report.warning}", file=sys.stderr)
    tol = "n/a" if report.tolerance is None else f"{report.tolerance:.4f}"
    print(f"uniformity={report.uniformity:.4f} tolerance={tol}")


def cmd_sample(args: argparse.Namespace) -> None:
    model = flow.load_model(args.model)
    samples = model.sample(args.n, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_npy(out, samples.astype(np.float32))
    _write_json(
        out.with_suffix(out.suffix + ".json"),
        {"command": "sample", "model": args.model, "n": args.n, "seed": args.seed},
    )
    print(f"wrote {out} [{args.n}x{model.dim}]")


def cmd_synth(args: argparse.Namespace) -> None:
    spec = features.SyntheticSpec(
        dim=args.dim,
        id_clusters=args.id_clusters,
        ood_clusters=args.ood_clusters,
        samples_per_cluster=args.per_cluster,
        cluster_spread=args.spread,
        norm_mean=args.norm_mean,
        norm_std=args.norm_std,
        seed=args.seed,
    )
    id_train, id_val, ood = features.generate_synthetic(spec)
    out = Path(args.out)
    for name, fs in (("id_train", id_train), ("id_val", id_val), ("ood", ood)):
        features.save_feature_set(out / name, fs, meta={"generator": "synthetic", "seed": args.seed})
    _write_json(
        out / "synth_config.json",
        {
            "command": "synth",
            "dim": spec.dim,
            "id_clusters": spec.id_clusters,
            "ood_clusters": spec.ood_clusters,
            "per_cluster": spec.samples_per_cluster,
            "spread": spec.cluster_spread,
            "norm_mean": spec.norm_mean,
            "norm_std": spec.norm_std,
            "seed": spec.seed,
        },
    )
    print(f"wrote {out}/id_train, {out}/id_val, {out}/ood (D={spec.dim})")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (FlowOodError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
