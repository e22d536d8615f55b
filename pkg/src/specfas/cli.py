"""Command line entry point: gen-data, embed, train, eval, score.

Exit status: 0 ok, 1 usage error, 2 data or format error, 3 numerical abort.
Model code is imported only by the commands that need it, so ``score`` runs
on the metrics module alone.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("specfas")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _echo(command: str, items: dict) -> None:
    print(f"# {command}", file=sys.stderr)
    for k, v in items.items():
        print(f"#   {k} = {v}", file=sys.stderr)


def _path(args, p: str | None) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        lo, hi, step = (float(t) for t in text.split(":"))
        n = int(round((hi - lo) / step))
        return [round(lo + i * step, 12) for i in range(n + 1)]
    return sorted(float(t) for t in text.split(",") if t.strip())


def directory_digest(root: str | Path) -> str:
    """SHA-256 over relative paths and contents of every file under ``root``."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


# -- commands --------------------------------------------------------------
def cmd_gen_data(args) -> int:
    from .dataio import generate_synthetic, split_counts

    out = _path(args, args.out)
    _echo("gen-data", {"seed": args.seed, "scale": args.scale, "height": args.height, "width": args.width,
                       "out": out})
    if not 0.0 < args.scale <= 1.0:
        raise UsageError(f"--scale must lie in (0, 1], got {args.scale}")
    if args.height < 16 or args.width < 16:
        raise UsageError("--height and --width must be >= 16")
    generate_synthetic(out, args.seed, args.scale, args.height, args.width)
    for split, (f, r) in split_counts(args.scale).items():
        print(f"{split}: {f} fake, {r} real")
    print(f"digest {directory_digest(out)}")
    return EXIT_OK


def cmd_embed(args) -> int:
    from .dataio import DatasetManifest, load_sample
    from .strategies import FileEmbeddingProvider, RandomProjectionEmbedder, write_embeddings

    manifest = DatasetManifest.read(_path(args, args.manifest))
    out = _path(args, args.out)
    _echo("embed", {"manifest": args.manifest, "provider": args.provider, "dim": args.dim, "seed": args.seed,
                    "out": out})
    if args.provider == "random":
        provider = RandomProjectionEmbedder(args.dim, args.seed)
    else:
        if not args.source:
            raise UsageError("--provider file needs --source")
        provider = FileEmbeddingProvider.read(_path(args, args.source))
    rows = []
    for e in manifest.entries:
        s = load_sample(manifest.resolve(e), e.label, e.identity_tag, e.id)
        rows.append((e.id, provider.embed(s)))
    write_embeddings(out, rows)
    print(f"wrote {len(rows)} embeddings to {out}")
    return EXIT_OK


def _data_manifest(args, data: str, split: str):
    from .dataio import DatasetManifest

    p = _path(args, data)
    if p.is_dir():
        p = p / f"{split}.tsv"
    return DatasetManifest.read(p, split)


def cmd_train(args) -> int:
    import numpy as np

    from .estimator import SpectralFASClassifier
    from .metrics import format_csv
    from .strategies import read_embeddings
    from .trainer import RunConfig, parse_config_text

    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_file(_path(args, args.config))
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.epochs is not None:
        overrides["train.epochs"] = str(args.epochs)
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    try:
        cfg = cfg.with_overrides(overrides)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None

    train_man = _data_manifest(args, args.data, "train")
    X, y = train_man.load_arrays(args.workers)
    cfg = cfg.with_overrides({"model.height": str(X.shape[1]), "model.width": str(X.shape[2])})
    _echo("train", {"data": args.data, "out": args.out, "workers": args.workers, **cfg.items()})

    emb = None
    if args.embeddings:
        table = read_embeddings(_path(args, args.embeddings))
        emb = np.stack([table[e.id] for e in train_man.entries])

    out = _path(args, args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    log_path = out / "train.log"
    log_path.write_text("", encoding="utf-8")

    def on_epoch(rep):
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(rep.to_json() + "\n")
        print(f"epoch {rep.epoch}: loss {rep.mean_loss:.6f} focal {rep.mean_focal:.6f} "
              f"supcon {rep.mean_supcon:.6f} bank {rep.bank_size}", flush=True)

    est = SpectralFASClassifier.from_run_config(cfg)
    est.fit(X, y, face_embeddings=emb, on_epoch=on_epoch)
    est.model_.save(out / "checkpoint.spfk", cfg.items())

    val_path = _path(args, args.data)
    val_path = val_path / "val.tsv" if val_path.is_dir() else None
    if val_path is not None and val_path.exists():
        from .dataio import DatasetManifest
        val = DatasetManifest.read(val_path, "val")
        Xv, yv = val.load_arrays(args.workers)
        report = est.acer_report(Xv, yv, args.threshold)
        (out / "metrics.csv").write_text(format_csv([report]), encoding="utf-8")
        print(f"val APCER {report.apcer:.4f}% BPCER {report.bpcer:.4f}% ACER {report.acer:.4f}%")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import acer_report, confusion, format_csv, format_table, write_scores
    from .model import SpectralFASNet

    ckpt = _path(args, args.checkpoint)
    model, header = SpectralFASNet.load(ckpt)
    man = _data_manifest(args, args.manifest, "val")
    _echo("eval", {"checkpoint": ckpt, "manifest": args.manifest, "threshold": args.threshold})
    if len(man) == 0:
        raise ValueError("manifest is empty")
    X, y = man.load_arrays(args.workers)
    probs = model.predict_proba(X)[:, 1]
    scores = {e.id: float(p) for e, p in zip(man.entries, probs)}
    labels = {e.id: str(e.label) for e in man.entries}
    report = acer_report(confusion(scores, labels, args.threshold), args.threshold)
    if args.scores_out:
        write_scores(_path(args, args.scores_out), scores)
    print(format_csv([report]) if args.csv else format_table([report]))
    return EXIT_OK


def cmd_score(args) -> int:
    from .metrics import evaluate_scores, format_csv, format_table, read_labels, read_scores, threshold_sweep

    _echo("score", {"scores": args.scores, "labels": args.labels, "threshold": args.threshold,
                    "sweep": args.sweep})
    scores = read_scores(_path(args, args.scores))
    labels = read_labels(_path(args, args.labels))
    if args.sweep:
        reports = threshold_sweep(scores, labels, _parse_grid(args.sweep))
    else:
        reports = [evaluate_scores(scores, labels, args.threshold)]
    print(format_csv(reports) if args.csv else format_table(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="specfas", description=__doc__.splitlines()[0])
    parser.add_argument("--workdir", default=".", help="base directory for relative paths")
    parser.add_argument("--workers", type=int, default=1, help="parallel sample loaders")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic spectral face dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("embed", help="write face embeddings for reweighting")
    p.add_argument("--manifest", required=True)
    p.add_argument("--provider", choices=("random", "file"), default="random")
    p.add_argument("--source", help="precomputed embedding file for --provider file")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train and write checkpoint, log and validation metrics")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="dataset directory (train.tsv, optional val.tsv) or manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--embeddings", help="face embedding file from `embed`")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a labelled manifest with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--scores-out")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="metrics from a score file and labels")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--threshold", type=float, default=0.5)
    g.add_argument("--sweep", help="lo:hi:step or comma-separated thresholds")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_score)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, ZeroDivisionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
