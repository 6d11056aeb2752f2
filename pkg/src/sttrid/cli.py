"""Command-line entry point: synth, train, eval and gradcheck.

Exit codes: 0 success, 1 validation error, 2 numeric-check failure, 3 I/O error.
Output directories default to ``$STTR_OUTPUT_DIR/<name>`` (or ``./sttr-output``).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

from . import checkpoint
from .fusion import LossWeights
from .model import PHASES
from .synthetic import MODES, CorpusSpec, corpus_meta, generate_corpus, load_corpus, write_corpus
from .training import TrainConfig, evaluate, train

OUTPUT_ENV = "STTR_OUTPUT_DIR"
MANIFEST_FILE = "run_manifest.json"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class NumericCheckFailed(RuntimeError):
    pass


# -- helpers ----------------------------------------------------------------

def default_output(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "sttr-output")) / name


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_manifest(args, out: Path, command: str, config: dict, seeds: dict, inputs: dict,
                   artifacts: list[Path] = (), status: str = "started") -> None:
    manifest = {
        "command": command,
        "argv": args.argv,
        "cwd": os.getcwd(),
        "config": config,
        "seeds": seeds,
        "inputs": inputs,
        "output": str(out),
        "artifacts": {p.name: sha256(p) for p in artifacts},
        "status": status,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    atomic_write(out / MANIFEST_FILE, json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def prepare_output(out: Path, force: bool) -> None:
    if out.exists() and not out.is_dir():
        raise ValueError(f"output path {out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise ValueError(f"output directory {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def parse_init(spec: str | None) -> list[Path]:
    if not spec:
        return []
    if not spec.startswith("from:"):
        raise ValueError("--init must look like from:str.ckpt,ttr.ckpt")
    return [Path(p) for p in spec[len("from:"):].split(",") if p]


def load_init_models(paths: list[Path]) -> dict:
    models = {}
    for path in paths:
        model = checkpoint.checkpoint_load(path)
        for stream in ("str", "ttr"):
            if getattr(model, stream) is not None and stream not in models:
                models[stream] = model
    return models


# -- commands ---------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = CorpusSpec(identity_count=args.identities, clips_per_identity=args.clips, frames_per_clip=args.frames,
                      V=args.vertices, seed=args.seed, mode=args.mode, noise_sigma=args.noise)
    clips, manifest = generate_corpus(spec)
    out = Path(args.out) if args.out else default_output("corpus")
    prepare_output(out, args.force)
    write_manifest(args, out, "synth", asdict(spec), {"seed": args.seed}, {})
    write_corpus(clips, manifest, out, corpus_meta(spec))
    files = sorted(p for p in out.iterdir() if p.name != MANIFEST_FILE)
    write_manifest(args, out, "synth", asdict(spec), {"seed": args.seed}, {}, files, "complete")
    print(f"wrote {len(clips)} keypoint files to {out}")
    return EXIT_OK


def train_config_from_args(args, meta: dict) -> TrainConfig:
    frame_skip = args.frame_skip if args.frame_skip is not None else int(meta.get("frame_skip", 2))
    weights = None
    if args.loss_weights:
        weights = LossWeights(*[float(w) for w in args.loss_weights.split(",")])
    return TrainConfig(
        phase=args.phase, epochs=args.epochs, train_batch=args.train_batch, test_batch=args.test_batch,
        optimizer=args.optimizer, learning_rate=args.lr, weight_decay=args.weight_decay, seed=args.seed,
        loss_weights=weights, warm_start=not args.no_warm_start, frame_skip=frame_skip,
        heads=args.heads, dk_ratio=args.dk_ratio, dv_ratio=args.dv_ratio,
    )


def cmd_train(args) -> int:
    clips, manifest, meta = load_corpus(args.corpus)
    config = train_config_from_args(args, meta)
    init_paths = parse_init(args.init)
    init = load_init_models(init_paths)
    out = Path(args.out) if args.out else default_output(args.phase)
    prepare_output(out, args.force)
    resolved = config.to_dict()
    inputs = {"corpus": str(Path(args.corpus).resolve()), "init": [str(p) for p in init_paths]}
    seeds = {"seed": config.seed, "corpus": meta.get("spec", {}).get("seed")}
    write_manifest(args, out, "train", resolved, seeds, inputs)

    result = train(clips, manifest, config, init=init)
    meta_out = {"train_config": config.to_dict()}
    ckpt = out / "model.ckpt"
    checkpoint.checkpoint_save(result.model, ckpt, result.optimizer, meta_out)
    artifacts = [ckpt]
    for stream, model in result.stage_models.items():
        if stream not in init:
            path = out / f"{stream}.ckpt"
            stage_cfg = TrainConfig.from_dict({**config.to_dict(), "phase": model.phase, "optimizer": None,
                                               "learning_rate": None, "weight_decay": None, "loss_weights": None})
            checkpoint.checkpoint_save(model, path, metadata={"train_config": stage_cfg.to_dict()})
            artifacts.append(path)
    log_path = out / "train.log"
    log_path.write_text(result.log_text(), encoding="utf-8")
    report = evaluate(result.model, clips, manifest, config)
    report_path = out / "eval.json"
    report_path.write_text(report.to_json(), encoding="utf-8")
    artifacts += [log_path, report_path]
    write_manifest(args, out, "train", resolved, seeds, inputs, artifacts, "complete")
    print(report.summary())
    return EXIT_OK


def cmd_eval(args) -> int:
    header, _ = checkpoint.read_checkpoint(args.checkpoint)
    model = checkpoint.checkpoint_load(args.checkpoint)
    if args.phase and args.phase != model.phase:
        raise ValueError(f"checkpoint holds a {model.phase!r} model, --phase asked for {args.phase!r}")
    clips, manifest, _ = load_corpus(args.corpus)
    saved = header.get("metadata", {}).get("train_config")
    config = TrainConfig.from_dict(saved) if saved else TrainConfig(model.phase)
    report = evaluate(model, clips, manifest, config)
    out = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".eval.json")
    atomic_write(out, report.to_json())
    print(report.summary())
    print(f"mAP definition: {report.map_definition}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import run_gradchecks

    results = run_gradchecks()
    print(f"{'operation':<28} {'kind':<9} {'rel. error':>10}   tol    status")
    for r in results:
        print(r.row())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise NumericCheckFailed(", ".join(f"{r.name} ({r.error:.3e})" for r in failed))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Bad flags are validation errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sttrid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a seeded synthetic corpus")
    p.add_argument("--identities", type=int, default=8)
    p.add_argument("--clips", type=int, default=50, help="clips per identity")
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--vertices", type=int, default=17, choices=(17, 133))
    p.add_argument("--mode", choices=MODES, default="mixed")
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one phase on a corpus directory")
    p.add_argument("corpus")
    p.add_argument("--phase", choices=PHASES, required=True)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--train-batch", type=int, default=32)
    p.add_argument("--test-batch", type=int, default=8)
    p.add_argument("--optimizer", choices=("adam", "sgd-momentum"), help="default: phase preset")
    p.add_argument("--lr", type=float, help="default: phase preset")
    p.add_argument("--weight-decay", type=float, help="default: phase preset")
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--dk-ratio", type=float, default=0.25)
    p.add_argument("--dv-ratio", type=float, default=0.25)
    p.add_argument("--loss-weights", help="w_str,w_ttr,w_fusion")
    p.add_argument("--frame-skip", type=int, help="default: from corpus.meta, else 2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", help="warm start, from:str.ckpt,ttr.ckpt")
    p.add_argument("--no-warm-start", action="store_true", help="joint phases start from scratch")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus test split")
    p.add_argument("checkpoint")
    p.add_argument("corpus")
    p.add_argument("--phase", choices=PHASES, help="expected phase; mismatch is an error")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:        # --help, or a bad flag reported by the parser
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
    args.argv = argv
    try:
        return args.func(args)
    except NumericCheckFailed as exc:
        print(f"error: numeric check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
