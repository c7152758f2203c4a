"""Command-line entry point: synth, augment, train, eval, downsample, gradcheck.

Exit codes: 0 ok, 2 bad arguments/config, 3 I/O failure, 4 checkpoint or
shape mismatch, 5 gradient check failure. Machine-readable lines on stdout
start with ``RESULT ``.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import gradcheck
from .errors import CorruptCheckpoint, DhrnError, ShapeMismatch, UnreadableFile, VersionMismatch
from .metrics import render_report
from .model import DhrnConfig, build_dhrn, load_checkpoint, save_checkpoint
from .signals import Manifest, SignalFormat, Split, SplitConfig, save_raw_f32, split_dataset
from .swinfft import SPLITS, WindowConfig, augment_split, decimate, load_dataset, save_dataset
from .synth import SynthSpec, write_dataset
from .trainer import TrainConfig, config_dict, evaluate, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CHECKPOINT, EXIT_GRADCHECK = 0, 2, 3, 4, 5

log = logging.getLogger("dhrn")


class UsageError(Exception):
    pass


def result(key: str, **fields) -> None:
    parts = " ".join(f"{k}={v}" for k, v in fields.items())
    print(f"RESULT {key} {parts}".rstrip(), flush=True)


# ---------------------------------------------------------------- run config

_SECTIONS = {
    "split": SplitConfig,
    "window": WindowConfig,
    "model": DhrnConfig,
    "train": TrainConfig,
}


def load_run_config(path) -> dict:
    """Read a run-config JSON: ``{"split": {...}, "window": {...}, "model": {...}, "train": {...}}``.

    Unknown sections or keys are rejected.
    """
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UnreadableFile(f"{path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError(f"{path}: expected a JSON object")
    for section, body in obj.items():
        if section not in _SECTIONS:
            raise UsageError(f"{path}: unknown section {section!r}")
        known = {f.name for f in dataclasses.fields(_SECTIONS[section])}
        extra = set(body) - known
        if extra:
            raise UsageError(f"{path}: unknown keys in {section!r}: {sorted(extra)}")
    return obj


def _merge(section: dict, **flags) -> dict:
    out = dict(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> int:
    spec = SynthSpec(per_class_count=args.per_class, seed=args.seed, signal_len=args.len,
                     sample_rate_hz=args.rate)
    manifest = write_dataset(spec, args.out)
    counts = {}
    for e in manifest.entries:
        counts[e.label.intensity.label] = counts.get(e.label.intensity.label, 0) + 1
    result("synth", signals=len(manifest), **counts)
    return EXIT_OK


def cmd_augment(args) -> int:
    run = load_run_config(args.config)
    manifest = Manifest.load_file(args.manifest)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not manifest.is_split:
        split_cfg = SplitConfig(**_merge(run.get("split", {}), seed=args.seed))
        manifest = split_dataset(manifest, split_cfg)
    wcfg = WindowConfig(**_merge(run.get("window", {}), w_size=args.wsize, stride=args.stride))
    datasets = augment_split(manifest, wcfg, skip_short=True)
    total = sum(len(datasets[s]) for s in SPLITS)
    if total == 0:
        raise UsageError(f"w_size={wcfg.w_size} produced no windows from any signal")
    save_dataset(datasets, out, wcfg)
    # keep the split assignment next to the data, paths made absolute
    split_manifest = Manifest(
        [dataclasses.replace(e, signal_path=str(manifest.resolve(e).resolve())) for e in manifest.entries])
    split_manifest.save(out / "manifest.json")
    result("augment", w_size=wcfg.w_size, spectrum_len=wcfg.spectrum_len,
           **{s.value: len(datasets[s]) for s in SPLITS})
    return EXIT_OK


def _write_reports(ev, out: Path, stem: str):
    text, js = render_report(ev["confusion"], ev["scores"])
    (out / f"{stem}.txt").write_text(text)
    (out / f"{stem}.json").write_text(js)
    return text


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    datasets = load_dataset(args.data)
    input_len = datasets[Split.TRAIN].input_len
    mcfg = DhrnConfig(**_merge(run.get("model", {}), input_len=input_len, width_multiplier=args.width))
    if mcfg.input_len != input_len:
        raise ShapeMismatch(f"model input_len {mcfg.input_len} != data spectrum length {input_len}")
    tcfg = TrainConfig(**_merge(run.get("train", {}), max_epochs=args.epochs, seed=args.seed,
                                batch_size=args.batch_size, learning_rate=args.lr,
                                early_stop_patience=args.patience))
    init_seed = tcfg.seed if args.init_seed is None else args.init_seed
    model = build_dhrn(mcfg, seed=init_seed)
    model, history = train(model, datasets, tcfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.dhrn")
    (out / "history.csv").write_text(history.to_csv())
    (out / "history.json").write_text(history.to_json())
    (out / "timing.json").write_text(json.dumps([r.wall_time for r in history.records]) + "\n")
    (out / "run_config.json").write_text(json.dumps(
        {"model": mcfg.to_json(), "train": config_dict(tcfg)}, indent=2, sort_keys=True) + "\n")
    ev = evaluate(model, datasets[Split.TEST])
    sys.stdout.write(_write_reports(ev, out, "test_report"))
    sc = ev["scores"]
    result("train", epochs=len(history), best_epoch=history.best_epoch,
           test_acc_detection=f"{sc['detection']['accuracy']:.6f}",
           test_acc_intensity=f"{sc['intensity']['accuracy']:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = load_run_config(args.config)
    model = load_checkpoint(args.checkpoint)
    wanted = _merge(run.get("model", {}), width_multiplier=args.width)
    if wanted and dataclasses.replace(model.config, **wanted) != model.config:
        raise VersionMismatch(f"checkpoint config {model.config} does not match requested {wanted}")
    ds = load_dataset(args.data)[Split(args.split)]
    if ds.input_len != model.config.input_len:
        raise ShapeMismatch(f"data spectra have length {ds.input_len}, checkpoint expects {model.config.input_len}")
    ev = evaluate(model, ds)
    text, js = render_report(ev["confusion"], ev["scores"])
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(js)
    sc = ev["scores"]
    result("eval", split=args.split, acc_detection=f"{sc['detection']['accuracy']:.6f}",
           acc_intensity=f"{sc['intensity']['accuracy']:.6f}")
    return EXIT_OK


def cmd_downsample(args) -> int:
    manifest = Manifest.load_file(args.manifest)
    out = Path(args.out)
    for factor in args.factors:
        sub = out / f"x{factor}"
        (sub / "signals").mkdir(parents=True, exist_ok=True)
        entries = []
        for i, e in enumerate(manifest.entries):
            sig = decimate(manifest.load(e), factor)
            rel = f"signals/{i:05d}_{Path(e.signal_path).stem}.f32"
            save_raw_f32(sub / rel, sig.samples)
            entries.append(dataclasses.replace(e, signal_path=rel, format=SignalFormat.RAW_F32LE,
                                               sample_rate_hz=sig.sample_rate_hz))
        Manifest(entries).save(sub / "manifest.json")
        result("downsample", factor=factor, rate_hz=entries[0].sample_rate_hz if entries else 0,
               manifest=sub / "manifest.json")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(seed=args.seed, n_seeds=args.n_seeds)
    failed = 0
    by_op = {}
    for r in results:
        by_op.setdefault(r.op, []).append(r)
    for op, rs in by_op.items():
        worst = max(r.max_rel_error for r in rs)
        ok = all(r.passed for r in rs)
        failed += not ok
        result("gradcheck", op=op, seeds=len(rs), max_rel_error=f"{worst:.3e}", status="PASS" if ok else "FAIL")
    return EXIT_GRADCHECK if failed else EXIT_OK


# -------------------------------------------------------------------- parser

def _factors(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad factor list {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("factors must be positive integers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dhrn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic labelled dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--len", type=int, default=65536)
    s.add_argument("--rate", type=int, default=48000)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("augment", help="split (if needed), window and FFT a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--wsize", type=int)
    s.add_argument("--stride", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("train", help="train on an augmented dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--width", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--init-seed", type=int, help="weight init seed (defaults to --seed)")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--patience", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on one split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=[x.value for x in SPLITS])
    s.add_argument("--config")
    s.add_argument("--width", type=float, help="expected width multiplier (audited against the checkpoint)")
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("downsample", help="write decimated copies of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--factors", type=_factors, default=[2, 4, 6, 8, 32])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_downsample)

    s = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-seeds", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)
    return p


def exit_code(exc: BaseException) -> int:
    cause = getattr(exc, "cause", None) or exc
    if isinstance(cause, (VersionMismatch, CorruptCheckpoint, ShapeMismatch)):
        return EXIT_CHECKPOINT
    if isinstance(cause, OSError):
        return EXIT_IO
    return EXIT_USAGE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    if args.command == "train":
        # epoch progress lines are always shown for training
        logging.getLogger("dhrn.trainer").setLevel(logging.INFO)
    try:
        return args.func(args)
    except (UsageError, DhrnError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
