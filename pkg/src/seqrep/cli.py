"""``seqrep`` command line: one subcommand per pipeline stage.

    seqrep spectrogram --input-dir WAVS --output spec.adrl
    seqrep train --input spec.adrl --output-dir run/
    seqrep features --input spec.adrl --checkpoint run/ --output feats.adrl
    seqrep fuse --inputs a.adrl b.adrl --output fused.adrl
    seqrep evaluate --features feats.adrl --classifier mlp
    seqrep export --input feats.adrl --format arff --output feats.arff
    seqrep verify [--quick]

Exit status is 0 on success, 1 on processing errors and 2 on usage errors.
Every subcommand writes a JSON run manifest beside its output; ``seqrep
replay MANIFEST`` re-runs the recorded command line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from ._parallel import ordered_map, worker_count
from .classify import LinearConfig, MlpConfig, cross_validate
from .datamodel import (
    DataSetContainer,
    Instance,
    fuse_features,
    generate_stratified_folds,
    import_audio_directory,
    load_container,
    save_container,
)
from .dsp import SpectrogramConfig, spectrogram_from_file
from .errors import SeqrepError
from .export import ExportSpec, export
from .seq2seq.checkpoint import FINAL_NAME, load_checkpoint, save_checkpoint
from .seq2seq.model import AutoencoderTopology
from .seq2seq.training import TrainConfig, extract_features, train_autoencoder

log = logging.getLogger("seqrep")


class UsageError(Exception):
    """Raised for argument values that parse but are out of range (exit 2)."""


def _write_manifest(path: Path, args, argv, inputs, outputs, started: float) -> None:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
              if k not in ("func", "verbose")}
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "config": config,
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "threads": worker_count(),
        "duration_s": round(time.time() - started, 3),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_path(output) -> Path:
    output = Path(output)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


# -- subcommands -----------------------------------------------------------------

def cmd_spectrogram(args, argv, started):
    labels = args.labels
    if labels in ("parent-dir", "none"):
        scan = import_audio_directory(args.input_dir, labels)
    elif labels.startswith("file:"):
        scan = import_audio_directory(args.input_dir, "metadata", labels[len("file:"):])
    else:
        raise UsageError(f"--labels must be parent-dir, none or file:PATH, got {labels!r}")
    config = SpectrogramConfig(args.window_ms, args.hop_ms, args.fft_size,
                               None if args.mel_bands == 0 else args.mel_bands,
                               args.clip_below_db, not args.no_normalize)

    def run(entry):
        try:
            return spectrogram_from_file(entry.path, config, entry.instance_id)
        except SeqrepError as exc:
            return exc

    results = ordered_map(run, scan.entries)
    instances, failures = [], []
    for entry, res in zip(scan.entries, results):
        if isinstance(res, Exception):
            failures.append(entry.instance_id)
            print(f"error: {res}", file=sys.stderr)
        else:
            instances.append(Instance(entry.instance_id, res.frames, entry.label, entry.partition, entry.fold))
    dims = {i.data.shape[1] for i in instances}
    if len(dims) > 1:
        raise SeqrepError(f"inconsistent frequency bin counts {sorted(dims)}; "
                          "use --mel-bands or resample to a common rate")
    if not dims and config.mel_bands is None:
        raise SeqrepError("no spectrograms extracted; cannot determine bin count without --mel-bands")
    dim = dims.pop() if dims else config.mel_bands
    attrs = {"extraction": {"window_ms": config.window_ms, "hop_ms": config.hop_ms,
                            "fft_size": config.fft_size, "mel_bands": config.mel_bands,
                            "clip_below_db": config.clip_below_db, "normalize": config.normalize}}
    container = DataSetContainer("spectrogram", dim, instances, attrs=attrs)
    skipped = len(scan.dangling)
    print(f"{len(instances)} spectrograms, {len(container.vocabulary)} classes, "
          f"{len(failures)} failed, {skipped} dangling metadata rows", file=sys.stderr)
    if failures and not instances:
        raise SeqrepError(f"all {len(failures)} files failed")
    save_container(container, args.output)
    _write_manifest(manifest_path(args.output), args, argv, [args.input_dir], [args.output], started)


def cmd_train(args, argv, started):
    container = load_container(args.input)
    if container.kind != "spectrogram":
        raise SeqrepError(f"{args.input} holds {container.kind}, not spectrograms")
    topo = AutoencoderTopology(args.cell, args.layers, args.hidden, container.dim, args.bidirectional,
                               args.feedback_prob, args.reverse_target)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(args.epochs, args.batch_size, args.lr, args.clip_norm, args.seed, str(out_dir))

    def report(epoch, loss):
        print(f"epoch {epoch}/{args.epochs}  rmse {loss:.6f}", file=sys.stderr)

    ckpt = train_autoencoder(container, topo, config, on_epoch=report)
    save_checkpoint(ckpt, out_dir / FINAL_NAME)
    _write_manifest(out_dir / "manifest.json", args, argv, [args.input], [out_dir], started)


def cmd_features(args, argv, started):
    container = load_container(args.input)
    ckpt = load_checkpoint(args.checkpoint)
    features = extract_features(container, ckpt)
    save_container(features, args.output)
    print(f"{len(features)} x {features.dim} feature matrix written to {args.output}", file=sys.stderr)
    _write_manifest(manifest_path(args.output), args, argv, [args.input, args.checkpoint], [args.output],
                    started)


def cmd_fuse(args, argv, started):
    fused = fuse_features([load_container(p) for p in args.inputs])
    save_container(fused, args.output)
    print(f"fused {len(args.inputs)} containers: {len(fused)} x {fused.dim}", file=sys.stderr)
    _write_manifest(manifest_path(args.output), args, argv, args.inputs, [args.output], started)


def cmd_evaluate(args, argv, started):
    container = load_container(args.features)
    folds = None
    if container.has_folds():
        if args.folds is not None:
            log.warning("container has predefined folds; --folds %d ignored", args.folds)
    else:
        folds = generate_stratified_folds(container.labels, args.folds or 5, args.seed)
    if args.classifier == "mlp":
        classifier = MlpConfig(tuple(args.hidden), args.epochs, args.batch_size, args.lr, args.seed)
    else:
        classifier = LinearConfig(l2=args.l2)
    report = cross_validate(container, folds, classifier)
    prefix = Path(args.report) if args.report else Path(args.features).with_suffix(".report")
    txt, tsv = report.write(prefix)
    sys.stdout.write(report.to_text())
    _write_manifest(manifest_path(txt), args, argv, [args.features], [txt, tsv], started)


def cmd_export(args, argv, started):
    container = load_container(args.input)
    spec = ExportSpec(args.format, args.output, args.with_labels, args.with_partitions, args.with_folds,
                      args.relation)
    export(container, spec)
    _write_manifest(manifest_path(args.output), args, argv, [args.input], [args.output], started)


def cmd_verify(args, argv, started):
    from . import verify

    results = verify.run_checks(quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.time() - started:.1f}s")
    if failed:
        return 1


def cmd_replay(args, argv, started):
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    return main(manifest["argv"])


# -- parser --------------------------------------------------------------------------

def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {value}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqrep", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"seqrep {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrogram", help="extract spectrograms from a directory of WAV files")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--window-ms", type=_positive_float, default=80.0)
    p.add_argument("--hop-ms", type=_positive_float, default=40.0)
    p.add_argument("--fft-size", type=_positive_int, default=None)
    p.add_argument("--mel-bands", type=_non_negative_int, default=128, help="0 disables mel pooling")
    p.add_argument("--clip-below-db", type=float, default=-60.0)
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--labels", default="parent-dir", help="parent-dir, none or file:PATH")
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("train", help="train a sequence-to-sequence autoencoder")
    p.add_argument("--input", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--cell", choices=("gru", "lstm"), default="gru")
    p.add_argument("--layers", type=_positive_int, default=2)
    p.add_argument("--hidden", type=_positive_int, default=32)
    p.add_argument("--bidirectional", action="store_true")
    p.add_argument("--feedback-prob", type=_probability, default=0.5)
    p.add_argument("--reverse-target", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--epochs", type=_non_negative_int, default=10)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--clip-norm", type=_positive_float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("features", help="extract learned representations")
    p.add_argument("--input", required=True)
    p.add_argument("--checkpoint", required=True, help="checkpoint file or training output directory")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fuse", help="concatenate feature containers per instance")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("evaluate", help="cross-validate a classifier on learned features")
    p.add_argument("--features", required=True)
    p.add_argument("--classifier", choices=("mlp", "linear"), default="mlp")
    p.add_argument("--folds", type=_positive_int, default=None,
                   help="stratified fold count when the container has none (default 5)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=_non_negative_int, default=400)
    p.add_argument("--hidden", type=_positive_int, nargs="+", default=[128, 128])
    p.add_argument("--batch-size", type=_positive_int, default=64)
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--l2", type=_positive_float, default=1e-2)
    p.add_argument("--report", default=None, help="report path prefix (writes .txt and .tsv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export", help="write features to CSV or ARFF")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "arff"), required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--relation", default="seqrep_features")
    p.add_argument("--with-labels", action="store_true")
    p.add_argument("--with-partitions", action="store_true")
    p.add_argument("--with-folds", action="store_true")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("verify", help="run gradient and DFT self-tests")
    p.add_argument("--quick", action="store_true", help="subset of checks (well under 30 s)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        code = args.func(args, argv, started)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"seqrep: error: {exc}", file=sys.stderr)
        return 2
    except (SeqrepError, OSError) as exc:
        print(f"seqrep {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
