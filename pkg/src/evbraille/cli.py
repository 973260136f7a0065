"""Command-line harness: simulate scans, label them, train, evaluate and decode.

Exit codes: 0 success, 2 validation error, 3 segmentation mismatch, 4 model
error.  Options can come from a JSON config file (``--config``); explicit
flags win.  Relative data paths resolve against ``$EVBRAILLE_DATA`` when set.
Every run writes a manifest that ``evbraille replay`` re-executes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__

log = logging.getLogger("evbraille")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SEGMENTATION = 3
EXIT_MODEL = 4
DATA_ENV = "EVBRAILLE_DATA"
LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


# --- manifests ---------------------------------------------------------------------


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _hash_tree(path: Path) -> dict:
    if path.is_file():
        return {str(path): sha256_file(path)}
    if path.is_dir():
        return {str(p): sha256_file(p) for p in sorted(path.rglob("*")) if p.is_file() and p.name != MANIFEST_NAME}
    return {}


MANIFEST_NAME = "run_manifest.json"


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: dict = field(default_factory=dict)
    tool_version: str = __version__
    started: str = ""
    finished: str = ""

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**raw)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise CLIError(f"{path}: not a run manifest ({exc})") from None


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _data_path(p: str | None) -> Path | None:
    if p is None:
        return None
    path = Path(p)
    root = os.environ.get(DATA_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _need_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CLIError(f"{what} not found: {path}")
    return path


def _need_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise CLIError(f"{what} not found: {path}")
    return path


# --- shared option groups -----------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_train_options(p):
    p.add_argument("--data", required=True, help="labeled dataset directory (output of 'label')")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--mode", default="NormAug", choices=["Raw", "Norm", "Aug", "NormAug"])
    p.add_argument("--preset", default="reduced", choices=["reduced", "paper"])
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--val-fraction", type=float, default=0.15)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-norm-scale", action="store_true", help="Norm centres vertically without count scaling")


def _add_decoder_options(p):
    p.add_argument("--segmenter", required=True, help="presence network checkpoint")
    p.add_argument("--classifier", required=True, help="character classifier checkpoint")
    p.add_argument("--stride", type=float, default=10.0, help="ms between window positions")
    p.add_argument("--threshold", type=float, default=0.5, help="presence probability gate")
    p.add_argument("--min-consecutive", type=int, default=4)
    p.add_argument("--consec-gap", type=float, default=70.0, help="ms; smaller gaps continue a run")
    p.add_argument("--word-gap", type=float, default=1000.0, help="ms; larger gaps split words")
    p.add_argument("--vocab", default=None, help="word list for spell checking (default: bundled)")
    p.add_argument("--max-edit", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evbraille", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"evbraille {__version__}")
    parser.add_argument("--config", default=None, help="JSON file of option defaults (per-command sections allowed)")
    parser.add_argument("--manifest", default=None, help="where to write the run manifest")
    parser.add_argument("--threads", type=int, default=1, help="torch intra-op threads")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate scans into event files plus ground-truth sidecars")
    p.add_argument("--board", default="SAB", help="SAB, UN, RAB, EV or a board JSON file")
    p.add_argument("--speed", type=_floats, default=[8.0], help="mm/s, comma-separated")
    p.add_argument("--depth", type=_floats, default=[1.5], help="mm, comma-separated")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--format", default="evb", choices=["evb", "csv"])
    p.add_argument("--un-word", default="WORD", help="third-row word of the UN board")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("label", help="segment scans into character and presence datasets")
    p.add_argument("--streams", required=True, help="directory written by 'simulate'")
    p.add_argument("--out", required=True)
    p.add_argument("--method", default="profile", choices=["profile", "aligned"],
                   help="profile: activity-profile onsets; aligned: ground-truth windows at any speed")
    p.add_argument("--offset", default="auto", help="single-column shift in ms, or 'auto' to calibrate")
    p.add_argument("--strict", action="store_true", help="fail on the first segmentation mismatch")
    p.add_argument("--seed", type=int, default=0, help="jitter seed for --method aligned")

    p = sub.add_parser("train", help="train the character classifier")
    _add_train_options(p)
    p = sub.add_parser("train-seg", help="train the presence (segmentation) network")
    _add_train_options(p)

    p = sub.add_parser("eval-chars", help="character accuracy tables, confusion matrices and depth plot")
    p.add_argument("--checkpoint", action="append", required=True, help="repeatable")
    p.add_argument("--data", action="append", required=True,
                   help="[LABEL=]DIR, repeatable; numeric labels are depths and give a depth plot")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval-words", help="word-reading metrics per speed, with and without spell checking")
    _add_decoder_options(p)
    p.add_argument("--streams", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("decode", help="decode one event stream to text")
    _add_decoder_options(p)
    p.add_argument("stream", help="event file (.evb or .csv)")
    p.add_argument("--json", default=None, help="write the full decode report here")
    p.add_argument("--no-spell", action="store_true")

    p = sub.add_parser("replay", help="re-run the command recorded in a run manifest")
    p.add_argument("manifest_path", metavar="MANIFEST")
    p.add_argument("--out", default=None, help="redirect the run's output")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Load --config and install its values as parser defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    path = Path(known.config)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CLIError(f"config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise CLIError(f"config {path}: top level must be an object")
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices
    command = next((a for a in rest if a in subs), None)
    common = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    section = raw.get(command, {}) if command else {}
    values = {k.replace("-", "_"): v for k, v in {**common, **section}.items()}
    if command:
        sp = subs[command]
        known_dests = {a.dest for a in sp._actions} | {a.dest for a in parser._actions}
        unknown = sorted(set(values) - known_dests)
        if unknown:
            raise CLIError(f"config {path}: unknown option(s) for '{command}': {unknown}")
        for a in sp._actions:
            if a.dest in values:
                a.required = False
        sp.set_defaults(**{k: _coerce(sp, k, v) for k, v in values.items()})
        parser.set_defaults(**{k: v for k, v in values.items() if k in {a.dest for a in parser._actions}})


def _coerce(sp, dest, value):
    for a in sp._actions:
        if a.dest == dest and a.type is _floats and not isinstance(value, list):
            return _floats(str(value))
    return value


# --- helpers --------------------------------------------------------------------------


def _set_threads(n: int):
    import torch

    torch.set_num_threads(max(1, n))


def _load_ckpt(path: Path):
    from .models.checkpoint import CheckpointError, load_checkpoint

    _need_file(path, "checkpoint")
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CLIError(str(exc), EXIT_MODEL) from None


def _decoder_config(args):
    from .decoder import DecoderConfig

    return DecoderConfig(
        stride=args.stride,
        segmenter_threshold=args.threshold,
        min_consecutive=args.min_consecutive,
        consec_gap_max=args.consec_gap,
        word_gap_min=args.word_gap,
    )


def _vocab(args):
    from .decoder import Vocabulary

    if args.vocab:
        return Vocabulary.from_file(_need_file(_data_path(args.vocab), "vocabulary"), args.max_edit)
    v = Vocabulary.bundled()
    return Vocabulary(v.words, args.max_edit)


# --- commands -------------------------------------------------------------------------


def cmd_simulate(args, man: RunManifest):
    from .board import resolve_board
    from .datasets import Condition, simulate_to_dir

    board = resolve_board(args.board, args.un_word)
    out = _data_path(args.out)
    conds = [Condition(s, d) for s in args.speed for d in args.depth]
    entries = simulate_to_dir(board, conds, args.trials, out, args.seed, args.format, args.workers)
    man.seeds = {"base_seed": args.seed, "streams": {e.stream_id: e.seed for e in entries}}
    print(f"wrote {len(entries)} streams to {out}")
    return out


def _trial_tag(e) -> str:
    return f"r{e.row}t{e.trial}v{e.speed:g}d{e.depth:g}"


def _records(directory: Path):
    from .datasets import load_entry, read_stream_index
    from .events import bin_events
    from .segmentation import ScanRecord

    for e in read_stream_index(directory):
        stream, gt = load_entry(directory, e)
        yield e, ScanRecord(e.stream_id, bin_events(stream), tuple(gt))


def cmd_label(args, man: RunManifest):
    import numpy as np

    from .datasets import aligned_windows
    from .segmentation import (
        CharacterSegment,
        build_labeled_dataset,
        calibrate_offset,
        write_dataset,
    )

    src = _need_dir(_data_path(args.streams), "stream directory")
    out = _data_path(args.out)
    for sub in ("chars", "presence"):
        (out / sub).mkdir(parents=True, exist_ok=True)
        m = out / sub / "manifest.csv"
        if m.exists():
            m.unlink()
    items = list(_records(src))
    man.inputs = _hash_tree(src)
    summary = {"method": args.method, "streams": len(items)}
    if args.method == "profile":
        if args.offset == "auto":
            cal = calibrate_offset([r for _, r in items])
            offset = cal.offset
            summary["calibration"] = {"offset": cal.offset, "choice": cal.choice, "residuals": cal.residuals}
        else:
            try:
                offset = float(args.offset)
            except ValueError:
                raise CLIError(f"--offset must be a number or 'auto', got {args.offset!r}") from None
        summary["offset_ms"] = offset
        rejected, n_chars, n_pres = [], 0, 0
        for e, rec in items:
            ds = build_labeled_dataset([rec], offset=offset, strict=args.strict)
            rejected += ds.rejected
            write_dataset(out / "chars", e.board, _trial_tag(e), ds.characters)
            write_dataset(out / "presence", e.board, _trial_tag(e), ds.binary, ds.binary_positive)
            n_chars += len(ds.characters)
            n_pres += len(ds.binary)
        summary.update(rejected=rejected, characters=n_chars, presence=n_pres)
    else:
        from .events import FrameTensor

        n_chars = n_pres = 0
        man.seeds = {"jitter_seed": args.seed}
        for e, rec in items:
            rng = np.random.default_rng([args.seed, e.seed, e.row, 77])
            chars, pres = aligned_windows(rec.frames, rec.truth, e.speed, rng)

            def segs(ss, with_label):
                out_segs = []
                for s, m in zip(ss.samples, ss.meta):
                    counts = s.to_dense().reshape(-1, 2, s.shape[1], s.shape[2]).astype(np.int32)
                    lab = m["label"] if with_label(m) else None
                    out_segs.append(CharacterSegment(lab, m["onset_ms"], FrameTensor(counts, rec.frames.bin_width), False))
                return out_segs

            write_dataset(out / "chars", e.board, _trial_tag(e), segs(chars, lambda m: True))
            write_dataset(out / "presence", e.board, _trial_tag(e), segs(pres, lambda m: m["kind"] == "pos"),
                          [bool(y) for y in pres.labels])
            n_chars += len(chars)
            n_pres += len(pres)
        summary.update(characters=n_chars, presence=n_pres, rejected=[])
    (out / "label.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"{summary['characters']} character segments, {summary['presence']} presence windows, "
          f"{len(summary['rejected'])} rejected streams")
    return out


def _load_char_samples(directory: Path):
    from .datasets import crop_sparse
    from .segmentation import read_dataset

    rows = read_dataset(directory)
    samples, labels = [], []
    for r, frames in rows:
        if r.label is None:
            continue
        samples.append(crop_sparse(frames))
        labels.append(LETTERS.index(r.label))
    return samples, labels


def _load_presence_samples(directory: Path):
    from .datasets import to_sparse
    from .segmentation import read_dataset

    rows = read_dataset(directory)
    return [to_sparse(f) for _, f in rows], [int(r.positive) for r, _ in rows]


def _dataset_dir(path: Path, sub: str) -> Path:
    if (path / sub / "manifest.csv").exists():
        return path / sub
    if (path / "manifest.csv").exists():
        return path
    raise CLIError(f"no labeled dataset in {path} (expected {sub}/manifest.csv)")


def _train(args, man: RunManifest, presence: bool):
    from .models.checkpoint import save_checkpoint
    from .models.nets import ArchConfig
    from .models.training import TrainConfig, TrainingDivergedError, dataset_hash, train

    data = _dataset_dir(_need_dir(_data_path(args.data), "dataset directory"), "presence" if presence else "chars")
    samples, labels = (_load_presence_samples if presence else _load_char_samples)(data)
    if not samples:
        raise CLIError(f"{data}: no labeled samples")
    cfg = TrainConfig(
        optimizer=args.optimizer, lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
        val_fraction=args.val_fraction, patience=args.patience, threads=args.threads, norm_scale=not args.no_norm_scale,
    )
    arch = ArchConfig.from_preset(args.preset, num_classes=2 if presence else 26)
    man.inputs = _hash_tree(data)
    man.seeds = {"train_seed": args.seed}
    try:
        res = train(samples, labels, arch, cfg, mode=args.mode,
                    progress=lambda r: log.info("epoch %s: %s", r["epoch"], r),
                    extra_meta={"task": "presence" if presence else "characters"})
    except TrainingDivergedError as exc:
        raise CLIError(str(exc), EXIT_MODEL) from None
    out = _data_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.checkpoint, out)
    last = res.history[-1] if res.history else {}
    print(f"trained {args.mode} on {len(samples)} samples ({dataset_hash(samples, labels)[:12]}), "
          f"best epoch {res.checkpoint.meta['best_epoch']}, val accuracy {last.get('val_accuracy', float('nan')):.4f}")
    return out


def cmd_train(args, man):
    return _train(args, man, presence=False)


def cmd_train_seg(args, man):
    return _train(args, man, presence=True)


def _parse_data_specs(specs):
    out = []
    for s in specs:
        label, sep, path = s.partition("=")
        if not sep:
            path, label = s, Path(s).name
        out.append((label, _need_dir(_data_path(path), "dataset directory")))
    return out


def cmd_eval_chars(args, man: RunManifest):
    from . import report
    from .models.training import evaluate

    ckpts = []
    for p in args.checkpoint:
        path = _data_path(p)
        ck = _load_ckpt(path)
        if ck.arch.num_classes != 26:
            raise CLIError(f"{path}: not a character classifier ({ck.arch.num_classes} outputs)", EXIT_MODEL)
        ckpts.append((path, ck))
    names = [ck.meta.get("mode", path.stem) for path, ck in ckpts]
    if len(set(names)) < len(names):
        names = [path.stem for path, _ in ckpts]
    datasets = [(label, _dataset_dir(d, "chars")) for label, d in _parse_data_specs(args.data)]
    out = _data_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    man.inputs = {k: v for d in [_hash_tree(p) for p, _ in ckpts] + [_hash_tree(d) for _, d in datasets] for k, v in d.items()}

    results, text = [], []
    loaded = {label: _load_char_samples(d) for label, d in datasets}
    for label, _ in datasets:
        samples, labels = loaded[label]
        if not samples:
            raise CLIError(f"dataset {label}: no labeled samples")
        rows = []
        for name, (path, ck) in zip(names, ckpts):
            m = evaluate(ck, samples, labels)
            rows.append({"config": name, "accuracy": m["accuracy"], "macro_f1": m["macro_f1"], "loss": m["loss"]})
            results.append({"config": name, "checkpoint": path.name, "data": label, "n": len(samples),
                            "accuracy": m["accuracy"], "macro_f1": m["macro_f1"], "loss": m["loss"],
                            "confusion": m["confusion"]})
            if label == datasets[0][0]:
                report.write_confusion_csv(m["confusion"], list(LETTERS), out / f"confusion_{name}.csv")
                report.confusion_svg(m["confusion"], list(LETTERS), out / f"confusion_{name}.svg", title=f"{name} ({label})")
        text.append(f"Data: {label} ({len(samples)} samples)\n" + report.char_table(rows))
    try:
        depths = [float(label) for label, _ in datasets]
    except ValueError:
        depths = []
    doc = {"results": results}
    if len(depths) > 1:
        order = sorted(range(len(depths)), key=lambda i: depths[i])
        series = {n: [next(r["accuracy"] for r in results if r["config"] == n and r["data"] == datasets[i][0]) for i in order]
                  for n in names}
        ds = [depths[i] for i in order]
        report.depth_plot_svg(ds, series, out / "depth.svg")
        text.append("Accuracy by depth\n" + report.depth_table(ds, series))
        doc["depth"] = {"depths": ds, "accuracy": series}
    report.write_json(doc, out / "report.json")
    (out / "report.txt").write_text("\n".join(text), encoding="utf-8")
    sys.stdout.write("\n".join(text))
    return out


def _decode_entry(task):
    directory, entry, seg, cls, cfg, vocab, threads = task
    import torch

    from .datasets import load_entry
    from .decoder import decode_events, read_words

    torch.set_num_threads(threads)
    stream, _ = load_entry(directory, entry)
    dets = decode_events(stream, seg, cls, cfg)
    rep = read_words(dets, cfg, vocab)
    return entry, rep


def cmd_eval_words(args, man: RunManifest):
    from . import report
    from .datasets import read_stream_index
    from .decoder import DecoderError
    from .metrics import compute_word_metrics, unconditional_word_accuracy

    src = _need_dir(_data_path(args.streams), "stream directory")
    seg = _load_ckpt(_data_path(args.segmenter))
    cls = _load_ckpt(_data_path(args.classifier))
    cfg = _decoder_config(args)
    vocab = _vocab(args)
    entries = read_stream_index(src)
    if not entries:
        raise CLIError(f"{src}: empty stream index")
    man.inputs = {**_hash_tree(_data_path(args.segmenter)), **_hash_tree(_data_path(args.classifier)), **_hash_tree(src)}
    tasks = [(src, e, seg, cls, cfg, vocab, args.threads) for e in entries]
    try:
        if args.workers > 1:
            with ProcessPoolExecutor(args.workers) as pool:
                decoded = list(pool.map(_decode_entry, tasks))
        else:
            decoded = [_decode_entry(t) for t in tasks]
    except DecoderError as exc:
        raise CLIError(str(exc), EXIT_MODEL) from None
    decoded.sort(key=lambda er: er[0].stream_id)

    per_speed, rows, lines = {}, [], ["stream_id\tspeed\ttruth\traw\tcorrected"]
    for speed in sorted({e.speed for e, _ in decoded}):
        sel = [(e, r) for e, r in decoded if e.speed == speed]
        truth = [e.text for e, _ in sel]
        raw = [" ".join(r.words_raw) for _, r in sel]
        sc = [" ".join(r.words_corrected) for _, r in sel]
        m_raw, m_sc = compute_word_metrics(raw, truth), compute_word_metrics(sc, truth)
        per_speed[f"{speed:g}"] = {
            "streams": len(sel),
            "raw": m_raw.to_dict(),
            "spell": m_sc.to_dict(),
            "word_accuracy_raw": unconditional_word_accuracy(raw, truth),
            "word_accuracy_spell": unconditional_word_accuracy(sc, truth),
        }
        rows += [(f"{speed:g} mm/s", m_raw), (f"{speed:g} mm/s w spell", m_sc)]
    for e, r in decoded:
        lines.append(f"{e.stream_id}\t{e.speed:g}\t{e.text}\t{' '.join(r.words_raw)}\t{' '.join(r.words_corrected)}")
    out = _data_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json({"per_speed": per_speed, "decoder": asdict(cfg), "vocabulary_size": len(vocab)}, out / "report.json")
    table = report.word_table(rows)
    (out / "report.txt").write_text(table, encoding="utf-8")
    (out / "decoded.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    sys.stdout.write(table)
    return out


def cmd_decode(args, man: RunManifest):
    from . import report
    from .decoder import DecoderError, decode_events, read_words
    from .events import read_events

    path = _need_file(_data_path(args.stream), "event file")
    seg = _load_ckpt(_data_path(args.segmenter))
    cls = _load_ckpt(_data_path(args.classifier))
    cfg = _decoder_config(args)
    vocab = None if args.no_spell else _vocab(args)
    man.inputs = {**_hash_tree(path), **_hash_tree(_data_path(args.segmenter)), **_hash_tree(_data_path(args.classifier))}
    try:
        rep = read_words(decode_events(read_events(path), seg, cls, cfg), cfg, vocab)
    except DecoderError as exc:
        raise CLIError(str(exc), EXIT_MODEL) from None
    out = None
    if args.json:
        out = _data_path(args.json)
        out.parent.mkdir(parents=True, exist_ok=True)
        report.write_json(rep.to_dict(), out)
    print(rep.text())
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "label": cmd_label,
    "train": cmd_train,
    "train-seg": cmd_train_seg,
    "eval-chars": cmd_eval_chars,
    "eval-words": cmd_eval_words,
    "decode": cmd_decode,
}


def _manifest_path(args, out: Path | None) -> Path | None:
    if args.manifest:
        return Path(args.manifest)
    if out is None:
        return None
    return out / MANIFEST_NAME if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _config_snapshot(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "manifest", "verbose")}


def run(args) -> int:
    if args.command == "replay":
        man = RunManifest.read(_need_file(Path(args.manifest_path), "manifest"))
        if man.command not in COMMANDS:
            raise CLIError(f"manifest records unknown command {man.command!r}")
        ns = build_parser().parse_args([man.command] + _required_stub(man.command))
        for k, v in man.config.items():
            setattr(ns, k, v)
        ns.command = man.command
        ns.manifest = None
        ns.config = None
        ns.verbose = args.verbose
        if args.out:
            key = "json" if man.command == "decode" else "out"
            setattr(ns, key, args.out)
        return run(ns)
    _set_threads(args.threads)
    man = RunManifest(args.command, _config_snapshot(args), {}, started=_now())
    out = COMMANDS[args.command](args, man)
    man.finished = _now()
    if out is not None:
        man.outputs = _hash_tree(Path(out))
    mpath = _manifest_path(args, Path(out) if out is not None else None)
    if mpath is not None:
        man.write(mpath)
    return EXIT_OK


def _required_stub(command: str) -> list[str]:
    # placeholders for required options; replaced from the manifest right after parsing
    return {
        "simulate": ["--out", "x"],
        "label": ["--streams", "x", "--out", "x"],
        "train": ["--data", "x", "--out", "x"],
        "train-seg": ["--data", "x", "--out", "x"],
        "eval-chars": ["--checkpoint", "x", "--data", "x", "--out", "x"],
        "eval-words": ["--segmenter", "x", "--classifier", "x", "--streams", "x", "--out", "x"],
        "decode": ["--segmenter", "x", "--classifier", "x", "x"],
    }[command]


def main(argv: list[str] | None = None) -> int:
    from .board import BoardFormatError
    from .events import EventBoundsError, EventFormatError
    from .segmentation import SegmentationMismatchError

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except CLIError as exc:
        print(f"evbraille: error: {exc}", file=sys.stderr)
        return exc.code
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except CLIError as exc:
        print(f"evbraille: error: {exc}", file=sys.stderr)
        return exc.code
    except SegmentationMismatchError as exc:
        print(f"evbraille: segmentation mismatch: {exc}", file=sys.stderr)
        return EXIT_SEGMENTATION
    except (BoardFormatError, EventFormatError, EventBoundsError, ValueError, FileNotFoundError) as exc:
        print(f"evbraille: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
