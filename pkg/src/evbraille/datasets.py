"""Simulated scan collections and the sample sets built from them."""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .board import BoardLayout, is_single_column, encode_char
from .events import FrameTensor, apply_spatial_mask, bin_events, read_events, write_events
from .models.transforms import INPUT_FRAMES, SparseSample, crop_start
from .segmentation import (
    INPUT_WINDOW,
    NEGATIVE_STARTS,
    LabeledDataset,
    ScanRecord,
    SegmentationParams,
    build_labeled_dataset,
    window,
)
from .simulator import (
    GelResponseModel,
    NoiseModel,
    ScanConfig,
    ground_truth_onsets,
    read_ground_truth,
    simulate_scan,
    write_ground_truth,
)

log = logging.getLogger(__name__)

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


def trial_seed(base_seed: int, board: str, trial: int, speed: float, depth: float) -> int:
    """Independent 63-bit seed per (base seed, board, trial, condition)."""
    key = f"{base_seed}:{board}:{trial}:{speed:g}:{depth:g}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def stream_id(board: str, row: int, trial: int, speed: float, depth: float) -> str:
    return f"{board}_r{row}_t{trial}_v{speed:g}_d{depth:g}"


@dataclass(frozen=True)
class Condition:
    speed: float = 8.0
    depth: float = 1.5


def iter_scans(
    board: BoardLayout,
    conditions: Sequence[Condition],
    trials: int,
    base_seed: int = 0,
    gel: GelResponseModel = GelResponseModel(),
    noise: NoiseModel = NoiseModel(),
    rows: Sequence[int] | None = None,
) -> Iterator[tuple[ScanConfig, object, list]]:
    """Yield (config, stream, ground truth) for every condition, trial and row."""
    rows = range(len(board.rows)) if rows is None else rows
    for cond in conditions:
        for trial in range(trials):
            seed = trial_seed(base_seed, board.name, trial, cond.speed, cond.depth)
            for row in rows:
                if not board.characters(row):
                    continue
                cfg = ScanConfig(speed=cond.speed, depth=cond.depth, row=row, seed=seed)
                yield cfg, simulate_scan(board, cfg, gel, noise), ground_truth_onsets(board, cfg)


def scan_records(board, conditions, trials, base_seed=0, gel=GelResponseModel(), noise=NoiseModel()) -> Iterator[ScanRecord]:
    for cfg, stream, gt in iter_scans(board, conditions, trials, base_seed, gel, noise):
        trial_tag = f"{cfg.seed:x}"[:8]
        sid = f"{stream_id(board.name, cfg.row, 0, cfg.speed, cfg.depth)}_{trial_tag}"
        yield ScanRecord(sid, bin_events(stream), tuple(gt))


def to_sparse(frames: FrameTensor | np.ndarray) -> SparseSample:
    counts = frames.counts if isinstance(frames, FrameTensor) else frames
    return SparseSample.from_dense(counts.reshape(-1, counts.shape[-2], counts.shape[-1]))


def crop_sparse(frames: FrameTensor) -> SparseSample:
    s = crop_start(frames.counts)
    return to_sparse(frames.counts[s : s + INPUT_FRAMES])


@dataclass
class SampleSet:
    samples: list  # SparseSample, counts over (frames*polarities, H, W)
    labels: list  # int class ids
    meta: list  # per-sample dicts

    def __len__(self):
        return len(self.samples)

    def extend(self, other: "SampleSet"):
        self.samples += other.samples
        self.labels += other.labels
        self.meta += other.meta


def character_set(ds: LabeledDataset) -> SampleSet:
    """200 ms mass-centred crops of labeled 350 ms character segments."""
    out = SampleSet([], [], [])
    for seg in ds.characters:
        out.samples.append(crop_sparse(seg.frames))
        out.labels.append(LETTERS.index(seg.label))
        out.meta.append({"label": seg.label, "onset_ms": seg.onset_ms, "single_column": seg.single_column})
    return out


def presence_set(ds: LabeledDataset) -> SampleSet:
    out = SampleSet([], [], [])
    for seg, pos in zip(ds.binary, ds.binary_positive):
        out.samples.append(to_sparse(seg.frames))
        out.labels.append(int(pos))
        out.meta.append({"label": seg.label, "onset_ms": seg.onset_ms, "positive": bool(pos)})
    return out


def labeled_sets(
    boards: Sequence[BoardLayout],
    conditions: Sequence[Condition],
    trials: int,
    base_seed: int = 0,
    params: SegmentationParams = SegmentationParams(),
    offset: float | None = None,
    gel: GelResponseModel = GelResponseModel(),
) -> tuple[SampleSet, SampleSet, list]:
    """Run the profile-based labeling pipeline over simulated scans.

    Returns the character set, the presence set and the rejected stream ids.
    """
    chars, pres, rejected = SampleSet([], [], []), SampleSet([], [], []), []
    for board in boards:
        for rec in scan_records(board, conditions, trials, base_seed, gel):
            ds = build_labeled_dataset([rec], params, offset=offset)
            chars.extend(character_set(ds))
            pres.extend(presence_set(ds))
            rejected += ds.rejected
    return chars, pres, rejected


ALIGNED_CENTRE_MM = 2.0
ALIGNED_NEGATIVES_MM = ((-3.0, -1.5), (1.5, 4.5))


def aligned_windows(
    frames: FrameTensor,
    truth: Sequence[tuple[str, float, bool]],
    speed: float,
    rng: np.random.Generator,
    params: SegmentationParams = SegmentationParams(),
    centre_mm: float = ALIGNED_CENTRE_MM,
    jitter_mm: float = 0.75,
    presence_jitter_mm: float = 1.0,
    negative_ranges_mm: Sequence[tuple[float, float]] = ALIGNED_NEGATIVES_MM,
) -> tuple[SampleSet, SampleSet]:
    """Speed-agnostic windows cut at ground-truth positions of one scan.

    The character window is centred ``centre_mm`` of travel past the onset
    plus a uniform jitter of ``jitter_mm``; with 2.5 mm column spacing the
    default sits between the two columns.  The presence positive is drawn
    the same way with the wider ``presence_jitter_mm`` so that, at 32 mm/s,
    a character still spans enough 10 ms strides to form a run.  One presence
    negative is drawn uniformly from each of ``negative_ranges_mm`` (travel
    relative to the centre), i.e. approaching the character and trailing it.
    """
    chars, pres = SampleSet([], [], []), SampleSet([], [], [])
    half = INPUT_WINDOW / 2

    def cut(onset, off_mm):
        t = onset + (centre_mm + off_mm) / speed * 1000.0
        start = np.floor((t - half) / frames.bin_width) * frames.bin_width
        return to_sparse(apply_spatial_mask(window(frames, start, INPUT_WINDOW), *params.mask))

    for ch, onset, single in truth:
        m = {"label": ch, "onset_ms": onset, "speed": speed}
        chars.samples.append(cut(onset, rng.uniform(-jitter_mm, jitter_mm)))
        chars.labels.append(LETTERS.index(ch))
        chars.meta.append(dict(m, kind="pos"))
        offsets = [("pos", rng.uniform(-presence_jitter_mm, presence_jitter_mm))]
        offsets += [("neg", rng.uniform(lo, hi)) for lo, hi in negative_ranges_mm]
        for kind, off_mm in offsets:
            pres.samples.append(cut(onset, off_mm))
            pres.labels.append(int(kind == "pos"))
            pres.meta.append(dict(m, kind=kind))
    return chars, pres


def aligned_sets(
    boards: Sequence[BoardLayout],
    conditions: Sequence[Condition],
    trials: int,
    base_seed: int = 0,
    params: SegmentationParams = SegmentationParams(),
    gel: GelResponseModel = GelResponseModel(),
    **window_kw,
) -> tuple[SampleSet, SampleSet]:
    """``aligned_windows`` over freshly simulated scans of every board and condition."""
    chars, pres = SampleSet([], [], []), SampleSet([], [], [])
    for board in boards:
        for cfg, stream, gt in iter_scans(board, conditions, trials, base_seed, gel):
            rng = np.random.default_rng([cfg.seed, cfg.row, 77])
            c, p = aligned_windows(bin_events(stream), gt, cfg.speed, rng, params, **window_kw)
            chars.extend(c)
            pres.extend(p)
    return chars, pres


# --- stream directories -----------------------------------------------------------

STREAM_INDEX = "streams.csv"
_INDEX_FIELDS = ["stream_id", "events", "truth", "board", "row", "trial", "speed", "depth", "seed", "dot_spacing", "text"]


@dataclass(frozen=True)
class StreamEntry:
    stream_id: str
    events: str  # file name relative to the directory
    truth: str
    board: str
    row: int
    trial: int
    speed: float
    depth: float
    seed: int
    dot_spacing: float
    text: str  # the scanned row, i.e. the ground-truth line

    @property
    def words(self) -> list[str]:
        return self.text.split()


def _simulate_one(task):
    board, cond, trial, row, base_seed, directory, fmt, gel = task
    seed = trial_seed(base_seed, board.name, trial, cond.speed, cond.depth)
    cfg = ScanConfig(speed=cond.speed, depth=cond.depth, row=row, seed=seed)
    sid = stream_id(board.name, row, trial, cond.speed, cond.depth)
    ev = f"{sid}.{fmt}"
    gt = f"{sid}.gt.csv"
    write_events(simulate_scan(board, cfg, gel), directory / ev)
    write_ground_truth(ground_truth_onsets(board, cfg), directory / gt)
    return StreamEntry(sid, ev, gt, board.name, row, trial, cond.speed, cond.depth, seed, board.dot_spacing, board.rows[row].strip())


def simulate_to_dir(
    board: BoardLayout,
    conditions: Sequence[Condition],
    trials: int,
    directory: str | Path,
    base_seed: int = 0,
    fmt: str = "evb",
    workers: int = 1,
    gel: GelResponseModel = GelResponseModel(),
) -> list[StreamEntry]:
    """Simulate every (condition, trial, row) into event files with ground-truth sidecars and an index."""
    if fmt not in ("evb", "csv"):
        raise ValueError("format must be 'evb' or 'csv'")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tasks = [
        (board, cond, trial, row, base_seed, directory, fmt, gel)
        for cond in conditions
        for trial in range(trials)
        for row in range(len(board.rows))
        if board.characters(row)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            entries = list(pool.map(_simulate_one, tasks))
    else:
        entries = [_simulate_one(t) for t in tasks]
    write_stream_index(entries, directory, append=True)
    return entries


def write_stream_index(entries: Sequence[StreamEntry], directory: str | Path, append: bool = True) -> None:
    path = Path(directory) / STREAM_INDEX
    old = read_stream_index(directory) if append and path.exists() else []
    merged = {e.stream_id: e for e in old}
    merged.update({e.stream_id: e for e in entries})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_INDEX_FIELDS)
        for sid in sorted(merged):
            e = merged[sid]
            w.writerow([e.stream_id, e.events, e.truth, e.board, e.row, e.trial, repr(e.speed), repr(e.depth), e.seed, repr(e.dot_spacing), e.text])


def read_stream_index(directory: str | Path) -> list[StreamEntry]:
    path = Path(directory) / STREAM_INDEX
    if not path.exists():
        raise FileNotFoundError(f"{path}: no stream index (run 'simulate' first)")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _INDEX_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            StreamEntry(
                r["stream_id"], r["events"], r["truth"], r["board"], int(r["row"]), int(r["trial"]),
                float(r["speed"]), float(r["depth"]), int(r["seed"]), float(r["dot_spacing"]), r["text"],
            )
            for r in reader
        ]


def load_entry(directory: str | Path, entry: StreamEntry):
    """(events, ground truth) of an index entry."""
    directory = Path(directory)
    return read_events(directory / entry.events), read_ground_truth(directory / entry.truth)
