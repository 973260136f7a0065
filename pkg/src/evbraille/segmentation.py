"""Offline labeling: find character onsets in a scan and cut labeled windows.

A narrow vertical band of the (subsampled) image, the start window, only
sees a column of dots as it enters contact.  Summing events in that band per
time bin gives an activity profile whose smoothed local maxima mark column
entries.  Two columns of one character are merged into one onset by a
greedy grouping whose window grows until the expected character count is
reached.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .events import FrameTensor, apply_spatial_mask
from .models.transforms import crop_frames

log = logging.getLogger(__name__)

SEG_MAGIC = b"SEG1"
_SEG_HEADER = struct.Struct("<4sIIII")


class SegmentationMismatchError(RuntimeError):
    """No merge window produced the expected number of characters."""

    def __init__(self, expected: int, best_w: float, best_count: int, stream_id: str | None = None):
        self.expected = expected
        self.best_w = best_w
        self.best_count = best_count
        self.stream_id = stream_id
        where = f"{stream_id}: " if stream_id else ""
        super().__init__(
            f"{where}expected {expected} characters, closest was {best_count} at merge window {best_w:g} ms"
        )


@dataclass(frozen=True)
class SegmentationParams:
    start_x0: int = 20
    start_width: int = 10
    smooth_kernel: int = 7
    merge_min: float = 300.0
    merge_max: float = 450.0
    merge_step: float = 10.0
    char_window: float = 350.0
    mask: tuple[int, int] = (20, 100)
    single_col_offset: float = 280.0
    prominence: float = 0.05  # fraction of the profile maximum; 0 keeps every local maximum

    def __post_init__(self):
        if self.merge_min > self.merge_max:
            raise ValueError("merge_min must not exceed merge_max")
        if self.merge_step <= 0:
            raise ValueError("merge_step must be positive")
        if self.smooth_kernel < 1 or self.smooth_kernel % 2 == 0:
            raise ValueError("smooth_kernel must be odd and >= 1")
        if self.start_width < 1:
            raise ValueError("start_width must be >= 1")


@dataclass(frozen=True)
class ActivityProfile:
    values: np.ndarray
    bin_width: float = 10.0
    smoothed: bool = False
    origin_ms: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("profile must be one-dimensional")
        if np.any(v < 0):
            raise ValueError("profile values must be non-negative")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def time_of(self, index: int) -> float:
        return self.origin_ms + index * self.bin_width


@dataclass(frozen=True)
class CharacterSegment:
    label: str | None
    onset_ms: float
    frames: FrameTensor
    single_column: bool = False


def activity_profile(frames: FrameTensor, params: SegmentationParams = SegmentationParams()) -> ActivityProfile:
    """Per-bin event sum over the start window, all rows and channels."""
    x0, x1 = params.start_x0, params.start_x0 + params.start_width
    W = frames.shape[3]
    if x0 < 0 or x1 > W:
        raise ValueError(f"start window [{x0}, {x1}) outside tensor width {W}")
    s = frames.counts[:, :, :, x0:x1].sum(axis=(1, 2, 3), dtype=np.int64)
    return ActivityProfile(s.astype(np.float64), frames.bin_width, False, frames.origin_ms)


def smooth(profile: ActivityProfile, kernel: int = 7) -> ActivityProfile:
    """Centered moving average; windows shrink at the ends instead of padding zeros."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    v = profile.values
    n = len(v)
    if n == 0:
        return ActivityProfile(v, profile.bin_width, True, profile.origin_ms)
    h = kernel // 2
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(n)
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, n)
    out = (c[hi] - c[lo]) / (hi - lo)
    return ActivityProfile(np.maximum(out, 0.0), profile.bin_width, True, profile.origin_ms)


def peak_prominences(values: np.ndarray, peaks: Sequence[int]) -> np.ndarray:
    """Topographic prominence: height above the higher of the two bases.

    Each base is the minimum between the peak and the nearest strictly
    higher sample on that side (or the array end).
    """
    v = np.asarray(values, dtype=np.float64)
    out = np.empty(len(peaks))
    for k, i in enumerate(peaks):
        j = i
        left = v[i]
        while j > 0 and v[j - 1] <= v[i]:
            j -= 1
            left = min(left, v[j])
        j = i
        right = v[i]
        while j < len(v) - 1 and v[j + 1] <= v[i]:
            j += 1
            right = min(right, v[j])
        out[k] = v[i] - max(left, right)
    return out


def detect_peak_indices(profile: ActivityProfile, prominence: float = 0.05) -> list[int]:
    v = profile.values
    if len(v) < 3:
        return []
    i = np.flatnonzero((v[1:-1] > v[:-2]) & (v[1:-1] >= v[2:])) + 1
    if len(i) == 0 or prominence <= 0:
        return [int(k) for k in i]
    prom = peak_prominences(v, i)
    return [int(k) for k, pr in zip(i, prom) if pr >= prominence * v.max()]


def detect_peaks(profile: ActivityProfile, prominence: float = 0.05) -> list[float]:
    """Times (ms) of interior local maxima whose prominence reaches ``prominence * max``."""
    return [profile.time_of(i) for i in detect_peak_indices(profile, prominence)]


def group_peaks(peaks: Sequence[float], w: float) -> list[list[float]]:
    """Greedy left-to-right grouping anchored at each group's first peak."""
    groups: list[list[float]] = []
    for p in peaks:
        if groups and p - groups[-1][0] <= w:
            groups[-1].append(p)
        else:
            groups.append([p])
    return groups


def merge_peaks_adaptive(
    peaks: Sequence[float],
    expected_n: int,
    params: SegmentationParams = SegmentationParams(),
    stream_id: str | None = None,
) -> list[float]:
    """Grow the merge window until exactly ``expected_n`` groups remain; return group onsets."""
    if expected_n < 1:
        raise ValueError("expected_n must be >= 1")
    peaks = sorted(peaks)
    n_steps = int(math.floor((params.merge_max - params.merge_min) / params.merge_step + 1e-9))
    best_w, best_count = params.merge_min, -1
    for k in range(n_steps + 1):
        w = params.merge_min + k * params.merge_step
        groups = group_peaks(peaks, w)
        if len(groups) == expected_n:
            return [g[0] for g in groups]
        if best_count < 0 or abs(len(groups) - expected_n) < abs(best_count - expected_n):
            best_w, best_count = w, len(groups)
    raise SegmentationMismatchError(expected_n, best_w, best_count, stream_id)


def find_onsets(
    frames: FrameTensor,
    expected_n: int,
    params: SegmentationParams = SegmentationParams(),
    stream_id: str | None = None,
) -> list[float]:
    prof = smooth(activity_profile(frames, params), params.smooth_kernel)
    return merge_peaks_adaptive(detect_peaks(prof, params.prominence), expected_n, params, stream_id)


def window(frames: FrameTensor, start: float, duration: float) -> FrameTensor:
    """Like ``slice_window`` but zero-pads before the tensor origin as well."""
    bw = frames.bin_width
    n = int(round(duration / bw))
    if abs(n * bw - duration) > 1e-6:
        raise ValueError("duration must be a multiple of the bin width")
    k0 = int(math.floor((start - frames.origin_ms) / bw + 1e-9))
    T = frames.n_bins
    out = np.zeros((n,) + frames.shape[1:], dtype=frames.counts.dtype)
    a, b = max(k0, 0), min(k0 + n, T)
    if b > a:
        out[a - k0 : b - k0] = frames.counts[a:b]
    return FrameTensor(out, bw, frames.origin_ms + k0 * bw)


def extract_segment(
    frames: FrameTensor,
    onset: float,
    single_column: bool,
    params: SegmentationParams = SegmentationParams(),
    label: str | None = None,
    offset: float | None = None,
) -> CharacterSegment:
    """Masked ``char_window`` starting at the onset (shifted for single-column letters)."""
    shift = (params.single_col_offset if offset is None else offset) if single_column else 0.0
    w = window(frames, onset + shift, params.char_window)
    w = apply_spatial_mask(w, *params.mask)
    return CharacterSegment(label, onset, w, single_column)


def mass_center_ms(frames: FrameTensor) -> float | None:
    """Event-weighted mean bin-centre time, relative to the tensor origin."""
    per_bin = frames.counts.sum(axis=(1, 2, 3), dtype=np.int64)
    tot = per_bin.sum()
    if tot == 0:
        return None
    centers = (np.arange(len(per_bin)) + 0.5) * frames.bin_width
    return float((per_bin * centers).sum() / tot)


@dataclass(frozen=True)
class ScanRecord:
    """A binned scan with its ordered (letter, onset_ms, single_column) ground truth."""

    stream_id: str
    frames: FrameTensor
    truth: tuple


@dataclass(frozen=True)
class OffsetCalibration:
    offset: float
    choice: str  # "+280", "-280" or "fitted"
    residuals: dict
    dual_center: float


def calibrate_offset(
    scans: Iterable[ScanRecord],
    params: SegmentationParams = SegmentationParams(),
    use_truth: bool = False,
) -> OffsetCalibration:
    """Pick the single-column window shift whose event-mass centre best matches dual-column windows.

    Candidates are +280 ms, -280 ms and an offset fitted from the data
    (rounded to a bin).  Onsets come from the profile pipeline unless
    ``use_truth`` is set.
    """
    items = []  # (frames, onset, single)
    for rec in scans:
        if use_truth:
            onsets = [t for _, t, _ in rec.truth]
        else:
            onsets = find_onsets(rec.frames, len(rec.truth), params, rec.stream_id)
        items += [(rec.frames, t, single) for t, (_, _, single) in zip(onsets, rec.truth)]
    dual = [mass_center_ms(extract_segment(f, t, False, params).frames) for f, t, s in items if not s]
    dual = [c for c in dual if c is not None]
    if not dual:
        raise ValueError("no events in dual-column segments")
    dual_center = float(np.mean(dual))

    # where single-column mass sits relative to the onset, over a wide window
    span = 2 * params.char_window
    rel = []
    for f, t, s in items:
        if s:
            w = apply_spatial_mask(window(f, t - params.char_window, span), *params.mask)
            c = mass_center_ms(w)
            if c is not None:
                rel.append(w.origin_ms + c - t)
    if not rel:
        raise ValueError("no events in single-column segments")
    bw = items[0][0].bin_width
    fitted = round((float(np.mean(rel)) - dual_center) / bw) * bw

    residuals = {}
    for name, off in (("+280", 280.0), ("-280", -280.0), ("fitted", float(fitted))):
        cs = [mass_center_ms(extract_segment(f, t, True, params, offset=off).frames) for f, t, s in items if s]
        cs = [c for c in cs if c is not None]
        residuals[name] = abs(float(np.mean(cs)) - dual_center) if cs else math.inf
    choice = min(residuals, key=lambda k: (residuals[k], k != "+280"))
    offset = {"+280": 280.0, "-280": -280.0, "fitted": float(fitted)}[choice]
    return OffsetCalibration(offset, choice, residuals, dual_center)


@dataclass
class LabeledDataset:
    characters: list = field(default_factory=list)  # CharacterSegment, 350 ms
    binary: list = field(default_factory=list)  # CharacterSegment (label None for negatives), 200 ms
    binary_positive: list = field(default_factory=list)
    rejected: list = field(default_factory=list)  # stream ids that failed segmentation


NEGATIVE_STARTS = (-170.0, 340.0)
INPUT_WINDOW = 200.0


def build_labeled_dataset(
    scans: Iterable[ScanRecord],
    params: SegmentationParams = SegmentationParams(),
    offset: float | None = None,
    strict: bool = False,
) -> LabeledDataset:
    """Character segments plus a 1:2 positive:negative presence set.

    Positives are the 200 ms mass-centred crop of each character segment;
    the two negatives are 200 ms windows starting 170 ms before and 340 ms
    after the onset.  Scans whose onset count disagrees with the ground truth
    are logged and skipped, or raised when ``strict``.
    """
    ds = LabeledDataset()
    for rec in scans:
        try:
            onsets = find_onsets(rec.frames, len(rec.truth), params, rec.stream_id)
        except SegmentationMismatchError as exc:
            if strict:
                raise
            log.warning("rejected %s", exc)
            ds.rejected.append(rec.stream_id)
            continue
        for t, (ch, _, single) in zip(onsets, rec.truth):
            seg = extract_segment(rec.frames, t, single, params, label=ch, offset=offset)
            ds.characters.append(seg)
            pos = crop_frames(seg.frames)
            ds.binary.append(CharacterSegment(ch, t, pos, single))
            ds.binary_positive.append(True)
            for d in NEGATIVE_STARTS:
                neg = apply_spatial_mask(window(rec.frames, t + d, INPUT_WINDOW), *params.mask)
                ds.binary.append(CharacterSegment(None, t, neg, single))
                ds.binary_positive.append(False)
    return ds


# --- segment files ---------------------------------------------------------------


def write_segment(frames: FrameTensor, path: str | Path) -> None:
    c = frames.counts
    if c.size and c.max() > np.iinfo(np.uint16).max:
        raise ValueError("counts exceed the u16 range of segment files")
    T, C, H, W = c.shape
    with open(path, "wb") as fh:
        fh.write(_SEG_HEADER.pack(SEG_MAGIC, T, C, H, W))
        fh.write(c.astype("<u2").tobytes())


def read_segment(path: str | Path, bin_width: float = 10.0) -> FrameTensor:
    data = Path(path).read_bytes()
    if len(data) < _SEG_HEADER.size:
        raise ValueError(f"{path}: truncated segment header")
    magic, T, C, H, W = _SEG_HEADER.unpack_from(data)
    if magic != SEG_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    n = T * C * H * W
    body = data[_SEG_HEADER.size :]
    if len(body) != 2 * n:
        raise ValueError(f"{path}: expected {2 * n} payload bytes, found {len(body)}")
    counts = np.frombuffer(body, dtype="<u2").astype(np.int32).reshape(T, C, H, W)
    return FrameTensor(counts, bin_width)


MANIFEST = "manifest.csv"


@dataclass(frozen=True)
class ManifestRow:
    file: str
    label: str | None
    onset_ms: float
    single_column: bool
    positive: bool


def write_dataset(
    directory: str | Path,
    board: str,
    trial: int | str,
    segments: Sequence[CharacterSegment],
    positive: Sequence[bool] | None = None,
    append: bool = True,
) -> list[ManifestRow]:
    """Write segment files and add their rows to ``manifest.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    man = directory / MANIFEST
    rows = []
    for i, seg in enumerate(segments):
        pos = True if positive is None else bool(positive[i])
        tag = seg.label if seg.label else "bg"
        name = f"{board}_{trial}_{i}_{tag}.evb.seg"
        write_segment(seg.frames, directory / name)
        rows.append(ManifestRow(name, seg.label, float(seg.onset_ms), seg.single_column, pos))
    new = not man.exists() or not append
    with open(man, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["file", "label", "onset_ms", "single_column", "positive"])
        for r in rows:
            w.writerow([r.file, r.label or "", repr(r.onset_ms), int(r.single_column), int(r.positive)])
    return rows


def read_manifest(directory: str | Path) -> list[ManifestRow]:
    path = Path(directory) / MANIFEST
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["file", "label", "onset_ms", "single_column", "positive"]:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            ManifestRow(r["file"], r["label"] or None, float(r["onset_ms"]), r["single_column"] == "1", r["positive"] == "1")
            for r in reader
        ]


def read_dataset(directory: str | Path) -> list[tuple[ManifestRow, FrameTensor]]:
    directory = Path(directory)
    return [(r, read_segment(directory / r.file)) for r in read_manifest(directory)]
