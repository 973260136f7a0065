"""Online word reading from a continuous scan.

A 200 ms window slides over the binned stream.  The presence network gates
each position; gated windows go to the character classifier.  Runs of
near-consecutive detections register one character each, long pauses
between registrations split words, and an optional edit-distance corrector
maps words onto a vocabulary.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .events import BinningConfig, EventStream, FrameTensor, bin_events
from .models.transforms import SparseSample, Patch

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True)
class Detection:
    t: float  # window start, ms
    char: str
    confidence: float

    def __post_init__(self):
        if not 0 < self.confidence <= 1:
            raise ValueError("confidence must be in (0, 1]")


@dataclass(frozen=True)
class DecoderConfig:
    window: float = 200.0
    stride: float = 10.0
    min_consecutive: int = 4
    consec_gap_max: float = 70.0
    word_gap_min: float = 1000.0
    segmenter_threshold: float = 0.5
    mask: tuple = (20, 100)
    batch_size: int = 128
    chunk_windows: int = 256  # window positions binned at a time when decoding raw events

    def __post_init__(self):
        if not 0 < self.stride <= self.window:
            raise ValueError("stride must be positive and at most the window")
        if self.min_consecutive < 1 or self.consec_gap_max <= 0 or self.word_gap_min <= 0:
            raise ValueError("thresholds must be positive")
        if not 0 <= self.segmenter_threshold <= 1:
            raise ValueError("segmenter_threshold must be a probability")


class DecoderError(ValueError):
    """Incompatible checkpoints or inputs."""


def _check_nets(segnet, classifier, cfg: DecoderConfig, bin_width: float):
    from .models.checkpoint import Checkpoint

    for name, ck, n in (("segmenter", segnet, 2), ("classifier", classifier, 26)):
        if not isinstance(ck, Checkpoint):
            raise DecoderError(f"{name} must be a Checkpoint")
        if ck.arch.num_classes != n:
            raise DecoderError(f"{name} has {ck.arch.num_classes} outputs, expected {n}")
        if abs(ck.arch.frames * bin_width - cfg.window) > 1e-6:
            raise DecoderError(f"{name} expects {ck.arch.frames} frames, window is {cfg.window} ms")


class _Window:
    """Masked window sample and its start time."""

    __slots__ = ("t", "sample")

    def __init__(self, t, sample):
        self.t = t
        self.sample = sample


def _windows(frames: FrameTensor, cfg: DecoderConfig, first: int, last: int, n_frames: int) -> list[_Window]:
    """Non-empty masked windows starting at bins first, first+step, ... < last."""
    x0, x1 = cfg.mask
    c = frames.counts
    T, C, H, W = c.shape
    step = max(1, int(round(cfg.stride / frames.bin_width)))
    sub = c[:, :, :, x0:x1]
    row_occ = np.concatenate([np.zeros((1, H), np.int64), np.cumsum(sub.sum(axis=(1, 3)), axis=0)])
    col_occ = np.concatenate([np.zeros((1, x1 - x0), np.int64), np.cumsum(sub.sum(axis=(1, 2)), axis=0)])
    out = []
    for k in range(first, last, step):
        a, b = k, min(k + n_frames, T)
        rows = np.flatnonzero(row_occ[b] - row_occ[a])
        if rows.size == 0:
            continue
        cols = np.flatnonzero(col_occ[b] - col_occ[a])
        r0, r1, q0, q1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        data = np.zeros((n_frames, C, r1 - r0, q1 - q0))
        data[: b - a] = sub[a:b, :, r0:r1, q0:q1]
        patch = Patch(int(r0), int(q0 + x0), data.reshape(n_frames * C, r1 - r0, q1 - q0))
        out.append(_Window(frames.origin_ms + k * frames.bin_width, SparseSample((n_frames * C, H, W), [patch])))
    return out


class _Nets:
    def __init__(self, segnet, classifier):
        from .models.training import uses_norm

        self.seg = segnet.build_model()
        self.cls = classifier.build_model()
        self.seg_mode = segnet.meta.get("mode", "Raw")
        self.cls_mode = classifier.meta.get("mode", "Raw")
        self.seg_scale = bool(segnet.meta.get("norm_scale", True))
        self.cls_scale = bool(classifier.meta.get("norm_scale", True))
        self.same_prep = (uses_norm(self.seg_mode), self.seg_scale) == (uses_norm(self.cls_mode), self.cls_scale)

    def run(self, wins: list[_Window], cfg: DecoderConfig) -> list[Detection]:
        import torch

        from .models.nets import PatchBatch
        from .models.training import prepare, softmax

        dets = []
        for b0 in range(0, len(wins), cfg.batch_size):
            chunk = wins[b0 : b0 + cfg.batch_size]
            seg_in = [prepare(w.sample, self.seg_mode, norm_scale=self.seg_scale) for w in chunk]
            with torch.no_grad():
                p = softmax(self.seg(PatchBatch.from_sparse(seg_in)).double().numpy())[:, 1]
            keep = [i for i in range(len(chunk)) if p[i] >= cfg.segmenter_threshold]
            if not keep:
                continue
            cls_in = [seg_in[i] if self.same_prep else prepare(chunk[i].sample, self.cls_mode, norm_scale=self.cls_scale) for i in keep]
            with torch.no_grad():
                q = softmax(self.cls(PatchBatch.from_sparse(cls_in)).double().numpy())
            for i, row in zip(keep, q):
                j = int(np.argmax(row))
                dets.append(Detection(chunk[i].t, LETTERS[j], float(min(max(row[j], 1e-12), 1.0))))
        return dets


def stream_decode(frames: FrameTensor, segnet, classifier, cfg: DecoderConfig = DecoderConfig()) -> list[Detection]:
    """Gate and classify every stride position of a binned stream; time-ordered detections.

    Windows without any event inside the mask are background by definition
    and skip both networks.
    """
    _check_nets(segnet, classifier, cfg, frames.bin_width)
    nets = _Nets(segnet, classifier)
    n = segnet.arch.frames
    return nets.run(_windows(frames, cfg, 0, frames.n_bins, n), cfg)


def decode_events(
    stream: EventStream,
    segnet,
    classifier,
    cfg: DecoderConfig = DecoderConfig(),
    binning: BinningConfig = BinningConfig(),
) -> list[Detection]:
    """``stream_decode`` over raw events, binning a bounded chunk of the stream at a time."""
    _check_nets(segnet, classifier, cfg, binning.bin_width)
    nets = _Nets(segnet, classifier)
    n = segnet.arch.frames
    bw = binning.bin_width
    step = max(1, int(round(cfg.stride / bw)))
    total = int(math.ceil(stream.end_us / binning.bin_width_us)) if len(stream) or stream.duration_us else 0
    dets = []
    k = 0
    while k < total:
        k_end = min(total, k + cfg.chunk_windows * step)
        frames = bin_events(stream, binning, start_ms=k * bw, duration_ms=(k_end - k + n) * bw)
        dets += nets.run(_windows(frames, cfg, 0, k_end - k, n), cfg)
        k = k_end
    return dets


def temporal_filter(detections: Sequence[Detection], cfg: DecoderConfig = DecoderConfig()) -> list[tuple[str, float]]:
    """Register one character per run of at least ``min_consecutive`` detections.

    A run continues while successive detections are less than
    ``consec_gap_max`` apart.  Its label is the majority vote; ties go to the
    label with the highest mean confidence, then alphabetical order.
    """
    out = []
    run: list[Detection] = []

    def close():
        if len(run) >= cfg.min_consecutive:
            votes = Counter(d.char for d in run)
            top = max(votes.values())
            tied = [c for c, v in votes.items() if v == top]
            conf = {c: np.mean([d.confidence for d in run if d.char == c]) for c in tied}
            label = min(tied, key=lambda c: (-conf[c], c))
            out.append((label, run[0].t))

    for d in detections:
        if run and not d.t - run[-1].t < cfg.consec_gap_max:
            close()
            run = []
        run.append(d)
    if run:
        close()
    return out


def assemble_words(registered: Sequence[tuple[str, float]], cfg: DecoderConfig = DecoderConfig()) -> list[str]:
    """Concatenate registered characters, splitting where consecutive times differ by more than word_gap_min."""
    words = []
    prev = None
    for ch, t in registered:
        if prev is None or t - prev > cfg.word_gap_min:
            words.append(ch)
        else:
            words[-1] += ch
        prev = t
    return words


# --- spell checking ----------------------------------------------------------------


@dataclass(frozen=True)
class Vocabulary:
    words: tuple
    max_edit_distance: int = 2

    def __post_init__(self):
        ws = tuple(sorted({w.strip().upper() for w in self.words if w.strip()}))
        bad = [w for w in ws if not w.isalpha() or not w.isascii()]
        if bad:
            raise ValueError(f"vocabulary words must be A-Z only: {bad[:3]}")
        object.__setattr__(self, "words", ws)
        object.__setattr__(self, "_set", frozenset(ws))

    def __contains__(self, w):
        return w in self._set

    def __len__(self):
        return len(self.words)

    @classmethod
    def bundled(cls, extra: Iterable[str] = ()) -> "Vocabulary":
        text = resources.files("evbraille.data").joinpath("vocabulary.txt").read_text()
        return cls(tuple(ln for ln in text.splitlines() if ln and not ln.startswith("#")) + tuple(extra))

    @classmethod
    def from_file(cls, path, max_edit_distance: int = 2) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")), max_edit_distance)


def levenshtein(a: str, b: str, bound: int | None = None) -> int:
    """Edit distance with unit insert/delete/substitute costs.

    With ``bound``, returns ``bound + 1`` as soon as the distance must exceed it.
    """
    if bound is not None and abs(len(a) - len(b)) > bound:
        return bound + 1
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        if bound is not None and min(cur) > bound:
            return bound + 1
        prev = cur
    return prev[-1] if bound is None else min(prev[-1], bound + 1)


def spell_correct(word: str, vocab: Vocabulary) -> str:
    """Closest vocabulary word within the edit bound (ties: distance, then alphabetical); else unchanged."""
    if len(vocab) == 0:
        raise ValueError("spell checking needs a non-empty vocabulary")
    w = word.upper()
    if w in vocab:
        return w
    k = vocab.max_edit_distance
    best = None
    for cand in vocab.words:
        d = levenshtein(w, cand, k)
        if d <= k and (best is None or (d, cand) < best):
            best = (d, cand)
    return best[1] if best else w


@dataclass
class DecodeReport:
    detections: list
    registered: list
    words_raw: list
    words_corrected: list | None = None

    def text(self) -> str:
        return " ".join(self.words_corrected if self.words_corrected is not None else self.words_raw)

    def to_dict(self) -> dict:
        return {
            "detections": [{"t": d.t, "char": d.char, "confidence": d.confidence} for d in self.detections],
            "registered": [{"char": c, "t": t} for c, t in self.registered],
            "words_raw": list(self.words_raw),
            "words_corrected": list(self.words_corrected) if self.words_corrected is not None else None,
        }


def read_words(detections: Sequence[Detection], cfg: DecoderConfig = DecoderConfig(), vocab: Vocabulary | None = None) -> DecodeReport:
    reg = temporal_filter(detections, cfg)
    raw = assemble_words(reg, cfg)
    corrected = [spell_correct(w, vocab) for w in raw] if vocab is not None else None
    return DecodeReport(list(detections), reg, raw, corrected)
