"""Event streams, time binning into count tensors, windowing and masking.

Events are kept column-wise in numpy arrays rather than as Python objects;
a single :class:`Event` is only materialised when iterating.
"""

from __future__ import annotations

import csv
import math
import queue
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

ON = 1
OFF = 0

SENSOR_WIDTH = 640
SENSOR_HEIGHT = 480

EVB_MAGIC = b"EVB1"
_EVB_HEADER = struct.Struct("<4sIIQ")
_EVB_RECORD = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])


class EventBoundsError(ValueError):
    """An event lies outside the sensor array."""


class EventFormatError(ValueError):
    """An event file could not be parsed."""


class Event(NamedTuple):
    t: int  # microseconds since stream start
    x: int
    y: int
    polarity: int  # ON=1, OFF=0


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class EventStream:
    """Time-ordered events from a ``sensor_width`` x ``sensor_height`` array.

    ``duration_us`` optionally declares how long the recording lasted, which
    fixes the number of time bins even when the tail is silent.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    sensor_width: int = SENSOR_WIDTH
    sensor_height: int = SENSOR_HEIGHT
    duration_us: int | None = None

    def __post_init__(self):
        t = np.ascontiguousarray(self.t, dtype=np.int64)
        x = np.ascontiguousarray(self.x, dtype=np.int64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        p = np.ascontiguousarray(self.p, dtype=np.int64)
        if not (t.shape == x.shape == y.shape == p.shape) or t.ndim != 1:
            raise ValueError("event columns must be 1-D arrays of equal length")
        if t.size:
            bad = (t < 0) | (x < 0) | (y < 0) | (x >= self.sensor_width) | (y >= self.sensor_height)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise EventBoundsError(
                    f"event {i} at t={t[i]} (x={x[i]}, y={y[i]}) outside "
                    f"{self.sensor_width}x{self.sensor_height} sensor"
                )
            if ((p != ON) & (p != OFF)).any():
                raise ValueError("polarity must be 0 (OFF) or 1 (ON)")
            if np.any(np.diff(t) < 0):
                raise ValueError("events must be sorted by time")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "x", _frozen(x.astype(np.uint16)))
        object.__setattr__(self, "y", _frozen(y.astype(np.uint16)))
        object.__setattr__(self, "p", _frozen(p.astype(np.uint8)))

    @classmethod
    def from_events(cls, events: Iterable[Event | tuple], **kwargs) -> "EventStream":
        rows = list(events)
        if not rows:
            z = np.zeros(0, dtype=np.int64)
            return cls(z, z, z, z, **kwargs)
        a = np.asarray(rows, dtype=np.int64)
        return cls(a[:, 0], a[:, 1], a[:, 2], a[:, 3], **kwargs)

    @classmethod
    def empty(cls, **kwargs) -> "EventStream":
        return cls.from_events([], **kwargs)

    def __len__(self) -> int:
        return int(self.t.size)

    def __iter__(self) -> Iterator[Event]:
        for row in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(*row)

    @property
    def end_us(self) -> int:
        """Declared duration, or one past the last timestamp."""
        if self.duration_us is not None:
            return int(self.duration_us)
        return int(self.t[-1]) + 1 if self.t.size else 0

    def time_slice(self, start_us: int, stop_us: int) -> "EventStream":
        """Events with ``start_us <= t < stop_us`` (timestamps unchanged)."""
        lo, hi = np.searchsorted(self.t, [start_us, stop_us], side="left")
        return EventStream(
            self.t[lo:hi], self.x[lo:hi], self.y[lo:hi], self.p[lo:hi],
            self.sensor_width, self.sensor_height, self.duration_us,
        )


@dataclass(frozen=True)
class BinningConfig:
    bin_width: float = 10.0  # ms
    spatial_factor: int = 4
    polarity_mode: str = "split"  # "split" -> C=2 (OFF, ON); "merged" -> C=1

    def __post_init__(self):
        if not self.bin_width > 0:
            raise ValueError("bin_width must be positive")
        if self.spatial_factor < 1:
            raise ValueError("spatial_factor must be >= 1")
        if self.polarity_mode not in ("split", "merged"):
            raise ValueError(f"unknown polarity_mode {self.polarity_mode!r}")

    @property
    def channels(self) -> int:
        return 2 if self.polarity_mode == "split" else 1

    @property
    def bin_width_us(self) -> int:
        return int(round(self.bin_width * 1000))


@dataclass(frozen=True)
class FrameTensor:
    """Event counts of shape (T, C, H, W).

    Bin ``k`` covers ``[origin + k*bin_width, origin + (k+1)*bin_width)`` ms.
    In split mode channel 0 holds OFF and channel 1 ON events.
    """

    counts: np.ndarray
    bin_width: float = 10.0
    origin_ms: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 4:
            raise ValueError(f"expected (T, C, H, W) counts, got shape {c.shape}")
        if c.size and c.min() < 0:
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(c))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.counts.shape

    @property
    def n_bins(self) -> int:
        return self.counts.shape[0]

    @property
    def duration_ms(self) -> float:
        return self.n_bins * self.bin_width

    def total(self) -> int:
        return int(self.counts.sum(dtype=np.int64))

    def bin_start_ms(self, k: int) -> float:
        return self.origin_ms + k * self.bin_width


def _check_factor(width: int, height: int, factor: int):
    if width % factor or height % factor:
        raise ValueError(f"spatial_factor {factor} does not divide sensor {width}x{height}")


def bin_events(
    stream: EventStream,
    config: BinningConfig = BinningConfig(),
    *,
    start_ms: float = 0.0,
    duration_ms: float | None = None,
) -> FrameTensor:
    """Count events per (time bin, polarity channel, subsampled pixel).

    Subsampling sums each ``factor x factor`` pixel block, so the tensor total
    equals the number of events inside the binned time range.  Without
    ``duration_ms`` the tensor spans up to the stream's end.
    """
    _check_factor(stream.sensor_width, stream.sensor_height, config.spatial_factor)
    if start_ms < 0:
        raise ValueError("start_ms must be non-negative")
    bw = config.bin_width_us
    start_us = int(round(start_ms * 1000))
    if start_us % bw:
        start_us -= start_us % bw
    if duration_ms is None:
        n_bins = max(0, math.ceil((stream.end_us - start_us) / bw))
    else:
        n_bins = int(math.ceil(round(duration_ms * 1000) / bw))
    f = config.spatial_factor
    H, W = stream.sensor_height // f, stream.sensor_width // f
    C = config.channels
    counts = np.zeros((n_bins, C, H, W), dtype=np.int32)
    sub = stream.time_slice(start_us, start_us + n_bins * bw)
    if len(sub):
        k = (sub.t - start_us) // bw
        c = sub.p.astype(np.int64) if C == 2 else np.zeros(len(sub), dtype=np.int64)
        flat = ((k * C + c) * H + sub.y // f) * W + sub.x // f
        np.add.at(counts.reshape(-1), flat, 1)
    return FrameTensor(counts, config.bin_width, start_us / 1000.0)


def slice_window(frames: FrameTensor, start: float, duration: float) -> FrameTensor:
    """Frames covering ``[start, start + duration)`` ms, zero-padded outside the source.

    ``start`` is rounded down to a bin boundary; ``duration`` must be a
    whole number of bins.
    """
    if start < 0:
        raise ValueError("window start must be non-negative")
    bw = frames.bin_width
    n = duration / bw
    if abs(n - round(n)) > 1e-9 or n < 0:
        raise ValueError(f"duration {duration} ms is not a multiple of the {bw} ms bin width")
    n = int(round(n))
    k0 = int(math.floor((start - frames.origin_ms) / bw + 1e-9))
    src = frames.counts
    T = src.shape[0]
    out = np.zeros((n,) + src.shape[1:], dtype=src.dtype)
    lo, hi = max(k0, 0), min(k0 + n, T)
    if hi > lo:
        out[lo - k0:hi - k0] = src[lo:hi]
    return FrameTensor(out, bw, frames.origin_ms + k0 * bw)


def apply_spatial_mask(frames: FrameTensor, x_min: int, x_max: int) -> FrameTensor:
    """Zero every column outside ``[x_min, x_max)`` (subsampled pixels)."""
    W = frames.shape[3]
    if not 0 <= x_min < x_max <= W:
        raise ValueError(f"invalid mask [{x_min}, {x_max}) for width {W}")
    out = np.zeros_like(frames.counts)
    out[..., x_min:x_max] = frames.counts[..., x_min:x_max]
    return FrameTensor(out, frames.bin_width, frames.origin_ms)


def iter_bins(
    chunks: Iterable[EventStream],
    config: BinningConfig = BinningConfig(),
    *,
    maxsize: int = 8,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(bin_index, frame)`` pairs from a chunked live stream.

    A producer thread bins incoming chunks and hands completed bins through a
    bounded queue; bins come out in time order, each exactly once.  Chunks
    must be time-ordered and non-overlapping.
    """
    q: queue.Queue = queue.Queue(maxsize=maxsize)
    done = object()
    bw = config.bin_width_us

    def produce():
        pending: list[EventStream] = []
        next_bin = 0
        width = height = None
        try:
            for chunk in chunks:
                width, height = chunk.sensor_width, chunk.sensor_height
                pending.append(chunk)
                # bins strictly before the chunk's last timestamp are complete
                horizon = int(chunk.t[-1]) // bw if len(chunk) else next_bin
                if horizon > next_bin:
                    merged = _concat(pending)
                    frames = bin_events(merged, config, start_ms=next_bin * bw / 1000,
                                        duration_ms=(horizon - next_bin) * bw / 1000)
                    for i in range(frames.n_bins):
                        q.put((next_bin + i, frames.counts[i]))
                    pending = [merged.time_slice(horizon * bw, 2**62)]
                    next_bin = horizon
            if width is not None:
                merged = _concat(pending)
                if len(merged) or merged.duration_us:
                    frames = bin_events(merged, config, start_ms=next_bin * bw / 1000)
                    for i in range(frames.n_bins):
                        q.put((next_bin + i, frames.counts[i]))
        finally:
            q.put(done)

    worker = threading.Thread(target=produce, daemon=True)
    worker.start()
    while True:
        item = q.get()
        if item is done:
            break
        yield item
    worker.join()


def _concat(streams: list[EventStream]) -> EventStream:
    s0 = streams[0]
    return EventStream(
        np.concatenate([s.t for s in streams]),
        np.concatenate([s.x for s in streams]),
        np.concatenate([s.y for s in streams]),
        np.concatenate([s.p for s in streams]),
        s0.sensor_width, s0.sensor_height, streams[-1].duration_us,
    )


# --- file formats -----------------------------------------------------------

def write_events_csv(stream: EventStream, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t_us,x,y,p\n")
        if len(stream):
            a = np.stack([stream.t, stream.x, stream.y, stream.p], axis=1)
            np.savetxt(fh, a, fmt="%d", delimiter=",")


def read_events_csv(
    path: str | Path, width: int = SENSOR_WIDTH, height: int = SENSOR_HEIGHT
) -> EventStream:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["t_us", "x", "y", "p"]:
            raise EventFormatError(f"{path}: expected header t_us,x,y,p, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([int(v) for v in row])
            except ValueError:
                raise EventFormatError(f"{path}:{lineno}: non-integer field in {row}") from None
            if len(row) != 4:
                raise EventFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
    return EventStream.from_events(rows, sensor_width=width, sensor_height=height)


def write_evb(stream: EventStream, path: str | Path) -> None:
    rec = np.empty(len(stream), dtype=_EVB_RECORD)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    with open(path, "wb") as fh:
        fh.write(_EVB_HEADER.pack(EVB_MAGIC, stream.sensor_width, stream.sensor_height, len(stream)))
        fh.write(rec.tobytes())


def read_evb(path: str | Path) -> EventStream:
    data = Path(path).read_bytes()
    if len(data) < _EVB_HEADER.size:
        raise EventFormatError(f"{path}: truncated header")
    magic, width, height, n = _EVB_HEADER.unpack_from(data)
    if magic != EVB_MAGIC:
        raise EventFormatError(f"{path}: bad magic {magic!r}")
    body = data[_EVB_HEADER.size:]
    if len(body) != n * _EVB_RECORD.itemsize:
        raise EventFormatError(f"{path}: expected {n} records, found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=_EVB_RECORD)
    return EventStream(rec["t"].astype(np.int64), rec["x"], rec["y"], rec["p"], width, height)


def read_events(path: str | Path) -> EventStream:
    """Load an ``.evb`` or ``.csv`` event file by extension."""
    path = Path(path)
    if path.suffix == ".csv":
        return read_events_csv(path)
    return read_evb(path)


def write_events(stream: EventStream, path: str | Path) -> None:
    path = Path(path)
    if path.suffix == ".csv":
        write_events_csv(stream, path)
    else:
        write_evb(stream, path)
