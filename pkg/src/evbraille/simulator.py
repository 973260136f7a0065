"""Synthetic event-based tactile sensor sliding over a Braille board.

The board translates under a gel pad at constant speed.  Each raised dot
produces a burst of events when it crosses the contact line (a transient
centred on the crossing), a weaker lead-in while the gel deforms ahead of
it, and a trail while it stays inside the contact footprint.  ON events sit on the dot image's leading edge, OFF
events on its trailing edge.  Expected counts scale with indentation depth
through a piecewise-linear gain, and faster scans expose each dot for less
time, lowering per-crossing counts.

Image coordinates are full sensor resolution: the dot image moves toward
larger x, and the contact line sits at ``contact_x_px``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .board import BoardLayout, dot_positions, encode_char, is_single_column
from .events import SENSOR_HEIGHT, SENSOR_WIDTH, EventStream

DEPTH_ANCHORS = ((0.2, 1.00), (0.6, 1.45), (1.0, 1.71), (1.5, 1.91))
REFERENCE_SPEED = 8.0  # mm/s


@dataclass(frozen=True)
class ScanConfig:
    speed: float = 8.0  # mm/s
    depth: float = 1.5  # mm
    row: int = 0
    seed: int = 0
    px_per_mm: float = 16.0
    footprint_width: float = 3.5  # mm of travel a dot stays in contact
    lead_in: float = 2.0  # mm between scan start and the first column
    lead_out: float = 2.0
    y_jitter: float = 1.0  # mm, max per-scan vertical misalignment

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError("speed must be positive")
        if not self.depth > 0:
            raise ValueError("depth must be positive")
        if not 0.2 <= self.depth <= 1.5:
            warnings.warn(f"depth {self.depth} mm outside the calibrated 0.2-1.5 mm range", stacklevel=2)


@dataclass(frozen=True)
class GelResponseModel:
    base_rate: float = 105.0  # expected events per dot edge at 0.2 mm
    depth_anchors: tuple = DEPTH_ANCHORS
    psf_radius_px: float = 4.0
    contact_x_px: float = 100.0
    transient_fraction: float = 0.5
    approach_fraction: float = 0.2  # gel deforming ahead of a dot before it reaches the line
    approach_mm: float = 1.25
    transient_sigma_mm: float = 0.25
    trail_decay_mm: float = 2.0
    dot_gain_jitter: float = 0.1  # log-normal sd of per-dot gain
    shallow_blur: float = 0.5  # extra psf spread at the shallowest depth

    def __post_init__(self):
        if not self.base_rate > 0:
            raise ValueError("base_rate must be positive")
        if self.transient_fraction < 0 or self.approach_fraction < 0 or self.transient_fraction + self.approach_fraction > 1:
            raise ValueError("transient and approach fractions must be non-negative and sum to at most 1")
        gains = [g for _, g in self.depth_anchors]
        depths = [d for d, _ in self.depth_anchors]
        if any(b < a for a, b in zip(gains, gains[1:])) or any(b <= a for a, b in zip(depths, depths[1:])):
            raise ValueError("depth anchors must be increasing in depth with non-decreasing gain")


@dataclass(frozen=True)
class NoiseModel:
    background_rate: float = 0.0  # events / s / pixel
    hot_pixel_prob: float = 0.0
    hot_pixel_rate: float = 50.0  # events / s for a hot pixel

    def __post_init__(self):
        if self.background_rate < 0 or self.hot_pixel_prob < 0 or self.hot_pixel_rate < 0:
            raise ValueError("noise rates must be non-negative")


def depth_gain(depth: float, anchors=DEPTH_ANCHORS) -> float:
    """Event-count multiplier relative to a 0.2 mm indentation, clamped at the anchor range."""
    if not depth > 0:
        raise ValueError("depth must be positive")
    xs = [a for a, _ in anchors]
    ys = [b for _, b in anchors]
    return float(np.interp(depth, xs, ys))


def speed_exposure(speed: float) -> float:
    return min(1.0, REFERENCE_SPEED / speed)


def _scan_start(board: BoardLayout, config: ScanConfig) -> float:
    """Board x (mm) under the contact line at t=0."""
    return -config.lead_in


def ground_truth_onsets(board: BoardLayout, config: ScanConfig) -> list[tuple[str, float, bool]]:
    """(letter, onset_ms, single_column) per character of the scanned row.

    The onset is when the character's left column crosses the contact line,
    which lies inside the start window.
    """
    if not 0 <= config.row < len(board.rows):
        raise IndexError(f"row {config.row} out of range")
    s0 = _scan_start(board, config)
    out = []
    for i, ch in board.characters(config.row):
        x = board.slot(config.row, i) * board.cell_pitch
        out.append((ch, (x - s0) / config.speed * 1000.0, is_single_column(encode_char(ch))))
    return out


def scan_duration_ms(board: BoardLayout, config: ScanConfig, gel: GelResponseModel = GelResponseModel()) -> float:
    s0 = _scan_start(board, config)
    text = board.rows[config.row].rstrip()
    last = board.slot(config.row, len(text) - 1) * board.cell_pitch + board.dot_spacing if text else 0.0
    reach = config.footprint_width + 3 * gel.transient_sigma_mm
    return (last + reach + config.lead_out - s0) / config.speed * 1000.0


def simulate_scan(
    board: BoardLayout,
    config: ScanConfig,
    gel: GelResponseModel = GelResponseModel(),
    noise: NoiseModel = NoiseModel(),
) -> EventStream:
    """Generate the event stream of one constant-speed pass over a board row."""
    if not 0 <= config.row < len(board.rows):
        raise IndexError(f"row {config.row} out of range")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, config.row]))
    v = config.speed
    ppm = config.px_per_mm
    s0 = _scan_start(board, config)
    duration_us = int(np.ceil(scan_duration_ms(board, config, gel) * 1000))

    dots = [p for i, _ in board.characters(config.row) for p in dot_positions(board, config.row, i)]
    y_offset = rng.uniform(-config.y_jitter, config.y_jitter) if config.y_jitter > 0 else 0.0

    ts, xs, ys, ps = [], [], [], []
    if dots:
        bx = np.array([d[0] for d in dots])
        by = np.array([d[1] for d in dots])
        gain = depth_gain(config.depth, gel.depth_anchors)
        g_max = gel.depth_anchors[-1][1]
        g_min = gel.depth_anchors[0][1]
        blur = 1.0 + gel.shallow_blur * (g_max - gain) / (g_max - g_min)
        psf = gel.psf_radius_px * blur
        dot_gain = np.exp(rng.normal(-0.5 * gel.dot_gain_jitter**2, gel.dot_gain_jitter, size=len(dots)))
        lam = gel.base_rate * gain * speed_exposure(v) * dot_gain
        r_px = 0.5 * board.dot_diameter * ppm
        t_contact = (bx - s0) / v  # s
        y_img = SENSOR_HEIGHT / 2 + (by - board.dot_spacing + y_offset) * ppm
        for pol, edge in ((1, r_px), (0, -r_px)):
            n = rng.poisson(lam)
            idx = np.repeat(np.arange(len(dots)), n)
            m = idx.size
            d = _travel(rng, m, gel, config.footprint_width)
            ts.append(np.floor((t_contact[idx] + d / v) * 1e6))
            xs.append(np.rint(gel.contact_x_px + d * ppm + edge + rng.normal(0, psf, m)))
            ys.append(np.rint(y_img[idx] + rng.normal(0, psf, m)))
            ps.append(np.full(m, pol))

    dur_s = duration_us / 1e6
    if noise.background_rate > 0:
        m = rng.poisson(noise.background_rate * SENSOR_WIDTH * SENSOR_HEIGHT * dur_s)
        ts.append(np.floor(rng.uniform(0, dur_s, m) * 1e6))
        xs.append(rng.integers(0, SENSOR_WIDTH, m).astype(float))
        ys.append(rng.integers(0, SENSOR_HEIGHT, m).astype(float))
        ps.append(rng.integers(0, 2, m))
    if noise.hot_pixel_prob > 0:
        n_hot = rng.binomial(SENSOR_WIDTH * SENSOR_HEIGHT, noise.hot_pixel_prob)
        pix = rng.integers(0, SENSOR_WIDTH * SENSOR_HEIGHT, n_hot)
        per = rng.poisson(noise.hot_pixel_rate * dur_s, n_hot)
        pix = np.repeat(pix, per)
        ts.append(np.floor(rng.uniform(0, dur_s, pix.size) * 1e6))
        xs.append((pix % SENSOR_WIDTH).astype(float))
        ys.append((pix // SENSOR_WIDTH).astype(float))
        ps.append(rng.integers(0, 2, pix.size))

    if not ts:
        return EventStream.empty(duration_us=duration_us)
    t = np.concatenate(ts).astype(np.int64)
    x = np.concatenate(xs).astype(np.int64)
    y = np.concatenate(ys).astype(np.int64)
    p = np.concatenate(ps).astype(np.int64)
    keep = (t >= 0) & (t < duration_us) & (x >= 0) & (x < SENSOR_WIDTH) & (y >= 0) & (y < SENSOR_HEIGHT)
    t, x, y, p = t[keep], x[keep], y[keep], p[keep]
    order = np.lexsort((p, x, y, t))
    return EventStream(t[order], x[order], y[order], p[order], duration_us=duration_us)


def _travel(rng: np.random.Generator, m: int, gel: GelResponseModel, footprint: float) -> np.ndarray:
    """Dot travel (mm past the contact line) at which each event fires."""
    u_kind = rng.random(m)
    sig = gel.transient_sigma_mm
    d = np.clip(rng.normal(0.0, sig, m), -3 * sig, 3 * sig)
    # truncated exponential on [0, footprint] by inverse CDF
    u = rng.random(m)
    ell = gel.trail_decay_mm
    trail = -ell * np.log1p(-u * (1 - np.exp(-footprint / ell)))
    out = np.where(u_kind < gel.transient_fraction, d, trail)
    if gel.approach_fraction > 0:
        approach = -gel.approach_mm * rng.random(m)
        out = np.where(u_kind >= 1 - gel.approach_fraction, approach, out)
    return out


def write_ground_truth(onsets: list[tuple[str, float, bool]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["char", "onset_ms", "single_column"])
        for ch, t, single in onsets:
            w.writerow([ch, repr(float(t)), int(single)])


def read_ground_truth(path: str | Path) -> list[tuple[str, float, bool]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(r["char"], float(r["onset_ms"]), r["single_column"] in ("1", "True", "true")) for r in rows]
