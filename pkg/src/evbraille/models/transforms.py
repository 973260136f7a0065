"""Input transforms on count tensors shaped (T, C, H, W): crop, Norm, Aug."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..events import FrameTensor

INPUT_FRAMES = 20


def crop_start(counts: np.ndarray, n: int = INPUT_FRAMES) -> int:
    """First frame of the n-frame sub-window centred nearest the temporal mass centre."""
    T = counts.shape[0]
    if T < n:
        raise ValueError(f"need at least {n} frames, got {T}")
    per = counts.reshape(T, -1).sum(axis=1, dtype=np.float64)
    tot = per.sum()
    if tot == 0:
        return (T - n) // 2
    c = float(((np.arange(T) + 0.5) * per).sum() / tot)
    s = int(math.floor(c - n / 2 + 0.5))
    return min(max(s, 0), T - n)


def crop_frames(frames: FrameTensor, n: int = INPUT_FRAMES) -> FrameTensor:
    s = crop_start(frames.counts, n)
    return FrameTensor(frames.counts[s : s + n].copy(), frames.bin_width, frames.origin_ms + s * frames.bin_width)


def crop_to_input(segment, n: int = INPUT_FRAMES) -> np.ndarray:
    """350 ms character segment -> (20, C, H, W) float64 model input."""
    frames = segment.frames if hasattr(segment, "frames") else segment
    return crop_frames(frames, n).counts.astype(np.float64)


def mass_center_row(sample: np.ndarray) -> float | None:
    rows = sample.sum(axis=tuple(i for i in range(sample.ndim) if i != sample.ndim - 2), dtype=np.float64)
    tot = rows.sum()
    if tot == 0:
        return None
    return float((np.arange(len(rows)) * rows).sum() / tot)


def normalize_sample(sample: np.ndarray, scale: bool = True) -> np.ndarray:
    """Roll rows so the event mass centre sits on H/2, then divide by the total count.

    The roll is chosen from the row mass of the input; if rounding leaves the
    centre a row or more from H/2 (mass wrapping past the border), every roll
    is tried and the closest kept.  For integer-valued input the row sums and
    the total are exact, so ``normalize(k*s)`` and ``normalize(s)`` are
    bitwise equal.  ``scale=False`` only centres.
    """
    x = np.asarray(sample, dtype=np.float64)
    tot = x.sum()
    if tot == 0:
        return x.copy()
    rows = x.sum(axis=tuple(i for i in range(x.ndim) if i != x.ndim - 2))
    shift = _center_shift(rows)
    if scale:
        x = x / tot
    return np.roll(x, shift, axis=-2)


@dataclass(frozen=True)
class AugConfig:
    p_geom: float = 0.5
    rotation_deg: float = 10.0
    translate_frac: float = 0.10
    scale_min: float = 0.8
    scale_max: float = 1.2
    p_noise: float = 0.5
    toggle_rate: float = 1e-5

    def __post_init__(self):
        for name in ("p_geom", "p_noise", "toggle_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("scale range must be positive and ordered")
        if self.translate_frac < 0 or self.rotation_deg < 0:
            raise ValueError("rotation and translation bounds must be non-negative")


def affine_index_map(H: int, W: int, angle_deg: float, tx: float, ty: float, scale: float):
    """Nearest-neighbour source indices for rotating/scaling about (W//2, H//2) then translating.

    Returns (src_y, src_x, valid) with shape (H, W).
    """
    cy, cx = H // 2, W // 2
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    u = xx - cx - tx
    v = yy - cy - ty
    # inverse of p' = scale * R p + t
    sx = (c * u + s * v) / scale + cx
    sy = (-s * u + c * v) / scale + cy
    ix = np.floor(sx + 0.5).astype(np.int64)
    iy = np.floor(sy + 0.5).astype(np.int64)
    valid = (ix >= 0) & (ix < W) & (iy >= 0) & (iy < H)
    return np.where(valid, iy, 0), np.where(valid, ix, 0), valid


def apply_affine(sample: np.ndarray, angle_deg: float, tx: float, ty: float, scale: float) -> np.ndarray:
    H, W = sample.shape[-2:]
    iy, ix, valid = affine_index_map(H, W, angle_deg, tx, ty, scale)
    return np.ascontiguousarray(sample[..., iy, ix] * valid)


def toggle_noise(sample: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Flip cells between empty and active; an activated cell gets the smallest positive value."""
    out = np.array(sample, dtype=np.float64, copy=True, order="C")
    flat = out.reshape(-1)
    k = rng.binomial(flat.size, rate)
    if k == 0:
        return out
    idx = rng.choice(flat.size, size=k, replace=False) if k > 64 else _distinct(rng, flat.size, k)
    pos = flat[flat > 0]
    on_value = pos.min() if pos.size else 1.0
    hit = flat[idx]
    flat[idx] = np.where(hit > 0, 0.0, on_value)
    return out


def _distinct(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    chosen: list[int] = []
    seen = set()
    while len(chosen) < k:
        i = int(rng.integers(n))
        if i not in seen:
            seen.add(i)
            chosen.append(i)
    return np.array(chosen, dtype=np.int64)


def augment(sample: np.ndarray, config: AugConfig, rng: np.random.Generator) -> np.ndarray:
    """Random joint affine over all frames (prob p_geom), then salt-and-pepper toggles (prob p_noise)."""
    do_geom = rng.random() < config.p_geom
    do_noise = rng.random() < config.p_noise
    out = np.asarray(sample, dtype=np.float64)
    if do_geom:
        H, W = out.shape[-2:]
        angle = rng.uniform(-config.rotation_deg, config.rotation_deg)
        tx = rng.uniform(-config.translate_frac, config.translate_frac) * W
        ty = rng.uniform(-config.translate_frac, config.translate_frac) * H
        sc = rng.uniform(config.scale_min, config.scale_max)
        out = apply_affine(out, angle, tx, ty, sc)
    if do_noise:
        out = toggle_noise(out, config.toggle_rate, rng)
    if out is sample:
        out = out.copy()
    return out


# --- sparse samples ------------------------------------------------------------
#
# A window holds a few hundred active cells in a 768,000-cell grid, so the
# training and decoding paths keep samples as a list of dense patches placed
# on an empty canvas.  The value of a cell is the sum over patches covering
# it.  Every operation here matches its dense counterpart above.


@dataclass
class Patch:
    r0: int
    c0: int
    data: np.ndarray  # (C, h, w)


@dataclass
class SparseSample:
    shape: tuple  # (C, H, W), frames and polarities folded into C
    patches: list

    @classmethod
    def from_dense(cls, arr: np.ndarray) -> "SparseSample":
        a = np.asarray(arr, dtype=np.float64)
        a = a.reshape(-1, a.shape[-2], a.shape[-1])
        C, H, W = a.shape
        act = np.abs(a).sum(axis=0)
        rows = np.flatnonzero(act.any(axis=1))
        if rows.size == 0:
            return cls((C, H, W), [])
        cols = np.flatnonzero(act.any(axis=0))
        r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
        return cls((C, H, W), [Patch(int(r0), int(c0), a[:, r0:r1, c0:c1].copy())])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for p in self.patches:
            h, w = p.data.shape[1:]
            out[:, p.r0 : p.r0 + h, p.c0 : p.c0 + w] += p.data
        return out

    def total(self) -> float:
        return float(sum(p.data.sum() for p in self.patches))

    def row_mass(self) -> np.ndarray:
        rows = np.zeros(self.shape[1])
        for p in self.patches:
            rows[p.r0 : p.r0 + p.data.shape[1]] += p.data.sum(axis=(0, 2))
        return rows

    def bbox(self):
        """(r0, r1, c0, c1) half-open cover of all patches, or None."""
        if not self.patches:
            return None
        return (
            min(p.r0 for p in self.patches),
            max(p.r0 + p.data.shape[1] for p in self.patches),
            min(p.c0 for p in self.patches),
            max(p.c0 + p.data.shape[2] for p in self.patches),
        )


def _center_shift(rows: np.ndarray) -> int:
    """Row roll that brings the mass centre of ``rows`` within one row of H/2."""
    H = len(rows)
    target = H / 2
    tot = rows.sum()
    idx = np.arange(H)
    r = float((idx * rows).sum() / tot)
    shift = int(round(target - r))
    if abs(float((idx * np.roll(rows, shift)).sum() / tot) - target) < 1:
        return shift
    return min(range(H), key=lambda s: (abs(float((idx * np.roll(rows, s)).sum() / tot) - target), s))


def _roll_patches(patches: list, shift: int, H: int) -> list:
    out = []
    for p in patches:
        h = p.data.shape[1]
        r = (p.r0 + shift) % H
        if r + h <= H:
            out.append(Patch(r, p.c0, p.data))
        else:
            k = H - r
            out.append(Patch(r, p.c0, p.data[:, :k]))
            out.append(Patch(0, p.c0, p.data[:, k:]))
    return out


def normalize_sparse(s: SparseSample, scale: bool = True) -> SparseSample:
    tot = s.total()
    if tot == 0:
        return SparseSample(s.shape, [Patch(p.r0, p.c0, p.data.copy()) for p in s.patches])
    shift = _center_shift(s.row_mass())
    patches = [Patch(p.r0, p.c0, p.data / tot if scale else p.data.copy()) for p in s.patches]
    return SparseSample(s.shape, _roll_patches(patches, shift, s.shape[1]))


def _affine_patch(p: Patch, H: int, W: int, angle: float, tx: float, ty: float, sc: float) -> Patch | None:
    h, w = p.data.shape[1:]
    cy, cx = H // 2, W // 2
    a = math.radians(angle)
    c, s = math.cos(a), math.sin(a)
    ys = np.array([p.r0 - 1, p.r0 - 1, p.r0 + h, p.r0 + h], dtype=np.float64)
    xs = np.array([p.c0 - 1, p.c0 + w, p.c0 - 1, p.c0 + w], dtype=np.float64)
    fx = sc * (c * (xs - cx) - s * (ys - cy)) + cx + tx
    fy = sc * (s * (xs - cx) + c * (ys - cy)) + cy + ty
    y0, y1 = max(int(math.floor(fy.min())) - 2, 0), min(int(math.ceil(fy.max())) + 3, H)
    x0, x1 = max(int(math.floor(fx.min())) - 2, 0), min(int(math.ceil(fx.max())) + 3, W)
    if y0 >= y1 or x0 >= x1:
        return None
    iy, ix, valid = affine_index_map(H, W, angle, tx, ty, sc)
    iy, ix, valid = iy[y0:y1, x0:x1], ix[y0:y1, x0:x1], valid[y0:y1, x0:x1]
    ly, lx = iy - p.r0, ix - p.c0
    inside = valid & (ly >= 0) & (ly < h) & (lx >= 0) & (lx < w)
    data = p.data[:, np.where(inside, ly, 0), np.where(inside, lx, 0)] * inside
    return Patch(y0, x0, data)


def _toggle_sparse(s: SparseSample, rate: float, rng: np.random.Generator) -> SparseSample:
    C, H, W = s.shape
    n = C * H * W
    patches = [Patch(p.r0, p.c0, p.data.copy()) for p in s.patches]
    k = rng.binomial(n, rate)
    if k == 0:
        return SparseSample(s.shape, patches)
    idx = rng.choice(n, size=k, replace=False) if k > 64 else _distinct(rng, n, k)
    pos = [p.data[p.data > 0] for p in patches]
    pos = np.concatenate(pos) if pos else np.zeros(0)
    on_value = pos.min() if pos.size else 1.0
    # dense toggling decides every cell from the pre-toggle values
    decisions = []
    for i in idx:
        ch, rem = divmod(int(i), H * W)
        y, x = divmod(rem, W)
        cover = [p for p in patches if p.r0 <= y < p.r0 + p.data.shape[1] and p.c0 <= x < p.c0 + p.data.shape[2]]
        val = sum(p.data[ch, y - p.r0, x - p.c0] for p in cover)
        decisions.append((ch, y, x, cover, val > 0))
    for ch, y, x, cover, active in decisions:
        if active:
            for p in cover:
                p.data[ch, y - p.r0, x - p.c0] = 0.0
        elif cover:
            for j, p in enumerate(cover):
                p.data[ch, y - p.r0, x - p.c0] = on_value if j == 0 else 0.0
        else:
            d = np.zeros((C, 1, 1))
            d[ch, 0, 0] = on_value
            patches.append(Patch(y, x, d))
    return SparseSample(s.shape, patches)


def augment_sparse(s: SparseSample, config: AugConfig, rng: np.random.Generator) -> SparseSample:
    """Sparse twin of ``augment``: same random draws, same result after ``to_dense``."""
    do_geom = rng.random() < config.p_geom
    do_noise = rng.random() < config.p_noise
    out = s
    if do_geom:
        C, H, W = s.shape
        angle = rng.uniform(-config.rotation_deg, config.rotation_deg)
        tx = rng.uniform(-config.translate_frac, config.translate_frac) * W
        ty = rng.uniform(-config.translate_frac, config.translate_frac) * H
        sc = rng.uniform(config.scale_min, config.scale_max)
        moved = [_affine_patch(p, H, W, angle, tx, ty, sc) for p in s.patches]
        out = SparseSample(s.shape, [p for p in moved if p is not None])
    if do_noise:
        out = _toggle_sparse(out, config.toggle_rate, rng)
    if out is s:
        out = SparseSample(s.shape, [Patch(p.r0, p.c0, p.data.copy()) for p in s.patches])
    return out
