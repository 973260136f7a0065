"""Residual CNN over 200 ms event windows (20 frames x ON/OFF, stacked as channels).

Stem: 7x7 stride-2 convolution + batch norm + ReLU + 3x3 stride-2 max pool.
Four residual stages, adaptive average pooling, and three fully connected
layers with ReLU and dropout.  Inputs are sparse, so the stem convolution
runs only on the bounding box of non-zero input and is zero-padded back;
the result is identical to the dense convolution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

PRESETS = {
    "paper": dict(stem_channels=64, stage_channels=(64, 128, 256, 512), blocks=(3, 4, 6, 3), fc=(256, 128)),
    "reduced": dict(stem_channels=16, stage_channels=(16, 32, 64, 128), blocks=(1, 1, 1, 1), fc=(128, 64)),
}


@dataclass(frozen=True)
class ArchConfig:
    preset: str = "reduced"
    num_classes: int = 26
    frames: int = 20
    polarities: int = 2
    height: int = 120
    width: int = 160
    stem_channels: int = 16
    stage_channels: tuple = (16, 32, 64, 128)
    blocks: tuple = (1, 1, 1, 1)
    fc: tuple = (128, 64)
    dropout: float = 0.5
    input_scale: float = 1.0  # multiplies inputs; Norm mode sets 1000 so unit-sum samples are not lost in BN eps

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "fc", tuple(int(f) for f in self.fc))
        if self.num_classes not in (2, 26):
            raise ValueError("num_classes must be 2 or 26")
        if len(self.stage_channels) != 4 or len(self.blocks) != 4 or len(self.fc) != 2:
            raise ValueError("expected 4 stages and 2 hidden fully connected layers")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def in_channels(self) -> int:
        return self.frames * self.polarities

    @classmethod
    def from_preset(cls, preset: str = "reduced", **overrides) -> "ArchConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        return cls(preset=preset, **{**PRESETS[preset], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("stage_channels", "blocks", "fc"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with a skip connection; the first may downsample."""

    def __init__(self, in_channels, out_channels, stride=1):
        super().__init__()
        self.first_conv = nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.second_conv = nn.Conv2d(out_channels, out_channels, kernel_size=3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)

        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.first_conv(x)))
        out = self.bn2(self.second_conv(out))
        out = out + self.shortcut(x)
        return F.relu(out)


def _out_range(lo: int, hi: int, n_out: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    """Inclusive output index range whose receptive field touches input [lo, hi]."""
    a = max(0, math.ceil((lo - (k - 1 - padding)) / stride))
    b = min(n_out - 1, (hi + padding) // stride)
    return a, b


def region_conv(
    x: torch.Tensor, r0: int, c0: int, H: int, W: int, weight: torch.Tensor, stride: int = 2, padding: int = 3
):
    """Convolve a patch lying at (r0, c0) of an otherwise empty H x W canvas.

    Returns the non-zero part of the output and its top-left output index.
    """
    k = weight.shape[-1]
    h, w = x.shape[-2:]
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    a_r, b_r = _out_range(r0, r0 + h - 1, Ho, k, stride, padding)
    a_c, b_c = _out_range(c0, c0 + w - 1, Wo, k, stride, padding)
    lo_r, hi_r = a_r * stride - padding, b_r * stride - padding + k
    lo_c, hi_c = a_c * stride - padding, b_c * stride - padding + k
    xin = F.pad(x, (c0 - lo_c, hi_c - c0 - w, r0 - lo_r, hi_r - r0 - h))
    return F.conv2d(xin, weight, stride=stride), a_r, a_c


def sparse_stem_conv(x: torch.Tensor, weight: torch.Tensor, stride: int = 2, padding: int = 3) -> torch.Tensor:
    """conv2d(x, weight, stride, padding) evaluated only where the receptive field touches non-zero input."""
    N, C, H, W = x.shape
    k = weight.shape[-1]
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    active = x.detach().ne(0).any(dim=1).any(dim=0)
    rows = torch.nonzero(active.any(dim=1)).flatten()
    if rows.numel() == 0:
        return x.new_zeros((N, weight.shape[0], Ho, Wo))
    cols = torch.nonzero(active.any(dim=0)).flatten()
    r0, r1 = int(rows[0]), int(rows[-1]) + 1
    c0, c1 = int(cols[0]), int(cols[-1]) + 1
    y, a_r, a_c = region_conv(x[:, :, r0:r1, c0:c1], r0, c0, H, W, weight, stride, padding)
    return F.pad(y, (a_c, Wo - a_c - y.shape[-1], a_r, Ho - a_r - y.shape[-2]))


class PatchBatch:
    """A batch of sparse inputs: per sample, a list of (r0, c0, tensor(C, h, w)) patches.

    A cell's value is the sum of the patches covering it; everything else is zero.
    """

    def __init__(self, samples: list, shape: tuple):
        self.samples = samples
        self.shape = tuple(shape)  # (C, H, W)

    def __len__(self):
        return len(self.samples)

    @classmethod
    def from_sparse(cls, items, dtype=torch.float32) -> "PatchBatch":
        """Build from ``transforms.SparseSample`` objects."""
        items = list(items)
        if not items:
            raise ValueError("empty batch")
        samples = [[(p.r0, p.c0, torch.from_numpy(p.data).to(dtype)) for p in it.patches] for it in items]
        return cls(samples, items[0].shape)

    def to_dense(self) -> torch.Tensor:
        C, H, W = self.shape
        dtype = next((t.dtype for s in self.samples for _, _, t in s), torch.float32)
        out = torch.zeros((len(self), C, H, W), dtype=dtype)
        for n, s in enumerate(self.samples):
            for r0, c0, t in s:
                out[n, :, r0 : r0 + t.shape[1], c0 : c0 + t.shape[2]] += t
        return out

    def bbox(self):
        boxes = [(r0, r0 + t.shape[1], c0, c0 + t.shape[2]) for s in self.samples for r0, c0, t in s]
        if not boxes:
            return None
        return min(b[0] for b in boxes), max(b[1] for b in boxes), min(b[2] for b in boxes), max(b[3] for b in boxes)


def patch_stem_conv(batch: PatchBatch, weight: torch.Tensor, scale: float = 1.0, stride: int = 2, padding: int = 3):
    """Stem convolution of a PatchBatch.

    Returns the full output and the inclusive (row, row, col, col) box that can be non-zero.
    """
    C, H, W = batch.shape
    k = weight.shape[-1]
    N = len(batch)
    Ho = (H + 2 * padding - k) // stride + 1
    Wo = (W + 2 * padding - k) // stride + 1
    out = weight.new_zeros((N, weight.shape[0], Ho, Wo))
    box = batch.bbox()
    if box is None:
        return out, None
    r0, r1, c0, c1 = box
    union = (r1 - r0) * (c1 - c0) * N
    parts = sum(t.shape[1] * t.shape[2] for s in batch.samples for _, _, t in s)
    if union <= 2 * parts:
        canvas = weight.new_zeros((N, C, r1 - r0, c1 - c0))
        for n, s in enumerate(batch.samples):
            for pr, pc, t in s:
                canvas[n, :, pr - r0 : pr - r0 + t.shape[1], pc - c0 : pc - c0 + t.shape[2]] += t.to(weight.dtype)
        if scale != 1.0:
            canvas = canvas * scale
        y, a_r, a_c = region_conv(canvas, r0, c0, H, W, weight, stride, padding)
        out = F.pad(y, (a_c, Wo - a_c - y.shape[-1], a_r, Ho - a_r - y.shape[-2]))
        return out, (a_r, a_r + y.shape[-2] - 1, a_c, a_c + y.shape[-1] - 1)
    box_out = [Ho, -1, Wo, -1]
    per_sample = []
    for s in batch.samples:
        acc = None
        for pr, pc, t in s:
            x = t.to(weight.dtype).unsqueeze(0)
            if scale != 1.0:
                x = x * scale
            y, a_r, a_c = region_conv(x, pr, pc, H, W, weight, stride, padding)
            h, w = y.shape[-2:]
            y = F.pad(y, (a_c, Wo - a_c - w, a_r, Ho - a_r - h))
            acc = y if acc is None else acc + y
            box_out = [min(box_out[0], a_r), max(box_out[1], a_r + h - 1), min(box_out[2], a_c), max(box_out[3], a_c + w - 1)]
        per_sample.append(acc if acc is not None else out[:1])
    out = torch.cat(per_sample, dim=0)
    return out, tuple(box_out)


def pool_region(z_fn, s: torch.Tensor, box: tuple, kernel: int = 3, stride: int = 2, padding: int = 1) -> torch.Tensor:
    """max_pool2d(z_fn(s)) where s is zero outside ``box`` and z_fn is elementwise.

    z_fn is evaluated on the box plus a one-cell margin; the margin supplies
    the constant z_fn(0) used to fill the rest of the pooled map.
    """
    N, C, Ho, Wo = s.shape
    Po = (Ho + 2 * padding - kernel) // stride + 1
    Qo = (Wo + 2 * padding - kernel) // stride + 1
    pa, pb = _out_range(box[0], box[1], Po, kernel, stride, padding)
    qa, qb = _out_range(box[2], box[3], Qo, kernel, stride, padding)
    lo_r, hi_r = pa * stride - padding, pb * stride - padding + kernel  # rows feeding pooled pa..pb
    lo_c, hi_c = qa * stride - padding, qb * stride - padding + kernel
    m_r0, m_r1 = max(lo_r - 1, 0), min(hi_r + 1, Ho)
    m_c0, m_c1 = max(lo_c - 1, 0), min(hi_c + 1, Wo)
    z = z_fn(s[:, :, m_r0:m_r1, m_c0:m_c1])
    need = max(lo_r, 0) - m_r0, min(hi_r, Ho) - m_r0, max(lo_c, 0) - m_c0, min(hi_c, Wo) - m_c0
    zz = z[:, :, need[0] : need[1], need[2] : need[3]]
    zz = F.pad(zz, (max(0, -lo_c), max(0, hi_c - Wo), max(0, -lo_r), max(0, hi_r - Ho)), value=float("-inf"))
    pooled = F.max_pool2d(zz, kernel, stride)
    if (pa, pb, qa, qb) == (0, Po - 1, 0, Qo - 1):
        return pooled
    # a margin cell lies outside the box, so it holds z_fn(0)
    if m_r0 < box[0]:
        const = z[:, :, :1, :1]
    elif m_r1 - 1 > box[1]:
        const = z[:, :, -1:, :1]
    elif m_c0 < box[2]:
        const = z[:, :, :1, :1]
    else:
        const = z[:, :, :1, -1:]
    out = const.expand(N, C, Po, Qo).clone()
    out[:, :, pa : pb + 1, qa : qb + 1] = pooled
    return out


class BrailleNet(nn.Module):
    def __init__(self, arch: ArchConfig = ArchConfig()):
        super().__init__()
        self.arch = arch
        self.stem_conv = nn.Conv2d(arch.in_channels, arch.stem_channels, kernel_size=7, stride=2, padding=3, bias=False)
        self.stem_bn = nn.BatchNorm2d(arch.stem_channels)
        self.pool = nn.MaxPool2d(kernel_size=3, stride=2, padding=1)
        stages = []
        c_in = arch.stem_channels
        for i, (c_out, n) in enumerate(zip(arch.stage_channels, arch.blocks)):
            stride = 1 if i == 0 else 2
            layer = []
            for j in range(n):
                layer.append(ResidualBlock(c_in, c_out, stride if j == 0 else 1))
                c_in = c_out
            stages.append(nn.Sequential(*layer))
        self.layer0, self.layer1, self.layer2, self.layer3 = stages
        self.avgpool = nn.AdaptiveAvgPool2d((1, 1))
        f1, f2 = arch.fc
        self.fc1 = nn.Linear(c_in, f1)
        self.fc2 = nn.Linear(f1, f2)
        self.fc3 = nn.Linear(f2, arch.num_classes)
        self.dropout = nn.Dropout(arch.dropout)

    def forward(self, x):
        a = self.arch
        if isinstance(x, PatchBatch):
            if x.shape != (a.in_channels, a.height, a.width):
                raise ValueError(f"expected patches over {(a.in_channels, a.height, a.width)}, got {x.shape}")
            out, box = patch_stem_conv(x, self.stem_conv.weight, a.input_scale)
            return self._trunk(out, box)
        if x.dim() == 5:
            x = x.reshape(x.shape[0], -1, x.shape[3], x.shape[4])
        if x.dim() != 4 or x.shape[1:] != (a.in_channels, a.height, a.width):
            raise ValueError(
                f"expected input (N, {a.frames}, {a.polarities}, {a.height}, {a.width}), got {tuple(x.shape)}"
            )
        if a.input_scale != 1.0:
            x = x * a.input_scale
        return self._trunk(sparse_stem_conv(x, self.stem_conv.weight), None)

    def _trunk(self, out, box):
        if box is not None and not self.training:
            # eval-mode batch norm is elementwise, so only the active box needs computing
            out = pool_region(lambda z: F.relu(self.stem_bn(z)), out, box)
        else:
            out = self.pool(F.relu(self.stem_bn(out)))
        out = self.layer3(self.layer2(self.layer1(self.layer0(out))))
        out = torch.flatten(self.avgpool(out), 1)
        out = self.dropout(F.relu(self.fc1(out)))
        out = self.dropout(F.relu(self.fc2(out)))
        return self.fc3(out)


def build_model(arch: ArchConfig, seed: int = 0) -> BrailleNet:
    """Construct with parameters initialised from a local generator (global RNG untouched)."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return BrailleNet(arch)
