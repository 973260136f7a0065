"""Central-difference check of autograd gradients for every parameter tensor."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import torch
import torch.nn.functional as F

from .nets import ArchConfig, BrailleNet, PatchBatch
from .transforms import SparseSample


def small_arch(num_classes: int = 26) -> ArchConfig:
    """Reduced topology on a small canvas, no dropout, for float64 checks."""
    return ArchConfig.from_preset(
        "reduced", num_classes=num_classes, frames=4, height=24, width=32, dropout=0.0,
        stem_channels=4, stage_channels=(4, 6, 8, 8), fc=(8, 6),
    )


def _loss(model, x, y):
    return F.cross_entropy(model(x), y)


def check_gradients(
    seed: int,
    arch: ArchConfig | None = None,
    n_entries: int = 6,
    h: float = 1e-6,
    batch: int = 4,
    sparse_input: bool = False,
) -> dict[str, float]:
    """Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per parameter tensor.

    The model runs in float64 in training mode (batch statistics), with a
    random sample of ``n_entries`` coordinates per tensor plus the input.
    """
    arch = arch or small_arch()
    g = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = BrailleNet(arch).double()
    model.train()
    # perturb batch-norm affine terms so they are not at their trivial init
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, torch.nn.BatchNorm2d):
                m.weight.add_(0.1 * torch.randn(m.weight.shape, generator=g, dtype=torch.float64))
                m.bias.add_(0.1 * torch.randn(m.bias.shape, generator=g, dtype=torch.float64))
    x = torch.zeros((batch, arch.in_channels, arch.height, arch.width), dtype=torch.float64)
    # sparse blob plus dense noise keeps every layer's inputs generic
    r0, c0 = arch.height // 4, arch.width // 4
    x[:, :, r0 : r0 + arch.height // 2, c0 : c0 + arch.width // 2] = torch.rand(
        (batch, arch.in_channels, arch.height // 2, arch.width // 2), generator=g, dtype=torch.float64
    )
    y = torch.randint(0, arch.num_classes, (batch,), generator=g)

    def inputs():
        if not sparse_input:
            return x
        items = [SparseSample.from_dense(x[n].numpy()) for n in range(batch)]
        return PatchBatch.from_sparse(items, dtype=torch.float64)

    model.zero_grad()
    _loss(model, inputs(), y).backward()
    errors = {}
    for name, p in model.named_parameters():
        analytic = p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        idx = rng.choice(flat.numel(), size=min(n_entries, flat.numel()), replace=False)
        num = np.empty(len(idx))
        with torch.no_grad():
            for k, i in enumerate(idx):
                orig = flat[i].item()
                flat[i] = orig + h
                lp = _loss(model, inputs(), y).item()
                flat[i] = orig - h
                lm = _loss(model, inputs(), y).item()
                flat[i] = orig
                num[k] = (lp - lm) / (2 * h)
        a = analytic[torch.from_numpy(idx)].numpy()
        denom = max(np.linalg.norm(a), np.linalg.norm(num), 1e-12)
        errors[name] = float(np.linalg.norm(a - num) / denom)
    return errors
