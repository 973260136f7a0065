"""Training and evaluation for the character classifier and presence network.

Four input modes follow the ablation of the original study: Raw (counts as
recorded), Norm (vertical centring plus count scaling), Aug (random affine and
salt-and-pepper toggles during training) and NormAug (both).
"""

from __future__ import annotations

import hashlib
import logging
import math
import string
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .nets import ArchConfig, BrailleNet, PatchBatch, build_model
from .transforms import AugConfig, SparseSample, augment_sparse, normalize_sparse

log = logging.getLogger(__name__)

MODES = ("Raw", "Norm", "Aug", "NormAug")
NORM_INPUT_SCALE = 1000.0
LETTERS = string.ascii_uppercase


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    val_fraction: float = 0.15
    patience: int = 5
    threads: int = 1
    norm_scale: bool = True  # False: Norm only centres vertically, without count scaling

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must be in [0, 1)")


def uses_norm(mode: str) -> bool:
    _check_mode(mode)
    return mode in ("Norm", "NormAug")


def uses_aug(mode: str) -> bool:
    _check_mode(mode)
    return mode in ("Aug", "NormAug")


def _check_mode(mode: str):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def arch_for_mode(arch: ArchConfig, mode: str, norm_scale: bool = True) -> ArchConfig:
    """Unit-sum inputs are rescaled inside the net so batch-norm eps stays negligible."""
    if uses_norm(mode) and norm_scale and arch.input_scale == 1.0:
        return replace(arch, input_scale=NORM_INPUT_SCALE)
    return arch


def prepare(
    sample: SparseSample,
    mode: str,
    aug: AugConfig | None = None,
    rng: np.random.Generator | None = None,
    norm_scale: bool = True,
):
    """Apply the mode's transforms: augmentation (training only) then normalisation."""
    if aug is not None and uses_aug(mode):
        sample = augment_sparse(sample, aug, rng)
    if uses_norm(mode):
        sample = normalize_sparse(sample, scale=norm_scale)
    return sample


def dataset_hash(samples: Sequence[SparseSample], labels: Sequence[int]) -> str:
    h = hashlib.sha256()
    for s, y in zip(samples, labels):
        h.update(np.array([int(y), len(s.patches)], dtype="<i8").tobytes())
        for p in s.patches:
            h.update(np.array([p.r0, p.c0, *p.data.shape], dtype="<i8").tobytes())
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return h.hexdigest()


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    n_val = int(round(n * val_fraction))
    if n - n_val < 1:
        n_val = 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


@dataclass
class TrainResult:
    model: BrailleNet
    checkpoint: Checkpoint
    history: list  # per-epoch dicts


def train(
    samples: Sequence[SparseSample],
    labels: Sequence[int],
    arch: ArchConfig,
    cfg: TrainConfig = TrainConfig(),
    aug: AugConfig = AugConfig(),
    mode: str = "NormAug",
    progress: Callable[[dict], None] | None = None,
    extra_meta: dict | None = None,
) -> TrainResult:
    """Minimise cross-entropy with early stopping on validation loss.

    Every random draw comes from generators seeded by ``cfg.seed`` (model init,
    dropout, shuffling, and one augmentation stream per (epoch, sample)), so
    equal inputs give bit-identical checkpoints.
    """
    _check_mode(mode)
    if len(samples) == 0:
        raise ValueError("empty dataset")
    if len(samples) != len(labels):
        raise ValueError("samples and labels differ in length")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ValueError(f"labels must lie in [0, {arch.num_classes})")
    arch = arch_for_mode(arch, mode, cfg.norm_scale)
    train_idx, val_idx = split_indices(len(samples), cfg.val_fraction, cfg.seed)
    val_prepared = [prepare(samples[i], mode, norm_scale=cfg.norm_scale) for i in val_idx]

    prev_threads = torch.get_num_threads()
    torch.set_num_threads(cfg.threads)
    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            model = BrailleNet(arch)
            if cfg.optimizer == "adam":
                opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
            else:
                opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=0.9)
            history = []
            best = (math.inf, None, -1)
            stale = 0
            for epoch in range(cfg.epochs):
                model.train()
                order = train_idx[np.random.default_rng([cfg.seed, epoch, 1]).permutation(len(train_idx))]
                total, seen = 0.0, 0
                for b0 in range(0, len(order), cfg.batch_size):
                    idx = order[b0 : b0 + cfg.batch_size]
                    if len(idx) < 2 and len(order) > 1:
                        continue  # batch norm needs more than one sample
                    batch = [
                        prepare(samples[i], mode, aug, np.random.default_rng([cfg.seed, epoch, int(i), 2]), cfg.norm_scale)
                        for i in idx
                    ]
                    logits = model(PatchBatch.from_sparse(batch))
                    loss = F.cross_entropy(logits, torch.from_numpy(labels[idx]))
                    if not torch.isfinite(loss):
                        raise TrainingDivergedError(
                            f"non-finite loss at epoch {epoch}, batch {b0 // cfg.batch_size} (lr={cfg.lr})"
                        )
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    total += float(loss.detach()) * len(idx)
                    seen += len(idx)
                rec = {"epoch": epoch, "train_loss": total / max(seen, 1)}
                if len(val_idx):
                    vm = _evaluate_prepared(model, val_prepared, labels[val_idx])
                    rec.update(val_loss=vm["loss"], val_accuracy=vm["accuracy"])
                history.append(rec)
                if progress:
                    progress(rec)
                if len(val_idx):
                    if rec["val_loss"] < best[0]:
                        best = (rec["val_loss"], {k: v.clone() for k, v in model.state_dict().items()}, epoch)
                        stale = 0
                    else:
                        stale += 1
                        if stale >= cfg.patience:
                            break
            if best[1] is not None:
                model.load_state_dict(best[1])
    finally:
        torch.set_num_threads(prev_threads)
    model.eval()
    meta = {
        "mode": mode,
        "norm_scale": cfg.norm_scale,
        "train_config": asdict(cfg),
        "aug_config": asdict(aug),
        "dataset_sha256": dataset_hash(samples, labels),
        "n_samples": int(len(samples)),
        "best_epoch": int(best[2]),
        "history": history,
    }
    meta.update(extra_meta or {})
    return TrainResult(model, Checkpoint.from_model(model, meta), history)


def train_segmenter(
    samples: Sequence[SparseSample],
    positive: Sequence[bool],
    arch: ArchConfig,
    cfg: TrainConfig = TrainConfig(),
    aug: AugConfig = AugConfig(),
    mode: str = "NormAug",
    **kw,
) -> TrainResult:
    """Two-class presence network: 1 = character centred in the window, 0 = background."""
    if arch.num_classes != 2:
        arch = replace(arch, num_classes=2)
    return train(samples, [int(bool(p)) for p in positive], arch, cfg, aug, mode, **kw)


@torch.no_grad()
def predict_logits(
    model: BrailleNet, samples: Sequence[SparseSample], mode: str, batch_size: int = 64, norm_scale: bool = True
) -> np.ndarray:
    """Logits for raw samples, applying the mode's inference transform (Norm or nothing)."""
    model.eval()
    out = []
    for b0 in range(0, len(samples), batch_size):
        batch = [prepare(s, mode, norm_scale=norm_scale) for s in samples[b0 : b0 + batch_size]]
        out.append(model(PatchBatch.from_sparse(batch)).double().numpy())
    if not out:
        return np.zeros((0, model.arch.num_classes))
    return np.concatenate(out)


@torch.no_grad()
def _evaluate_prepared(model, prepared, labels, batch_size: int = 64) -> dict:
    model.eval()
    logits = []
    for b0 in range(0, len(prepared), batch_size):
        logits.append(model(PatchBatch.from_sparse(prepared[b0 : b0 + batch_size])).double().numpy())
    model.train()
    return classification_metrics(np.concatenate(logits), labels, model.arch.num_classes)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classification_metrics(logits: np.ndarray, labels: Sequence[int], num_classes: int) -> dict:
    """Accuracy, macro-F1, mean cross-entropy and confusion matrix (rows = true labels)."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("no labeled samples")
    pred = np.argmax(logits, axis=1)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(labels)), labels].mean())
    conf = confusion_matrix(labels, pred, num_classes)
    return {
        "accuracy": float((pred == labels).mean()),
        "macro_f1": macro_f1(conf),
        "loss": loss,
        "confusion": conf,
        "predictions": pred,
    }


def confusion_matrix(true: Sequence[int], pred: Sequence[int], num_classes: int) -> np.ndarray:
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return m


def macro_f1(conf: np.ndarray) -> float:
    """Mean F1 over classes that occur in the labels or the predictions."""
    tp = np.diag(conf).astype(np.float64)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    present = (support + predicted) > 0
    if not present.any():
        return 0.0
    denom = support + predicted
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return float(f1[present].mean())


def evaluate(model_or_ckpt, samples: Sequence[SparseSample], labels: Sequence[int] | None, mode: str | None = None) -> dict:
    """Metrics of a model (or checkpoint, whose stored mode is used) on labeled samples."""
    if labels is None or any(l is None for l in labels):
        raise ValueError("evaluation needs labels for every sample")
    norm_scale = True
    if isinstance(model_or_ckpt, Checkpoint):
        mode = mode or model_or_ckpt.meta.get("mode", "Raw")
        norm_scale = bool(model_or_ckpt.meta.get("norm_scale", True))
        model = model_or_ckpt.build_model()
    else:
        model = model_or_ckpt
        mode = mode or "Raw"
    logits = predict_logits(model, samples, mode, norm_scale=norm_scale)
    return classification_metrics(logits, labels, model.arch.num_classes)


def letter_index(ch: str) -> int:
    return LETTERS.index(ch.upper())
