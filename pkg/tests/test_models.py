import numpy as np
import pytest
import torch

from evbraille.models.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from evbraille.models.gradcheck import check_gradients, small_arch
from evbraille.models.nets import ArchConfig, BrailleNet, PatchBatch, build_model
from evbraille.models.training import (
    TrainConfig,
    TrainingDivergedError,
    classification_metrics,
    confusion_matrix,
    evaluate,
    predict_logits,
    train,
    train_segmenter,
)
from evbraille.models.transforms import SparseSample


def blobs(n, num_classes=26, seed=0, arch=None):
    """One blob per class at a class-specific position, with random counts."""
    arch = arch or small_arch(num_classes)
    rng = np.random.default_rng(seed)
    out, labels = [], []
    for i in range(n):
        y = i % num_classes
        x = np.zeros((arch.in_channels, arch.height, arch.width))
        r, c = 2 + 4 * (y // 6), 2 + 5 * (y % 6)
        x[:, r : r + 2, c : c + 3] = rng.integers(1, 5, (arch.in_channels, 2, 3))
        out.append(SparseSample.from_dense(x))
        labels.append(y)
    return out, labels


def test_arch_presets():
    r = ArchConfig.from_preset("reduced")
    assert r.stage_channels == (16, 32, 64, 128) and r.blocks == (1, 1, 1, 1) and r.fc == ArchConfig().fc
    p = ArchConfig.from_preset("paper")
    assert p.stem_channels == 64 and p.stage_channels[-1] == 512 and p.blocks == (3, 4, 6, 3)
    with pytest.raises(ValueError):
        ArchConfig(num_classes=5)


def test_forward_shapes_and_errors():
    arch = small_arch()
    model = build_model(arch).eval()
    x = torch.rand(3, arch.frames, arch.polarities, arch.height, arch.width)
    out = model(x)
    assert out.shape == (3, 26) and torch.isfinite(out).all()
    with pytest.raises(ValueError):
        model(torch.rand(1, 3, arch.height, arch.width))


def test_sparse_and_dense_forward_agree():
    arch = small_arch()
    model = build_model(arch, seed=1).double().eval()
    xs, _ = blobs(6, arch=arch)
    sparse = model(PatchBatch.from_sparse(xs, dtype=torch.float64))
    dense = model(torch.from_numpy(np.stack([s.to_dense() for s in xs])))
    assert torch.allclose(sparse, dense, atol=1e-10)


def test_zero_final_layer_gives_uniform_output():
    model = build_model(small_arch()).eval()
    with torch.no_grad():
        model.fc3.weight.zero_()
        model.fc3.bias.zero_()
    xs, _ = blobs(4)
    logits = model(PatchBatch.from_sparse(xs))
    assert torch.equal(logits, torch.zeros_like(logits))
    assert torch.allclose(torch.softmax(logits, 1), torch.full_like(logits, 1 / 26))


def test_untrained_net_is_at_chance():
    arch = small_arch()
    rng = np.random.default_rng(0)
    accs = []
    for seed in range(5):
        xs = [SparseSample.from_dense(rng.integers(0, 3, (arch.in_channels, arch.height, arch.width))) for _ in range(260)]
        labels = [i % 26 for i in range(260)]
        accs.append(evaluate(build_model(arch, seed), xs, labels)["accuracy"])
    assert abs(np.mean(accs) - 1 / 26) < 0.02


def test_overfits_fifty_samples():
    arch = ArchConfig.from_preset("reduced", frames=4, height=24, width=32, dropout=0.0,
                                  stem_channels=8, stage_channels=(8, 16, 16, 16), fc=(32, 32))
    xs, ys = blobs(50, seed=2, arch=arch)
    res = train(xs, ys, arch, TrainConfig(epochs=60, val_fraction=0.0, batch_size=10, lr=3e-3), mode="Raw")
    assert evaluate(res.model, xs, ys)["accuracy"] == 1.0


def test_loss_decreases_over_first_epochs():
    xs, ys = blobs(104, seed=3)
    res = train(xs, ys, small_arch(), TrainConfig(epochs=3, val_fraction=0.0, batch_size=16), mode="Norm")
    losses = [h["train_loss"] for h in res.history]
    assert losses[0] > losses[1] > losses[2]


def test_training_is_deterministic():
    xs, ys = blobs(60, seed=4)
    cfg = TrainConfig(epochs=2, batch_size=16, seed=7)
    a = train(xs, ys, small_arch(), cfg, mode="NormAug").checkpoint.to_bytes()
    b = train(xs, ys, small_arch(), cfg, mode="NormAug").checkpoint.to_bytes()
    assert a == b


def test_train_input_errors():
    with pytest.raises(ValueError):
        train([], [], small_arch())
    xs, ys = blobs(4)
    with pytest.raises(ValueError):
        train(xs, [0, 1, 2, 99], small_arch())
    with pytest.raises(ValueError):
        train(xs, ys, small_arch(), mode="Fancy")


def test_divergence_aborts():
    xs, ys = blobs(8)
    with pytest.raises(TrainingDivergedError, match="lr="):
        train(xs, ys, small_arch(), TrainConfig(epochs=3, lr=1e30, optimizer="sgd", val_fraction=0.0, batch_size=4), mode="Raw")


def test_metrics_examples():
    labels = np.arange(26).repeat(2)
    perfect = np.eye(26)[labels] * 10
    m = classification_metrics(perfect, labels, 26)
    assert m["accuracy"] == 1.0 and m["macro_f1"] == 1.0
    assert np.array_equal(m["confusion"], 2 * np.eye(26, dtype=int))
    const = np.zeros((52, 26))
    const[:, 0] = 1
    assert classification_metrics(const, labels, 26)["accuracy"] == pytest.approx(1 / 26)
    three = np.array([[5.0, 0, 0], [0, 5.0, 0], [5.0, 0, 0]])
    conf = confusion_matrix([0, 1, 2], three.argmax(1), 3)
    assert np.array_equal(conf, [[1, 0, 0], [0, 1, 0], [1, 0, 0]])
    assert classification_metrics(np.pad(three, ((0, 0), (0, 23))), [0, 1, 2], 26)["accuracy"] == pytest.approx(2 / 3)


def test_evaluate_needs_labels():
    xs, _ = blobs(2)
    with pytest.raises(ValueError):
        evaluate(build_model(small_arch()), xs, None)
    with pytest.raises(ValueError):
        evaluate(build_model(small_arch()), xs, [0, None])


def test_segmenter_chance_and_training():
    arch = small_arch(2)
    xs, ys = blobs(80, num_classes=2, seed=5, arch=arch)
    untrained = evaluate(build_model(arch, 3), xs, ys)["accuracy"]
    assert 0.3 <= untrained <= 0.7
    res = train_segmenter(xs, [bool(y) for y in ys], arch, TrainConfig(epochs=15, val_fraction=0.0, batch_size=16), mode="Norm")
    assert evaluate(res.checkpoint, xs, ys)["accuracy"] >= 0.95
    assert res.checkpoint.arch.num_classes == 2


def test_checkpoint_round_trip(tmp_path):
    xs, ys = blobs(30, seed=6)
    ck = train(xs, ys, small_arch(), TrainConfig(epochs=1, batch_size=8), mode="NormAug").checkpoint
    p = tmp_path / "m.ckpt"
    save_checkpoint(ck, p)
    back = load_checkpoint(p)
    assert back.to_bytes() == p.read_bytes()
    assert back.meta["mode"] == "NormAug" and back.arch == ck.arch
    assert all(np.array_equal(ck.tensors[k], back.tensors[k]) for k in ck.tensors)
    m1, m2 = ck.build_model(), back.build_model()
    assert np.array_equal(predict_logits(m1, xs, "NormAug"), predict_logits(m2, xs, "NormAug"))
    assert p.read_bytes()[:4] == b"BNET"


def test_corrupt_checkpoint_rejected(tmp_path):
    ck = Checkpoint.from_model(build_model(small_arch()))
    data = bytearray(ck.to_bytes())
    data[-1] ^= 0xFF
    with pytest.raises(CheckpointError, match="hash"):
        Checkpoint.from_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"NOPE" + bytes(data[4:]))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(bytes(data[:20]))
    other = Checkpoint(small_arch(2), ck.tensors, {})
    with pytest.raises(CheckpointError):
        other.build_model()


def test_gradients_match_finite_differences():
    errs = check_gradients(0, n_entries=3)
    assert max(errs.values()) < 1e-3


def test_gradients_through_sparse_input():
    errs = check_gradients(1, n_entries=3, sparse_input=True)
    assert max(errs.values()) < 1e-3
