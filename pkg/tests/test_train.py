from dataclasses import replace

import numpy as np
import pytest
import torch

from stamp_mil.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from stamp_mil.data import FormatError
from stamp_mil.model import ModelConfig
from stamp_mil.optim import cosine_lr
from stamp_mil.train import TrainConfig, TrainingError, bag_loss, build_model, evaluate, model_from_checkpoint, train

from conftest import TINY

CFG = ModelConfig(**TINY)


def _tc(**kw):
    return TrainConfig(**{"epochs": 2, "lr0": 1e-3, "lr_min": 1e-4, **kw})


def test_one_epoch_smoke(tiny_splits):
    res = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=1))
    assert len(tiny_splits["train"]) == 10
    assert len(res.history) == 1
    row = res.history[0]
    for key in ("epoch", "lr", "train_loss", "train_ce", "train_sim", "val_loss", "val_auc"):
        assert key in row
    assert res.checkpoint.epoch == 1


def test_history_deterministic(tiny_splits):
    a = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=3, seed=2)).history
    b = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=3, seed=2)).history
    assert len(a) == len(b) == 3
    for ra, rb in zip(a, b):
        assert ra.keys() == rb.keys()
        for k in ra:
            assert ra[k] == pytest.approx(rb[k], abs=1e-6)


def test_seed_changes_history(tiny_splits):
    a = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=1, seed=0)).history
    b = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=1, seed=1)).history
    assert a[0]["train_loss"] != b[0]["train_loss"]


def test_lambda_one_total_equals_ce(tiny_splits):
    hist = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=2, lam=1.0)).history
    for row in hist:
        assert row["train_loss"] == pytest.approx(row["train_ce"], rel=1e-12)
        assert row["train_sim"] > 0  # still recorded


def test_history_records_last_step_lr(tiny_splits):
    hist = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=2)).history
    total = 2 * len(tiny_splits["train"])
    assert hist[0]["lr"] == cosine_lr(total // 2 - 1, total, 1e-3, 1e-4)
    assert hist[-1]["lr"] == cosine_lr(total - 1, total, 1e-3, 1e-4)


def test_best_epoch_is_max_val_auc(tiny_splits):
    res = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=4, seed=3))
    aucs = [r["val_auc"] for r in res.history]
    assert res.checkpoint.epoch == int(np.argmax(aucs)) + 1  # argmax picks the first maximum
    assert res.checkpoint.metrics["val_auc"] == max(aucs)


def test_selection_last(tiny_splits):
    res = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=3, selection="last"))
    assert res.checkpoint.epoch == 3


def test_nan_loss_aborts_with_context(tiny_splits):
    bad = replace(tiny_splits["train"][0], features=np.full_like(tiny_splits["train"][0].features, 1e38))
    with pytest.raises(TrainingError, match="epoch 1"):
        train([bad] * 2, tiny_splits["val"], CFG, _tc(epochs=1))


@pytest.mark.parametrize("name", ["maxpool", "meanpool", "abmil"])
def test_baselines_train_with_ce_only(tiny_splits, name):
    hist = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=1, lam=0.5), model_name=name).history
    assert hist[0]["train_loss"] == pytest.approx(hist[0]["train_ce"])
    assert hist[0]["train_sim"] == 0.0


def test_bag_loss_combination():
    model = build_model("stamp", CFG, 0)
    x = torch.randn(7, 8)
    total, ce, sim, _ = bag_loss(model, x, 1, 0.9)
    assert total.item() == pytest.approx(0.9 * ce.item() + 0.1 * sim.item(), rel=1e-6)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lam=1.5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=4)
    with pytest.raises(ValueError):
        TrainConfig(lr_min=1e-3, lr0=1e-4)


def test_paper_defaults():
    tc = TrainConfig()
    assert (tc.epochs, tc.lr0, tc.lr_min, tc.weight_decay, tc.lam, tc.batch_size) == (50, 1e-4, 5e-6, 1e-5, 0.9, 1)


# checkpoints


def _ckpt(name="stamp", seed=0):
    model = build_model(name, CFG, seed)
    tensors = {k: v.detach().numpy().astype(np.float32) for k, v in model.state_dict().items()}
    return Checkpoint(tensors, name, CFG, _tc().to_dict(), 3, {"val_auc": 0.75})


@pytest.mark.parametrize("name", ["stamp", "maxpool", "meanpool", "abmil"])
def test_checkpoint_roundtrip_bit_exact(tmp_path, name):
    ck = _ckpt(name)
    path = save_checkpoint(ck, tmp_path / "m.smck")
    back = load_checkpoint(path)
    assert back.model_name == name and back.epoch == 3 and back.metrics == {"val_auc": 0.75}
    assert back.model_cfg == CFG
    assert TrainConfig(**back.train_cfg) == TrainConfig(**ck.train_cfg)
    for k, v in ck.tensors.items():
        assert back.tensors[k].dtype == np.float32
        assert np.array_equal(back.tensors[k], v)
    x = torch.from_numpy(np.random.default_rng(0).normal(size=(9, 8)).astype(np.float32))
    m0 = model_from_checkpoint(ck)
    m1 = model_from_checkpoint(back)
    with torch.no_grad():
        assert torch.equal(m0(x).probs, m1(x).probs)


def test_checkpoint_wrong_n_p(tmp_path):
    ck = _ckpt()
    bad = replace(ck, model_cfg=replace(CFG, n_p=3))
    path = save_checkpoint(bad, tmp_path / "m.smck")
    with pytest.raises(FormatError, match="tokens_head"):
        load_checkpoint(path)


def test_checkpoint_bad_magic(tmp_path):
    path = save_checkpoint(_ckpt(), tmp_path / "m.smck")
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_bad_version_and_truncation(tmp_path):
    path = save_checkpoint(_ckpt(), tmp_path / "m.smck")
    raw = path.read_bytes()
    (tmp_path / "v.smck").write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(tmp_path / "v.smck")
    (tmp_path / "t.smck").write_bytes(raw[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(tmp_path / "t.smck")
    (tmp_path / "x.smck").write_bytes(raw + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(tmp_path / "x.smck")


def test_trained_checkpoint_predicts_identically(tiny_splits, tmp_path):
    res = train(tiny_splits["train"], tiny_splits["val"], CFG, _tc(epochs=1))
    back = model_from_checkpoint(load_checkpoint(save_checkpoint(res.checkpoint, tmp_path / "c.smck")))
    r0, s0 = evaluate(res.model, tiny_splits["test"])
    r1, s1 = evaluate(back, tiny_splits["test"])
    assert np.array_equal(s0, s1)
    assert r0 == r1
