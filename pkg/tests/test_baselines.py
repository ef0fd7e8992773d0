import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from stamp_mil.baselines import BaselineMIL, init_baseline

D_IN = 6


def _model(kind, seed=0):
    return init_baseline(kind, D_IN, 16, 8, seed).double().eval()


def _bag(seed, n):
    return torch.from_numpy(np.random.default_rng(seed).normal(size=(n, D_IN)))


@pytest.mark.parametrize("kind", ["maxpool", "meanpool", "abmil"])
def test_single_instance_equals_instance_prediction(kind):
    m = _model(kind)
    x = _bag(0, 1)
    with torch.no_grad():
        out = m(x)
        inst = torch.softmax(m.classifier(m.project(x)[0]), -1)
    assert torch.allclose(out.probs, inst, atol=1e-12)
    assert out.attention.tolist() == [1.0]


@pytest.mark.parametrize("kind", ["maxpool", "meanpool", "abmil"])
def test_empty_bag_rejected(kind):
    with pytest.raises(ValueError):
        _model(kind)(torch.zeros(0, D_IN, dtype=torch.float64))


def test_maxpool_duplicate_invariance():
    m = _model("maxpool")
    x = _bag(1, 7)
    with torch.no_grad():
        assert torch.equal(m(x).probs, m(torch.cat([x, x[2:3], x[5:6]])).probs)


def test_maxpool_bag_logit_dominates():
    m = _model("maxpool")
    x = _bag(2, 9)
    with torch.no_grad():
        logits = m.classifier(m.project(x))
        bag_logits = logits.max(0).values
        assert torch.all(bag_logits[1] >= logits[:, 1])
        assert torch.allclose(m(x).probs, torch.softmax(bag_logits, -1))


def test_meanpool_identical_instances():
    m = _model("meanpool")
    x = _bag(3, 1)
    with torch.no_grad():
        assert torch.allclose(m(x.repeat(5, 1)).probs, m(x).probs, atol=1e-12)


def test_abmil_zero_gate_equals_meanpool():
    ab, mp = _model("abmil"), _model("meanpool")
    mp.load_state_dict({k: v for k, v in ab.state_dict().items() if not k.startswith("w_")})
    with torch.no_grad():
        ab.w_a.weight.zero_()
        x = _bag(4, 11)
        out = ab(x)
        assert torch.allclose(out.attention, torch.full((11,), 1 / 11, dtype=torch.float64))
        assert torch.allclose(out.probs, mp(x).probs, atol=1e-12)


@pytest.mark.parametrize("kind", ["maxpool", "meanpool", "abmil"])
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30))
def test_permutation_invariance_and_simplex(kind, seed, n):
    m = _model(kind)
    x = _bag(seed, n)
    perm = torch.from_numpy(np.random.default_rng(seed + 1).permutation(n))
    with torch.no_grad():
        a, b = m(x), m(x[perm])
    assert torch.allclose(a.probs, b.probs, rtol=0, atol=1e-6)
    assert torch.all(a.probs >= 0) and abs(a.probs.sum().item() - 1) < 1e-6
    assert torch.all(a.attention >= 0) and abs(a.attention.sum().item() - 1) < 1e-6
    assert a.H is None


def test_unknown_kind():
    with pytest.raises(ValueError):
        BaselineMIL("transmil", 4)


def test_wrong_feature_dim():
    with pytest.raises(ValueError):
        _model("abmil")(torch.zeros(3, D_IN + 1, dtype=torch.float64))
