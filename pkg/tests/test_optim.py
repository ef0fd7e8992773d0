import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from stamp_mil.optim import NonFiniteGradientError, Ranger, cosine_lr


def test_cosine_endpoints_exact():
    assert cosine_lr(0, 1000, 1e-4, 5e-6) == 1e-4
    assert cosine_lr(1000, 1000, 1e-4, 5e-6) == 5e-6


def test_cosine_midpoint():
    assert cosine_lr(500, 1000, 1e-4, 5e-6) == pytest.approx(5.25e-5, rel=1e-12)


def test_cosine_zero_total():
    assert cosine_lr(0, 0, 1e-4, 5e-6) == 1e-4


@given(st.integers(1, 100_000), st.data())
def test_cosine_monotone(total, data):
    s = data.draw(st.integers(0, total - 1))
    assert cosine_lr(s + 1, total, 1e-4, 5e-6) <= cosine_lr(s, total, 1e-4, 5e-6)
    assert 5e-6 <= cosine_lr(s, total, 1e-4, 5e-6) <= 1e-4


def _param(value, dtype=torch.float64):
    return torch.nn.Parameter(torch.tensor([value], dtype=dtype))


def test_zero_grad_no_decay_fixed_point():
    p = _param(1.5)
    opt = Ranger([("p", p)], lr=1e-2, weight_decay=0.0)
    for _ in range(20):
        p.grad = torch.zeros_like(p)
        opt.step()
    assert p.item() == 1.5


def test_zero_grad_decoupled_decay():
    p = _param(2.0)
    lr, wd = 1e-2, 0.1
    opt = Ranger([("p", p)], lr=lr, weight_decay=wd, k=6)
    for t in range(1, 6):  # before the first lookahead sync
        p.grad = torch.zeros_like(p)
        opt.step()
        assert p.item() == pytest.approx(2.0 * (1 - lr * wd) ** t, rel=1e-14)


def radam_lookahead_oracle(theta, grad_fn, steps, lr, beta1, beta2, eps, wd, k, alpha):
    """Scalar RAdam (decoupled decay) + Lookahead written out from the published update rules."""
    m = v = 0.0
    slow = theta
    rho_inf = 2 / (1 - beta2) - 1
    trace = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        theta = theta * (1 - lr * wd)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        rho_t = rho_inf - 2 * t * beta2**t / (1 - beta2**t)
        if rho_t > 4:
            v_hat = math.sqrt(v / (1 - beta2**t))
            r = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
            theta = theta - lr * r * m_hat / (v_hat + eps)
        else:
            theta = theta - lr * m_hat
        if t % k == 0:
            slow = slow + alpha * (theta - slow)
            theta = slow
        trace.append(theta)
    return trace


@pytest.mark.parametrize(
    "grad_fn",
    [lambda th: 0.7, lambda th: 2 * (th - 3.0)],
    ids=["constant", "quadratic"],
)
def test_ranger_matches_scalar_oracle(grad_fn):
    kw = dict(lr=0.05, beta1=0.9, beta2=0.999, eps=1e-8, wd=0.01, k=6, alpha=0.5)
    expected = radam_lookahead_oracle(1.0, grad_fn, 40, **kw)
    p = _param(1.0)
    opt = Ranger([("p", p)], lr=kw["lr"], betas=(kw["beta1"], kw["beta2"]), eps=kw["eps"],
                 weight_decay=kw["wd"], k=kw["k"], alpha=kw["alpha"])
    for want in expected:
        p.grad = torch.tensor([grad_fn(p.item())], dtype=torch.float64)
        opt.step()
        assert p.item() == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_ranger_float32_close_to_oracle():
    expected = radam_lookahead_oracle(1.0, lambda th: 0.7, 30, 1e-3, 0.9, 0.999, 1e-8, 1e-5, 6, 0.5)
    p = _param(1.0, torch.float32)
    opt = Ranger([("p", p)], lr=1e-3, weight_decay=1e-5)
    for want in expected:
        p.grad = torch.tensor([0.7])
        opt.step()
    assert p.item() == pytest.approx(expected[-1], rel=1e-6)


def test_ranger_lr_override():
    p = _param(0.0)
    opt = Ranger([("p", p)], lr=1.0, weight_decay=0.0)
    p.grad = torch.tensor([1.0], dtype=torch.float64)
    opt.step(lr=0.1)
    # first step is the unrectified momentum step: lr * m_hat = lr * g
    assert p.item() == pytest.approx(-0.1)


def test_non_finite_gradient_reports_name():
    a, b = _param(1.0), _param(2.0)
    opt = Ranger([("alpha", a), ("beta", b)])
    a.grad = torch.tensor([0.1], dtype=torch.float64)
    b.grad = torch.tensor([float("nan")], dtype=torch.float64)
    with pytest.raises(NonFiniteGradientError, match="beta"):
        opt.step()
    assert a.item() == 1.0 and b.item() == 2.0
    b.grad = torch.tensor([float("inf")], dtype=torch.float64)
    with pytest.raises(NonFiniteGradientError):
        opt.step()
