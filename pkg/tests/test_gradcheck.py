import numpy as np
import pytest

import missformer as mf
from missformer import NumericError, Tensor
from missformer import tensor as T
from missformer.attention import AttentionConfig, EfficientSelfAttention
from missformer.gradcheck import grad_check


def test_sum_gradient_is_all_ones():
    x = Tensor(np.random.default_rng(0).standard_normal(8), requires_grad=True)
    # linear function: central differences are exact, so a fat h kills rounding noise
    report = grad_check(mf.sum_, x, h=1e-2, tol=1e-10, name="sum")
    assert report.passed, report.summary()
    np.testing.assert_array_equal(x.grad, np.ones(8))


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(1)
    g = Tensor(np.ones(6, dtype=np.float64))
    b = Tensor(np.zeros(6, dtype=np.float64))
    w = rng.standard_normal((3, 6))

    def f(t):
        return mf.sum_(mf.mul(mf.layer_norm(t, g, b), Tensor(w)))

    x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    report = grad_check(f, x, h=1e-5, tol=1e-6, name="layer_norm")
    assert report.passed, report.summary()


def test_efficient_attention_gradcheck_2x16x8():
    with mf.precision(np.float64):
        attn = EfficientSelfAttention(AttentionConfig(8, 2, 2), np.random.default_rng(2))
    x = Tensor(np.random.default_rng(3).standard_normal((2, 16, 8)), requires_grad=True)
    report = grad_check(lambda t: mf.sum_(attn(t, (4, 4))), x, h=1e-5, tol=1e-4, name="attention")
    assert report.passed, report.summary()


def test_gradcheck_rejects_float32():
    x = Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(NumericError):
        grad_check(mf.sum_, x, name="f32")


@pytest.mark.filterwarnings("ignore:overflow")
def test_gradcheck_aborts_on_nonfinite_f():
    x = Tensor(np.full(3, 1e300), requires_grad=True)

    def f(t):
        return mf.sum_(mf.mul(t, t))  # overflows to inf

    with pytest.raises(NumericError, match="non-finite"):
        grad_check(f, x, name="overflow")


def test_gradcheck_flags_corrupted_backward_rule(monkeypatch):
    # negative control: break gelu's derivative and expect a failure report
    monkeypatch.setattr(T, "_gelu_pdf", lambda x: np.zeros_like(x))
    x = Tensor(np.random.default_rng(4).standard_normal(16), requires_grad=True)
    report = grad_check(lambda t: mf.sum_(mf.gelu(t)), x, h=1e-5, tol=1e-4, name="corrupted")
    assert not report.passed


def test_gradcheck_every_op_family_on_three_random_inputs():
    # spec invariant: every differentiable op < 1e-4 on at least 3 random inputs
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        cases = {
            "matmul": lambda t: mf.sum_(mf.mul(mf.matmul(t, w_mat), Tensor(wm))),
            "softmax": lambda t: mf.sum_(mf.mul(mf.softmax(t, -1), Tensor(wx))),
            "gelu": lambda t: mf.sum_(mf.mul(mf.gelu(t), Tensor(wx))),
            "log_softmax": lambda t: mf.sum_(mf.mul(mf.log_softmax(t, -1), Tensor(wx))),
        }
        wx = rng.standard_normal((4, 5))
        wm = rng.standard_normal((4, 3))
        w_mat = Tensor(rng.standard_normal((5, 3)))
        for name, f in cases.items():
            x = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
            report = grad_check(f, x, h=1e-5, tol=1e-4, name=f"{name}#{seed}")
            assert report.passed, report.summary()
