"""Tour of the tensor engine: building blocks, the tape, and gradient checks.

Run:  python3 demos/01_autodiff_basics.py
"""
import numpy as np

import missformer as mf
from missformer import Tensor

# Every op records how to push gradients back to its inputs. backward() on a
# scalar walks the recorded ops in reverse and accumulates into .grad.
x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True, dtype=np.float64)
y = mf.sum_(mf.mul(x, x) + x)  # f(x) = sum(x*x + x), x feeds two consumers
y.backward()
print("f(x) =", y.item())
print("grad =", x.grad, "(expected 2x+1 =", 2 * x.data + 1, ")")

# The tape behind that scalar, in recording order:
tape = mf.trace(y)
print("\nrecorded ops:", [t._op.name for t in tape.ops])

# Softmax is max-subtracted, so extreme logits cannot overflow:
print("\nsoftmax([1000, 0]) =", mf.softmax(Tensor([1000.0, 0.0]), axis=-1).data)

# The finite-difference checker is the engine's independent oracle. It runs in
# float64 and compares every coordinate against central differences.
w = Tensor(np.random.default_rng(0).standard_normal((4, 6)), requires_grad=True, dtype=np.float64)
gamma = Tensor(np.ones(6, dtype=np.float64))
beta = Tensor(np.zeros(6, dtype=np.float64))
weights = Tensor(np.random.default_rng(1).standard_normal((4, 6)))
report = mf.grad_check(
    lambda t: mf.sum_(mf.mul(mf.layer_norm(t, gamma, beta), weights)),
    w,
    h=1e-5,
    tol=1e-6,
    name="layer_norm",
)
print("\n" + report.summary())

# The full verification suite (every op family plus a micro end-to-end model)
# is available as `missformer gradcheck` on the command line.
