"""
Autodiff core and finite-difference checks
==========================================

The model runs on a small reverse-mode tensor library.  Every op records
its backward rule, and ``grad_check`` compares the analytic gradient with
central differences.
"""

import numpy as np

from gsabt import tensor as tc
from gsabt.gradcheck import grad_check
from gsabt.tensor import Tensor

rng = np.random.default_rng(0)

# A masked softmax of a matmul, reduced to a scalar with fixed random weights
a = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
b = Tensor(rng.uniform(-2, 2, (4, 4)), requires_grad=True)
keep = rng.random((3, 4)) < 0.7
keep[:, 0] = True
weights = Tensor(rng.normal(size=(3, 4)))


def loss():
    scores = tc.masked_fill_neginf(tc.matmul(a, b), keep)
    return tc.sum(tc.mul(tc.softmax_rows(scores), weights))


out = loss()
out.backward()
print("loss", float(out.data))
print("dL/da\n", a.grad)

report = grad_check(loss, {"a": a, "b": b}, h=1e-5, tol=1e-5)
print(report.to_text())

# The full model check on the two-modality micro-instance takes about a minute:
#     gsabt gradcheck --out gc
