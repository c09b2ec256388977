"""
Top-U sparse attention and the bidirectional temporal stack
===========================================================

Top-U keeps the U largest scores of each row before the softmax.  The
temporal stack is four dilated causal convolutions with kernel 2 and
dilations 1, 2, 4, 4, so one output sees 12 input steps.  A time-flipped
copy sees the 12 steps ahead.
"""

import numpy as np

from gsabt import spatial as sp
from gsabt import tensor as tc
from gsabt import temporal as tp
from gsabt.tensor import Tensor

rng = np.random.default_rng(1)
scores = rng.normal(size=(1, 5, 5))

for u in (1, 2, 5):
    sparse, mask = sp.top_u_sparsify(Tensor(scores), u)
    w = tc.softmax_rows(sparse).data[0]
    print(f"U={u}: nonzeros per row {(w > 0).sum(-1).tolist()}")
    print(np.round(w, 3))

# Impulse response of the forward and backward stacks with all-ones weights
P = 16
params = {}
for d in ("fwd", "bwd"):
    for wk, bk in tp.stcn_keys("", d):
        params[wk], params[bk] = Tensor(np.ones((1, 1, 2))), Tensor(np.zeros(1))

x = np.zeros((1, 1, P))
x[0, 0, 2] = 1.0
fwd = tp.bitcn_forward(Tensor(x), params, "", use_backward=False).data[0, 0]
x = np.zeros((1, 1, P))
x[0, 0, 13] = 1.0
bwd = tp.bitcn_forward(Tensor(x), params, "", use_forward=False).data[0, 0]
print("receptive field", tp.receptive_field())
print("impulse at t=2 reaches (forward) ", np.flatnonzero(fwd).tolist())
print("impulse at t=13 reaches (backward)", np.flatnonzero(bwd).tolist())
