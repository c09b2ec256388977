import numpy as np
import pytest

from gsabt import temporal as tp
from gsabt import tensor as tc
from gsabt.errors import ConfigError
from gsabt.tensor import Tensor


def stack_params(rng, C, prefix="", directions=("fwd", "bwd"), fill=None, scale=0.5):
    params = {}
    for d in directions:
        for wk, bk in tp.stcn_keys(prefix, d):
            if fill is None:
                params[wk] = Tensor(rng.uniform(-scale, scale, (C, C, tp.KERNEL_SIZE)))
                params[bk] = Tensor(rng.uniform(0, 0.1, C))
            else:
                params[wk] = Tensor(np.full((C, C, tp.KERNEL_SIZE), fill))
                params[bk] = Tensor(np.zeros(C))
    return params


def test_schedule_and_receptive_field():
    assert tp.DILATIONS == (1, 2, 4, 4) and tp.KERNEL_SIZE == 2
    assert len(tp.stcn_keys("", "fwd")) == 4
    assert tp.receptive_field() == 12


def test_zero_weights_zero_output(rng):
    out = tp.stcn_forward(Tensor(rng.normal(size=(2, 3, 12))), stack_params(rng, 3, fill=0.0), "")
    assert np.all(out.data == 0)


def test_forward_stack_is_causal(rng):
    params = stack_params(rng, 2)
    x = rng.uniform(0, 1, (1, 2, 12))
    base = tp.stcn_forward(Tensor(x), params, "").data
    x2 = x.copy()
    x2[0, :, 5] += 1.0
    diff = np.abs(tp.stcn_forward(Tensor(x2), params, "").data - base).max(axis=(0, 1))
    assert np.all(diff[:5] == 0)


def test_impulse_at_last_step_only_reaches_last_step():
    x = np.zeros((1, 1, 12))
    x[0, 0, 11] = 1.0
    out = tp.stcn_forward(Tensor(x), stack_params(None, 1, fill=1.0), "").data[0, 0]
    assert np.flatnonzero(out).tolist() == [11]


def impulse_support(P, t0, direction_flags):
    x = np.zeros((1, 1, P))
    x[0, 0, t0] = 1.0
    params = stack_params(None, 1, fill=1.0)
    out = tp.bitcn_forward(Tensor(x), params, "", **direction_flags).data[0, 0]
    return set(np.flatnonzero(out).tolist())


def test_forward_support_is_twelve_steps():
    # an impulse at t0 reaches outputs t0..t0+11 and nothing else
    assert impulse_support(16, 2, dict(use_backward=False)) == set(range(2, 14))


def test_backward_support_mirrors_forward():
    assert impulse_support(16, 13, dict(use_forward=False)) == set(range(2, 14))


def test_bidirectional_covers_every_step(rng):
    # positive weights keep every ReLU open, so reachability is purely structural
    params = {k: Tensor(np.abs(v.data) + 0.1) for k, v in stack_params(rng, 1).items()}
    x = rng.uniform(0.5, 1.0, (1, 1, 12))
    base = tp.bitcn_forward(Tensor(x), params, "").data
    for t0 in range(12):
        x2 = x.copy()
        x2[0, 0, t0] += 1.0
        diff = np.abs(tp.bitcn_forward(Tensor(x2), params, "").data - base)[0, 0]
        assert np.all(diff > 0), t0


def test_zero_backward_weights_leave_forward_branch(rng):
    params = stack_params(rng, 2)
    for wk, bk in tp.stcn_keys("", "bwd"):
        params[wk] = Tensor(np.zeros_like(params[wk].data))
        params[bk] = Tensor(np.zeros_like(params[bk].data))
    x = Tensor(rng.normal(size=(2, 2, 12)))
    np.testing.assert_array_equal(tp.bitcn_forward(x, params, "").data,
                                  tp.stcn_forward(x, params, "", "fwd").data)


def test_mirrored_parameters_give_time_symmetric_output(rng):
    params = stack_params(rng, 2, directions=("fwd",))
    for wk, bk in tp.stcn_keys("", "fwd"):
        params[wk.replace("fwd", "bwd")] = params[wk]
        params[bk.replace("fwd", "bwd")] = params[bk]
    half = rng.normal(size=(1, 2, 6))
    x = np.concatenate([half, half[:, :, ::-1]], axis=2)
    out = tp.bitcn_forward(Tensor(x), params, "").data
    np.testing.assert_allclose(out, out[:, :, ::-1], rtol=1e-13, atol=1e-13)


def test_bitcn_needs_a_direction(rng):
    with pytest.raises(ConfigError):
        tp.bitcn_forward(Tensor(np.zeros((1, 1, 4))), {}, "", use_forward=False, use_backward=False)


def su_params(rng, channels, parts):
    params = stack_params(rng, channels, "shared.")
    for m, c in enumerate(parts):
        params |= stack_params(rng, c, f"unique{m}.")
    return params


def test_single_modality_unique_stage_spans_all_channels(rng):
    params = su_params(rng, 3, [3])
    x = Tensor(rng.normal(size=(1, 3, 12)))
    out = tp.shared_unique_forward(x, params, [0])
    shared = tp.bitcn_forward(x, params, "shared.")
    np.testing.assert_array_equal(out.data, tp.bitcn_forward(shared, params, "unique0.").data)


def test_u_stage_isolation(rng):
    params = su_params(rng, 5, [3, 2])
    shared = Tensor(rng.uniform(0, 1, (2, 5, 12)))
    a = tp.bitcn_forward(tc.slice(shared, 1, 0, 3), params, "unique0.").data
    zeroed = shared.data.copy()
    zeroed[:, 3:] = 0
    b = tp.bitcn_forward(tc.slice(Tensor(zeroed), 1, 0, 3), params, "unique0.").data
    np.testing.assert_array_equal(a, b)


def test_shared_unique_output_shape_and_order(rng):
    params = su_params(rng, 5, [3, 2])
    x = Tensor(rng.normal(size=(2, 5, 12)))
    out = tp.shared_unique_forward(x, params, [0, 3])
    assert out.shape == (2, 5, 12)
    shared = tp.bitcn_forward(x, params, "shared.")
    np.testing.assert_array_equal(out.data[:, 3:], tp.bitcn_forward(tc.slice(shared, 1, 3, 5), params,
                                                                      "unique1.").data)


@pytest.mark.parametrize("offsets", [[1, 3], [0, 0], [0, 5], []])
def test_bad_partition(offsets):
    with pytest.raises(ConfigError):
        tp.check_partition(offsets, 5)
