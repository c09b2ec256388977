import numpy as np
import pytest

from gsabt.data import (ModalitySpec, Normalizer, SynthConfig, SynthModality, extend_graphs,
                        fit_normalizer, fraction_splits, grid_adjacency, grid_shape, joint_series,
                        make_windows, synth_generate, week_splits, window_count)
from gsabt.errors import ConfigError, InsufficientDataError, ValidationError


def spec(name, adj):
    adj = np.asarray(adj)
    return ModalitySpec(name, adj.shape[0], 1, adj)


# ---------------------------------------------------------------- graphs

def test_extend_two_blocks():
    g = extend_graphs([spec("a", [[1, 1], [1, 1]]), spec("b", [[1]])])
    assert g.adjacency.tolist() == [[1, 1, 0], [1, 1, 0], [0, 0, 1]]
    assert g.offsets == [0, 2]


def test_extend_single_modality_is_identity():
    adj = grid_adjacency(2, 3)
    g = extend_graphs([spec("a", adj)])
    np.testing.assert_array_equal(g.adjacency, adj)


def test_extend_three_blocks_off_block_zero_count():
    specs = [spec(n, np.ones((k, k), dtype=np.uint8)) for n, k in zip("abc", (2, 3, 1))]
    g = extend_graphs(specs)
    assert g.adjacency.shape == (6, 6)
    assert g.offsets == [0, 2, 5]
    ids = g.modality_of_node()
    off_block = ids[:, None] != ids[None, :]
    assert off_block.sum() == 2 * (2 * 3 + 2 * 1 + 3 * 1) == 22
    assert np.all(g.adjacency[off_block] == 0)
    g.assert_block_diagonal()


def test_block_diagonal_violation_detected():
    g = extend_graphs([spec("a", [[1]]), spec("b", [[1]])])
    g.adjacency[0, 1] = 1
    with pytest.raises(ValidationError):
        g.assert_block_diagonal()


def test_spec_forces_self_loops():
    s = spec("a", [[0, 1], [1, 0]])
    assert s.adjacency.tolist() == [[1, 1], [1, 1]]


@pytest.mark.parametrize("adj", [np.ones((2, 3)), [[0, 2], [1, 0]]])
def test_spec_rejects_bad_adjacency(adj):
    with pytest.raises(ValidationError):
        ModalitySpec("a", len(adj), 1, np.asarray(adj))


def test_spec_node_count_mismatch():
    with pytest.raises(ValidationError, match="node_count"):
        ModalitySpec("a", 3, 1, np.eye(2))


def test_grid_one_by_one():
    assert grid_adjacency(1, 1).tolist() == [[1]]


def test_grid_two_by_two_degree():
    adj = grid_adjacency(2, 2)
    assert adj.sum(axis=1).tolist() == [3, 3, 3, 3]


def test_grid_16x16_edge_count():
    adj = grid_adjacency(16, 16)
    assert adj.shape == (256, 256)
    directed = int(adj.sum() - np.trace(adj))
    # brute-force count of 4-neighbour pairs
    brute = sum(1 for r in range(16) for c in range(16) for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0))
                if 0 <= r + dr < 16 and 0 <= c + dc < 16)
    assert directed == brute == 2 * (16 * 15 * 2) == 960
    np.testing.assert_array_equal(adj, adj.T)


def test_grid_shape_is_exact():
    for n in (1, 6, 16, 24, 7):
        r, c = grid_shape(n)
        assert r * c == n and r <= c


# ---------------------------------------------------------------- normalizer

def test_minmax_midpoint():
    norm = fit_normalizer(np.array([0.0, 10.0]).reshape(2, 1, 1), [0])
    assert norm.normalize(np.array([[5.0]]))[0, 0] == 0.5


def test_round_trip(rng):
    train = rng.uniform(0, 400, (50, 5, 2))
    norm = fit_normalizer(train, [0, 3])
    x = rng.uniform(-100, 500, (7, 5, 2))
    back = norm.denormalize(norm.normalize(x))
    np.testing.assert_allclose(back, x, rtol=1e-12)


def test_zscore_round_trip(rng):
    train = rng.normal(5, 2, (40, 4, 1))
    norm = fit_normalizer(train, [0, 2], method="zscore")
    np.testing.assert_allclose(norm.denormalize(norm.normalize(train)), train, rtol=1e-12)


def test_different_scales_map_to_unit_range():
    series = synth_generate(SynthConfig([SynthModality("t", 4, 400.0), SynthModality("b", 3, 12.0)], seed=3))
    joint = joint_series(series, ["t", "b"])
    z = fit_normalizer(joint, [0, 4]).normalize(joint)
    for lo, hi in ((0, 4), (4, 7)):
        assert z[:, lo:hi].min() == 0.0 and z[:, lo:hi].max() == 1.0


def test_fit_uses_only_given_span(rng):
    series = rng.uniform(0, 1, (30, 2, 1))
    series[20:] *= 100
    norm = fit_normalizer(series[:20], [0])
    assert norm.scale[0] < 1.0


def test_constant_modality_warns_and_round_trips():
    train = np.full((10, 2, 1), 7.0)
    with pytest.warns(UserWarning, match="constant"):
        norm = fit_normalizer(train, [0])
    assert np.all(norm.normalize(train) == 0)
    np.testing.assert_array_equal(norm.denormalize(norm.normalize(train)), train)


def test_state_round_trip(rng):
    norm = fit_normalizer(rng.uniform(0, 9, (10, 3, 1)), [0, 1])
    again = Normalizer.from_state(norm.state())
    x = rng.uniform(0, 9, (4, 3, 1))
    np.testing.assert_array_equal(again.normalize(x), norm.normalize(x))


def test_empty_fit_is_insufficient():
    with pytest.raises(InsufficientDataError):
        fit_normalizer(np.zeros((0, 2, 1)), [0])


# ---------------------------------------------------------------- windows

@pytest.mark.parametrize("T,expected", [(24, 1), (30, 7)])
def test_window_counts(T, expected):
    ds = make_windows(np.zeros((T, 2, 1)), 12, 12)
    assert ds.count("train") == expected == window_count(T, 12, 12)


def test_week_split_train_count():
    bounds = week_splits(13 * 7 * 48)
    assert bounds[0] == ("train", 0, 3024)
    ds = make_windows(np.zeros((13 * 7 * 48, 1, 1)), 12, 12, bounds)
    assert ds.count("train") == 3001


def test_windows_are_contiguous_and_aligned():
    series = np.arange(40.0).reshape(40, 1, 1)
    ds = make_windows(series, 3, 2, [("train", 0, 20), ("val", 20, 40)])
    for split in ("train", "val"):
        for k, t in enumerate(ds.origins[split]):
            assert ds.inputs[split][k, :, 0, 0].tolist() == [t - 2, t - 1, t]
            assert ds.targets[split][k, :, 0, 0].tolist() == [t + 1, t + 2]


def test_no_train_target_leaks_into_later_splits():
    T = 13 * 7 * 48
    bounds = week_splits(T)
    ds = make_windows(np.arange(T, dtype=float).reshape(T, 1, 1), 12, 12, bounds)
    assert ds.targets["train"].max() < bounds[1][1]
    assert ds.inputs["val"].min() >= bounds[1][1]


def test_too_short_series():
    with pytest.raises(InsufficientDataError):
        make_windows(np.zeros((23, 1, 1)), 12, 12)


def test_week_split_longer_than_series():
    with pytest.raises(InsufficientDataError):
        week_splits(100)


def test_fraction_splits_cover_series():
    b = fraction_splits(100)
    assert b[0][1] == 0 and b[-1][2] == 100
    assert all(b[i][2] == b[i + 1][1] for i in range(2))


def test_bad_window_size():
    with pytest.raises(ConfigError):
        make_windows(np.zeros((30, 1, 1)), 0, 12)


# ---------------------------------------------------------------- synthetic generator

MODS = [SynthModality("taxi", 6, 400.0, 1.0), SynthModality("bike", 4, 12.0, 1.0)]


def test_synth_is_deterministic():
    a = synth_generate(SynthConfig(MODS, seed=5))
    b = synth_generate(SynthConfig(MODS, seed=5))
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_synth_seed_changes_output():
    a = synth_generate(SynthConfig(MODS, seed=5))
    b = synth_generate(SynthConfig(MODS, seed=6))
    assert not np.array_equal(a["taxi"], b["taxi"])


def test_synth_shapes():
    out = synth_generate(SynthConfig(MODS, days=3, features=2))
    assert out["taxi"].shape == (144, 6, 2) and out["bike"].shape == (144, 4, 2)


def test_coupled_modalities_correlate():
    out = synth_generate(SynthConfig(MODS, days=7, seed=0))
    r = np.corrcoef(out["taxi"].mean(axis=(1, 2)), out["bike"].mean(axis=(1, 2)))[0, 1]
    assert r >= 0.5


def test_synth_constant_case():
    cfg = SynthConfig(MODS, days=2, a1=0.0, a2=0.0, noise=0.0, latent_std=0.0, base=1.5)
    out = synth_generate(cfg)
    assert np.all(out["taxi"] == 400.0 * 1.5)
    assert np.all(out["bike"] == 12.0 * 1.5)


def test_synth_noise_free_is_daily_periodic():
    cfg = SynthConfig(MODS, days=3, noise=0.0, latent_std=0.0)
    x = synth_generate(cfg)["taxi"]
    np.testing.assert_array_equal(x[:48], x[48:96])


def test_synth_nonnegative():
    out = synth_generate(SynthConfig(MODS, days=7, a1=2.0, seed=1))
    assert all(v.min() >= 0 for v in out.values())


def test_joint_series_rejects_mismatched_time():
    with pytest.raises(ValidationError):
        joint_series({"a": np.zeros((5, 1, 1)), "b": np.zeros((6, 1, 1))}, ["a", "b"])
