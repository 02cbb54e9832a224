import numpy as np
import pytest

from attnlimit.errors import CyclicProgram, MissingHeadDim, NonPsdCovariance, ShareKeyMismatch
from attnlimit.limitlaw import clip_second_moment
from attnlimit.netsor import DimRole, Initial, MatMul, Nonlin, WeightSpec, build_program, psd_factor, sample_finite
from attnlimit.nonlin import IDENTITY, clip, clip_fn, get_nonlin, register_nonlin


def clip_program(C=100.0, var=1.0):
    """h -> W h -> clip(., C): the input map of the attention experiments."""
    return build_program([Initial(), MatMul(WeightSpec("W"), 0), Nonlin(clip_fn(C), (1,))], [[var]])


def test_minimal_program():
    prog = build_program([Initial()], [[1.0]])
    assert prog.initial_ids == [0]
    out = sample_finite(prog, 8, seed=3)
    assert out[0].shape == (8,)


def test_forward_reference_is_cyclic():
    with pytest.raises(CyclicProgram):
        build_program([Initial(), MatMul(WeightSpec("W"), 2), Initial()], np.eye(2))


def test_share_key_mismatch():
    nodes = [Initial(), MatMul(WeightSpec("W", 1.0), 0), MatMul(WeightSpec("W", 2.0), 0)]
    with pytest.raises(ShareKeyMismatch):
        build_program(nodes, [[1.0]])


def test_non_psd_initial_cov():
    with pytest.raises(NonPsdCovariance):
        build_program([Initial(), Initial()], [[1.0, 2.0], [2.0, 1.0]])


def test_initial_cov_tolerates_rounding():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]]) + 1e-16
    build_program([Initial(), Initial()], cov)
    L = psd_factor([[0.0]])
    assert L[0, 0] == 0.0


def test_weight_spec_requires_positive_variance():
    with pytest.raises(ValueError):
        WeightSpec("W", 0.0)


def test_head_dim_required():
    w = WeightSpec("Q", 1.0, DimRole.HEAD, DimRole.FULL)
    prog = build_program([Initial(), MatMul(w, 0)], [[1.0]])
    with pytest.raises(MissingHeadDim):
        sample_finite(prog, 16)
    out = sample_finite(prog, 16, head_dim=4)
    assert out[1].shape == (4,)


def test_zero_variance_input_propagates_zero():
    out = sample_finite(clip_program(var=0.0), 64, seed=11)
    for vec in out.values():
        assert np.all(vec == 0.0)


def test_same_seed_is_bit_identical():
    a = sample_finite(clip_program(), 128, seed=5)
    b = sample_finite(clip_program(), 128, seed=5)
    c = sample_finite(clip_program(), 128, seed=6)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a[2], c[2])


def test_shared_weights_are_one_realization():
    w = WeightSpec("W", 1.5)
    prog = build_program([Initial(), MatMul(w, 0), MatMul(WeightSpec("U"), 0), MatMul(w, 0)], [[1.0]])
    out = sample_finite(prog, 32, seed=2)
    assert np.array_equal(out[1], out[3])
    assert not np.array_equal(out[1], out[2])


def test_streamed_matrix_matches_cached_rows():
    # matrices above the cache limit are generated block by block from the same stream
    from attnlimit import netsor

    prog = build_program([Initial(), MatMul(WeightSpec("W"), 0)], [[1.0]])
    cached = sample_finite(prog, 64, seed=9)[1]
    old = netsor._CACHE_ENTRIES
    netsor._CACHE_ENTRIES = 0
    try:
        streamed = sample_finite(prog, 64, seed=9)[1]
    finally:
        netsor._CACHE_ENTRIES = old
    np.testing.assert_allclose(streamed, cached, rtol=1e-12, atol=1e-12)


def test_matmul_second_moment():
    # E[g_a^2] = sigma_sq * E[h_a^2] = 2.0 for g = W h, h ~ N(0, 1)
    prog = build_program([Initial(), MatMul(WeightSpec("W", 2.0), 0)], [[1.0]])
    per_draw = np.array([np.mean(sample_finite(prog, 64, seed=s)[1] ** 2) for s in range(10_000)])
    se = per_draw.std(ddof=1) / np.sqrt(per_draw.size)
    assert abs(per_draw.mean() - 2.0) <= 5 * se


@pytest.mark.slow
def test_clip_output_variance_at_width_256():
    prog = clip_program()
    x = np.array([sample_finite(prog, 256, seed=s)[2][0] for s in range(20_000)])
    ratio = x.var(ddof=1) / clip_second_moment(100.0)
    assert 0.9 <= ratio <= 1.1


@pytest.mark.slow
def test_coordinate_average_concentrates():
    prog = clip_program(C=1.0)
    target = clip_second_moment(1.0)
    hits = sum(abs(np.mean(sample_finite(prog, 4096, seed=s)[2] ** 2) - target) <= 0.02 for s in range(100))
    assert hits >= 95


def test_nonlin_registry():
    assert clip(150.0, 100.0) == 100.0 and clip(-3.0, 100.0) == -3.0
    assert get_nonlin("clip(2.5)").breakpoints == (-2.5, 2.5)
    assert get_nonlin("identity") is IDENTITY
    sq = register_nonlin("square_test", lambda t: np.asarray(t) ** 2)
    assert get_nonlin("square_test") is sq
    with pytest.raises(KeyError):
        get_nonlin("nope")


def test_nonlin_arity_checked():
    add = register_nonlin("add_test", lambda a, b: a + b, arity=2)
    build_program([Initial(), Initial(), Nonlin(add, (0, 1))], np.eye(2))
    with pytest.raises(ValueError):
        build_program([Initial(), Nonlin(add, (0,))], [[1.0]])
