import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from binfer import oracle
from binfer.fold import (BatchNormParams, Direction, FoldedThreshold, final_layer_affine,
                         fold_binary_layer, fold_first_layer, real_threshold, round_half_away)


def exact_bits(p, ys, cnum=None):
    """Binarize(BN(.)) evaluated per integer, in the +/-1 sum domain."""
    s = ys if cnum is None else 2 * ys - cnum
    return oracle.binarize_real(oracle.batchnorm_real(s[:, None].astype(float), p))[:, 0]


def scan(t, ys):
    return t.apply(ys[:, None])[:, 0]


class TestRounding:
    def test_half_away(self):
        np.testing.assert_array_equal(round_half_away([0.5, 1.5, 2.5, -0.5, -2.5, 13.5, 2.4999]),
                                      [1, 2, 3, -1, -3, 14, 2])


class TestFoldBinary:
    def test_symmetric(self):
        t = fold_binary_layer(BatchNormParams(0.0, 0.0, 1.0, 0.0, epsilon=1.0), 27)
        assert int(t.c[0]) == 14 and t.direction[0] == Direction.GE

    def test_shifted_example_by_scan(self):
        p = BatchNormParams(10.0, 3.99, 2.0, 4.0, epsilon=0.01)
        assert p.std[0] == 2.0
        t = fold_binary_layer(p, 100)
        assert int(t.c[0]) == 53 and t.direction[0] == Direction.GE
        ys = np.arange(101)
        np.testing.assert_array_equal(exact_bits(p, ys, 100), ys >= 53)
        np.testing.assert_array_equal(scan(t, ys), exact_bits(p, ys, 100))

    def test_negative_gamma(self):
        p = BatchNormParams(0.0, 0.0, -1.0, 0.0, epsilon=1.0)
        t = fold_binary_layer(p, 27)
        assert int(t.c[0]) == 14 and t.direction[0] == Direction.LE
        ys = np.arange(28)
        # the real crossing sits on the tie 13.5; rounding it away from zero
        # admits y = 14, which the exact sign step rejects
        diff = np.flatnonzero(scan(t, ys) != exact_bits(p, ys, 27))
        assert diff.tolist() == [14]
        ref = oracle.norm_binarize_real((2 * ys - 27)[:, None], p, 27, "rounded")[:, 0]
        np.testing.assert_array_equal(scan(t, ys), ref)

    def test_zero_gamma(self):
        t = fold_binary_layer(BatchNormParams([0, 0], 1.0, [0.0, 0.0], [0.0, -1.0]), 9)
        assert t.direction.tolist() == [Direction.CONST_ONE, Direction.CONST_ZERO]
        np.testing.assert_array_equal(t.apply(np.array([[0, 9], [9, 0]])), [[1, 0], [1, 0]])

    def test_errors(self):
        with pytest.raises(ValueError):
            BatchNormParams(0.0, -1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            BatchNormParams(0.0, 1.0, 1.0, 0.0, epsilon=0.0)
        with pytest.raises(ValueError):
            fold_binary_layer(BatchNormParams(0.0, 1.0, 1.0, 0.0), 0)

    def test_direction_flip_with_gamma_and_beta_negated(self, rng):
        p = BatchNormParams(rng.normal(0, 5, 50), rng.uniform(0, 4, 50),
                            rng.normal(0, 1, 50), rng.normal(0, 1, 50))
        q = BatchNormParams(p.mu, p.sigma2, -p.gamma, -p.beta, p.epsilon)
        a, b = fold_binary_layer(p, 200), fold_binary_layer(q, 200)
        nz = p.gamma != 0
        np.testing.assert_array_equal(a.c[nz], b.c[nz])
        assert np.all((a.direction == Direction.GE) == (b.direction == Direction.LE))


class TestFoldFirst:
    def test_zero(self):
        t = fold_first_layer(BatchNormParams(0.0, 0.0, 1.0, 0.0, epsilon=1.0))
        assert int(t.c[0]) == 0 and t.direction[0] == Direction.GE

    def test_shift_by_scan(self):
        p = BatchNormParams(5.0, 3.0, 1.0, 1.0, epsilon=1.0)
        t = fold_first_layer(p)
        assert int(t.c[0]) == 3
        ys = np.arange(-837, 838)
        np.testing.assert_array_equal(scan(t, ys), exact_bits(p, ys))
        assert ys[exact_bits(p, ys).astype(bool)].min() == 3

    def test_zero_gamma_negative_beta(self):
        t = fold_first_layer(BatchNormParams(0.0, 1.0, 0.0, -1.0))
        assert t.direction[0] == Direction.CONST_ZERO


class TestFinalAffine:
    def test_examples(self):
        p = BatchNormParams(0.0, 0.0, 1.0, 0.0, epsilon=1.0)
        assert final_layer_affine(50, 100, p)[0] == 0.0
        assert final_layer_affine(100, 100, p)[0] == 100.0

    def test_against_oracle(self, rng):
        p = BatchNormParams(rng.normal(0, 10, 10), rng.uniform(0, 9, 10),
                            rng.normal(0, 1, 10), rng.normal(0, 1, 10))
        y = rng.integers(0, 1025, 10)
        np.testing.assert_allclose(final_layer_affine(y, 1024, p),
                                   oracle.batchnorm_real(2 * y - 1024, p), rtol=1e-9)

    def test_range(self):
        with pytest.raises(ValueError):
            final_layer_affine(11, 10, BatchNormParams.identity(1))


class TestThresholdContainer:
    def test_apply_channel_mismatch(self):
        t = FoldedThreshold([1, 2], [0, 0])
        with pytest.raises(ValueError):
            t.apply(np.zeros((3, 3)))

    def test_bad_code(self):
        with pytest.raises(ValueError):
            FoldedThreshold([1], [7])


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 8192), st.integers(0, 2**32 - 1))
def test_rounded_mode_agrees_for_every_count(cnum, seed):
    r = np.random.default_rng(seed)
    k = 4
    spread = np.sqrt(cnum)
    p = BatchNormParams(r.normal(0, spread, k), r.uniform(0, 2, k) * spread ** 2,
                        r.normal(0, 1, k) * (r.random(k) > 0.1), r.normal(0, 1, k))
    t = fold_binary_layer(p, cnum)
    ys = np.arange(cnum + 1)
    packed = t.apply(np.repeat(ys[:, None], k, axis=1))
    ref = oracle.norm_binarize_real(np.repeat((2 * ys - cnum)[:, None], k, axis=1), p, cnum)
    np.testing.assert_array_equal(packed, ref)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 2000), st.integers(0, 2**32 - 1))
def test_exact_mode_differs_only_next_to_threshold(cnum, seed):
    r = np.random.default_rng(seed)
    k = 4
    p = BatchNormParams(r.normal(0, np.sqrt(cnum), k), r.uniform(0, 2, k) * cnum,
                        r.normal(0, 1, k), r.normal(0, 1, k))
    t = fold_binary_layer(p, cnum)
    ys = np.arange(cnum + 1)
    packed = t.apply(np.repeat(ys[:, None], k, axis=1))
    exact = oracle.norm_binarize_real(np.repeat((2 * ys - cnum)[:, None], k, axis=1), p, cnum,
                                      mode="exact")
    real = real_threshold(p, cnum)
    for ch in range(k):
        bad = ys[packed[:, ch] != exact[:, ch]]
        # a rounding flip is at most one count, between the real and rounded thresholds
        assert bad.size <= 1
        if bad.size:
            assert abs(bad[0] - real[ch]) <= 1.0
