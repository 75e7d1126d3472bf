import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import finite_difference, rel_error
from probtsf.variance import (
    FULLY_CONNECTED,
    SSM_BACKED,
    MlpParams,
    backward_sigma,
    forward_sigma,
    init_mlp,
    init_variance_head,
    softplus,
)


def test_softplus_values():
    assert softplus(0.0) == pytest.approx(math.log(2.0), abs=1e-15)
    assert softplus(0.0) == pytest.approx(0.693147, abs=1e-6)
    assert softplus(40.0) == pytest.approx(40.0, abs=1e-12)
    assert softplus(-20.0) == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-12)
    assert softplus(-20.0) == pytest.approx(2.0612e-9, rel=1e-4)


def test_softplus_no_overflow():
    out = softplus(np.array([-800.0, 800.0, 1e6]))
    assert np.all(np.isfinite(out))
    assert out[1] == 800.0


def zero_mlp(P, H, T, normalize=False):
    p = init_mlp((P, H, H, T), np.random.default_rng(0), normalize=normalize)
    return p.zeros_like()


class TestForwardSigma:
    def test_zero_network_gives_ln2(self):
        sigma = forward_sigma(zero_mlp(6, 5, 4), np.random.default_rng(1).normal(size=6))
        np.testing.assert_allclose(sigma, math.log(2.0), rtol=1e-15)

    def test_initial_sigma_is_one_for_unit_scale(self):
        p = init_mlp((8, 16, 16, 3), np.random.default_rng(2), normalize=False)
        p = p.with_arrays({**p.arrays(), "w2": np.zeros((3, 16))})
        np.testing.assert_allclose(forward_sigma(p, np.ones(8)), 1.0, rtol=1e-12)

    def test_hand_computed_one_unit(self):
        # P=2 -> 1 hidden unit -> T=2, one ReLU layer
        p = MlpParams(
            weights=(np.array([[0.5, -1.0]]), np.array([[2.0], [-3.0]])),
            biases=(np.array([0.25]), np.array([0.1, 0.2])),
            normalize=False,
        )
        x = np.array([3.0, 0.5])
        hidden = max(0.5 * 3.0 - 1.0 * 0.5 + 0.25, 0.0)  # 1.25
        expected = [math.log1p(math.exp(2.0 * hidden + 0.1)), math.log1p(math.exp(-3.0 * hidden + 0.2))]
        np.testing.assert_allclose(forward_sigma(p, x), expected, rtol=1e-14)

    def test_normalized_scales_by_lookback_std(self):
        p = zero_mlp(6, 4, 3, normalize=True)
        x = np.array([0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
        np.testing.assert_allclose(forward_sigma(p, x), math.log(2.0) * np.std(x))

    @pytest.mark.parametrize("variant", [FULLY_CONNECTED, SSM_BACKED])
    def test_output_contract(self, variant):
        p = init_variance_head(variant, 12, 5, np.random.default_rng(3), hidden=8, latent_dim=4)
        sigma = forward_sigma(p, np.random.default_rng(4).normal(size=(7, 12)))
        assert sigma.shape == (7, 5)
        assert np.all(sigma > 0)
        assert p.horizon == 5

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            forward_sigma(zero_mlp(3, 2, 2), [0.0, np.inf, 1.0])

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            init_variance_head("transformer", 4, 2, np.random.default_rng(0))

    @given(
        arrays(np.float64, (2, 6), elements=st.floats(-1e3, 1e3)),
        st.integers(0, 2**32 - 1),
        st.sampled_from([FULLY_CONNECTED, SSM_BACKED]),
        st.floats(0.1, 20.0),
    )
    @settings(max_examples=100, deadline=None)
    def test_positivity(self, x, seed, variant, weight_scale):
        p = init_variance_head(variant, 6, 3, np.random.default_rng(seed), hidden=4, latent_dim=3)
        p = p.with_arrays({k: v * weight_scale for k, v in p.arrays().items()})
        sigma = forward_sigma(p, x)
        assert sigma.shape == (2, 3)
        assert np.all(sigma > 0)


class TestBackwardSigma:
    def test_zero_upstream(self):
        p = init_variance_head(FULLY_CONNECTED, 5, 3, np.random.default_rng(5), hidden=4)
        g = backward_sigma(p, np.random.default_rng(6).normal(size=5), np.zeros(3))
        for v in g.arrays().values():
            np.testing.assert_array_equal(v, 0.0)

    def test_softplus_derivative_at_zero(self):
        p = zero_mlp(4, 3, 2)
        up = np.array([1.5, -0.4])
        g = backward_sigma(p, np.array([0.3, -1.0, 2.0, 0.0]), up)
        np.testing.assert_allclose(g.biases[-1], 0.5 * up)

    @pytest.mark.parametrize("variant", [FULLY_CONNECTED, SSM_BACKED])
    @pytest.mark.parametrize("normalize", [True, False])
    def test_finite_differences(self, variant, normalize):
        rng = np.random.default_rng(7 + normalize)
        for _ in range(25):
            p = init_variance_head(variant, 5, 3, rng, hidden=4, latent_dim=3, normalize=normalize)
            p = p.with_arrays({k: v + 0.3 * rng.normal(size=v.shape) for k, v in p.arrays().items()})
            x = rng.normal(size=(2, 5)) * 2
            up = rng.normal(size=(2, 3))

            def f(arrs):
                return float(np.sum(up * forward_sigma(p.with_arrays(arrs), x)))

            numeric = finite_difference(f, p.arrays())
            analytic = backward_sigma(p, x, up).arrays()
            for name in numeric:
                assert rel_error(analytic[name], numeric[name]) < 1e-4, name


def test_params_equality_and_copy():
    p = init_variance_head(SSM_BACKED, 4, 2, np.random.default_rng(0), latent_dim=3)
    q = p.with_arrays(p.arrays())
    assert p == q
    r = p.with_arrays({k: v + 1 for k, v in p.arrays().items()})
    assert p != r
