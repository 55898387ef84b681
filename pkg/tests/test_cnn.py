import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abm_pipeline.cnn import (
    ALEXNET,
    NetworkWeights,
    average_features,
    conv2d,
    extract_features,
    fc_forward,
    forward_features,
    maxpool,
    relu,
)
from abm_pipeline.core import LAYERS, DataError, FeatureVector, ImageTensor, LayerId

from conftest import TINY_ARCH
from oracles import conv_oracle, pool_oracle


conv_cases = st.tuples(
    st.integers(1, 3),  # channels
    st.integers(1, 3),  # kernels
    st.integers(1, 3),  # kernel size
    st.integers(1, 3),  # stride
    st.integers(0, 2),  # padding
    st.integers(3, 8),  # spatial size
    st.integers(0, 2**31 - 1),
)


class TestConv2d:
    def test_alexnet_conv1_shape(self, rng):
        x = rng.random((3, 227, 227))
        w = rng.standard_normal((96, 3, 11, 11))
        out = conv2d(x, w, np.zeros(96), stride=4, padding=0)
        assert out.shape == (96, 55, 55)

    def test_identity_kernel(self, rng):
        x = rng.standard_normal((1, 5, 6))
        out = conv2d(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_ones(self):
        out = conv2d(np.ones((1, 3, 3)), np.ones((1, 1, 2, 2)), np.zeros(1))
        assert out.shape == (1, 2, 2)
        np.testing.assert_array_equal(out, 4.0)

    @settings(max_examples=60, deadline=None)
    @given(conv_cases)
    def test_matches_loop_oracle(self, case):
        C, K, k, s, p, size, seed = case
        if size + 2 * p < k:
            return
        r = np.random.default_rng(seed)
        x = r.standard_normal((C, size, size))
        w = r.standard_normal((K, C, k, k))
        b = r.standard_normal(K)
        np.testing.assert_allclose(conv2d(x, w, b, s, p), conv_oracle(x, w, b, s, p), rtol=1e-12, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(conv_cases, st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_in_input(self, case, a, c):
        C, K, k, s, p, size, seed = case
        if size + 2 * p < k:
            return
        r = np.random.default_rng(seed)
        x, y = r.standard_normal((2, C, size, size))
        w = r.standard_normal((K, C, k, k))
        zero = np.zeros(K)
        lhs = conv2d(a * x + c * y, w, zero, s, p)
        rhs = a * conv2d(x, w, zero, s, p) + c * conv2d(y, w, zero, s, p)
        scale = max(1.0, np.abs(lhs).max())
        assert np.abs(lhs - rhs).max() <= 1e-10 * scale

    def test_errors(self):
        with pytest.raises(DataError):
            conv2d(np.ones((2, 4, 4)), np.ones((1, 3, 2, 2)), np.zeros(1))
        with pytest.raises(DataError):
            conv2d(np.full((1, 4, 4), np.nan), np.ones((1, 1, 2, 2)), np.zeros(1))
        with pytest.raises(DataError):
            conv2d(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)), np.zeros(1))


class TestActivations:
    def test_relu(self, rng):
        np.testing.assert_array_equal(relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(relu(-rng.random(10) - 0.1), 0.0)
        x = rng.standard_normal((4, 5, 6))
        np.testing.assert_array_equal(relu(relu(x)), relu(x))

    def test_maxpool(self, rng):
        assert maxpool(rng.random((96, 55, 55)), 3, 2).shape == (96, 27, 27)
        np.testing.assert_array_equal(maxpool(np.full((2, 7, 7), 1.5), 3, 2), 1.5)
        np.testing.assert_array_equal(maxpool(np.array([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2), [[[4.0]]])
        x = rng.standard_normal((3, 9, 8))
        np.testing.assert_array_equal(maxpool(x, 3, 2), pool_oracle(x, 3, 2))
        with pytest.raises(DataError):
            maxpool(np.ones((1, 2, 2)), 3, 1)

    def test_fc_forward(self, rng):
        x = rng.standard_normal(5)
        np.testing.assert_array_equal(fc_forward(x, np.eye(5), np.zeros(5)), x)
        b = rng.standard_normal(3)
        np.testing.assert_array_equal(fc_forward(x, np.zeros((3, 5)), b), b)
        W, x3, b4 = rng.standard_normal((4, 3)), rng.standard_normal(3), rng.standard_normal(4)
        expected = [b4[i] + sum(W[i, j] * x3[j] for j in range(3)) for i in range(4)]
        np.testing.assert_allclose(fc_forward(x3, W, b4), expected, rtol=1e-12, atol=1e-14)
        with pytest.raises(DataError):
            fc_forward(np.ones(3), np.ones((2, 4)), np.zeros(2))


@pytest.fixture(scope="module")
def alexnet_weights():
    return NetworkWeights.initialize(0)


@pytest.fixture(scope="module")
def alexnet_features(alexnet_weights):
    image = ImageTensor(np.random.default_rng(3).random((3, 227, 227)), "img")
    return image, forward_features(image, alexnet_weights)


class TestExtraction:
    def test_architecture_matches_layer_shapes(self):
        assert ALEXNET.layer_shapes() == {l: l.shape for l in LAYERS}
        assert ALEXNET.flat_conv_output() == 9216

    def test_feature_lengths(self, alexnet_features):
        _, feats = alexnet_features
        assert [feats[l].values.size for l in LAYERS] == [290400, 186624, 64896, 64896, 43264, 4096, 4096]
        for f in feats.values():
            assert f.image_id == "img"
            assert np.all(f.values >= 0)

    def test_single_layer_matches_full_pass(self, alexnet_weights, alexnet_features):
        image, feats = alexnet_features
        fc7 = extract_features(image, alexnet_weights, LayerId.Fc7)
        assert fc7.values.size == 4096
        np.testing.assert_array_equal(fc7.values, feats[LayerId.Fc7].values)

    def test_deterministic(self, alexnet_weights, alexnet_features):
        image, feats = alexnet_features
        again = extract_features(image, alexnet_weights, LayerId.Conv5)
        assert again.values.tobytes() == feats[LayerId.Conv5].values.tobytes()

    def test_zero_image_zero_features(self):
        w = NetworkWeights.initialize(1, TINY_ARCH)  # initializer biases are zero
        feats = forward_features(ImageTensor(np.zeros((3, 19, 19))), w)
        for f in feats.values():
            np.testing.assert_array_equal(f.values, 0.0)

    def test_wrong_geometry(self, alexnet_weights):
        with pytest.raises(DataError, match="expected"):
            extract_features(ImageTensor(np.zeros((3, 224, 224))), alexnet_weights, LayerId.Conv1)


class TestWeights:
    def test_initializer_bounds(self):
        w = NetworkWeights.initialize(5, TINY_ARCH)
        for name, arr in w.arrays.items():
            if name.endswith(".bias"):
                np.testing.assert_array_equal(arr, 0.0)
            else:
                bound = np.sqrt(2.0 / np.prod(arr.shape[1:]))
                assert np.abs(arr).max() <= bound
                assert np.abs(arr).max() > 0.5 * bound
        again = NetworkWeights.initialize(5, TINY_ARCH)
        assert all(np.array_equal(w[k], again[k]) for k in w.arrays)

    def test_directory_round_trip(self, tmp_path):
        w = NetworkWeights.initialize(2, TINY_ARCH)
        w.save(tmp_path / "w")
        back = NetworkWeights.load(tmp_path / "w")
        assert back.architecture == TINY_ARCH
        assert back.seed == 2
        for k in w.arrays:
            np.testing.assert_array_equal(back[k], w[k])

    def test_shape_validation(self):
        w = NetworkWeights.initialize(2, TINY_ARCH)
        arrays = dict(w.arrays)
        arrays["fc6.weight"] = arrays["fc6.weight"][:, :-1]
        with pytest.raises(DataError, match="fc6.weight"):
            NetworkWeights(arrays, TINY_ARCH)


class TestAverageFeatures:
    def test_single(self, rng):
        v = FeatureVector(LayerId.Fc6, "a", rng.random(8))
        np.testing.assert_array_equal(average_features([v], "g").values, v.values)

    def test_symmetric_pair(self, rng):
        v, c = rng.standard_normal(8), rng.standard_normal(8)
        pair = [FeatureVector(LayerId.Fc6, "a", v), FeatureVector(LayerId.Fc6, "b", -v + 2 * c)]
        out = average_features(pair, "animal")
        assert out.image_id == "animal"
        np.testing.assert_allclose(out.values, c, rtol=1e-12, atol=1e-12)

    def test_twelve_against_loop(self, rng):
        vs = [FeatureVector(LayerId.Conv3, str(i), rng.standard_normal(20)) for i in range(12)]
        expected = np.zeros(20)
        for v in vs:
            for j in range(20):
                expected[j] += v.values[j]
        expected /= 12
        np.testing.assert_allclose(average_features(vs).values, expected, rtol=1e-12, atol=1e-15)

    def test_errors(self):
        with pytest.raises(DataError):
            average_features([])
        with pytest.raises(DataError):
            average_features([FeatureVector(LayerId.Fc6, "a", np.ones(2)), FeatureVector(LayerId.Fc7, "b", np.ones(2))])
