"""Network container tests: forward pass, prediction, weight tying, and the
model file round trip."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milptrain.network import (
    LayerSpec,
    Layer,
    ModelDimensionError,
    ModelTruncatedError,
    ModelVersionError,
    Network,
    WeightTying,
    accuracy,
    conv_tying,
    forward,
    forward_batch,
    load_network,
    predict,
    random_network,
    save_network,
)


def tiny_net():
    l0 = Layer(
        LayerSpec(2, 2),
        W=np.array([[1.0, -1.0], [0.5, 0.5]]),
        c=np.array([0.0, -0.25]),
    )
    l1 = Layer(
        LayerSpec(2, 2),
        W=np.array([[1.0, 0.0], [0.0, 1.0]]),
        c=np.array([0.0, 0.5]),
    )
    return Network([l0, l1])


class TestForward:
    def test_hand_computed_values(self):
        net = tiny_net()
        x = np.array([1.0, 0.5])
        per_layer = forward(net, x)
        a0, o0 = per_layer[0]
        np.testing.assert_allclose(a0, [0.5, 0.5])
        np.testing.assert_allclose(o0, [0.5, 0.5])
        a1, o1 = per_layer[1]
        np.testing.assert_allclose(a1, [0.5, 1.0])
        np.testing.assert_allclose(o1, [0.5, 1.0])

    def test_relu_clamps_negatives(self):
        net = tiny_net()
        x = np.array([0.0, 1.0])
        a0, o0 = forward(net, x)[0]
        assert a0[0] == -1.0
        assert o0[0] == 0.0

    def test_width_mismatch(self):
        net = tiny_net()
        with pytest.raises(ValueError):
            forward(net, np.array([1.0, 2.0, 3.0]))

    @given(seed=st.integers(0, 1_000))
    @settings(max_examples=25)
    def test_batch_forward_matches_single(self, seed):
        rng = np.random.default_rng(seed)
        net = random_network([LayerSpec(3, 4), LayerSpec(4, 2)], rng)
        X = rng.uniform(0, 1, (5, 3))
        batched = forward_batch(net, X)
        for k in range(5):
            singles = forward(net, X[k])
            for li in range(2):
                np.testing.assert_allclose(batched[li][0][k], singles[li][0], atol=1e-12)
                np.testing.assert_allclose(batched[li][1][k], singles[li][1], atol=1e-12)


class TestPrediction:
    def test_closest_to_one_wins(self):
        net = Network(
            [Layer(LayerSpec(1, 3), W=np.zeros((3, 1)), c=np.array([0.2, 0.9, 0.4]))]
        )
        pred = predict(net, np.array([0.0]))
        assert pred.label == 1

    def test_tie_takes_lowest_index(self):
        net = Network(
            [Layer(LayerSpec(1, 3), W=np.zeros((3, 1)), c=np.array([0.8, 1.2, 0.8]))]
        )
        # |0.8-1| = |1.2-1| = 0.2: index 0 beats index 1.
        assert predict(net, np.array([0.0])).label == 0

    def test_accuracy_counts_hits(self):
        net = Network(
            [Layer(LayerSpec(1, 2), W=np.array([[2.0], [-2.0]]), c=np.array([0.0, 1.0]))]
        )
        X = np.array([[1.0], [0.0]])
        labels = np.array([0, 1])
        assert accuracy(net, X, labels) == 1.0
        assert accuracy(net, X, np.array([1, 0])) == 0.0

    def test_accuracy_empty_errors(self):
        net = tiny_net()
        with pytest.raises(ValueError):
            accuracy(net, np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestTying:
    def test_conv_tying_shape(self):
        tying = conv_tying(7, 7, 3)
        assert tying.tag == "conv7x7k3"
        assert tying.num_classes == 9
        assert tying.class_map.shape == (25, 49)
        row = tying.class_map[0]
        active = row[row >= 0]
        assert active.size == 9
        assert sorted(active.tolist()) == list(range(9))

    def test_materialize_and_class_values_round_trip(self):
        tying = conv_tying(5, 5, 2)
        values = np.arange(tying.num_classes, dtype=float) / 10
        W = tying.materialize(values)
        assert W.shape == (16, 25)
        np.testing.assert_array_equal(tying.class_values(W), values)
        assert tying.check_consistent(W)

    def test_inconsistent_weights_detected(self):
        tying = conv_tying(3, 3, 2)
        W = tying.materialize(np.ones(4))
        W[1, np.argmax(tying.class_map[1] == 0)] = 0.5
        assert not tying.check_consistent(W)

    def test_masked_positions_must_stay_zero(self):
        tying = conv_tying(3, 3, 2)
        W = tying.materialize(np.ones(4))
        masked = np.argwhere(tying.class_map < 0)
        W[masked[0][0], masked[0][1]] = 0.25
        assert not tying.check_consistent(W)

    def test_conv_output_count(self):
        tying = conv_tying(7, 7, 3)
        spec = LayerSpec(49, 25, "relu", tying)
        assert spec.offsets_fixed_zero


class TestRandomInit:
    def test_deterministic_per_seed(self):
        specs = [LayerSpec(3, 4), LayerSpec(4, 2)]
        a = random_network(specs, np.random.default_rng(9))
        b = random_network(specs, np.random.default_rng(9))
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.W, lb.W)
            np.testing.assert_array_equal(la.c, lb.c)

    def test_range_respected(self):
        net = random_network([LayerSpec(5, 5)], np.random.default_rng(0), -0.25, 0.25)
        assert np.all(np.abs(net.layers[0].W) <= 0.25)
        assert np.all(np.abs(net.layers[0].c) <= 0.25)

    def test_tied_layers_share_classes_with_zero_offsets(self):
        tying = conv_tying(4, 4, 2)
        spec = LayerSpec(16, 9, "relu", tying)
        net = random_network([spec], np.random.default_rng(4))
        assert tying.check_consistent(net.layers[0].W)
        np.testing.assert_array_equal(net.layers[0].c, np.zeros(9))


class TestModelFile:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        net = random_network([LayerSpec(4, 3), LayerSpec(3, 2)], rng)
        path = tmp_path / "net.model"
        save_network(net, path)
        loaded = load_network(path)
        for la, lb in zip(net.layers, loaded.layers):
            np.testing.assert_array_equal(la.W, lb.W)
            np.testing.assert_array_equal(la.c, lb.c)
            assert la.spec == lb.spec

    def test_tied_round_trip(self, tmp_path):
        tying = conv_tying(4, 4, 2)
        net = random_network([LayerSpec(16, 9, "relu", tying)], np.random.default_rng(2))
        path = tmp_path / "conv.model"
        save_network(net, path)
        loaded = load_network(path)
        assert loaded.layers[0].spec.tying is not None
        assert loaded.layers[0].spec.tying.tag == "conv4x4k2"
        np.testing.assert_array_equal(loaded.layers[0].W, net.layers[0].W)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.model"
        path.write_text("some-other-format v9\nlayer 1 1 relu none\n")
        with pytest.raises(ModelVersionError):
            load_network(path)

    def test_truncated_file(self, tmp_path):
        rng = np.random.default_rng(17)
        net = random_network([LayerSpec(4, 3)], rng)
        path = tmp_path / "net.model"
        save_network(net, path)
        clipped = path.read_text().splitlines()[:-2]
        path.write_text("\n".join(clipped) + "\n")
        with pytest.raises(ModelTruncatedError):
            load_network(path)

    def test_dimension_mismatch_between_layers(self, tmp_path):
        path = tmp_path / "net.model"
        path.write_text(
            "milptrain-model v1\n"
            "layer 2 1 relu none\n"
            "0.5 0.5\n"
            "0\n"
            "layer 3 1 relu none\n"
            "1 1 1\n"
            "0\n"
        )
        with pytest.raises(ModelDimensionError):
            load_network(path)

    def test_row_width_mismatch(self, tmp_path):
        path = tmp_path / "net.model"
        path.write_text(
            "milptrain-model v1\n"
            "layer 2 1 relu none\n"
            "0.5 0.5 0.5\n"
            "0\n"
        )
        with pytest.raises(ModelDimensionError):
            load_network(path)

    def test_tied_file_with_broken_sharing(self, tmp_path):
        tying = conv_tying(3, 3, 2)
        net = random_network([LayerSpec(9, 4, "relu", tying)], np.random.default_rng(1))
        path = tmp_path / "conv.model"
        save_network(net, path)
        lines = path.read_text().splitlines()
        # Perturb one weight so rows no longer share class values.
        row = lines[2].split()
        changed = False
        for i, tok in enumerate(row):
            if float(tok) != 0.0:
                row[i] = "0.123"
                changed = True
                break
        assert changed
        lines[2] = " ".join(row)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ModelDimensionError):
            load_network(path)
