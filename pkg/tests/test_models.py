import numpy as np
import pytest

from errors import AttackError, RangeError, ShapeError
from models import Layer, ParamId, QuantizedNetwork, classify, forward, forward_batch, forward_trace
from quant import AttackVector, apply_attack


def identity_net():
    layer = Layer("affine", [[1, 0], [0, 1]], [0, 0], 1.0, "none")
    return QuantizedNetwork(4, (layer,))


class TestParamId:
    def test_string_form_round_trips(self):
        for text in ("W3_2_2", "b3_1", "W2_1_2"):
            assert str(ParamId.parse(text)) == text

    def test_bias_column_is_zero(self):
        assert ParamId(3, "bias", 1, 5).col == 0

    def test_sort_order_is_layer_role_row_col(self):
        ids = [ParamId.parse(t) for t in ("W3_1_1", "W2_1_1", "b2_2", "b2_1", "W2_1_2", "b3_1")]
        assert [str(p) for p in sorted(ids)] == ["b2_1", "b2_2", "W2_1_1", "W2_1_2", "b3_1", "W3_1_1"]

    @pytest.mark.parametrize("text", ["X3_1", "W3_1", "b3_1_1", "W3_a_1", ""])
    def test_malformed_ids_are_rejected(self, text):
        with pytest.raises(AttackError):
            ParamId.parse(text)

    def test_input_layer_has_no_parameters(self):
        with pytest.raises(AttackError):
            ParamId(1, "weight", 1, 1)


class TestLayer:
    def test_real_weights_derive_from_integers(self, example_net):
        layer = example_net.layer(3)
        np.testing.assert_allclose(layer.weights, layer.integer_weights * layer.step_size, rtol=0, atol=1e-12)
        np.testing.assert_allclose(layer.weights, [[-1.0, 0.0], [6 / 7, -1 / 7]], atol=1e-12)

    def test_bias_length_must_match_rows(self):
        with pytest.raises(ShapeError):
            Layer("affine", [[1, 2]], [0, 0], 0.1, "relu")

    def test_non_integer_codes_are_rejected(self):
        with pytest.raises(RangeError):
            Layer("affine", [[1.5]], [0], 0.1, "relu")

    def test_step_size_must_be_positive(self):
        with pytest.raises(RangeError):
            Layer("affine", [[1]], [0], 0.0, "relu")

    def test_conv_layer_needs_geometry(self):
        with pytest.raises(ShapeError):
            Layer("conv2d", [[1, 1, 1, 1]], [0], 0.1, "relu")


class TestQuantizedNetwork:
    def test_worked_example_dimensions(self, example_net):
        assert example_net.quant_bits == 4
        assert example_net.depth == 3
        assert example_net.layer_dims == [2, 2, 2]
        assert example_net.activations == ["relu", "none"]

    def test_needs_a_non_input_layer(self):
        with pytest.raises(ShapeError):
            QuantizedNetwork(4, ())

    def test_consecutive_dimensions_must_chain(self):
        hidden = Layer("affine", np.ones((3, 2), dtype=int), [0, 0, 0], 0.1, "relu")
        output = Layer("affine", np.ones((2, 4), dtype=int), [0, 0], 0.1, "none")
        with pytest.raises(ShapeError):
            QuantizedNetwork(4, (hidden, output))

    def test_output_layer_has_no_activation(self):
        with pytest.raises(ShapeError):
            QuantizedNetwork(4, (Layer("affine", [[1]], [0], 0.1, "relu"),))

    def test_hidden_layer_needs_activation(self):
        hidden = Layer("affine", [[1]], [0], 0.1, "none")
        output = Layer("affine", [[1]], [0], 0.1, "none")
        with pytest.raises(ShapeError):
            QuantizedNetwork(4, (hidden, output))

    def test_integer_range_depends_on_quant_bits(self):
        with pytest.raises(RangeError):
            QuantizedNetwork(4, (Layer("affine", [[9]], [0], 0.1, "none"),))
        with pytest.raises(RangeError):
            QuantizedNetwork(17, (Layer("affine", [[1]], [0], 0.1, "none"),))

    def test_attack_only_value_is_outside_the_stored_range(self):
        net = QuantizedNetwork(4, (Layer("affine", [[-8]], [0], 0.1, "none"),))
        with pytest.raises(RangeError):
            net.check_symmetric_range()

    def test_parameters_are_enumerated_in_sorted_order(self, example_net):
        params = [str(p) for p in example_net.parameters()]
        assert params == [
            "b2_1", "b2_2", "W2_1_1", "W2_1_2", "W2_2_1", "W2_2_2",
            "b3_1", "b3_2", "W3_1_1", "W3_1_2", "W3_2_1", "W3_2_2",
        ]

    def test_code_and_value_lookup(self, example_net):
        param = ParamId.parse("W3_2_2")
        assert example_net.code(param) == -1
        assert example_net.value(param) == pytest.approx(-1 / 7)
        assert example_net.code(ParamId.parse("W2_1_2")) == -3

    def test_out_of_range_parameter(self, example_net):
        with pytest.raises(AttackError):
            example_net.code(ParamId.parse("W3_3_1"))
        with pytest.raises(AttackError):
            example_net.code(ParamId.parse("W4_1_1"))

    def test_equality_compares_integer_ground_truth(self, example_net):
        same = QuantizedNetwork(example_net.quant_bits, example_net.layers, name="other")
        assert same == example_net
        flipped = apply_attack(example_net, AttackVector.single(ParamId.parse("b2_1"), [1]))
        assert flipped != example_net


class TestForward:
    def test_worked_example_output(self, example_net):
        np.testing.assert_allclose(forward(example_net, [1.0, 1.0]), [0.0, -1 / 7], atol=1e-12)

    def test_identity_network(self):
        np.testing.assert_array_equal(forward(identity_net(), [3.0, -2.0]), [3.0, -2.0])

    def test_sign_bit_flip_changes_the_decision(self, example_net):
        attacked = apply_attack(example_net, AttackVector.single(ParamId.parse("W3_2_2"), [4]))
        y = forward(attacked, [1.0, 1.0])
        np.testing.assert_allclose(y, [0.0, 1.0], atol=1e-12)
        assert classify(y) == 2

    def test_trace_lists_pre_and_post_activations(self, example_net):
        trace = forward_trace(example_net, [1.0, 1.0])
        assert len(trace) == 4
        np.testing.assert_allclose(trace[1], [-1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(trace[2], [0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(trace[3], forward(example_net, [1.0, 1.0]))

    def test_repeated_calls_are_bit_identical(self, example_net, rng):
        x = rng.uniform(0, 1, size=2)
        assert forward(example_net, x).tobytes() == forward(example_net, x).tobytes()

    def test_batch_matches_single_inputs(self, example_net, rng):
        X = rng.uniform(-1, 1, size=(20, 2))
        batch = forward_batch(example_net, X)
        for x, y in zip(X, batch):
            np.testing.assert_allclose(forward(example_net, x), y, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self, example_net):
        with pytest.raises(ShapeError):
            forward(example_net, [1.0, 1.0, 1.0])

    def test_ties_go_to_the_smallest_index(self):
        assert classify([0.5, 0.5, 0.1]) == 1
        assert classify([0.1, 0.5, 0.5]) == 2
