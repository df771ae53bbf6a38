import pytest

from errors import ConfigurationError
from models import q_max
from synthetic import SyntheticSpec, generate_synthetic, generate_synthetic_conv


class TestGenerateSynthetic:
    def test_shape_and_activations(self):
        net = generate_synthetic(SyntheticSpec((3, 5, 4, 2), activation="tanh", seed=7))
        assert net.layer_dims == [3, 5, 4, 2]
        assert net.activations == ["tanh", "tanh", "none"]
        assert net.name == "synthetic-7"

    def test_equal_specs_give_equal_networks(self):
        spec = SyntheticSpec((2, 3, 2), quant_bits=8, seed=11)
        assert generate_synthetic(spec) == generate_synthetic(spec)
        assert generate_synthetic(spec) != generate_synthetic(SyntheticSpec((2, 3, 2), quant_bits=8, seed=12))

    @pytest.mark.parametrize("quant_bits", [2, 4, 8])
    def test_codes_use_the_symmetric_range(self, quant_bits):
        net = generate_synthetic(SyntheticSpec((4, 6, 3), quant_bits=quant_bits, seed=1))
        net.check_symmetric_range()
        assert max(abs(net.code(p)) for p in net.parameters()) == q_max(quant_bits)

    @pytest.mark.parametrize("spec", [
        SyntheticSpec((3,)),
        SyntheticSpec((3, 0, 2)),
        SyntheticSpec((3, 2), activation="none"),
        SyntheticSpec((3, 2), activation="softplus"),
    ])
    def test_invalid_specs(self, spec):
        with pytest.raises(ConfigurationError):
            generate_synthetic(spec)


class TestGenerateSyntheticConv:
    def test_layout(self):
        net = generate_synthetic_conv((1, 4, 4), 2, (2, 2), (5, 3), seed=3)
        assert net.layers[0].kind == "conv2d"
        assert net.layer_dims == [16, 18, 5, 3]
        assert net.activations == ["relu", "relu", "none"]

    def test_needs_a_head(self):
        with pytest.raises(ConfigurationError):
            generate_synthetic_conv((1, 4, 4), 2, (2, 2), ())
