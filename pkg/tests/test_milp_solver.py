import numpy as np
import pytest

from absdomain import InputRegion
from errors import ConfigurationError
from milp import VulnerableParam
from milp_solver import MilpStatus, bfa_milp, enumerate_assignments, input_split_search
from models import ParamId, classify, forward
from oracles import find_attack, instances, sample_points
from quant import apply_attack, enumerate_flips
from synthetic import SyntheticSpec, generate_synthetic
from utils import Budget

UNKNOWN_PARAMS = ("b3_1", "b3_2", "W3_1_2", "W3_2_2")


def member(net, param, max_flips=1):
    code = net.code(param)
    return VulnerableParam(param, code, enumerate_flips(code, net.quant_bits, max_flips), net.step_size(param))


@pytest.fixture
def example_vulnerable(example_net):
    return [member(example_net, ParamId.parse(name)) for name in UNKNOWN_PARAMS]


class TestEnumerateAssignments:
    def test_largest_parameter_and_highest_bit_first(self, example_net, example_vulnerable):
        order = enumerate_assignments(example_net, example_vulnerable)
        assert len(order) == 16
        assert [(str(m.param), code) for m, code in order[:4]] == [
            ("W3_2_2", 7), ("W3_2_2", -5), ("W3_2_2", -3), ("W3_2_2", -2),
        ]
        assert str(order[-1][0].param) == "b3_1"


class TestInputSplitSearch:
    def test_unattacked_worked_example(self, example_net, example_point):
        result = input_split_search(example_net, example_point, 1)
        assert result.status is MilpStatus.PROVED
        assert result.boxes == 1

    def test_tie_at_a_corner_stays_undecided(self, example_net):
        region = InputRegion.box([0.0, 0.0], [1.0, 1.0])
        result = input_split_search(example_net, region, 1, eps_split=0.01)
        assert result.status is MilpStatus.EPS_UNDECIDED
        assert result.boxes > 1

    def test_wrong_target_is_falsified(self, example_net):
        region = InputRegion.box([0.0, 0.0], [1.0, 1.0])
        result = input_split_search(example_net, region, 2, eps_split=0.01)
        assert result.status is MilpStatus.FALSIFIED
        assert classify(forward(example_net, result.input)) == 1
        assert region.contains(result.input)

    def test_expired_budget(self, example_net, example_point):
        assert input_split_search(example_net, example_point, 1, budget=Budget(0)).status is MilpStatus.TIMEOUT


class TestBfaMilp:
    def test_worked_example_is_falsified_by_the_sign_bit(self, example_net, example_point, example_vulnerable):
        outcome = bfa_milp(example_net, example_point, 1, example_vulnerable)
        assert outcome.status is MilpStatus.FALSIFIED
        assert outcome.witness.attack.pairs == ((ParamId.parse("W3_2_2"), frozenset({4})),)
        np.testing.assert_allclose(outcome.witness.input, [1.0, 1.0])
        assert outcome.assignments_total == 16
        assert outcome.assignments_closed == 0

    def test_empty_vulnerable_set_decides_the_plain_network(self, example_net, example_point):
        outcome = bfa_milp(example_net, example_point, 1, [])
        assert outcome.status is MilpStatus.PROVED
        assert outcome.assignments_total == 1
        assert outcome.witness is None

    def test_harmless_parameter_is_proved(self, example_net, example_point):
        outcome = bfa_milp(example_net, example_point, 1, [member(example_net, ParamId.parse("W3_1_1"), 4)])
        assert outcome.status is MilpStatus.PROVED
        assert outcome.assignments_total == 15
        assert outcome.assignments_closed == 15

    def test_expired_budget(self, example_net, example_point, example_vulnerable):
        assert bfa_milp(example_net, example_point, 1, example_vulnerable, Budget(0)).status is MilpStatus.TIMEOUT

    def test_worker_count_does_not_change_the_outcome(self, example_net, example_point, example_vulnerable):
        single = bfa_milp(example_net, example_point, 1, example_vulnerable, workers=1)
        pooled = bfa_milp(example_net, example_point, 1, example_vulnerable, workers=2)
        assert pooled.to_dict() == single.to_dict()

    def test_non_relu_network(self):
        net = generate_synthetic(SyntheticSpec((2, 3, 2), activation="tanh", seed=0))
        with pytest.raises(ConfigurationError):
            bfa_milp(net, InputRegion.linf_ball([0.5, 0.5], 0.1), 1, [])

    def test_outcome_serializes(self, example_net, example_point, example_vulnerable):
        data = bfa_milp(example_net, example_point, 1, example_vulnerable).to_dict()
        assert data["status"] == "Falsified"
        assert data["witness"]["attack"] == [{"param": "W3_2_2", "bits": [4]}]


def _agrees_with_oracle(instance, vulnerable):
    net, region, target = instance.net, instance.region, instance.target
    outcome = bfa_milp(net, region, target, vulnerable, Budget(60), eps_split=1e-6)
    assert outcome.status in (MilpStatus.PROVED, MilpStatus.FALSIFIED)
    assert outcome.assignments_total == sum(len(m.flip_codes) for m in vulnerable)
    points = sample_points(region, 300, seed=instance.seed)
    attack = find_attack(net, target, instance.max_flips, points, [m.param for m in vulnerable])
    if outcome.status is MilpStatus.FALSIFIED:
        witness = outcome.witness
        assert region.contains(witness.input, tol=1e-12)
        assert classify(forward(apply_attack(net, witness.attack), witness.input)) != target
    else:
        assert attack is None


class TestOracleAgreement:
    @pytest.mark.parametrize("instance", instances(4, first_seed=800, width=(3, 6)), ids=lambda i: f"seed{i.seed}")
    def test_small_vulnerable_sets(self, instance):
        rng = np.random.default_rng(instance.seed)
        params = list(instance.net.parameters())
        vulnerable = [member(instance.net, params[i]) for i in rng.choice(len(params), size=3, replace=False)]
        _agrees_with_oracle(instance, vulnerable)

    @pytest.mark.slow
    @pytest.mark.parametrize("instance", instances(50, first_seed=900, width=(3, 6)), ids=lambda i: f"seed{i.seed}")
    def test_full_suite(self, instance):
        rng = np.random.default_rng(instance.seed)
        params = list(instance.net.parameters())
        vulnerable = [member(instance.net, params[i]) for i in rng.choice(len(params), size=6, replace=False)]
        _agrees_with_oracle(instance, vulnerable)
