import json

import numpy as np
import pytest

from absdomain import InputRegion
from config import Settings
from errors import (
    AttackError,
    BaselineRejectedError,
    ConfigurationError,
    ModelParseError,
    ShapeError,
    WitnessError,
)
from milp_solver import MilpStatus
from models import Layer, ParamId, QuantizedNetwork, classify, forward
from oracles import find_attack, instances, mixed_instances, sample_points
from quant import AttackVector, Witness, apply_attack
from verifier import (
    Mode,
    OverallStatus,
    ParameterScope,
    VerificationJob,
    load_box,
    load_center,
    load_witness,
    replay,
    verify,
    vulnerable_parameters,
)


def example_job(net, region, **kwargs):
    return VerificationJob(net, region, kwargs.pop("target", 1), kwargs.pop("max_flips", 1), **kwargs)


def sigmoid_net():
    hidden = Layer("affine", [[7]], [0], 0.1, "sigmoid")
    output = Layer("affine", [[1], [-1]], [0, 0], 1 / 7, "none")
    return QuantizedNetwork(4, (hidden, output))


class TestParameterScope:
    def test_parse(self):
        assert ParameterScope.parse("all").kind == "all"
        assert ParameterScope.parse("layers=2, 3").layers == (2, 3)
        scope = ParameterScope.parse("params=W3_2_2,b3_1")
        assert scope.params == (ParamId.parse("W3_2_2"), ParamId.parse("b3_1"))
        sample = ParameterScope.parse("sample", Settings(sample_weights_per_layer=2, sample_seed=5))
        assert (sample.weights_per_layer, sample.seed) == (2, 5)

    @pytest.mark.parametrize("text", ["everything", "all=1", "layers=", "layers=a", "params="])
    def test_parse_errors(self, text):
        with pytest.raises(ConfigurationError):
            ParameterScope.parse(text)

    def test_malformed_parameter(self):
        with pytest.raises(AttackError):
            ParameterScope.parse("params=Q3_1")

    def test_select(self, example_net):
        assert len(ParameterScope().select(example_net)) == 12
        assert [str(p) for p in ParameterScope.parse("params=W3_2_2,b3_1").select(example_net)] == ["b3_1", "W3_2_2"]
        assert len(ParameterScope.parse("layers=3").select(example_net)) == 6
        assert ParameterScope.parse("exclude=W3_2_2").select(example_net) == [
            p for p in example_net.parameters() if str(p) != "W3_2_2"
        ]

    def test_sample_is_seeded_and_capped(self, example_net):
        scope = ParameterScope("sample", weights_per_layer=2, biases_per_layer=1, seed=3)
        chosen = scope.select(example_net)
        assert chosen == scope.select(example_net)
        assert len(chosen) == 6
        assert chosen == sorted(chosen)


class TestJobValidation:
    def test_flip_bound(self, example_net, example_point):
        for bits in (0, 5):
            with pytest.raises(ConfigurationError):
                example_job(example_net, example_point, max_flips=bits)

    def test_target(self, example_net, example_point):
        with pytest.raises(ConfigurationError):
            example_job(example_net, example_point, target=3)

    def test_region_dimension(self, example_net):
        with pytest.raises(ShapeError):
            example_job(example_net, InputRegion.linf_ball([1.0], 0.0))


class TestWorkedExample:
    def test_full_mode_finds_the_sign_flip(self, example_net, example_point):
        report = verify(example_job(example_net, example_point))
        assert report.overall is OverallStatus.FALSIFIED
        assert report.exit_code == 1
        assert report.witness.attack.pairs == ((ParamId.parse("W3_2_2"), frozenset({4})),)
        assert sorted(str(m.param) for m in report.vulnerable) == ["W3_1_2", "W3_2_2", "b3_1", "b3_2"]

    def test_vulnerable_set_carries_the_unresolved_flips(self, example_net, example_point):
        report = verify(example_job(example_net, example_point))
        by_param = {m.param: m for m in report.vulnerable}
        assert by_param[ParamId.parse("W3_2_2")].flip_codes == (-5, -3, -2, 7)
        assert by_param[ParamId.parse("W3_1_2")].flip_codes == (-8,)
        listing = vulnerable_parameters(report)
        assert [entry["param"] for entry in listing] == ["b3_1", "b3_2", "W3_1_2", "W3_2_2"]

    def test_full_flip_sets(self, example_net, example_point):
        job = example_job(example_net, example_point, settings=Settings(milp_full_flip_sets=True))
        by_param = {m.param: m for m in verify(job).vulnerable}
        assert by_param[ParamId.parse("W3_1_2")].flip_codes == (-8, 1, 2, 4)

    def test_reachability_only(self, example_net, example_point):
        report = verify(example_job(example_net, example_point, mode=Mode.RA_ONLY))
        assert report.overall is OverallStatus.UNKNOWN
        assert report.exit_code == 2
        assert report.milp is None and report.witness is None

    def test_naive_baseline(self, example_net, example_point):
        report = verify(example_job(example_net, example_point, mode=Mode.NAIVE_BASELINE))
        assert report.overall is OverallStatus.FALSIFIED
        assert report.ra_calls == 48
        assert report.witness.attack.pairs[0][0] == ParamId.parse("b3_1")

    def test_excluding_the_sign_flip_still_falsifies(self, example_net, example_point):
        scope = ParameterScope.parse("exclude=W3_2_2")
        report = verify(example_job(example_net, example_point, scope=scope))
        assert report.overall is OverallStatus.FALSIFIED
        params = scope.select(example_net)
        assert find_attack(example_net, 1, 1, sample_points(example_point, 10), params) is not None
        assert report.witness.attack.pairs[0][0] in params

    def test_first_layer_is_tolerant(self, example_net, example_point):
        report = verify(example_job(example_net, example_point, scope=ParameterScope.parse("layers=2")))
        assert report.overall is OverallStatus.BFA_TOLERANT
        assert report.exit_code == 0
        assert report.vulnerable == []

    def test_baseline_must_prove(self, example_net, example_point):
        with pytest.raises(BaselineRejectedError):
            verify(example_job(example_net, example_point, target=2))

    def test_report_is_deterministic(self, example_net, example_point):
        first = verify(example_job(example_net, example_point)).to_dict(include_timings=False)
        second = verify(example_job(example_net, example_point)).to_dict(include_timings=False)
        assert first == second
        assert first["calls"]["reachability"] == sum(p["analyzer_calls"] for p in first["parameters"])
        json.dumps(first)

    def test_worker_count_does_not_change_the_report(self, example_net, example_point):
        single = verify(example_job(example_net, example_point)).to_dict(include_timings=False)
        pooled = verify(example_job(example_net, example_point, settings=Settings(workers=3))).to_dict(include_timings=False)
        assert pooled == single


class TestBudgets:
    def test_reachability_timeout(self, example_net, example_point):
        report = verify(example_job(example_net, example_point, settings=Settings(timeout_ra=0)))
        assert report.overall is OverallStatus.TIMEOUT
        assert report.exit_code == 2
        assert len(report.skipped) == 12

    def test_milp_timeout(self, example_net, example_point):
        report = verify(example_job(example_net, example_point, settings=Settings(timeout_milp=0)))
        assert report.overall is OverallStatus.TIMEOUT
        assert report.witness is None


class TestNonReluNetwork:
    def test_full_mode_stops_after_the_sweep(self):
        report = verify(VerificationJob(sigmoid_net(), InputRegion.linf_ball([1.0], 0.0), 1, 1))
        assert report.overall is OverallStatus.UNKNOWN
        assert report.milp is None
        assert any("ReLU" in note for note in report.notes)


class TestExportLp:
    def test_model_is_written(self, example_net, example_point, tmp_path):
        path = tmp_path / "attack.lp"
        report = verify(example_job(example_net, example_point, export_lp_path=path))
        assert path.read_text(encoding="utf-8").endswith("End\n")
        assert any("LP model" in note for note in report.notes)


class TestReplay:
    def test_sign_flip_replays(self, example_net):
        witness = Witness(AttackVector.single(ParamId.parse("W3_2_2"), [4]), np.array([1.0, 1.0]), np.zeros(2), 1)
        assert replay(witness, example_net)

    def test_harmless_flip_does_not(self, example_net):
        witness = Witness(AttackVector.single(ParamId.parse("W3_1_1"), [1]), np.array([1.0, 1.0]), np.zeros(2), 1)
        assert not replay(witness, example_net)

    def test_invalid_witnesses(self, example_net):
        with pytest.raises(WitnessError):
            replay(Witness(AttackVector(()), np.array([1.0, 1.0]), np.zeros(2), 3), example_net)
        with pytest.raises(AttackError):
            replay(Witness(AttackVector.single(ParamId.parse("W4_1_1"), [1]), np.array([1.0, 1.0]), np.zeros(2), 1),
                   example_net)
        with pytest.raises(ShapeError):
            replay(Witness(AttackVector(()), np.array([1.0]), np.zeros(2), 1), example_net)


class TestLoaders:
    def test_center(self, networks_dir, tmp_path):
        np.testing.assert_array_equal(load_center(networks_dir / "two_layer_relu_center.json"), [1.0, 1.0])
        bare = tmp_path / "bare.json"
        bare.write_text("[0.25, 0.5]")
        np.testing.assert_array_equal(load_center(bare), [0.25, 0.5])

    def test_box(self, tmp_path):
        path = tmp_path / "box.json"
        path.write_text(json.dumps({"lower": [0, 0.1], "upper": [1, 0.2]}))
        region = load_box(path)
        assert region.kind == "box"
        np.testing.assert_array_equal(region.upper, [1.0, 0.2])

    @pytest.mark.parametrize("content", [
        "{\"lower\": [0], \"upper\": [1, 2]}",
        "{\"lower\": [0]}",
        "{\"lower\": [0], \"upper\": [1], \"extra\": 1}",
        "not json",
    ])
    def test_malformed_box(self, tmp_path, content):
        path = tmp_path / "box.json"
        path.write_text(content)
        with pytest.raises(ModelParseError):
            load_box(path)

    def test_witness_from_a_report(self, example_net, example_point, tmp_path):
        report = verify(example_job(example_net, example_point))
        path = tmp_path / "report.json"
        path.write_text(json.dumps(report.to_dict()))
        witness = load_witness(path)
        assert witness.attack == report.witness.attack
        assert replay(witness, example_net)

    def test_report_without_witness(self, example_net, example_point, tmp_path):
        report = verify(example_job(example_net, example_point, mode=Mode.RA_ONLY))
        path = tmp_path / "report.json"
        path.write_text(json.dumps(report.to_dict()))
        with pytest.raises(WitnessError):
            load_witness(path)

    def test_malformed_witness(self, tmp_path):
        path = tmp_path / "witness.json"
        path.write_text(json.dumps({"attack": [{"param": "W3_2_2"}], "input": [1.0], "target": 1}))
        with pytest.raises(WitnessError):
            load_witness(path)


def _matches_brute_force(instance):
    """Full mode decides every instance, and the decision agrees with exhaustive flipping."""
    net, region, target = instance.net, instance.region, instance.target
    settings = Settings(eps_split=1e-6, timeout_milp=60)
    report = verify(VerificationJob(net, region, target, instance.max_flips, settings=settings))
    assert report.overall in (OverallStatus.BFA_TOLERANT, OverallStatus.FALSIFIED), report.notes
    assert report.milp is None or report.milp.status in (MilpStatus.PROVED, MilpStatus.FALSIFIED)

    attack = find_attack(net, target, instance.max_flips, sample_points(region, 1000, seed=instance.seed))
    if report.overall is OverallStatus.FALSIFIED:
        witness = report.witness
        assert region.contains(witness.input, tol=1e-12)
        assert classify(forward(apply_attack(net, witness.attack), witness.input)) != target
        assert replay(witness, net)
    else:
        assert attack is None, f"{attack[0]} -> {attack[1]} misclassifies {attack[2]}"
    for verdict in report.verdicts:
        if verdict.is_safe:
            assert find_attack(net, target, instance.max_flips, sample_points(region, 100), [verdict.param]) is None


class TestOracleConsistency:
    @pytest.mark.parametrize("instance", instances(5, first_seed=1000, width=(3, 6)), ids=lambda i: f"seed{i.seed}")
    def test_verdict_agrees_with_brute_force(self, instance):
        _matches_brute_force(instance)

    @pytest.mark.slow
    @pytest.mark.parametrize("instance", instances(50, first_seed=1100, width=(3, 6)), ids=lambda i: f"seed{i.seed}")
    def test_full_suite(self, instance):
        _matches_brute_force(instance)


def eight_bit_two_flip(count, first_seed):
    """Q=8, at-most-2-flip members of the mixed suite."""
    return [i for i in mixed_instances(count, first_seed) if i.net.quant_bits == 8 and i.max_flips == 2]


def _fewer_calls_than_naive(instance, record_property):
    net, region, target = instance.net, instance.region, instance.target
    full = verify(VerificationJob(net, region, target, 2, settings=Settings(timeout_milp=5)))
    naive = verify(VerificationJob(net, region, target, 2, Mode.NAIVE_BASELINE))
    assert naive.ra_calls == len(list(net.parameters())) * 36
    assert full.ra_calls < naive.ra_calls
    record_property("naive_to_full_call_ratio", round(naive.ra_calls / full.ra_calls, 2))


class TestEfficiency:
    @pytest.mark.parametrize("instance", eight_bit_two_flip(12, 3000), ids=lambda i: f"seed{i.seed}")
    def test_fewer_analyzer_calls_than_the_naive_baseline(self, instance, record_property):
        _fewer_calls_than_naive(instance, record_property)

    @pytest.mark.slow
    @pytest.mark.parametrize("instance", eight_bit_two_flip(200, 3000), ids=lambda i: f"seed{i.seed}")
    def test_full_suite(self, instance, record_property):
        _fewer_calls_than_naive(instance, record_property)
