import json

import pandas as pd
import pytest

from main import EXIT_USAGE, main


@pytest.fixture
def example_args(networks_dir):
    return [
        "verify",
        "--model", str(networks_dir / "two_layer_relu.json"),
        "--center", str(networks_dir / "two_layer_relu_center.json"),
        "--radius", "0",
        "--target", "1",
        "--bits", "1",
    ]


class TestVerifyCommand:
    def test_full_mode_writes_a_falsified_report(self, example_args, tmp_path, capsys):
        out = tmp_path / "report.json"
        assert main(example_args + ["--out", str(out)]) == 1
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["overall"] == "Falsified"
        assert report["witness"]["attack"] == [{"param": "W3_2_2", "bits": [4]}]
        assert "OVERALL: Falsified" in capsys.readouterr().out

    def test_modes(self, example_args):
        assert main(example_args + ["--mode", "naive_baseline"]) == 1
        assert main(example_args + ["--mode", "ra_only"]) == 2

    def test_scope(self, example_args):
        assert main(example_args + ["--scope", "layers=2"]) == 0

    def test_rejected_baseline(self, networks_dir, example_args):
        args = list(example_args)
        args[args.index("--target") + 1] = "2"
        assert main(args) == EXIT_USAGE

    def test_missing_model_file(self, example_args, tmp_path):
        args = list(example_args)
        args[args.index("--model") + 1] = str(tmp_path / "missing.json")
        assert main(args) == EXIT_USAGE

    def test_center_needs_a_radius(self, networks_dir):
        argv = ["verify", "--model", str(networks_dir / "two_layer_relu.json"),
                "--center", str(networks_dir / "two_layer_relu_center.json"), "--target", "1", "--bits", "1"]
        assert main(argv) == EXIT_USAGE

    def test_usage_errors_exit_with_three(self, networks_dir):
        with pytest.raises(SystemExit) as e:
            main(["verify", "--center", str(networks_dir / "two_layer_relu_center.json"), "--target", "1", "--bits", "1"])
        assert e.value.code == EXIT_USAGE
        with pytest.raises(SystemExit) as e:
            main(["verify", "--model", "m.json", "--box", "b.json", "--target", "1", "--bits", "1",
                  "--mode", "exhaustive"])
        assert e.value.code == EXIT_USAGE

    def test_box_region(self, networks_dir, tmp_path):
        box = tmp_path / "box.json"
        box.write_text(json.dumps({"lower": [1.0, 1.0], "upper": [1.0, 1.0]}))
        argv = ["verify", "--model", str(networks_dir / "two_layer_relu.json"), "--box", str(box),
                "--target", "1", "--bits", "1", "--scope", "params=W2_1_1"]
        assert main(argv) == 0

    def test_box_with_a_radius_is_rejected(self, networks_dir, tmp_path):
        box = tmp_path / "box.json"
        box.write_text(json.dumps({"lower": [1.0, 1.0], "upper": [1.0, 1.0]}))
        argv = ["verify", "--model", str(networks_dir / "two_layer_relu.json"), "--box", str(box),
                "--radius", "0.1", "--target", "1", "--bits", "1"]
        assert main(argv) == EXIT_USAGE

    def test_csv_and_lp_exports(self, example_args, tmp_path):
        csv, lp = tmp_path / "verdicts.csv", tmp_path / "attack.lp"
        assert main(example_args + ["--csv", str(csv), "--export-lp", str(lp)]) == 1
        frame = pd.read_csv(csv)
        assert len(frame) == 12
        assert set(frame["status"]) == {"Safe", "Unknown"}
        assert lp.read_text(encoding="utf-8").startswith("Subject To\n")

    def test_timeout_exit_code(self, example_args):
        assert main(example_args + ["--timeout-ra", "0"]) == 2


class TestReplayCommand:
    def test_witness_from_a_report_replays(self, example_args, networks_dir, tmp_path):
        out = tmp_path / "report.json"
        main(example_args + ["--out", str(out)])
        argv = ["replay", "--model", str(networks_dir / "two_layer_relu.json"), "--witness", str(out)]
        assert main(argv) == 0

    def test_harmless_witness_does_not_replay(self, networks_dir, tmp_path):
        witness = tmp_path / "witness.json"
        witness.write_text(json.dumps({
            "attack": [{"param": "W3_1_1", "bits": [1]}], "input": [1.0, 1.0], "target": 1,
        }))
        argv = ["replay", "--model", str(networks_dir / "two_layer_relu.json"), "--witness", str(witness)]
        assert main(argv) == 1

    def test_malformed_witness(self, networks_dir, tmp_path):
        witness = tmp_path / "witness.json"
        witness.write_text("{}")
        argv = ["replay", "--model", str(networks_dir / "two_layer_relu.json"), "--witness", str(witness)]
        assert main(argv) == EXIT_USAGE
