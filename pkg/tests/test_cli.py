"""End-to-end tests of the command-line surface."""

import json

import numpy as np
import pytest

from credence import serialize
from credence.cli import main
from credence.engine import ideal_synthetic_model
from credence.training import ObservationSet


@pytest.fixture()
def ideal_model_path(tmp_path):
    path = tmp_path / "ideal.json"
    serialize.save(path, ideal_synthetic_model())
    return path


class TestGenData:
    def test_writes_dataset_and_config_echo(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["gen-data", "--out", str(out), "--count", "200", "--seed", "3"])
        assert code == 0
        data = ObservationSet.read(out / "observations.txt")
        assert len(data) == 200
        echoed = json.loads((out / "config.json").read_text())
        assert echoed["count"] == 200
        assert echoed["seed"] == 3

    def test_reruns_are_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["gen-data", "--out", str(out_a), "--count", "100", "--seed", "5"])
        main(["gen-data", "--out", str(out_b), "--count", "100", "--seed", "5"])
        assert (out_a / "observations.txt").read_bytes() == (out_b / "observations.txt").read_bytes()
        assert (out_a / "gen-data.json").read_bytes() == (out_b / "gen-data.json").read_bytes()


class TestQuery:
    def test_benchmark_row_one(self, ideal_model_path, capsys):
        code = main(["query", "--model", str(ideal_model_path), "--query", "C: x0=1; Q: x10=1"])
        out = capsys.readouterr().out.strip()
        assert code == 0
        assert out == "bel=0.0000 pl=0.3300"

    def test_all_benchmark_rows_exact_two_decimals(self, ideal_model_path, capsys):
        from credence.engine import BENCHMARK_QUERIES

        for text, bel2, pl2 in BENCHMARK_QUERIES:
            code = main(["query", "--model", str(ideal_model_path), "--query", text])
            out = capsys.readouterr().out.strip()
            assert code == 0
            bel = float(out.split()[0].split("=")[1])
            pl = float(out.split()[1].split("=")[1])
            assert round(bel, 2) == pytest.approx(bel2)
            assert round(pl, 2) == pytest.approx(pl2)

    def test_parse_error_exit_code(self, ideal_model_path, capsys):
        code = main(["query", "--model", str(ideal_model_path), "--query", "C: ; Q:"])
        assert code == 1

    def test_zero_plausibility_exit_code(self, tmp_path, capsys):
        from credence.engine import IdentityMap, LatentSpace, NbrModel, TableRule

        model = NbrModel(
            LatentSpace(2), IdentityMap(2), (TableRule([1, 0, 0, 0], 2),), (1.0,)
        )
        path = tmp_path / "m.json"
        serialize.save(path, model)
        code = main(["query", "--model", str(path), "--query", "C: x0=1,x1=1; Q: x0=1"])
        assert code == 2

    def test_missing_model_file(self, tmp_path):
        code = main(["query", "--model", str(tmp_path / "nope.json"), "--query", "C: x0=1; Q: x1=1"])
        assert code == 1


class TestSample:
    def test_writes_requested_count(self, ideal_model_path, tmp_path, capsys):
        out = tmp_path / "samples.txt"
        code = main([
            "sample", "--model", str(ideal_model_path), "-n", "500",
            "--seed", "9", "--out", str(out),
        ])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 500
        assert all(len(line) == 11 and set(line) <= {"0", "1"} for line in lines)

    def test_deterministic(self, ideal_model_path, tmp_path):
        out_a, out_b = tmp_path / "a.txt", tmp_path / "b.txt"
        for out in (out_a, out_b):
            main([
                "sample", "--model", str(ideal_model_path), "-n", "200",
                "--seed", "4", "--out", str(out),
            ])
        assert out_a.read_bytes() == out_b.read_bytes()


class TestSelftest:
    def test_passes_and_writes_report(self, tmp_path, capsys):
        out = tmp_path / "st"
        code = main(["selftest", "--seed", "1", "--out", str(out)])
        assert code == 0
        text = capsys.readouterr().out
        assert "selftest: PASS" in text
        summary = json.loads((out / "selftest.json").read_text())
        assert all(summary.values())


class TestTrainSmall:
    def test_train_writes_model_and_report(self, tmp_path, capsys):
        out = tmp_path / "train"
        code = main([
            "train", "--out", str(out), "--count", "400", "--max-steps", "30",
            "--seed", "0",
        ])
        assert code == 0
        model = serialize.load(out / "model.json")
        assert model.rule_count == 2
        summary = json.loads((out / "train.json").read_text())
        assert summary["steps"] == 30

    def test_usage_error_on_unknown_command(self):
        assert main(["frobnicate"]) == 1
