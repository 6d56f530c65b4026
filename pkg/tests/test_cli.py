"""Scenario schema, sweep/coverage artifacts, and exit-code contract."""

import json
import math

import pytest

from ltqkd.cli import (
    CSV_COLUMNS,
    _wilson_interval,
    load_scenario,
    main,
)
from ltqkd.errors import SchemaError

BASE_SCENARIO = {
    "schema_version": 1,
    "protocol": "pm",
    "delta": 0.126,
    "dark_count_prob": 1e-8,
    "n_tot": [1e6],
    "loss_db": [20.0, 10.0],
    "methods": ["random-sampling", "azuma"],
    "optimize": False,
}


def write_scenario(tmp_path, name="scenario.json", drop=(), **overrides):
    payload = dict(BASE_SCENARIO)
    payload.setdefault("out", str(tmp_path / "sweep.csv"))
    payload.update(overrides)
    for key in drop:
        payload.pop(key, None)
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def read_rows(csv_path):
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    return [line.split(",") for line in lines if line]


class TestScenarioLoading:
    def test_round_trip_with_defaults(self, tmp_path):
        scenario = load_scenario(write_scenario(tmp_path))
        assert scenario.protocol == "pm"
        assert scenario.loss_db == (20.0, 10.0)
        assert scenario.methods == ("random-sampling", "azuma")
        assert scenario.eps_c == 1e-8
        assert scenario.f == 1.16
        assert scenario.probabilities["p_0x"] == 0.5

    def test_loss_range_expansion(self, tmp_path):
        path = write_scenario(tmp_path,
                              loss_db={"start": 10, "stop": 30, "step": 10})
        assert load_scenario(path).loss_db == (10.0, 20.0, 30.0)

    def test_unknown_key_named(self, tmp_path):
        path = write_scenario(tmp_path, detector_efficiency=0.5)
        with pytest.raises(SchemaError, match="detector_efficiency"):
            load_scenario(path)

    def test_schema_version_required(self, tmp_path):
        path = write_scenario(tmp_path, drop=("schema_version",))
        with pytest.raises(SchemaError, match="schema_version"):
            load_scenario(path)
        path = write_scenario(tmp_path, schema_version=2)
        with pytest.raises(SchemaError, match="schema_version"):
            load_scenario(path)

    def test_unknown_method(self, tmp_path):
        path = write_scenario(tmp_path, methods=["chernoff"])
        with pytest.raises(SchemaError, match="chernoff"):
            load_scenario(path)

    def test_duplicate_methods(self, tmp_path):
        path = write_scenario(tmp_path, methods=["azuma", "azuma"])
        with pytest.raises(SchemaError, match="unique"):
            load_scenario(path)

    def test_empty_block_list(self, tmp_path):
        path = write_scenario(tmp_path, n_tot=[])
        with pytest.raises(SchemaError, match="n_tot"):
            load_scenario(path)

    def test_unknown_probability_named(self, tmp_path):
        path = write_scenario(tmp_path, probabilities={
            "p_0z": 0.25, "p_1z": 0.25, "p_0x": 0.5, "p_zb": 0.5,
            "p_xb": 0.5, "p_vacuum": 0.1,
        })
        with pytest.raises(SchemaError, match="p_vacuum"):
            load_scenario(path)

    def test_missing_probability_named(self, tmp_path):
        path = write_scenario(tmp_path, probabilities={
            "p_0z": 0.25, "p_1z": 0.25, "p_0x": 0.5, "p_zb": 0.5,
        })
        with pytest.raises(SchemaError, match="p_xb"):
            load_scenario(path)

    def test_probability_sum_violation_named(self, tmp_path):
        path = write_scenario(tmp_path, probabilities={
            "p_0z": 0.3, "p_1z": 0.3, "p_0x": 0.3, "p_zb": 0.5, "p_xb": 0.5,
        })
        with pytest.raises(SchemaError, match="sum to 1"):
            load_scenario(path)

    def test_protocol_specific_keys(self, tmp_path):
        path = write_scenario(tmp_path, protocol="mdi", misalignment=0.01,
                              probabilities={"p_z_alice": 0.5, "p_z_bob": 0.5,
                                             "p_k_given_z": 0.5})
        with pytest.raises(SchemaError, match="misalignment"):
            load_scenario(path)
        path = write_scenario(tmp_path, bell_outcomes=["psi_minus"])
        with pytest.raises(SchemaError, match="bell_outcomes"):
            load_scenario(path)

    def test_negative_seed_rejected(self, tmp_path):
        path = write_scenario(tmp_path, seed=-1)
        with pytest.raises(SchemaError, match="seed"):
            load_scenario(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(SchemaError, match="JSON"):
            load_scenario(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="not found"):
            load_scenario(tmp_path / "absent.json")


class TestWilsonInterval:
    def test_frozen_example(self):
        # 30-digit evaluation of the score interval at 5/100, z = 1.96
        low, high = _wilson_interval(5, 100)
        assert math.isclose(low, 0.021543361456313556, rel_tol=1e-12)
        assert math.isclose(high, 0.11175196527208816, rel_tol=1e-12)

    def test_zero_successes(self):
        low, high = _wilson_interval(0, 150)
        assert low == 0.0
        assert math.isclose(high, 0.024971139145718713, rel_tol=1e-12)

    def test_degenerate(self):
        assert _wilson_interval(0, 0) == (0.0, 1.0)


class TestValidateCommand:
    def test_valid_scenario(self, tmp_path, capsys):
        path = write_scenario(tmp_path)
        assert main(["validate", str(path)]) == 0
        assert "valid" in capsys.readouterr().out

    def test_schema_error_is_exit_one(self, tmp_path, capsys):
        path = write_scenario(tmp_path, beam_splitter=0.5)
        assert main(["validate", str(path)]) == 1
        assert "beam_splitter" in capsys.readouterr().err

    def test_usage_error_is_exit_one(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 1


class TestSweepCommand:
    def test_writes_sorted_rows_and_figure(self, tmp_path, capsys):
        path = write_scenario(tmp_path)
        assert main(["sweep", str(path)]) == 0
        rows = read_rows(tmp_path / "sweep.csv")
        assert rows[0] == list(CSV_COLUMNS)
        assert len(rows) == 1 + 4
        # rows sorted by (protocol, method, n_tot, loss) despite the file
        # listing losses in descending order
        keys = [(row[1], float(row[2]), float(row[3])) for row in rows[1:]]
        assert keys == sorted(keys)
        assert (tmp_path / "sweep.png").is_file()
        assert "4 rows" in capsys.readouterr().out

    def test_csv_bit_stable_outside_wall_time(self, tmp_path):
        path = write_scenario(tmp_path)
        main(["sweep", str(path)])
        first = read_rows(tmp_path / "sweep.csv")
        main(["sweep", str(path)])
        second = read_rows(tmp_path / "sweep.csv")
        assert [row[:-1] for row in first] == [row[:-1] for row in second]

    def test_empty_loss_list_header_only(self, tmp_path):
        path = write_scenario(tmp_path, loss_db=[])
        assert main(["sweep", str(path)]) == 0
        rows = read_rows(tmp_path / "sweep.csv")
        assert rows == [list(CSV_COLUMNS)]
        assert not (tmp_path / "sweep.png").exists()

    def test_out_flag_overrides_file(self, tmp_path):
        path = write_scenario(tmp_path, loss_db=[20.0])
        target = tmp_path / "elsewhere" / "curve.csv"
        assert main(["sweep", str(path), "--out", str(target)]) == 0
        assert target.is_file()
        assert (target.parent / "curve.png").is_file()
        assert not (tmp_path / "sweep.csv").exists()

    def test_parallel_rows_match_serial(self, tmp_path, monkeypatch):
        path = write_scenario(tmp_path)
        main(["sweep", str(path)])
        serial = read_rows(tmp_path / "sweep.csv")
        monkeypatch.setenv("LTQKD_JOBS", "2")
        main(["sweep", str(path)])
        parallel = read_rows(tmp_path / "sweep.csv")
        assert [row[:-1] for row in serial] == [row[:-1] for row in parallel]

    def test_domain_error_is_exit_two(self, tmp_path, capsys):
        # schema-consistent but domain-inconsistent: unequal key-bit priors
        # are only rejected by the tagging layer at compute time
        path = write_scenario(tmp_path, probabilities={
            "p_0z": 0.3, "p_1z": 0.2, "p_0x": 0.5, "p_zb": 0.5, "p_xb": 0.5,
        })
        assert main(["sweep", str(path)]) == 2
        assert "error" in capsys.readouterr().err

    def test_bad_jobs_flag(self, tmp_path, capsys):
        path = write_scenario(tmp_path)
        assert main(["sweep", str(path), "--jobs", "0"]) == 1
        capsys.readouterr()


class TestCoverageCommand:
    def coverage_scenario(self, tmp_path, **overrides):
        payload = {"n_tot": [1e5], "loss_db": [10.0], "trials": 120,
                   "seed": 9, "coverage_eps": 0.05}
        payload.update(overrides)
        return write_scenario(tmp_path, **payload)

    def test_report_and_csv(self, tmp_path, capsys):
        path = self.coverage_scenario(tmp_path)
        out = tmp_path / "cov.csv"
        assert main(["coverage", str(path), "--out", str(out)]) == 0
        text = capsys.readouterr().out
        for bound in ("random-sampling", "azuma", "kato"):
            assert bound in text
        assert "Wilson95" in text
        rows = read_rows(out)
        assert len(rows) == 1 + 3
        fractions = [float(row[3]) for row in rows[1:]]
        assert all(0.0 <= f <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / 120) + 1e-12
                   for f in fractions)

    def test_fixed_seed_reproduces_report(self, tmp_path, capsys):
        path = self.coverage_scenario(tmp_path)
        out = tmp_path / "cov.csv"
        main(["coverage", str(path), "--out", str(out)])
        first_text = capsys.readouterr().out
        first_csv = out.read_bytes()
        main(["coverage", str(path), "--out", str(out)])
        assert capsys.readouterr().out == first_text
        assert out.read_bytes() == first_csv

    def test_requires_point_to_point(self, tmp_path, capsys):
        path = write_scenario(
            tmp_path, protocol="mdi", drop=("dark_count_prob",),
            probabilities={"p_z_alice": 0.5, "p_z_bob": 0.5, "p_k_given_z": 0.5},
            n_tot=[1e5], trials=120, seed=9,
        )
        assert main(["coverage", str(path)]) == 1
        assert "pm" in capsys.readouterr().err

    def test_trial_floor(self, tmp_path, capsys):
        path = self.coverage_scenario(tmp_path, trials=50)
        assert main(["coverage", str(path)]) == 1
        assert "trials" in capsys.readouterr().err

    def test_seed_required(self, tmp_path, capsys):
        path = self.coverage_scenario(tmp_path, drop=("seed",))
        assert main(["coverage", str(path)]) == 1
        assert "seed" in capsys.readouterr().err
