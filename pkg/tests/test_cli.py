import csv
import json

import pytest

from rbsde_lab.cli import RunConfig, main

COUNTEREXAMPLE_CONFIG = {
    "tree": {"horizon": 1.0, "steps": 100, "mode": "recombining"},
    "generator": {"expr": "0.3333333333333333", "lipschitz": 0.0},
    "terminal": {"kind": "constant", "value": 0.3333333333333333},
    "obstacle": {"kind": "affine", "slope": -2.0, "intercept": 1.0},
    "seed": 1,
}


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def read_rows(path):
    with path.open(newline="") as handle:
        return list(csv.DictReader(handle))


class TestSolveCommand:
    def test_counterexample_root_row(self, tmp_path):
        config = write_config(tmp_path, COUNTEREXAMPLE_CONFIG)
        out = tmp_path / "out"
        assert main(["solve", "--config", str(config), "--out", str(out)]) == 0
        rows = read_rows(out / "solution.csv")
        root = rows[0]
        assert root["level"] == "0" and root["node"] == "0"
        assert float(root["Y"]) == 1.0
        assert float(root["K"]) == 0.0
        assert float(root["S"]) == 1.0
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["skorokhod_residual"] == 0.0
        assert diag["min_y_minus_s"] >= 0.0

    def test_low_obstacle_solution_has_no_push(self, tmp_path):
        payload = dict(COUNTEREXAMPLE_CONFIG)
        payload["obstacle"] = {"kind": "constant", "value": -10.0}
        config = write_config(tmp_path, payload)
        out = tmp_path / "out"
        assert main(["solve", "--config", str(config), "--out", str(out)]) == 0
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["max_k_increment"] == 0.0

    def test_outputs_are_byte_stable(self, tmp_path):
        config = write_config(tmp_path, COUNTEREXAMPLE_CONFIG)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["solve", "--config", str(config), "--out", str(out_a)]) == 0
        assert main(["solve", "--config", str(config), "--out", str(out_b)]) == 0
        assert (out_a / "solution.csv").read_bytes() == (out_b / "solution.csv").read_bytes()
        assert (out_a / "diagnostics.json").read_bytes() == (out_b / "diagnostics.json").read_bytes()

    def test_zero_steps_is_a_config_error(self, tmp_path):
        payload = dict(COUNTEREXAMPLE_CONFIG)
        payload["tree"] = {"horizon": 1.0, "steps": 0, "mode": "recombining"}
        config = write_config(tmp_path, payload)
        assert main(["solve", "--config", str(config), "--out", str(tmp_path / "o")]) == 2

    def test_solver_failures_exit_three(self, tmp_path):
        payload = dict(COUNTEREXAMPLE_CONFIG)
        payload["tree"] = {"horizon": 4.0, "steps": 2, "mode": "recombining"}
        payload["generator"] = {"expr": "(* 0.6 y)", "lipschitz": 0.6}
        payload["terminal"] = {"kind": "constant", "value": 5.0}
        payload["obstacle"] = {"kind": "constant", "value": -50.0}
        config = write_config(tmp_path, payload)
        assert main(["solve", "--config", str(config), "--out", str(tmp_path / "o")]) == 3

    def test_malformed_json_exits_two(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert main(["solve", "--config", str(path), "--out", str(tmp_path / "o")]) == 2


class TestVerifyCommand:
    def test_oracle_suite_passes(self, tmp_path):
        config = write_config(tmp_path, {"seed": 5})
        out = tmp_path / "out"
        code = main(
            [
                "verify",
                "--config",
                str(config),
                "--out",
                str(out),
                "--suite",
                "oracle-equivalence",
                "--seed",
                "5",
            ]
        )
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["all_passed"]
        assert report["suite"] == "oracle-equivalence"
        assert all(check["passed"] for check in report["checks"])

    def test_suite_from_config_block(self, tmp_path):
        config = write_config(
            tmp_path, {"suite": {"name": "masked-drivers", "instances": 5}, "seed": 3}
        )
        out = tmp_path / "out"
        assert main(["verify", "--config", str(config), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["all_passed"]

    def test_unknown_suite_is_a_config_error(self, tmp_path):
        config = write_config(tmp_path, {"seed": 3})
        code = main(
            [
                "verify",
                "--config",
                str(config),
                "--out",
                str(tmp_path / "o"),
                "--suite",
                "nope",
            ]
        )
        assert code == 2


class TestPriceCommand:
    def market_config(self):
        return {
            "tree": {"horizon": 1.0, "steps": 64, "mode": "recombining"},
            "market": {
                "spot": 100.0,
                "drift": 0.08,
                "volatility": 0.2,
                "rate": 0.02,
                "kind": "call",
                "strikes": [80.0, 90.0, 100.0, 110.0, 120.0],
            },
        }

    def test_prices_decrease_in_strike(self, tmp_path):
        config = write_config(tmp_path, self.market_config())
        out = tmp_path / "out"
        assert main(["price", "--config", str(config), "--out", str(out)]) == 0
        rows = read_rows(out / "prices.csv")
        prices = [float(r["price"]) for r in rows]
        assert [float(r["strike"]) for r in rows] == [80.0, 90.0, 100.0, 110.0, 120.0]
        assert all(a > b for a, b in zip(prices, prices[1:]))

    def test_missing_market_block_exits_two(self, tmp_path):
        payload = self.market_config()
        del payload["market"]
        config = write_config(tmp_path, payload)
        assert main(["price", "--config", str(config), "--out", str(tmp_path / "o")]) == 2


class TestRecoverCommand:
    def test_round_trip_recovery(self, tmp_path):
        market = {
            "tree": {"horizon": 1.0, "steps": 32, "mode": "recombining"},
            "market": {
                "spot": 100.0,
                "drift": 0.08,
                "volatility": 0.2,
                "rate": 0.02,
                "kind": "call",
                "strikes": [90.0, 100.0, 110.0],
            },
        }
        config = write_config(tmp_path, market)
        priced = tmp_path / "priced"
        assert main(["price", "--config", str(config), "--out", str(priced)]) == 0
        observed = tmp_path / "observed.csv"
        rows = read_rows(priced / "prices.csv")
        observed.write_text(
            "strike,price\n"
            + "\n".join(f"{r['strike']},{r['price']}" for r in rows)
            + "\n"
        )
        payload = dict(market)
        payload["recover"] = {"observed": "observed.csv"}
        recover_config = write_config(tmp_path, payload, name="recover.json")
        out = tmp_path / "theta"
        assert main(["recover", "--config", str(recover_config), "--out", str(out)]) == 0
        result = json.loads((out / "theta.json").read_text())
        assert abs(result["theta_hat"] - 0.3) <= 1e-6
        assert result["objective"] <= 1e-12
        assert result["iterations"] > 0

    def test_missing_observed_file_exits_two(self, tmp_path):
        payload = {
            "tree": {"horizon": 1.0, "steps": 8, "mode": "recombining"},
            "market": {
                "spot": 100.0,
                "drift": 0.08,
                "volatility": 0.2,
                "rate": 0.02,
                "kind": "call",
                "strikes": [100.0],
            },
            "recover": {"observed": "missing.csv"},
        }
        config = write_config(tmp_path, payload)
        assert main(["recover", "--config", str(config), "--out", str(tmp_path / "o")]) == 2

    def test_bad_header_exits_two(self, tmp_path):
        payload = {
            "tree": {"horizon": 1.0, "steps": 8, "mode": "recombining"},
            "market": {
                "spot": 100.0,
                "drift": 0.08,
                "volatility": 0.2,
                "rate": 0.02,
                "kind": "call",
                "strikes": [100.0],
            },
            "recover": {"observed": "obs.csv"},
        }
        (tmp_path / "obs.csv").write_text("k,p\n100,5\n")
        config = write_config(tmp_path, payload)
        assert main(["recover", "--config", str(config), "--out", str(tmp_path / "o")]) == 2


class TestConfigRoundTrip:
    @pytest.mark.parametrize(
        "payload",
        [
            COUNTEREXAMPLE_CONFIG,
            {
                "tree": {"horizon": 2.0, "steps": 8, "mode": "full-binary"},
                "generator": {
                    "expr": "(min (* 2.0 (npart (+ y -1.0))) (abs z))",
                    "lipschitz": 2.0,
                    "claims": {"constant_preserving": True},
                },
                "terminal": {"kind": "state", "expr": "(abs b)"},
                "obstacle": {"kind": "state", "expr": "(+ (npart b) -3.0)", "bound": 5.0},
                "seed": 42,
            },
            {
                "market": {
                    "spot": 100.0,
                    "drift": 0.08,
                    "volatility": 0.2,
                    "rate": 0.02,
                    "kind": "put",
                    "strikes": [90.0, 100.0],
                },
                "suite": {"name": "comparison", "instances": 10},
                "seed": 7,
            },
        ],
    )
    def test_emit_parse_is_idempotent(self, payload):
        first = RunConfig.parse(json.dumps(payload)).to_canonical()
        second = RunConfig.parse(first).to_canonical()
        assert first == second

    def test_unknown_fields_rejected(self):
        with pytest.raises(Exception):
            RunConfig.parse(json.dumps({"tre": {}}))

    def test_nonfinite_numbers_rejected(self):
        payload = dict(COUNTEREXAMPLE_CONFIG)
        payload["terminal"] = {"kind": "constant", "value": float("inf")}
        with pytest.raises(Exception):
            RunConfig.parse(json.dumps(payload))
