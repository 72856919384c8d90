"""
Unit Tests for the Command Line Interface
Run with: pytest tests/test_cli.py
"""

import csv
import io
import json
import sys

import numpy as np
import pytest
from loguru import logger
from sqlalchemy.orm import sessionmaker

import cli.commands as commands
import database.database as database_module
from cli.io import format_float, parse_csv, report_from_json, report_to_csv, to_json
from database.database import init_database, make_engine
from services.coverage_service import ScenarioConfig, run_coverage
from utils.errors import EmptyData, ParseError

SCENARIO = {
    "name": "cli-small",
    "model": "smooth:identity",
    "divergence": "reverse-kl",
    "data_law": "standard-normal",
    "n": 10,
    "nominal_levels": [0.8, 0.9],
    "methods": ["el"],
    "reps": 100,
    "base_seed": 11,
    "truth": 0.0,
}


@pytest.fixture(autouse=True)
def restore_logging():
    """main() replaces loguru sinks; put back a plain one afterwards"""
    yield
    logger.remove()
    logger.add(sys.__stderr__, level="WARNING")


@pytest.fixture
def write(tmp_path):
    """Write text to a file under tmp_path and return its path"""

    def _write(name, text, encoding="utf-8"):
        path = tmp_path / name
        path.write_bytes(text.encode(encoding))
        return path

    return _write


@pytest.fixture
def data_csv(write):
    """Thirty gamma draws with a header"""
    values = np.random.default_rng(61).gamma(2.0, 1.0, 30)
    return write("data.csv", "x\n" + "\n".join(repr(float(v)) for v in values) + "\n")


class TestParseCsv:
    """Sample ingestion"""

    def test_basic(self, write):
        """Three data rows, two columns"""
        sample = parse_csv(write("a.csv", "x,y\n1,2\n3,4.5\n-1e-3,6\n"))
        assert (sample.n, sample.d) == (3, 2)
        np.testing.assert_array_equal(sample.rows[:, 1], [2.0, 4.5, 6.0])

    def test_bad_cell_position(self, write):
        """The first bad cell is reported by 1-based data row and column"""
        with pytest.raises(ParseError) as info:
            parse_csv(write("b.csv", "x,y\n1,2\n3,4\n5,6\n7,8\n9,abc\n"))
        assert (info.value.row, info.value.column) == (5, 2)

    def test_short_row(self, write):
        """A missing value points at the first absent column"""
        with pytest.raises(ParseError) as info:
            parse_csv(write("c.csv", "x,y\n1,2\n3\n"))
        assert (info.value.row, info.value.column) == (2, 2)

    @pytest.mark.parametrize("cell", ["nan", "inf", "1,5", "1_000", "0x10", ""])
    def test_rejected_numbers(self, write, cell):
        """Only plain decimal or exponent notation is accepted"""
        text = io.StringIO()
        csv.writer(text, lineterminator="\n").writerows([["x"], ["1"], [cell]])
        with pytest.raises(ParseError):
            parse_csv(write("d.csv", text.getvalue()))

    def test_empty_inputs(self, write):
        """No header or no data rows"""
        with pytest.raises(EmptyData):
            parse_csv(write("e.csv", ""))
        with pytest.raises(EmptyData):
            parse_csv(write("f.csv", "x,y\n"))

    def test_crlf_bom_and_blank_lines(self, write):
        """CRLF endings, a UTF-8 BOM and blank lines are tolerated"""
        sample = parse_csv(write("g.csv", "x,y\r\n1,2\r\n\r\n3,4\r\n", encoding="utf-8-sig"))
        assert (sample.n, sample.d) == (2, 2)


class TestFormatting:
    """Number and report output"""

    def test_format_float(self):
        """17 significant digits parse back exactly"""
        for value in (0.1, 1 / 3, 2.0**-40, 123456.789):
            assert float(format_float(value)) == value
        assert format_float(0.1) == "0.10000000000000001"

    def test_report_round_trip_and_csv(self):
        """JSON reproduces the report and CSV has one row per cell"""
        report = run_coverage(ScenarioConfig(**SCENARIO), workers=1)
        assert report_from_json(to_json(report)) == report
        rows = list(csv.reader(io.StringIO(report_to_csv(report))))
        assert rows[0] == ["method", "level", "coverage", "half_width", "mean_width", "failures"]
        assert [row[:2] for row in rows[1:]] == [["el", "0.80000000000000004"], ["el", "0.90000000000000002"]]


class TestCommands:
    """Subcommands and exit codes"""

    def test_check_divergence(self, capsys):
        """Derivative triple and correctability as JSON"""
        assert commands.main(["check-divergence", "reverse-kl"]) == 0
        verdict = json.loads(capsys.readouterr().out)
        assert verdict == {"d2": 1.0, "d3": -2.0, "d4": 6.0, "bartlett_correctable": True}

    def test_check_divergence_lambda(self, capsys):
        """--lambda selects the Cressie-Read power"""
        assert commands.main(["check-divergence", "cressie-read", "--lambda", "2"]) == 0
        verdict = json.loads(capsys.readouterr().out)
        assert verdict["d3"] == pytest.approx(1.0)
        assert verdict["bartlett_correctable"] is False

    def test_degenerate_parameter_exit_code(self, capsys):
        """λ = 0 is a usage error"""
        assert commands.main(["check-divergence", "cressie-read:0"]) == 2
        assert "DegenerateCressieReadParameter" in capsys.readouterr().err

    def test_usage_errors(self, capsys):
        """Unknown subcommands exit 2, --help exits 0"""
        assert commands.main(["frobnicate"]) == 2
        assert commands.main(["--help"]) == 0

    def test_ci(self, data_csv, capsys):
        """Exact interval for the mean under chi2"""
        code = commands.main(
            ["ci", "--data", str(data_csv), "--model", "smooth:identity", "--divergence", "chi2",
             "--level", "0.95", "--method", "el"]
        )
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["lower"] < result["psi_hat"] < result["upper"]
        assert result["q_used"] == pytest.approx(2 * 3.841458820694124)
        assert result["provenance"] == "chi-square"

    def test_ci_oracle_methods(self, data_csv, write, capsys):
        """tb needs --oracle-data and then uses oracle moments"""
        args = ["ci", "--data", str(data_csv), "--model", "smooth:identity", "--divergence", "reverse-kl",
                "--level", "0.9", "--method", "tb"]
        assert commands.main(args) == 2
        capsys.readouterr()

        oracle_values = np.random.default_rng(62).gamma(2.0, 1.0, 2000)
        oracle = write("oracle.csv", "x\n" + "\n".join(repr(float(v)) for v in oracle_values) + "\n")
        assert commands.main(args + ["--oracle-data", str(oracle)]) == 0
        assert json.loads(capsys.readouterr().out)["provenance"] == "oracle moments"

    def test_solve(self, data_csv, capsys):
        """One direction with multipliers and residuals"""
        code = commands.main(
            ["solve", "--data", str(data_csv), "--model", "vstat:gamma-kernel", "--divergence", "reverse-kl",
             "--q", "2.7", "--direction", "max"]
        )
        assert code == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["alpha_tilde"] > 0
        assert summary["residuals"]["mean"] <= 1e-12

    def test_bad_data(self, write, tmp_path, capsys):
        """Parse failures and missing files exit 2"""
        bad = write("bad.csv", "x\n1\nfoo\n")
        base = ["--model", "smooth:identity", "--divergence", "kl", "--q", "1", "--direction", "max"]
        assert commands.main(["solve", "--data", str(bad)] + base) == 2
        assert "ParseError" in capsys.readouterr().err
        assert commands.main(["solve", "--data", str(tmp_path / "none.csv")] + base) == 2

    def test_degenerate_sample_exit_code(self, write, capsys):
        """A constant sample is a computation error"""
        constant = write("const.csv", "x\n1\n1\n1\n1\n")
        code = commands.main(
            ["solve", "--data", str(constant), "--model", "smooth:identity", "--divergence", "kl",
             "--q", "1", "--direction", "max"]
        )
        assert code == 1
        assert "DegenerateVariance" in capsys.readouterr().err

    def test_coverage_csv(self, write, capsys):
        """Coverage report as CSV on stdout"""
        config = write("scenario.json", json.dumps(SCENARIO))
        assert commands.main(["coverage", "--config", str(config), "--out", "csv", "--workers", "1"]) == 0
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 3

    def test_coverage_bad_override(self, write):
        """Overrides are validated like the file"""
        config = write("scenario.json", json.dumps(SCENARIO))
        assert commands.main(["coverage", "--config", str(config), "--reps", "50"]) == 2

    def test_store_and_list(self, write, tmp_path, monkeypatch, capsys):
        """--store saves the report and runs reads it back"""
        engine = make_engine("sqlite://")
        monkeypatch.setattr(database_module, "SessionLocal", sessionmaker(bind=engine))
        monkeypatch.setattr(commands, "init_database", lambda: init_database(engine))

        config = write("scenario.json", json.dumps(SCENARIO))
        output = tmp_path / "report.json"
        code = commands.main(
            ["coverage", "--config", str(config), "--workers", "1", "--store", "--output", str(output)]
        )
        assert code == 0
        assert report_from_json(output.read_text(encoding="utf-8")).scenario.name == "cli-small"
        capsys.readouterr()

        assert commands.main(["runs"]) == 0
        listing = json.loads(capsys.readouterr().out)
        assert [run["scenario"] for run in listing] == ["cli-small"]

        assert commands.main(["runs", "--id", str(listing[0]["id"])]) == 0
        assert json.loads(capsys.readouterr().out)["scenario"]["base_seed"] == 11
        assert commands.main(["runs", "--id", "999"]) == 2


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
