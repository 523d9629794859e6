import csv
import io
import json
import subprocess
import sys

import pytest
import tomli_w
from hypothesis import given, settings
from hypothesis import strategies as st

from stochdbp.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, bundled_config, main
from stochdbp.config import (
    ConfigError,
    default_config,
    dumps_config,
    format_quantity,
    load_config,
    loads_config,
    parse_quantity,
)
from stochdbp.experiment import CSV_COLUMNS, DetectorSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def tiny_config(tmp_path, **experiment):
    """Bundled file shrunk to a run of about a second."""
    doc = tomllib.loads(bundled_config().read_text())
    doc["link"]["spans"] = 2
    doc["experiment"].update(
        symbols_per_block=64, blocks=1, powers=["6 dBm"], particles=16, **experiment
    )
    doc["engine"]["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "tiny.cfg"
    path.write_text(tomli_w.dumps(doc))
    return path


class TestQuantities:
    @pytest.mark.parametrize(
        "text,kind,value",
        [
            ("80 km", "length", 80.0),
            ("500 m", "length", 0.5),
            ("14 GBd", "rate", 14e9),
            ("28000 MBd", "rate", 28e9),
            ("-3.5 dBm", "dbm", -3.5),
            ("1.3 1/(W km)", "gamma", 1.3),
            ("16 ps/(nm km)", "dispersion", 16.0),
            ("2e-1 dB/km", "attenuation", 0.2),
        ],
    )
    def test_parse(self, text, kind, value):
        assert parse_quantity(text, kind, "k") == pytest.approx(value, rel=1e-15)

    @pytest.mark.parametrize(
        "text,kind",
        [("80", "length"), ("80 miles", "length"), (80.0, "length"), ("14 GHz", "rate"), ("x dB", "db")],
    )
    def test_reject(self, text, kind):
        with pytest.raises(ConfigError) as info:
            parse_quantity(text, kind, "link.thing")
        assert info.value.key == "link.thing"
        assert str(info.value).startswith("link.thing: ")

    @settings(max_examples=100)
    @given(
        value=st.floats(-1e6, 1e6, allow_nan=False),
        kind=st.sampled_from(["length", "rate", "dbm", "db", "gamma"]),
    )
    def test_format_round_trip(self, value, kind):
        assert parse_quantity(format_quantity(value, kind), kind, "k") == value


class TestConfig:
    def test_defaults(self):
        cfg = default_config()
        assert cfg.link.spans == 50
        assert cfg.experiment.detectors == (
            DetectorSpec("dbp"),
            DetectorSpec("sbs"),
            DetectorSpec("dd", 1),
            DetectorSpec("va", 1),
        )

    def test_bundled(self):
        cfg = load_config(bundled_config())
        assert cfg.link.spans == 10
        assert cfg.link.dispersion_managed
        assert cfg.link.symbol_rate == 14e9
        assert cfg.experiment.powers == (6.0, 8.0, 10.0, 11.0)
        assert cfg.experiment.master_seed == 2024

    def test_round_trip_bundled(self):
        cfg = load_config(bundled_config())
        text = dumps_config(cfg)
        assert loads_config(text) == cfg
        assert dumps_config(loads_config(text)) == text

    @settings(max_examples=40, deadline=None)
    @given(
        spans=st.integers(1, 100),
        length=st.floats(20, 200),  # DM links need at least 4 dB of SMF loss
        rate=st.floats(1e9, 1e11),
        dcm=st.booleans(),
        powers=st.lists(st.floats(-10, 15), min_size=1, max_size=4, unique=True),
        seed=st.integers(0, 2**64 - 1),
        mem=st.integers(0, 3),
    )
    def test_round_trip_property(self, spans, length, rate, dcm, powers, seed, mem):
        doc = {
            "link": {
                "spans": spans,
                "span_length": format_quantity(length, "length"),
                "symbol_rate": format_quantity(rate, "rate"),
                "dcm": dcm,
            },
            "experiment": {
                "powers": [format_quantity(p, "dbm") for p in powers],
                "detectors": ["dbp", f"va:{mem}"],
                "master_seed": seed,
            },
        }
        cfg = loads_config(tomli_w.dumps(doc))
        assert cfg.link.smf.length == length
        assert cfg.experiment.powers == tuple(powers)
        again = loads_config(dumps_config(cfg))
        assert again == cfg

    def test_span_count_message(self):
        with pytest.raises(ConfigError) as info:
            loads_config("[link]\nspans = -3\n")
        assert str(info.value) == "link.spans: must be >= 1, got -3"

    @pytest.mark.parametrize(
        "text,key",
        [
            ("[link]\nspan_lenght = '80 km'\n", "link.span_lenght"),
            ("[linky]\n", "linky"),
            ("[link]\nspan_length = '80 furlongs'\n", "link.span_length"),
            ("[link]\nspan_length = 80\n", "link.span_length"),
            ("[experiment]\npowers = ['1 dBm', '2 W']\n", "experiment.powers[1]"),
            ("[experiment]\ndetectors = ['mlse']\n", "experiment.detectors[0]"),
            ("[experiment]\nblocks = 0\n", "experiment.blocks"),
            ("[pulse]\nrolloff = 1.5\n", "pulse.rolloff"),
            ("[engine]\nworkers = 'two'\n", "engine.workers"),
            ("[link\n", "<file>"),
        ],
    )
    def test_errors_name_the_key(self, text, key):
        with pytest.raises(ConfigError) as info:
            loads_config(text)
        assert info.value.key == key

    def test_overrides(self):
        cfg = default_config().with_overrides(seed=7, workers=3, output_dir="x")
        assert (cfg.experiment.master_seed, cfg.workers, cfg.output_dir) == (7, 3, "x")
        with pytest.raises(ConfigError):
            default_config().with_overrides(seed=-1)
        with pytest.raises(ConfigError):
            default_config().with_overrides(workers=0)


class TestCli:
    def test_dry_run_has_no_side_effects(self, tmp_path, capsys):
        path = tiny_config(tmp_path)
        assert main(["sweep", "--config", str(path), "--dry-run"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "# resolved configuration" in out
        assert "EDFA1 gain: 12.0000 dB" in out
        assert "EDFA2 gain: 7.0000 dB" in out
        assert "SSFM segments" in out
        assert not (tmp_path / "out").exists()
        # the printed configuration is itself a loadable file
        body = out.split("# derived")[0]
        assert loads_config(body) == load_config(path)

    def test_simulate_golden_header(self, tmp_path, capsys):
        path = tiny_config(tmp_path)
        code = main(["simulate", "--config", str(path), "-q"])
        assert code == EXIT_OK
        out_dir = tmp_path / "out"
        rows = list(csv.reader(io.StringIO((out_dir / "ser.csv").read_text())))
        assert rows[0] == list(CSV_COLUMNS)
        assert [r[0] for r in rows[1:]] == ["dbp", "dd", "sbs", "va"]
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["master_seed"] == 2024
        assert set(summary["gains"]) == {"sbs", "dd(L=1)", "va(L=1)"}
        assert not (out_dir / "blocks.jsonl").exists()
        assert "G_va(L=1)" in capsys.readouterr().out

    def test_simulate_restrictions(self, tmp_path, capsys):
        path = tiny_config(tmp_path)
        code = main(
            ["simulate", "--config", str(path), "-q", "--power", "4", "--detector", "va:1", "--seed", "5"]
        )
        assert code == EXIT_OK
        rows = (tmp_path / "out" / "ser.csv").read_text().splitlines()
        assert rows[1].startswith("va,1,4,64,")

    def test_sweep_journal_and_resume(self, tmp_path, capsys):
        path = tiny_config(tmp_path, detectors=["dbp"])
        assert main(["sweep", "--config", str(path), "-q"]) == EXIT_OK
        first = (tmp_path / "out" / "ser.csv").read_text()
        journal = tmp_path / "out" / "blocks.jsonl"
        assert len(journal.read_text().splitlines()) == 2
        assert main(["sweep", "--config", str(path), "-q"]) == EXIT_OK
        assert (tmp_path / "out" / "ser.csv").read_text() == first
        assert len(journal.read_text().splitlines()) == 2

    def test_seed_changes_fingerprint(self, tmp_path, capsys):
        path = tiny_config(tmp_path, detectors=["dbp"])
        assert main(["sweep", "--config", str(path), "-q"]) == EXIT_OK
        assert main(["sweep", "--config", str(path), "-q", "--seed", "1"]) == EXIT_FAILURE
        assert "different experiment" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "args",
        [
            ["sweep", "--config", "/nonexistent.cfg"],
            ["sweep", "--workers", "0"],
            ["simulate", "--seed", "-4"],
        ],
    )
    def test_config_errors_exit_2(self, args, capsys):
        if "--config" not in args:
            args = args + ["--config", str(bundled_config()), "--dry-run"]
        assert main(args) == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("[link]\nspans = -3\n")
        assert main(["sweep", "--config", str(path)]) == EXIT_CONFIG
        assert "link.spans: must be >= 1, got -3" in capsys.readouterr().err

    def test_runtime_failure_exits_1(self, tmp_path, capsys):
        path = tiny_config(tmp_path, constellation="16qam", detectors=["va:3"])
        assert main(["simulate", "--config", str(path), "-q"]) == EXIT_FAILURE
        assert "StateBudgetExceeded" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 2

    def test_validate_subset(self, capsys):
        assert main(["validate", "--check", "cd_unitarity", "--check", "kerr_power"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "cd_unitarity" in out and "kerr_power" in out

    def test_bench(self, tmp_path, capsys):
        code = main(["bench", "--particles", "2", "--symbols", "64", "--repeat", "1"])
        assert code == EXIT_OK
        assert capsys.readouterr().out.strip()

    def test_module_entry_point(self):
        proc = subprocess.run(
            [sys.executable, "-m", "stochdbp.cli", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        for cmd in ("simulate", "sweep", "validate", "bench"):
            assert cmd in proc.stdout
