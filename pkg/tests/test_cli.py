import warnings

import pytest

from photonrx.cli import (
    CSV_FIELDS,
    PRESETS,
    ConfigError,
    emit_plot,
    expand_points,
    main,
    parse_config,
    run_sweep,
)


MINI_CONFIG = """
receiver = pc
mod = ook
k = 1
k = 2
nl = 1,2
power_dbw = -5:5:5
trials = 500
seed = 3
mc = on
"""


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestParseConfig:
    def test_axes_and_scalars(self):
        sections = parse_config(MINI_CONFIG, "mini")
        assert len(sections) == 1
        points = expand_points(sections[0])
        assert len(points) == 2 * 3  # two K values, three powers
        assert [p.k for p in points[:3]] == [1, 1, 1]
        assert points[0].trials == 500

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match=r"cfg:3: unknown key 'nonsense'"):
            parse_config("receiver = pc\n\nnonsense = 1\n", "cfg")

    def test_missing_equals_reports_line(self):
        with pytest.raises(ConfigError, match=r"cfg:2: expected 'key = value'"):
            parse_config("receiver = pc\njust words\n", "cfg")

    def test_bad_power_range(self):
        with pytest.raises(ConfigError, match=r"cfg:1: .*a:b:step"):
            parse_config("power_dbw = 1:2:3:4\n", "cfg")
        with pytest.raises(ConfigError, match="step > 0"):
            parse_config("power_dbw = 5:1:1\n", "cfg")

    def test_empty_axis_value_rejected(self):
        with pytest.raises(ConfigError, match="empty value"):
            parse_config("k =\n", "cfg")

    def test_empty_config_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("# only comments\n", "cfg")

    def test_sections(self):
        text = "receiver = pmt\npower_dbw = 1\n---\nreceiver = apd\npower_dbw = 8\n"
        sections = parse_config(text, "cfg")
        assert len(sections) == 2
        assert sections[0].axes["receiver"] == ["pmt"]
        assert sections[1].axes["receiver"] == ["apd"]

    def test_bad_axis_value_rejected(self):
        sections = parse_config("receiver = laser\n", "cfg")
        with pytest.raises(ConfigError, match="bad axis value"):
            expand_points(sections[0])


class TestRunSweep:
    def test_rows_and_header(self, tmp_path):
        out = tmp_path / "mini.csv"
        code = run_sweep(parse_config(MINI_CONFIG, "mini"), str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == ",".join(CSV_FIELDS)
        assert len(lines) == 1 + 6

    def test_reproducible_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        sections = parse_config(MINI_CONFIG, "mini")
        run_sweep(sections, str(a))
        run_sweep(sections, str(b), workers=3)
        assert read_bytes(a) == read_bytes(b)

    def test_partial_failure_recorded(self, tmp_path, capsys):
        bad = "receiver = pc\nnl = 6,7\nnl = 1,2\npower_dbw = 0\nmc = off\n"
        out = tmp_path / "bad.csv"
        code = run_sweep(parse_config(bad, "bad"), str(out))
        assert code == 3
        rows = out.read_text().splitlines()[1:]
        assert len(rows) == 2
        assert "exceed the supported total" in rows[0]
        assert rows[1].endswith(",")  # second point fine, empty error cell
        assert "point failed" in capsys.readouterr().err

    def test_override_axes(self, tmp_path):
        out = tmp_path / "o.csv"
        sections = parse_config(MINI_CONFIG, "mini")
        run_sweep(sections, str(out), overrides={"k": [4], "trials": 200, "power_dbw": ["0"]})
        rows = out.read_text().splitlines()[1:]
        assert len(rows) == 1
        assert rows[0].split(",")[3] == "4"

    def test_conventional_points_skip_nc_detector(self, tmp_path):
        config = ("receiver = pc\nnl = 1\nnl = 1,2\npower_dbw = 0\n"
                  "trials = 300\ndetectors = lmmse,lmmse_nc,ml\nmc = off\n")
        out = tmp_path / "mix.csv"
        assert run_sweep(parse_config(config, "mix"), str(out)) == 0
        import csv as csv_mod

        rows = list(csv_mod.DictReader(out.open()))
        conventional = next(r for r in rows if r["n"] == "")
        augmented = next(r for r in rows if r["n"] != "")
        assert conventional["error"] == "" and conventional["ber_lmmse_nc"] == ""
        assert conventional["ber_lmmse"] != "" and conventional["ber_ml"] != ""
        assert augmented["ber_lmmse_nc"] != ""


class TestEmitPlot:
    def make_csv(self, tmp_path, config=MINI_CONFIG, **overrides):
        out = tmp_path / "sweep.csv"
        run_sweep(parse_config(config, "cfg"), str(out), overrides=overrides or None)
        return out

    def test_fig1b_series_count(self, tmp_path):
        out = tmp_path / "fig1b.csv"
        run_sweep(parse_config(PRESETS["fig1b"], "fig1b"), str(out))
        labels = emit_plot(str(out), "mse", str(tmp_path / "fig1b.svg"))
        # 4 receiver counts x {augmented, conventional} analytical curves
        assert len(labels) == 8

    def test_single_row_plot(self, tmp_path):
        csv_path = self.make_csv(tmp_path, power_dbw=["0"], k=[1], trials=100)
        labels = emit_plot(str(csv_path), "mse", str(tmp_path / "one.svg"))
        assert labels
        assert (tmp_path / "one.svg").exists()

    def test_unknown_column(self, tmp_path):
        csv_path = self.make_csv(tmp_path)
        with pytest.raises(ConfigError, match="unknown column"):
            emit_plot(str(csv_path), "snr", str(tmp_path / "x.svg"))

    def test_malformed_csv_names_byte_offset(self, tmp_path):
        csv_path = self.make_csv(tmp_path)
        data = csv_path.read_bytes()
        first_break = data.index(b"\n", data.index(b"\n") + 1)
        corrupted = data[:first_break] + b",stray" + data[first_break:]
        bad = tmp_path / "bad.csv"
        bad.write_bytes(corrupted)
        with pytest.raises(ConfigError, match="byte offset"):
            emit_plot(str(bad), "mse", str(tmp_path / "x.svg"))

    def test_non_numeric_cell_names_byte_offset(self, tmp_path):
        csv_path = self.make_csv(tmp_path)
        lines = csv_path.read_text().splitlines(keepends=True)
        cells = lines[1].split(",")
        cells[6] = "oops"
        lines[1] = ",".join(cells)
        bad = tmp_path / "bad.csv"
        bad.write_text("".join(lines))
        with pytest.raises(ConfigError, match="byte offset"):
            emit_plot(str(bad), "mse", str(tmp_path / "x.svg"))

    def test_round_trip_all_presets_warning_free(self, tmp_path):
        spec_for = {"fig1a": "mse", "fig1b": "mse", "fig2a": "mse", "fig2b": "mse",
                    "fig3a": "ber", "fig3b": "ber:x=gain_A"}
        for name, text in PRESETS.items():
            out = tmp_path / f"{name}.csv"
            overrides = {"trials": 300}
            code = run_sweep(parse_config(text, name), str(out), overrides=overrides)
            assert code == 0, name
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                labels = emit_plot(str(out), spec_for[name], str(tmp_path / f"{name}.svg"))
            assert labels, name
            assert not caught, f"warnings for {name}: {[str(w.message) for w in caught]}"


class TestMain:
    def test_sweep_exit_codes(self, tmp_path, capsys):
        conf = tmp_path / "c.conf"
        conf.write_text(MINI_CONFIG)
        out = tmp_path / "out.csv"
        assert main(["sweep", str(conf), "--out", str(out), "--trials", "100"]) == 0
        assert out.exists()
        capsys.readouterr()

    def test_config_error_exit(self, tmp_path, capsys):
        conf = tmp_path / "c.conf"
        conf.write_text("bogus = 1\n")
        assert main(["sweep", str(conf), "--out", str(tmp_path / "x.csv")]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_missing_config_exit(self, tmp_path, capsys):
        assert main(["sweep", str(tmp_path / "nope.conf")]) == 2
        capsys.readouterr()

    def test_partial_failure_exit(self, tmp_path, capsys):
        conf = tmp_path / "c.conf"
        conf.write_text("nl = 6,7\npower_dbw = 0\nmc = off\n")
        assert main(["sweep", str(conf), "--out", str(tmp_path / "x.csv")]) == 3
        capsys.readouterr()

    def test_figure_and_plot_commands(self, tmp_path, capsys):
        base = tmp_path / "fig1b"
        assert main(["figure", "fig1b", "--out", str(base), "--no-plot"]) == 0
        assert main(["plot", str(base) + ".csv", "mse", "--out", str(tmp_path / "p.svg")]) == 0
        assert (tmp_path / "p.svg").exists()
        capsys.readouterr()

    def test_plot_bad_spec_exit(self, tmp_path, capsys):
        base = tmp_path / "fig1b"
        main(["figure", "fig1b", "--out", str(base), "--no-plot"])
        assert main(["plot", str(base) + ".csv", "nope"]) == 2
        capsys.readouterr()
