# Copyright 2026 The Heralded Photons Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# =============================================================================

from pathlib import Path
from typing import List
import json
import logging

import pytest

from heralded_photons.lib import analytic_oracle as oracle
from heralded_photons.lib import cli
from heralded_photons.lib.estimators import FIGURE_LABELS
from heralded_photons.lib.photon_statistics import TwinBeamState
from heralded_photons.lib.pulse_simulator import COUNT_KEYS
from heralded_photons.lib.summary import SUMMARY_FILE, hash_dir

SIM_ARGS = ["--pulses", "150000", "--mean", "0.05", "--seed", "17", "--workers", "1"]


def exit_code(argv: List[str]) -> object:
    with pytest.raises(SystemExit) as excinfo:
        cli.main(argv)
    return excinfo.value.code


def test_parse_grid() -> None:
    assert cli.parse_grid("0.1, 0.2,0.3") == [0.1, 0.2, 0.3]
    assert cli.parse_grid("1e-4:1e-2:3") == pytest.approx([1e-4, 1e-3, 1e-2])
    for bad in ["", ",", "0:1:3", "1:2:0", "a,b"]:
        with pytest.raises(ValueError):
            cli.parse_grid(bad)


def test_theory_to_stdout(capsys: pytest.CaptureFixture[str]) -> None:
    cli.main(["theory", "--mean", "0.01"])
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(cli.THEORY_COLUMNS)
    assert len(lines) == 2
    row = lines[1].split(",")
    assert float(row[0]) == 0.01
    assert all(row)
    model = oracle.ExperimentModel(TwinBeamState(0.01))
    single_click = float(row[cli.THEORY_COLUMNS.index("single_click_exact")])
    assert single_click == pytest.approx(
        oracle.heralded_single_click_theory(model), rel=1e-10
    )


def test_theory_of_the_vacuum(capsys: pytest.CaptureFixture[str]) -> None:
    cli.main(["theory", "--mean", "0"])
    lines = capsys.readouterr().out.splitlines()
    assert lines[1] == "0" + "," * (len(cli.THEORY_COLUMNS) - 1)


def test_theory_grid_to_file(tmp_path: Path) -> None:
    out = tmp_path / "theory"
    cli.main(["theory", "--car-grid", "10,100", "--out", str(out), "--format", "tsv"])
    lines = (out / "theory.tsv").read_text().splitlines()
    assert lines[0] == "\t".join(cli.THEORY_COLUMNS)
    cars = [float(line.split("\t")[1]) for line in lines[1:]]
    assert cars == pytest.approx([10.0, 100.0], rel=1e-6)
    summary = json.loads((out / SUMMARY_FILE).read_text())
    assert summary["subcommand"] == "theory"
    assert summary["results"] == hash_dir(str(out), exclude={SUMMARY_FILE})


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["calibrate"],
        ["theory", "--bogus"],
        ["theory", "--format", "xml"],
        ["theory", "--eta-idler", "1.5"],
        ["theory", "--car-grid", "0.5"],
        ["theory", "--car-grid", "1e12"],
        ["theory", "--dark", "0.01", "--car-grid", "1e6"],
        ["reproduce", "--out", "unused", "--car-grid", "1e12"],
        ["theory", "--grid", "1:2:x"],
        ["simulate", "--pulses", "10"],
        ["simulate", "--pulses", "0", "--out", "unused"],
        ["sweep", "--out", "unused"],
        ["tags"],
    ],
)
def test_usage_errors(argv: List[str]) -> None:
    assert exit_code(argv) == 2


def test_tag_input_errors(tmp_path: Path) -> None:
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert exit_code(["tags", "--input", str(empty)]) == 1

    garbage = tmp_path / "garbage.txt"
    garbage.write_text("1,abc\n")
    assert exit_code(["tags", "--input", str(garbage)]) == 1

    assert exit_code(["tags", "--input", str(tmp_path / "missing.txt")]) == 1


def test_simulate_is_reproducible(
    tmp_path: Path, monkeypatch: pytest.MonkeyPatch
) -> None:
    cli.main(["simulate", *SIM_ARGS, "--out", str(tmp_path / "a")])
    cli.main(["simulate", *SIM_ARGS, "--out", str(tmp_path / "b")])
    monkeypatch.setenv("HPL_THREADS", "3")
    cli.main(["simulate", *SIM_ARGS, "--out", str(tmp_path / "c")])

    for name in ["counts.csv", "figures.csv"]:
        first = (tmp_path / "a" / name).read_bytes()
        assert first == (tmp_path / "b" / name).read_bytes()
        assert first == (tmp_path / "c" / name).read_bytes()

    counts = (tmp_path / "a" / "counts.csv").read_text().splitlines()
    assert counts[0] == "key,value"
    assert [line.split(",")[0] for line in counts[1:]] == list(COUNT_KEYS)
    assert counts[1] == "pulses,150000"

    figures = (tmp_path / "a" / "figures.csv").read_text().splitlines()
    assert figures[0] == "method_tag,value,std_err"
    assert [line.split(",")[0] for line in figures[1:]] == FIGURE_LABELS

    summary = json.loads((tmp_path / "c" / SUMMARY_FILE).read_text())
    assert summary["seed"] == 17
    assert summary["workers"] == 3
    assert summary["counts"]["run"]["pulses"] == 150000
    assert set(summary["results"]) == {"counts.csv", "figures.csv"}


def test_tag_stream_round_trip(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    stream = str(tmp_path / "run.tags")
    sim_out = ["--out", str(tmp_path / "sim"), "--tags-out", stream]
    cli.main(["simulate", *SIM_ARGS, *sim_out])
    cli.main(["tags", "--input", stream, "--out", str(tmp_path / "tags")])
    clock = ["--out", str(tmp_path / "clock"), "--fixed-clock"]
    cli.main(["tags", "--input", stream, *clock])

    for name in ["counts.csv", "figures.csv"]:
        simulated = (tmp_path / "sim" / name).read_bytes()
        assert simulated == (tmp_path / "tags" / name).read_bytes()
        assert simulated == (tmp_path / "clock" / name).read_bytes()

    capsys.readouterr()
    cli.main(["tags", "--input", stream])
    printed = capsys.readouterr().out
    assert printed == (tmp_path / "sim" / "figures.csv").read_text()


def test_unknown_tag_channels(tmp_path: Path) -> None:
    stream = tmp_path / "extra.tags"
    stream.write_text("0,24390\n1,24400\n9,24410\n")
    assert exit_code(["tags", "--input", str(stream)]) == 1
    out = str(tmp_path / "out")
    cli.main(["tags", "--input", str(stream), "--skip-unknown", "--out", out])
    counts = (tmp_path / "out" / "counts.csv").read_text().splitlines()
    assert "s_i,1" in counts


def test_sweep(tmp_path: Path) -> None:
    argv = ["sweep", "--grid", "0.01,0.05", "--pulses", "20000", "--seed", "3"]
    cli.main([*argv, "--workers", "1", "--out", str(tmp_path / "serial")])
    cli.main([*argv, "--workers", "2", "--out", str(tmp_path / "pool")])

    serial = (tmp_path / "serial" / "sweep.csv").read_text()
    assert serial == (tmp_path / "pool" / "sweep.csv").read_text()
    lines = serial.splitlines()
    header = lines[0].split(",")
    assert header[:2] == ["mean_total", "seed"]
    assert "car_err" in header and "parity" in header
    assert len(lines) == 3
    assert [line.split(",")[1] for line in lines[1:]] == ["3", "4"]


def test_reproduce(tmp_path: Path) -> None:
    out = tmp_path / "figures"
    grids = ["--grid", "1e-3,1e-2", "--car-grid", "10,97.14"]
    cli.main(["reproduce", *grids, "--out", str(out)])
    headers = {
        name: (out / f"{name}.csv").read_text().splitlines()[0]
        for name in ["fig2a", "fig2b", "fig3", "fig4", "fig5"]
    }
    assert headers["fig2a"] == "mean_total,car"
    assert headers["fig4"] == (
        "car,mean_total,g2h,g2h_eta_idler_0.01,g2h_eta_idler_1,g2h_modes_2"
    )
    assert headers["fig5"].startswith("car,mean_total,mean_n_exact,parity_exact")

    fig4 = (out / "fig4.csv").read_text().splitlines()[2].split(",")
    g2h, g2h_low_eta, g2h_high_eta = (float(v) for v in fig4[2:5])
    assert g2h_high_eta < g2h < g2h_low_eta

    fig2b = (out / "fig2b.csv").read_text().splitlines()
    assert len(fig2b) == 3
    assert fig2b[1].split(",")[-2:] == ["0.378", "0.321"]


def test_config_file(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    config = tmp_path / "hpl.conf"
    config.write_text("mean = 0.02  # per pulse\nmodes = 2\n")

    cli.main(["theory", "--config", str(config)])
    assert capsys.readouterr().out.splitlines()[1].startswith("0.02,")
    cli.main(["theory", "--config", str(config), "--mean", "0.03"])
    assert capsys.readouterr().out.splitlines()[1].startswith("0.03,")

    parser = cli.build_parser()
    args = parser.parse_args(["theory", "--config", str(config)])
    resolved = cli.resolve_config(args, parser)
    assert (resolved.mean, resolved.modes, resolved.pulses) == (0.02, 2, 1_000_000)


def test_config_file_errors(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    assert exit_code(["theory", "--config", str(tmp_path / "missing.conf")]) == 1

    sectioned = tmp_path / "sectioned.conf"
    sectioned.write_text("mean = 0.02\n[extra]\nmodes = 2\n")
    assert exit_code(["theory", "--config", str(sectioned)]) == 1

    bad_value = tmp_path / "bad.conf"
    bad_value.write_text("pulses = many\n")
    assert exit_code(["theory", "--config", str(bad_value)]) == 1

    unknown = tmp_path / "unknown.conf"
    unknown.write_text("mean = 0.02\ncolour = blue\n")
    with caplog.at_level(logging.WARNING):
        assert cli.read_config_file(str(unknown)) == {"mean": 0.02}
    assert "colour" in caplog.text


def test_worker_count(monkeypatch: pytest.MonkeyPatch) -> None:
    parser = cli.build_parser()

    monkeypatch.delenv("HPL_THREADS", raising=False)
    args = parser.parse_args(["theory", "--workers", "2"])
    assert cli.resolve_config(args, parser).workers == 2

    monkeypatch.setenv("HPL_THREADS", "5")
    assert cli.resolve_config(args, parser).workers == 5

    monkeypatch.setenv("HPL_THREADS", "many")
    assert exit_code(["theory"]) == 1


def test_log_file(tmp_path: Path) -> None:
    log_file = tmp_path / "hpl.log"
    cli.main(["theory", "--log-file", str(log_file)])
    assert log_file.exists()
