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

from typing import (
    Any,
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    TextIO,
    Tuple,
)
import argparse
import configparser
import contextlib
import csv
import dataclasses
import logging
import multiprocessing
import os
import sys

import numpy as np

from heralded_photons.lib import analytic_oracle as oracle
from heralded_photons.lib import common
from heralded_photons.lib import estimators
from heralded_photons.lib import summary as summarylib
from heralded_photons.lib.common import (
    DEFAULT_ETA_IDLER,
    DEFAULT_ETA_SIGNAL,
    DEFAULT_REP_RATE,
    HplError,
    TruncationError,
    exit_with_error_msg,
    format_number,
)
from heralded_photons.lib.photon_statistics import TwinBeamState
from heralded_photons.lib.pulse_simulator import (
    COUNT_KEYS,
    CountRecord,
    SimConfig,
    emit_tag_stream,
    run_simulation,
)
from heralded_photons.lib.tagstream import (
    DEFAULT_CHANNEL_MAP,
    GateConfig,
    TagParser,
    TriggerMode,
    gate_and_count,
    write_count_record,
)

FORMATS = {"csv": ",", "tsv": "\t"}

DEFAULT_MEAN_GRID = [float(x) for x in np.logspace(-4, -2, 9)]
DEFAULT_CAR_GRID = [5.0, 10.0, 20.0, 30.0, 50.0, 97.14, 100.0, 200.0, 300.0, 1000.0]
# herald efficiencies bounding the heralded g2 band
BAND_EFFICIENCIES = (0.01, 1.0)
MULTIMODE_COMPARISON = 2

THEORY_COLUMNS = [
    "mean_total",
    "car",
    "g2_unconditional",
    "g2h",
    "mean_n_exact",
    "parity_exact",
    "mean_n_first",
    "mean_n_second",
    "parity_second",
    "single_click_exact",
]
FIGURE_COLUMNS = ["method_tag", "value", "std_err"]

Row = List[Any]


def parse_grid(text: str) -> List[float]:
    """'a,b,c' or log-spaced 'start:stop:count'."""
    text = text.strip()
    if ":" in text:
        start, stop, count = text.split(":")
        if int(count) < 1 or float(start) <= 0.0 or float(stop) <= 0.0:
            raise ValueError(f"invalid log-spaced grid {text!r}")
        grid = np.logspace(np.log10(float(start)), np.log10(float(stop)), int(count))
        return [float(x) for x in grid]
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError("empty grid")
    return values


def _grid_arg(text: str) -> List[float]:
    try:
        return parse_grid(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


CONFIG_KEYS: Dict[str, Callable[[str], Any]] = {
    "seed": int,
    "pulses": int,
    "mean": float,
    "modes": int,
    "eta_idler": float,
    "eta_signal": float,
    "split": float,
    "dark": float,
    "gate_ps": int,
    "rep_hz": float,
    "n_max": int,
    "grid": parse_grid,
    "car_grid": parse_grid,
    "format": str,
    "workers": int,
}
_SECTION = "hpl"


def read_config_file(filename: str) -> Dict[str, Any]:
    """Flat `key = value` file; returns only the keys it sets."""
    conf = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(filename) as f:
            conf.read_string(f"[{_SECTION}]\n" + f.read(), source=filename)
    except FileNotFoundError:
        exit_with_error_msg(f"Configuration file {filename!r} does not exist.")
    except configparser.Error as e:
        exit_with_error_msg(f"{filename}: config error: {e}")

    values: Dict[str, Any] = {}
    for option, parse in CONFIG_KEYS.items():
        raw = conf.get(_SECTION, option, fallback=None)
        if raw is None:
            continue
        try:
            values[option] = parse(raw)
        except ValueError:
            logging.exception(f"{filename}: could not parse option {option!r}")
            sys.exit(1)

    unused_options = set(conf[_SECTION].keys()) - CONFIG_KEYS.keys()
    if unused_options:
        logging.warning(
            f"{filename}: ignoring unknown options: {', '.join(sorted(unused_options))}"
        )
    if set(conf.sections()) - {_SECTION}:
        exit_with_error_msg(f"{filename}: sections are not supported in a flat config")
    return values


@dataclasses.dataclass
class RunConfig:
    subcommand: str
    seed: int = 0
    pulses: int = 1_000_000
    mean: float = 0.01
    modes: int = 1
    eta_idler: float = DEFAULT_ETA_IDLER
    eta_signal: float = DEFAULT_ETA_SIGNAL
    split: float = 0.5
    dark: float = 0.0
    gate_ps: int = 500
    rep_hz: float = DEFAULT_REP_RATE
    n_max: Optional[int] = None
    grid: List[float] = dataclasses.field(default_factory=list)
    car_grid: List[float] = dataclasses.field(default_factory=list)
    format: str = "csv"
    workers: int = 1
    out: Optional[str] = None
    input: Optional[str] = None
    tags_out: Optional[str] = None
    log_file: Optional[str] = None
    fixed_clock: bool = False
    skip_unknown: bool = False

    @property
    def delimiter(self) -> str:
        return FORMATS[self.format]

    def model(self, mean: Optional[float] = None) -> oracle.ExperimentModel:
        return oracle.ExperimentModel(
            TwinBeamState(self.mean if mean is None else mean, self.modes),
            eta_idler=self.eta_idler,
            eta_signal=self.eta_signal,
            signal_split=self.split,
            dark_prob=self.dark,
            n_max=self.n_max,
        )

    def sim_config(
        self, mean: Optional[float] = None, seed: Optional[int] = None
    ) -> SimConfig:
        return SimConfig(
            self.model(mean),
            self.pulses,
            rep_rate=self.rep_hz,
            gate_window=self.gate_ps * 1e-12,
            seed=self.seed if seed is None else seed,
            emit_tags=self.tags_out is not None,
            workers=self.workers,
        )

    def gate(self) -> GateConfig:
        return GateConfig(
            rep_period_ps=round(1e12 / self.rep_hz),
            gate_window_ps=self.gate_ps,
            channel_map=dict(DEFAULT_CHANNEL_MAP),
            trigger_mode=(
                TriggerMode.FIXED_CLOCK if self.fixed_clock else TriggerMode.EXPLICIT
            ),
        )

    def output_path(self, name: str) -> str:
        assert self.out is not None
        return os.path.join(self.out, f"{name}.{self.format}")

    def to_json(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpl",
        description="Heralded single-photon source: theory, simulation, tag analysis",
        formatter_class=lambda prog: argparse.RawDescriptionHelpFormatter(
            prog, max_help_position=35
        ),
    )
    common_args = argparse.ArgumentParser(add_help=False)

    # fmt: off
    common_args.add_argument(
        "--config", metavar="PATH", type=str,
        help="flat key = value configuration file, overridden by flags")
    common_args.add_argument(
        "--seed", metavar="U64", type=int,
        help="random seed, defaults to 0")
    common_args.add_argument(
        "--pulses", metavar="N", type=int,
        help="pulses to simulate, defaults to 1000000")
    common_args.add_argument(
        "--mean", metavar="F", type=float,
        help="mean total photon number per pulse, defaults to 0.01")
    common_args.add_argument(
        "--modes", metavar="K", type=int,
        help="number of equally populated modes, defaults to 1")
    common_args.add_argument(
        "--eta-idler", metavar="F", type=float,
        help=f"herald arm efficiency, defaults to {DEFAULT_ETA_IDLER}")
    common_args.add_argument(
        "--eta-signal", metavar="F", type=float,
        help=f"signal arm efficiency, defaults to {DEFAULT_ETA_SIGNAL}")
    common_args.add_argument(
        "--split", metavar="F", type=float,
        help="fraction of the signal routed to bin 1, defaults to 0.5")
    common_args.add_argument(
        "--dark", metavar="F", type=float,
        help="dark click probability per detector per gate, defaults to 0")
    common_args.add_argument(
        "--gate-ps", metavar="N", type=int,
        help="gate window in picoseconds, defaults to 500")
    common_args.add_argument(
        "--rep-hz", metavar="F", type=float,
        help="pulse repetition rate in Hz, defaults to 41e6")
    common_args.add_argument(
        "--n-max", metavar="N", type=int,
        help="Fock truncation, automatic by default")
    common_args.add_argument(
        "--grid", metavar="GRID", type=_grid_arg,
        help="mean photon numbers: 'a,b,c' or log-spaced 'start:stop:count'")
    common_args.add_argument(
        "--car-grid", metavar="GRID", type=_grid_arg,
        help="CAR targets, same syntax as --grid")
    common_args.add_argument(
        "--workers", metavar="N", type=int,
        help="worker processes, defaults to the CPU count; HPL_THREADS overrides")
    common_args.add_argument(
        "--out", metavar="PATH", type=str,
        help="output directory")
    common_args.add_argument(
        "--format", metavar="FMT", choices=sorted(FORMATS), dest="format",
        help="table format: csv or tsv")
    common_args.add_argument(
        "--log-file", metavar="PATH", type=str,
        help="also write the run log to PATH")
    # fmt: on

    subparsers = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    subparsers.required = True
    subparsers.add_parser(
        "theory", parents=[common_args], help="oracle predictions over a grid"
    )
    simulate = subparsers.add_parser(
        "simulate", parents=[common_args], help="Monte Carlo run and its figures"
    )
    tags = subparsers.add_parser(
        "tags", parents=[common_args], help="figures from a time-tag file"
    )
    subparsers.add_parser(
        "sweep", parents=[common_args], help="one simulation per grid point"
    )
    subparsers.add_parser(
        "reproduce", parents=[common_args], help="figure-ready tables"
    )

    # fmt: off
    simulate.add_argument(
        "--tags-out", metavar="PATH", type=str,
        help="also write the run as a time-tag stream")
    tags.add_argument(
        "--input", metavar="PATH", type=str, required=True,
        help="tag stream file, '-' for stdin")
    tags.add_argument(
        "--fixed-clock", action="store_true",
        help="fold against the pulse clock instead of trigger tags")
    tags.add_argument(
        "--skip-unknown", action="store_true",
        help="skip tags on unmapped channels instead of failing")
    # fmt: on
    return parser


def resolve_config(
    args: argparse.Namespace, parser: argparse.ArgumentParser
) -> RunConfig:
    """Defaults, then the config file, then flags."""
    values: Dict[str, Any] = {}
    if args.config is not None:
        values.update(read_config_file(args.config))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    for key in ("out", "input", "tags_out", "log_file", "fixed_clock", "skip_unknown"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag

    config = RunConfig(subcommand=args.subcommand, **values)
    if config.format not in FORMATS:
        parser.error(f"unknown format {config.format!r}")
    config.workers = common.worker_count(values.get("workers"))

    if config.subcommand in ("simulate", "sweep", "reproduce") and config.out is None:
        parser.error(f"{config.subcommand} needs --out")
    if config.subcommand == "sweep" and not (config.grid or config.car_grid):
        parser.error("sweep needs a non-empty --grid or --car-grid")
    if any(m < 0.0 for m in config.grid) or any(c <= 1.0 for c in config.car_grid):
        parser.error("grid means must be >= 0 and CAR targets > 1")
    try:
        config.model()
        if config.subcommand in ("simulate", "sweep"):
            config.sim_config()
        if config.subcommand == "tags":
            config.gate()
        # CAR targets the operating model cannot reach are bad arguments
        if config.car_grid and config.subcommand in ("theory", "sweep", "reproduce"):
            _grid_means(config)
            if config.subcommand == "reproduce":
                _grid_means(dataclasses.replace(config, modes=MULTIMODE_COMPARISON))
    except HplError as e:
        parser.error(str(e))
    return config


@contextlib.contextmanager
def _open_output(path: Optional[str]) -> Iterator[TextIO]:
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w", newline="") as f:
            yield f


def write_table(
    path: Optional[str], header: Sequence[str], rows: Iterable[Row], delimiter: str
) -> None:
    with _open_output(path) as f:
        writer = csv.writer(f, delimiter=delimiter, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [v if isinstance(v, str) else format_number(v) for v in row]
            )
    if path is not None:
        logging.info(f"Wrote {path}")


def figure_rows(figures: Dict[str, Optional[estimators.FigureOfMerit]]) -> List[Row]:
    rows: List[Row] = []
    for label, figure in figures.items():
        if figure is None:
            rows.append([label, None, None])
        else:
            rows.append([label, figure.value, figure.std_err])
    return rows


def _optional(compute: Callable[[], float], what: str) -> Optional[float]:
    try:
        return compute()
    except (HplError, ArithmeticError) as e:
        if isinstance(e, TruncationError):
            raise
        logging.warning(f"{what}: {e}")
        return None


def theory_row(model: oracle.ExperimentModel) -> Row:
    mean = model.source.mean_total
    figures = estimators.figures_from_probabilities(oracle.pulse_probabilities(model))
    exact = _optional(
        lambda: oracle.heralded_mean_and_parity_theory(model)[0],
        f"exact mean at {mean:g}",
    )
    parity_exact = _optional(
        lambda: oracle.heralded_mean_and_parity_theory(model)[1],
        f"exact parity at {mean:g}",
    )
    single_click = _optional(
        lambda: oracle.heralded_single_click_theory(model),
        f"exact single-click probability at {mean:g}",
    )
    return [
        mean,
        figures["car"],
        figures["g2_unconditional"],
        figures["g2_heralded"],
        exact,
        parity_exact,
        figures["mean_n_first"],
        figures["mean_n_second"],
        figures["parity"],
        single_click,
    ]


def _grid_means(config: RunConfig) -> List[float]:
    if config.car_grid:
        return [
            oracle.mean_for_car(
                target,
                eta_idler=config.eta_idler,
                eta_signal=config.eta_signal,
                mode_count=config.modes,
                signal_split=config.split,
                dark_prob=config.dark,
            )
            for target in config.car_grid
        ]
    return list(config.grid) or [config.mean]


def cmd_theory(config: RunConfig) -> None:
    rows = [theory_row(config.model(mean)) for mean in _grid_means(config)]
    path = config.output_path("theory") if config.out is not None else None
    write_table(path, THEORY_COLUMNS, rows, config.delimiter)


def _write_run(
    config: RunConfig, rec: CountRecord, summary: summarylib.Summary
) -> None:
    figures = estimators.all_figures(rec)
    summary.record("run", rec)
    summary.figures("run", figures)
    if config.out is None:
        write_table(None, FIGURE_COLUMNS, figure_rows(figures), config.delimiter)
        return
    with open(config.output_path("counts"), "w", newline="") as f:
        write_count_record(rec, f, config.delimiter)
    logging.info(f"Wrote {config.output_path('counts')}")
    write_table(
        config.output_path("figures"),
        FIGURE_COLUMNS,
        figure_rows(figures),
        config.delimiter,
    )


def cmd_simulate(config: RunConfig, summary: summarylib.Summary) -> None:
    sim = config.sim_config()
    rec = run_simulation(sim)
    _write_run(config, rec, summary)
    if config.tags_out is not None:
        with open(config.tags_out, "w", newline="\n") as f:
            emit_tag_stream(sim, f)
        logging.info(f"Wrote {config.tags_out}")


def cmd_tags(config: RunConfig, summary: summarylib.Summary) -> None:
    assert config.input is not None
    parser = TagParser(DEFAULT_CHANNEL_MAP.keys(), strict=not config.skip_unknown)
    if config.input == "-":
        tags = list(parser.parse(sys.stdin))
    else:
        with open(config.input) as f:
            tags = list(parser.parse(f))
    logging.info(f"Parsed {len(tags)} tags from {config.input}")
    rec = gate_and_count(tags, config.gate())
    _write_run(config, rec, summary)


def _sweep_point(args: Tuple[SimConfig]) -> CountRecord:
    (sim,) = args
    return run_simulation(sim)


def cmd_sweep(config: RunConfig, summary: summarylib.Summary) -> None:
    means = _grid_means(config)
    sims = [
        dataclasses.replace(
            config.sim_config(mean, (config.seed + index) % 2**64), workers=1
        )
        for index, mean in enumerate(means)
    ]
    logging.info(f"Sweeping {len(sims)} grid points on {config.workers} worker(s)")
    if config.workers == 1 or len(sims) == 1:
        records = [_sweep_point((sim,)) for sim in sims]
    else:
        with multiprocessing.Pool(min(config.workers, len(sims))) as pool:
            records = list(pool.imap(_sweep_point, [(sim,) for sim in sims]))

    header = ["mean_total", "seed", *COUNT_KEYS]
    for label in estimators.FIGURE_LABELS:
        header += [label, f"{label}_err"]
    rows: List[Row] = []
    for sim, rec in zip(sims, records):
        label = f"mean={sim.model.source.mean_total:.6g}"
        figures = estimators.all_figures(rec)
        summary.record(label, rec)
        summary.figures(label, figures)
        row: Row = [sim.model.source.mean_total, str(sim.seed)]
        row += [str(v) for _, v in rec.to_rows()]
        for key in estimators.FIGURE_LABELS:
            figure = figures[key]
            row += [None, None] if figure is None else [figure.value, figure.std_err]
        rows.append(row)
    write_table(config.output_path("sweep"), header, rows, config.delimiter)


def _reproduce_fig2(config: RunConfig) -> None:
    means = list(config.grid) or DEFAULT_MEAN_GRID
    fig2a: List[Row] = []
    fig2b: List[Row] = []
    for mean in means:
        model = config.model(mean)
        fig2a.append([mean, oracle.car_theory(model)])
        raw = oracle.klyshko_theory(model, corrected=False)
        corrected = oracle.klyshko_theory(model, corrected=True)
        fig2b.append(
            [mean, *raw, *corrected, config.eta_signal, config.eta_idler]
        )
    write_table(
        config.output_path("fig2a"), ["mean_total", "car"], fig2a, config.delimiter
    )
    write_table(
        config.output_path("fig2b"),
        [
            "mean_total",
            "klyshko_raw_signal",
            "klyshko_raw_idler",
            "klyshko_corrected_signal",
            "klyshko_corrected_idler",
            "eta_signal_theory",
            "eta_idler_theory",
        ],
        fig2b,
        config.delimiter,
    )


def _reproduce_car_figures(config: RunConfig) -> None:
    targets = list(config.car_grid) or DEFAULT_CAR_GRID
    means = _grid_means(dataclasses.replace(config, car_grid=targets))
    multimode = dataclasses.replace(
        config, modes=MULTIMODE_COMPARISON, car_grid=targets
    )
    multimode_means = _grid_means(multimode)
    fig3: List[Row] = []
    fig4: List[Row] = []
    fig5: List[Row] = []
    for target, mean, mm_mean in zip(targets, means, multimode_means):
        model = config.model(mean)
        g2 = oracle.unconditional_g2_clicks(model)
        fig3.append(
            [
                target,
                mean,
                g2,
                _optional(lambda: estimators.schmidt_formula(g2).real, "schmidt_k"),
                1.0 + 1.0 / config.modes,
            ]
        )
        band = oracle.g2h_band(model, BAND_EFFICIENCIES)
        g2h = oracle.g2h_theory(model)
        fig4.append(
            [
                target,
                mean,
                g2h,
                *(value for _, value in band),
                oracle.g2h_theory(multimode.model(mm_mean)),
            ]
        )
        figures = estimators.figures_from_probabilities(
            oracle.pulse_probabilities(model)
        )
        mean_first = figures["mean_n_first"]
        parity_first = (
            None
            if mean_first is None
            else estimators.parity_formula(mean_first, g2h).real
        )
        exact_mean, exact_parity = oracle.heralded_mean_and_parity_theory(model)
        fig5.append(
            [
                target,
                mean,
                exact_mean,
                exact_parity,
                mean_first,
                figures["mean_n_second"],
                parity_first,
                figures["parity"],
                _optional(
                    lambda: oracle.heralded_single_click_theory(model),
                    f"exact single-click probability at CAR {target:g}",
                ),
            ]
        )
    low, high = BAND_EFFICIENCIES
    write_table(
        config.output_path("fig3"),
        ["car", "mean_total", "g2_unconditional", "schmidt_k", "g2_theory"],
        fig3,
        config.delimiter,
    )
    write_table(
        config.output_path("fig4"),
        [
            "car",
            "mean_total",
            "g2h",
            f"g2h_eta_idler_{low:g}",
            f"g2h_eta_idler_{high:g}",
            f"g2h_modes_{MULTIMODE_COMPARISON}",
        ],
        fig4,
        config.delimiter,
    )
    write_table(
        config.output_path("fig5"),
        [
            "car",
            "mean_total",
            "mean_n_exact",
            "parity_exact",
            "mean_n_first",
            "mean_n_second",
            "parity_first",
            "parity_second",
            "single_click_exact",
        ],
        fig5,
        config.delimiter,
    )


def cmd_reproduce(config: RunConfig) -> None:
    _reproduce_fig2(config)
    _reproduce_car_figures(config)


def run(config: RunConfig, summary: summarylib.Summary) -> None:
    if config.subcommand == "theory":
        cmd_theory(config)
    elif config.subcommand == "simulate":
        cmd_simulate(config, summary)
    elif config.subcommand == "tags":
        cmd_tags(config, summary)
    elif config.subcommand == "sweep":
        cmd_sweep(config, summary)
    else:
        cmd_reproduce(config)


def main(argv: Optional[List[str]] = None) -> None:
    common.init("hpl")
    common.system_check()

    parser = build_parser()
    args = parser.parse_args(argv)
    common.log_redirect.start()
    config = resolve_config(args, parser)

    summary = summarylib.Summary(config.subcommand)
    summary.config = config.to_json()
    summary.seed = config.seed
    summary.workers = config.workers

    try:
        if config.out is not None:
            common.mkdir_if_ne(config.out)
        run(config, summary)
        if config.out is not None:
            summary.hash_results(config.out)
            summary.save(os.path.join(config.out, summarylib.SUMMARY_FILE))
    except (HplError, OSError) as e:
        logging.fatal(f"{config.subcommand}: {e}")
        common.log_redirect.stop(config.log_file)
        sys.exit(1)
    logging.info("Done")
    common.log_redirect.stop(config.log_file)
