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

from typing import Dict, Iterable, List, Sequence, TextIO, Tuple
import dataclasses
import logging
import math
import multiprocessing
import time

import numpy as np
import numpy.typing as npt

from heralded_photons.lib.analytic_oracle import (
    HERALD_BINS,
    SIGNAL_BINS,
    ExperimentModel,
)
from heralded_photons.lib.common import (
    DEFAULT_GATE_WINDOW,
    DEFAULT_REP_RATE,
    CountOverflowError,
    DomainError,
)
from heralded_photons.lib.photon_statistics import sample_mode_occupations

CHUNK_PULSES = 65536
MAX_TALLY = 2**63 - 1
MAX_SEED = 2**64 - 1

CHANNEL_TRIGGER = 0
CHANNEL_IDLER = 1
CHANNEL_S1 = 2
CHANNEL_S2 = 3
# click-array columns in this order
DETECTOR_CHANNELS = (CHANNEL_IDLER, CHANNEL_S1, CHANNEL_S2)

COUNT_KEYS = (
    "pulses",
    "s_i",
    "s_s1",
    "s_s2",
    "c_is",
    "c_is1",
    "c_is2",
    "c_s1s2",
    "c_is1s2",
)

ClickArray = npt.NDArray[np.bool_]


class CountRecordError(DomainError):
    pass


@dataclasses.dataclass(frozen=True)
class SimConfig:
    model: ExperimentModel
    pulses: int
    rep_rate: float = DEFAULT_REP_RATE
    gate_window: float = DEFAULT_GATE_WINDOW
    seed: int = 0
    emit_tags: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.pulses < 1:
            raise DomainError(f"pulses must be >= 1, got {self.pulses}")
        if not 0 <= self.seed <= MAX_SEED:
            raise DomainError(
                f"seed must be an unsigned 64-bit integer, got {self.seed}"
            )
        if self.rep_rate <= 0.0 or self.gate_window <= 0.0:
            raise DomainError("rep_rate and gate_window must be positive")
        if self.gate_window * self.rep_rate >= 1.0:
            raise DomainError(
                f"gate window {self.gate_window!r} s overlaps the next pulse "
                f"at {self.rep_rate!r} Hz"
            )
        if self.workers < 1:
            raise DomainError(f"workers must be >= 1, got {self.workers}")

    @property
    def rep_period_ps(self) -> int:
        return round(1e12 / self.rep_rate)

    @property
    def gate_window_ps(self) -> int:
        return max(1, round(self.gate_window * 1e12))

    @property
    def chunks(self) -> List[Tuple[int, int]]:
        count = math.ceil(self.pulses / CHUNK_PULSES)
        return [
            (index, min(CHUNK_PULSES, self.pulses - index * CHUNK_PULSES))
            for index in range(count)
        ]


@dataclasses.dataclass(frozen=True)
class CountRecord:
    pulses: int = 0
    s_i: int = 0
    s_s1: int = 0
    s_s2: int = 0
    c_is: int = 0
    c_is1: int = 0
    c_is2: int = 0
    c_s1s2: int = 0
    c_is1s2: int = 0

    def __post_init__(self) -> None:
        for key in COUNT_KEYS:
            value = getattr(self, key)
            if value < 0:
                raise CountRecordError(f"{key} must be non-negative, got {value}")
            if value > MAX_TALLY:
                raise CountOverflowError(f"{key} tally {value} overflows 64 bits")
        pairs = {
            "c_is1": ("s_i", "s_s1"),
            "c_is2": ("s_i", "s_s2"),
            "c_s1s2": ("s_s1", "s_s2"),
            "c_is1s2": ("c_is1", "c_is2", "c_s1s2"),
            "c_is": ("s_i",),
            "s_i": ("pulses",),
            "s_s1": ("pulses",),
            "s_s2": ("pulses",),
        }
        for key, bounds in pairs.items():
            for bound in bounds:
                value, limit = getattr(self, key), getattr(self, bound)
                if value > limit:
                    raise CountRecordError(f"{key}={value} exceeds {bound}={limit}")

    @property
    def s_s(self) -> int:
        """Pulses with a click on either signal bin."""
        return self.s_s1 + self.s_s2 - self.c_s1s2

    @classmethod
    def from_categories(cls, categories: Sequence[int]) -> "CountRecord":
        """Build from counts of the 8 click patterns (bit 0 herald, 1 s1, 2 s2)."""
        if len(categories) != 8:
            raise CountRecordError("expected 8 click-pattern counts")
        counts = [int(c) for c in categories]

        def having(*bits: int) -> int:
            mask = sum(1 << b for b in bits)
            return sum(c for pattern, c in enumerate(counts) if pattern & mask == mask)

        herald_and_signal = sum(
            c for pattern, c in enumerate(counts) if pattern & 1 and pattern & 6
        )
        return cls(
            pulses=sum(counts),
            s_i=having(0),
            s_s1=having(1),
            s_s2=having(2),
            c_is=herald_and_signal,
            c_is1=having(0, 1),
            c_is2=having(0, 2),
            c_s1s2=having(1, 2),
            c_is1s2=having(0, 1, 2),
        )

    def categories(self) -> List[int]:
        """Inverse of from_categories."""
        only_i = self.s_i - self.c_is1 - self.c_is2 + self.c_is1s2
        only_s1 = self.s_s1 - self.c_is1 - self.c_s1s2 + self.c_is1s2
        only_s2 = self.s_s2 - self.c_is2 - self.c_s1s2 + self.c_is1s2
        result = [
            0,
            only_i,
            only_s1,
            self.c_is1 - self.c_is1s2,
            only_s2,
            self.c_is2 - self.c_is1s2,
            self.c_s1s2 - self.c_is1s2,
            self.c_is1s2,
        ]
        result[0] = self.pulses - sum(result[1:])
        if any(c < 0 for c in result):
            raise CountRecordError(f"inconsistent tallies: {self}")
        return result

    def merge(self, other: "CountRecord") -> "CountRecord":
        return CountRecord(
            **{key: getattr(self, key) + getattr(other, key) for key in COUNT_KEYS}
        )

    def to_rows(self) -> List[Tuple[str, int]]:
        return [(key, getattr(self, key)) for key in COUNT_KEYS]

    @classmethod
    def from_rows(cls, rows: Iterable[Tuple[str, str]]) -> "CountRecord":
        values: Dict[str, int] = {}
        for key, value in rows:
            if key not in COUNT_KEYS:
                raise CountRecordError(f"unknown count key {key!r}")
            values[key] = int(value)
        missing = set(COUNT_KEYS) - values.keys()
        if missing:
            raise CountRecordError(f"missing count keys: {', '.join(sorted(missing))}")
        return cls(**values)


def chunk_generator(
    seed: int, chunk_index: int, stream: int = 0
) -> np.random.Generator:
    """Counter-based stream owned by one chunk; independent of scheduling."""
    sequence = np.random.SeedSequence(seed, spawn_key=(chunk_index, stream))
    return np.random.Generator(np.random.Philox(sequence))


def simulate_chunk(
    model: ExperimentModel, seed: int, chunk_index: int, pulses: int
) -> ClickArray:
    """Click flags of shape (pulses, 3): herald, signal bin 1, signal bin 2."""
    rng = chunk_generator(seed, chunk_index)
    photons = sample_mode_occupations(model.source, rng, size=pulses).sum(axis=1)
    idler_detected = rng.binomial(photons, model.eta_idler)
    signal_detected = rng.binomial(photons, model.eta_signal)
    to_s1 = rng.binomial(signal_detected, model.signal_split)
    to_s2 = signal_detected - to_s1
    clicks = np.stack([idler_detected > 0, to_s1 > 0, to_s2 > 0], axis=1)
    if model.dark_prob > 0.0:
        dark = np.array(
            [
                model.dark_prob / HERALD_BINS,
                model.dark_prob / SIGNAL_BINS,
                model.dark_prob / SIGNAL_BINS,
            ]
        )
        clicks |= rng.random((pulses, 3)) < dark
    return clicks


def tally(clicks: ClickArray) -> CountRecord:
    patterns = clicks.astype(np.int64) @ np.array([1, 2, 4], dtype=np.int64)
    return CountRecord.from_categories(np.bincount(patterns, minlength=8).tolist())


def _chunk_task(args: Tuple[ExperimentModel, int, int, int]) -> CountRecord:
    model, seed, chunk_index, pulses = args
    return tally(simulate_chunk(model, seed, chunk_index, pulses))


def run_simulation(config: SimConfig) -> CountRecord:
    chunks = config.chunks
    tasks = [(config.model, config.seed, index, size) for index, size in chunks]
    logging.info(
        f"Simulating {config.pulses} pulses in {len(chunks)} chunks "
        f"on {config.workers} worker(s), seed {config.seed}"
    )
    time_start = time.monotonic()
    record = CountRecord()
    if config.workers == 1 or len(tasks) == 1:
        for task in tasks:
            record = record.merge(_chunk_task(task))
    else:
        with multiprocessing.Pool(min(config.workers, len(tasks))) as pool:
            for partial in pool.imap(_chunk_task, tasks):
                record = record.merge(partial)
    logging.info(
        f"Simulation done in {time.monotonic() - time_start:.2f} s: "
        f"{record.s_i} heralds, {record.c_is} coincidences"
    )
    return record


def emit_tag_stream(config: SimConfig, sink: TextIO) -> int:
    """Write the run as a trigger-referenced time-tag stream.

    One trigger record per pulse and one record per click, jittered
    uniformly inside the gate around the pulse time. Returns the number of
    tag records written.
    """
    if not config.emit_tags:
        raise DomainError("tag emission is disabled in this configuration")
    period = config.rep_period_ps
    window = config.gate_window_ps
    # pulse k sits at epoch + k * period so no timestamp goes negative
    epoch = period
    sink.write("# heralded-photons tag stream\n")
    sink.write(f"# rep_period_ps={period}\n")
    sink.write(f"# gate_window_ps={window}\n")
    sink.write("# channel,timestamp_ps\n")
    written = 0
    channels = np.array(DETECTOR_CHANNELS, dtype=np.int64)
    for chunk_index, size in config.chunks:
        clicks = simulate_chunk(config.model, config.seed, chunk_index, size)
        jitter = chunk_generator(config.seed, chunk_index, stream=1)
        # accepted offsets satisfy -window <= 2 * offset < window
        offsets = jitter.integers(-(window // 2), (window - 1) // 2 + 1, size=(size, 3))
        pulse_index = chunk_index * CHUNK_PULSES + np.arange(size, dtype=np.int64)
        pulse_time = epoch + pulse_index * period
        rows, cols = np.nonzero(clicks)
        times = np.concatenate([pulse_time, pulse_time[rows] + offsets[rows, cols]])
        chans = np.concatenate(
            [np.full(size, CHANNEL_TRIGGER, dtype=np.int64), channels[cols]]
        )
        order = np.lexsort((chans, times))
        sink.write(
            "".join(f"{c},{t}\n" for c, t in zip(chans[order], times[order]))
        )
        written += int(times.size)
    logging.info(f"Wrote {written} tag records")
    return written
