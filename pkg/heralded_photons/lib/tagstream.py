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

"""Time-tag parsing, pulse-slot folding and gated click counting."""

from enum import Enum
from typing import Collection, Dict, Iterable, Iterator, List, Optional, TextIO
import csv
import dataclasses
import logging

import numpy as np

from heralded_photons.lib.common import (
    DomainError,
    TagParseError,
    TagStreamError,
)
from heralded_photons.lib.photon_statistics import IntArray
from heralded_photons.lib.pulse_simulator import (
    CHANNEL_IDLER,
    CHANNEL_S1,
    CHANNEL_S2,
    CHANNEL_TRIGGER,
    CountRecord,
    SimConfig,
)

MAX_TIMESTAMP = 2**64 - 1

ROLE_TRIGGER = "trigger"
ROLE_IDLER = "idler"
ROLE_S1 = "s1"
ROLE_S2 = "s2"
# bit of each detector role in a slot's click pattern
ROLE_BITS = {ROLE_IDLER: 1, ROLE_S1: 2, ROLE_S2: 4}

DEFAULT_CHANNEL_MAP = {
    CHANNEL_TRIGGER: ROLE_TRIGGER,
    CHANNEL_IDLER: ROLE_IDLER,
    CHANNEL_S1: ROLE_S1,
    CHANNEL_S2: ROLE_S2,
}


class TriggerMode(str, Enum):
    EXPLICIT = "explicit-trigger"
    FIXED_CLOCK = "fixed-clock"


@dataclasses.dataclass(frozen=True)
class TimeTag:
    channel: int
    timestamp_ps: int


@dataclasses.dataclass(frozen=True)
class GateConfig:
    rep_period_ps: int = 24390
    gate_window_ps: int = 500
    channel_map: Dict[int, str] = dataclasses.field(
        default_factory=lambda: dict(DEFAULT_CHANNEL_MAP)
    )
    trigger_mode: TriggerMode = TriggerMode.EXPLICIT

    def __post_init__(self) -> None:
        if self.rep_period_ps < 1 or self.gate_window_ps < 1:
            raise DomainError("rep_period_ps and gate_window_ps must be positive")
        if self.gate_window_ps > self.rep_period_ps:
            raise DomainError(
                f"gate window {self.gate_window_ps} ps exceeds the pulse "
                f"period {self.rep_period_ps} ps"
            )
        unknown = set(self.channel_map.values()) - {ROLE_TRIGGER, *ROLE_BITS}
        if unknown:
            raise DomainError(f"unknown channel roles: {', '.join(sorted(unknown))}")

    @classmethod
    def for_simulation(cls, config: SimConfig) -> "GateConfig":
        return cls(config.rep_period_ps, config.gate_window_ps)


class TagParser:
    """Line parser for the `channel,timestamp_ps` stream.

    With ``strict`` unset, tags on channels outside ``channels`` are dropped
    and counted in ``skipped``.
    """

    def __init__(
        self, channels: Optional[Collection[int]] = None, strict: bool = True
    ) -> None:
        self.channels = None if channels is None else frozenset(channels)
        self.strict = strict
        self.skipped = 0

    def parse(self, lines: Iterable[str]) -> Iterator[TimeTag]:
        for line_number, line in enumerate(lines, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            tag = self._parse_line(text, line_number)
            if self.channels is not None and tag.channel not in self.channels:
                if self.strict:
                    raise TagStreamError(
                        f"line {line_number}: unknown channel {tag.channel}"
                    )
                self.skipped += 1
                continue
            yield tag
        if self.skipped:
            logging.warning(f"Skipped {self.skipped} tags on unknown channels")

    @staticmethod
    def _parse_line(text: str, line_number: int) -> TimeTag:
        fields = text.split(",")
        if len(fields) != 2:
            raise TagParseError(
                f"expected 'channel,timestamp_ps', got {len(fields)} field(s)",
                line_number,
            )
        try:
            channel, timestamp = (int(field.strip()) for field in fields)
        except ValueError:
            raise TagParseError(f"not an integer record: {text!r}", line_number)
        if channel < 0 or not 0 <= timestamp <= MAX_TIMESTAMP:
            raise TagParseError(f"value out of range: {text!r}", line_number)
        return TimeTag(channel, timestamp)


def parse_tags(
    lines: Iterable[str],
    channels: Optional[Collection[int]] = None,
    strict: bool = True,
) -> List[TimeTag]:
    return list(TagParser(channels, strict).parse(lines))


def _nearest_trigger_slots(detector_ts: IntArray, trigger_ts: IntArray) -> IntArray:
    """Index of the closest trigger; ties go to the earlier one."""
    after = np.searchsorted(trigger_ts, detector_ts, side="left")
    before = np.clip(after - 1, 0, None)
    after = np.clip(after, None, trigger_ts.size - 1)
    take_before = detector_ts - trigger_ts[before] <= trigger_ts[after] - detector_ts
    return np.where(take_before, before, after)


def gate_and_count(tags: Iterable[TimeTag], gate: GateConfig) -> CountRecord:
    tag_list = list(tags)
    if not tag_list:
        if gate.trigger_mode is TriggerMode.EXPLICIT:
            raise TagStreamError("zero triggers in the tag stream")
        return CountRecord()
    # relative to the first tag so unsigned 64-bit stamps fit in int64
    origin = tag_list[0].timestamp_ps
    try:
        ts = np.array([t.timestamp_ps - origin for t in tag_list], dtype=np.int64)
    except OverflowError:
        raise TagStreamError("tag stream spans more than 2**63 ps")
    decreasing = np.flatnonzero(np.diff(ts) < 0)
    if decreasing.size:
        raise TagStreamError(
            f"tags are not time-sorted at record {int(decreasing[0]) + 2}"
        )
    roles: List[str] = []
    for tag in tag_list:
        role = gate.channel_map.get(tag.channel)
        if role is None:
            raise TagStreamError(f"channel {tag.channel} has no role")
        roles.append(role)
    role_arr = np.array(roles)
    is_trigger = role_arr == ROLE_TRIGGER
    detector_ts = ts[~is_trigger]
    bits = np.array(
        [ROLE_BITS[r] for r in role_arr[~is_trigger]], dtype=np.int64
    )

    if gate.trigger_mode is TriggerMode.EXPLICIT:
        trigger_ts = ts[is_trigger]
        if trigger_ts.size == 0:
            raise TagStreamError("zero triggers in the tag stream")
        pulses = int(trigger_ts.size)
        if detector_ts.size:
            slots = _nearest_trigger_slots(detector_ts, trigger_ts)
            offsets = detector_ts - trigger_ts[slots]
        else:
            slots = offsets = np.zeros(0, dtype=np.int64)
    else:
        # clock phase from the first trigger, else from the first tag;
        # later triggers only extend the span
        period = gate.rep_period_ps
        phase = int(ts[is_trigger][0]) if is_trigger.any() else 0
        all_slots, remainder = np.divmod(ts - phase, period)
        late = 2 * remainder > period
        all_slots = all_slots + late
        all_offsets = remainder - late * period
        pulses = int(all_slots.max()) + 1
        slots = all_slots[~is_trigger]
        offsets = all_offsets[~is_trigger]

    window = gate.gate_window_ps
    accepted = (-window <= 2 * offsets) & (2 * offsets < window) & (slots >= 0)
    logging.debug(
        f"Gated {int(accepted.sum())} of {detector_ts.size} detector tags "
        f"into {pulses} pulse slots"
    )
    patterns = np.zeros(pulses, dtype=np.int64)
    np.bitwise_or.at(patterns, slots[accepted], bits[accepted])
    return CountRecord.from_categories(np.bincount(patterns, minlength=8).tolist())


def write_count_record(
    record: CountRecord, sink: TextIO, delimiter: str = ","
) -> None:
    writer = csv.writer(sink, delimiter=delimiter, lineterminator="\n")
    writer.writerow(["key", "value"])
    writer.writerows(record.to_rows())


def read_count_record(source: TextIO, delimiter: str = ",") -> CountRecord:
    rows = [row for row in csv.reader(source, delimiter=delimiter) if row]
    if rows and rows[0] == ["key", "value"]:
        rows = rows[1:]
    for row in rows:
        if len(row) != 2:
            raise DomainError(f"count record rows need 2 fields, got {row!r}")
    return CountRecord.from_rows((key, value) for key, value in rows)
