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

from typing import Any, List, Tuple
import io
import math

import numpy as np
import pytest

from heralded_photons.lib import analytic_oracle as oracle
from heralded_photons.lib import estimators as est
from heralded_photons.lib import pulse_simulator as sim
from heralded_photons.lib.common import CountOverflowError, DomainError
from heralded_photons.lib.photon_statistics import TwinBeamState

FIELD_FOR_PROBABILITY = {
    "p_i": "s_i",
    "p_s1": "s_s1",
    "p_s2": "s_s2",
    "p_is1": "c_is1",
    "p_is2": "c_is2",
    "p_s1s2": "c_s1s2",
    "p_is1s2": "c_is1s2",
    "p_coinc": "c_is",
}


def make_config(
    mean: float, pulses: int, modes: int = 1, dark_prob: float = 0.0, **kwargs: Any
) -> sim.SimConfig:
    model = oracle.ExperimentModel(TwinBeamState(mean, modes), dark_prob=dark_prob)
    return sim.SimConfig(model, pulses, **kwargs)


def assert_matches_oracle(
    record: sim.CountRecord, model: oracle.ExperimentModel
) -> None:
    probs = oracle.pulse_probabilities(model).tracked()
    for name, field in FIELD_FOR_PROBABILITY.items():
        expected = probs[name] * record.pulses
        sigma = math.sqrt(max(expected * (1.0 - probs[name]), 1.0))
        observed = getattr(record, field)
        assert abs(observed - expected) <= 4 * sigma, (field, observed, expected)


def parse_stream(text: str) -> List[Tuple[int, int]]:
    return [
        (int(c), int(t))
        for c, t in (
            line.split(",") for line in text.splitlines() if not line.startswith("#")
        )
    ]


def test_sim_config_validation() -> None:
    model = oracle.ExperimentModel(TwinBeamState(0.01))
    with pytest.raises(DomainError):
        sim.SimConfig(model, 0)
    with pytest.raises(DomainError):
        sim.SimConfig(model, 10, seed=-1)
    with pytest.raises(DomainError):
        sim.SimConfig(model, 10, seed=2**64)
    with pytest.raises(DomainError):
        sim.SimConfig(model, 10, rep_rate=1e9, gate_window=1e-9)
    with pytest.raises(DomainError):
        sim.SimConfig(model, 10, workers=0)

    config = sim.SimConfig(model, 10, seed=2**64 - 1)
    assert config.rep_period_ps == 24390
    assert config.gate_window_ps == 500


def test_chunks() -> None:
    config = make_config(0.01, 2 * sim.CHUNK_PULSES + 10)
    assert config.chunks == [(0, sim.CHUNK_PULSES), (1, sim.CHUNK_PULSES), (2, 10)]
    assert make_config(0.01, 1).chunks == [(0, 1)]


def test_count_record_invariants() -> None:
    with pytest.raises(sim.CountRecordError):
        sim.CountRecord(pulses=1, s_i=2)
    with pytest.raises(sim.CountRecordError):
        sim.CountRecord(pulses=5, s_i=-1)
    with pytest.raises(sim.CountRecordError):
        sim.CountRecord(
            pulses=5, s_i=2, s_s1=2, s_s2=2, c_is1=1, c_is2=1, c_s1s2=1, c_is1s2=2
        )
    with pytest.raises(CountOverflowError):
        sim.CountRecord(pulses=2**63)
    with pytest.raises(DomainError):
        sim.CountRecord.from_categories([1, 2, 3])


def test_tally() -> None:
    clicks = np.array(
        [[1, 0, 0], [1, 1, 0], [0, 1, 1], [1, 1, 1], [0, 0, 0]], dtype=np.bool_
    )
    record = sim.tally(clicks)
    assert record == sim.CountRecord(
        pulses=5, s_i=3, s_s1=3, s_s2=2, c_is=2, c_is1=2, c_is2=1, c_s1s2=2, c_is1s2=1
    )
    assert record.s_s == 3
    assert record.categories() == [1, 1, 0, 1, 0, 0, 1, 1]
    assert sim.CountRecord.from_categories(record.categories()) == record


def test_merge_and_rows() -> None:
    a = sim.CountRecord.from_categories([5, 1, 1, 1, 0, 0, 0, 0])
    b = sim.CountRecord.from_categories([3, 0, 0, 0, 2, 1, 0, 1])
    merged = a.merge(b)
    assert merged == sim.CountRecord.from_categories([8, 1, 1, 1, 2, 1, 0, 1])
    assert [key for key, _ in merged.to_rows()] == list(sim.COUNT_KEYS)

    rows = [(key, str(value)) for key, value in merged.to_rows()]
    assert sim.CountRecord.from_rows(rows) == merged
    with pytest.raises(sim.CountRecordError):
        sim.CountRecord.from_rows(rows[1:])
    with pytest.raises(sim.CountRecordError):
        sim.CountRecord.from_rows(rows + [("c_x", "1")])


def test_vacuum_never_clicks() -> None:
    record = sim.run_simulation(make_config(0.0, 1000))
    assert record == sim.CountRecord(pulses=1000)


def test_dark_clicks_only() -> None:
    record = sim.run_simulation(make_config(0.0, 200_000, dark_prob=0.02, seed=3))
    for count, rate in [(record.s_i, 0.02), (record.s_s1, 0.01), (record.s_s2, 0.01)]:
        tolerance = 5 * math.sqrt(rate / record.pulses)
        assert count / record.pulses == pytest.approx(rate, abs=tolerance)


def test_chunks_are_reproducible() -> None:
    model = oracle.ExperimentModel(TwinBeamState(0.2, 2))
    first = sim.simulate_chunk(model, 42, 3, 1000)
    assert first.shape == (1000, 3)
    np.testing.assert_array_equal(first, sim.simulate_chunk(model, 42, 3, 1000))
    assert not np.array_equal(first, sim.simulate_chunk(model, 42, 4, 1000))


def test_seed_and_worker_determinism() -> None:
    pulses = 2 * sim.CHUNK_PULSES + 123
    serial = sim.run_simulation(make_config(0.05, pulses, seed=11))
    assert serial == sim.run_simulation(make_config(0.05, pulses, seed=11))
    assert serial == sim.run_simulation(make_config(0.05, pulses, seed=11, workers=3))
    assert serial != sim.run_simulation(make_config(0.05, pulses, seed=12))
    assert serial.pulses == pulses


def test_seeds_agree_on_car() -> None:
    first = est.car(sim.run_simulation(make_config(0.05, 500_000, seed=3)))
    second = est.car(sim.run_simulation(make_config(0.05, 500_000, seed=1234567)))
    sigma = math.hypot(first.std_err, second.std_err)
    assert sigma > 0.0
    assert abs(first.value - second.value) <= 6 * sigma


def test_matches_oracle() -> None:
    config = make_config(0.05, 1_000_000, modes=2, dark_prob=1e-3, seed=5)
    assert_matches_oracle(sim.run_simulation(config), config.model)


@pytest.mark.slow
def test_matches_oracle_at_operating_points() -> None:
    for seed, target in enumerate([10.0, 97.14, 1000.0]):
        mean = oracle.mean_for_car(target)
        config = make_config(mean, 10_000_000, seed=seed, workers=2)
        assert_matches_oracle(sim.run_simulation(config), config.model)


def test_emit_requires_flag() -> None:
    with pytest.raises(DomainError):
        sim.emit_tag_stream(make_config(0.01, 10), io.StringIO())


def test_emit_vacuum_writes_triggers_only() -> None:
    sink = io.StringIO()
    written = sim.emit_tag_stream(make_config(0.0, 3, emit_tags=True), sink)
    assert written == 3
    assert parse_stream(sink.getvalue()) == [(0, 24390), (0, 48780), (0, 73170)]
    assert "# rep_period_ps=24390" in sink.getvalue().splitlines()


def test_emitted_clicks_sit_inside_the_gate() -> None:
    config = make_config(
        0.3, 5000, dark_prob=0.01, seed=9, emit_tags=True, gate_window=0.3e-9
    )
    sink = io.StringIO()
    written = sim.emit_tag_stream(config, sink)
    tags = parse_stream(sink.getvalue())
    assert written == len(tags)

    times = [t for _, t in tags]
    assert times == sorted(times)
    period, window = config.rep_period_ps, config.gate_window_ps
    assert window == 300
    for channel, t in tags:
        pulse = round((t - period) / period)
        offset = t - period - pulse * period
        if channel == sim.CHANNEL_TRIGGER:
            assert offset == 0
        else:
            assert -window <= 2 * offset < window

    record = sim.run_simulation(config)
    channels = [c for c, _ in tags]
    assert channels.count(sim.CHANNEL_TRIGGER) == record.pulses
    assert channels.count(sim.CHANNEL_IDLER) == record.s_i
    assert channels.count(sim.CHANNEL_S1) == record.s_s1
    assert channels.count(sim.CHANNEL_S2) == record.s_s2
