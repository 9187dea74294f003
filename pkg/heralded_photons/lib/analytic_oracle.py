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

"""Exact per-pulse probabilities of the twin-beam + click-detector model.

The twin beam carries the same total photon number n in signal and idler,
so every joint click statistic follows from the no-click generating
function of each detector subset S:

    Q(S) = sum_n P(n) * x_S**n * prod_{b in S} (1 - d_b)

with x_S the probability that one idler/signal photon pair leaves every
detector in S dark, and d_b the per-gate dark-click probability of bin b.
Joint click probabilities follow by inclusion-exclusion over subsets of
{herald, s1, s2}.
"""

from typing import Dict, Iterable, List, Optional, Tuple
import dataclasses
import itertools
import logging

import numpy as np
from scipy import optimize

from heralded_photons.lib.common import (
    DEFAULT_ETA_IDLER,
    DEFAULT_ETA_SIGNAL,
    DEFAULT_TOLERANCE,
    DomainError,
    OutOfDomainError,
    TruncationError,
    UndefinedResultError,
    check_non_negative,
    check_probability,
)
from heralded_photons.lib.detector_model import (
    ClickDetectorConfig,
    binomial_loss_transform,
    click_probability,
)
from heralded_photons.lib.photon_statistics import (
    FloatArray,
    PhotonNumberDistribution,
    TwinBeamState,
    auto_n_max,
    multimode_total_pmf,
)

HERALD = "i"
SIGNAL_1 = "s1"
SIGNAL_2 = "s2"
DETECTORS = (HERALD, SIGNAL_1, SIGNAL_2)

# herald is one bin, the signal is split over two
HERALD_BINS = 1
SIGNAL_BINS = 2


@dataclasses.dataclass(frozen=True)
class ExperimentModel:
    source: TwinBeamState
    eta_idler: float = DEFAULT_ETA_IDLER
    eta_signal: float = DEFAULT_ETA_SIGNAL
    signal_split: float = 0.5
    dark_prob: float = 0.0
    n_max: Optional[int] = None
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self) -> None:
        check_probability("eta_idler", self.eta_idler)
        check_probability("eta_signal", self.eta_signal)
        check_probability("signal_split", self.signal_split)
        check_non_negative("dark_prob", self.dark_prob)
        if self.dark_prob > 1.0:
            raise DomainError(f"dark_prob must be <= 1, got {self.dark_prob!r}")
        if self.n_max is not None and self.n_max < 0:
            raise DomainError(f"n_max must be >= 0, got {self.n_max}")

    def replace(self, **changes: object) -> "ExperimentModel":
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]

    def with_mean(self, mean_total: float) -> "ExperimentModel":
        source = TwinBeamState(mean_total, self.source.mode_count)
        return dataclasses.replace(self, source=source)

    def resolved_n_max(self) -> int:
        if self.n_max is not None:
            return self.n_max
        return auto_n_max(self.source, self.tolerance)

    def dark_click(self, detector: str) -> float:
        bins = HERALD_BINS if detector == HERALD else SIGNAL_BINS
        return self.dark_prob / bins

    def photon_absorption(self, detector: str) -> float:
        if detector == HERALD:
            return self.eta_idler
        if detector == SIGNAL_1:
            return self.eta_signal * self.signal_split
        return self.eta_signal * (1.0 - self.signal_split)


@dataclasses.dataclass(frozen=True)
class PulseProbabilities:
    p_i: float
    p_s1: float
    p_s2: float
    p_is1: float
    p_is2: float
    p_s1s2: float
    p_is1s2: float
    p_coinc: float

    @property
    def p_s(self) -> float:
        """Click on either signal bin."""
        return self.p_s1 + self.p_s2 - self.p_s1s2

    def tracked(self) -> Dict[str, float]:
        return dataclasses.asdict(self)


def source_distribution(model: ExperimentModel) -> PhotonNumberDistribution:
    dist = multimode_total_pmf(model.source, model.resolved_n_max())
    if dist.tail_bound > model.tolerance:
        raise TruncationError(
            f"Fock truncation at n_max={dist.n_max} leaves tail mass "
            f"{dist.tail_bound:.3e} above tolerance {model.tolerance:.1e}; "
            "raise n_max",
            dist.tail_bound,
        )
    return dist


def _no_click_base(model: ExperimentModel, subset: Iterable[str]) -> float:
    subset = set(subset)
    idler_dark = 1.0 - model.eta_idler if HERALD in subset else 1.0
    signal_absorbed = sum(
        model.photon_absorption(d) for d in (SIGNAL_1, SIGNAL_2) if d in subset
    )
    return idler_dark * (1.0 - signal_absorbed)


def _no_click_given_n(
    model: ExperimentModel, subset: Iterable[str], n_max: int
) -> FloatArray:
    subset = tuple(subset)
    numbers = np.arange(n_max + 1, dtype=np.float64)
    dark = 1.0
    for detector in subset:
        dark *= 1.0 - model.dark_click(detector)
    return dark * _no_click_base(model, subset) ** numbers


def no_click_probability(
    model: ExperimentModel,
    subset: Iterable[str],
    dist: Optional[PhotonNumberDistribution] = None,
) -> float:
    """Probability that no detector in the subset clicks in a gate."""
    if dist is None:
        dist = source_distribution(model)
    return float(np.dot(dist.probs, _no_click_given_n(model, subset, dist.n_max)))


def _subsets(detectors: Tuple[str, ...]) -> List[Tuple[str, ...]]:
    return [
        subset
        for size in range(len(detectors) + 1)
        for subset in itertools.combinations(detectors, size)
    ]


def _pattern_given_n(
    model: ExperimentModel,
    clicked: Tuple[str, ...],
    dark: Tuple[str, ...],
    n_max: int,
) -> FloatArray:
    """P(every detector in clicked fires, every one in dark stays silent | n)"""
    result = np.zeros(n_max + 1)
    for subset in _subsets(clicked):
        result += (-1) ** len(subset) * _no_click_given_n(model, dark + subset, n_max)
    return result


def click_pattern_probability(
    model: ExperimentModel,
    clicked: Tuple[str, ...],
    dark: Tuple[str, ...] = (),
    dist: Optional[PhotonNumberDistribution] = None,
) -> float:
    if dist is None:
        dist = source_distribution(model)
    return float(
        np.dot(dist.probs, _pattern_given_n(model, clicked, dark, dist.n_max))
    )


def pulse_probabilities(model: ExperimentModel) -> PulseProbabilities:
    dist = source_distribution(model)

    def clicks(*detectors: str) -> float:
        return click_pattern_probability(model, detectors, (), dist)

    p_i = clicks(HERALD)
    herald_only = click_pattern_probability(
        model, (HERALD,), (SIGNAL_1, SIGNAL_2), dist
    )
    return PulseProbabilities(
        p_i=p_i,
        p_s1=clicks(SIGNAL_1),
        p_s2=clicks(SIGNAL_2),
        p_is1=clicks(HERALD, SIGNAL_1),
        p_is2=clicks(HERALD, SIGNAL_2),
        p_s1s2=clicks(SIGNAL_1, SIGNAL_2),
        p_is1s2=clicks(HERALD, SIGNAL_1, SIGNAL_2),
        p_coinc=p_i - herald_only,
    )


def category_probabilities(model: ExperimentModel) -> FloatArray:
    """Probabilities of the 8 exclusive click patterns.

    Index bit 0 is the herald, bit 1 signal bin 1, bit 2 signal bin 2.
    """
    dist = source_distribution(model)
    result = np.zeros(8)
    for pattern in range(8):
        clicked = tuple(d for bit, d in enumerate(DETECTORS) if pattern >> bit & 1)
        dark = tuple(d for bit, d in enumerate(DETECTORS) if not pattern >> bit & 1)
        result[pattern] = click_pattern_probability(model, clicked, dark, dist)
    return result


def expected_counts(model: ExperimentModel, pulses: int) -> Dict[str, float]:
    probs = pulse_probabilities(model)
    result = {"pulses": float(pulses)}
    for name, value in probs.tracked().items():
        result[name] = value * pulses
    return result


def car_theory(model: ExperimentModel) -> float:
    probs = pulse_probabilities(model)
    denominator = probs.p_i * probs.p_s
    if denominator <= 0.0:
        raise UndefinedResultError("CAR is undefined: no herald or signal clicks")
    return probs.p_coinc / denominator


def g2h_theory(model: ExperimentModel) -> float:
    probs = pulse_probabilities(model)
    denominator = probs.p_is1 * probs.p_is2
    if denominator <= 0.0:
        raise UndefinedResultError(
            "heralded g2 is undefined: no herald-signal coincidences"
        )
    return probs.p_i * probs.p_is1s2 / denominator


def unconditional_g2_clicks(model: ExperimentModel) -> float:
    """HBT value of the split signal beam from click probabilities."""
    probs = pulse_probabilities(model)
    denominator = probs.p_s1 * probs.p_s2
    if denominator <= 0.0:
        raise UndefinedResultError("unconditional g2 is undefined: no signal clicks")
    return probs.p_s1s2 / denominator


def klyshko_theory(
    model: ExperimentModel, corrected: bool = True
) -> Tuple[float, float]:
    """(signal, idler) Klyshko coefficients from the click probabilities."""
    probs = pulse_probabilities(model)
    if probs.p_i <= 0.0 or probs.p_s <= 0.0:
        raise UndefinedResultError("Klyshko coefficients need non-zero singles")
    coincidences = probs.p_coinc
    if corrected:
        coincidences -= probs.p_i * probs.p_s
    return coincidences / probs.p_i, coincidences / probs.p_s


def heralded_state(model: ExperimentModel) -> PhotonNumberDistribution:
    """Signal photon number at the source conditioned on a herald click."""
    dist = source_distribution(model)
    herald_dark = model.dark_click(HERALD)
    numbers = dist.numbers.astype(np.float64)
    click_given_n = 1.0 - (1.0 - herald_dark) * (1.0 - model.eta_idler) ** numbers
    joint = dist.probs * click_given_n
    p_i = float(joint.sum())
    if p_i <= 0.0:
        raise UndefinedResultError("heralded state is undefined: herald never clicks")
    return PhotonNumberDistribution(joint / p_i, dist.tail_bound / p_i)


def heralded_mean_and_parity_theory(model: ExperimentModel) -> Tuple[float, float]:
    state = heralded_state(model)
    return state.mean(), state.parity()


def heralded_single_click_theory(model: ExperimentModel) -> float:
    """Probability of exactly one signal-bin click given a herald click.

    The heralded state goes through the signal-arm loss channel onto an ideal
    two-bin detector; the per-bin dark probability d enters the detector as
    -2 log(1 - d), which reproduces independent dark clicks exactly.
    """
    if model.signal_split != 0.5:
        raise DomainError(
            f"the two-bin detector needs a balanced split, got {model.signal_split!r}"
        )
    arriving = binomial_loss_transform(heralded_state(model), model.eta_signal)
    dark = -SIGNAL_BINS * float(np.log1p(-model.dark_click(SIGNAL_1)))
    detector = ClickDetectorConfig(SIGNAL_BINS, efficiency=1.0, dark_prob=dark)
    return click_probability(arriving, detector, 1)


def mean_for_car(
    target_car: float,
    eta_idler: float = DEFAULT_ETA_IDLER,
    eta_signal: float = DEFAULT_ETA_SIGNAL,
    mode_count: int = 1,
    signal_split: float = 0.5,
    dark_prob: float = 0.0,
) -> float:
    """Source brightness at which the model reaches the target CAR."""
    if target_car <= 1.0:
        raise DomainError(f"target CAR must exceed 1, got {target_car!r}")

    def model_at(mean: float) -> ExperimentModel:
        return ExperimentModel(
            TwinBeamState(mean, mode_count),
            eta_idler=eta_idler,
            eta_signal=eta_signal,
            signal_split=signal_split,
            dark_prob=dark_prob,
        )

    def residual(log_mean: float) -> float:
        return float(np.log(car_theory(model_at(float(np.exp(log_mean))))))

    target = float(np.log(target_car))
    # CAR ~ 1/mean at low gain; with dark clicks it peaks near
    # dark_prob / sqrt(eta_idler * eta_signal) and falls back to 1 below that
    efficiency = np.sqrt(eta_idler * eta_signal)
    peak = dark_prob / efficiency if efficiency > 0.0 else 0.0
    low, high = np.log(max(1e-8, 2.0 * peak)), np.log(5.0)
    try:
        log_mean = optimize.brentq(
            lambda x: residual(x) - target, low, high, xtol=1e-14
        )
    except ValueError:
        raise OutOfDomainError(
            f"CAR {target_car} is out of reach for mean photon numbers in "
            f"[{np.exp(low):.1e}, {np.exp(high):.1e}]"
        )
    mean = float(np.exp(log_mean))
    logging.debug(f"CAR {target_car} reached at mean photon number {mean:.6e}")
    return mean


def g2h_band(
    model: ExperimentModel, efficiencies: Iterable[float]
) -> List[Tuple[float, float]]:
    """Heralded g2 over a range of herald efficiencies at fixed source."""
    return [
        (eta, g2h_theory(model.replace(eta_idler=eta))) for eta in efficiencies
    ]
