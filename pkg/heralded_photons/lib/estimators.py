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

"""Figures of merit of a heralded source, estimated from click counts.

Count-level estimates are plain expressions over the tallies of a
CountRecord. Their standard errors come from first-order propagation over
the 8 exclusive click-pattern counts, treated as multinomial; gradients are
taken by complex-step differentiation so every expression below must stay
analytic (no abs, no min/max on the propagated path).
"""

from enum import Enum
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import cmath
import dataclasses
import logging
import math

from scipy import stats

from heralded_photons.lib.analytic_oracle import PulseProbabilities
from heralded_photons.lib.common import (
    DomainError,
    HplError,
    OutOfDomainError,
    UndefinedResultError,
    ZeroCountError,
)
from heralded_photons.lib.pulse_simulator import CountRecord

CountSymbols = Mapping[str, complex]
CountExpression = Callable[[CountSymbols], complex]

COMPLEX_STEP = 1e-20
# below this 3 * g2h * mu_s the second-order mean uses its series form
SERIES_THRESHOLD = 1e-8
# 1-sigma Poisson upper limit for zero observed events
ZERO_EVENT_UPPER_LIMIT = float(stats.chi2.ppf(stats.norm.cdf(1.0), 2) / 2)

SIGNAL_ARM = "signal"
IDLER_ARM = "idler"


class MethodTag(str, Enum):
    CAR = "car"
    KLYSHKO_RAW = "klyshko_raw"
    KLYSHKO_CORRECTED = "klyshko_corrected"
    G2_UNCONDITIONAL = "g2_unconditional"
    SCHMIDT_K = "schmidt_k"
    G2_HERALDED = "g2_heralded"
    MEAN_N_FIRST = "mean_n_first"
    MEAN_N_SECOND = "mean_n_second"
    PARITY = "parity"


@dataclasses.dataclass(frozen=True)
class FigureOfMerit:
    value: float
    std_err: float
    method_tag: MethodTag
    # std_err is an upper bound only, e.g. for zero observed triples
    one_sided: bool = False
    arm: Optional[str] = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise DomainError(f"{self.method_tag.value} value is not finite")
        if not self.std_err >= 0.0:
            raise DomainError(
                f"{self.method_tag.value} std_err must be non-negative, "
                f"got {self.std_err!r}"
            )

    @property
    def label(self) -> str:
        if self.arm is None:
            return self.method_tag.value
        return f"{self.method_tag.value}:{self.arm}"


def count_symbols(categories: Sequence[complex]) -> Dict[str, complex]:
    """CountRecord tallies from the 8 click-pattern counts.

    Pattern bit 0 is the herald, bit 1 signal bin 1, bit 2 signal bin 2.
    """

    def having(mask: int) -> complex:
        return sum(
            (v for pattern, v in enumerate(categories) if pattern & mask == mask),
            0j,
        )

    return {
        "pulses": sum(categories, 0j),
        "s_i": having(1),
        "s_s1": having(2),
        "s_s2": having(4),
        "c_is": categories[3] + categories[5] + categories[7],
        "c_is1": having(3),
        "c_is2": having(5),
        "c_s1s2": having(6),
        "c_is1s2": having(7),
    }


def probability_symbols(probs: PulseProbabilities) -> Dict[str, complex]:
    return {
        "pulses": 1.0,
        "s_i": probs.p_i,
        "s_s1": probs.p_s1,
        "s_s2": probs.p_s2,
        "c_is": probs.p_coinc,
        "c_is1": probs.p_is1,
        "c_is2": probs.p_is2,
        "c_s1s2": probs.p_s1s2,
        "c_is1s2": probs.p_is1s2,
    }


def signal_singles(c: CountSymbols) -> complex:
    """Logical-OR singles of the two signal bins."""
    return c["s_s1"] + c["s_s2"] - c["c_s1s2"]


def accidentals(c: CountSymbols) -> complex:
    return c["s_i"] * signal_singles(c) / c["pulses"]


def car_expression(c: CountSymbols) -> complex:
    return c["c_is"] / accidentals(c)


def klyshko_signal_raw(c: CountSymbols) -> complex:
    return c["c_is"] / c["s_i"]


def klyshko_idler_raw(c: CountSymbols) -> complex:
    return c["c_is"] / signal_singles(c)


def signal_single_click(c: CountSymbols) -> complex:
    """Heralds followed by exactly one signal click, per herald."""
    return (c["c_is"] - c["c_is1s2"]) / c["s_i"]


def klyshko_signal_corrected(c: CountSymbols) -> complex:
    return (c["c_is"] - accidentals(c)) / c["s_i"]


def klyshko_idler_corrected(c: CountSymbols) -> complex:
    return (c["c_is"] - accidentals(c)) / signal_singles(c)


def g2_unconditional_expression(c: CountSymbols) -> complex:
    return c["pulses"] * c["c_s1s2"] / (c["s_s1"] * c["s_s2"])


def g2_heralded_expression(c: CountSymbols) -> complex:
    return c["s_i"] * c["c_is1s2"] / (c["c_is1"] * c["c_is2"])


def schmidt_formula(g2: complex) -> complex:
    if g2.real <= 1.0:
        raise OutOfDomainError(
            f"Schmidt number needs g2 > 1, got g2 = {g2.real:.6g}"
        )
    return 1.0 / (g2 - 1.0)


def mean_first_formula(car_value: complex) -> complex:
    if car_value.real <= 1.0:
        raise OutOfDomainError(
            f"first-order mean photon number needs CAR > 1, got {car_value.real:.6g}"
        )
    return car_value / (car_value - 1.0)


def mean_second_formula(g2h: complex, mu_s: complex, mu_sc: complex) -> complex:
    """Physical root of mu_s = mu_sc n (1 - 3/4 mu_sc g2h n).

    mu_s is the herald-conditioned probability of a single click on the
    two-bin signal detector; it equals the raw Klyshko efficiency when no
    double clicks occur.
    """
    if mu_sc.real == 0.0:
        raise UndefinedResultError(
            "second-order mean photon number is undefined for mu_sc = 0"
        )
    if mu_sc.real < 0.0:
        raise OutOfDomainError(
            f"corrected signal efficiency must be positive, got {mu_sc.real:.6g}"
        )
    x = 3.0 * g2h * mu_s
    if x.real > 1.0:
        raise OutOfDomainError(
            f"1 - 3*g2h*mu_s = {1.0 - x.real:.6g} is negative "
            f"(g2h = {g2h.real:.6g}, mu_s = {mu_s.real:.6g})"
        )
    if x.real < SERIES_THRESHOLD:
        return mu_s / mu_sc * (1.0 + 0.75 * g2h * mu_s)
    # (1 - sqrt(1 - x)) / (x / 2) rewritten without the cancellation
    return 2.0 * mu_s / (mu_sc * (1.0 + cmath.sqrt(1.0 - x)))


def parity_formula(mean_n: complex, g2h: complex) -> complex:
    if g2h.real < 0.0:
        raise OutOfDomainError(f"parity needs g2h >= 0, got {g2h.real:.6g}")
    return 1.0 - 2.0 * mean_n + 2.0 * mean_n**2 * g2h


def mean_second_expression(c: CountSymbols) -> complex:
    return mean_second_formula(
        g2_heralded_expression(c), signal_single_click(c), klyshko_signal_corrected(c)
    )


def _evaluate(expression: CountExpression, symbols: CountSymbols) -> complex:
    try:
        return complex(expression(symbols))
    except ZeroDivisionError:
        zero = sorted(k for k, v in symbols.items() if v == 0)
        raise ZeroCountError(
            f"zero counts in {', '.join(zero) or 'a denominator'}; "
            "acquire for longer"
        )


# label -> (method, expression); labels are the rows of a figures table
FIGURE_EXPRESSIONS: Dict[str, Tuple[MethodTag, CountExpression]] = {
    "car": (MethodTag.CAR, car_expression),
    "klyshko_raw:signal": (MethodTag.KLYSHKO_RAW, klyshko_signal_raw),
    "klyshko_raw:idler": (MethodTag.KLYSHKO_RAW, klyshko_idler_raw),
    "klyshko_corrected:signal": (
        MethodTag.KLYSHKO_CORRECTED,
        klyshko_signal_corrected,
    ),
    "klyshko_corrected:idler": (MethodTag.KLYSHKO_CORRECTED, klyshko_idler_corrected),
    "g2_unconditional": (MethodTag.G2_UNCONDITIONAL, g2_unconditional_expression),
    "schmidt_k": (
        MethodTag.SCHMIDT_K,
        lambda c: schmidt_formula(g2_unconditional_expression(c)),
    ),
    "g2_heralded": (MethodTag.G2_HERALDED, g2_heralded_expression),
    "mean_n_first": (
        MethodTag.MEAN_N_FIRST,
        lambda c: mean_first_formula(car_expression(c)),
    ),
    "mean_n_second": (MethodTag.MEAN_N_SECOND, mean_second_expression),
    "parity": (
        MethodTag.PARITY,
        lambda c: parity_formula(mean_second_expression(c), g2_heralded_expression(c)),
    ),
}
FIGURE_LABELS: List[str] = list(FIGURE_EXPRESSIONS)


def propagate_poisson(expression: CountExpression, rec: CountRecord) -> float:
    """Delta-method standard error of an expression over the tallies."""
    counts = rec.categories()
    base = [complex(n) for n in counts]
    _evaluate(expression, count_symbols(base))
    gradient = []
    for j, n in enumerate(counts):
        if n == 0:
            gradient.append(0.0)
            continue
        shifted = list(base)
        shifted[j] += COMPLEX_STEP * 1j
        derivative = _evaluate(expression, count_symbols(shifted)).imag
        gradient.append(derivative / COMPLEX_STEP)
    linear = sum(n * g for n, g in zip(counts, gradient))
    variance = sum(n * g * g for n, g in zip(counts, gradient)) - linear**2 / rec.pulses
    return math.sqrt(max(variance, 0.0))


def _count_figure(
    expression: CountExpression,
    rec: CountRecord,
    tag: MethodTag,
    arm: Optional[str] = None,
) -> FigureOfMerit:
    value = _evaluate(expression, count_symbols([complex(n) for n in rec.categories()]))
    return FigureOfMerit(value.real, propagate_poisson(expression, rec), tag, arm=arm)


def _propagate_independent(
    formula: Callable[..., complex], inputs: Sequence[FigureOfMerit]
) -> float:
    variance = 0.0
    for k, figure in enumerate(inputs):
        if figure.std_err == 0.0:
            continue
        args = [complex(f.value) for f in inputs]
        args[k] += COMPLEX_STEP * 1j
        slope = formula(*args).imag / COMPLEX_STEP
        variance += (slope * figure.std_err) ** 2
    return math.sqrt(variance)


def _formula_figure(
    formula: Callable[..., complex], tag: MethodTag, *inputs: FigureOfMerit
) -> FigureOfMerit:
    value = formula(*(complex(f.value) for f in inputs))
    return FigureOfMerit(value.real, _propagate_independent(formula, inputs), tag)


def car(rec: CountRecord) -> FigureOfMerit:
    return _count_figure(car_expression, rec, MethodTag.CAR)


def klyshko(
    rec: CountRecord, corrected: bool = True
) -> Tuple[FigureOfMerit, FigureOfMerit]:
    """(signal, idler) Klyshko efficiencies."""
    if corrected:
        tag = MethodTag.KLYSHKO_CORRECTED
        signal, idler = klyshko_signal_corrected, klyshko_idler_corrected
    else:
        tag = MethodTag.KLYSHKO_RAW
        signal, idler = klyshko_signal_raw, klyshko_idler_raw
    return (
        _count_figure(signal, rec, tag, SIGNAL_ARM),
        _count_figure(idler, rec, tag, IDLER_ARM),
    )


def klyshko_single_click(rec: CountRecord) -> FigureOfMerit:
    return _count_figure(signal_single_click, rec, MethodTag.KLYSHKO_RAW)


def g2_unconditional(rec: CountRecord, arm: str = SIGNAL_ARM) -> FigureOfMerit:
    """HBT value of whichever beam was split onto the two bins.

    The idler arm is measured by swapping the beams, so its tallies arrive
    in the same split-channel fields.
    """
    if arm not in (SIGNAL_ARM, IDLER_ARM):
        raise DomainError(f"arm must be {SIGNAL_ARM!r} or {IDLER_ARM!r}, got {arm!r}")
    return _count_figure(
        g2_unconditional_expression, rec, MethodTag.G2_UNCONDITIONAL, arm
    )


def schmidt_k(g2: FigureOfMerit) -> FigureOfMerit:
    figure = _formula_figure(schmidt_formula, MethodTag.SCHMIDT_K, g2)
    if g2.value - 1.0 <= 3.0 * g2.std_err:
        logging.warning(
            f"g2 = {g2.value:.6g} +- {g2.std_err:.2g} is within 3 sigma of 1; "
            "Schmidt number is not significant"
        )
    return figure


def g2_heralded(rec: CountRecord) -> FigureOfMerit:
    if rec.c_is1s2 == 0 and rec.c_is1 > 0 and rec.c_is2 > 0:
        bound = ZERO_EVENT_UPPER_LIMIT * rec.s_i / (rec.c_is1 * rec.c_is2)
        return FigureOfMerit(0.0, bound, MethodTag.G2_HERALDED, one_sided=True)
    return _count_figure(g2_heralded_expression, rec, MethodTag.G2_HERALDED)


def mean_photon_first(car_value: FigureOfMerit) -> FigureOfMerit:
    return _formula_figure(mean_first_formula, MethodTag.MEAN_N_FIRST, car_value)


def mean_photon_second(
    g2h: FigureOfMerit, mu_s_raw: FigureOfMerit, mu_sc: FigureOfMerit
) -> FigureOfMerit:
    return _formula_figure(
        mean_second_formula, MethodTag.MEAN_N_SECOND, g2h, mu_s_raw, mu_sc
    )


def parity(mean_n: FigureOfMerit, g2h: FigureOfMerit) -> FigureOfMerit:
    return _formula_figure(parity_formula, MethodTag.PARITY, mean_n, g2h)


def all_figures(rec: CountRecord) -> Dict[str, Optional[FigureOfMerit]]:
    """Every figure with count-level covariance; None where undefined."""
    figures: Dict[str, Optional[FigureOfMerit]] = {}
    for label, (tag, expression) in FIGURE_EXPRESSIONS.items():
        try:
            if tag is MethodTag.G2_HERALDED:
                figures[label] = g2_heralded(rec)
            else:
                _, _, arm = label.partition(":")
                figures[label] = _count_figure(expression, rec, tag, arm or None)
        except (HplError, ArithmeticError) as e:
            logging.warning(f"{label}: {e}")
            figures[label] = None
    return figures


def figures_from_probabilities(probs: PulseProbabilities) -> Dict[str, Optional[float]]:
    """Estimator formulas evaluated on exact per-pulse probabilities."""
    symbols = probability_symbols(probs)
    values: Dict[str, Optional[float]] = {}
    for label, (_, expression) in FIGURE_EXPRESSIONS.items():
        try:
            values[label] = _evaluate(expression, symbols).real
        except HplError as e:
            logging.warning(f"{label}: {e}")
            values[label] = None
    return values
