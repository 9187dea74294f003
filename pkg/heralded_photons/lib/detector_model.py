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

"""Multiplexed click detectors, their POVM diagonal and binomial loss."""

from typing import Tuple
import dataclasses
import math

import numpy as np
from scipy import special

from heralded_photons.lib.common import (
    DomainError,
    check_non_negative,
    check_probability,
)
from heralded_photons.lib.photon_statistics import (
    FloatArray,
    PhotonNumberDistribution,
    falling_factorial,
)

# exact integer binomials up to here, log-gamma above
EXACT_BINOMIAL_LIMIT = 64


@dataclasses.dataclass(frozen=True)
class ClickDetectorConfig:
    bins: int = 2
    efficiency: float = 1.0
    dark_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.bins < 1:
            raise DomainError(f"bins must be >= 1, got {self.bins}")
        check_probability("efficiency", self.efficiency)
        check_non_negative("dark_prob", self.dark_prob)


@dataclasses.dataclass(frozen=True, eq=False)
class POVMDiagonal:
    clicks: int
    weights: FloatArray

    @property
    def n_max(self) -> int:
        return int(self.weights.size - 1)

    def clamped(self) -> FloatArray:
        return np.clip(self.weights, 0.0, 1.0)


def binomial_coefficient(n: int, k: int) -> float:
    if k < 0 or k > n:
        return 0.0
    if n <= EXACT_BINOMIAL_LIMIT:
        return float(math.comb(n, k))
    return math.exp(
        special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)
    )


def log_binomial_table(n_max: int) -> FloatArray:
    """table[n, m] = log C(n, m); -inf where m > n."""
    table = np.full((n_max + 1, n_max + 1), -np.inf)
    for n in range(n_max + 1):
        m = np.arange(n + 1)
        if n <= EXACT_BINOMIAL_LIMIT:
            table[n, : n + 1] = [math.log(math.comb(n, j)) for j in m]
        else:
            table[n, : n + 1] = (
                special.gammaln(n + 1)
                - special.gammaln(m + 1)
                - special.gammaln(n - m + 1)
            )
    return table


def povm_click_diagonal(
    config: ClickDetectorConfig, k: int, n_max: int
) -> POVMDiagonal:
    """Diagonal of the k-click element of an N-bin multiplexed detector."""
    big_n = config.bins
    if not 0 <= k <= big_n:
        raise DomainError(f"clicks must be in [0, {big_n}], got {k}")
    n = np.arange(n_max + 1, dtype=np.float64)
    weights = np.zeros(n_max + 1)
    prefactor = binomial_coefficient(big_n, k)
    for m in range(k + 1):
        dark_bins = big_n + m - k
        no_click = 1.0 - config.efficiency * dark_bins / big_n
        weights += (
            prefactor
            * binomial_coefficient(k, m)
            * (-1) ** m
            * math.exp(-config.dark_prob * dark_bins / big_n)
            * no_click**n
        )
    return POVMDiagonal(k, weights)


def reduced_O1_diagonal(efficiency: float, n_max: int) -> POVMDiagonal:
    """One click out of two bins, no dark counts."""
    check_probability("efficiency", efficiency)
    n = np.arange(n_max + 1, dtype=np.float64)
    weights = 2.0 * ((1.0 - efficiency / 2.0) ** n - (1.0 - efficiency) ** n)
    return POVMDiagonal(1, weights)


def taylor_O1_coefficient(efficiency: float, order: int) -> float:
    """Coefficient of n(n-1)...(n-order+1) in the expansion of O_1."""
    return (
        2.0
        * (-efficiency) ** order
        * (2.0**-order - 1.0)
        / math.factorial(order)
    )


def taylor_O1_coefficients(efficiency: float, order: int) -> Tuple[float, ...]:
    if order not in (1, 2):
        raise DomainError(f"Taylor order must be 1 or 2, got {order}")
    check_probability("efficiency", efficiency)
    return tuple(taylor_O1_coefficient(efficiency, j) for j in range(1, order + 1))


def taylor_O1_weights(efficiency: float, order: int, n_max: int) -> FloatArray:
    n = np.arange(n_max + 1, dtype=np.int64)
    weights = np.zeros(n_max + 1)
    for j, coefficient in enumerate(taylor_O1_coefficients(efficiency, order), 1):
        weights += coefficient * falling_factorial(n, j)
    return weights


def taylor_O1_remainder_bound(efficiency: float, order: int, n: int) -> float:
    # the series alternates with shrinking terms while efficiency * n < 1
    if efficiency * n >= 1.0:
        raise DomainError(
            f"remainder bound needs efficiency * n < 1, got {efficiency * n!r}"
        )
    following = order + 1
    return abs(
        taylor_O1_coefficient(efficiency, following)
        * falling_factorial(np.array([n]), following)[0]
    )


def binomial_loss_transform(
    dist: PhotonNumberDistribution, transmission: float
) -> PhotonNumberDistribution:
    """P'(m) = sum_n P(n) C(n, m) t^m (1 - t)^(n - m)"""
    check_probability("transmission", transmission)
    n_max = dist.n_max
    if transmission == 1.0:
        return PhotonNumberDistribution(dist.probs, dist.tail_bound)
    if transmission == 0.0:
        probs = np.zeros(n_max + 1)
        probs[0] = float(dist.probs.sum())
        return PhotonNumberDistribution(probs, dist.tail_bound)
    n = np.arange(n_max + 1)[:, np.newaxis]
    m = np.arange(n_max + 1)[np.newaxis, :]
    log_kernel = (
        log_binomial_table(n_max)
        + m * math.log(transmission)
        + (n - m) * math.log1p(-transmission)
    )
    kernel = np.where(m <= n, np.exp(log_kernel), 0.0)
    # omitted mass above n_max can only land in 0..n_max or stay above
    return PhotonNumberDistribution(dist.probs @ kernel, dist.tail_bound)


def povm_expectation(dist: PhotonNumberDistribution, povm: POVMDiagonal) -> float:
    if povm.n_max != dist.n_max:
        raise DomainError(
            f"truncation mismatch: state n_max={dist.n_max}, POVM n_max={povm.n_max}"
        )
    return float(np.dot(dist.probs, povm.weights))


def click_probability(
    dist: PhotonNumberDistribution, config: ClickDetectorConfig, k: int
) -> float:
    return povm_expectation(dist, povm_click_diagonal(config, k, dist.n_max))
