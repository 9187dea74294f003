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

"""Photon-number statistics of single- and multi-mode twin beams."""

from typing import Optional, Union
import dataclasses
import math

import numpy as np
import numpy.typing as npt
from scipy import stats

from heralded_photons.lib.common import (
    DEFAULT_TOLERANCE,
    N_MAX_CAP,
    DomainError,
    check_non_negative,
)

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

_SUM_SLACK = 1e-12


@dataclasses.dataclass(frozen=True)
class TwinBeamState:
    mean_total: float
    mode_count: int = 1

    def __post_init__(self) -> None:
        check_non_negative("mean_total", self.mean_total)
        if self.mode_count < 1:
            raise DomainError(f"mode_count must be >= 1, got {self.mode_count}")

    @property
    def mean_per_mode(self) -> float:
        return self.mean_total / self.mode_count


@dataclasses.dataclass(frozen=True, eq=False)
class PhotonNumberDistribution:
    """Truncated diagonal of a state in the Fock basis.

    ``probs[n]`` is P(n) for n = 0..n_max; ``tail_bound`` bounds the mass
    above n_max that the vector omits.
    """

    probs: FloatArray
    tail_bound: float = 0.0

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise DomainError("probs must be a non-empty vector")
        if np.any(probs < -_SUM_SLACK) or np.any(probs > 1.0 + _SUM_SLACK):
            raise DomainError("probabilities must lie in [0, 1]")
        total = float(probs.sum())
        if total > 1.0 + _SUM_SLACK or total + self.tail_bound < 1.0 - _SUM_SLACK:
            raise DomainError(
                f"probabilities sum to {total!r} with tail bound "
                f"{self.tail_bound!r}, expected 1"
            )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_max(self) -> int:
        return int(self.probs.size - 1)

    @property
    def numbers(self) -> IntArray:
        return np.arange(self.probs.size, dtype=np.int64)

    def mean(self) -> float:
        return float(np.dot(self.numbers, self.probs))

    def factorial_moment(self, order: int) -> float:
        """E[n (n-1) ... (n-order+1)]"""
        return float(np.dot(falling_factorial(self.numbers, order), self.probs))

    def g2(self) -> float:
        mean = self.mean()
        if mean == 0.0:
            raise DomainError("g2 is undefined for the vacuum")
        return self.factorial_moment(2) / mean**2

    def parity(self) -> float:
        signs = np.where(self.numbers % 2 == 0, 1.0, -1.0)
        return float(np.dot(signs, self.probs))


def falling_factorial(n: IntArray, order: int) -> FloatArray:
    result = np.ones(n.shape, dtype=np.float64)
    for j in range(order):
        result *= n - j
    return result


def _thermal_ratio(mean: float) -> float:
    return mean / (1.0 + mean)


def auto_n_max(
    state: TwinBeamState,
    tolerance: float = DEFAULT_TOLERANCE,
    cap: int = N_MAX_CAP,
) -> int:
    """Smallest n_max whose omitted mass is below tolerance, capped."""
    if state.mean_total == 0.0:
        return 0
    if state.mode_count == 1:
        q = _thermal_ratio(state.mean_total)
        n_max = max(0, math.ceil(math.log(tolerance) / math.log(q)) - 1)
        # the log ratio can round one short of the tail bound thermal_pmf reports
        while n_max < cap and q ** (n_max + 1) > tolerance:
            n_max += 1
        return min(n_max, cap)
    p = 1.0 / (1.0 + state.mean_per_mode)
    tails = stats.nbinom.sf(np.arange(cap + 1), state.mode_count, p)
    certified = np.flatnonzero(tails <= tolerance)
    return int(certified[0]) if certified.size else cap


def thermal_pmf(mean: float, n_max: int) -> PhotonNumberDistribution:
    check_non_negative("mean", mean)
    if n_max < 0:
        raise DomainError(f"n_max must be >= 0, got {n_max}")
    n = np.arange(n_max + 1, dtype=np.float64)
    if mean == 0.0:
        probs = np.zeros(n_max + 1)
        probs[0] = 1.0
        return PhotonNumberDistribution(probs, 0.0)
    q = _thermal_ratio(mean)
    probs = (1.0 - q) * q**n
    return PhotonNumberDistribution(probs, q ** (n_max + 1))


def multimode_total_pmf(
    state: TwinBeamState, n_max: Optional[int] = None
) -> PhotonNumberDistribution:
    """Total photon number of K equally populated thermal modes."""
    if n_max is None:
        n_max = auto_n_max(state)
    if state.mode_count == 1 or state.mean_total == 0.0:
        return thermal_pmf(state.mean_total, n_max)
    if n_max < 0:
        raise DomainError(f"n_max must be >= 0, got {n_max}")
    p = 1.0 / (1.0 + state.mean_per_mode)
    n = np.arange(n_max + 1)
    probs = stats.nbinom.pmf(n, state.mode_count, p)
    tail = float(stats.nbinom.sf(n_max, state.mode_count, p))
    return PhotonNumberDistribution(probs, tail)


def poisson_pmf(mean: float, n_max: int) -> PhotonNumberDistribution:
    check_non_negative("mean", mean)
    n = np.arange(n_max + 1)
    return PhotonNumberDistribution(
        stats.poisson.pmf(n, mean), float(stats.poisson.sf(n_max, mean))
    )


def fock_state(photons: int, n_max: int) -> PhotonNumberDistribution:
    if not 0 <= photons <= n_max:
        raise DomainError(f"|{photons}> does not fit below n_max={n_max}")
    probs = np.zeros(n_max + 1)
    probs[photons] = 1.0
    return PhotonNumberDistribution(probs, 0.0)


def sample_mode_occupations(
    state: TwinBeamState,
    rng: np.random.Generator,
    size: Optional[int] = None,
) -> IntArray:
    """Per-mode photon numbers, shared by signal and idler.

    Returns shape (mode_count,) or (size, mode_count). Sampling inverts the
    geometric CDF: P(n >= j) = q**j.
    """
    shape = (state.mode_count,) if size is None else (size, state.mode_count)
    if state.mean_total == 0.0:
        return np.zeros(shape, dtype=np.int64)
    q = _thermal_ratio(state.mean_per_mode)
    u = 1.0 - rng.random(shape)
    return np.floor(np.log(u) / math.log(q)).astype(np.int64)


def unconditional_g2_theory(state: Union[TwinBeamState, float]) -> float:
    modes = float(state.mode_count) if isinstance(state, TwinBeamState) else state
    if modes <= 0:
        raise DomainError(f"mode count must be positive, got {modes!r}")
    return 1.0 + 1.0 / modes
