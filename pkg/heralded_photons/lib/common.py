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

from typing import List, NoReturn, Optional
import logging
import math
import os
import sys
import time


DEFAULT_TOLERANCE = 1e-12
N_MAX_CAP = 512

# measured efficiencies and timing of the reference setup
DEFAULT_ETA_SIGNAL = 0.378
DEFAULT_ETA_IDLER = 0.321
DEFAULT_REP_RATE = 41e6
DEFAULT_GATE_WINDOW = 0.5e-9

THREADS_ENV = "HPL_THREADS"
DEBUG_ENV = "HPL_DEBUG"


class HplError(Exception):
    pass


class DomainError(HplError, ValueError):
    pass


class OutOfDomainError(DomainError):
    pass


class UndefinedResultError(HplError, ArithmeticError):
    pass


class ZeroCountError(UndefinedResultError):
    pass


class TruncationError(HplError):
    def __init__(self, message: str, tail_bound: float) -> None:
        super().__init__(message)
        self.tail_bound = tail_bound


class TagParseError(HplError):
    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class TagStreamError(HplError):
    pass


class CountOverflowError(HplError):
    pass


def check_probability(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise DomainError(f"{name} must lie in [0, 1], got {value!r}")


def check_non_negative(name: str, value: float) -> None:
    if not value >= 0.0:
        raise DomainError(f"{name} must be non-negative, got {value!r}")


class BufferHandler(logging.Handler):
    def __init__(self) -> None:
        logging.Handler.__init__(self)
        self._records: Optional[List[logging.LogRecord]] = None

    def start(self) -> None:
        self._records = []

    def stop(self, fname: Optional[str] = None) -> None:
        if fname is None:
            self._records = None
            return
        assert self._records is not None
        records, self._records = self._records, None
        with open(fname, "w", newline="\n") as f:
            for record in records:
                f.write("%s\n" % self.format(record))

    def emit(self, record: logging.LogRecord) -> None:
        if self._records is not None:
            self._records.append(record)


log_redirect = BufferHandler()


def init(name: str) -> None:
    level = logging.DEBUG if os.getenv(DEBUG_ENV) is not None else logging.INFO
    logging.basicConfig(
        level=level,
        format=f"{name} %(asctime)s [%(levelname)s] %(message)s",
        handlers=[logging.StreamHandler(), log_redirect],
    )


def exit_with_error_msg(error_msg: str) -> NoReturn:
    logging.fatal(error_msg)
    sys.exit(1)


def worker_count(requested: Optional[int] = None) -> int:
    env = os.getenv(THREADS_ENV)
    if env is not None:
        try:
            workers = int(env)
        except ValueError:
            exit_with_error_msg(f"{THREADS_ENV}={env!r} is not an integer")
        if workers < 1:
            exit_with_error_msg(f"{THREADS_ENV} must be at least 1, got {workers}")
        return workers
    if requested is not None:
        return max(1, requested)
    return os.cpu_count() or 1


def mkdir_if_ne(path: str) -> None:
    """mkdir if not exists"""
    if not os.path.exists(path):
        try:
            logging.info(f"Creating output directory {path!r}")
            os.mkdir(path)
        except FileNotFoundError:
            exit_with_error_msg(
                f"Could not create directory {path!r}. "
                "Make sure all intermediate directories exist."
            )
        return

    test_write_permission(path)


def test_write_permission(path: str) -> None:
    tmp_file_path = os.path.join(path, f"{time.time_ns()}.tmp")

    try:
        with open(tmp_file_path, "w") as tmp:
            tmp.close()
        os.remove(tmp_file_path)
    except OSError:
        logging.exception("Got an exception while checking write permission")
        sys.exit(1)


def format_number(value: Optional[float]) -> str:
    if value is None:
        return ""
    return f"{value:.12g}"


def system_check() -> None:
    if sys.version_info < (3, 8):
        exit_with_error_msg("Python 3.8 or newer is required")
