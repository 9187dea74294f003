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

from collections import OrderedDict
from enum import Enum
from typing import Any, Dict, List, Optional, Set, Tuple
import dataclasses
import hashlib
import json
import os
import time

from heralded_photons.lib.estimators import FigureOfMerit
from heralded_photons.lib.pulse_simulator import CountRecord

SUMMARY_VERSION = "1.0"
SUMMARY_FILE = "summary.json"


class _JsonEncoder(json.JSONEncoder):
    def default(self, o: Any) -> Any:
        if "to_json" in dir(o):
            return o.to_json()
        if isinstance(o, Enum):
            return o.value
        if dataclasses.is_dataclass(o) and not isinstance(o, type):
            return dataclasses.asdict(o)
        return super().default(o)


class Summary:
    """Provenance of one hpl invocation, saved next to its outputs."""

    def __init__(self, subcommand: str) -> None:
        self.subcommand = subcommand
        self.config: Dict[str, Any] = {}
        self.seed: Optional[int] = None
        self.workers = 1
        self.timezone_offset = -time.localtime().tm_gmtoff
        self._records: List[Tuple[str, CountRecord]] = []
        self._figures: Dict[str, Dict[str, Optional[FigureOfMerit]]] = {}
        self._results: Optional[Dict[str, str]] = None
        self._started = (time.time(), time.monotonic())
        self._finished: Optional[Tuple[float, float]] = None

    def record(self, label: str, rec: CountRecord) -> None:
        self._records.append((label, rec))

    def figures(self, label: str, figures: Dict[str, Optional[FigureOfMerit]]) -> None:
        self._figures[label] = figures

    def finish(self) -> None:
        self._finished = (time.time(), time.monotonic())

    def hash_results(self, dirname: str) -> None:
        self._results = hash_dir(dirname, exclude={SUMMARY_FILE})

    def save(self, fname: str) -> None:
        with open(fname, "w", newline="\n") as f:
            json.dump(self, f, cls=_JsonEncoder, indent=4)

    def to_json(self) -> Any:
        if self._finished is None:
            self.finish()
        assert self._finished is not None

        result: Any = {
            "version": SUMMARY_VERSION,
            "subcommand": self.subcommand,
            "timezone": self.timezone_offset,
            "config": self.config,
            "seed": self.seed,
            "workers": self.workers,
            "time": {
                "started": self._started[0],
                "elapsed": self._finished[1] - self._started[1],
            },
        }
        if self._records:
            result["counts"] = {label: dict(r.to_rows()) for label, r in self._records}
        if self._figures:
            result["figures"] = self._figures
        if self._results is not None:
            result["results"] = self._results
        return result


def hash_dir(dirname: str, exclude: Optional[Set[str]] = None) -> Dict[str, str]:
    """sha1 of every file under dirname, keyed by '/'-joined relative path."""
    exclude = exclude or set()
    result: Dict[str, str] = {}

    for path, dirs, files in os.walk(dirname, topdown=True):
        relpath = os.path.relpath(path, dirname)
        if relpath == ".":
            relpath = ""
        for file in files:
            fname = os.path.join(relpath, file).replace(os.sep, "/")
            if fname in exclude:
                continue
            with open(os.path.join(path, file), "rb") as f:
                result[fname] = hashlib.sha1(f.read()).hexdigest()

    return OrderedDict(sorted(result.items()))
