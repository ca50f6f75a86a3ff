"""Global control dependency measured by diffing basic blocks across runs."""
from __future__ import annotations

import csv
from dataclasses import dataclass

from .trace import EventKind, Trace

DEFAULT_FLIPS = 3
DEFAULT_THETA = 0


@dataclass
class CdpMeasurement:
    instance: int
    n: int
    flips_tried: int
    theta: int = DEFAULT_THETA

    @property
    def candidate(self) -> bool:
        return self.n > self.theta


def bb_set(trace: Trace) -> frozenset:
    ins = EventKind.INS
    return frozenset(e.bb for e in trace.events if e.kind is ins)


def block_diff(dry_blocks, flipped_blocks, mode: str = "symmetric") -> int:
    if mode == "symmetric":
        return len(dry_blocks ^ flipped_blocks)
    if mode == "oneway":
        return len(flipped_blocks - dry_blocks)
    raise ValueError(f"cdp_diff must be 'symmetric' or 'oneway', got {mode!r}")


def measure_cdp(dry: Trace, flipped, mode: str = "symmetric") -> int:
    """Largest number of differing basic blocks between ``dry`` and any flipped run.

    Returns ``-1`` when no flipped run is given.
    """
    flipped = list(flipped)
    if not flipped:
        return -1
    base = bb_set(dry)
    return max(block_diff(base, bb_set(f), mode) for f in flipped)


def candidates(measurements, theta: int = DEFAULT_THETA) -> list:
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    return [m.instance for m in measurements if m.n > theta]


def write_measurements(measurements, path, theta: int = DEFAULT_THETA) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instance_id", "n", "flips_tried", "candidate"])
        for m in measurements:
            w.writerow([m.instance, m.n, m.flips_tried, str(m.n > theta).lower()])


def read_measurements(path) -> list:
    with open(path, newline="") as fh:
        return [CdpMeasurement(int(r["instance_id"]), int(r["n"]), int(r["flips_tried"]))
                for r in csv.DictReader(fh)]
