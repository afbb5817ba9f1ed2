"""Per-cycle queue metrics, aggregation helpers, and correlation reports.

The headline evaluation number for a run is the per-cycle total queue: for
each signal cycle, take every lane's maximum queue over the cycle's ticks,
reduce each approach to its worse lane, and sum the four approaches.  Lower
is better; the metric is monotone in congestion even when queues exceed the
nominal lane storage.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import ContractViolation
from ..sim import APPROACHES, N_LANES, N_PHASES, PHASE_SERVED, TickReport


@dataclass(frozen=True)
class CycleRecord:
    """Queue statistics of one completed signal cycle."""

    cycle_index: int
    approach_max_queue: tuple
    q_cycle: int
    cycle_len_s: int
    green_s: tuple
    phase_max_queue: tuple
    regime: str = ""

    def __post_init__(self) -> None:
        if len(self.approach_max_queue) != len(APPROACHES):
            raise ValueError("need one max queue per approach")
        if self.q_cycle != sum(self.approach_max_queue):
            raise ValueError("total must equal the summed approach maxima")


def cycle_queue_metric(tick_queues: Sequence[Sequence[int]], cycle_index: int = 0,
                       green_s: Sequence[float] = (0.0,) * N_PHASES,
                       regime: str = "") -> CycleRecord:
    """Reduce one cycle's per-tick lane queues to a :class:`CycleRecord`.

    ``tick_queues`` holds one 8-lane queue-length row per tick of the cycle.
    Per lane take the max over ticks, per approach the max over its lanes,
    then sum the approaches.  The per-phase maxima group the same lane maxima
    by the lanes each phase serves.
    """
    arr = np.asarray(tick_queues)
    if arr.size == 0:
        raise ValueError("empty tick log: a cycle needs at least one tick")
    if arr.ndim != 2 or arr.shape[1] != N_LANES:
        raise ValueError(f"tick log must be T x {N_LANES} queue lengths")
    lane_max = arr.max(axis=0)
    approach_max = tuple(
        int(max(lane_max[2 * a], lane_max[2 * a + 1])) for a in range(len(APPROACHES))
    )
    phase_max = tuple(
        int(max(lane_max[i] for i in PHASE_SERVED[p])) for p in range(N_PHASES)
    )
    return CycleRecord(
        cycle_index=cycle_index,
        approach_max_queue=approach_max,
        q_cycle=sum(approach_max),
        cycle_len_s=arr.shape[0],
        green_s=tuple(float(g) for g in green_s),
        phase_max_queue=phase_max,
        regime=regime,
    )


class CycleTracker:
    """Accumulates tick reports and emits a record at each cycle wrap.

    The simulator flags ``cycle_completed`` on the first tick of the new
    cycle, so the tracker finalizes its buffer before absorbing that tick.
    A trailing partial cycle is dropped unless :meth:`flush` is called.
    Cycles are tagged with the flow regime active when the cycle started.
    """

    def __init__(self) -> None:
        self._tick_queues: list = []
        self._green_ticks = [0.0] * N_PHASES
        self._start_regime = ""
        self._next_index = 0

    def feed(self, report: TickReport, regime: str = "") -> CycleRecord | None:
        record = None
        if report.cycle_completed and self._tick_queues:
            record = self._finalize()
        if not self._tick_queues:
            self._start_regime = regime
        self._tick_queues.append(report.queue_lengths)
        if not report.in_yellow:
            self._green_ticks[report.phase] += 1.0
        return record

    def _finalize(self) -> CycleRecord:
        record = cycle_queue_metric(
            self._tick_queues,
            cycle_index=self._next_index,
            green_s=tuple(self._green_ticks),
            regime=self._start_regime,
        )
        self._next_index += 1
        self._tick_queues = []
        self._green_ticks = [0.0] * N_PHASES
        return record

    def flush(self) -> CycleRecord | None:
        """Finalize a trailing partial cycle, if any ticks are buffered."""
        if not self._tick_queues:
            return None
        return self._finalize()


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1); std is 0 for one value."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values to aggregate")
    mean = float(arr.mean())
    std = 0.0 if arr.size < 2 else float(arr.std(ddof=1))
    return mean, std


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Pearson correlation; None marks an undefined value (zero variance)."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.size < 2:
        raise ValueError("need two equally long series of length >= 2")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        return None
    return float((xc @ yc) / (sx * sy))


@dataclass(frozen=True)
class CorrelationReport:
    """Adaptivity diagnostics over a run's cycles."""

    n_cycles: int
    green_vs_queue: tuple  # per phase: r between allocated green and phase max queue
    cycle_len_vs_q: float | None


def correlation_report(records: Sequence[CycleRecord]) -> CorrelationReport:
    """Per-phase correlation between allocated green and the phase's max
    queue, plus cycle length against total queue.  Requires at least 10
    cycles to say anything meaningful."""
    if len(records) < 10:
        raise ContractViolation("correlation report needs at least 10 cycles")
    per_phase = []
    for p in range(N_PHASES):
        greens = [r.green_s[p] for r in records]
        queues = [r.phase_max_queue[p] for r in records]
        per_phase.append(pearson(greens, queues))
    lens = [r.cycle_len_s for r in records]
    totals = [r.q_cycle for r in records]
    return CorrelationReport(
        n_cycles=len(records),
        green_vs_queue=tuple(per_phase),
        cycle_len_vs_q=pearson(lens, totals),
    )


# -- CSV output ---------------------------------------------------------------

CYCLES_CSV_HEADER = ("cycle_index", "Q_cycle", "Q_N", "Q_E", "Q_S", "Q_W",
                     "cycle_len_s", "g1", "g2", "g3", "g4", "regime")


def write_cycles_csv(path, records: Iterable[CycleRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CYCLES_CSV_HEADER)
        for r in records:
            writer.writerow([
                r.cycle_index, r.q_cycle,
                r.approach_max_queue[0], r.approach_max_queue[1],
                r.approach_max_queue[2], r.approach_max_queue[3],
                r.cycle_len_s,
                r.green_s[0], r.green_s[1], r.green_s[2], r.green_s[3],
                r.regime,
            ])


def read_cycles_csv(path) -> list[CycleRecord]:
    records = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            approach = tuple(int(row[k]) for k in ("Q_N", "Q_E", "Q_S", "Q_W"))
            records.append(CycleRecord(
                cycle_index=int(row["cycle_index"]),
                approach_max_queue=approach,
                q_cycle=int(row["Q_cycle"]),
                cycle_len_s=int(row["cycle_len_s"]),
                green_s=tuple(float(row[f"g{i}"]) for i in range(1, 5)),
                phase_max_queue=(0, 0, 0, 0),
                regime=row["regime"],
            ))
    return records


def write_events_csv(path, events: Iterable[tuple]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("tick", "lane", "event", "vehicle_id"))
        writer.writerows(events)
