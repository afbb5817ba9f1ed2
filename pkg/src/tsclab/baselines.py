"""Classical signal-timing controllers: fixed-time and Dynamic Webster.

Both speak the controller protocol used by the episode runner:
``begin_episode(sim)`` once per run, ``decide(sim) -> action`` at decision
points, and ``on_tick(sim, report)`` after every simulated second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .sim import (ACTION_CONTINUE, IntersectionLayout, N_LANES, N_PHASES,
                  PHASE_SERVED, PhasePlan, SimState, TickReport,
                  install_programmed_greens)


@dataclass(frozen=True)
class WebsterInput:
    """Inputs of the cycle-length formula: total lost time per cycle and the
    per-phase flow ratios (critical-lane flow over saturation flow)."""

    lost_time_s: float
    y_ratios: tuple

    def __post_init__(self) -> None:
        if self.lost_time_s <= 0.0:
            raise ConfigurationError("lost time must be positive")
        if len(self.y_ratios) != N_PHASES:
            raise ConfigurationError("need one flow ratio per phase")
        for y in self.y_ratios:
            if not math.isfinite(y) or y < 0.0:
                raise ConfigurationError("flow ratios must be finite and non-negative")


@dataclass(frozen=True)
class WebsterTimings:
    cycle_s: float
    greens_s: tuple
    saturated: bool


def webster_timings(inp: WebsterInput, g_min_s: float = 10.0, g_max_s: float = 40.0,
                    yellow_s: float = 5.0) -> WebsterTimings:
    """Cycle length (1.5L + 5)/(1 - sum Y) with proportional green split.

    The cycle is capped above at the longest feasible cycle 4*g_max + 4*Z;
    below it the formula's value is returned as-is, even when shorter than
    the minimal plan (the split greens are clamped to [g_min, g_max]
    individually, so the installed plan is always feasible).  A demand at or
    beyond saturation (sum Y >= 1) falls back to the maximum plan with the
    saturated flag set.
    """
    y_sum = float(sum(inp.y_ratios))
    cycle_cap = N_PHASES * g_max_s + N_PHASES * yellow_s
    if y_sum >= 1.0:
        return WebsterTimings(cycle_cap, (g_max_s,) * N_PHASES, True)
    c_o = (1.5 * inp.lost_time_s + 5.0) / (1.0 - y_sum)
    c_o = min(c_o, cycle_cap)
    effective = c_o - inp.lost_time_s
    if y_sum == 0.0:
        greens = (g_min_s,) * N_PHASES
    else:
        greens = tuple(
            min(max((y / y_sum) * effective, g_min_s), g_max_s) for y in inp.y_ratios
        )
    return WebsterTimings(c_o, greens, False)


def default_lost_time_s(layout: IntersectionLayout, plan: PhasePlan) -> float:
    """Per-cycle lost time: per phase, the startup lost time plus all but
    2 s of the yellow (the tail of yellow still discharges no one here, but
    drivers use roughly 2 s of it in the classical accounting)."""
    per_phase = layout.startup_lost_time_s + max(plan.yellow_s - 2.0, 0.0)
    return N_PHASES * per_phase


class FixedTimeController:
    """Runs the programmed plan untouched: always answers 'continue'."""

    controller_id = "fixed"

    def begin_episode(self, sim: SimState) -> None:
        pass

    def decide(self, sim: SimState) -> int:
        return ACTION_CONTINUE

    def on_tick(self, sim: SimState, report: TickReport) -> None:
        pass


class DynamicWebsterController:
    """Webster timings recomputed on a fixed interval from recent flows.

    Keeps a per-lane moving window of arrival counts; every
    ``recompute_interval_s`` it turns window rates into per-phase flow
    ratios (max over the phase's lanes, against the lane saturation flow),
    solves the cycle formula, and installs the resulting greens at the next
    phase boundary.  Before any data arrives the configured default rates
    (zero if not given) are used, which yields the minimal plan.
    """

    controller_id = "webster"

    def __init__(self, layout: IntersectionLayout, plan: PhasePlan,
                 recompute_interval_s: float = 145.0, flow_window_s: float = 900.0,
                 lost_time_s: float | None = None,
                 default_rates_veh_h: Sequence[float] | None = None) -> None:
        if recompute_interval_s <= 0.0 or flow_window_s <= 0.0:
            raise ConfigurationError("webster intervals must be positive")
        self.layout = layout
        self.plan = plan
        self.recompute_interval_s = recompute_interval_s
        self.flow_window_s = flow_window_s
        self.lost_time_s = (default_lost_time_s(layout, plan)
                            if lost_time_s is None else lost_time_s)
        if self.lost_time_s <= 0.0:
            raise ConfigurationError("lost time must be positive")
        self.default_rates_veh_h = (
            np.zeros(N_LANES) if default_rates_veh_h is None
            else np.asarray(default_rates_veh_h, dtype=np.float64)
        )
        if self.default_rates_veh_h.shape != (N_LANES,):
            raise ConfigurationError("need one default rate per lane")
        self.recompute_log: list[tuple] = []
        self.begin_episode(None)

    def begin_episode(self, sim: SimState | None) -> None:
        window = int(self.flow_window_s)
        self._window = np.zeros((window, N_LANES), dtype=np.int64)
        self._window_sum = np.zeros(N_LANES, dtype=np.int64)
        self._window_pos = 0
        self._seconds_seen = 0
        self._next_recompute = self.recompute_interval_s
        self._pending: tuple | None = None
        self.recompute_log = []

    def _window_rates_veh_h(self) -> np.ndarray:
        filled = min(self._seconds_seen, self._window.shape[0])
        if filled == 0:
            return self.default_rates_veh_h.copy()
        return self._window_sum * (3600.0 / filled)

    def _recompute(self, clock: int) -> None:
        rates = self._window_rates_veh_h()
        sat = self.layout.saturation_flow_veh_h
        y = tuple(
            max(rates[lane] / sat for lane in PHASE_SERVED[p]) for p in range(N_PHASES)
        )
        timings = webster_timings(
            WebsterInput(self.lost_time_s, y),
            g_min_s=self.plan.g_min_s, g_max_s=self.plan.g_max_s,
            yellow_s=self.plan.yellow_s,
        )
        self._pending = timings.greens_s
        self.recompute_log.append(
            (clock, *y, timings.cycle_s, *timings.greens_s, int(timings.saturated))
        )

    def on_tick(self, sim: SimState, report: TickReport) -> None:
        pos = self._window_pos
        self._window_sum -= self._window[pos]
        self._window[pos] = report.arrivals
        self._window_sum += self._window[pos]
        self._window_pos = (pos + 1) % self._window.shape[0]
        self._seconds_seen += 1
        if sim.clock >= self._next_recompute:
            self._recompute(sim.clock)
            self._next_recompute += self.recompute_interval_s
        if self._pending is not None and report.phase_changed:
            install_programmed_greens(sim, self._pending)
            self._pending = None

    def decide(self, sim: SimState) -> int:
        return ACTION_CONTINUE
