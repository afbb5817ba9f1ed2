"""Shared fixtures and the acceptance-criterion reporting hook."""

from __future__ import annotations

import numpy as np
import pytest

from tsclab.sim import (FlowProfile, IntersectionLayout, LANE_IDS, N_LANES,
                        PhasePlan, Vehicle, VehicleStatus)

# (label, passed, detail) tuples collected by the acceptance tests and
# replayed as one line each at the end of the pytest run
_CRITERION_LINES: list[tuple[str, bool, str]] = []


def record_criterion(label: str, passed: bool, detail: str) -> None:
    _CRITERION_LINES.append((label, passed, detail))
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance] {label}: {status} ({detail})", flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in _CRITERION_LINES:
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{label}: {status} ({detail})")


@pytest.fixture
def layout() -> IntersectionLayout:
    return IntersectionLayout()


@pytest.fixture
def plan() -> PhasePlan:
    return PhasePlan()


@pytest.fixture
def zero_flows() -> FlowProfile:
    return FlowProfile.uniform([0.0] * N_LANES)


def force_queue(sim, lane: int, count: int) -> None:
    """Plant ``count`` already-queued vehicles in a lane (test scaffolding)."""
    state = sim.lanes[lane]
    for _ in range(count):
        vid = sim._next_vehicle_id
        sim._next_vehicle_id += 1
        state.queue.append(Vehicle(
            vehicle_id=vid, lane=lane, entry_time=sim.clock,
            stopline_eta=float(sim.clock), status=VehicleStatus.QUEUED,
            queue_join_time=sim.clock,
        ))
        state.entered += 1


def lane_index(lane_id: str) -> int:
    return LANE_IDS.index(lane_id)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(20260816))
