"""Observation encodings of the intersection state for the controllers.

Four families: a raw 8-scalar summary, a normalized 19-component vector, a
learned autoencoder latent of that vector, and a fixed random-grid transform
that expands the 19 components to 68 features by sampling factorized feature
planes with bilinear interpolation.  Every encoding is a pure function of the
simulation state (plus fixed parameters), so repeated calls at the same tick
return identical vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .neural import Mlp
from .sim import APPROACHES, N_PHASES, SimState

EXPANDED_DIM = 19
KPLANES_DIM = 68

# component layout of the expanded vector
_IDX_TC = 0
_IDX_PHASE = slice(1, 5)
_IDX_TP = 5
_IDX_NCYC = 6
_IDX_Q = slice(7, 11)
_IDX_DQ = slice(11, 15)
_IDX_G = slice(15, 19)


@dataclass(frozen=True)
class StateNormalizers:
    """Constants dividing the raw state components into [0, 1] ranges."""

    queue_max: float = 25.0
    green_max_s: float = 40.0
    cycle_time_max_s: float = 180.0
    cycles_max: float = 72.0

    def __post_init__(self) -> None:
        for name in ("queue_max", "green_max_s", "cycle_time_max_s", "cycles_max"):
            if getattr(self, name) <= 0.0:
                raise ConfigurationError(f"{name} must be positive")

    @staticmethod
    def for_horizon(horizon_s: float, nominal_cycle_s: float = 100.0) -> "StateNormalizers":
        """Normalizers whose cycle-count scale matches a run horizon."""
        if horizon_s <= 0.0 or nominal_cycle_s <= 0.0:
            raise ConfigurationError("horizon and nominal cycle must be positive")
        return StateNormalizers(cycles_max=max(1.0, horizon_s / nominal_cycle_s))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.queue_max, self.green_max_s, self.cycle_time_max_s, self.cycles_max],
            dtype=np.float64,
        )

    @staticmethod
    def from_array(values: np.ndarray) -> "StateNormalizers":
        q, g, c, n = (float(v) for v in values)
        return StateNormalizers(queue_max=q, green_max_s=g, cycle_time_max_s=c, cycles_max=n)


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def baseline_state(sim: SimState) -> np.ndarray:
    """Raw 8-scalar summary: cycle length, per-phase programmed greens, the
    1-based active phase, remaining green of the active phase, and the total
    queue (per-approach maxima summed).  Nothing is normalized."""
    greens = sim.programmed_green_s
    cycle_len = sum(greens) + N_PHASES * sim.plan.yellow_s
    remaining = max(greens[sim.current_phase] - sim.phase_elapsed_s, 0.0)
    total_q = float(sum(sim.approach_queues()))
    return np.array(
        [cycle_len, greens[0], greens[1], greens[2], greens[3],
         sim.current_phase + 1, remaining, total_q],
        dtype=np.float64,
    )


def expanded_state(sim: SimState, prev_q: np.ndarray,
                   norms: StateNormalizers = StateNormalizers()) -> np.ndarray:
    """Normalized 19-component observation.

    Layout: cycle-elapsed time, 4-D one-hot active phase, phase-elapsed green,
    completed-cycle count, per-approach max queues, their change since the
    previous decision point, and the programmed greens.  ``prev_q`` holds the
    raw per-approach queues from the previous decision point (zeros at the
    start of an episode).  Queue components clamp into [0, 1] and the change
    components into [-1, 1], so saturated lanes cannot push the vector out of
    its documented range.
    """
    prev = np.asarray(prev_q, dtype=np.float64)
    if prev.shape != (len(APPROACHES),):
        raise ContractViolation("prev_q must hold one queue per approach")
    out = np.zeros(EXPANDED_DIM, dtype=np.float64)
    out[_IDX_TC] = _clamp01(sim.cycle_elapsed_s / norms.cycle_time_max_s)
    out[1 + sim.current_phase] = 1.0
    out[_IDX_TP] = _clamp01(sim.phase_elapsed_s / norms.green_max_s)
    out[_IDX_NCYC] = _clamp01(sim.cycles_completed / norms.cycles_max)
    q_now = np.array(sim.approach_queues(), dtype=np.float64)
    out[_IDX_Q] = np.clip(q_now / norms.queue_max, 0.0, 1.0)
    out[_IDX_DQ] = np.clip((q_now - prev) / norms.queue_max, -1.0, 1.0)
    out[_IDX_G] = np.clip(
        np.array(sim.programmed_green_s, dtype=np.float64) / norms.green_max_s, 0.0, 1.0
    )
    return out


def bilinear_sample(plane: np.ndarray, u: float, v: float) -> np.ndarray:
    """Bilinearly interpolate a regular grid at clamped coordinates.

    The grid's nodes sit at coordinates k/(R-1) along each of the first two
    axes; trailing axes (the per-node feature vectors kept by the planes)
    interpolate componentwise.
    """
    grid = np.asarray(plane, dtype=np.float64)
    if grid.ndim < 2 or grid.shape[0] < 2 or grid.shape[1] < 2:
        raise ConfigurationError("plane must be at least 2x2")
    x = _clamp01(float(u)) * (grid.shape[0] - 1)
    y = _clamp01(float(v)) * (grid.shape[1] - 1)
    i0 = min(int(x), grid.shape[0] - 2)
    j0 = min(int(y), grid.shape[1] - 2)
    tu = x - i0
    tv = y - j0
    return ((1.0 - tu) * (1.0 - tv) * grid[i0, j0]
            + tu * (1.0 - tv) * grid[i0 + 1, j0]
            + (1.0 - tu) * tv * grid[i0, j0 + 1]
            + tu * tv * grid[i0 + 1, j0 + 1])


# continuous feature groups of the expanded vector: (name, component indices,
# rescale from [-1,1] to [0,1] before sampling)
_KPLANES_GROUPS = (
    ("time", (_IDX_TC, _IDX_TP, _IDX_NCYC), False),
    ("queue", tuple(range(7, 11)), False),
    ("dq", tuple(range(11, 15)), True),
    ("green", tuple(range(15, 19)), False),
)


class KPlanesParams:
    """Fixed random feature planes for the factorized 68-D transform.

    Each continuous group of the expanded state owns one R x R grid of
    F-dimensional feature vectors per unordered pair of its components.
    Group sizes (3, 4, 4, 4) give 3 + 6 + 6 + 6 = 21 planes.  Grids fill from
    a seeded uniform(0.5, 1.5) draw, are frozen after construction, and the
    same seed always reproduces the same grids.
    """

    def __init__(self, seed: int, resolution: int = 8, feature_dim: int = 16) -> None:
        if resolution < 2:
            raise ConfigurationError("grid resolution must be at least 2")
        if feature_dim < 1:
            raise ConfigurationError("feature dimension must be at least 1")
        self.seed = int(seed)
        self.resolution = resolution
        self.feature_dim = feature_dim
        rng = np.random.Generator(np.random.PCG64(self.seed))
        self.planes: list[np.ndarray] = []
        self._layout: list[tuple[str, int, int]] = []
        for name, indices, _rescale in _KPLANES_GROUPS:
            for a, b in combinations(range(len(indices)), 2):
                grid = rng.uniform(0.5, 1.5, size=(resolution, resolution, feature_dim))
                grid.flags.writeable = False
                self.planes.append(grid)
                self._layout.append((name, a, b))

    @property
    def plane_count(self) -> int:
        return len(self.planes)

    @property
    def output_dim(self) -> int:
        return len(_KPLANES_GROUPS) * self.feature_dim + N_PHASES


def kplanes_transform(params: KPlanesParams, state: np.ndarray) -> np.ndarray:
    """Expand a 19-component state through the fixed feature planes.

    For every component pair inside a group, the pair's plane is sampled
    bilinearly at the two component values; the samples multiply element-wise
    into one feature vector per group.  The four group vectors concatenate
    with the one-hot phase, giving 4*F + 4 features.
    """
    s = np.asarray(state, dtype=np.float64)
    if s.shape != (EXPANDED_DIM,):
        raise ContractViolation(f"expected a {EXPANDED_DIM}-component state")
    pieces: list[np.ndarray] = []
    plane_idx = 0
    for _name, indices, rescale in _KPLANES_GROUPS:
        vals = s[list(indices)]
        if rescale:
            vals = (vals + 1.0) / 2.0
        features = np.ones(params.feature_dim, dtype=np.float64)
        for a, b in combinations(range(len(indices)), 2):
            features *= bilinear_sample(params.planes[plane_idx], vals[a], vals[b])
            plane_idx += 1
        pieces.append(features)
    pieces.append(s[_IDX_PHASE])
    return np.concatenate(pieces)


def encode(encoder: Mlp, state: np.ndarray) -> np.ndarray:
    """Deterministic forward pass of a trained encoder on one state vector."""
    s = np.asarray(state, dtype=np.float64)
    if s.ndim != 1 or s.shape[0] != encoder.layer_sizes[0]:
        raise ContractViolation(
            f"encoder expects {encoder.layer_sizes[0]} inputs, got shape {s.shape}"
        )
    return encoder.predict(s)


# -- controller-facing observation wrappers ---------------------------------


class BaselineObservation:
    kind = "baseline"
    dim = 8

    def observe(self, sim: SimState, prev_q: np.ndarray) -> np.ndarray:
        return baseline_state(sim)


class ExpandedObservation:
    kind = "expanded"
    dim = EXPANDED_DIM

    def __init__(self, norms: StateNormalizers = StateNormalizers()) -> None:
        self.norms = norms

    def observe(self, sim: SimState, prev_q: np.ndarray) -> np.ndarray:
        return expanded_state(sim, prev_q, self.norms)


class LatentObservation:
    """Autoencoder latent of the expanded state."""

    def __init__(self, encoder: Mlp, norms: StateNormalizers = StateNormalizers()) -> None:
        self.encoder = encoder
        self.norms = norms
        self.dim = encoder.layer_sizes[-1]
        self.kind = f"ae{self.dim}"

    def observe(self, sim: SimState, prev_q: np.ndarray) -> np.ndarray:
        return encode(self.encoder, expanded_state(sim, prev_q, self.norms))


class KPlanesObservation:
    kind = "kplanes"
    dim = KPLANES_DIM

    def __init__(self, params: KPlanesParams,
                 norms: StateNormalizers = StateNormalizers()) -> None:
        if params.output_dim != KPLANES_DIM:
            raise ConfigurationError(
                f"plane parameters produce {params.output_dim} features, expected {KPLANES_DIM}"
            )
        self.params = params
        self.norms = norms

    def observe(self, sim: SimState, prev_q: np.ndarray) -> np.ndarray:
        return kplanes_transform(self.params, expanded_state(sim, prev_q, self.norms))


def save_kplanes(params: KPlanesParams, path) -> None:
    """Write the feature grids (with their seed) in the shared weight format."""
    from .weights import save_arrays

    tag = f"kind=kplanes;resolution={params.resolution};feature_dim={params.feature_dim}"
    save_arrays(path, params.planes, tag=tag, seed=params.seed)


def load_kplanes(path) -> KPlanesParams:
    """Rebuild feature grids from a file written by :func:`save_kplanes`.

    Grids regenerate from the recorded seed and are checked against the
    stored arrays at float32 precision."""
    from .weights import load_arrays

    blob = load_arrays(path)
    fields = dict(item.split("=", 1) for item in blob.tag.split(";") if "=" in item)
    if fields.get("kind") != "kplanes":
        raise ConfigurationError(f"{path}: not a feature-grid file")
    params = KPlanesParams(
        seed=blob.seed,
        resolution=int(fields["resolution"]),
        feature_dim=int(fields["feature_dim"]),
    )
    if len(blob.arrays) != params.plane_count:
        raise ConfigurationError(f"{path}: wrong plane count")
    for stored, rebuilt in zip(blob.arrays, params.planes):
        if not np.array_equal(stored.astype(np.float32), rebuilt.astype(np.float32)):
            raise ConfigurationError(f"{path}: grids do not match the recorded seed")
    return params


REPRESENTATION_KINDS = ("baseline", "expanded", "ae4", "ae8", "ae16", "ae19", "ae32", "kplanes")

DEFAULT_KPLANES_SEED = 1234


def make_observation(kind: str, norms: StateNormalizers = StateNormalizers(),
                     ae_encoder: Mlp | None = None,
                     kplanes_params: KPlanesParams | None = None):
    """Build the observation wrapper for a representation kind."""
    if kind == "baseline":
        return BaselineObservation()
    if kind == "expanded":
        return ExpandedObservation(norms)
    if kind == "kplanes":
        params = kplanes_params or KPlanesParams(DEFAULT_KPLANES_SEED)
        return KPlanesObservation(params, norms)
    if kind.startswith("ae"):
        if ae_encoder is None:
            raise ConfigurationError(
                f"representation {kind!r} needs a pretrained encoder"
            )
        obs = LatentObservation(ae_encoder, norms)
        if obs.kind != kind:
            raise ConfigurationError(
                f"encoder latent size {obs.dim} does not match representation {kind!r}"
            )
        return obs
    raise ConfigurationError(
        f"unknown representation {kind!r}; expected one of {REPRESENTATION_KINDS}"
    )
