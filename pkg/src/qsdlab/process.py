"""Event-driven simulation kernel.

Primitives (exponential clocks, Poisson thinning along a deterministic
flow) plus the generic path driver used by every estimator.  Model
specific stepping lives in :mod:`qsdlab.models`; this module stays model
agnostic except for the dispatch inside :func:`simulate_path` /
:func:`run_path`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import SimulationFault, ThinningBoundError, ValidationError
from .rng import RngStream


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AbsorbedState:
    """A live point of the state space, or the cemetery.

    The cemetery is absorbing: once dead, every later state is dead.
    """

    point: np.ndarray | None  # None encodes the cemetery

    @classmethod
    def live(cls, point) -> "AbsorbedState":
        return cls(np.asarray(point, dtype=float))

    @classmethod
    def cemetery(cls) -> "AbsorbedState":
        return cls(None)

    @property
    def alive(self) -> bool:
        return self.point is not None


CEMETERY = AbsorbedState.cemetery()

# event kinds
STATE_JUMP = "state-jump"
CATASTROPHE = "catastrophe"
EXTINCTION = "extinction"


@dataclass(frozen=True)
class JumpEvent:
    time: float
    kind: str  # STATE_JUMP | CATASTROPHE | EXTINCTION
    size: np.ndarray | float | None = None  # displacement vector or fraction


@dataclass(frozen=True)
class PathOutcome:
    """One simulated trajectory.

    ``skeleton`` holds (time, state) at events and at the requested sample
    grid only (sparse storage).  ``tau_abs`` is +inf when absorption did
    not happen before the horizon.
    """

    skeleton: tuple[tuple[float, AbsorbedState], ...]
    tau_abs: float
    events: tuple[JumpEvent, ...]
    stream: RngStream

    def __post_init__(self):
        times = [t for t, _ in self.skeleton]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("skeleton times must be strictly increasing")
        for t, state in self.skeleton:
            if t > self.tau_abs and state.alive:
                raise ValidationError("live state recorded after absorption")
        if any(ev.time > self.tau_abs for ev in self.events):
            raise ValidationError("event after absorption time")

    @property
    def absorbed(self) -> bool:
        return math.isfinite(self.tau_abs)


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def sample_waiting_time(total_rate: float, u: float) -> float:
    """Inverse-transform exponential waiting time.

    Returns -log(u)/total_rate; +inf when the rate is zero.  ``u`` must be
    drawn from the open interval (0, 1) so the log never sees 0.
    """
    if total_rate < 0:
        raise ValueError(f"negative rate: {total_rate}")
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie in (0,1), got {u}")
    if total_rate == 0.0:
        return math.inf
    return -math.log(u) / total_rate


def _open_uniform(gen: np.random.Generator) -> float:
    # gen.random() can return exactly 0.0; map it into the open interval
    u = gen.random()
    while u == 0.0:
        u = gen.random()
    return u


def thinning_next_jump(
    rate_at: Callable[[np.ndarray], float],
    rate_bound: float,
    flow: Callable[[np.ndarray, float], np.ndarray],
    x0: np.ndarray,
    horizon: float,
    gen: np.random.Generator,
) -> tuple[float | None, np.ndarray]:
    """First point of an inhomogeneous PPP with intensity t -> rate_at(flow(x0,t)).

    Proposes at the constant ``rate_bound`` and accepts with ratio
    rate/bound.  An observed rate above the bound aborts the simulation
    (never clipped).  Returns (jump_time, pre-jump state) or
    (None, state at horizon).
    """
    if rate_bound < 0:
        raise ValueError("rate bound must be nonnegative")
    x0 = np.asarray(x0, dtype=float)
    if rate_bound == 0.0:
        return None, flow(x0, horizon)
    t = 0.0
    while True:
        t += sample_waiting_time(rate_bound, _open_uniform(gen))
        if t >= horizon:
            return None, flow(x0, horizon)
        x = flow(x0, t)
        rate = rate_at(x)
        if rate > rate_bound * (1.0 + 1e-12):
            raise ThinningBoundError(
                f"rate {rate} exceeds declared bound {rate_bound} at t={t}"
            )
        if gen.random() * rate_bound < rate:
            return t, x


# --------------------------------------------------------------------------
# path driver
# --------------------------------------------------------------------------

@dataclass
class PathStats:
    """Per-path summary used by the estimators.

    ``states[k]`` is the state at ``times[k]`` (None once absorbed),
    ``confined[k]`` says the path never left the confinement region up to
    ``times[k]``.  ``integral`` accumulates f along the path up to the last
    sample time (piecewise exact for jump models, trapezoid on the Euler
    grid otherwise).
    """

    states: list
    alive: np.ndarray
    confined: np.ndarray
    tau_abs: float
    first_event: float
    n_events: int
    integral: float


def run_path(model, x0, times: Sequence[float], controls, stream: RngStream,
             f: Callable[[np.ndarray], float] | None = None,
             region=None) -> PathStats:
    """Simulate one path and record its state at the given sorted times."""
    from . import models  # engines live with the model definitions

    return models.drive_path(model, np.asarray(x0, dtype=float), list(times),
                             controls, stream.generator(), f, region)


def simulate_path(model, x0, horizon: float, controls, stream: RngStream,
                  sample_times: Sequence[float] | None = None) -> PathOutcome:
    """Full-path simulation with sparse skeleton storage.

    The skeleton keeps event times plus the optional ``sample_times`` grid.
    Identical (model, x0, horizon, controls, stream) reproduce the outcome
    byte for byte.
    """
    from . import models

    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise ValidationError("initial state must be finite")
    grid = sorted(t for t in (sample_times or []) if 0.0 < t <= horizon)
    return models.collect_path(model, x0, horizon, controls,
                               stream.generator(), grid, stream)
