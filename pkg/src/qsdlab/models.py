"""Concrete absorbed processes and their simulation engines.

Five model families share one driver (:func:`drive_path`):

* ``FiniteChainModel``  -- continuous-time sub-Markov chain (exact Gillespie),
* ``PureJumpModel``     -- pure jump process, exponential clocks (exact),
* ``CoordJumpModel``    -- pure jump, one coordinate at a time (exact),
* ``DriftJumpModel``    -- constant drift along -e1 plus thinned jumps,
* ``EcoEvoModel``       -- logistic Feller population coupled to a jump
  diffusion trait, Euler-Maruyama with thinned jumps and catastrophes.

Jump sizes are drawn by rejection from each model's *declared* envelope;
an evaluated density above its envelope aborts the run (clipping would
bias every extinction-rate estimate downstream).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import SimulationFault, ThinningBoundError, ValidationError
from .process import (CATASTROPHE, EXTINCTION, STATE_JUMP, AbsorbedState,
                      JumpEvent, PathOutcome, PathStats, _open_uniform,
                      sample_waiting_time, thinning_next_jump)


# --------------------------------------------------------------------------
# regions (compact exhaustion, audit domains)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    """Closed ball; ``norm`` is 2 or inf.  Convex, so a straight segment
    stays inside iff both endpoints do."""

    center: np.ndarray
    radius: float
    norm: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, float)))

    @property
    def dim(self) -> int:
        return self.center.size

    def contains(self, x) -> bool:
        d = np.asarray(x, float) - self.center
        if self.norm == 2.0:
            return float(d @ d) <= self.radius ** 2 * (1 + 1e-12)
        return float(np.max(np.abs(d))) <= self.radius * (1 + 1e-12)

    @property
    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    @property
    def volume(self) -> float:
        if self.norm == 2.0:
            return ball_volume(self.dim, self.radius)
        return (2.0 * self.radius) ** self.dim


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, float)))
        if np.any(self.hi <= self.lo):
            raise ValidationError("box needs hi > lo")

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, x) -> bool:
        x = np.asarray(x, float)
        return bool(np.all(x >= self.lo - 1e-12) and np.all(x <= self.hi + 1e-12))

    @property
    def bounding_box(self):
        return self.lo, self.hi

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


def ball_volume(dim: int, radius: float) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0) * radius ** dim


def sample_region(region, k: int, *, skip: int = 0) -> np.ndarray:
    """Low-discrepancy (Halton) points inside ``region``.

    Deterministic by construction: audit x-samples must not couple to the
    trajectory RNG.
    """
    from scipy.stats import qmc

    lo, hi = region.bounding_box
    sampler = qmc.Halton(d=region.dim, scramble=False)
    if skip:
        sampler.fast_forward(skip)
    out: list[np.ndarray] = []
    guard = 0
    while len(out) < k:
        pts = lo + sampler.random(max(4 * k, 16)) * (hi - lo)
        out.extend(p for p in pts if region.contains(p))
        guard += 1
        if guard > 100:
            raise ValidationError("region too thin for rejection sampling")
    return np.asarray(out[:k])


# --------------------------------------------------------------------------
# controls
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StepControls:
    """Discretization knobs for the diffusive parts.

    Pure-jump models ignore ``dt`` entirely (their laws are exact).
    ``positivity`` chooses the Feller-boundary scheme: "absorb" sends the
    population to the cemetery as soon as an Euler step drives N <= 0.
    """

    dt: float = 0.01
    positivity: str = "absorb"  # or "reflect"
    max_events: int = 10_000_000

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.positivity not in ("absorb", "reflect"):
            raise ValidationError(f"unknown positivity scheme {self.positivity!r}")


# --------------------------------------------------------------------------
# jump-size envelope rejection (shared)
# --------------------------------------------------------------------------

def _sample_jump(h, x, density_bound: float, support_radius: float,
                 dim: int, gen) -> np.ndarray:
    """Draw w with density h(x, .)/integral by rejection from the declared
    envelope h <= density_bound on the cube of half-width support_radius."""
    if density_bound <= 0:
        raise ValidationError("jump density envelope must be positive")
    for _ in range(1_000_000):
        w = gen.uniform(-support_radius, support_radius, size=dim)
        dens = h(x, w)
        if dens > density_bound * (1 + 1e-12):
            raise ThinningBoundError(
                f"jump density {dens} exceeds declared envelope {density_bound}")
        if gen.random() * density_bound < dens:
            return w
    raise ValidationError("jump envelope never accepts; inconsistent declaration")


# --------------------------------------------------------------------------
# pure jump model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PureJumpParams:
    """Pure jump process: from x, wait Exp(rho_J(x)+rho_e(x)); kill with
    probability rho_e/(rho_J+rho_e), else jump by w ~ h(x,.)/rho_J(x).

    ``h_vee`` is the declared density envelope h(x,w) <= h_vee*rho_J(x);
    jumps vanish outside the cube of half-width ``jump_radius``.
    """

    dimension: int
    h: Callable[[np.ndarray, np.ndarray], float]
    rho_J: Callable[[np.ndarray], float]
    rho_e: Callable[[np.ndarray], float]
    jump_radius: float
    h_vee: float
    rho_J_bound: float | None = None  # declared; violations abort


@dataclass(frozen=True)
class UniformBall:
    """Built-in instance: uniform jump rate h_J on B(0, R), killing rho_e1
    inside B(0, R) and rho_e2 >= rho_e1 + rho_J outside ("no stable
    position" holds)."""

    dimension: int = 1
    radius: float = 1.0
    h_J: float | None = None  # default chosen so rho_J = 1
    kill_inside: float = 0.5
    kill_outside: float = 1.6

    def __post_init__(self):
        if self.h_J is None:
            object.__setattr__(self, "h_J",
                               1.0 / ball_volume(self.dimension, self.radius))
        if self.kill_outside < self.kill_inside + self.rho_J - 1e-12:
            raise ValidationError(
                "uniform-ball instance needs kill_outside >= kill_inside + rho_J")

    @property
    def rho_J(self) -> float:
        return self.h_J * ball_volume(self.dimension, self.radius)

    def params(self) -> PureJumpParams:
        R, hJ, d = self.radius, self.h_J, self.dimension
        ke1, ke2 = self.kill_inside, self.kill_outside
        rj = self.rho_J

        def h(x, w):
            return hJ if float(w @ w) <= R * R else 0.0

        def rho_e(x):
            return ke1 if float(x @ x) <= R * R else ke2

        return PureJumpParams(
            dimension=d, h=h, rho_J=lambda x: rj, rho_e=rho_e,
            jump_radius=R, h_vee=hJ / rj, rho_J_bound=rj)


def pure_jump_step(params: PureJumpParams, x: np.ndarray, gen):
    """One exact event: returns (waiting time, ("jump", w) | ("killed", None))."""
    rj = params.rho_J(x)
    re = params.rho_e(x)
    if params.rho_J_bound is not None and rj > params.rho_J_bound * (1 + 1e-12):
        raise ThinningBoundError(f"rho_J({x})={rj} exceeds declared bound")
    total = rj + re
    if total <= 0:
        raise ValidationError("pure jump step needs rho_J + rho_e > 0")
    wait = sample_waiting_time(total, _open_uniform(gen))
    if gen.random() * total < re:
        return wait, ("killed", None)
    w = _sample_jump(params.h, x, params.h_vee * rj, params.jump_radius,
                     params.dimension, gen)
    return wait, ("jump", w)


# --------------------------------------------------------------------------
# coordinate-at-a-time jump model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CoordJumpParams:
    """Pure jump process whose jumps move one coordinate at a time.

    ``h_i(i, x, w)`` is the scalar jump density of coordinate i; the jump
    lands on coordinate i with probability rho_J_i/rho_J.  ``h_vee`` is the
    declared per-direction envelope h_i(x,w) <= h_vee * rho_J(x).
    """

    dimension: int
    h_i: Callable[[int, np.ndarray, float], float]
    rho_J_i: Callable[[int, np.ndarray], float]
    rho_e: Callable[[np.ndarray], float]
    jump_radius: float
    h_vee: float
    rho_J_bound: float | None = None

    def rho_J(self, x) -> float:
        return sum(self.rho_J_i(i, x) for i in range(self.dimension))


def coord_uniform_instance(dimension: int, radius: float = 1.0,
                           rate_per_coord: float = 0.5,
                           kill: float = 0.3) -> CoordJumpParams:
    """Symmetric test instance: every coordinate jumps at the same rate with
    uniform sizes on [-radius, radius]; constant killing."""
    dens = rate_per_coord / (2.0 * radius)

    def h_i(i, x, w):
        return dens if abs(w) <= radius else 0.0

    return CoordJumpParams(
        dimension=dimension, h_i=h_i,
        rho_J_i=lambda i, x: rate_per_coord,
        rho_e=lambda x: kill,
        jump_radius=radius,
        h_vee=dens / (rate_per_coord * dimension),
        rho_J_bound=rate_per_coord * dimension)


def coord_jump_step(params: CoordJumpParams, x: np.ndarray, gen):
    """One exact event: (wait, ("jump", (i, w)) | ("killed", None))."""
    rates = [params.rho_J_i(i, x) for i in range(params.dimension)]
    rj = sum(rates)
    re = params.rho_e(x)
    if params.rho_J_bound is not None and rj > params.rho_J_bound * (1 + 1e-12):
        raise ThinningBoundError(f"rho_J({x})={rj} exceeds declared bound")
    total = rj + re
    if total <= 0:
        raise ValidationError("coordinate jump step needs rho_J + rho_e > 0")
    wait = sample_waiting_time(total, _open_uniform(gen))
    u = gen.random() * total
    if u < re:
        return wait, ("killed", None)
    u -= re
    i = 0
    while i < params.dimension - 1 and u >= rates[i]:
        u -= rates[i]
        i += 1

    def h_scalar(xv, wv):
        return params.h_i(i, xv, float(wv[0]))

    w = _sample_jump(h_scalar, x, params.h_vee * rj, params.jump_radius, 1, gen)
    return wait, ("jump", (i, float(w[0])))


def time_to_full_reassignment(params: CoordJumpParams, x, gen,
                              max_events: int = 10_000_000) -> float:
    """min(T_J^d, absorption): first time every coordinate has jumped at
    least once, or death, whichever comes first."""
    x = np.asarray(x, float).copy()
    seen = [False] * params.dimension
    t = 0.0
    for _ in range(max_events):
        wait, (kind, payload) = coord_jump_step(params, x, gen)
        t += wait
        if kind == "killed":
            return t
        i, w = payload
        x[i] += w
        seen[i] = True
        if all(seen):
            return t
    raise SimulationFault("event budget exhausted before full reassignment")


# --------------------------------------------------------------------------
# drift + jump model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DriftJumpParams:
    """Deterministic drift -v*e1 between jumps; jump rate density h(x, w),
    killing rate rho_e(x).

    ``local_rate_bound(x, s)`` must dominate rho_J + rho_e along the flow
    started at x for a duration s; it drives the thinning.  ``h_wedge`` /
    ``favorable_center`` / ``favorable_radius`` record the declared
    drift-compensating-jump lower bound (diagnostics only).
    """

    dimension: int
    v: float
    h: Callable[[np.ndarray, np.ndarray], float]
    rho_J: Callable[[np.ndarray], float]
    rho_e: Callable[[np.ndarray], float]
    jump_radius: float
    h_vee: float
    local_rate_bound: Callable[[np.ndarray, float], float]
    favorable_center: float = 1.0   # ball B(S e1, delta_S) where h >= h_wedge
    favorable_radius: float = 0.25
    h_wedge: float = 0.0
    thinning_window: float = 1.0


def drift_jump_flow(params: DriftJumpParams, x, s: float) -> np.ndarray:
    """Deterministic inter-jump flow: x - v*s*e1, exactly."""
    if s < 0:
        raise ValidationError("flow duration must be nonnegative")
    out = np.array(x, dtype=float)
    out[0] -= params.v * s
    return out


def drift_jump_instance(v: float = 1.0, jump_center: float = 1.0,
                        jump_halfwidth: float = 0.5, jump_rate: float = 1.5,
                        kill_inside: float = 0.2, kill_outside: float = 3.0,
                        core_radius: float = 2.0) -> DriftJumpParams:
    """1-d test instance: jumps uniform on [S - dS, S + dS] push the state
    back against the drift; killing is small in the core ball and large
    outside."""
    dens = jump_rate / (2.0 * jump_halfwidth)
    radius = jump_center + jump_halfwidth

    def h(x, w):
        return dens if abs(float(w[0]) - jump_center) <= jump_halfwidth else 0.0

    def rho_e(x):
        return kill_inside if float(x @ x) <= core_radius ** 2 else kill_outside

    def local_rate_bound(x, s):
        # rho_e is radial two-level, so this dominates everywhere
        return jump_rate + kill_outside

    return DriftJumpParams(
        dimension=1, v=v, h=h, rho_J=lambda x: jump_rate, rho_e=rho_e,
        jump_radius=radius, h_vee=dens / jump_rate,
        local_rate_bound=local_rate_bound,
        favorable_center=jump_center, favorable_radius=jump_halfwidth,
        h_wedge=dens)


def drift_jump_next(params: DriftJumpParams, x, budget: float, gen):
    """Next event within ``budget`` time units via windowed thinning.

    Returns (elapsed, pre_event_state, outcome) where outcome is
    ("jump", w) | ("killed", None) | None when no event fires in budget.
    """
    elapsed = 0.0
    anchor = np.asarray(x, float)
    while elapsed < budget:
        window = min(params.thinning_window, budget - elapsed)
        bound = params.local_rate_bound(anchor, window)

        def total_rate(y):
            return params.rho_J(y) + params.rho_e(y)

        tj, state = thinning_next_jump(
            total_rate, bound, lambda y, s: drift_jump_flow(params, y, s),
            anchor, window, gen)
        if tj is None:
            anchor = state
            elapsed += window
            continue
        elapsed += tj
        rj = params.rho_J(state)
        re = params.rho_e(state)
        if gen.random() * (rj + re) < re:
            return elapsed, state, ("killed", None)
        w = _sample_jump(params.h, state, params.h_vee * rj,
                         params.jump_radius, params.dimension, gen)
        return elapsed, state, ("jump", w)
    return budget, anchor, None


# --------------------------------------------------------------------------
# eco-evolutionary model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EcoEvoBounds:
    """Declared thinning envelopes, valid on the region the caller asserts.

    ``k_vee`` is the total-jump-rate bound (catastrophes + mutations),
    kept as a soundness diagnostic.
    """

    p_density_max: float      # sup of k_c over the region and p in (0,1]
    w_density_max: float      # sup of k_m
    w_support_radius: float   # k_m(., w) = 0 outside the cube of this half-width
    rho_c_max: float          # sup of the total-catastrophe rate
    k_vee: float


@dataclass(frozen=True)
class EcoEvoParams:
    """Logistic Feller population N coupled to a jump-diffusing trait X.

    dN = (r(X) - c N) N dt + sigma_N sqrt(N) dB  minus thinned catastrophe
    fractions p*N; dX = b dt + sigma_X dB' plus thinned mutation jumps w.
    Total catastrophes kill at rate rho_c(x, n); N reaching 0 absorbs.
    Reference measures default to Lebesgue on (0,1] and R^d.
    """

    dim_x: int
    r: Callable[[np.ndarray], float]
    c: float
    sigma_N: float
    b: Callable[[np.ndarray, float], np.ndarray]
    sigma_X: Callable[[np.ndarray, float], float]
    k_c: Callable[[float, np.ndarray, float], float]
    k_m: Callable[[float, np.ndarray, np.ndarray], float]
    rho_c: Callable[[np.ndarray, float], float]
    bounds: EcoEvoBounds


def ecoevo_instance(r0: float = 2.0, c: float = 1.0, sigma_N: float = 0.3,
                    sigma_X: float = 0.3, catastrophe_rate: float = 0.2,
                    mutation_rate: float = 0.3, kill_rate: float = 0.1,
                    dim_x: int = 1) -> EcoEvoParams:
    """Shipped test instance: r(x) = r0 - |x|^2, mean-reverting trait,
    uniform catastrophe fractions, uniform mutation kernel on [-1, 1]^d."""
    w_dens = mutation_rate / 2.0 ** dim_x

    return EcoEvoParams(
        dim_x=dim_x,
        r=lambda x: r0 - float(x @ x),
        c=c, sigma_N=sigma_N,
        b=lambda x, n: -0.5 * x,
        sigma_X=lambda x, n: sigma_X,
        k_c=lambda n, x, p: catastrophe_rate,
        k_m=lambda n, x, w: w_dens if float(np.max(np.abs(w))) <= 1.0 else 0.0,
        rho_c=lambda x, n: kill_rate,
        bounds=EcoEvoBounds(
            p_density_max=catastrophe_rate,
            w_density_max=w_dens,
            w_support_radius=1.0,
            rho_c_max=kill_rate,
            k_vee=catastrophe_rate + mutation_rate),
    )


def _ecoevo_euler(params: EcoEvoParams, n: float, x: np.ndarray, h: float,
                  positivity: str, gen) -> tuple[float, np.ndarray]:
    # full truncation: coefficients see max(n, 0)
    npos = max(n, 0.0)
    xi_n = gen.standard_normal()
    n_new = n + (params.r(x) - params.c * npos) * npos * h \
        + params.sigma_N * math.sqrt(npos) * math.sqrt(h) * xi_n
    xi_x = gen.standard_normal(params.dim_x)
    x_new = x + np.asarray(params.b(x, npos), float) * h \
        + params.sigma_X(x, npos) * math.sqrt(h) * xi_x
    if positivity == "reflect" and n_new < 0.0:
        n_new = -n_new
    return n_new, x_new


def ecoevo_step(params: EcoEvoParams, state, dt: float, gen,
                positivity: str = "absorb"):
    """Advance (N, X) by one step of length dt.

    Jumps, catastrophes, and killing fire inside the step via thinning of a
    proposal clock at the declared envelope rate; the diffusive parts move
    by Euler-Maruyama between proposals.  Returns
    (state | None, absorption offset | None, [JumpEvent with in-step times]).
    """
    b = params.bounds
    lam_p = b.p_density_max
    lam_w = b.w_density_max * (2.0 * b.w_support_radius) ** params.dim_x
    lam_k = b.rho_c_max
    lam = lam_p + lam_w + lam_k
    state = np.asarray(state, float)
    n = float(state[0])
    x = np.array(state[1:], dtype=float)
    if n <= 0:
        return None, 0.0, []
    t_loc = 0.0
    events: list[JumpEvent] = []
    while True:
        step = sample_waiting_time(lam, _open_uniform(gen)) if lam > 0 else math.inf
        seg = min(step, dt - t_loc)
        n, x = _ecoevo_euler(params, n, x, seg, positivity, gen)
        t_loc += seg
        if not (math.isfinite(n) and np.all(np.isfinite(x))):
            raise SimulationFault("non-finite eco-evo state",
                                  partial=(t_loc, n, x))
        if n <= 0.0:
            return None, t_loc, events  # Feller boundary: absorb on crossing
        if seg < step or t_loc >= dt:
            return np.concatenate(([n], x)), None, events
        # a proposal fired at t_loc: classify against the envelopes
        u = gen.random() * lam
        if u < lam_p:
            p = 1.0 - gen.random()  # uniform on (0, 1]
            dens = params.k_c(n, x, p)
            if dens > b.p_density_max * (1 + 1e-12):
                raise ThinningBoundError("catastrophe density exceeds envelope")
            if gen.random() * b.p_density_max < dens:
                n *= (1.0 - p)
                events.append(JumpEvent(t_loc, CATASTROPHE, p))
                if n <= 0.0:
                    return None, t_loc, events
        elif u < lam_p + lam_k:
            rate = params.rho_c(x, n)
            if rate > b.rho_c_max * (1 + 1e-12):
                raise ThinningBoundError("total-catastrophe rate exceeds envelope")
            if gen.random() * b.rho_c_max < rate:
                events.append(JumpEvent(t_loc, EXTINCTION, None))
                return None, t_loc, events
        else:
            w = gen.uniform(-b.w_support_radius, b.w_support_radius, params.dim_x)
            dens = params.k_m(n, x, w)
            if dens > b.w_density_max * (1 + 1e-12):
                raise ThinningBoundError("mutation density exceeds envelope")
            if gen.random() * b.w_density_max < dens:
                x = x + w
                events.append(JumpEvent(t_loc, STATE_JUMP, w))


# --------------------------------------------------------------------------
# model wrappers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PureJumpModel:
    params: PureJumpParams
    name: str = "pure_jump"
    kind = "piecewise"

    def compact(self, n: int) -> Ball:
        return Ball(np.zeros(self.params.dimension), float(n))

    def describe(self) -> dict:
        p = self.params
        return {"model": self.name, "dimension": p.dimension,
                "jump_radius": p.jump_radius, "h_vee": p.h_vee,
                "rho_J_bound": p.rho_J_bound,
                "h": getattr(p.h, "__qualname__", "h"),
                "rho_e": getattr(p.rho_e, "__qualname__", "rho_e")}


@dataclass(frozen=True)
class CoordJumpModel:
    params: CoordJumpParams
    name: str = "coord_jump"
    kind = "piecewise"

    def compact(self, n: int) -> Ball:
        # sup-norm balls for this family
        return Ball(np.zeros(self.params.dimension), float(n), norm=math.inf)

    def describe(self) -> dict:
        p = self.params
        return {"model": self.name, "dimension": p.dimension,
                "jump_radius": p.jump_radius, "h_vee": p.h_vee,
                "rho_J_bound": p.rho_J_bound}


@dataclass(frozen=True)
class DriftJumpModel:
    params: DriftJumpParams
    name: str = "drift_jump"
    kind = "flow"

    def compact(self, n: int) -> Ball:
        return Ball(np.zeros(self.params.dimension), float(n))

    def describe(self) -> dict:
        p = self.params
        return {"model": self.name, "dimension": p.dimension, "v": p.v,
                "jump_radius": p.jump_radius, "h_vee": p.h_vee,
                "favorable_center": p.favorable_center,
                "favorable_radius": p.favorable_radius}


@dataclass(frozen=True)
class EcoEvoModel:
    params: EcoEvoParams
    name: str = "eco_evo"
    kind = "grid"

    def compact(self, n: int) -> Box:
        # [1/l, l] x [-l, l]^d in (N, X) coordinates
        lo = np.concatenate(([1.0 / n], -float(n) * np.ones(self.params.dim_x)))
        hi = np.concatenate(([float(n)], float(n) * np.ones(self.params.dim_x)))
        return Box(lo, hi)

    def describe(self) -> dict:
        p = self.params
        return {"model": self.name, "dim_x": p.dim_x, "c": p.c,
                "sigma_N": p.sigma_N, "k_vee": p.bounds.k_vee}


@dataclass(frozen=True)
class FiniteChainModel:
    """Finite sub-Markov chain as a simulatable model.

    States are exposed to the estimators as their embedded coordinates
    (grid positions) when the chain has an embedding, else as the raw
    index; internally the engine walks indices.
    """

    chain: "SubMarkovChain"  # noqa: F821
    name: str = "finite_chain"
    kind = "piecewise"

    @cached_property
    def _rows(self):
        L = self.chain.generator
        rows = []
        for i in range(L.shape[0]):
            off = L[i].copy()
            off[i] = 0.0
            targets = np.nonzero(off > 0)[0]
            rates = off[targets]
            total = float(rates.sum() + self.chain.kappa[i])
            rows.append((total, float(self.chain.kappa[i]), targets,
                         np.cumsum(rates)))
        return rows

    @cached_property
    def _points(self):
        emb = self.chain.embedding
        if emb is None:
            return np.arange(self.chain.n_states, dtype=float)[:, None]
        return np.atleast_2d(np.asarray(emb, float).reshape(self.chain.n_states, -1))

    def point_of(self, i: int) -> np.ndarray:
        return self._points[i]

    def index_of(self, x) -> int:
        x = np.atleast_1d(np.asarray(x, float))
        return int(np.argmin(np.sum((self._points - x) ** 2, axis=1)))

    def compact(self, n: int):
        raise ValidationError("finite chains carry no compact exhaustion")

    def describe(self) -> dict:
        return {"model": self.name, "n_states": self.chain.n_states,
                "generator_sha": hashlib.sha256(
                    np.ascontiguousarray(self.chain.generator).tobytes()
                ).hexdigest()[:12]}


Model = PureJumpModel | CoordJumpModel | DriftJumpModel | EcoEvoModel | FiniteChainModel


def chain_step(model: FiniteChainModel, i: int, gen):
    """One Gillespie event from state index i."""
    total, kappa, targets, cum = model._rows[i]
    if total <= 0:
        return math.inf, ("stay", i)
    wait = sample_waiting_time(total, _open_uniform(gen))
    u = gen.random() * total
    if u < kappa:
        return wait, ("killed", None)
    j = targets[np.searchsorted(cum, u - kappa, side="right")]
    return wait, ("jump", int(j))


def model_hash(model) -> str:
    text = json.dumps(model.describe(), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


# --------------------------------------------------------------------------
# unified path driver
# --------------------------------------------------------------------------

def _in_region(region, a, b=None) -> bool:
    # regions are convex: a straight segment stays inside iff endpoints do
    if region is None:
        return True
    if not region.contains(a):
        return False
    return b is None or region.contains(b)


def drive_path(model, x0, times, controls: StepControls, gen, f, region,
               event_log: list | None = None) -> PathStats:
    """Simulate one path, recording state/aliveness/confinement at ``times``
    and the running integral of ``f`` (exact between jumps, trapezoid on the
    Euler grid)."""
    if times and any(b <= a for a, b in zip(times, times[1:])):
        raise ValidationError("sample times must be strictly increasing")
    if times and times[0] <= 0:
        raise ValidationError("sample times must be positive")
    if isinstance(model, (PureJumpModel, CoordJumpModel, FiniteChainModel)):
        return _drive_piecewise(model, x0, times, controls, gen, f, region,
                                event_log)
    if isinstance(model, DriftJumpModel):
        return _drive_flow(model, x0, times, controls, gen, f, region,
                           event_log)
    if isinstance(model, EcoEvoModel):
        return _drive_grid(model, x0, times, controls, gen, f, region,
                           event_log)
    raise ValidationError(f"unknown model type {type(model).__name__}")


def _drive_piecewise(model, x0, times, controls, gen, f, region,
                     event_log) -> PathStats:
    horizon = times[-1] if times else 0.0
    k, m = 0, len(times)
    states: list = [None] * m
    alive = np.zeros(m, dtype=bool)
    confined = np.zeros(m, dtype=bool)
    integral = 0.0
    first_event = math.inf
    n_events = 0

    if isinstance(model, FiniteChainModel):
        idx = model.index_of(x0)
        cur = model.point_of(idx)
        step = lambda: chain_step(model, idx, gen)  # noqa: E731
    else:
        cur = np.array(x0, dtype=float)
        params = model.params
        if isinstance(model, PureJumpModel):
            step = lambda: pure_jump_step(params, cur, gen)  # noqa: E731
        else:
            step = lambda: coord_jump_step(params, cur, gen)  # noqa: E731

    t = 0.0
    t_int = 0.0  # integral accounted up to here
    ok = _in_region(region, cur)
    tau = math.inf
    for _ in range(controls.max_events):
        if k >= m:
            break
        wait, (kindev, payload) = step()
        t_next = t + wait
        while k < m and times[k] <= t_next:
            if f is not None:
                integral += f(cur) * (times[k] - t_int)
                t_int = times[k]
            states[k] = cur.copy()
            alive[k] = True
            confined[k] = ok
            k += 1
        if k >= m:
            break
        if kindev == "stay":
            # absorbing live state: nothing more will ever happen
            while k < m:
                if f is not None:
                    integral += f(cur) * (times[k] - t_int)
                    t_int = times[k]
                states[k] = cur.copy()
                alive[k] = True
                confined[k] = ok
                k += 1
            break
        if f is not None:
            integral += f(cur) * (t_next - t_int)
            t_int = t_next
        t = t_next
        n_events += 1
        first_event = min(first_event, t)
        if kindev == "killed":
            tau = t
            if event_log is not None:
                event_log.append(JumpEvent(t, EXTINCTION, None))
            break
        if isinstance(model, FiniteChainModel):
            old = cur
            idx = payload
            cur = model.point_of(idx)
            size = cur - old
        elif isinstance(model, PureJumpModel):
            size = payload
            cur = cur + payload
        else:
            i, w = payload
            size = np.zeros_like(cur)
            size[i] = w
            cur = cur + size
        if event_log is not None:
            event_log.append(JumpEvent(t, STATE_JUMP, size))
        ok = ok and _in_region(region, cur)
    else:
        raise SimulationFault("event budget exhausted", partial=(t, cur))
    return PathStats(states, alive, confined, tau, first_event, n_events, integral)


def _flow_integral(params, f, x, s, dt):
    # trapezoid along the deterministic flow with sub-step dt
    if s <= 0 or f is None:
        return 0.0
    n_sub = max(1, int(math.ceil(s / dt)))
    h = s / n_sub
    vals = [f(drift_jump_flow(params, x, j * h)) for j in range(n_sub + 1)]
    return h * (0.5 * vals[0] + sum(vals[1:-1]) + 0.5 * vals[-1])


def _drive_flow(model: DriftJumpModel, x0, times, controls, gen, f, region,
                event_log) -> PathStats:
    params = model.params
    horizon = times[-1] if times else 0.0
    k, m = 0, len(times)
    states: list = [None] * m
    alive = np.zeros(m, dtype=bool)
    confined = np.zeros(m, dtype=bool)
    integral = 0.0
    first_event = math.inf
    n_events = 0

    anchor = np.array(x0, dtype=float)
    t_anchor = 0.0
    ok = _in_region(region, anchor)
    tau = math.inf
    for _ in range(controls.max_events):
        if k >= m:
            break
        elapsed, pre_state, outcome = drift_jump_next(
            params, anchor, horizon - t_anchor, gen)
        t_next = t_anchor + elapsed
        while k < m and times[k] <= t_next:
            st = drift_jump_flow(params, anchor, times[k] - t_anchor)
            states[k] = st
            alive[k] = True
            confined[k] = ok and _in_region(region, st)
            k += 1
        integral += _flow_integral(params, f, anchor, elapsed, controls.dt)
        ok = ok and _in_region(region, anchor, pre_state)
        if outcome is None:
            break  # budget (= horizon) exhausted without an event
        n_events += 1
        first_event = min(first_event, t_next)
        kindev, payload = outcome
        if kindev == "killed":
            tau = t_next
            if event_log is not None:
                event_log.append(JumpEvent(t_next, EXTINCTION, None))
            break
        anchor = pre_state + payload
        t_anchor = t_next
        if event_log is not None:
            event_log.append(JumpEvent(t_next, STATE_JUMP, payload))
        ok = ok and _in_region(region, anchor)
    else:
        raise SimulationFault("event budget exhausted", partial=(t_anchor, anchor))
    return PathStats(states, alive, confined, tau, first_event, n_events, integral)


def _drive_grid(model: EcoEvoModel, x0, times, controls, gen, f, region,
                event_log) -> PathStats:
    params = model.params
    k, m = 0, len(times)
    states: list = [None] * m
    alive = np.zeros(m, dtype=bool)
    confined = np.zeros(m, dtype=bool)
    integral = 0.0
    first_event = math.inf
    n_events = 0

    cur = np.array(x0, dtype=float)
    if cur[0] <= 0:
        raise ValidationError("eco-evo paths must start with N > 0")
    t = 0.0
    ok = _in_region(region, cur)
    tau = math.inf
    guard = 0
    while k < m:
        guard += 1
        if guard > controls.max_events:
            raise SimulationFault("step budget exhausted", partial=(t, cur))
        h = min(controls.dt, times[k] - t)
        prev = cur
        nxt, abs_off, events = ecoevo_step(params, cur, h, gen, controls.positivity)
        n_events += len(events)
        if events:
            first_event = min(first_event, t + events[0].time)
            if event_log is not None:
                event_log.extend(JumpEvent(t + ev.time, ev.kind, ev.size)
                                 for ev in events)
        if nxt is None:
            tau = t + (abs_off if abs_off is not None else h)
            if f is not None:
                integral += f(prev) * (tau - t)
            break
        if f is not None:
            integral += 0.5 * (f(prev) + f(nxt)) * h
        cur = nxt
        t += h
        ok = ok and _in_region(region, prev, cur)
        if t >= times[k] - 1e-12:
            states[k] = cur.copy()
            alive[k] = True
            confined[k] = ok
            k += 1
    return PathStats(states, alive, confined, tau, first_event, n_events, integral)


def collect_path(model, x0, horizon, controls, gen, grid, stream) -> PathOutcome:
    """Full PathOutcome assembly (sparse skeleton: events + sample grid)."""
    times = sorted(set(grid) | {horizon})
    events: list[JumpEvent] = []
    stats = drive_path(model, x0, times, controls, gen, None, None,
                       event_log=events)
    skeleton: list[tuple[float, AbsorbedState]] = [(0.0, AbsorbedState.live(x0))]
    for ev in events:
        if ev.kind == EXTINCTION:
            skeleton.append((ev.time, AbsorbedState.cemetery()))
    for t_s, st, ok in zip(times, stats.states, stats.alive):
        if any(abs(t_s - t) < 1e-15 for t, _ in skeleton):
            continue
        if ok:
            skeleton.append((t_s, AbsorbedState.live(st)))
        else:
            skeleton.append((t_s, AbsorbedState.cemetery()))
    skeleton.sort(key=lambda p: p[0])
    return PathOutcome(tuple(skeleton), stats.tau_abs, tuple(events), stream)
