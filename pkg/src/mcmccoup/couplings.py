"""Couplings of Metropolis chains targeting the same (or two different) laws.

Every coupling here keeps each chain marginally exact: the pair of proposal
increments is built so each component is N(0, I_d), and the two acceptance
tests share one uniform.  Meetings are exact (bitwise) because coalescing
branches hand both chains the same proposal array and, once met, both
chains advance with one shared draw.

Increment couplings:

  crn          same increment for both chains
  reflection   increment reflected in the normalized difference X - Y
  gcrn         both increments forced to share their component along the
               local (normalized) gradient direction of their own chain
  gcrn-rotation / gcrn-reflect
               rotate / reflect the increment so the gradient projections
               agree; same projection law as gcrn, different residuals
  reflection-maximal    maximal coupling of the two proposal laws with
               reflected residuals (can propose identical points)
  maximal-independent   maximal coupling with independent residuals
  two-scale    gcrn far apart, reflection-maximal once ||X-Y||^2 < delta
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_math import RngStream
from .kernels import (
    AnisotropicGaussian,
    HopParams,
    HugParams,
    accept_log_ratio,
    hop_proposal_law,
    hug_proposal,
)
from .targets import TargetModel

__all__ = [
    "COUPLING_KINDS",
    "CouplingSpec",
    "CoupledChainState",
    "couple_increments",
    "grad_projection_correlation",
    "IsotropicGaussian",
    "reflection_maximal_pair",
    "maximal_independent_pair",
    "coupled_rwm_step",
    "two_scale_rwm_step",
    "cross_target_coupled_step",
    "cross_target_gcrn_step",
    "coupled_hug_step",
    "coupled_hug_hop_step",
]

COUPLING_KINDS = (
    "crn",
    "reflection",
    "gcrn",
    "gcrn-rotation",
    "gcrn-reflect",
    "reflection-maximal",
    "maximal-independent",
    "two-scale",
)

_GRAD_KINDS = ("gcrn", "gcrn-rotation", "gcrn-reflect")


@dataclass(frozen=True)
class CouplingSpec:
    """Which increment coupling to run; delta is the two-scale switch level."""

    kind: str
    delta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        if self.kind == "two-scale":
            if self.delta is None or self.delta <= 0:
                raise ValueError("two-scale coupling needs delta > 0")
        elif self.delta is not None:
            raise ValueError(f"delta only applies to two-scale, not {self.kind!r}")


@dataclass
class CoupledChainState:
    """Positions of the two chains, iteration count, and the meeting flag.

    Once met is True both fields reference one array and stay bit-identical.
    branch records which sub-coupling the last two-scale step used.
    """

    x: np.ndarray
    y: np.ndarray
    t: int = 0
    met: bool = False
    branch: Optional[str] = field(default=None, compare=False)


def _unit(v: np.ndarray):
    n = float(np.linalg.norm(v))
    if n == 0.0 or not math.isfinite(n):
        return None
    return v / n


def couple_increments(
    kind: str,
    z: np.ndarray,
    z1: Optional[float] = None,
    n_x: Optional[np.ndarray] = None,
    n_y: Optional[np.ndarray] = None,
    e: Optional[np.ndarray] = None,
):
    """Turn base randomness (z, z1) into a coupled increment pair (z_x, z_y).

    z is standard normal in R^d and z1 an independent scalar standard
    normal (used only by gcrn).  n_x, n_y are the unit gradient directions
    of each chain, e the unit vector along X - Y.  Each returned increment
    is marginally N(0, I_d).
    """
    if kind == "crn":
        return z, z
    if kind == "reflection":
        if e is None:
            raise ValueError("reflection coupling needs the unit difference e")
        return z, z - 2.0 * float(np.dot(e, z)) * e
    if kind == "gcrn":
        if n_x is None or n_y is None or z1 is None:
            raise ValueError("gcrn needs both gradient directions and z1")
        zx = z - float(np.dot(n_x, z)) * n_x + z1 * n_x
        zy = z - float(np.dot(n_y, z)) * n_y + z1 * n_y
        return zx, zy
    if kind == "gcrn-rotation":
        if n_x is None or n_y is None:
            raise ValueError("gcrn-rotation needs both gradient directions")
        c = float(np.dot(n_x, n_y))
        if 1.0 - abs(c) < 1e-12:
            if c > 0:  # directions coincide: rotation is the identity
                return z, z
            # antipodal: reflect in n_x, which maps n_x to n_y = -n_x
            return z, z - 2.0 * float(np.dot(n_x, z)) * n_x
        w = n_y - c * n_x
        w /= float(np.linalg.norm(w))
        s = math.sqrt(max(0.0, 1.0 - c * c))
        a, b = float(np.dot(n_x, z)), float(np.dot(w, z))
        zy = z + (c - 1.0) * (a * n_x + b * w) + s * (a * w - b * n_x)
        return z, zy
    if kind == "gcrn-reflect":
        if n_x is None or n_y is None:
            raise ValueError("gcrn-reflect needs both gradient directions")
        e_tilde = _unit(n_x - n_y)
        if e_tilde is None:  # directions coincide, nothing to reflect in
            return z, z
        return z, z - 2.0 * float(np.dot(e_tilde, z)) * e_tilde
    raise ValueError(f"couple_increments does not handle kind {kind!r}")


def grad_projection_correlation(
    kind: str,
    state: CoupledChainState,
    target: TargetModel,
    target_y: Optional[TargetModel] = None,
) -> float:
    """Correlation of the two acceptance projections n_x' Z_x and n_y' Z_y.

    For any target this is n_x'n_y under crn, n_x'n_y - 2(n_x'e)(n_y'e)
    under reflection (e the unit difference), and exactly 1 under the gcrn
    family.  With a Gaussian target the gradient is -(Sigma^-1) x, so these
    reduce to the precision-weighted inner products of the positions.
    Convention: 1 when the chains have already met.
    """
    x, y = state.x, state.y
    target_x = target
    target_y = target_y or target_x
    if kind in _GRAD_KINDS:
        return 1.0
    if state.met or np.array_equal(x, y):
        return 1.0
    n_x = _unit(target_x.grad(x))
    n_y = _unit(target_y.grad(y))
    if n_x is None or n_y is None:
        raise ValueError("gradient vanishes; projection correlation undefined")
    if kind == "crn":
        return float(np.dot(n_x, n_y))
    if kind == "reflection":
        e = _unit(x - y)
        return float(np.dot(n_x, n_y)) - 2.0 * float(np.dot(n_x, e)) * float(np.dot(n_y, e))
    raise ValueError(f"no projection correlation for kind {kind!r}")


@dataclass(frozen=True)
class IsotropicGaussian:
    """Spherical Gaussian proposal law N(center, sd^2 I)."""

    center: np.ndarray
    sd: float

    def log_density(self, w: np.ndarray) -> float:
        # up to the common -(d/2) log(2 pi)
        diff = w - self.center
        d = self.center.size
        return -d * math.log(self.sd) - 0.5 * float(np.dot(diff, diff)) / self.sd**2

    def sample(self, rng: RngStream) -> np.ndarray:
        return self.center + self.sd * rng.standard_normal(self.center.size)


def reflection_maximal_pair(x: np.ndarray, y: np.ndarray, h: float, rng: RngStream):
    """Reflection-maximal coupling of the proposal laws N(x, h^2 I), N(y, h^2 I).

    Returns (prop_x, prop_y, coalesced).  With probability
    min(1, phi(z + delta)/phi(z)), delta = (x - y)/h, the proposals are the
    identical array; otherwise the residual is reflected in delta.
    The coalescence probability at distance r is 2 Phi(-r / (2h)).
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    delta = (x - y) / h
    z = rng.standard_normal(x.size)
    u = float(rng.uniform())
    log_accept = -float(np.dot(delta, z)) - 0.5 * float(np.dot(delta, delta))
    prop_x = x + h * z
    if accept_log_ratio(log_accept, u):
        return prop_x, prop_x, True
    dhat = _unit(delta)
    z_y = z - 2.0 * float(np.dot(dhat, z)) * dhat
    return prop_x, y + h * z_y, False


def maximal_independent_pair(law_x, law_y, rng: RngStream, max_tries: int = 100_000):
    """Maximal coupling with independent residuals of two proposal laws.

    Laws need .sample(rng) and .log_density(w) (consistent up to a shared
    constant).  Returns (w_x, w_y, coalesced); on coalescence both entries
    are the identical array.  P(coalesce) = integral of min(q_x, q_y).
    """
    w_x = law_x.sample(rng)
    u1 = float(rng.uniform())
    if accept_log_ratio(law_y.log_density(w_x) - law_x.log_density(w_x), u1):
        return w_x, w_x, True
    for _ in range(max_tries):
        w_y = law_y.sample(rng)
        u2 = float(rng.uniform())
        if not accept_log_ratio(law_x.log_density(w_y) - law_y.log_density(w_y), u2):
            return w_x, w_y, False
    raise RuntimeError(f"maximal coupling rejection loop exceeded {max_tries} tries")


def _common_rwm_advance(state: CoupledChainState, h: float, target: TargetModel, rng: RngStream):
    # after meeting both chains move with one shared draw, staying identical
    z = rng.standard_normal(state.x.size)
    u = float(rng.uniform())
    prop = state.x + h * z
    log_ratio = target.log_density(prop) - target.log_density(state.x)
    x_new = prop if accept_log_ratio(log_ratio, u) else state.x
    return CoupledChainState(x=x_new, y=x_new, t=state.t + 1, met=True, branch="common")


def _grad_directions(target_x, target_y, x, y):
    n_x = _unit(target_x.grad(x))
    n_y = _unit(target_y.grad(y))
    return n_x, n_y


def coupled_rwm_step(
    state: CoupledChainState,
    cspec: CouplingSpec,
    h: float,
    target: TargetModel,
    rng: RngStream,
) -> CoupledChainState:
    """One synchronous step of two RWM chains under the requested coupling.

    Both acceptance tests use one shared uniform.  Marginally each chain is
    an exact RWM(h) chain.  Meetings are sticky: once positions coincide the
    chains are advanced together forever.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    if state.met:
        return _common_rwm_advance(state, h, target, rng)

    x, y = state.x, state.y
    kind = cspec.kind
    branch = kind
    if kind == "two-scale":
        sq = float(np.dot(x - y, x - y))
        branch = "gcrn" if sq >= cspec.delta else "reflection-maximal"
        kind = branch

    if kind in ("crn", "reflection", "gcrn", "gcrn-rotation", "gcrn-reflect"):
        z = rng.standard_normal(x.size)
        z1 = float(rng.standard_normal()) if kind == "gcrn" else None
        n_x = n_y = e = None
        if kind in _GRAD_KINDS:
            n_x, n_y = _grad_directions(target, target, x, y)
            if n_x is None or n_y is None:
                kind = "crn"  # degenerate gradient: fall back, still marginal
        if kind == "reflection":
            e = _unit(x - y)
            if e is None:
                kind = "crn"
        zx, zy = couple_increments(kind, z, z1=z1, n_x=n_x, n_y=n_y, e=e)
        prop_x, prop_y = x + h * zx, y + h * zy
        coalesced = False
    elif kind == "reflection-maximal":
        prop_x, prop_y, coalesced = reflection_maximal_pair(x, y, h, rng)
    elif kind == "maximal-independent":
        law_x = IsotropicGaussian(x, h)
        law_y = IsotropicGaussian(y, h)
        prop_x, prop_y, coalesced = maximal_independent_pair(law_x, law_y, rng)
    else:  # pragma: no cover - CouplingSpec validates kinds
        raise ValueError(f"unhandled coupling kind {kind!r}")

    u = float(rng.uniform())
    log_prop_x = target.log_density(prop_x)
    log_prop_y = log_prop_x if coalesced else target.log_density(prop_y)
    acc_x = accept_log_ratio(log_prop_x - target.log_density(x), u)
    acc_y = accept_log_ratio(log_prop_y - target.log_density(y), u)
    x_new = prop_x if acc_x else x
    y_new = prop_y if acc_y else y
    met = (x_new is y_new) or bool(np.array_equal(x_new, y_new))
    if met and x_new is not y_new:
        y_new = x_new
    return CoupledChainState(x=x_new, y=y_new, t=state.t + 1, met=met, branch=branch)


def two_scale_rwm_step(
    state: CoupledChainState,
    delta: float,
    h: float,
    target: TargetModel,
    rng: RngStream,
) -> CoupledChainState:
    """gcrn while ||X-Y||^2 >= delta, reflection-maximal below it."""
    return coupled_rwm_step(state, CouplingSpec("two-scale", delta=delta), h, target, rng)


def cross_target_coupled_step(
    state: CoupledChainState,
    h: float,
    target_x: TargetModel,
    target_y: TargetModel,
    kind: str,
    rng: RngStream,
) -> CoupledChainState:
    """Couple an RWM chain on target_x with one on target_y (bias mode).

    Supports crn, reflection and the gcrn family; each chain uses its own
    target in both the gradient direction and the acceptance ratio.  The
    chains never meet (the targets differ), so met is never set.
    """
    if kind not in ("crn", "reflection", "gcrn", "gcrn-rotation", "gcrn-reflect"):
        raise ValueError(f"cross-target coupling does not support kind {kind!r}")
    x, y = state.x, state.y
    z = rng.standard_normal(x.size)
    z1 = float(rng.standard_normal()) if kind == "gcrn" else None
    n_x = n_y = e = None
    if kind in _GRAD_KINDS:
        n_x, n_y = _grad_directions(target_x, target_y, x, y)
        if n_x is None or n_y is None:
            kind = "crn"
    if kind == "reflection":
        e = _unit(x - y)
        if e is None:
            kind = "crn"
    zx, zy = couple_increments(kind, z, z1=z1, n_x=n_x, n_y=n_y, e=e)
    u = float(rng.uniform())
    prop_x, prop_y = x + h * zx, y + h * zy
    acc_x = accept_log_ratio(target_x.log_density(prop_x) - target_x.log_density(x), u)
    acc_y = accept_log_ratio(target_y.log_density(prop_y) - target_y.log_density(y), u)
    return CoupledChainState(
        x=prop_x if acc_x else x,
        y=prop_y if acc_y else y,
        t=state.t + 1,
        met=False,
        branch=kind,
    )


def cross_target_gcrn_step(
    state: CoupledChainState,
    h: float,
    target_x: TargetModel,
    target_y: TargetModel,
    rng: RngStream,
) -> CoupledChainState:
    return cross_target_coupled_step(state, h, target_x, target_y, "gcrn", rng)


def _hug_phase(x, y, hug, target, rng, met: bool):
    """Shared-velocity, shared-uniform Hug moves for both chains."""
    v = rng.standard_normal(x.size)
    u_hug = float(rng.uniform())
    if met:
        out = hug_proposal(x, v, hug, target)
        if out is not None:
            xp, _ = out
            if accept_log_ratio(target.log_density(xp) - target.log_density(x), u_hug):
                return xp, xp
        return x, y
    x_cur, y_cur = x, y
    for which, pos in (("x", x), ("y", y)):
        out = hug_proposal(pos, v, hug, target)
        if out is None:
            continue  # zero gradient: that chain rejects its hug move
        xp, _ = out
        if accept_log_ratio(target.log_density(xp) - target.log_density(pos), u_hug):
            if which == "x":
                x_cur = xp
            else:
                y_cur = xp
    return x_cur, y_cur


def coupled_hug_step(
    state: CoupledChainState,
    hug: HugParams,
    target: TargetModel,
    rng: RngStream,
) -> CoupledChainState:
    """One coupled Hug move: both chains share the velocity and uniform."""
    x_new, y_new = _hug_phase(state.x, state.y, hug, target, rng, state.met)
    met = state.met or (x_new is y_new) or bool(np.array_equal(x_new, y_new))
    if met and x_new is not y_new:
        y_new = x_new
    branch = "common" if state.met else "hug"
    return CoupledChainState(x=x_new, y=y_new, t=state.t + 1, met=met, branch=branch)


def _common_hop_advance(x, hop, target, rng):
    z = rng.standard_normal(x.size)
    z1 = float(rng.standard_normal())
    u_hop = float(rng.uniform())
    law = hop_proposal_law(x, hop, target)
    if law is None:
        return x
    w = law.center + law.displacement(z, z1)
    law_w = hop_proposal_law(w, hop, target)
    if law_w is None:
        return x
    log_ratio = (
        target.log_density(w)
        - target.log_density(x)
        + law_w.log_density(x)
        - law.log_density(w)
    )
    return w if accept_log_ratio(log_ratio, u_hop) else x


def coupled_hug_hop_step(
    state: CoupledChainState,
    hug: HugParams,
    hop: HopParams,
    delta_hop: float,
    target: TargetModel,
    rng: RngStream,
) -> CoupledChainState:
    """One Hug move then one Hop move, both coupled, with shared uniforms.

    Hug shares the velocity draw (common random numbers; bounces use each
    chain's own gradients).  Hop couples the proposal laws with shared
    (z, z1) through each chain's gradient frame while the chains are far
    apart, and switches to a maximal coupling with independent residuals
    once ||X-Y||^2 < delta_hop, which is what produces exact meetings.
    """
    if delta_hop <= 0:
        raise ValueError("delta_hop must be positive")
    d = state.x.size

    if state.met:
        x_cur, _ = _hug_phase(state.x, state.y, hug, target, rng, True)
        x_cur = _common_hop_advance(x_cur, hop, target, rng)
        return CoupledChainState(x=x_cur, y=x_cur, t=state.t + 1, met=True, branch="common")

    x_cur, y_cur = _hug_phase(state.x, state.y, hug, target, rng, False)

    # Hop phase
    law_x = hop_proposal_law(x_cur, hop, target)
    law_y = hop_proposal_law(y_cur, hop, target)
    sq = float(np.dot(x_cur - y_cur, x_cur - y_cur))
    branch = "hop-gcrn" if sq >= delta_hop else "hop-maximal"
    coalesced = False
    if law_x is None or law_y is None:
        # degenerate gradient: shared draws, each defined chain proposes alone
        z = rng.standard_normal(d)
        z1 = float(rng.standard_normal())
        prop_x = law_x.center + law_x.displacement(z, z1) if law_x is not None else None
        prop_y = law_y.center + law_y.displacement(z, z1) if law_y is not None else None
        branch = "hop-degenerate"
    elif branch == "hop-gcrn":
        z = rng.standard_normal(d)
        z1 = float(rng.standard_normal())
        prop_x = law_x.center + law_x.displacement(z, z1)
        prop_y = law_y.center + law_y.displacement(z, z1)
    else:
        prop_x, prop_y, coalesced = maximal_independent_pair(law_x, law_y, rng)

    u_hop = float(rng.uniform())

    def _hop_accept(pos, law, prop):
        if law is None or prop is None:
            return pos
        law_w = hop_proposal_law(prop, hop, target)
        if law_w is None:
            return pos
        log_ratio = (
            target.log_density(prop)
            - target.log_density(pos)
            + law_w.log_density(pos)
            - law.log_density(prop)
        )
        return prop if accept_log_ratio(log_ratio, u_hop) else pos

    x_new = _hop_accept(x_cur, law_x, prop_x)
    y_new = _hop_accept(y_cur, law_y, prop_y)
    met = (x_new is y_new) or bool(np.array_equal(x_new, y_new))
    if met and x_new is not y_new:
        y_new = x_new
    return CoupledChainState(x=x_new, y=y_new, t=state.t + 1, met=met, branch=branch)
