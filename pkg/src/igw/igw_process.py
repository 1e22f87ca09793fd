"""The iterated chain itself: one-step transition, trajectory simulation
with death/explosion detection, regime classification, and the growth-ratio
diagnostic.

One step from state x >= 1 runs the auxiliary branching process for x
generations, sums the total progeny S_x, and thins it binomially with
survival probability theta.  State 0 is absorbing.  A state already in the
log tier makes the next total astronomically concentrated, so that step is
computed deterministically: log S = x*log(m) + log(m/(m-1)) and
log X' = log S + log(theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Union

from .gw_engine import (
    DEFAULT_EXACT_CAP,
    LOG_VALUE_LIMIT,
    ExtendedCount,
    RngStream,
    ZERO_COUNT,
    simulate_total_progeny,
    thin,
)
from .reproduction_laws import (
    IGWParams,
    MEAN_CRITICAL_TOL,
    RegimeError,
    mean,
)


class TerminationKind(str, Enum):
    DIED = "Died"
    EXPLODED = "Exploded"
    HORIZON = "HorizonReached"


class MeanRegime(str, Enum):
    EXPLODES = "MeanExplodes"
    VANISHES = "MeanVanishes"
    CONSTANT = "MeanConstant"


class AlmostSureRegime(str, Enum):
    DEATH = "AlmostSureDeath"
    EXPLOSION = "AlmostSureExplosion"
    MIXED = "MixedDeathOrExplosion"
    THINNED_IDENTITY = "ThinnedIdentity"


@dataclass(frozen=True)
class RegimeReport:
    mean_regime: MeanRegime
    as_regime: AlmostSureRegime


@dataclass(frozen=True)
class Trajectory:
    """A simulated path X_0..X_N with its termination verdict.

    ``ratios[n]`` is log(X_{n+1}) / X_n when both states are >= 1, else
    None; it is the quantity whose limit identifies the growth rate on
    exploding paths.
    """

    initial_state: int
    states: tuple[ExtendedCount, ...]
    termination: TerminationKind
    termination_step: int
    ratios: tuple[Optional[float], ...]


class RatioRow(NamedTuple):
    step: int
    state: ExtendedCount
    y: float
    relative_error: float


def _as_count(x: Union[int, ExtendedCount]) -> ExtendedCount:
    if isinstance(x, ExtendedCount):
        return x
    return ExtendedCount.exact(int(x))


def step(
    x: Union[int, ExtendedCount],
    params: IGWParams,
    rng: RngStream,
    *,
    exact_cap: int = DEFAULT_EXACT_CAP,
) -> ExtendedCount:
    """One transition of the chain from state x."""
    state = _as_count(x)
    if state.is_zero():
        return ZERO_COUNT
    if state.is_exact:
        _, total = simulate_total_progeny(
            params.law,
            state.exact_value,  # type: ignore[arg-type]
            rng,
            exact_cap=exact_cap,
            record_generations=False,
        )
        return thin(total, params.theta, rng, exact_cap=exact_cap)
    m = mean(params.law)
    if m <= 1.0:
        raise RegimeError("log-tier states only arise from supercritical growth (m > 1)")
    log_next = _approx_step_log(state.log(), m, params.theta)
    return ExtendedCount.from_log(min(log_next, LOG_VALUE_LIMIT), exact_cap=exact_cap)


def _approx_step_log(log_x: float, m: float, theta: float) -> float:
    # log S = x log m + log(m/(m-1)), then thin: + log theta.  An overflowing
    # x leaves inf, which the caller saturates to a finite sentinel.
    try:
        xf = math.exp(log_x)
    except OverflowError:
        xf = math.inf
    shift = math.log(m / (m - 1.0)) + math.log(theta)
    return xf * math.log(m) + shift


def _ratio_shift(params: IGWParams) -> Optional[float]:
    m = mean(params.law)
    if m <= 1.0:
        return None
    return math.log(m / (m - 1.0)) + math.log(params.theta)


def simulate_trajectory(
    x0: int,
    params: IGWParams,
    horizon: int,
    explosion_threshold: Union[int, ExtendedCount],
    rng: RngStream,
    *,
    exact_cap: int = DEFAULT_EXACT_CAP,
) -> Trajectory:
    """Iterate the chain from x0 until death, threshold crossing, or horizon.

    Death means the first zero state (absorbing), explosion means the first
    state at or above ``explosion_threshold``.  Trajectories that reach the
    horizon undecided are reported as such, never folded into either class.
    """
    if x0 < 1:
        raise ValueError("start the chain from a positive state")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    threshold = _as_count(explosion_threshold)
    start = ExtendedCount.exact(x0)
    if threshold < start:
        raise ValueError("explosion threshold must be at least the start state")

    m = mean(params.law)
    log_m = math.log(m) if m > 0 else -math.inf
    shift = _ratio_shift(params)
    monotone = params.theta == 1.0 and params.law.p0 == 0.0

    states = [start]
    ratios: list[Optional[float]] = []

    if not start < threshold:
        return Trajectory(x0, tuple(states), TerminationKind.EXPLODED, 0, ())

    current = start
    for n in range(horizon):
        nxt = step(current, params, rng, exact_cap=exact_cap)
        if monotone:
            assert not nxt < current, "paths must be nondecreasing without thinning or deaths"

        y: Optional[float] = None
        if not current.is_zero() and not nxt.is_zero():
            if current.is_exact:
                y = nxt.log() / current.exact_value  # type: ignore[operator]
            else:
                # deterministic-tier step: log X' = X log m + shift exactly
                xf = current.to_float()
                y = log_m + (shift / xf if math.isfinite(xf) else 0.0)
        ratios.append(y)
        states.append(nxt)

        if nxt.is_zero():
            return Trajectory(x0, tuple(states), TerminationKind.DIED, n + 1, tuple(ratios))
        if not nxt < threshold:
            return Trajectory(x0, tuple(states), TerminationKind.EXPLODED, n + 1, tuple(ratios))
        current = nxt

    return Trajectory(x0, tuple(states), TerminationKind.HORIZON, horizon, tuple(ratios))


def classify_regimes(params: IGWParams) -> RegimeReport:
    """Mean and almost-sure behaviour from (law, theta) alone.

    Laws putting all mass on one child get their own label: the chain is
    then a pure thinning chain (S_x = x), constant without thinning and
    almost surely dying with it.  Mean criticality is decided up to the pmf
    tolerance band around m = 1.
    """
    law = params.law
    theta = params.theta
    m = mean(law)
    critical = abs(m - 1.0) <= MEAN_CRITICAL_TOL

    if m > 1.0 and not critical:
        mean_regime = MeanRegime.EXPLODES
    elif critical and theta == 1.0:
        mean_regime = MeanRegime.CONSTANT
    else:
        mean_regime = MeanRegime.VANISHES

    if law.p1 == 1.0:
        as_regime = AlmostSureRegime.THINNED_IDENTITY
    elif law.p0 > 0.0:
        as_regime = AlmostSureRegime.DEATH
    elif theta == 1.0:
        as_regime = AlmostSureRegime.EXPLOSION
    else:
        as_regime = AlmostSureRegime.MIXED
    return RegimeReport(mean_regime, as_regime)


def asymptotic_ratios(traj: Trajectory, law_mean: float) -> list[RatioRow]:
    """Per-step growth diagnostic rows (n, X_n, Y_n, Y_n/log(m) - 1).

    Steps whose ratio is undefined (a zero on either end) are skipped.
    Only meaningful for supercritical laws, where log m > 0.
    """
    if law_mean <= 1.0:
        raise RegimeError("growth-ratio diagnostics need a supercritical mean (m > 1)")
    if len(traj.states) < 2:
        raise ValueError("trajectory must contain at least two states")
    log_m = math.log(law_mean)
    rows = []
    for n, y in enumerate(traj.ratios):
        if y is None:
            continue
        rows.append(RatioRow(n, traj.states[n], y, y / log_m - 1.0))
    return rows
