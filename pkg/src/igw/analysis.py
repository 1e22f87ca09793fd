"""Analytic certificates and the Monte Carlo estimation harness.

Certificates
    * the smallest fixed point q* of s = g(s) for the thinned generating
      function, an upper bound on the death probability from state 1 in the
      supercritical-thinned regime (m * theta > 1),
    * its closed form for the binary family,
    * the geometric chain bound q1^x for higher start states,
    * a product lower bound on the explosion probability: with
      phi(y) = y + 1 and psi(y) = y^2, the chance that the chain ever fails
      to gain a unit is controlled by gamma(y) >= P_y(X_1 <= y + 1), and
      P_y(always gaining) >= prod_k (1 - gamma(y + k)).  Small y use exact
      one-step tail probabilities; large y use a Markov bound on 1/Z_y plus
      an exponential-moment bound on the thinning, and the infinite tail is
      closed in closed form once the terms provably decay geometrically.

Monte Carlo
    Replica r of an experiment draws from its own counter-based stream, so
    estimates are bit-for-bit reproducible at any worker count.  Death-type
    estimates come with Wilson score intervals; trajectories that are still
    undecided at the horizon are reported separately, never folded into
    either class.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import binom, norm

from .exact_dist import Caps, IntervalProb, _progeny_snapshots, finite_horizon_death
from .gw_engine import DEFAULT_EXACT_CAP, ExtendedCount, harmonic_moment, stream_for
from .igw_process import TerminationKind, simulate_trajectory
from .reproduction_laws import IGWParams, RegimeError, mean, thinned_pgf

#: every product factor is kept at least this large so certificates stay
#: strictly inside (0, 1) even when the underlying tails underflow floats;
#: inflating a gamma only weakens (never invalidates) the lower bound.
GAMMA_FLOOR = 1e-16


# -- fixed points and closed forms ----------------------------------------------


def fixed_point_q(params: IGWParams, tol: float = 1e-12) -> float:
    """Smallest root q* of s = g(s) in [0, 1), by bisection.

    g is convex with g(1) = 1, so a nontrivial root below 1 exists exactly
    when g'(1) = m * theta > 1; otherwise 1.0 is reported.  Requires
    p_0 = 0 (with p_0 > 0 the plain extinction analysis applies instead).
    """
    if params.law.p0 > 0.0:
        raise RegimeError("the fixed-point certificate needs p_0 = 0")
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    m = mean(params.law)
    if m * params.theta <= 1.0:
        return 1.0
    g0 = thinned_pgf(params, 0.0)
    if g0 == 0.0:
        return 0.0  # no thinning: 0 is itself the smallest fixed point
    lo = 0.0
    hi = None
    for i in range(1, 60):
        cand = 1.0 - 0.5**i
        if thinned_pgf(params, cand) < cand:
            hi = cand
            break
    if hi is None:
        return 1.0  # root indistinguishable from 1 at float resolution
    width_goal = min(tol, 1e-14)
    while hi - lo > width_goal:
        mid = 0.5 * (lo + hi)
        if thinned_pgf(params, mid) > mid:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def binary_death_bound(lam: float, theta: float) -> float:
    """Closed-form death bound (1-theta)(1-lam*theta)/(lam*theta^2) for the
    binary law, valid when theta exceeds 1/m = 1/(1+lam); clamped to [0, 1].
    """
    lam = float(lam)
    theta = float(theta)
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"binary parameter {lam!r} outside (0, 1]")
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"thinning parameter {theta!r} outside (0, 1]")
    if theta <= 1.0 / (1.0 + lam):
        raise RegimeError(
            f"closed form needs theta > 1/(1+lambda) = {1.0 / (1.0 + lam)!r}; got {theta!r}"
        )
    value = (1.0 - theta) * (1.0 - lam * theta) / (lam * theta * theta)
    return min(max(value, 0.0), 1.0)


def geometric_death_bound(q1_hi: float, x: int) -> float:
    """q1^x: death from state x is at most the state-1 bound to the x-th
    power (death probabilities are submultiplicative in the start state)."""
    q1_hi = float(q1_hi)
    if not 0.0 <= q1_hi <= 1.0:
        raise ValueError(f"q1 bound {q1_hi!r} outside [0, 1]")
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 1.0
    if q1_hi == 0.0:
        return 0.0
    if x * abs(math.log(q1_hi)) < 700.0:
        return q1_hi**x
    return math.exp(x * math.log(q1_hi))


# -- explosion certificate --------------------------------------------------------


@dataclass(frozen=True)
class CertificateStep:
    """One product factor: state x_k, its raw one-step stall bound, the
    monotonized/floored value actually multiplied, and how it was obtained."""

    x_k: int
    gamma_raw: float
    gamma: float
    method: str  # "exact" | "tail-bound"


@dataclass(frozen=True)
class ExplosionCertificate:
    start: int
    steps: tuple[CertificateStep, ...]
    tail_sum: float
    tail_sup: float
    bound: float
    valid: bool


def _bernoulli_decay(theta: float, loose: bool) -> float:
    """E(e^{-survival indicator}) for one thinning trial, or the looser
    classical constant e^{-theta^2} when asked to reproduce it."""
    if loose:
        return math.exp(-theta * theta)
    return 1.0 - theta + theta / math.e


def _chernoff_thinning(y: int, theta: float, loose: bool) -> float:
    """Upper bound on P(Binomial(y^2, theta) <= y + 1).

    With no thinning the count is exactly y^2 > y + 1 for y >= 2, so the
    probability is identically zero.
    """
    if theta == 1.0:
        return 0.0 if y * y > y + 1 else 1.0
    beta = _bernoulli_decay(theta, loose)
    log_b = (y + 1.0) + (y * y) * math.log(beta)
    return math.exp(log_b) if log_b < 0.0 else 1.0


def explosion_lower_bound(
    x: int,
    params: IGWParams,
    caps: Caps = Caps(),
    switch_point: int = 64,
    *,
    quad_tol: float = 1e-10,
    stop_eps: float = 1e-12,
    loose_bernoulli: bool = False,
    max_terms: int = 100_000,
) -> ExplosionCertificate:
    """Certified lower bound on the explosion probability from state x.

    Requires p_0 = 0, p_1 != 1, x >= 1.  Exact one-step tail probabilities
    are used while x_k = x + k stays at or below ``switch_point`` (with
    untracked total-progeny mass bounded by its worst-case binomial tail);
    beyond that, gamma(y) <= y^2 * E(1/Z_y) + Chernoff(thinning).  The
    harmonic moments are quadratures sharpened by the provable one-step
    contraction E(1/Z_{y+1}) <= (1 - (1-p_1)/2) * E(1/Z_y).  Returns bound
    0 with ``valid=False`` if any stall probability reaches 1.
    """
    law = params.law
    theta = params.theta
    if law.p0 > 0.0:
        raise RegimeError("explosion certificates need p_0 = 0")
    if law.p1 == 1.0:
        raise RegimeError("single-child laws never explode; no certificate exists")
    if x < 1:
        raise ValueError("x must be >= 1")

    contraction = 1.0 - (1.0 - law.p1) / 2.0
    raw: list[tuple[int, float, str]] = []

    # exact region
    exact_top = min(switch_point, x + max_terms)
    if x <= exact_top:
        snaps = _progeny_snapshots(law, exact_top, caps.z_cap, caps.s_cap)
        for y in range(x, exact_top + 1):
            s_atoms, ov_high, ov_unknown = snaps[y]
            t = y + 1
            nz = np.nonzero(s_atoms)[0]
            p = float(np.dot(s_atoms[nz], binom.cdf(t, nz, theta)))
            if ov_high > 0.0:
                p += ov_high * float(binom.cdf(t, caps.s_cap + 1, theta))
            p += ov_unknown  # unresolved mass could sit anywhere
            raw.append((y, min(p, 1.0), "exact"))

    # analytic region, extended until the terms are provably in geometric decay
    y = max(x, switch_point + 1)
    h_used = None
    h_anchor_y = None
    terms = 0
    while True:
        if terms >= max_terms:
            return ExplosionCertificate(x, (), math.inf, 1.0, 0.0, False)
        h_quad = harmonic_moment(law, y, quad_tol) + quad_tol
        if h_used is None:
            h_used = h_quad
        else:
            h_used = min(h_quad, h_used * contraction ** (y - h_anchor_y))
        h_anchor_y = y
        gamma_a = (y * y) * h_used
        gamma_b = _chernoff_thinning(y, theta, loose_bernoulli)
        g = min(gamma_a + gamma_b, 1.0)
        raw.append((y, g, "tail-bound"))
        terms += 1
        ratio_a_ok = contraction * ((y + 1.0) / y) ** 2 < 1.0
        if theta == 1.0:
            ratio_b_ok = True
        else:
            beta = _bernoulli_decay(theta, loose_bernoulli)
            ratio_b_ok = 1.0 + (2.0 * y + 1.0) * math.log(beta) < 0.0
        if g <= stop_eps and ratio_a_ok and ratio_b_ok:
            break
        y += 1

    # closed-form tail beyond the last explicit state Y
    Y = y
    r = contraction
    geom = r / (1.0 - r)
    tail_a = h_used * (Y * Y * geom + 2.0 * Y * r / (1.0 - r) ** 2 + r * (1.0 + r) / (1.0 - r) ** 3)
    b_next = _chernoff_thinning(Y + 1, theta, loose_bernoulli)
    if theta == 1.0 or b_next == 0.0:
        tail_b = 0.0
    else:
        beta = _bernoulli_decay(theta, loose_bernoulli)
        r_b = math.e * beta ** (2.0 * (Y + 1.0) + 1.0)
        tail_b = b_next / (1.0 - r_b) if r_b < 1.0 else math.inf
    tail_sum = tail_a + tail_b
    tail_sup = min(1.0, (Y + 1.0) ** 2 * h_used * r + b_next)

    # monotone majorant: the product argument needs gamma nonincreasing in
    # the state, so each factor is the sup over all larger states
    gammas: list[float] = [0.0] * len(raw)
    running = tail_sup
    for i in range(len(raw) - 1, -1, -1):
        running = max(running, raw[i][1])
        gammas[i] = max(running, GAMMA_FLOOR)

    steps = tuple(
        CertificateStep(raw[i][0], raw[i][1], gammas[i], raw[i][2]) for i in range(len(raw))
    )
    if any(g >= 1.0 for g in gammas) or tail_sup >= 1.0 or not math.isfinite(tail_sum):
        return ExplosionCertificate(x, steps, tail_sum, tail_sup, 0.0, False)

    log_prod = sum(math.log1p(-g) for g in gammas)
    log_tail = -tail_sum / (1.0 - tail_sup)
    bound = math.exp(log_prod + log_tail)
    return ExplosionCertificate(x, steps, tail_sum, tail_sup, bound, True)


# -- Monte Carlo -------------------------------------------------------------------


@dataclass(frozen=True)
class McEstimate:
    """A Monte Carlo proportion with its Wilson score interval."""

    replicas: int
    successes: int
    point: float
    ci_lo: float
    ci_hi: float
    confidence: float
    master_seed: int


def wilson_interval(successes: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    """Wilson score interval; well behaved for proportions near 0 and 1."""
    if n < 1:
        raise ValueError("need at least one trial")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p_hat = successes / n
    denom = 1.0 + z * z / n
    center = (p_hat + z * z / (2.0 * n)) / denom
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / n + z * z / (4.0 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class McDeathResult:
    estimate: McEstimate
    exploded_fraction: float
    undecided_fraction: float


_CHUNK = 1024


def _death_chunk(args) -> tuple[int, int, int]:
    params, x, horizon, threshold, exact_cap, master_seed, start, stop = args
    died = exploded = undecided = 0
    for r in range(start, stop):
        rng = stream_for(master_seed, r, f"mc-death:{x}")
        traj = simulate_trajectory(
            x, params, horizon, threshold, rng, exact_cap=exact_cap
        )
        if traj.termination is TerminationKind.DIED:
            died += 1
        elif traj.termination is TerminationKind.EXPLODED:
            exploded += 1
        else:
            undecided += 1
    return died, exploded, undecided


def mc_death_prob(
    x: int,
    params: IGWParams,
    replicas: int,
    horizon: int,
    threshold,
    master_seed: int,
    *,
    confidence: float = 0.99,
    workers: int = 1,
    exact_cap: int = DEFAULT_EXACT_CAP,
) -> McDeathResult:
    """Fraction of trajectories absorbed at 0, with a Wilson interval.

    Horizon-undecided trajectories are reported separately.  Replica r
    always uses the stream derived from (master_seed, r), so the result is
    identical at any worker count.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    tasks = [
        (params, x, horizon, threshold, exact_cap, master_seed, start, min(start + _CHUNK, replicas))
        for start in range(0, replicas, _CHUNK)
    ]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_death_chunk, tasks))
    else:
        parts = [_death_chunk(t) for t in tasks]
    died = sum(p[0] for p in parts)
    exploded = sum(p[1] for p in parts)
    undecided = sum(p[2] for p in parts)
    ci_lo, ci_hi = wilson_interval(died, replicas, confidence)
    est = McEstimate(replicas, died, died / replicas, ci_lo, ci_hi, confidence, master_seed)
    return McDeathResult(est, exploded / replicas, undecided / replicas)


# -- growth-ratio experiments -------------------------------------------------------


@dataclass(frozen=True)
class RatioTableRow:
    step: int
    count: int
    median_y: float
    err_q10: float
    err_q50: float
    err_q90: float


#: internal crossing threshold for ratio runs: effectively never triggers
#: before the log-domain saturation does, so every observable ratio is kept.
_RATIO_THRESHOLD = ExtendedCount(log_value=1e30)


def mc_ratio_convergence(
    params: IGWParams,
    x0: int,
    replicas: int,
    master_seed: int,
    *,
    horizon: int = 256,
    exact_cap: int = DEFAULT_EXACT_CAP,
) -> list[RatioTableRow]:
    """Per-step table of the growth ratio Y_n = log(X_{n+1})/X_n over
    exploding paths only: count, median Y_n, and quantiles of the relative
    error Y_n/log(m) - 1.  Deterministic given the seed."""
    law = params.law
    if law.p0 > 0.0:
        raise RegimeError("ratio experiments need p_0 = 0")
    m = mean(law)
    if m <= 1.0:
        raise RegimeError("ratio experiments need a supercritical mean (m > 1)")
    log_m = math.log(m)
    buckets: dict[int, list[float]] = {}
    for r in range(replicas):
        rng = stream_for(master_seed, r, f"mc-ratio:{x0}")
        traj = simulate_trajectory(
            x0, params, horizon, _RATIO_THRESHOLD, rng, exact_cap=exact_cap
        )
        if traj.termination is not TerminationKind.EXPLODED:
            continue
        for n, y in enumerate(traj.ratios):
            if y is not None:
                buckets.setdefault(n, []).append(y)
    rows = []
    for n in sorted(buckets):
        ys = np.asarray(buckets[n])
        errs = ys / log_m - 1.0
        q10, q50, q90 = np.quantile(errs, [0.1, 0.5, 0.9])
        rows.append(RatioTableRow(n, len(ys), float(np.median(ys)), float(q10), float(q50), float(q90)))
    return rows


def ratio_crossing_errors(
    params: IGWParams,
    x0: int,
    replicas: int,
    level: int,
    master_seed: int,
    *,
    horizon: int = 256,
    exact_cap: int = DEFAULT_EXACT_CAP,
) -> list[tuple[float, float]]:
    """Per-path relative ratio errors at the first state >= ``level`` and at
    the following step, over exploding paths that reach both.

    This is the desk-scale surrogate for almost-sure ratio convergence: the
    error should already be small when the state first clears ``level`` and
    should collapse further one step later.
    """
    law = params.law
    if law.p0 > 0.0:
        raise RegimeError("ratio experiments need p_0 = 0")
    m = mean(law)
    if m <= 1.0:
        raise RegimeError("ratio experiments need a supercritical mean (m > 1)")
    log_m = math.log(m)
    level_count = ExtendedCount.exact(level)
    out: list[tuple[float, float]] = []
    for r in range(replicas):
        rng = stream_for(master_seed, r, f"mc-ratio:{x0}")
        traj = simulate_trajectory(
            x0, params, horizon, _RATIO_THRESHOLD, rng, exact_cap=exact_cap
        )
        if traj.termination is not TerminationKind.EXPLODED:
            continue
        for n in range(len(traj.ratios) - 1):
            if traj.states[n] < level_count:
                continue
            y0, y1 = traj.ratios[n], traj.ratios[n + 1]
            if y0 is not None and y1 is not None:
                out.append((abs(y0 / log_m - 1.0), abs(y1 / log_m - 1.0)))
            break
    return out


# -- inequality verification --------------------------------------------------------

from .exact_dist import PRUNING_SLACK as _PRUNING_SLACK

_SLACK = 1e-12


@dataclass(frozen=True)
class SubmultReport:
    x: int
    y: int
    n: int
    interval_xy: IntervalProb
    interval_x: IntervalProb
    interval_y: IntervalProb
    status: str  # "certified" | "pass" | "indeterminate"


def submultiplicativity_check(
    params: IGWParams, x: int, y: int, n: int, caps: Caps = Caps()
) -> SubmultReport:
    """Check P_{x+y}(X_n = 0) <= P_x(X_n = 0) * P_y(X_n = 0) on certified
    intervals.

    "certified" means hi(x+y) <= lo(x)*lo(y), proving the inequality for
    the true values; "pass" means hi(x+y) <= hi(x)*hi(y) up to the
    documented pruning slack of the truncated sweep; anything else is
    reported indeterminate, not failed, since the inequality holds for the
    true probabilities and certified intervals can only be too wide, never
    wrong.
    """
    if params.law.p0 > 0.0:
        raise RegimeError("the submultiplicativity bound is stated for p_0 = 0")
    if min(x, y) < 1:
        raise ValueError("both start states must be >= 1")
    if n == 0:
        z = IntervalProb(0.0, 0.0)  # P(X_0 = 0) = 0 from any positive state
        return SubmultReport(x, y, 0, z, z, z, "certified")
    ixy = finite_horizon_death(x + y, params, n, caps)
    ix = finite_horizon_death(x, params, n, caps)
    iy = finite_horizon_death(y, params, n, caps)
    if ixy.hi <= ix.lo * iy.lo + _SLACK:
        status = "certified"
    elif ixy.hi <= ix.hi * iy.hi + _SLACK + _PRUNING_SLACK:
        status = "pass"
    else:
        status = "indeterminate"
    return SubmultReport(x, y, n, ixy, ix, iy, status)


@dataclass(frozen=True)
class AbsorptionRow:
    n: int
    survival_lo: float
    survival_hi: float
    geometric_bound: float
    status: str


@dataclass(frozen=True)
class AbsorptionReport:
    x: int
    p0: float
    rows: tuple[AbsorptionRow, ...]

    @property
    def all_certified(self) -> bool:
        return all(r.status == "certified" for r in self.rows)

    @property
    def any_indeterminate(self) -> bool:
        return any(r.status == "indeterminate" for r in self.rows)


def geometric_absorption_check(
    params: IGWParams, x: int, n_max: int, caps: Caps = Caps()
) -> AbsorptionReport:
    """Check the uniform geometric absorption bound
    P_x(X_n != 0) <= (1 - p_0)^n for laws that can produce zero offspring.

    Survival comes from the certified death intervals; rows whose interval
    straddles the bound are flagged indeterminate rather than failed.
    """
    p0 = params.law.p0
    if p0 <= 0.0:
        raise RegimeError("the absorption bound needs p_0 > 0")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    rows = []
    for n in range(1, n_max + 1):
        death = finite_horizon_death(x, params, n, caps)
        surv_hi = 1.0 - death.lo
        surv_lo = 1.0 - death.hi
        bound = (1.0 - p0) ** n
        if surv_hi <= bound + _SLACK:
            status = "certified"
        elif surv_lo <= bound + _SLACK:
            status = "indeterminate"
        else:
            status = "violated"
        rows.append(AbsorptionRow(n, surv_lo, surv_hi, bound, status))
    return AbsorptionReport(x, p0, tuple(rows))
