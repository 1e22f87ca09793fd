"""Exact truncated distributions and certified probability intervals.

The workhorse is a dynamic program over the joint law of (Z_k, S_k): the
generation size and the running total progeny of the auxiliary branching
process.  Each generation convolves the offspring pmf Z_k-fold (computed by
a rolling incremental convolution) and adds the new generation to the
total.  Mass that leaves the tracked box (generation size beyond ``z_cap``
or total beyond ``s_cap``) is moved to explicit overflow buckets, never
dropped, so every downstream probability can be closed into a rigorous
two-sided interval:

* lower envelope for death probabilities: untracked mass is routed to a
  phantom state whose only exit is the uniform per-step death floor p_0
  (never, when p_0 = 0),
* upper envelope: untracked mass is treated as death-prone as its
  provenance allows (totals provably beyond ``s_cap`` thin like a
  Binomial(s_cap + 1, theta); mass whose location was pruned dies
  outright; chain states beyond ``x_cap`` are clamped to ``x_cap``), valid
  because the chain is stochastically monotone in its start state and
  death probabilities are nonincreasing in it.

One quantity needs no truncation at all: P_x(X_1 = 0) = E((1-theta)^{S_x})
follows from the scalar recursion a_{j+1} = f(t * a_j) with t = 1 - theta,
exact to floating precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import binom

from .reproduction_laws import IGWParams, OffspringLaw, RegimeError, pgf_eval

#: tiny probability masses are swept into the unknown-location bucket
#: rather than tracked; accumulated over a full sweep they stay far below
#: every certified tolerance in use (the envelopes treat untracked mass
#: worst-case, so pruning can only widen intervals, never break them).
BAND_TRIM = 1e-22  # per-use edge trim of a convolution power
CELL_BUDGET = 1e-24  # per-row absolute mass budget for extra band trimming
ROW_PRUNE = 1e-16  # drop a generation-size row below this mass
LIVE_EXIT = 1e-13  # freeze the sweep once the live mass is below this

#: upper bound on the interval slack the pruning constants above can add to
#: any certified probability over a full default-caps sweep.
PRUNING_SLACK = 1e-7


@dataclass(frozen=True)
class Caps:
    """Truncation bounds: generation size, total progeny, chain state."""

    z_cap: int = 4096
    s_cap: int = 4096
    x_cap: int = 512

    def __post_init__(self) -> None:
        if min(self.z_cap, self.s_cap, self.x_cap) < 1:
            raise ValueError("all caps must be >= 1")


@dataclass(frozen=True, eq=False)
class TruncatedDist:
    """Probability vector on {0..cap} plus explicitly tracked leftover mass.

    ``overflow`` accounts for every truncation event: mass on values beyond
    the cap and mass whose location the truncated computation can no longer
    resolve.  atoms.sum() + overflow = 1 up to float accumulation.
    """

    atoms: np.ndarray
    overflow: float
    warning: Optional[str] = None

    @property
    def cap(self) -> int:
        return len(self.atoms) - 1

    def total(self) -> float:
        return float(self.atoms.sum()) + self.overflow


@dataclass(frozen=True)
class IntervalProb:
    """A certified enclosure [lo, hi] of a probability."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        lo = min(max(float(self.lo), 0.0), 1.0)
        hi = min(max(float(self.hi), 0.0), 1.0)
        if lo > hi:
            if lo - hi > 1e-9:
                raise ValueError(f"interval [{self.lo!r}, {self.hi!r}] is inverted")
            lo = hi = 0.5 * (lo + hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


# -- the (Z, S) sweep ----------------------------------------------------------


class _SweepState:
    __slots__ = ("rows", "dead", "ov_high", "ov_unknown", "snapshots", "frozen")

    def __init__(self, s_cap: int):
        self.rows: dict[int, np.ndarray] = {}
        self.dead = np.zeros(s_cap + 1)
        self.ov_high = 0.0  # mass provably on totals > s_cap
        self.ov_unknown = 0.0  # mass whose location was pruned away
        self.snapshots: list[tuple[np.ndarray, float, float]] = []
        self.frozen = False


_sweep_cache: dict[tuple, _SweepState] = {}


def _trim_band(band: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero indices and values of a convolution power, with edges of
    cumulative mass up to ``level`` dropped on each side (the dropped mass
    is accounted by the caller via sums)."""
    nz = np.nonzero(band > 0.0)[0]
    if nz.size == 0:
        return nz, band[nz]
    vals = band[nz]
    csum = np.cumsum(vals)
    total = csum[-1]
    lo = int(np.searchsorted(csum, level, side="right"))
    hi = int(np.searchsorted(csum, total - level, side="left")) + 1
    hi = max(hi, lo + 1)
    return nz[lo:hi], vals[lo:hi]


def _advance_generation(
    state: _SweepState, law: OffspringLaw, z_cap: int, s_cap: int
) -> None:
    pmf = law.probs_array
    ov_high = state.ov_high
    ov_unknown = state.ov_unknown
    band = np.array([1.0])  # offspring total of 0 parents
    band_z = 0
    p0 = law.p0
    k_min = next(k for k, p in enumerate(law.probs) if p > 0.0)

    # contributions accumulate in sheared coordinates [z', s_source]: the new
    # total is s_source + z', so unshearing is one shift per output row
    newsh = np.zeros((z_cap + 1, s_cap + 1))
    touched = np.zeros(z_cap + 1, dtype=bool)

    for z in sorted(state.rows):
        row = state.rows[z]
        row_total = float(row.sum())
        if row_total <= ROW_PRUNE:
            ov_unknown += row_total
            continue
        s_nz = np.nonzero(row)[0]
        a, b = int(s_nz[0]), int(s_nz[-1]) + 1
        # reachability short-circuits: every surviving child count lands
        # beyond s_cap, so only extinction (if possible) stays tracked
        if k_min >= 1 and a + z * k_min > s_cap:
            ov_high += row_total
            continue
        if k_min == 0 and a + 1 > s_cap:
            ext = p0**z
            state.dead[a:b] += ext * row[a:b]
            ov_high += row_total * (1.0 - ext)
            continue
        while band_z < z:
            band = np.convolve(band, pmf)[: z_cap + 1]
            band_z += 1
        band_mass = float(band.sum())
        # generation sizes beyond z_cap land on totals s + z' > s_cap when
        # z_cap >= s_cap - a; otherwise their location is unresolved
        if a + z_cap + 1 > s_cap:
            ov_high += row_total * (1.0 - band_mass)
        else:
            ov_unknown += row_total * (1.0 - band_mass)
        nzi, nzv = _trim_band(band, max(BAND_TRIM, CELL_BUDGET / row_total))
        ov_unknown += row_total * (band_mass - float(nzv.sum()))
        # offspring totals that overshoot s_cap even from this row's lowest s
        cut = int(np.searchsorted(nzi, s_cap - a, side="right"))
        if cut < len(nzi):
            ov_high += row_total * float(nzv[cut:].sum())
            nzi, nzv = nzi[:cut], nzv[:cut]
        if len(nzi) == 0:
            continue
        seg = row[a:b]
        z0, z1 = int(nzi[0]), int(nzi[-1]) + 1
        if z1 - z0 == len(nzi):
            # contiguous offspring support: in-place block update
            chunk = max(1, 8_000_000 // (b - a))
            for i0 in range(0, len(nzi), chunk):
                i1 = min(i0 + chunk, len(nzi))
                newsh[z0 + i0 : z0 + i1, a:b] += nzv[i0:i1, None] * seg
            touched[z0:z1] = True
        else:
            chunk = max(1, 4_000_000 // (b - a))
            for i0 in range(0, len(nzi), chunk):
                i1 = min(i0 + chunk, len(nzi))
                newsh[nzi[i0:i1], a:b] += np.outer(nzv[i0:i1], seg)
            touched[nzi] = True

    new_rows: dict[int, np.ndarray] = {}
    for zp in np.nonzero(touched)[0]:
        zp = int(zp)
        u_row = newsh[zp]
        if zp == 0:
            state.dead += u_row  # zero offspring leave the total where it was
            continue
        keep = s_cap - zp + 1  # u < keep lands at s = u + zp <= s_cap
        tail = float(u_row[keep:].sum())
        if tail > 0.0:
            ov_high += tail
        kept = u_row[:keep]
        nz = np.nonzero(kept)[0]
        if nz.size == 0:
            continue
        total = float(kept.sum())
        # thin edge tails are dropped at creation so next-generation windows
        # stay narrow; the mass is accounted as unresolved
        level = max(BAND_TRIM, CELL_BUDGET / max(total, CELL_BUDGET))
        if total <= 2.0 * level or total <= ROW_PRUNE:
            ov_unknown += total
            continue
        vals = kept[nz]
        csum = np.cumsum(vals)
        lo_i = min(int(np.searchsorted(csum, level, side="right")), len(nz) - 1)
        hi_i = int(np.searchsorted(csum, csum[-1] - level, side="left")) + 1
        hi_i = min(max(hi_i, lo_i + 1), len(nz))
        ov_unknown += total - float(vals[lo_i:hi_i].sum())
        dst = np.zeros(s_cap + 1)
        lo_u, hi_u = int(nz[lo_i]), int(nz[hi_i - 1]) + 1
        dst[zp + lo_u : zp + hi_u] = u_row[lo_u:hi_u]
        new_rows[zp] = dst

    state.rows = new_rows
    live = sum(float(r.sum()) for r in new_rows.values())
    if live <= LIVE_EXIT:
        ov_unknown += live
        new_rows.clear()
        state.frozen = True
    state.ov_high = ov_high
    state.ov_unknown = ov_unknown


def _marginal(state: _SweepState) -> tuple[np.ndarray, float, float]:
    snap = state.dead.copy()
    for row in state.rows.values():
        snap += row
    return snap, state.ov_high, state.ov_unknown


def _progeny_snapshots(
    law: OffspringLaw, x_max: int, z_cap: int, s_cap: int
) -> list[tuple[np.ndarray, float, float]]:
    """Marginal law of S_x as (atoms, provably-high mass, unresolved mass)
    for every x = 0..x_max, from a single cached sweep per (law, caps) that
    extends on demand."""
    key = (law, z_cap, s_cap)
    state = _sweep_cache.get(key)
    if state is None:
        state = _SweepState(s_cap)
        init = np.zeros(s_cap + 1)
        init[0] = 1.0
        state.rows = {1: init}
        state.snapshots.append(_marginal(state))  # x = 0: S_0 = 0
        _sweep_cache[key] = state
    while len(state.snapshots) <= x_max:
        if state.frozen:
            state.snapshots.append(_marginal(state))
            continue
        _advance_generation(state, law, z_cap, s_cap)
        state.snapshots.append(_marginal(state))
    return state.snapshots[: x_max + 1]


def total_progeny_dist(
    law: OffspringLaw, x: int, z_cap: int = 4096, s_cap: int = 4096
) -> TruncatedDist:
    """Exact (truncated) law of S_x = Z_1 + ... + Z_x."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    atoms, ov_high, ov_unknown = _progeny_snapshots(law, x, z_cap, s_cap)[x]
    overflow = ov_high + ov_unknown
    warning = "all-mass-in-overflow" if overflow > 1.0 - 1e-9 else None
    return TruncatedDist(atoms.copy(), overflow, warning)


# -- thinning mixtures ----------------------------------------------------------

_binom_cache: dict[tuple[float, int, int], np.ndarray] = {}


def _binom_matrix(theta: float, s_max: int, j_max: int) -> np.ndarray:
    """B[s, j] = P(Binomial(s, theta) = j) for s = 0..s_max, j = 0..j_max."""
    key = (theta, s_max, j_max)
    cached = _binom_cache.get(key)
    if cached is None:
        s = np.arange(s_max + 1)[:, None]
        j = np.arange(j_max + 1)[None, :]
        cached = binom.pmf(j, s, theta)
        _binom_cache[key] = cached
    return cached


def one_step_dist(x: int, params: IGWParams, caps: Caps = Caps()) -> TruncatedDist:
    """Law of X_1 from state x: the theta-thinning of S_x.

    Total-progeny mass beyond ``s_cap`` cannot be resolved into atoms here
    and is reported as overflow; the envelope constructions used for bounds
    place it rigorously instead.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    s_atoms, ov_high, ov_unknown = _progeny_snapshots(
        params.law, x, caps.z_cap, caps.s_cap
    )[x]
    s_over = ov_high + ov_unknown
    B = _binom_matrix(params.theta, caps.s_cap + 1, caps.x_cap)
    atoms = s_atoms @ B[: caps.s_cap + 1]
    x_over = max(0.0, (1.0 - s_over) - float(atoms.sum()))
    warning = "all-mass-in-overflow" if s_over + x_over > 1.0 - 1e-9 else None
    return TruncatedDist(atoms, s_over + x_over, warning)


def one_step_death_prob(x: int, params: IGWParams) -> float:
    """P_x(X_1 = 0) = E((1-theta)^{S_x}), by the scalar recursion
    a_0 = 1, a_{j+1} = f(t * a_j) at t = 1 - theta; exact to float precision
    with no truncation of any kind."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    t = 1.0 - params.theta
    a = 1.0
    for _ in range(x):
        a = pgf_eval(params.law, t * a)
    return a


def transition_kernel(
    params: IGWParams, x_cap: int, caps: Caps = Caps()
) -> tuple[np.ndarray, list[str]]:
    """One-step kernel rows for states 0..x_cap plus an overflow column.

    Row x is ``one_step_dist(x)``; row 0 is the point mass at 0.  Returns
    the (x_cap+1) x (x_cap+2) matrix and any row warnings.
    """
    snaps = _progeny_snapshots(params.law, x_cap, caps.z_cap, caps.s_cap)
    B = _binom_matrix(params.theta, caps.s_cap + 1, x_cap)
    K = np.zeros((x_cap + 1, x_cap + 2))
    warnings: list[str] = []
    for x, (s_atoms, ov_high, ov_unknown) in enumerate(snaps):
        row = s_atoms @ B[: caps.s_cap + 1]
        K[x, : x_cap + 1] = row
        K[x, x_cap + 1] = max(0.0, 1.0 - float(row.sum()))
        if ov_high + ov_unknown > 1.0 - 1e-9 and x > 0:
            warnings.append(f"row {x}: all-mass-in-overflow")
    return K, warnings


# -- envelope kernels and certified intervals -----------------------------------

_kernel_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _envelope_kernels(params: IGWParams, caps: Caps) -> tuple[np.ndarray, np.ndarray]:
    """(death-upper, death-lower) kernels on states 0..x_cap.

    The upper kernel treats untracked mass as death-prone as its knowledge
    allows: totals provably beyond ``s_cap`` thin like the stochastically
    smallest consistent count, Binomial(s_cap + 1, theta); mass whose
    location was pruned dies outright; chain states beyond ``x_cap`` clamp
    to ``x_cap`` (valid by stochastic monotonicity).  The lower kernel
    routes all untracked mass to a phantom state (the last column) that
    dies at the uniform per-step floor p_0: from any state the first
    auxiliary generation is empty with probability p_0, so every state dies
    next step at least that often.  With p_0 = 0 the phantom never dies.
    """
    key = (params.law, params.theta, caps)
    cached = _kernel_cache.get(key)
    if cached is not None:
        return cached
    x_cap, s_cap = caps.x_cap, caps.s_cap
    snaps = _progeny_snapshots(params.law, x_cap, caps.z_cap, s_cap)
    B = _binom_matrix(params.theta, s_cap + 1, x_cap)
    K_hi = np.zeros((x_cap + 1, x_cap + 1))
    K_lo = np.zeros((x_cap + 2, x_cap + 2))
    for x, (s_atoms, ov_high, ov_unknown) in enumerate(snaps):
        base = s_atoms @ B[: s_cap + 1]
        row_hi = base + ov_high * B[s_cap + 1]
        row_hi[0] += ov_unknown
        row_hi[x_cap] += max(0.0, 1.0 - float(row_hi.sum()))
        K_hi[x] = row_hi
        K_lo[x, : x_cap + 1] = base
        K_lo[x, x_cap + 1] = max(0.0, 1.0 - float(base.sum()))
    K_lo[x_cap + 1, 0] = params.law.p0
    K_lo[x_cap + 1, x_cap + 1] = 1.0 - params.law.p0
    _kernel_cache[key] = (K_hi, K_lo)
    return K_hi, K_lo


def _iterate(kernel: np.ndarray, x: int, n: int) -> np.ndarray:
    v = np.zeros(kernel.shape[0])
    v[x] = 1.0
    for _ in range(n):
        v = v @ kernel
    return v


def finite_horizon_death(
    x: int, params: IGWParams, n: int, caps: Caps = Caps()
) -> IntervalProb:
    """Certified enclosure of P_x(X_n = 0)."""
    if n < 1:
        raise ValueError("horizon must be >= 1")
    if not 0 <= x <= caps.x_cap:
        raise ValueError(f"start state {x} outside the tracked range 0..{caps.x_cap}")
    K_hi, K_lo = _envelope_kernels(params, caps)
    lo = float(_iterate(K_lo, x, n)[0])
    hi = float(_iterate(K_hi, x, n)[0])
    return IntervalProb(min(lo, hi), max(lo, hi))


def death_prob_interval(
    x: int, params: IGWParams, caps: Caps = Caps(), horizon: int = 256
) -> IntervalProb:
    """Certified enclosure of the total death probability P_x(D).

    Defined in the mixed regime (p_0 = 0, p_1 != 1).  Without thinning the
    chain cannot die, so theta = 1 returns [0, 0].  The lower end is the
    never-dying-overflow envelope at the horizon (finite-horizon death
    increases to P_x(D)); the upper end closes the still-alive mass with
    the fixed-point certificate q*^y, using q*^{x_cap} for clamped mass,
    which degenerates to 1 when m*theta <= 1.
    """
    law = params.law
    if law.p0 > 0.0:
        raise RegimeError("death intervals target the p_0 = 0 regime (use the absorption check)")
    if law.p1 == 1.0:
        raise RegimeError("single-child laws form a pure thinning chain; no mixed regime")
    if not 1 <= x <= caps.x_cap:
        raise ValueError(f"start state {x} outside the tracked range 1..{caps.x_cap}")
    if params.theta == 1.0:
        return IntervalProb(0.0, 0.0)
    from .analysis import fixed_point_q  # deferred: analysis builds on this module

    K_hi, K_lo = _envelope_kernels(params, caps)
    lo = float(_iterate(K_lo, x, horizon)[0])
    v_hi = _iterate(K_hi, x, horizon)
    q_star = fixed_point_q(params, 1e-13)
    powers = q_star ** np.arange(caps.x_cap + 1)
    hi = min(1.0, float(v_hi @ powers))
    return IntervalProb(lo, max(lo, hi))
