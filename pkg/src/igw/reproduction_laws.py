"""Offspring laws and their generating-function machinery.

An offspring law is a finite pmf (p_0, ..., p_K) on {0..K}.  The binary
family ``binary(lam)`` puts mass ``1-lam`` on one child and ``lam`` on two,
the classic two-outcome replication model; it expands to an explicit pmf
and behaves identically to one in every operation.

Besides the law itself this module provides the probability generating
function f(s) = sum_k p_k s^k, the thinned generating function
g(s) = f(1 - theta + theta*s) of a count whose individuals each survive
independently with probability theta, the one-step mean map
chi(x) = theta * (m + m^2 + ... + m^x) of the iterated chain, and inverse-CDF
sampling from the law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence, Union

import numpy as np

#: pmf entries must sum to 1 within this tolerance; anything farther is
#: rejected rather than renormalized so that downstream certificates stay
#: rigorous.
PMF_TOL = 1e-12

#: largest offspring count accepted by default.
DEFAULT_MAX_K = 64

#: mean values within this band of 1 are classified as critical (m = 1).
MEAN_CRITICAL_TOL = 1e-12


class LawSpecError(ValueError):
    """Malformed law specification or invalid pmf input."""


class RegimeError(ValueError):
    """An operation was asked to run outside its parameter regime."""


@dataclass(frozen=True)
class OffspringLaw:
    """Finite offspring distribution, stored as a dense pmf from k = 0.

    ``probs[k]`` is the probability of k children.  Trailing zeros are
    trimmed so equal laws compare equal regardless of construction route.
    ``binary_lambda`` remembers the binary-family parameter purely for
    round-tripping law spec strings; it does not affect equality.
    """

    probs: tuple[float, ...]
    binary_lambda: Optional[float] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        probs = tuple(float(p) for p in self.probs)
        if not probs:
            raise LawSpecError("offspring pmf must have at least one entry")
        for k, p in enumerate(probs):
            if not math.isfinite(p) or p < 0.0:
                raise LawSpecError(f"offspring probability p_{k}={p!r} is not a probability")
        total = math.fsum(probs)
        if abs(total - 1.0) > PMF_TOL:
            raise LawSpecError(
                f"offspring pmf sums to {total!r}, more than {PMF_TOL} away from 1"
            )
        while len(probs) > 1 and probs[-1] == 0.0:
            probs = probs[:-1]
        object.__setattr__(self, "probs", probs)

    # -- construction ------------------------------------------------------

    @classmethod
    def explicit(
        cls,
        probs: Union[Mapping[int, float], Sequence[float]],
        max_k: int = DEFAULT_MAX_K,
    ) -> "OffspringLaw":
        """Build a law from a pmf given as {k: p_k} or as a dense sequence."""
        if isinstance(probs, Mapping):
            if not probs:
                raise LawSpecError("empty pmf")
            for k in probs:
                if not isinstance(k, (int, np.integer)) or k < 0:
                    raise LawSpecError(f"offspring count {k!r} is not a nonnegative integer")
            top = max(probs)
            dense = [0.0] * (top + 1)
            for k, p in probs.items():
                dense[k] = float(p)
        else:
            dense = [float(p) for p in probs]
        if len(dense) - 1 > max_k:
            raise LawSpecError(f"support extends to k={len(dense) - 1}, beyond max_k={max_k}")
        return cls(tuple(dense))

    @classmethod
    def binary(cls, lam: float) -> "OffspringLaw":
        """One child with probability 1-lam, two with probability lam."""
        lam = float(lam)
        if not 0.0 <= lam <= 1.0:
            raise LawSpecError(f"binary parameter {lam!r} outside [0, 1]")
        return cls((0.0, 1.0 - lam, lam), binary_lambda=lam)

    # -- cheap structural views -------------------------------------------

    @property
    def max_k(self) -> int:
        return len(self.probs) - 1

    @property
    def p0(self) -> float:
        return self.probs[0]

    @property
    def p1(self) -> float:
        return self.probs[1] if len(self.probs) > 1 else 0.0

    @cached_property
    def probs_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    @cached_property
    def ks_array(self) -> np.ndarray:
        return np.arange(len(self.probs), dtype=np.int64)

    @cached_property
    def cum_probs(self) -> np.ndarray:
        cum = np.cumsum(self.probs_array)
        cum[-1] = 1.0  # guards inverse-CDF lookups against 1 - 1e-16 style sums
        return cum

    @cached_property
    def point_mass(self) -> Optional[int]:
        """The single supported value, if the law is deterministic."""
        nz = [k for k, p in enumerate(self.probs) if p > 0.0]
        return nz[0] if len(nz) == 1 else None

    @cached_property
    def two_atoms(self) -> Optional[tuple[int, int, float]]:
        """(a, b, p_b) when the support has exactly two points a < b."""
        nz = [k for k, p in enumerate(self.probs) if p > 0.0]
        if len(nz) != 2:
            return None
        a, b = nz
        return a, b, self.probs[b]

    def __repr__(self) -> str:  # compact, survives huge supports
        if self.binary_lambda is not None:
            return f"OffspringLaw.binary({self.binary_lambda!r})"
        entries = ", ".join(f"{k}: {p!r}" for k, p in enumerate(self.probs) if p != 0.0)
        return f"OffspringLaw({{{entries}}})"


@dataclass(frozen=True)
class IGWParams:
    """An offspring law paired with the thinning survival probability."""

    law: OffspringLaw
    theta: float

    def __post_init__(self) -> None:
        theta = float(self.theta)
        if not 0.0 < theta <= 1.0:
            raise LawSpecError(f"thinning parameter {theta!r} outside (0, 1]")
        object.__setattr__(self, "theta", theta)


# -- moments and generating functions ---------------------------------------


def mean(law: OffspringLaw) -> float:
    """m = sum_k k * p_k."""
    return math.fsum(k * p for k, p in enumerate(law.probs))


def variance(law: OffspringLaw) -> float:
    m = mean(law)
    second = math.fsum(k * k * p for k, p in enumerate(law.probs))
    return max(second - m * m, 0.0)


def _check_unit_interval(s: float) -> float:
    s = float(s)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"generating functions are only evaluated on [0, 1], got {s!r}")
    return s


def pgf_eval(law: OffspringLaw, s: float) -> float:
    """f(s) = sum_k p_k s^k, evaluated by Horner's rule."""
    s = _check_unit_interval(s)
    acc = 0.0
    for p in reversed(law.probs):
        acc = acc * s + p
    return acc


def thinned_pgf(params: IGWParams, s: float) -> float:
    """g(s) = f(1 - theta + theta*s), the generating function of a
    theta-thinned count whose pre-thinning total is one generation's worth
    of progeny from a single ancestor."""
    s = _check_unit_interval(s)
    return pgf_eval(params.law, 1.0 - params.theta + params.theta * s)


def chi(params: IGWParams, x: int) -> float:
    """One-step conditional mean of the iterated chain started at x.

    chi(0) = 0 and chi(x) = theta * (m + m^2 + ... + m^x).  Values that
    overflow float range come back as ``inf``; use :func:`log_chi` when x is
    large enough for that to matter.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    m = mean(params.law)
    if abs(m - 1.0) <= MEAN_CRITICAL_TOL:
        return params.theta * x
    if m > 1.0 and x * math.log(m) > 700.0:
        lv = log_chi(params, x)
        return math.inf if lv > 709.0 else math.exp(lv)
    return params.theta * m * (m**x - 1.0) / (m - 1.0)


def log_chi(params: IGWParams, x: int) -> float:
    """log of chi(params, x), stable for x up to at least 10^4."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return -math.inf
    m = mean(params.law)
    theta = params.theta
    if m <= 0.0:
        return -math.inf
    if abs(m - 1.0) <= MEAN_CRITICAL_TOL:
        return math.log(theta) + math.log(x)
    log_m = math.log(m)
    if m > 1.0:
        # m (m^x - 1)/(m - 1): pull x log m out, keep the rest in log1p
        body = x * log_m + math.log1p(-math.exp(-x * log_m)) - math.log(m - 1.0)
    else:
        mx = math.exp(x * log_m) if x * log_m > -745.0 else 0.0
        body = math.log1p(-mx) - math.log(1.0 - m)
    return math.log(theta) + log_m + body


def sample_offspring(law: OffspringLaw, rng) -> int:
    """Draw one offspring count by inverse CDF over the finite support."""
    pm = law.point_mass
    if pm is not None:
        return pm
    u = rng.uniform()
    return int(np.searchsorted(law.cum_probs, u, side="right"))


# -- law spec strings --------------------------------------------------------

_SPEC_HELP = "expected 'binary:LAMBDA' or 'pmf:k1=p1,k2=p2,...'"


def parse_law_spec(text: str) -> OffspringLaw:
    """Parse the textual law format used by the CLI and config files."""
    text = text.strip()
    if ":" not in text:
        raise LawSpecError(f"law spec {text!r} has no ':' separator; {_SPEC_HELP}")
    kind, _, body = text.partition(":")
    kind = kind.strip().lower()
    if kind == "binary":
        try:
            lam = float(body)
        except ValueError:
            raise LawSpecError(f"binary parameter {body!r} is not a number") from None
        return OffspringLaw.binary(lam)
    if kind == "pmf":
        entries: dict[int, float] = {}
        for token in body.split(","):
            token = token.strip()
            if not token:
                raise LawSpecError(f"empty pmf entry in {text!r}")
            if "=" not in token:
                raise LawSpecError(f"pmf entry {token!r} is not of the form k=p")
            k_text, _, p_text = token.partition("=")
            try:
                k = int(k_text)
            except ValueError:
                raise LawSpecError(
                    f"offspring count {k_text!r} in entry {token!r} is not an integer"
                ) from None
            try:
                p = float(p_text)
            except ValueError:
                raise LawSpecError(
                    f"probability {p_text!r} in entry {token!r} is not a number"
                ) from None
            if k in entries:
                raise LawSpecError(f"offspring count {k} appears twice")
            entries[k] = p
        return OffspringLaw.explicit(entries)
    raise LawSpecError(f"unknown law kind {kind!r}; {_SPEC_HELP}")


def format_law_spec(law: OffspringLaw) -> str:
    """Inverse of :func:`parse_law_spec`; round-trips to an identical law."""
    if law.binary_lambda is not None:
        return f"binary:{law.binary_lambda!r}"
    body = ",".join(f"{k}={p!r}" for k, p in enumerate(law.probs) if p != 0.0)
    return f"pmf:{body}"
