"""Shared test helpers: an exact rational enumeration oracle for small
branching systems, independent of the production dynamic program."""

from __future__ import annotations

from collections import defaultdict
from fractions import Fraction

import hypothesis.strategies as st
import pytest

from igw import OffspringLaw


def law_fractions(law: OffspringLaw) -> dict[int, Fraction]:
    """The pmf as exact fractions; only sensible for dyadic-ish test laws."""
    return {
        k: Fraction(p).limit_denominator(10**9)
        for k, p in enumerate(law.probs)
        if p > 0.0
    }


def enumerate_joint(probs: dict[int, Fraction], x: int) -> dict[tuple[int, int], Fraction]:
    """Exact joint law of (Z_x, S_x), by per-parent composition.

    Deliberately naive: each parent's offspring are folded in one at a time
    with rational arithmetic, so it shares nothing with the convolution
    dynamic program it oracles.
    """
    states: dict[tuple[int, int], Fraction] = {(1, 0): Fraction(1)}
    for _ in range(x):
        new: dict[tuple[int, int], Fraction] = defaultdict(Fraction)
        for (z, s), p in states.items():
            if z == 0:
                new[(0, s)] += p
                continue
            gen: dict[int, Fraction] = {0: Fraction(1)}
            for _parent in range(z):
                nxt: dict[int, Fraction] = defaultdict(Fraction)
                for tot, q in gen.items():
                    for k, pk in probs.items():
                        nxt[tot + k] += q * pk
                gen = nxt
            for zp, q in gen.items():
                new[(zp, s + zp)] += p * q
        states = new
    return dict(states)


def enumerate_total_progeny(probs: dict[int, Fraction], x: int) -> dict[int, Fraction]:
    out: dict[int, Fraction] = defaultdict(Fraction)
    for (_z, s), p in enumerate_joint(probs, x).items():
        out[s] += p
    return dict(out)


@st.composite
def small_laws(draw, max_k: int = 4, allow_p0: bool = True):
    """Random laws on {0..max_k} with eighths-grid probabilities."""
    low = 0 if allow_p0 else 1
    weights = draw(
        st.lists(st.integers(0, 8), min_size=max_k + 1, max_size=max_k + 1)
    )
    weights = [0] * low + weights[low:]
    if sum(weights) == 0:
        weights[low + 1] = 1
    total = sum(weights)
    return OffspringLaw(tuple(w / total for w in weights))


@pytest.fixture(scope="session")
def binary_half() -> OffspringLaw:
    return OffspringLaw.binary(0.5)
