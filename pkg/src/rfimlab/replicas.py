"""Functions of the replica overlap array R_{l,s}.

``R_{l,s} = (1/|V|) sum_x w_x sigma^l_x sigma^s_x`` for ``l != s`` with site
weights ``w_x = h_x**2`` and ``R_{l,l} = 1``.  Polynomials in the overlaps are
kept symbolic so the exact engine can contract them against k-point
correlation tensors instead of enumerating replica tuples.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import ValidationError

Pair = tuple[int, int]


def _norm_pair(l: int, s: int) -> Pair:
    if l < 1 or s < 1:
        raise ValidationError(f"replica indices are 1-based, got ({l}, {s})")
    return (l, s) if l <= s else (s, l)


@dataclass(frozen=True)
class OverlapPolynomial:
    """sum_k coef_k * prod_{(l,s) in pairs_k} R_{l,s}."""

    terms: tuple[tuple[float, tuple[Pair, ...]], ...]

    @classmethod
    def const(cls, c: float = 1.0) -> "OverlapPolynomial":
        return cls(((float(c), ()),))

    @classmethod
    def overlap(cls, l: int, s: int) -> "OverlapPolynomial":
        return cls(((1.0, (_norm_pair(l, s),)),))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return OverlapPolynomial(tuple((c * other, p) for c, p in self.terms))
        if not isinstance(other, OverlapPolynomial):
            return NotImplemented
        return OverlapPolynomial(tuple((c1 * c2, p1 + p2) for c1, p1 in self.terms for c2, p2 in other.terms))

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = OverlapPolynomial.const(other)
        return OverlapPolynomial(self.terms + other.terms)

    def __sub__(self, other):
        return self + (-1.0) * other

    @property
    def n_replicas(self) -> int:
        return max((max(p) for _, pairs in self.terms for p in pairs), default=1)

    @property
    def degree(self) -> int:
        return max((len([p for p in pairs if p[0] != p[1]]) for _, pairs in self.terms), default=0)

    def __call__(self, R: np.ndarray) -> np.ndarray:
        """Evaluate on overlap arrays of shape (..., M, M)."""
        R = np.asarray(R)
        out = np.zeros(R.shape[:-2])
        for c, pairs in self.terms:
            val = np.full(R.shape[:-2], c)
            for l, s in pairs:
                if l != s:
                    val = val * R[..., l - 1, s - 1]
            out = out + val
        return out


@dataclass(frozen=True)
class ClippedOverlapFunction:
    """clip(poly(R), lo, hi): bounded but not polynomial."""

    poly: OverlapPolynomial
    lo: float = -1.0
    hi: float = 1.0

    @property
    def n_replicas(self) -> int:
        return self.poly.n_replicas

    def __call__(self, R: np.ndarray) -> np.ndarray:
        return np.clip(self.poly(R), self.lo, self.hi)


OverlapFunction = OverlapPolynomial | ClippedOverlapFunction


def overlap_matrix(sigmas: Iterable[np.ndarray], weights: np.ndarray) -> np.ndarray:
    """Overlap arrays for a batch of replica tuples.

    ``sigmas`` is a sequence of m arrays of shape (K, V); the result has shape
    (K, m, m) with unit diagonal.
    """
    S = np.stack([np.asarray(s, dtype=float) for s in sigmas], axis=1)  # (K, m, V)
    V = S.shape[-1]
    R = np.einsum("kiv,kjv,v->kij", S, S, np.asarray(weights, dtype=float)) / V
    m = S.shape[1]
    R[:, np.arange(m), np.arange(m)] = 1.0
    return R


def as_config_function(f: OverlapFunction, weights: np.ndarray) -> Callable[..., np.ndarray]:
    """Wrap an overlap function as a function of replica configurations."""

    def g(*sigmas):
        return f(overlap_matrix(sigmas, weights))

    return g


def contract_monomial(pairs: tuple[Pair, ...], correlator: Callable[[int], np.ndarray], weights: np.ndarray) -> float:
    """<prod R_{l,s}> under the replica product measure.

    Each off-diagonal factor k introduces a summed site index x_k; replica r
    contributes the |A_r|-point correlation over the factors it touches.
    """
    factors = [p for p in pairs if p[0] != p[1]]
    if not factors:
        return 1.0
    letters = string.ascii_letters
    if len(factors) > len(letters):
        raise ValidationError("monomial degree too large")
    V = weights.shape[0]
    touched: dict[int, list[str]] = {}
    for k, (l, s) in enumerate(factors):
        touched.setdefault(l, []).append(letters[k])
        touched.setdefault(s, []).append(letters[k])
    operands = []
    subs = []
    for _, idx in sorted(touched.items()):
        operands.append(correlator(len(idx)))
        subs.append("".join(idx))
    for k in range(len(factors)):
        operands.append(weights)
        subs.append(letters[k])
    expr = ",".join(subs) + "->"
    return float(np.einsum(expr, *operands, optimize=True)) / V ** len(factors)


def correlator_order(f: OverlapPolynomial) -> int:
    order = 0
    for _, pairs in f.terms:
        counts: dict[int, int] = {}
        for l, s in pairs:
            if l != s:
                counts[l] = counts.get(l, 0) + 1
                counts[s] = counts.get(s, 0) + 1
        order = max(order, max(counts.values(), default=0))
    return order


_TOKEN = re.compile(r"R(\d)(\d)(?:\^(\d+))?$")


def parse_overlap_function(text: str) -> OverlapFunction:
    """Parse names such as ``1``, ``R23``, ``R12*R13``, ``0.5*R12^2 + R13``, ``clip(3*R12)``."""
    src = text.replace(" ", "")
    m = re.fullmatch(r"clip\((.*)\)", src)
    if m:
        return ClippedOverlapFunction(_parse_poly(m.group(1), text))
    return _parse_poly(src, text)


def _parse_poly(src: str, original: str) -> OverlapPolynomial:
    if not src:
        raise ValidationError(f"empty overlap function {original!r}")
    total = None
    for term in src.replace("-", "+-").split("+"):
        if not term:
            continue
        sign = 1.0
        if term.startswith("-"):
            sign, term = -1.0, term[1:]
        poly = OverlapPolynomial.const(sign)
        for factor in term.split("*"):
            tok = _TOKEN.match(factor)
            if tok:
                power = int(tok.group(3) or 1)
                for _ in range(power):
                    poly = poly * OverlapPolynomial.overlap(int(tok.group(1)), int(tok.group(2)))
                continue
            try:
                poly = poly * float(factor)
            except ValueError:
                raise ValidationError(f"cannot parse factor {factor!r} in overlap function {original!r}") from None
        total = poly if total is None else total + poly
    if total is None:
        raise ValidationError(f"empty overlap function {original!r}")
    return total


# Test functions for Ghirlanda-Guerra checks, all bounded by 1 in magnitude.
F_CATALOG = ("1", "R12", "R23", "R12*R13", "R12^2", "clip(4*R12)")
