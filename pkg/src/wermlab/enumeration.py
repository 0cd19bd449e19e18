"""Exact expectations on the basis DGP by summing over support segments.

Per axis ``j`` (probability ``1/d``) the amplitude law has four pieces:
two atoms at +-0.1 and two uniform segments [1, 2] and [-2, -1].  eta*
(hence f*, both margins and any oracle weight) is constant on each piece,
and a threshold ``beta_j`` disagrees with f* = sign(alpha) on

* an atom ``a``:              iff sign(a - beta_j) != sign(a);
* the segment [lo, hi] > 0:   on the fraction clip((beta_j - lo)/(hi - lo), 0, 1);
* the segment [lo, hi] < 0:   on the fraction clip((hi - beta_j)/(hi - lo), 0, 1).

Every quantity below is a finite sum of ``mass * fraction * value`` terms.
With ``D = 1{f != f*}`` and labels drawn from eta*, the conditional moments
of the excess 0-1 loss ``dl = 1{f != y} - 1{f* != y}`` are

    E[dl | x] = margin_raw(x) * D(x),    E[dl^2 | x] = D(x).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dgp import BasisDgpSpec
from .models import ThresholdHypothesis, sign


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float
    mass: float  # per-axis mass, already divided by d
    eta: float

    @property
    def is_atom(self) -> bool:
        return self.lo == self.hi

    @property
    def margin_raw(self) -> float:
        return abs(2.0 * self.eta - 1.0)

    @property
    def margin_half(self) -> float:
        return abs(self.eta - 0.5)

    def disagreement(self, beta: float) -> float:
        """Fraction of this piece where sign(alpha - beta) != sign(alpha)."""
        if self.is_atom:
            return float(sign(self.lo - beta) != sign(self.lo))
        width = self.hi - self.lo
        if self.lo >= 0:
            return min(max((beta - self.lo) / width, 0.0), 1.0)
        return min(max((self.hi - beta) / width, 0.0), 1.0)


def segments(spec: BasisDgpSpec) -> list[Segment]:
    m = spec.masses() / spec.d
    pieces = [(0.1, 0.1), (-0.1, -0.1), (1.0, 2.0), (-2.0, -1.0)]
    return [Segment(lo, hi, float(mk), float(spec.eta_of_alpha(lo)))
            for (lo, hi), mk in zip(pieces, m)]


def _betas(spec: BasisDgpSpec, h) -> np.ndarray:
    beta = h.beta if isinstance(h, ThresholdHypothesis) else np.atleast_1d(np.asarray(h, dtype=np.float64))
    if beta.size != spec.d:
        raise ValueError("threshold dimension does not match the basis spec")
    return beta


def segment_weight(weight, spec: BasisDgpSpec, j: int, seg: Segment) -> float:
    """Value of a weight function on a piece; must be constant there."""
    if weight is None:
        return 1.0
    pts = [seg.lo] if seg.is_atom else [seg.lo, 0.5 * (seg.lo + seg.hi), seg.hi]
    X = np.zeros((len(pts), spec.d))
    X[:, j] = pts
    vals = np.asarray(weight.evaluate(X), dtype=np.float64)
    if not np.all(vals == vals[0]):
        raise ValueError("exact enumeration needs a weight constant on each segment")
    return float(vals[0])


def disagreement_sum(spec: BasisDgpSpec, h, value) -> float:
    """``sum over pieces of mass * disagreement * value(j, seg)``."""
    beta = _betas(spec, h)
    segs = segments(spec)
    terms = [s.mass * s.disagreement(beta[j]) * value(j, s)
             for j in range(spec.d) for s in segs]
    return math.fsum(terms)


def excess_moments(spec: BasisDgpSpec, h, weight=None) -> tuple[float, float]:
    """``(E[w dl], E[(w dl)^2])`` for the weighted excess 0-1 loss."""
    def w(j, s):
        return segment_weight(weight, spec, j, s)
    first = disagreement_sum(spec, h, lambda j, s: w(j, s) * s.margin_raw)
    second = disagreement_sum(spec, h, lambda j, s: w(j, s) ** 2)
    return first, second


def margin_moment(spec: BasisDgpSpec, h, power: int) -> float:
    """``E[margin_raw^power * 1{f != f*}]``."""
    return disagreement_sum(spec, h, lambda j, s: s.margin_raw ** power)


def mass_below(spec: BasisDgpSpec, c: float) -> float:
    """``P(margin_raw < c)``."""
    return math.fsum(s.mass for s in segments(spec) if s.margin_raw < c) * spec.d


def conditional_error(spec: BasisDgpSpec, h, level: float) -> float:
    """``E[1{f != f*} | margin_raw > level]``."""
    num = disagreement_sum(spec, h, lambda j, s: float(s.margin_raw > level))
    den = math.fsum(s.mass for s in segments(spec) if s.margin_raw > level) * spec.d
    if den == 0:
        raise ValueError("conditioning set has zero mass")
    return num / den


def candidate_grid(spec: BasisDgpSpec) -> np.ndarray:
    """Thresholds at which every enumerated functional changes, plus
    representatives of the open intervals between them."""
    knots = np.array([-2.0, -1.0, -0.1, 0.1, 1.0, 2.0])
    mids = (knots[:-1] + knots[1:]) / 2
    return np.sort(np.concatenate([knots, mids, [-3.0, 3.0, 1.25, 1.5, 1.75, -1.5]]))
