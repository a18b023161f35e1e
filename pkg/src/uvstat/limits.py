"""Exact limit functionals and conditional variances from path ground truth.

Jump-dominated statistics converge to

    V(H, X, l)_t = t^{d-l} sum over l-tuples of jumps of H(Delta X, 0),

mixed statistics to

    Y_t(H, X, l) = sum over (d-l)-tuples of jumps of
                   int_{[0,t]^l} rho_H(sigma_u, Delta X) du,

and the associated stable CLTs have F-conditionally Gaussian limits whose
variances are finite sums/integrals over the same ground truth:

* jump case:   1/2 t^{2(d-l)} sum_s (sum_k Vbar_k(Delta X_s))^2
               (sigma_{s-}^2 + sigma_s^2),
* mixed case:  sum_s (sum_{k>l} Vtilde_k(Delta X_s))^2 sigma_s^2
               + sum over tuple pairs of C(Delta X_s1, Delta X_s2),

with Vbar_k the partial-derivative sums over (l-1)-tuples of jumps,
Vtilde_k their Gaussian-smoothed time-integrated mixed analogues, and C
the covariance of the limiting Gaussian field.

All time integrals use the simulation grid itself (left Riemann plus the
partial last step, exact for constant volatility); the induced
O(n^{-1/2}) discretization error matches the Euler scheme's accuracy and
is the bias floor of the CLT experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from uvstat.kernels import (
    Factor1D,
    KernelError,
    KernelSpec,
    separable_terms,
)
from uvstat.simulate import SamplePath

__all__ = [
    "LimitValue",
    "CondVariance",
    "LimitError",
    "jump_limit",
    "mixed_limit",
    "vbar",
    "cond_var_jump",
    "cov_c",
    "cov_c_matrix",
    "vtilde",
    "cond_var_mixed",
    "JUMP_TUPLE_BUDGET",
]

JUMP_TUPLE_BUDGET = 10**8


class LimitError(ValueError):
    """Limit evaluation outside its guarded domain."""


@dataclass(frozen=True)
class LimitValue:
    """An exact limit functional with its per-jump contribution table."""

    value: float
    contributions: tuple
    regime: str

    def table_total(self) -> float:
        return float(sum(v for _, v in self.contributions))


@dataclass(frozen=True)
class CondVariance:
    """F-conditional variance of a limit law, split into its two sources."""

    total: float
    jump_term: float
    field_term: float
    per_jump: tuple


def _jump_data(path: SamplePath, t: float):
    recs = path.jumps_until(t)
    sizes = np.array([r.size for r in recs])
    pre = np.array([r.sigma_pre for r in recs])
    post = np.array([r.sigma_post for r in recs])
    return recs, sizes, pre, post


def _resolve_t(path: SamplePath, t) -> float:
    t = path.T if t is None else float(t)
    if not 0 < t <= path.T + 1e-12:
        raise LimitError(f"t={t} outside (0, T={path.T}]")
    return t


def _check_l(kernel: KernelSpec, l) -> int:
    if l is not None and l != kernel.l:
        raise KernelError(f"block split l={l} != kernel block split l={kernel.l}")
    return kernel.l


def _check_budget(n_jumps: int, exponent: int):
    if exponent > 0 and n_jumps > 0 and float(n_jumps) ** exponent > JUMP_TUPLE_BUDGET:
        raise LimitError(
            f"jump tuple count {n_jumps}^{exponent} exceeds budget {JUMP_TUPLE_BUDGET:.0e}"
        )


def _time_weights(path: SamplePath, t: float):
    """Left-Riemann weights on the sigma grid, exact for constant sigma."""
    n = path.n
    count = min(int(math.floor(n * t + 1e-12)), len(path.sigma_grid) - 1)
    sigmas = path.sigma_grid[: count + 1]
    weights = np.full(count + 1, 1.0 / n)
    weights[-1] = t - count / n
    if weights[-1] <= 1e-15:
        return path.sigma_grid[:count], np.full(count, 1.0 / n)
    return sigmas, weights


def _time_integrated_moment(factor: Factor1D, sigmas, weights) -> float:
    """int_0^t E[f(sigma_u U)] du on the grid."""
    return float(np.dot(weights, factor.gaussian_moment_vec(sigmas)))


# ---------------------------------------------------------------------------
# Laws of large numbers
# ---------------------------------------------------------------------------


def jump_limit(
    path: SamplePath, kernel: KernelSpec, l: Optional[int] = None, t: Optional[float] = None
) -> LimitValue:
    """V(H, X, l)_t = t^{d-l} sum_{s in (0,t]^l} H(Delta X_s, 0).

    The sum runs over all l-tuples (with repetition) of recorded jumps;
    the factorized form collapses it to per-jump sums.  Contribution p of
    the table aggregates every tuple whose first slot is jump p.
    """
    t = _resolve_t(path, t)
    l = _check_l(kernel, l)
    recs, sizes, _, _ = _jump_data(path, t)
    _check_budget(len(sizes), l)
    d = kernel.d
    scale = t ** (d - l)
    terms = separable_terms(kernel)
    if l == 0:
        value = 0.0
        for coeff, factors in terms:
            prod = coeff
            for j in range(d):
                prod *= factors[j].val(0.0)
                if prod == 0.0:
                    break
            value += prod
        value *= scale
        return LimitValue(value, (("deterministic", value),), kernel.regime)
    if len(sizes) == 0:
        return LimitValue(0.0, (), kernel.regime)
    contrib = np.zeros(len(sizes))
    for coeff, factors in terms:
        zero_tail = 1.0
        for j in range(l, d):
            zero_tail *= factors[j].val(0.0)
        if zero_tail == 0.0 or coeff == 0.0:
            continue
        rest = 1.0
        for i in range(1, l):
            rest *= float(np.sum(factors[i].val(sizes)))
        contrib += coeff * zero_tail * rest * factors[0].val(sizes)
    contrib *= scale
    value = float(np.sum(contrib))
    table = tuple((f"jump_{p}", float(v)) for p, v in enumerate(contrib))
    return LimitValue(value, table, kernel.regime)


def mixed_limit(
    path: SamplePath, kernel: KernelSpec, l: Optional[int] = None, t: Optional[float] = None
) -> LimitValue:
    """Y_t(H, X, l) = sum over jump tuples of int_{[0,t]^l} rho_H(sigma_u, Delta X) du."""
    t = _resolve_t(path, t)
    l = _check_l(kernel, l)
    d = kernel.d
    recs, sizes, _, _ = _jump_data(path, t)
    _check_budget(len(sizes), d - l)
    sigmas, weights = _time_weights(path, t)
    terms = separable_terms(kernel)
    if d == l:
        value = 0.0
        for coeff, factors in terms:
            prod = coeff
            for i in range(l):
                if prod == 0.0:
                    break
                prod *= _time_integrated_moment(factors[i], sigmas, weights)
            value += prod
        return LimitValue(value, (("time_integral", value),), kernel.regime)
    if len(sizes) == 0:
        return LimitValue(0.0, (), kernel.regime)
    contrib = np.zeros(len(sizes))
    for coeff, factors in terms:
        xpart = coeff
        for i in range(l):
            if xpart == 0.0:
                break
            xpart *= _time_integrated_moment(factors[i], sigmas, weights)
        if xpart == 0.0:
            continue
        rest = 1.0
        for j in range(l + 1, d):
            rest *= float(np.sum(factors[j].val(sizes)))
        contrib += xpart * rest * factors[l].val(sizes)
    value = float(np.sum(contrib))
    table = tuple((f"jump_{p}", float(v)) for p, v in enumerate(contrib))
    return LimitValue(value, table, kernel.regime)


# ---------------------------------------------------------------------------
# Jump-case CLT machinery
# ---------------------------------------------------------------------------


def _vbar_profile(kernel: KernelSpec, sizes: np.ndarray, l: int) -> np.ndarray:
    """sum_{k=1}^{l} Vbar_k(H, X, l, y) evaluated at y = each jump size.

    Vbar_k sums the k-th partial of H over (l-1)-tuples of jumps in the
    other first-block slots, with the trailing block at 0.
    """
    out = np.zeros(len(sizes))
    for coeff, factors in separable_terms(kernel):
        zero_tail = 1.0
        for j in range(l, kernel.d):
            zero_tail *= factors[j].val(0.0)
        if zero_tail == 0.0 or coeff == 0.0:
            continue
        slot_sums = [float(np.sum(factors[i].val(sizes))) for i in range(l)]
        for k in range(l):
            rest = 1.0
            for i in range(l):
                if i != k:
                    rest *= slot_sums[i]
            if rest == 0.0:
                continue
            dvals = np.zeros(len(sizes))
            for dcoef, dfac in factors[k].derivative():
                dvals += dcoef * dfac.val(sizes)
            out += coeff * zero_tail * rest * dvals
    return out


def vbar(
    path: SamplePath,
    kernel: KernelSpec,
    l: Optional[int] = None,
    k_idx: int = 1,
    y: float = 0.0,
    t: Optional[float] = None,
) -> float:
    """Vbar_k(H, X, l, y): partial_k H summed over (l-1)-tuples of jumps.

    k_idx is 1-based within the first block (1 <= k_idx <= l).
    """
    t = _resolve_t(path, t)
    l = _check_l(kernel, l)
    if not 1 <= k_idx <= l:
        raise KernelError(f"k_idx={k_idx} outside 1..l={l}")
    k0 = k_idx - 1
    recs, sizes, _, _ = _jump_data(path, t)
    _check_budget(len(sizes), l - 1)
    total = 0.0
    for coeff, factors in separable_terms(kernel):
        zero_tail = 1.0
        for j in range(l, kernel.d):
            zero_tail *= factors[j].val(0.0)
        if zero_tail == 0.0 or coeff == 0.0:
            continue
        rest = 1.0
        for i in range(l):
            if i != k0:
                rest *= float(np.sum(factors[i].val(sizes)))
        if rest == 0.0:
            continue
        dval = 0.0
        for dcoef, dfac in factors[k0].derivative():
            dval += dcoef * float(dfac.val(y))
        total += coeff * zero_tail * rest * dval
    return total


def cond_var_jump(
    path: SamplePath, kernel: KernelSpec, l: Optional[int] = None, t: Optional[float] = None
) -> CondVariance:
    """E[U(H,X,l)_t^2 | F] = 1/2 t^{2(d-l)} sum_s (sum_k Vbar_k(DX_s))^2 (s-^2 + s^2)."""
    t = _resolve_t(path, t)
    l = _check_l(kernel, l)
    if l < 1:
        raise KernelError("jump-case conditional variance needs l >= 1")
    recs, sizes, pre, post = _jump_data(path, t)
    if len(sizes) == 0:
        return CondVariance(0.0, 0.0, 0.0, ())
    w = _vbar_profile(kernel, sizes, l)
    scale = 0.5 * t ** (2 * (kernel.d - l))
    per = scale * w * w * (pre * pre + post * post)
    total = float(np.sum(per))
    table = tuple((f"jump_{p}", float(v)) for p, v in enumerate(per))
    return CondVariance(total=total, jump_term=total, field_term=0.0, per_jump=table)


# ---------------------------------------------------------------------------
# Mixed-case CLT machinery
# ---------------------------------------------------------------------------


class _CovStructure:
    """Precomputed pieces of the Gaussian-field covariance C(y, y').

    With the separable expansion H = sum_m c_m prod_k f_{m,k}, the
    smoothing functions collapse to f_i(u, y) = sum_m g_{m,i}(u) *
    [c_m A_{m,i} Y_m(y)], so C(y, y') = v(y)^T P v(y') where v ranges over
    the (m, i) pairs, A_{m,i} collects the time-integrated moments of the
    other first-block slots, Y_m(y) the second-block factor values, and

        P[(m,i),(m',j)] = int_0^t Cov_s( g_{m,i}(U_s), g_{m',j}(U_s) ) ds

    is an integral of Gram matrices, hence positive semidefinite.
    """

    def __init__(self, path: SamplePath, kernel: KernelSpec, t: float):
        self.kernel = kernel
        self.l = kernel.l
        self.d = kernel.d
        if self.l < 1:
            raise KernelError("the Gaussian field needs a nonempty scaled block (l >= 1)")
        self.terms = separable_terms(kernel)
        sigmas, weights = _time_weights(path, t)
        # time-integrated single moments per (term, slot)
        tmom = [
            [_time_integrated_moment(factors[i], sigmas, weights) for i in range(self.l)]
            for _, factors in self.terms
        ]
        self.pairs = [(m, i) for m in range(len(self.terms)) for i in range(self.l)]
        self.base_weight = np.array(
            [
                self.terms[m][0]
                * math.prod(tmom[m][i2] for i2 in range(self.l) if i2 != i)
                for (m, i) in self.pairs
            ]
        )
        npairs = len(self.pairs)
        self.P = np.zeros((npairs, npairs))
        single = {}
        for a, (m, i) in enumerate(self.pairs):
            f = self.terms[m][1][i]
            if f not in single:
                single[f] = f.gaussian_moment_vec(sigmas)
        for a in range(npairs):
            m, i = self.pairs[a]
            fa = self.terms[m][1][i]
            for b in range(a, npairs):
                m2, j = self.pairs[b]
                fb = self.terms[m2][1][j]
                prod_mom = fa.mul(fb).gaussian_moment_vec(sigmas)
                cov_s = prod_mom - single[fa] * single[fb]
                val = float(np.dot(weights, cov_s))
                self.P[a, b] = val
                self.P[b, a] = val

    def y_vector(self, y: Sequence[float]) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.d - self.l:
            raise KernelError(f"expected {self.d - self.l} y-coordinates, got {y.size}")
        out = np.empty(len(self.pairs))
        for a, (m, i) in enumerate(self.pairs):
            factors = self.terms[m][1]
            ypart = 1.0
            for j in range(self.l, self.d):
                ypart *= float(factors[j].val(y[j - self.l]))
            out[a] = self.base_weight[a] * ypart
        return out

    def tuple_sum_vector(self, sizes: np.ndarray) -> np.ndarray:
        """sum over all (d-l)-tuples of jumps of y_vector(tuple)."""
        out = np.empty(len(self.pairs))
        for a, (m, i) in enumerate(self.pairs):
            factors = self.terms[m][1]
            ypart = 1.0
            for j in range(self.l, self.d):
                ypart *= float(np.sum(factors[j].val(sizes)))
            out[a] = self.base_weight[a] * ypart
        return out

    def cov(self, y1, y2) -> float:
        v1 = self.y_vector(y1)
        v2 = self.y_vector(y2)
        return float(v1 @ self.P @ v2)

    def cov_matrix(self, y_list) -> np.ndarray:
        V = np.stack([self.y_vector(y) for y in y_list])
        return V @ self.P @ V.T


def cov_c(
    path: SamplePath,
    kernel: KernelSpec,
    y,
    y2,
    t: Optional[float] = None,
) -> float:
    """Covariance C(y, y') of the limiting Gaussian field at two tuple points."""
    t = _resolve_t(path, t)
    return _CovStructure(path, kernel, t).cov(y, y2)


def cov_c_matrix(path: SamplePath, kernel: KernelSpec, y_list, t: Optional[float] = None):
    """The matrix [C(y_a, y_b)] over a list of tuple points (symmetric PSD)."""
    t = _resolve_t(path, t)
    return _CovStructure(path, kernel, t).cov_matrix(y_list)


def _vtilde_profile(
    path: SamplePath, kernel: KernelSpec, sizes: np.ndarray, l: int, t: float
) -> np.ndarray:
    """sum_{k=l+1}^{d} Vtilde_k(H, X, l, y) at y = each jump size."""
    d = kernel.d
    sigmas, weights = _time_weights(path, t)
    out = np.zeros(len(sizes))
    for coeff, factors in separable_terms(kernel):
        xpart = coeff
        for i in range(l):
            if xpart == 0.0:
                break
            xpart *= _time_integrated_moment(factors[i], sigmas, weights)
        if xpart == 0.0:
            continue
        slot_sums = [float(np.sum(factors[j].val(sizes))) for j in range(l, d)]
        for k in range(l, d):
            rest = 1.0
            for j in range(l, d):
                if j != k:
                    rest *= slot_sums[j - l]
            if rest == 0.0:
                continue
            dvals = np.zeros(len(sizes))
            for dcoef, dfac in factors[k].derivative():
                dvals += dcoef * dfac.val(sizes)
            out += xpart * rest * dvals
    return out


def vtilde(
    path: SamplePath,
    kernel: KernelSpec,
    l: Optional[int] = None,
    k_idx: int = 0,
    y: float = 0.0,
    t: Optional[float] = None,
) -> float:
    """Vtilde_k(H, X, l, y): rho_{partial_k H} integrated in time, summed
    over (d-l-1)-tuples of jumps in the other second-block slots.

    k_idx is the 1-based global coordinate, l < k_idx <= d.
    """
    t = _resolve_t(path, t)
    l = _check_l(kernel, l)
    d = kernel.d
    if not l < k_idx <= d:
        raise KernelError(f"k_idx={k_idx} outside l+1..d={d}")
    k0 = k_idx - 1
    recs, sizes, _, _ = _jump_data(path, t)
    _check_budget(len(sizes), d - l - 1)
    sigmas, weights = _time_weights(path, t)
    total = 0.0
    for coeff, factors in separable_terms(kernel):
        xpart = coeff
        for i in range(l):
            if xpart == 0.0:
                break
            xpart *= _time_integrated_moment(factors[i], sigmas, weights)
        if xpart == 0.0:
            continue
        rest = 1.0
        for j in range(l, d):
            if j != k0:
                rest *= float(np.sum(factors[j].val(sizes)))
        if rest == 0.0:
            continue
        dval = 0.0
        for dcoef, dfac in factors[k0].derivative():
            dval += dcoef * float(dfac.val(y))
        total += xpart * rest * dval
    return total


def cond_var_mixed(
    path: SamplePath, kernel: KernelSpec, l: Optional[int] = None, t: Optional[float] = None
) -> CondVariance:
    """Conditional variance of the mixed-case limit: jump term plus field term.

    jump term:  sum_s (sum_{k>l} Vtilde_k(Delta X_s))^2 sigma_s^2
    field term: sum over pairs of jump tuples of C(Delta X_s1, Delta X_s2),
                computed in factorized form (no tuple enumeration).
    """
    t = _resolve_t(path, t)
    l = _check_l(kernel, l)
    d = kernel.d
    if l < 1 or l >= d:
        raise KernelError("mixed-case conditional variance needs 1 <= l < d")
    recs, sizes, pre, post = _jump_data(path, t)
    if len(sizes) == 0:
        return CondVariance(0.0, 0.0, 0.0, ())
    prof = _vtilde_profile(path, kernel, sizes, l, t)
    per = prof * prof * post * post
    jump_term = float(np.sum(per))
    struct = _CovStructure(path, kernel, t)
    svec = struct.tuple_sum_vector(sizes)
    field_term = float(svec @ struct.P @ svec)
    table = tuple((f"jump_{p}", float(v)) for p, v in enumerate(per))
    table += (("gaussian_field", field_term),)
    return CondVariance(
        total=jump_term + field_term,
        jump_term=jump_term,
        field_term=field_term,
        per_jump=table,
    )
