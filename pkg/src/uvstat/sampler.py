"""Draws from the F-conditional limit laws on the extension space.

Each recorded jump k gets independent extension variables

    kappa_k ~ U(0,1),  psi_{k-}, psi_{k+} ~ N(0,1),
    R_k = sqrt(kappa_k) sigma_{T_k-} psi_{k-}
          + sqrt(1 - kappa_k) sigma_{T_k} psi_{k+}.

The jump-case limit draw contracts the per-jump derivative sums against
R; the mixed-case draw adds a conditionally Gaussian field evaluated at
the distinct jump-size tuples, sampled by Cholesky factorization of the
exact covariance matrix (with escalating diagonal jitter).  Everything
is a deterministic function of (path, seed); the field uses a sub-seed
derived by hashing so the two terms stay reproducible independently.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from uvstat.kernels import KernelError, KernelSpec
from uvstat.limits import _CovStructure, _resolve_t, _vbar_profile, _vtilde_profile
from uvstat.simulate import SamplePath

__all__ = [
    "JumpAugmentation",
    "LimitDraw",
    "SamplerError",
    "augment",
    "sample_U_jump",
    "sample_V_mixed",
    "truncated_Z",
    "field_subseed",
    "FIELD_TUPLE_BUDGET",
]

FIELD_TUPLE_BUDGET = 4096

_EPS = 2.0**-53


class SamplerError(RuntimeError):
    """Limit-law sampling failure (covariance factorization, budgets)."""


@dataclass(frozen=True)
class JumpAugmentation:
    """Extension-space randomness attached to each recorded jump."""

    kappa: np.ndarray
    psi_minus: np.ndarray
    psi_plus: np.ndarray
    r_minus: np.ndarray
    r_plus: np.ndarray
    r: np.ndarray
    seed: int

    def __post_init__(self):
        for arr in (self.kappa, self.psi_minus, self.psi_plus, self.r_minus, self.r_plus, self.r):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.kappa)


@dataclass(frozen=True)
class LimitDraw:
    """One draw from a limit law with its component breakdown."""

    value: float
    breakdown: tuple
    aug_seed: int

    def breakdown_total(self) -> float:
        return float(sum(v for _, v in self.breakdown))


def augment(path: SamplePath, seed: int) -> JumpAugmentation:
    """Draw (kappa, psi-, psi+) per recorded jump; deterministic in (path, seed)."""
    gen = np.random.default_rng(np.random.SeedSequence(seed))
    J = len(path.jumps)
    kappa = np.clip(gen.random(J), _EPS, 1.0 - _EPS)
    psi_minus = gen.standard_normal(J)
    psi_plus = gen.standard_normal(J)
    pre = np.array([r.sigma_pre for r in path.jumps])
    post = np.array([r.sigma_post for r in path.jumps])
    r_minus = np.sqrt(kappa) * pre * psi_minus
    r_plus = np.sqrt(1.0 - kappa) * post * psi_plus
    return JumpAugmentation(
        kappa=kappa,
        psi_minus=psi_minus,
        psi_plus=psi_plus,
        r_minus=r_minus,
        r_plus=r_plus,
        r=r_minus + r_plus,
        seed=int(seed),
    )


def field_subseed(aug_seed: int) -> int:
    """Sub-seed for the Gaussian-field draw: stable hash of (aug seed, 'field')."""
    digest = hashlib.blake2s(f"{aug_seed}:field".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sample_U_jump(
    path: SamplePath,
    kernel: KernelSpec,
    aug: JumpAugmentation,
    l: Optional[int] = None,
    t: Optional[float] = None,
) -> LimitDraw:
    """Jump-case limit draw: t^{d-l} sum over l-tuples of partial_j H * R.

    Regrouped by which jump carries the R factor, the draw is
    sum_q [t^{d-l} sum_k Vbar_k(Delta X_q)] R_q.
    """
    t = _resolve_t(path, t)
    if l is None:
        l = kernel.l
    elif l != kernel.l:
        raise KernelError(f"block split l={l} != kernel block split l={kernel.l}")
    if len(aug) != len(path.jumps):
        raise SamplerError("augmentation does not match the path's jump count")
    recs = path.jumps_until(t)
    J = len(recs)
    if J == 0:
        return LimitDraw(0.0, (), aug.seed)
    sizes = np.array([r.size for r in recs])
    coeff = t ** (kernel.d - l) * _vbar_profile(kernel, sizes, l)
    per = coeff * aug.r[:J]
    value = float(np.sum(per))
    table = tuple((f"jump_{p}", float(v)) for p, v in enumerate(per))
    return LimitDraw(value, table, aug.seed)


def _cholesky_with_jitter(M: np.ndarray):
    trace = float(np.trace(M))
    if trace <= 0.0:
        return None  # identically zero field
    for decade in range(4):
        jitter = 1e-10 * trace * 10.0**decade
        try:
            return np.linalg.cholesky(M + jitter * np.eye(len(M)))
        except np.linalg.LinAlgError:
            continue
    eigmin = float(np.linalg.eigvalsh(M).min())
    raise SamplerError(
        f"covariance Cholesky failed after jitter escalation; smallest eigenvalue {eigmin:.3e}"
    )


def sample_V_mixed(
    path: SamplePath,
    kernel: KernelSpec,
    aug: JumpAugmentation,
    l: Optional[int] = None,
    seed: Optional[int] = None,
    t: Optional[float] = None,
    include_field: bool = True,
) -> LimitDraw:
    """Mixed-case limit draw: R-contracted drift-of-jump term plus Gaussian field.

    The field U_t(H, .) is a single realization evaluated at each distinct
    (d-l)-tuple of jump sizes; index tuples with equal size vectors reuse
    the same field value.  include_field=False is the diagnostic switch
    that isolates the jump term.
    """
    t = _resolve_t(path, t)
    if l is None:
        l = kernel.l
    elif l != kernel.l:
        raise KernelError(f"block split l={l} != kernel block split l={kernel.l}")
    d = kernel.d
    if not 1 <= l < d:
        raise KernelError("mixed-case sampling needs 1 <= l < d")
    if len(aug) != len(path.jumps):
        raise SamplerError("augmentation does not match the path's jump count")
    recs = path.jumps_until(t)
    J = len(recs)
    if J == 0:
        return LimitDraw(0.0, (), aug.seed)
    sizes = np.array([r.size for r in recs])
    coeff = _vtilde_profile(path, kernel, sizes, l, t)
    per = coeff * aug.r[:J]
    jump_term = float(np.sum(per))
    table = tuple((f"jump_{p}", float(v)) for p, v in enumerate(per))

    field_term = 0.0
    if include_field:
        uniq, counts = np.unique(sizes, return_counts=True)
        K = len(uniq)
        n_tuples = K ** (d - l)
        if n_tuples > FIELD_TUPLE_BUDGET:
            raise SamplerError(
                f"{n_tuples} distinct jump tuples exceed the field budget {FIELD_TUPLE_BUDGET}"
            )
        import itertools

        combos = list(itertools.product(range(K), repeat=d - l))
        y_list = [[float(uniq[i]) for i in combo] for combo in combos]
        weights = np.array(
            [math.prod(int(counts[i]) for i in combo) for combo in combos], dtype=float
        )
        struct = _CovStructure(path, kernel, t)
        M = struct.cov_matrix(y_list)
        chol = _cholesky_with_jitter(M)
        if chol is not None:
            fseed = field_subseed(aug.seed) if seed is None else int(seed)
            gen = np.random.default_rng(np.random.SeedSequence(fseed))
            g = chol @ gen.standard_normal(len(y_list))
            field_term = float(np.dot(weights, g))
    table += (("gaussian_field", field_term),)
    return LimitDraw(jump_term + field_term, table, aug.seed)


def truncated_Z(
    path: SamplePath,
    kernel: KernelSpec,
    m: int,
    aug: JumpAugmentation,
    l: Optional[int] = None,
    t: Optional[float] = None,
) -> float:
    """Jump-case limit draw restricted to the m largest jumps (by |size|).

    Z(J) with J the full jump count reproduces sample_U_jump exactly; the
    truncation reuses the same augmentation values, aligned by jump index.
    """
    t = _resolve_t(path, t)
    if l is None:
        l = kernel.l
    elif l != kernel.l:
        raise KernelError(f"block split l={l} != kernel block split l={kernel.l}")
    if m < 0:
        raise SamplerError(f"truncation level must be >= 0, got {m}")
    if len(aug) != len(path.jumps):
        raise SamplerError("augmentation does not match the path's jump count")
    recs = path.jumps_until(t)
    J = len(recs)
    if J == 0 or m == 0:
        return 0.0
    sizes = np.array([r.size for r in recs])
    order = np.argsort(-np.abs(sizes), kind="stable")
    keep = np.sort(order[: min(m, J)])
    sub_sizes = sizes[keep]
    coeff = t ** (kernel.d - l) * _vbar_profile(kernel, sub_sizes, l)
    return float(np.sum(coeff * aug.r[keep]))
