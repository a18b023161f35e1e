"""Limit functionals and conditional variances vs hand values and brute force."""

import math

import numpy as np
import pytest

from uvstat.kernels import (
    GaussBump,
    KernelError,
    KernelSpec,
    abs_moment,
    partial_h,
    rho,
)
from uvstat.limits import (
    cond_var_jump,
    cond_var_mixed,
    cov_c,
    cov_c_matrix,
    jump_limit,
    mixed_limit,
    vbar,
    vtilde,
)
from uvstat.simulate import (
    AtomList,
    JumpModel,
    JumpRecord,
    ModelConfig,
    SamplePath,
    VolatilityModel,
    simulate_path,
)


def synthetic_path(sizes, sigma=1.0, n=64, T=1.0, drift=0.0):
    """A path whose ground truth is exactly the given jumps and constant sigma."""
    cfg = ModelConfig(
        drift_b=drift,
        vol=VolatilityModel(kind="Constant", sigma0=sigma),
        jumps=JumpModel(intensity=1.0, size_dist=AtomList(((1.0, 1.0),)), max_abs=10.0),
        bound_A=20.0,
    )
    sizes = [float(s) for s in sizes]
    J = len(sizes)
    N = int(round(n * T))
    times = [(p + 1) * T / (J + 1) for p in range(J)]
    recs = tuple(
        JumpRecord(
            time=times[p],
            size=sizes[p],
            sigma_pre=sigma,
            sigma_post=sigma,
            interval_index=int(math.ceil(times[p] * n - 1e-12)),
        )
        for p in range(J)
    )
    inc = np.zeros(N)
    for r in recs:
        inc[r.interval_index - 1] += r.size
    x = np.zeros(N + 1)
    x[1:] = np.cumsum(inc)
    return SamplePath(
        T=float(T),
        n=n,
        x_grid=x,
        sigma_grid=np.full(N + 1, sigma),
        w_increments=np.zeros(N),
        jumps=recs,
        seed=0,
        config=cfg,
        w_before_jump=np.zeros(J),
    )


K1 = KernelSpec(d=1, l=1, p=(4.0,), regime="JumpCLT")
K22 = KernelSpec(d=2, l=2, p=(4.0, 4.0), regime="JumpCLT")
KMIX = KernelSpec(d=2, l=1, p=(0.5,), q=(4.0,), regime="MixedCLT")


# ---------------------------------------------------------------------------
# jump limit
# ---------------------------------------------------------------------------


def test_jump_limit_hand_values():
    path = synthetic_path([1.0, -2.0])
    assert jump_limit(path, K1).value == pytest.approx(17.0)
    assert jump_limit(path, K22).value == pytest.approx(289.0)
    empty = synthetic_path([])
    assert jump_limit(empty, K1).value == 0.0


def test_jump_limit_zero_power_tail():
    # H = |x|^4 on the first coordinate only: limit t^{d-l} sum |z|^4
    k = KernelSpec(d=2, l=1, p=(4.0,), q=(0.0,), regime="JumpLLN")
    path = synthetic_path([1.0, -2.0])
    assert jump_limit(path, k).value == pytest.approx(17.0)
    # positive q kills the zeroed tail
    kq = KernelSpec(d=2, l=1, p=(4.0,), q=(4.0,), regime="JumpLLN")
    assert jump_limit(path, kq).value == 0.0


def test_jump_limit_homogeneity():
    path1 = synthetic_path([0.7, -1.1, 0.4])
    c = 1.9
    path2 = synthetic_path([c * 0.7, -c * 1.1, c * 0.4])
    v1 = jump_limit(path1, K22).value
    v2 = jump_limit(path2, K22).value
    assert v2 == pytest.approx(abs(c) ** 8 * v1, rel=1e-12)


def test_jump_limit_contribution_table():
    path = synthetic_path([0.5, 1.5, -0.25])
    lv = jump_limit(path, K22)
    assert lv.table_total() == pytest.approx(lv.value, rel=1e-12)
    brute = sum(
        abs(a) ** 4 * abs(b) ** 4 for a in path.jump_sizes() for b in path.jump_sizes()
    )
    assert lv.value == pytest.approx(brute, rel=1e-12)


# ---------------------------------------------------------------------------
# mixed limit
# ---------------------------------------------------------------------------


def test_mixed_limit_constant_sigma_closed_form():
    sigma = 1.4
    path = synthetic_path([0.8, -1.2], sigma=sigma)
    lv = mixed_limit(path, KMIX)
    closed = 1.0 * abs_moment(0.5) * sigma**0.5 * sum(abs(z) ** 4 for z in (0.8, -1.2))
    assert lv.value == pytest.approx(closed, rel=1e-6)
    assert lv.table_total() == pytest.approx(lv.value, rel=1e-12)


def test_mixed_limit_l0_is_jump_sum():
    path = synthetic_path([0.6, -0.9])
    k0 = KernelSpec(d=2, l=0, q=(4.0, 4.0), regime="JumpLLN")
    kj = KernelSpec(d=2, l=2, p=(4.0, 4.0), regime="JumpCLT")
    assert mixed_limit(path, k0).value == pytest.approx(jump_limit(path, kj).value, rel=1e-12)


def test_mixed_limit_power_variation_target():
    # d = l = 1, H = |x|^p: limit is int_0^t m_p |sigma_u|^p du
    sigma = 0.9
    path = synthetic_path([], sigma=sigma)
    for p in (0.5, 1.0, 1.5):
        k = KernelSpec(d=1, l=1, p=(p,), regime="MixedLLN")
        assert mixed_limit(path, k).value == pytest.approx(
            abs_moment(p) * sigma**p, rel=1e-12
        )


def test_mixed_limit_stochastic_sigma_riemann():
    # generic path against an independently coded Riemann sum of rho values
    cfg = ModelConfig(
        drift_b=0.0,
        vol=VolatilityModel(kind="ItoSM", sigma0=1.0, tilde_b=0.0, tilde_sigma=0.3, tilde_v=0.2),
        jumps=JumpModel(intensity=3.0, size_dist=AtomList(((1.0, 0.5), (-1.0, 0.5))), max_abs=2.0),
        bound_A=10.0,
    )
    path = simulate_path(cfg, n=128, T=1.0, seed=5)
    lv = mixed_limit(path, KMIX)
    sizes = path.jump_sizes()
    direct = 0.0
    for z in sizes:
        acc = 0.0
        for i in range(path.n):
            acc += rho(KMIX, [path.sigma_grid[i]], [z]) / path.n
        direct += acc
    assert lv.value == pytest.approx(direct, rel=1e-9)


def test_mixed_limit_gauss_bump_vs_quadrature():
    sigma = 1.1
    kg = KernelSpec(d=2, l=1, p=(0.5,), q=(4.0,), L=GaussBump(0.4, 0), regime="MixedCLT")
    path = synthetic_path([1.3], sigma=sigma)
    lv = mixed_limit(path, kg)
    direct = rho(kg, [sigma], [1.3])  # constant sigma: time integral is t * rho
    assert lv.value == pytest.approx(direct, rel=1e-8)


# ---------------------------------------------------------------------------
# vbar and the jump-case conditional variance
# ---------------------------------------------------------------------------


def test_vbar_single_coordinate():
    path = synthetic_path([2.0])
    # d = l = 1: Vbar_1(y) = dH(y) = 4 sign(y) |y|^3
    assert vbar(path, K1, k_idx=1, y=2.0) == pytest.approx(32.0)
    assert vbar(path, K1, k_idx=1, y=-1.5) == pytest.approx(-4 * 1.5**3)


def test_vbar_against_partial_h_enumeration():
    path = synthetic_path([0.8, -1.3])
    sizes = path.jump_sizes()
    y = 0.65
    for k_idx in (1, 2):
        brute = 0.0
        for z in sizes:
            pt = [y, z] if k_idx == 1 else [z, y]
            brute += partial_h(K22, k_idx - 1, pt)
        assert vbar(path, K22, k_idx=k_idx, y=y) == pytest.approx(brute, rel=1e-12)


def test_vbar_index_bounds():
    path = synthetic_path([1.0])
    with pytest.raises(KernelError):
        vbar(path, K1, k_idx=2, y=1.0)


def test_cond_var_jump_hand_value():
    path = synthetic_path([2.0], sigma=1.0)
    cv = cond_var_jump(path, K1)
    assert cv.total == pytest.approx(1024.0)
    assert cv.field_term == 0.0
    assert cv.jump_term == cv.total


def test_cond_var_jump_no_jumps():
    path = synthetic_path([])
    cv = cond_var_jump(path, K1)
    assert cv.total == 0.0


def test_cond_var_jump_two_jumps_brute_force():
    sigma = 1.2
    path = synthetic_path([0.9, -1.4], sigma=sigma)
    sizes = path.jump_sizes()
    cv = cond_var_jump(path, K22)
    brute = 0.0
    for z in sizes:
        w = 0.0
        for k_idx in (1, 2):
            for other in sizes:
                pt = [z, other] if k_idx == 1 else [other, z]
                w += partial_h(K22, k_idx - 1, pt)
        brute += 0.5 * w * w * (sigma**2 + sigma**2)
    assert cv.total == pytest.approx(brute, rel=1e-12)
    assert sum(v for _, v in cv.per_jump) == pytest.approx(cv.total, rel=1e-12)


# ---------------------------------------------------------------------------
# Gaussian field covariance
# ---------------------------------------------------------------------------


def test_cov_c_closed_form():
    sigma = 1.0
    path = synthetic_path([1.0], sigma=sigma)
    p, q = 0.5, 4.0
    y1, y2 = 1.3, -0.7
    expected = (abs_moment(2 * p) - abs_moment(p) ** 2) * abs(y1) ** q * abs(y2) ** q
    assert cov_c(path, KMIX, [y1], [y2]) == pytest.approx(expected, rel=1e-6)


def test_cov_c_general_sigma_closed_form():
    sigma = 1.7
    path = synthetic_path([1.0], sigma=sigma)
    p, q = 0.5, 4.0
    y1, y2 = 0.9, 1.1
    expected = (
        (abs_moment(2 * p) - abs_moment(p) ** 2)
        * sigma ** (2 * p)
        * abs(y1) ** q
        * abs(y2) ** q
    )
    assert cov_c(path, KMIX, [y1], [y2]) == pytest.approx(expected, rel=1e-6)


def test_cov_c_symmetry():
    path = synthetic_path([1.0], sigma=1.3)
    gen = np.random.default_rng(3)
    for _ in range(10):
        y1, y2 = gen.uniform(-2, 2, size=2)
        assert cov_c(path, KMIX, [y1], [y2]) == pytest.approx(
            cov_c(path, KMIX, [y2], [y1]), rel=1e-12
        )


def test_cov_c_zero_tuple():
    path = synthetic_path([1.0])
    assert cov_c(path, KMIX, [0.0], [1.0]) == 0.0


def test_cov_c_matrix_psd():
    path = synthetic_path([0.5, -1.0, 1.5, 2.0], sigma=1.1)
    ys = [[z] for z in path.jump_sizes()]
    M = cov_c_matrix(path, KMIX, ys)
    assert np.allclose(M, M.T, rtol=1e-12)
    eig = np.linalg.eigvalsh(M)
    assert eig.min() >= -1e-8 * np.trace(M)


# ---------------------------------------------------------------------------
# vtilde and the mixed-case conditional variance
# ---------------------------------------------------------------------------


def test_vtilde_closed_form():
    sigma = 1.2
    path = synthetic_path([0.9], sigma=sigma)
    z = 0.9
    expected = abs_moment(0.5) * sigma**0.5 * 4 * abs(z) ** 3 * math.copysign(1.0, z)
    assert vtilde(path, KMIX, k_idx=2, y=z) == pytest.approx(expected, rel=1e-9)
    with pytest.raises(KernelError):
        vtilde(path, KMIX, k_idx=1, y=z)


def test_cond_var_mixed_closed_forms():
    sigma = 1.3
    z = 1.1
    path = synthetic_path([z], sigma=sigma)
    cv = cond_var_mixed(path, KMIX)
    p, q = 0.5, 4.0
    jump_expected = (abs_moment(p) * sigma**p * q * abs(z) ** 3) ** 2 * sigma**2
    field_expected = (
        (abs_moment(2 * p) - abs_moment(p) ** 2) * sigma ** (2 * p) * abs(z) ** (2 * q)
    )
    assert cv.jump_term == pytest.approx(jump_expected, rel=1e-6)
    assert cv.field_term == pytest.approx(field_expected, rel=1e-6)
    assert cv.total == pytest.approx(cv.jump_term + cv.field_term, rel=1e-12)
    assert cv.total >= 0.0


def test_cond_var_mixed_no_jumps():
    path = synthetic_path([])
    cv = cond_var_mixed(path, KMIX)
    assert cv.total == 0.0


def test_cond_var_mixed_field_term_matches_pairwise():
    path = synthetic_path([0.7, -1.2, 0.4], sigma=1.1)
    sizes = path.jump_sizes()
    cv = cond_var_mixed(path, KMIX)
    pairwise = 0.0
    for a in sizes:
        for b in sizes:
            pairwise += cov_c(path, KMIX, [a], [b])
    assert cv.field_term == pytest.approx(pairwise, rel=1e-9)


def test_cond_var_mixed_total_nonnegative_random():
    gen = np.random.default_rng(9)
    for trial in range(5):
        sizes = gen.uniform(0.3, 2.0, size=3) * np.where(gen.random(3) < 0.5, -1, 1)
        path = synthetic_path(sizes, sigma=float(gen.uniform(0.5, 2.0)))
        cv = cond_var_mixed(path, KMIX)
        assert cv.total >= 0.0


def test_constant_sigma_closed_forms_across_catalog():
    # for constant sigma the time integral collapses: Y_t = t^l * sum over
    # jump tuples of rho_H(sigma, y); rho is the independent route here
    from test_kernels import catalog_kernels

    sigma = 1.2
    sizes = [0.8, -1.1]
    path = synthetic_path(sizes, sigma=sigma)
    for k in catalog_kernels():
        if k.regime not in ("MixedLLN", "MixedCLT") or k.l > 2:
            continue
        lv = mixed_limit(path, k)
        direct = 0.0
        import itertools

        for combo in itertools.product(sizes, repeat=k.d - k.l):
            direct += rho(k, [sigma] * k.l, list(combo))
        assert lv.value == pytest.approx(direct, rel=1e-6), k.text()
