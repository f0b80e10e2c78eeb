"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one line per
criterion.  Every tolerance is pinned here, not configured elsewhere.
"""

import math
import time

import numpy as np
import pytest

import sparse_ias.experiments as ex
from sparse_ias import linops
from sparse_ias.hyperprior import (
    HyperParams,
    compatible_scale,
    convexity_threshold,
    penalty,
    phi_zero,
    sensitivity_weights,
    theta_update,
    theta_update_batch,
)
from sparse_ias.solver import (
    Problem,
    StoppingRule,
    after_fixed,
    hybrid_global,
    ias_run,
    whichever_first,
    whiten,
)

from oracles import golden_section_theta

#: Coefficients this far under the peak belong to the never-exactly-zero
#: noise floor of the iteration, not to the recovered support.
SUPPORT_CUT = 1e-3


def report(num, name, ok, detail):
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {name}: {detail}", flush=True)
    assert ok, f"criterion {num} ({name}): {detail}"


@pytest.fixture(scope="module")
def deconv_runs():
    """Five seeded paper-scale deconvolution runs (shared by criteria 1-2)."""
    runs = []
    start = time.perf_counter()
    for seed in range(5):
        prob = ex.make_deconv1d(n=500, m=46, w=0.02, noise_frac=0.02, seed=seed)
        params1 = HyperParams.from_eta(1.0, 1e-4, ex.default_scales(prob))
        rep = hybrid_global(
            prob, params1, 0.5, (1e-3 + 1.5) / 0.5,
            StoppingRule(max_outer=100, theta_rtol=1e-3, phase_switch=after_fixed(10)),
        )
        runs.append((prob, rep))
    return runs, time.perf_counter() - start


def test_c01_deconv_frame_selection(deconv_runs):
    runs, elapsed = deconv_runs
    ratios = []
    for prob, rep in runs:
        alpha = rep.final_state.alpha
        a1, a2 = alpha[:500], alpha[500:]
        support = np.flatnonzero(np.abs(a1) > SUPPORT_CUT * np.abs(alpha).max())
        true_support = np.flatnonzero(np.abs(np.diff(np.concatenate([[0.0], prob.truth]))) > 0)
        # one increment atom per jump, located to within the blur width
        assert len(support) == len(true_support), "support cardinality differs from the jump count"
        blur_cells = 0.02 * 500
        assert all(np.abs(true_support - j).min() <= blur_cells for j in support), "support far from a jump"
        ratios.append(np.abs(a2).max() / np.abs(a1[support]).min())
    mean_ratio = float(np.mean(ratios))
    ok = mean_ratio <= 1e-4 and elapsed <= 60.0
    report(
        1, "frame selection (1-D deconvolution)", ok,
        f"mean max|a2|/min_support|a1| = {mean_ratio:.2e} (limit 1e-4), "
        f"per-seed {['%.1e' % r for r in ratios]}, {elapsed:.1f}s for 5 runs (limit 60s)",
    )


def test_c02_cgls_count_plateau(deconv_runs):
    runs, _ = deconv_runs
    worst = []
    ok = True
    for prob, rep in runs:
        alpha = rep.final_state.alpha
        card = int((np.abs(alpha) > SUPPORT_CUT * np.abs(alpha).max()).sum())
        last5 = rep.cgls_counts[-5:]
        ok &= all(0.5 * card <= c <= 1.5 * card for c in last5)
        worst.append((card, last5))
    report(
        2, "CGLS count plateau", ok,
        f"support cardinality and last-5 inner counts per seed: {worst} (band: +-50%)",
    )


def test_c03_theta_update_oracle_grid():
    grid = [(-1.0, 1.0), (-0.5, 2.0), (0.5, (1e-3 + 1.5) / 0.5),
            (0.75, (1e-3 + 1.5) / 0.75), (1.0, 1.5 + 1e-4), (2.0, 1.0)]
    worst_golden = 0.0
    worst_closed = 0.0
    for r, beta in grid:
        p = HyperParams(r, beta)
        for alpha in (0.0, 1e-3, 0.5, 1.0, 10.0, 1e3):
            for scale in (1e-6, 1.0, 1e3):
                got = theta_update(alpha, scale, p)
                want = golden_section_theta(alpha, scale, r, p.eta)
                worst_golden = max(worst_golden, abs(got - want) / want)
                if r == 1.0:
                    closed = 0.5 * scale * (p.eta + math.sqrt(p.eta**2 + 2 * alpha**2 / scale))
                    worst_closed = max(worst_closed, abs(got - closed) / closed)
                if r == -1.0:
                    closed = (alpha**2 / 2 + scale) / (beta + 1.5)
                    worst_closed = max(worst_closed, abs(got - closed) / closed)
    ok = worst_golden <= 1e-6 and worst_closed <= 1e-12
    report(
        3, "theta-update oracle equivalence", ok,
        f"worst vs golden-section {worst_golden:.2e} (limit 1e-6), "
        f"worst vs closed forms {worst_closed:.2e} (limit 1e-12)",
    )


def test_c04_penalty_limits():
    rng = np.random.default_rng(0)
    alpha = rng.standard_normal(40) * 2.0
    scales = rng.uniform(0.2, 5.0, 40)

    p = HyperParams.from_eta(1.0, 1e-8, scales)
    theta = theta_update_batch(alpha, scales, p)
    l1_target = math.sqrt(2.0) * np.sum(np.abs(alpha) / np.sqrt(scales))
    l1_err = abs(penalty(alpha, theta, p).total - l1_target) / l1_target

    worst_lp = 0.0
    for r in (0.25, 0.5, 0.75):
        pr = HyperParams(r, 1.5 / r, scales)
        theta = theta_update_batch(alpha, scales, pr)
        exponent = 2 * r / (r + 1)
        c_r = (r + 1) / (2 * r) ** (r / (r + 1))
        target = c_r * np.sum(np.abs(alpha) ** exponent / scales ** (exponent / 2))
        worst_lp = max(worst_lp, abs(penalty(alpha, theta, pr).total - target) / target)

    ok = l1_err <= 1e-3 and worst_lp <= 1e-8
    report(
        4, "penalty limits", ok,
        f"l1 limit error at eta=1e-8: {l1_err:.2e} (limit 1e-3); "
        f"lp identity error: {worst_lp:.2e} (limit 1e-8)",
    )


def test_c05_descent_property():
    rng = np.random.default_rng(1)
    worst_increase = -np.inf
    for _ in range(20):
        a = rng.standard_normal((32, 64))
        x = np.zeros(64)
        x[rng.choice(64, 5, replace=False)] = rng.standard_normal(5) * 2.0
        b = a @ x + 0.05 * rng.standard_normal(32)
        m = linops.dense(a)
        params = HyperParams.from_eta(1.0, 1e-3, sensitivity_weights(m))
        rep = ias_run(
            Problem(m, b), params,
            StoppingRule(25, 1e-14, after_fixed(10**9)), exact_alpha=True,
        )
        trace = np.array(rep.objective_trace)
        worst_increase = max(worst_increase, float(np.diff(trace).max()))
    ok = worst_increase <= 1e-10
    report(
        5, "exact-mode descent", ok,
        f"largest objective increase over 20 random 32x64 problems: {worst_increase:.2e} (slack 1e-10)",
    )


def test_c06_denoising_dominance():
    start = time.perf_counter()
    prob = ex.make_denoise2d(n=64, noise_frac=0.1, seed=0)
    params1 = HyperParams.from_eta(1.0, 1e-3, ex.default_scales(prob))
    rep = hybrid_global(
        prob, params1, 0.5, (1e-2 + 1.5) / 0.5,
        StoppingRule(max_outer=100, theta_rtol=1e-3, phase_switch=after_fixed(10)),
    )
    elapsed = time.perf_counter() - start
    stats = ex.frame_report(rep.final_state.alpha, prob.dictionary)
    dominance = stats[1].contribution_norm / stats[0].contribution_norm
    recon = stats[0].contribution + stats[1].contribution
    gain = ex.psnr(recon, prob.truth) - ex.psnr(prob.data, prob.truth)
    ok = dominance <= 1e-2 and gain >= 6.0 and elapsed <= 120.0
    report(
        6, "denoising dominance", ok,
        f"||W2 a2||/||W1 a1|| = {dominance:.2e} (limit 1e-2), "
        f"PSNR gain {gain:.1f} dB (need >= 6), {elapsed:.1f}s (limit 120s)",
    )


def test_c07_compression():
    prob = ex.make_natural2d(n=128, noise_frac=0.05, seed=0)
    img = ex.unstack(prob.truth, 128)
    alpha_clean = np.concatenate([
        ex.stack(np.diff(img, axis=0, prepend=0)),
        ex.stack(np.diff(img, axis=1, prepend=0)),
    ])
    nonzero = np.abs(alpha_clean) > 0
    floor = np.abs(alpha_clean[nonzero]).min()
    clean_fraction = float(nonzero.mean())

    params1 = HyperParams.from_eta(1.0, 1e-4, ex.default_scales(prob))
    rep = hybrid_global(
        prob, params1, 0.5, (1e-3 + 1.5) / 0.5,
        StoppingRule(max_outer=60, theta_rtol=1e-3, phase_switch=after_fixed(10)),
    )
    recon_fraction = float((np.abs(rep.final_state.alpha) > floor).mean())
    factor = clean_fraction / recon_fraction
    ok = factor >= 5.0
    report(
        7, "compression on mixed texture image", ok,
        f"fraction above clean floor: {clean_fraction:.3f} -> {recon_fraction:.4f}, "
        f"drop factor {factor:.1f} (need >= 5)",
    )


def test_c08_dictlearn_sigma_monotonicity():
    atoms, labels = ex.synthetic_digit_dictionary(n_classes=10, atoms_per_class=20, seed=0)
    digits, truth = ex.synthetic_test_digits(50, seed=1, dictionary_seed=0)
    accuracy = {}
    support = {}
    for sigma in (0.01, 0.05, 0.1):
        correct = 0
        sizes = []
        for k in range(50):
            prob = ex.make_dictlearn(atoms, labels, digits[:, k], sigma)
            params1 = HyperParams.from_eta(1.0, 1e-4, ex.default_scales(prob))
            rep = hybrid_global(
                prob, params1, -1.0, 1.0,
                StoppingRule(160, 1e-3, whichever_first(80, 1e-3)),
                nonneg_projection=True,
            )
            res = ex.classify_majority(rep.final_state.alpha, labels, tau=0.01, sigma_used=sigma)
            sizes.append(res.support_size)
            correct += res.predicted_label == truth[k]
        accuracy[sigma] = correct / 50
        support[sigma] = float(np.mean(sizes))
    monotone = support[0.01] >= support[0.05] >= support[0.1]
    ok = monotone and accuracy[0.01] >= 0.9 and accuracy[0.01] >= accuracy[0.1]
    report(
        8, "dictionary classification vs sigma", ok,
        f"accuracy {accuracy}, mean support {support} "
        "(need: support non-increasing, acc(0.01) >= 90% and >= acc(0.1))",
    )


def test_c09_compatibility_and_threshold_formulas():
    checks = []
    p1 = HyperParams(1.0, 1.5 + 1e-4)
    checks.append(abs(phi_zero(p1) - 1e-4) / 1e-4)
    checks.append(abs(phi_zero(HyperParams(-1.0, 1.0)) - 0.4) / 0.4)
    p_half = HyperParams.from_eta(0.5, 1e-3)
    checks.append(abs(phi_zero(p_half) - 4e-6) / 4e-6)
    checks.append(abs(convexity_threshold(p_half, 0) - 1.6e-5) / 1.6e-5)
    p_inv = HyperParams(-1.0, 1.0, np.array([2.0]))
    checks.append(abs(convexity_threshold(p_inv, 0) - 1.6) / 1.6)
    assert convexity_threshold(p1, 0) == math.inf
    p_base = HyperParams.from_eta(1.0, 1e-4, np.array([1.0]))
    checks.append(abs(compatible_scale(p_base, 0.5, (1e-3 + 1.5) / 0.5)[0] - 25.0) / 25.0)
    worst = max(checks)
    ok = worst <= 1e-12
    report(
        9, "compatibility and threshold formulas", ok,
        f"worst relative error vs direct evaluation: {worst:.2e} (limit 1e-12)",
    )


def test_c10_whitened_discrepancy_calibration():
    rng = np.random.default_rng(2)
    m, sigma = 46, 0.032
    band = 3.0 * math.sqrt(m / 2.0)
    hits = 0
    for _ in range(200):
        eps = sigma * rng.standard_normal(m)
        _, eps_w = whiten(linops.identity(m), eps, sigma)
        hits += abs(np.linalg.norm(eps_w) - math.sqrt(m)) <= band
    ok = hits >= 198
    report(
        10, "whitened discrepancy calibration", ok,
        f"{hits}/200 draws within sqrt(m) +- 3 sqrt(m/2) (need >= 198)",
    )
