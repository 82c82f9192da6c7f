"""Named verification experiments for the estimator and the diagnostics.

Each experiment is a deterministic, self-contained study that exercises
one claimed property of the library end to end and reports pass/fail
checks with measured margins:

``gram-positivity``
    The forward design energy of random kernel directions is
    nonnegative and matches the assembled quadratic form.
``gradient-check``
    The assembled normal equations are the exact gradient of the
    discrete squared-error criterion, and its directional derivatives
    vanish at the returned solution.
``mode-family-orders``
    Polynomial-exponential-sinusoid curves are detected at exactly
    their analytic recurrence order.
``broadband-floor``
    Filtered-noise curves are never mistaken for low-order
    self-similar curves: their embedding residual stays large.
``invisible-directions``
    The even-frequency counterexample covariate annihilates
    odd-frequency sine kernels: the convolution vanishes, the verdict
    is non-identifiable, the null basis captures those kernels, and
    perturbing along them leaves the criterion flat.
``recovery-refinement``
    Identifiable designs get an identifiable verdict, and noiseless
    recovery error shrinks monotonically under grid refinement.
``rank-agreement``
    Delay-embedding rank and Gram-block rank agree exactly at matched
    tolerances across the mode-family test set.
``downsample-match``
    At stride one on a noiseless full-rank design, the down-sampled
    row regression reproduces the full estimator.
``solver-agreement``
    All solvers coincide on full-rank systems; on rank-deficient
    systems the truncated and small-ridge paths reach the same
    criterion value.
``determinism``
    Rerunning a fit-and-diagnose bundle, under different thread caps,
    produces byte-identical serialized results.

``run_all`` executes every experiment in a fixed order; the command
line exposes the same registry under ``reproduce``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from fcmlab import fileio
from fcmlab.designs import GeneratorSpec, NoiseSpec, gen_covariate, gen_design, filtered_noise_modes
from fcmlab.downsample import fit_flm, flm_row_residuals, to_flm
from fcmlab.errors import NearSingularError
from fcmlab.estimator import (
    CoefficientIndexMap,
    assemble,
    fit,
    solve_direct,
    solve_penalized,
    solve_truncated_svd,
)
from fcmlab.grids import GridFunction, inner_product
from fcmlab.identifiability import (
    DEFAULT_RESIDUAL_TOL,
    delay_embed,
    diagnose,
    gram_spectrum,
    quadratic_form,
    self_similarity_residual,
)
from fcmlab.model import CoefficientSet, Design, Observation, lag_convolve, sse
from fcmlab.util import THREADS_ENV_VAR, numerical_rank

__all__ = ["Check", "ExperimentResult", "EXPERIMENT_NAMES", "run_experiment", "run_all"]


@dataclass(frozen=True)
class Check:
    """One named pass/fail assertion with its measured margin."""

    label: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ExperimentResult:
    """All checks of one experiment."""

    name: str
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if c.passed else 'FAIL'} {self.name}: {c.label} [{c.detail}]"
            for c in self.checks
        ]


def _check(label: str, passed: bool, detail: str) -> Check:
    return Check(label, bool(passed), detail)


# ---------------------------------------------------------------------------
# shared builders

# The mode-family test set: every combination of decay, frequency, and
# polynomial degree below. A member with b = 0 reduces to t^m exp(a t)
# (one real characteristic root of multiplicity m + 1); b != 0 adds the
# conjugate pair, doubling the dimension.
_FAMILY_DECAYS = (-0.5, 0.0, 0.3)
_FAMILY_FREQS = (0.0, 2.0, 5.0)
_FAMILY_POWERS = (0, 1, 2)


def _family_members():
    for a in _FAMILY_DECAYS:
        for b in _FAMILY_FREQS:
            for m in _FAMILY_POWERS:
                order = (m + 1) * (2 if b != 0.0 else 1)
                yield a, b, m, order


def _family_curve(a: float, b: float, m: int, T: float, step: float) -> GridFunction:
    spec = GeneratorSpec(
        "self_similar", T, step, params={"terms": [{"a": a, "b": b, "m": m}]}
    )
    return gen_covariate(spec)


def _small_noisy_design(seed: int, n: int = 2, noise_sd: float = 0.1):
    """A small two-covariate design with scalar covariate and noise."""
    step = 1.0 / 16.0
    T = 1.5
    specs = [
        GeneratorSpec(
            "filtered_noise", T, step, seed=seed,
            params={"n_modes": 64, "max_frequency": 6.0, "bandwidth": 0.02},
        ),
        GeneratorSpec(
            "filtered_noise", T, step, seed=seed + 101,
            params={"n_modes": 64, "max_frequency": 6.0, "bandwidth": 0.02},
        ),
    ]
    u1 = step * np.arange(5)
    u2 = step * np.arange(9)
    beta_true = CoefficientSet(
        (0.7, -0.3),
        (
            GridFunction(0.0, step, np.sin(2.0 * np.pi * u1) + 0.5),
            GridFunction(0.0, step, np.exp(-u2) * np.cos(np.pi * u2)),
        ),
    )
    noise = NoiseSpec("white", sd=noise_sd)
    design, _ = gen_design(specs, beta_true, noise, n=n, seed=seed)
    return design, beta_true


def _weighted_rel_dist(system_weights: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> float:
    diff = c1 - c2
    denom = float(np.sqrt((c1 * system_weights) @ c1))
    return float(np.sqrt((diff * system_weights) @ diff)) / max(denom, 1e-300)


# ---------------------------------------------------------------------------
# closed-form responses for refinement studies

def _phi(theta: np.ndarray) -> np.ndarray:
    """Stable evaluation of ``(exp(i theta) - 1) / (i theta)``."""
    theta = np.asarray(theta, dtype=float)
    return np.exp(0.5j * theta) * np.sinc(theta / (2.0 * np.pi))


def _kernel_transform(terms, alpha: float, omegas: np.ndarray) -> np.ndarray:
    """``B(w) = integral_0^alpha beta(u) exp(-i w u) du`` for a cos/sin mix.

    ``terms`` lists ``(kind, amplitude, frequency)`` with kind ``"cos"``
    or ``"sin"``; the integral of each complex exponential is exact, so
    the only error in responses built from this transform is rounding.
    """
    omegas = np.asarray(omegas, dtype=float)
    total = np.zeros(omegas.shape, dtype=complex)
    for kind, amp, nu in terms:
        plus = alpha * _phi((nu - omegas) * alpha)
        minus = alpha * _phi((-nu - omegas) * alpha)
        if kind == "cos":
            total += amp * 0.5 * (plus + minus)
        elif kind == "sin":
            total += amp * (plus - minus) / 2j
        else:
            raise ValueError(f"unknown kernel term kind {kind!r}")
    return total


def _kernel_values(terms, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    for kind, amp, nu in terms:
        out += amp * (np.cos(nu * u) if kind == "cos" else np.sin(nu * u))
    return out


# Reference kernel for recovery studies; its windowed transform has a
# closed form through _kernel_transform. Value and first derivative
# vanish at both window endpoints, so the trapezoid boundary error of
# the convolution stays high order and grid refinement isolates a
# clean interior discretization error.
_RECOVERY_TERMS = (
    ("sin", 1.0, 2.0 * np.pi),
    ("sin", -1.0 / 3.0, 6.0 * np.pi),
)
_RECOVERY_INTERCEPT = 0.4


def _analytic_design(step: float, T: float, alpha: float, n: int, seed: int, params) -> Design:
    """Observations whose responses are exact windowed convolutions.

    Covariates are filtered-noise draws; responses evaluate the true
    convolution model in closed form from the generator's spectral
    content, so refining the grid leaves the underlying data fixed and
    isolates pure discretization error.
    """
    n_pts = round(T / step) + 1
    times = step * np.arange(n_pts)
    observations = []
    for i in range(n):
        spec = GeneratorSpec("filtered_noise", T, step, seed=seed + 1009 * i, params=params)
        x = gen_covariate(spec)
        amps, omegas, phases = filtered_noise_modes(spec)
        B = _kernel_transform(_RECOVERY_TERMS, alpha, omegas)
        carrier = np.exp(1j * (times[:, None] * omegas[None, :] + phases[None, :]))
        y = _RECOVERY_INTERCEPT + (carrier * B[None, :]).imag @ amps
        observations.append(Observation(GridFunction(0.0, step, y), (x,), ()))
    return Design(tuple(observations), (alpha,), step)


def _recovery_error(design: Design, alpha: float) -> float:
    """Relative discrete-L2 kernel error of the direct fit."""
    result = fit(design, solver="direct")
    L = round(alpha / design.step)
    u = design.step * np.arange(L + 1)
    true_kernel = GridFunction(0.0, design.step, _kernel_values(_RECOVERY_TERMS, u))
    est = result.coef.betas[0]
    diff = est.with_values(est.values - true_kernel.values)
    return float(
        np.sqrt(inner_product(diff, diff) / inner_product(true_kernel, true_kernel))
    )


# ---------------------------------------------------------------------------
# experiments

def _exp_gram_positivity() -> ExperimentResult:
    # Forward design energy vs the assembled quadratic form, over 1000
    # random kernel directions spread across 5 designs (one of which has
    # observations of unequal length).
    worst_energy = np.inf
    worst_agreement = 0.0
    rng = np.random.default_rng(2024)
    for variant, seed in enumerate(range(11, 16)):
        design, _ = _small_noisy_design(seed)
        if variant == 4:
            short = []
            for k, obs in enumerate(design.observations):
                if k == 0:
                    t1 = obs.y.end - 3 * design.step
                    short.append(
                        Observation(
                            obs.y.restrict(0.0, t1),
                            tuple(xj.restrict(0.0, t1) for xj in obs.x),
                            obs.z,
                        )
                    )
                else:
                    short.append(obs)
            design = Design(tuple(short), design.lags, design.step)
        system = assemble(design)
        imap = system.index_map
        blk = imap.covariate_block
        lam_max = float(gram_spectrum(system).eigenvalues[0])
        for _ in range(200):
            v = np.zeros(imap.size)
            v[blk] = rng.standard_normal(blk.stop - blk.start)
            gamma = imap.unpack(v)
            energy = quadratic_form(design, gamma)
            quad = float(v @ system.G @ v)
            norm_sq = float((v * system.weights) @ v)
            worst_energy = min(worst_energy, energy / (lam_max * norm_sq))
            agreement = abs(energy - quad) / max(abs(quad), 1e-300)
            worst_agreement = max(worst_agreement, agreement)
    return ExperimentResult(
        "gram-positivity",
        (
            _check(
                "design energy is nonnegative for every direction",
                worst_energy >= -1e-10,
                f"min scaled energy {worst_energy:.3e}, floor -1e-10",
            ),
            _check(
                "forward energy matches the assembled quadratic form",
                worst_agreement <= 1e-8,
                f"max relative gap {worst_agreement:.3e}, tol 1e-8",
            ),
        ),
    )


def _exp_gradient_check() -> ExperimentResult:
    design, _ = _small_noisy_design(21, n=3)
    system = assemble(design)
    imap = system.index_map
    rng = np.random.default_rng(2025)
    eps = 1e-3

    def criterion(c: np.ndarray) -> float:
        return sse(design, imap.unpack(c))

    worst_grad = 0.0
    for _ in range(20):
        c = rng.standard_normal(imap.size)
        g_asm = 2.0 * (system.G @ c - system.F)
        g_fd = np.empty(imap.size)
        for k in range(imap.size):
            e = np.zeros(imap.size)
            e[k] = eps
            g_fd[k] = (criterion(c + e) - criterion(c - e)) / (2.0 * eps)
        rel = float(np.linalg.norm(g_fd - g_asm) / max(np.linalg.norm(g_asm), 1e-300))
        worst_grad = max(worst_grad, rel)

    c_star = imap.pack(solve_direct(system))
    sse_star = criterion(c_star)
    scale = float(np.linalg.norm(c_star))
    worst_dir = 0.0
    for _ in range(100):
        v = rng.standard_normal(imap.size)
        v /= np.linalg.norm(v)
        fd = (criterion(c_star + eps * v) - criterion(c_star - eps * v)) / (2.0 * eps)
        worst_dir = max(worst_dir, abs(fd) * scale / max(sse_star, 1e-300))
    return ExperimentResult(
        "gradient-check",
        (
            _check(
                "normal equations match finite differences of the criterion",
                worst_grad <= 1e-5,
                f"max relative gradient gap {worst_grad:.3e} over 20 points, tol 1e-5",
            ),
            _check(
                "directional derivatives vanish at the solution",
                worst_dir <= 1e-6,
                f"max scaled directional derivative {worst_dir:.3e} over 100 directions, tol 1e-6",
            ),
        ),
    )


def _exp_mode_family_orders() -> ExperimentResult:
    step = 1.0 / 256.0
    T = 2.0
    worst_at = 0.0
    worst_below = np.inf
    for a, b, m, order in _family_members():
        x = _family_curve(a, b, m, T, step)
        worst_at = max(worst_at, self_similarity_residual(x, order))
        if order > 1:
            worst_below = min(worst_below, self_similarity_residual(x, order - 1))
    return ExperimentResult(
        "mode-family-orders",
        (
            _check(
                "every family member is explained at its analytic order",
                worst_at < 1e-7,
                f"max residual {worst_at:.3e} over 27 members, tol 1e-7",
            ),
            _check(
                "no member is explained one order early",
                worst_below >= DEFAULT_RESIDUAL_TOL,
                f"min residual at order-1 {worst_below:.3e}, floor {DEFAULT_RESIDUAL_TOL:.0e}",
            ),
        ),
    )


def _exp_broadband_floor() -> ExperimentResult:
    step = 1.0 / 128.0
    T = 1.0
    worst = np.inf
    for seed in range(41, 51):
        spec = GeneratorSpec(
            "filtered_noise", T, step, seed=seed,
            params={"n_modes": 256, "max_frequency": 64.0, "bandwidth": step},
        )
        x = gen_covariate(spec)
        H = delay_embed(x, 0.5)
        s = np.linalg.svd(H, compute_uv=False)
        total = float(np.linalg.norm(s))
        half = H.shape[1] // 2
        tails = np.sqrt(np.cumsum((s**2)[::-1])[::-1]) / total
        worst = min(worst, float(tails[1 : half + 1].min()))
    return ExperimentResult(
        "broadband-floor",
        (
            _check(
                "broadband curves keep a large residual at parsimonious orders",
                worst > 0.05,
                f"min residual {worst:.3f} over 10 seeds and all orders up to half the window, floor 0.05",
            ),
        ),
    )


def _counterexample_design(noise_sd: float):
    step = 1.0 / 256.0
    T = 3.0
    spec = GeneratorSpec("orthogonal_counterexample", T, step, params={"K": 3})
    u = step * np.arange(257)
    beta_true = CoefficientSet(
        (0.5,), (GridFunction(0.0, step, np.sin(4.0 * np.pi * u)),)
    )
    design, _ = gen_design([spec], beta_true, NoiseSpec("white", sd=noise_sd), n=2, seed=5)
    return design, beta_true


def _odd_sine_kernel(j: int, step: float) -> GridFunction:
    u = step * np.arange(round(1.0 / step) + 1)
    return GridFunction(0.0, step, np.sin(2.0 * np.pi * (2 * j - 1) * u))


def _exp_invisible_directions() -> ExperimentResult:
    design, beta_true = _counterexample_design(noise_sd=0.05)
    step = design.step
    x = design.observations[0].x[0]

    conv_sup = 0.0
    for j in (1, 2, 3):
        conv = lag_convolve(x, _odd_sine_kernel(j, step), 1.0)
        conv_sup = max(conv_sup, float(np.abs(conv.values).max()))

    report = diagnose(design)
    system = assemble(design)
    imap = system.index_map
    w = system.weights

    min_proj = np.inf
    for j in (1, 2, 3):
        gamma = CoefficientSet((0.0,), (_odd_sine_kernel(j, step),))
        gvec = imap.pack(gamma)
        gvec = gvec / np.sqrt((gvec * w) @ gvec)
        proj_sq = 0.0
        for basis_dir in report.spectrum.null_basis:
            bvec = imap.pack(basis_dir)
            proj_sq += float((gvec * w) @ bvec) ** 2
        min_proj = min(min_proj, np.sqrt(proj_sq))

    sse_base = sse(design, beta_true)
    worst_flat = 0.0
    for j in (1, 2, 3):
        kernel = _odd_sine_kernel(j, step)
        perturbed = CoefficientSet(
            beta_true.beta0,
            (beta_true.betas[0].with_values(beta_true.betas[0].values + kernel.values),),
        )
        worst_flat = max(worst_flat, abs(sse(design, perturbed) - sse_base) / sse_base)

    return ExperimentResult(
        "invisible-directions",
        (
            _check(
                "odd-frequency sine kernels convolve to zero",
                conv_sup <= 1e-8,
                f"sup-norm {conv_sup:.3e} over three kernels, tol 1e-8",
            ),
            _check(
                "verdict is non-identifiable",
                not report.identifiable,
                f"rank {report.spectrum.numerical_rank} of {report.spectrum.block_size}",
            ),
            _check(
                "null basis captures the invisible kernels",
                min_proj > 0.99,
                f"min projection {min_proj:.6f}, floor 0.99",
            ),
            _check(
                "criterion is flat along invisible directions",
                worst_flat < 1e-10,
                f"max relative criterion change {worst_flat:.3e}, tol 1e-10",
            ),
            _check(
                "covariate is detected as parsimoniously self-similar",
                all(report.finite_dimensional),
                f"estimated order {report.covariate_reports[0][0].estimated_order}",
            ),
        ),
    )


# Filtered-noise content for refinement studies: frequencies populate
# the full band of the finest grid so the design stays full rank at
# every step, with a mild envelope so the band edge keeps energy.
_RECOVERY_PARAMS = {"n_modes": 256, "max_frequency": 64.0, "bandwidth": 0.004}


def _exp_recovery_refinement() -> ExperimentResult:
    # Lag window shorter than the period and step fine enough that none
    # of the 7 sinusoids aliases away: the 13-column block sits inside a
    # 14-dimensional shift family.
    rich_step = 1.0 / 16.0
    rich_spec = GeneratorSpec("sinusoid_rich", 3.0, rich_step, params={"K": 7})
    u = rich_step * np.arange(13)
    rich_beta = CoefficientSet((0.2,), (GridFunction(0.0, rich_step, np.cos(np.pi * u)),))
    rich_design, _ = gen_design([rich_spec], rich_beta, NoiseSpec("white", sd=0.0), n=1, seed=3)
    rich_report = diagnose(rich_design)

    alpha = 0.5
    T = 2.0
    steps = (1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0)
    errors = []
    verdicts = []
    for step in steps:
        design = _analytic_design(step, T, alpha, n=8, seed=61, params=_RECOVERY_PARAMS)
        verdicts.append(diagnose(design).identifiable)
        errors.append(_recovery_error(design, alpha))
    e32, e64, e128 = errors
    return ExperimentResult(
        "recovery-refinement",
        (
            _check(
                "rich sinusoid design is identifiable",
                rich_report.identifiable,
                f"rank {rich_report.spectrum.numerical_rank} of {rich_report.spectrum.block_size}",
            ),
            _check(
                "filtered-noise design is identifiable at every step",
                all(verdicts),
                f"verdicts {verdicts} at steps 1/32, 1/64, 1/128",
            ),
            _check(
                "recovery error is small on the fine grid",
                e128 < 1e-3,
                f"relative kernel error {e128:.3e} at step 1/128, tol 1e-3",
            ),
            _check(
                "recovery error decreases under refinement",
                e32 > e64 > e128,
                f"errors {e32:.3e} > {e64:.3e} > {e128:.3e}",
            ),
        ),
    )


# Matched rank tolerances: eigenvalues of the Gram block scale like
# squared singular values of the embedding, so the eigenvalue cut is
# the square of the singular-value cut.
_RANK_SV_TOL = 1e-6


def _exp_rank_agreement() -> ExperimentResult:
    step = 1.0 / 64.0
    T = 2.0
    alpha = 1.0
    mismatches = []
    for a, b, m, order in _family_members():
        x = _family_curve(a, b, m, T, step)
        y = GridFunction(0.0, step, np.zeros(len(x)))
        design = Design((Observation(y, (x,), ()),), (alpha,), step)
        system = assemble(design)
        spectrum = gram_spectrum(system, tol=_RANK_SV_TOL**2)
        s = np.linalg.svd(delay_embed(x, alpha), compute_uv=False)
        embed_rank = numerical_rank(s, _RANK_SV_TOL)
        if embed_rank != spectrum.numerical_rank:
            mismatches.append((a, b, m, embed_rank, spectrum.numerical_rank))
    return ExperimentResult(
        "rank-agreement",
        (
            _check(
                "embedding rank equals Gram-block rank on every member",
                not mismatches,
                f"{len(mismatches)} mismatches of 27"
                + (f", first {mismatches[0]}" if mismatches else ""),
            ),
        ),
    )


def _downsample_design():
    step = 1.0 / 32.0
    T = 2.0
    specs = [
        GeneratorSpec(
            "filtered_noise", T, step, seed=81,
            params={"n_modes": 128, "max_frequency": 16.0, "bandwidth": 0.005},
        )
    ]
    u = step * np.arange(9)
    beta_true = CoefficientSet(
        (0.3, 0.8),
        (GridFunction(0.0, step, np.sin(2.0 * np.pi * u) + 0.4),),
    )
    return gen_design(specs, beta_true, NoiseSpec("white", sd=0.0), n=4, seed=8)


def _exp_downsample_match() -> ExperimentResult:
    design, beta_true = _downsample_design()
    data = to_flm(design, design.step)
    resid = flm_row_residuals(data, beta_true)
    max_resid = float(np.abs(resid).max())
    flm_coef = fit_flm(data)
    full = fit(design, solver="direct")
    system = assemble(design)
    rel = _weighted_rel_dist(
        system.weights,
        system.index_map.pack(full.coef),
        system.index_map.pack(flm_coef),
    )
    return ExperimentResult(
        "downsample-match",
        (
            _check(
                "row residuals vanish at the generating coefficients",
                max_resid < 1e-12,
                f"max row residual {max_resid:.3e}, tol 1e-12",
            ),
            _check(
                "stride-one rows reproduce the full estimator",
                rel <= 1e-6,
                f"relative coefficient distance {rel:.3e}, tol 1e-6",
            ),
        ),
    )


def _exp_solver_agreement() -> ExperimentResult:
    design, _ = _downsample_design()
    noisy, _ = gen_design(
        [
            GeneratorSpec(
                "filtered_noise", 2.0, 1.0 / 32.0, seed=91,
                params={"n_modes": 128, "max_frequency": 16.0, "bandwidth": 0.005},
            )
        ],
        CoefficientSet(
            (0.3,),
            (GridFunction(0.0, 1.0 / 32.0, np.cos(np.pi * (1.0 / 32.0) * np.arange(9))),),
        ),
        NoiseSpec("white", sd=0.1),
        n=4,
        seed=9,
    )
    system = assemble(noisy)
    imap = system.index_map
    c_direct = imap.pack(solve_direct(system))
    c_svd = imap.pack(solve_truncated_svd(system)[0])
    c_pen = imap.pack(solve_penalized(system, 0.0))
    pairwise = max(
        _weighted_rel_dist(system.weights, c_direct, c_svd),
        _weighted_rel_dist(system.weights, c_direct, c_pen),
        _weighted_rel_dist(system.weights, c_svd, c_pen),
    )

    # Rank-deficient design: a three-tone sinusoid whose lag window holds
    # 13 samples, so the kernel block has rank 7 < 13. The window spans a
    # partial period, which keeps constant kernels distinguishable from
    # the intercept, and every null direction of the normal matrix is
    # rough (orthogonal to the smooth tone shifts), so the curvature
    # penalty regularizes all of them and the ridge solve stays stable.
    step = 1.0 / 16.0
    def_spec = GeneratorSpec("sinusoid_rich", 3.0, step, params={"K": 3})
    u = step * np.arange(13)
    def_beta = CoefficientSet(
        (0.5,), (GridFunction(0.0, step, np.sin(2.0 * np.pi * u) + 0.3),)
    )
    deficient, _ = gen_design(
        [def_spec], def_beta, NoiseSpec("white", sd=0.05), n=2, seed=7
    )
    def_system = assemble(deficient)
    raised = False
    try:
        solve_direct(def_system)
    except NearSingularError:
        raised = True
    coef_svd, _ = solve_truncated_svd(def_system)
    lam = 1e-8 * float(np.linalg.eigvalsh(def_system.G)[-1])
    coef_ridge = solve_penalized(def_system, lam)
    sse_svd = sse(deficient, coef_svd)
    sse_ridge = sse(deficient, coef_ridge)
    sse_gap = abs(sse_svd - sse_ridge) / max(sse_svd, 1e-300)
    return ExperimentResult(
        "solver-agreement",
        (
            _check(
                "solvers coincide on a full-rank system",
                pairwise <= 1e-8,
                f"max pairwise distance {pairwise:.3e}, tol 1e-8",
            ),
            _check(
                "direct solver refuses the rank-deficient system",
                raised,
                "raised the near-singular error",
            ),
            _check(
                "truncated and small-ridge criteria agree when rank deficient",
                sse_gap <= 1e-6,
                f"relative criterion gap {sse_gap:.3e}, tol 1e-6",
            ),
        ),
    )


def _determinism_bundle() -> str:
    step = 1.0 / 128.0
    spec = GeneratorSpec("orthogonal_counterexample", 2.0, step, params={"K": 2})
    u = step * np.arange(129)
    beta_true = CoefficientSet(
        (0.5,), (GridFunction(0.0, step, np.sin(4.0 * np.pi * u)),)
    )
    design, _ = gen_design([spec], beta_true, NoiseSpec("white", sd=0.05), n=2, seed=17)
    result = fit(design, solver="truncated_svd")
    report = diagnose(design)
    payload = {
        "fit": fileio.fit_payload(result),
        "diagnosis": fileio.diagnosis_payload(report),
    }
    return json.dumps(payload, sort_keys=True)


def _exp_determinism() -> ExperimentResult:
    first = _determinism_bundle()
    second = _determinism_bundle()
    saved = os.environ.get(THREADS_ENV_VAR)
    try:
        os.environ[THREADS_ENV_VAR] = "1"
        serial = _determinism_bundle()
        os.environ[THREADS_ENV_VAR] = "4"
        threaded = _determinism_bundle()
    finally:
        if saved is None:
            os.environ.pop(THREADS_ENV_VAR, None)
        else:
            os.environ[THREADS_ENV_VAR] = saved
    return ExperimentResult(
        "determinism",
        (
            _check(
                "reruns are byte-identical",
                first == second,
                f"{len(first)} serialized bytes compared",
            ),
            _check(
                "thread cap does not change results",
                serial == threaded and serial == first,
                "single-thread and four-thread runs compared",
            ),
        ),
    )


EXPERIMENTS: dict[str, Callable[[], ExperimentResult]] = {
    "gram-positivity": _exp_gram_positivity,
    "gradient-check": _exp_gradient_check,
    "mode-family-orders": _exp_mode_family_orders,
    "broadband-floor": _exp_broadband_floor,
    "invisible-directions": _exp_invisible_directions,
    "recovery-refinement": _exp_recovery_refinement,
    "rank-agreement": _exp_rank_agreement,
    "downsample-match": _exp_downsample_match,
    "solver-agreement": _exp_solver_agreement,
    "determinism": _exp_determinism,
}

EXPERIMENT_NAMES = tuple(EXPERIMENTS)


def run_experiment(name: str) -> ExperimentResult:
    """Run one named experiment; unknown names raise KeyError."""
    if name not in EXPERIMENTS:
        raise KeyError(f"unknown experiment {name!r}, expected one of {EXPERIMENT_NAMES}")
    try:
        return EXPERIMENTS[name]()
    except Exception as exc:  # a crash is a failed experiment, not a crashed suite
        return ExperimentResult(
            name, (_check("experiment completed", False, f"{type(exc).__name__}: {exc}"),)
        )


def run_all(names=None) -> list[ExperimentResult]:
    """Run the given experiments (all by default) in registry order."""
    if names is None:
        names = EXPERIMENT_NAMES
    return [run_experiment(name) for name in names]
