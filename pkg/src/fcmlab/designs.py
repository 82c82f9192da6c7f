"""Covariate generators, simulated designs, and centering.

Four covariate families cover the interesting identifiability regimes:

``sinusoid_rich``
    Geometrically damped sines ``sum_k 2^-k sin(2 pi k t)``; every lag
    direction receives energy, so modest grids yield full-rank designs.
``orthogonal_counterexample``
    Even-frequency sine mix ``sum_k 2^-(4k) sin(4 pi k t)``. On an
    integer-length domain its lag convolution annihilates every
    odd-frequency sine kernel exactly, making those directions
    invisible to the design.
``self_similar``
    Finite sums of ``c * t^m * exp(a t) * sin(b t + d)`` terms, the
    curves whose shift families are finite-dimensional.
``filtered_noise``
    Seeded random-phase sinusoid synthesis of spectrally filtered white
    noise. The draw depends only on the seed and parameters, not on the
    grid, so the same spec evaluated at different steps samples one
    underlying function. Broadband by construction, hence not
    self-similar at any parsimonious order.

Generation is deterministic: the same spec and seed reproduce the same
bytes, and per-observation seeds are derived arithmetically so
observations may be generated in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from fcmlab.errors import ValidationError
from fcmlab.grids import GridFunction, quadrature_weights, snap_to_index
from fcmlab.model import CoefficientSet, Design, Observation

__all__ = [
    "GeneratorSpec",
    "NoiseSpec",
    "GENERATOR_KINDS",
    "mode_family_values",
    "gen_covariate",
    "filtered_noise_modes",
    "gen_design",
    "center",
]

GENERATOR_KINDS = (
    "sinusoid_rich",
    "orthogonal_counterexample",
    "self_similar",
    "filtered_noise",
)

# Derived seed stride between observations; any fixed odd constant works,
# it only needs to keep per-observation streams distinct and reproducible.
_SEED_STRIDE = 1009


@dataclass(frozen=True)
class GeneratorSpec:
    """Recipe for one covariate curve on ``[0, T]`` with the given step."""

    kind: str
    T: float
    step: float
    seed: int = 0
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in GENERATOR_KINDS:
            raise ValidationError(
                f"unknown covariate kind {self.kind!r}, expected one of {GENERATOR_KINDS}",
                field="kind",
            )
        if float(self.T) <= 0.0 or float(self.step) <= 0.0:
            raise ValidationError("T and step must be positive", field="T")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "params", dict(self.params))


@dataclass(frozen=True)
class NoiseSpec:
    """Additive noise on the response grid: white or AR(1), marginal sd."""

    kind: str = "white"
    sd: float = 0.0
    ar_coefficient: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("white", "ar1"):
            raise ValidationError(f"unknown noise kind {self.kind!r}", field="kind")
        if self.sd < 0.0:
            raise ValidationError("noise sd must be nonnegative", field="sd")
        if self.kind == "ar1" and not -1.0 < self.ar_coefficient < 1.0:
            raise ValidationError(
                "AR(1) coefficient must lie strictly inside (-1, 1)",
                field="ar_coefficient",
            )


def mode_family_values(terms, times: np.ndarray) -> np.ndarray:
    """Evaluate ``sum c * t^m * exp(a t) * sin(b t + d)`` at ``times``.

    ``terms`` is an iterable of mappings with keys ``c, m, a, b, d``
    (missing keys default to ``c=1, m=0, a=0, b=0, d=pi/2``, a plain
    exponential).
    """
    times = np.asarray(times, dtype=float)
    out = np.zeros_like(times)
    for idx, term in enumerate(terms):
        c = float(term.get("c", 1.0))
        m = int(term.get("m", 0))
        a = float(term.get("a", 0.0))
        b = float(term.get("b", 0.0))
        d = float(term.get("d", np.pi / 2.0))
        if m < 0:
            raise ValidationError(f"term {idx}: power m must be nonnegative", field="m")
        out += c * times**m * np.exp(a * times) * np.sin(b * times + d)
    return out


def _grid_times(spec: GeneratorSpec) -> np.ndarray:
    n = snap_to_index(spec.T / spec.step, what=f"domain length {spec.T!r}") + 1
    return spec.step * np.arange(n)


def filtered_noise_modes(spec: GeneratorSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spectral content of a ``filtered_noise`` covariate.

    Returns ``(amplitudes, angular_frequencies, phases)`` such that the
    curve is ``sum_q A_q sin(W_q t + phi_q)``. Exposed so callers can
    build closed-form convolution responses against the exact same
    random function the generator samples.
    """
    if spec.kind != "filtered_noise":
        raise ValidationError(f"spec kind is {spec.kind!r}, not 'filtered_noise'")
    params = spec.params
    n_modes = int(params.get("n_modes", 256))
    max_frequency = float(params.get("max_frequency", 0.5 / spec.step))
    bandwidth = float(params.get("bandwidth", spec.step))
    if n_modes < 1:
        raise ValidationError("n_modes must be positive", field="n_modes")
    if max_frequency <= 0.0:
        raise ValidationError("max_frequency must be positive", field="max_frequency")
    if bandwidth < 0.0:
        raise ValidationError("bandwidth must be nonnegative", field="bandwidth")
    rng = np.random.default_rng(spec.seed)
    freqs = rng.uniform(0.0, max_frequency, n_modes)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_modes)
    gains = rng.standard_normal(n_modes)
    omegas = 2.0 * np.pi * freqs
    envelope = np.exp(-0.5 * (omegas * bandwidth) ** 2)
    amps = gains * envelope * np.sqrt(2.0 / n_modes)
    return amps, omegas, phases


def gen_covariate(spec: GeneratorSpec) -> GridFunction:
    """Generate one covariate curve according to ``spec``."""
    times = _grid_times(spec)
    params = spec.params
    if spec.kind == "sinusoid_rich":
        K = int(params.get("K", 8))
        if K < 1:
            raise ValidationError("K must be positive", field="K")
        amplitudes = params.get("amplitudes")
        if amplitudes is None:
            amplitudes = [2.0**-k for k in range(1, K + 1)]
        amplitudes = [float(a) for a in amplitudes]
        if len(amplitudes) != K:
            raise ValidationError(f"need {K} amplitudes, got {len(amplitudes)}", field="amplitudes")
        values = np.zeros_like(times)
        for k, amp in enumerate(amplitudes, start=1):
            values += amp * np.sin(2.0 * np.pi * k * times)
        return GridFunction(0.0, spec.step, values)
    if spec.kind == "orthogonal_counterexample":
        K = int(params.get("K", 8))
        if K < 1:
            raise ValidationError("K must be positive", field="K")
        rounded = round(spec.T)
        if abs(spec.T - rounded) > 1e-9 * max(1.0, spec.T) or rounded < 1:
            raise ValidationError(
                "the orthogonal counterexample needs an integer-length domain, "
                f"got T={spec.T!r}",
                field="T",
            )
        values = np.zeros_like(times)
        for k in range(1, K + 1):
            values += 2.0 ** (-4.0 * k) * np.sin(4.0 * np.pi * k * times)
        return GridFunction(0.0, spec.step, values)
    if spec.kind == "self_similar":
        terms = params.get("terms")
        if not terms:
            raise ValidationError("self_similar needs a nonempty 'terms' list", field="terms")
        return GridFunction(0.0, spec.step, mode_family_values(terms, times))
    # filtered_noise
    amps, omegas, phases = filtered_noise_modes(spec)
    values = np.sin(times[:, None] * omegas[None, :] + phases[None, :]) @ amps
    return GridFunction(0.0, spec.step, values)


def _noise_curve(noise: NoiseSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if noise.sd == 0.0:
        return np.zeros(n)
    w = rng.standard_normal(n)
    if noise.kind == "white":
        return noise.sd * w
    rho = noise.ar_coefficient
    eps = np.empty(n)
    eps[0] = noise.sd * w[0]
    scale = noise.sd * np.sqrt(1.0 - rho * rho)
    for t in range(1, n):
        eps[t] = rho * eps[t - 1] + scale * w[t]
    return eps


def gen_design(
    cov_specs,
    beta_true: CoefficientSet,
    noise: NoiseSpec,
    n: int,
    seed: int,
) -> tuple[Design, CoefficientSet]:
    """Simulate ``n`` observations from known coefficients.

    Lags are read off the domains of ``beta_true.betas`` and the grid
    step from the covariate specs (all specs must agree on ``T`` and
    ``step``). Covariate ``j`` of observation ``i`` uses the derived
    seed ``spec.seed + 1009 * i``; scalar covariates (when
    ``beta_true.beta0`` has entries beyond the intercept) and the noise
    curve draw from a generator seeded ``seed + i``. Responses carry
    the model prediction on ``[alpha_star, T]``; earlier times hold the
    truncated-window convolution (a burn-in segment that no criterion
    ever integrates over) plus the same intercept, scalar, and noise
    terms.

    Returns the design together with ``beta_true`` unchanged.
    """
    cov_specs = tuple(cov_specs)
    if not cov_specs:
        raise ValidationError("need at least one covariate spec")
    if len(cov_specs) != len(beta_true.betas):
        raise ValidationError(
            f"{len(cov_specs)} covariate specs for {len(beta_true.betas)} lag kernels"
        )
    if n < 1:
        raise ValidationError("need at least one observation", field="n")
    step = cov_specs[0].step
    T = cov_specs[0].T
    for spec in cov_specs[1:]:
        if abs(spec.step - step) > 1e-9 * step or abs(spec.T - T) > 1e-9 * max(1.0, T):
            raise ValidationError("all covariate specs must share T and step")
    d = len(beta_true.beta0) - 1
    lags = tuple(b.domain_length for b in beta_true.betas)
    observations = []
    for i in range(n):
        xs = tuple(
            gen_covariate(replace(spec, seed=spec.seed + _SEED_STRIDE * i))
            for spec in cov_specs
        )
        rng = np.random.default_rng(seed + i)
        z = tuple(float(v) for v in rng.standard_normal(d)) if d else ()
        level = beta_true.beta0[0]
        for zk, bk in zip(z, beta_true.beta0[1:]):
            level += bk * zk
        signal = np.full(len(xs[0]), level)
        for xj, bj in zip(xs, beta_true.betas):
            w = quadrature_weights(len(bj), step) * bj.values
            signal += np.convolve(xj.values, w)[: len(xj)]
        eps = _noise_curve(noise, signal.size, rng)
        y = GridFunction(0.0, step, signal + eps)
        observations.append(Observation(y, xs, z))
    design = Design(tuple(observations), lags, step)
    return design, beta_true


def center(design: Design, drop_scalars: bool = False) -> Design:
    """Center responses and covariates.

    Subtracts from each response its own time average over
    ``[alpha_star, T_i]`` (a scalar, applied to the whole curve) and
    from each covariate the across-observation mean curve, computed
    pointwise over the observations that reach each time. With
    ``drop_scalars`` the scalar covariates are removed instead of being
    carried through. Centering an already centered design is a no-op up
    to rounding.
    """
    k0 = design.alpha_star_index()
    max_len = max(len(obs.y) for obs in design.observations)
    mean_x = [np.zeros(max_len) for _ in range(design.p)]
    counts = np.zeros(max_len)
    for obs in design.observations:
        counts[: len(obs.y)] += 1.0
        for j in range(design.p):
            mean_x[j][: len(obs.y)] += obs.x[j].values
    for j in range(design.p):
        mean_x[j] /= counts
    observations = []
    for obs in design.observations:
        m = len(obs.y)
        w = quadrature_weights(m - k0, design.step)
        y_avg = float(w @ obs.y.values[k0:]) / (obs.domain_length - design.alpha_star)
        y = obs.y.with_values(obs.y.values - y_avg)
        xs = tuple(
            obs.x[j].with_values(obs.x[j].values - mean_x[j][:m]) for j in range(design.p)
        )
        observations.append(Observation(y, xs, () if drop_scalars else obs.z))
    return Design(tuple(observations), design.lags, design.step)
