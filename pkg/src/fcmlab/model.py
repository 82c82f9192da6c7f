"""Functional convolution regression model on gridded data.

An observation pairs a response curve ``y`` on ``[0, T]`` with ``p``
covariate curves on the same grid and optional scalar covariates. The
model predicts

    y(t) = b00 + sum_k b0k * z_k + sum_j integral_0^alpha_j b_j(u) x_j(t - u) du

on ``t in [alpha_star, T]`` where ``alpha_star = max_j alpha_j``; earlier
times would need covariate history from before 0 and are excluded from
prediction and from the squared-error criterion. All integrals are
trapezoid sums on the shared grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fcmlab.errors import ConformalityError, GridError
from fcmlab.grids import GridFunction, quadrature_weights, snap_to_index

__all__ = [
    "Observation",
    "Design",
    "CoefficientSet",
    "lag_convolve",
    "predict",
    "sse",
    "check_conformal",
    "zero_coefficients",
]


@dataclass(frozen=True)
class Observation:
    """One response curve, its covariate curves, and scalar covariates.

    All curves must share start 0, the same step, and the same length;
    response and covariates are sampled on one common clock.
    """

    y: GridFunction
    x: tuple[GridFunction, ...]
    z: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        x = tuple(self.x)
        z = tuple(float(v) for v in self.z)
        if not x:
            raise ConformalityError("an observation needs at least one covariate curve")
        tol = 1e-9 * self.y.step
        if abs(self.y.start) > tol:
            raise ConformalityError(f"curves must start at 0, response starts at {self.y.start!r}")
        for j, xj in enumerate(x):
            if not self.y.combinable_with(xj):
                raise ConformalityError(
                    f"covariate {j} is not on the response grid "
                    f"(start={xj.start}, step={xj.step}, len={len(xj)})"
                )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)

    @property
    def domain_length(self) -> float:
        return self.y.domain_length


@dataclass(frozen=True)
class Design:
    """A collection of observations sharing lags and grid step.

    Domain lengths may differ across observations; lags and lengths
    must be integer multiples of the step, and every domain must extend
    at least one step beyond the largest lag so the fitting range
    ``[alpha_star, T_i]`` carries positive measure.
    """

    observations: tuple[Observation, ...]
    lags: tuple[float, ...]
    step: float

    def __post_init__(self) -> None:
        observations = tuple(self.observations)
        lags = tuple(float(a) for a in self.lags)
        step = float(self.step)
        if not observations:
            raise ConformalityError("a design needs at least one observation")
        if not lags:
            raise ConformalityError("a design needs at least one lag")
        if step <= 0.0:
            raise GridError(f"step must be positive, got {step!r}")
        for a in lags:
            if a <= 0.0:
                raise GridError(f"lags must be positive, got {a!r}")
            snap_to_index(a / step, what=f"lag {a!r}")
        p = len(lags)
        d = len(observations[0].z)
        alpha_star = max(lags)
        tol = 1e-9 * step
        for i, obs in enumerate(observations):
            if len(obs.x) != p:
                raise ConformalityError(
                    f"observation {i} has {len(obs.x)} covariate curves, expected {p}"
                )
            if len(obs.z) != d:
                raise ConformalityError(
                    f"observation {i} has {len(obs.z)} scalar covariates, expected {d}"
                )
            if abs(obs.y.step - step) > tol:
                raise ConformalityError(
                    f"observation {i} uses step {obs.y.step!r}, design step is {step!r}"
                )
            snap_to_index(obs.domain_length / step, what=f"domain length of observation {i}")
            if obs.domain_length < alpha_star + step - tol:
                raise ConformalityError(
                    f"observation {i} spans [0, {obs.domain_length!r}], which leaves no "
                    f"room beyond the largest lag {alpha_star!r}"
                )
        object.__setattr__(self, "observations", observations)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "step", step)

    @property
    def n(self) -> int:
        return len(self.observations)

    @property
    def p(self) -> int:
        return len(self.lags)

    @property
    def d(self) -> int:
        return len(self.observations[0].z)

    @property
    def alpha_star(self) -> float:
        return max(self.lags)

    def lag_lengths(self) -> tuple[int, ...]:
        """Number of grid intervals under each lag window."""
        return tuple(snap_to_index(a / self.step) for a in self.lags)

    def alpha_star_index(self) -> int:
        return snap_to_index(self.alpha_star / self.step)


@dataclass(frozen=True)
class CoefficientSet:
    """Model coefficients: intercept, scalar effects, and lag kernels.

    ``beta0[0]`` is the intercept, ``beta0[1:]`` the scalar-covariate
    coefficients. ``betas[j]`` lives on ``[0, alpha_j]`` with the design
    step; ``betas[j].values[0]`` is the instantaneous effect of
    covariate ``j``.
    """

    beta0: tuple[float, ...]
    betas: tuple[GridFunction, ...]

    def __post_init__(self) -> None:
        beta0 = tuple(float(v) for v in self.beta0)
        betas = tuple(self.betas)
        if not beta0:
            raise ConformalityError("beta0 must at least contain the intercept")
        if not betas:
            raise ConformalityError("at least one lag kernel is required")
        for j, b in enumerate(betas):
            if abs(b.start) > 1e-9 * b.step:
                raise ConformalityError(f"lag kernel {j} must start at 0, got {b.start!r}")
        object.__setattr__(self, "beta0", beta0)
        object.__setattr__(self, "betas", betas)

    @property
    def intercept(self) -> float:
        return self.beta0[0]


def check_conformal(design: Design, coef: CoefficientSet) -> None:
    """Raise :class:`ConformalityError` unless ``coef`` fits ``design``."""
    if len(coef.beta0) != design.d + 1:
        raise ConformalityError(
            f"beta0 has {len(coef.beta0)} entries, design needs {design.d + 1}"
        )
    if len(coef.betas) != design.p:
        raise ConformalityError(
            f"{len(coef.betas)} lag kernels for {design.p} functional covariates"
        )
    tol = 1e-9 * design.step
    for j, (b, length) in enumerate(zip(coef.betas, design.lag_lengths())):
        if abs(b.step - design.step) > tol:
            raise ConformalityError(
                f"lag kernel {j} uses step {b.step!r}, design step is {design.step!r}"
            )
        if len(b) != length + 1:
            raise ConformalityError(
                f"lag kernel {j} has {len(b)} samples, lag {design.lags[j]!r} needs {length + 1}"
            )


def zero_coefficients(design: Design) -> CoefficientSet:
    """All-zero coefficients conformal with ``design``."""
    betas = tuple(
        GridFunction(0.0, design.step, np.zeros(length + 1))
        for length in design.lag_lengths()
    )
    return CoefficientSet((0.0,) * (design.d + 1), betas)


def lag_convolve(
    x: GridFunction,
    beta: GridFunction,
    alpha: float,
    t_start: float | None = None,
) -> GridFunction:
    """Trapezoid lag convolution ``c(t) = integral_0^alpha beta(u) x(t - u) du``.

    Parameters
    ----------
    x : GridFunction
        Covariate curve; its domain must be at least ``alpha`` long.
    beta : GridFunction
        Lag kernel on ``[0, alpha]`` with the step of ``x``.
    alpha : float
        Upper integration limit, an integer multiple of the step.
    t_start : float, optional
        First output time, at least ``x.start + alpha`` (the default).
        Callers restricting to a common window pass their global
        ``alpha_star`` here.

    Returns
    -------
    GridFunction
        Values of the convolution on ``[t_start, x.end]``.
    """
    h = x.step
    tol = 1e-9 * h
    if abs(beta.step - h) > tol:
        raise GridError(f"kernel step {beta.step!r} does not match curve step {h!r}")
    L = snap_to_index(float(alpha) / h, what=f"lag {alpha!r}")
    if L < 1:
        raise GridError(f"lag {alpha!r} must span at least one step")
    if len(beta) != L + 1:
        raise GridError(f"kernel has {len(beta)} samples, lag {alpha!r} needs {L + 1}")
    if len(x) - 1 < L:
        raise GridError("covariate domain is shorter than the lag window")
    if t_start is None:
        k0 = L
        start = x.start + L * h
    else:
        k0 = snap_to_index((float(t_start) - x.start) / h, what=f"start time {t_start!r}")
        if k0 < L:
            raise GridError(
                f"output start {t_start!r} reaches before the first full lag window"
            )
        if k0 > len(x) - 1:
            raise GridError(f"output start {t_start!r} lies beyond the curve domain")
        start = float(t_start)
    weighted = quadrature_weights(L + 1, h) * beta.values
    full = np.convolve(x.values, weighted)
    return GridFunction(start, h, full[k0 : len(x)])


def predict(design: Design, coef: CoefficientSet, i: int) -> GridFunction:
    """Model prediction for observation ``i`` on ``[alpha_star, T_i]``."""
    check_conformal(design, coef)
    obs = design.observations[i]
    k0 = design.alpha_star_index()
    n_t = len(obs.y) - k0
    level = coef.beta0[0]
    for zk, bk in zip(obs.z, coef.beta0[1:]):
        level += bk * zk
    out = np.full(n_t, level)
    start = design.alpha_star
    for xj, bj, aj in zip(obs.x, coef.betas, design.lags):
        out += lag_convolve(xj, bj, aj, t_start=start).values
    return GridFunction(start, design.step, out)


def sse(design: Design, coef: CoefficientSet) -> float:
    """Sum over observations of the integrated squared prediction error.

    Each term is the trapezoid integral of ``(y_i - prediction)^2`` over
    ``[alpha_star, T_i]``. Observations are accumulated in index order
    so repeated evaluations are bit-reproducible.
    """
    check_conformal(design, coef)
    k0 = design.alpha_star_index()
    total = 0.0
    for i, obs in enumerate(design.observations):
        resid = obs.y.values[k0:] - predict(design, coef, i).values
        w = quadrature_weights(resid.size, design.step)
        total += float(w @ (resid * resid))
    return total
