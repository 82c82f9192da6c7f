"""Normal equations and solvers for the convolution regression model.

The squared-error criterion is discretized first (trapezoid weights in
both the time and the lag directions) and minimized exactly: the
assembled system ``G c = F`` is the literal stationarity condition of
the discrete criterion, so ``2 (G c - F)`` matches finite differences
of :func:`fcmlab.model.sse` to rounding error.

The coefficient vector ``c`` stacks the intercept, the scalar-covariate
coefficients, and one block of lag-kernel samples per functional
covariate; :class:`CoefficientIndexMap` owns that layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from fcmlab import model as model_mod
from fcmlab.errors import ConformalityError, GridError, NearSingularError
from fcmlab.grids import GridFunction, quadrature_weights
from fcmlab.model import CoefficientSet, Design

__all__ = [
    "CoefficientIndexMap",
    "GramSystem",
    "FitResult",
    "observation_rows",
    "assemble",
    "solve_direct",
    "solve_truncated_svd",
    "solve_penalized",
    "second_difference_operator",
    "fit",
    "DEFAULT_PIVOT_TOL",
    "DEFAULT_SVD_RTOL",
]

DEFAULT_PIVOT_TOL = 1e-12
DEFAULT_SVD_RTOL = 1e-10


@dataclass(frozen=True)
class CoefficientIndexMap:
    """Layout of the stacked coefficient vector.

    Row 0 is the intercept, rows ``1 .. d`` the scalar coefficients,
    followed by one contiguous block of ``L_j + 1`` kernel samples per
    functional covariate.
    """

    d: int
    lags: tuple[float, ...]
    step: float
    sizes: tuple[int, ...]
    offsets: tuple[int, ...]
    size: int

    @classmethod
    def from_parts(cls, d: int, lags: tuple[float, ...], step: float) -> "CoefficientIndexMap":
        from fcmlab.grids import snap_to_index

        sizes = tuple(snap_to_index(a / step, what=f"lag {a!r}") + 1 for a in lags)
        offsets = []
        pos = d + 1
        for s in sizes:
            offsets.append(pos)
            pos += s
        return cls(int(d), tuple(float(a) for a in lags), float(step), sizes, tuple(offsets), pos)

    @classmethod
    def from_design(cls, design: Design) -> "CoefficientIndexMap":
        return cls.from_parts(design.d, design.lags, design.step)

    def covariate_slice(self, j: int) -> slice:
        return slice(self.offsets[j], self.offsets[j] + self.sizes[j])

    @property
    def covariate_block(self) -> slice:
        """All functional-covariate rows (everything past intercept and scalars)."""
        return slice(self.d + 1, self.size)

    def lag_weights(self) -> np.ndarray:
        """Per-entry quadrature weights: 1 for intercept/scalars, trapezoid in u."""
        w = np.ones(self.size)
        for j, sl in enumerate(self.covariate_slice(j) for j in range(len(self.lags))):
            w[sl] = quadrature_weights(self.sizes[j], self.step)
        return w

    def pack(self, coef: CoefficientSet) -> np.ndarray:
        c = np.empty(self.size)
        if len(coef.beta0) != self.d + 1 or len(coef.betas) != len(self.lags):
            raise ConformalityError("coefficient set does not match the index map")
        c[: self.d + 1] = coef.beta0
        for j, b in enumerate(coef.betas):
            if len(b) != self.sizes[j]:
                raise ConformalityError(
                    f"lag kernel {j} has {len(b)} samples, expected {self.sizes[j]}"
                )
            c[self.covariate_slice(j)] = b.values
        return c

    def unpack(self, c: np.ndarray) -> CoefficientSet:
        c = np.asarray(c, dtype=float)
        if c.shape != (self.size,):
            raise ConformalityError(f"coefficient vector has shape {c.shape}, expected ({self.size},)")
        beta0 = tuple(float(v) for v in c[: self.d + 1])
        betas = tuple(
            GridFunction(0.0, self.step, c[self.covariate_slice(j)])
            for j in range(len(self.lags))
        )
        return CoefficientSet(beta0, betas)


@dataclass(frozen=True)
class GramSystem:
    """Assembled normal equations ``G c = F`` plus layout and weights.

    ``weights`` holds the discrete L2 weight of each coefficient entry
    (1 for intercept and scalars, trapezoid weights along each lag
    grid); rank decisions and minimum-norm conventions are taken in
    this weighted geometry.
    """

    G: np.ndarray
    F: np.ndarray
    index_map: CoefficientIndexMap
    weights: np.ndarray

    def __post_init__(self) -> None:
        G = np.asarray(self.G, dtype=float)
        F = np.asarray(self.F, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        m = self.index_map.size
        if G.shape != (m, m) or F.shape != (m,) or w.shape != (m,):
            raise ConformalityError("Gram system pieces disagree with the index map size")
        for a in (G, F, w):
            a.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.index_map.size


def observation_rows(design: Design, i: int, t_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Regression rows of observation ``i`` at the given grid indices.

    Row layout matches :class:`CoefficientIndexMap`: a 1 for the
    intercept, the scalar covariates, then each lag window of the
    covariate curves reversed and scaled by the lag quadrature weights,
    so that ``row @ c`` is exactly the model prediction at that time.
    Returns the matrix and the matching response samples.
    """
    imap = CoefficientIndexMap.from_design(design)
    obs = design.observations[i]
    t_indices = np.asarray(t_indices, dtype=int)
    min_lag_steps = max(s - 1 for s in imap.sizes)
    if t_indices.size and (t_indices.min() < min_lag_steps or t_indices.max() >= len(obs.y)):
        raise GridError("time indices leave the valid prediction range")
    A = np.zeros((t_indices.size, imap.size))
    A[:, 0] = 1.0
    for k, zk in enumerate(obs.z):
        A[:, 1 + k] = zk
    for j in range(design.p):
        w = quadrature_weights(imap.sizes[j], design.step)
        xv = obs.x[j].values
        sl = imap.covariate_slice(j)
        for l in range(imap.sizes[j]):
            A[:, sl.start + l] = w[l] * xv[t_indices - l]
    return A, obs.y.values[t_indices]


def assemble(design: Design) -> GramSystem:
    """Assemble the normal equations of the discrete criterion.

    ``G`` and ``F`` accumulate ``A_i' W_i A_i`` and ``A_i' W_i y_i``
    over observations in index order, where ``A_i`` holds the
    regression rows on ``[alpha_star, T_i]`` and ``W_i`` the trapezoid
    weights in time. The covariate block of ``G`` therefore discretizes
    the Gram operator of the design with quadrature weights on both lag
    axes.
    """
    imap = CoefficientIndexMap.from_design(design)
    k0 = design.alpha_star_index()
    G = np.zeros((imap.size, imap.size))
    F = np.zeros(imap.size)
    for i, obs in enumerate(design.observations):
        t_idx = np.arange(k0, len(obs.y))
        A, y = observation_rows(design, i, t_idx)
        Wt = quadrature_weights(t_idx.size, design.step)
        AW = A * Wt[:, None]
        G += A.T @ AW
        F += AW.T @ y
    return GramSystem(G, F, imap, imap.lag_weights())


def _gram_extremes(G: np.ndarray) -> tuple[float, float]:
    evals = scipy.linalg.eigh(G, eigvals_only=True)
    return float(evals[0]), float(evals[-1])


def solve_direct(system: GramSystem, pivot_tol: float = DEFAULT_PIVOT_TOL) -> CoefficientSet:
    """Solve ``G c = F`` by a symmetric positive-definite factorization.

    Raises :class:`NearSingularError` carrying the extreme eigenvalues
    when the smallest eigenvalue of ``G`` does not clear ``pivot_tol``
    times the largest; rank-deficient systems should go through
    :func:`solve_truncated_svd` or :func:`solve_penalized` instead.
    """
    min_eig, max_eig = _gram_extremes(system.G)
    if max_eig <= 0.0 or min_eig <= pivot_tol * max_eig:
        raise NearSingularError(min_eig, max_eig)
    c = scipy.linalg.solve(system.G, system.F, assume_a="pos")
    return system.index_map.unpack(c)


def solve_truncated_svd(
    system: GramSystem, rel_tol: float = DEFAULT_SVD_RTOL
) -> tuple[CoefficientSet, int]:
    """Minimum-norm solution through a truncated eigendecomposition.

    The system is rescaled by the square roots of the entry weights so
    that Euclidean geometry matches the discrete L2 geometry, the
    spectrum is truncated at ``rel_tol`` times the largest eigenvalue,
    and the pseudoinverse solution is mapped back. The result has no
    component along the discarded directions in the weighted inner
    product. Returns the solution and the number of retained modes.
    """
    if not 0.0 < rel_tol <= 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1], got {rel_tol!r}")
    S = np.sqrt(system.weights)
    Gt = system.G / np.outer(S, S)
    Ft = system.F / S
    evals, vecs = scipy.linalg.eigh(Gt)
    max_eig = float(evals[-1])
    if max_eig <= 0.0:
        return system.index_map.unpack(np.zeros(system.size)), 0
    keep = evals >= rel_tol * max_eig
    rank = int(np.count_nonzero(keep))
    V = vecs[:, keep]
    ct = V @ ((V.T @ Ft) / evals[keep])
    return system.index_map.unpack(ct / S), rank


def second_difference_operator(index_map: CoefficientIndexMap) -> np.ndarray:
    """Stacked second-difference matrix acting on the lag-kernel blocks.

    Intercept and scalar columns are untouched; each covariate block of
    size ``n`` contributes ``n - 2`` rows of the ``[1, -2, 1]`` stencil
    (blocks shorter than 3 samples contribute nothing).
    """
    rows = sum(max(s - 2, 0) for s in index_map.sizes)
    D = np.zeros((rows, index_map.size))
    r = 0
    for j, s in enumerate(index_map.sizes):
        if s < 3:
            continue
        block = np.diff(np.eye(s), n=2, axis=0)
        sl = index_map.covariate_slice(j)
        D[r : r + s - 2, sl] = block
        r += s - 2
    return D


def solve_penalized(system: GramSystem, lam: float) -> CoefficientSet:
    """Solve ``(G + lam * D'D) c = F`` with a second-difference penalty.

    ``lam`` must be nonnegative; ``lam = 0`` reproduces the plain
    normal equations. The penalty acts on each lag-kernel block only,
    leaving intercept and scalar coefficients unpenalized, so large
    ``lam`` drives the kernels toward straight lines.
    """
    lam = float(lam)
    if lam < 0.0:
        raise ValueError(f"penalty weight must be nonnegative, got {lam!r}")
    D = second_difference_operator(system.index_map)
    A = system.G + lam * (D.T @ D)
    c = scipy.linalg.solve(A, system.F, assume_a="sym")
    return system.index_map.unpack(c)


@dataclass(frozen=True)
class FitResult:
    """A fitted coefficient set plus solve diagnostics.

    ``solver_used`` is one of ``"direct"``, ``"truncated_svd"``,
    ``"ridge"``; ``truncation_rank`` is the retained mode count for the
    truncated solver and None otherwise. ``gram_condition`` is the
    eigenvalue ratio of the full normal matrix (infinite when the
    smallest eigenvalue is nonpositive).
    """

    coef: CoefficientSet
    sse_value: float
    gram_min_eigenvalue: float
    gram_max_eigenvalue: float
    gram_condition: float
    solver_used: str
    truncation_rank: int | None


def fit(
    design: Design,
    solver: str = "direct",
    lam: float = 0.0,
    pivot_tol: float = DEFAULT_PIVOT_TOL,
    svd_rel_tol: float = DEFAULT_SVD_RTOL,
) -> FitResult:
    """Assemble the normal equations and solve them with one solver.

    ``solver`` is ``"direct"``, ``"truncated_svd"``, or ``"ridge"``
    (``lam`` applies to the ridge path only).
    """
    system = assemble(design)
    min_eig, max_eig = _gram_extremes(system.G)
    cond = float("inf") if min_eig <= 0.0 else max_eig / min_eig
    truncation_rank: int | None = None
    if solver == "direct":
        if max_eig <= 0.0 or min_eig <= pivot_tol * max_eig:
            raise NearSingularError(min_eig, max_eig)
        c = scipy.linalg.solve(system.G, system.F, assume_a="pos")
        coef = system.index_map.unpack(c)
    elif solver == "truncated_svd":
        coef, truncation_rank = solve_truncated_svd(system, rel_tol=svd_rel_tol)
    elif solver == "ridge":
        coef = solve_penalized(system, lam)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return FitResult(
        coef=coef,
        sse_value=model_mod.sse(design, coef),
        gram_min_eigenvalue=min_eig,
        gram_max_eigenvalue=max_eig,
        gram_condition=cond,
        solver_used=solver,
        truncation_rank=truncation_rank,
    )
