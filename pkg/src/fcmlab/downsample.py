"""Down-sampled functional linear model view of a design.

Observing each response only every ``U`` time units turns the
convolution model into a scalar-on-function regression: row ``(i, l)``
pairs the response sample at ``t = alpha_star + l * U`` with the
reversed covariate windows ``x_ij(t - u)`` on the lag grids. Fitting
those rows by least squares (same lag quadrature weights as the full
estimator, optional second-difference penalty) recovers coefficients on
the same grids, and at ``U = step`` reproduces the full estimator up to
the endpoint weights of the time quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from fcmlab.errors import ConformalityError, GridError, NearSingularError
from fcmlab.estimator import (
    DEFAULT_PIVOT_TOL,
    CoefficientIndexMap,
    observation_rows,
    second_difference_operator,
)
from fcmlab.grids import snap_to_index
from fcmlab.model import CoefficientSet, Design

__all__ = ["FlmDataset", "to_flm", "fit_flm", "flm_normal_equations", "flm_row_residuals"]


@dataclass(frozen=True)
class FlmDataset:
    """Rows of the down-sampled functional linear model.

    ``windows[j][r]`` holds covariate ``j`` of row ``r`` reversed onto
    the lag grid ``u = 0, ..., alpha_j``; ``obs_index`` and ``l_index``
    identify the source observation and the sampling index ``l`` such
    that the row time is ``alpha_star + l * U``. ``counts[i]`` is the
    number of rows contributed by observation ``i``.
    """

    U: float
    step: float
    lags: tuple[float, ...]
    alpha_star: float
    y: np.ndarray
    z: np.ndarray
    windows: tuple[np.ndarray, ...]
    obs_index: np.ndarray
    l_index: np.ndarray
    counts: tuple[int, ...]

    @property
    def row_count(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.z.shape[1]

    def index_map(self) -> CoefficientIndexMap:
        return CoefficientIndexMap.from_parts(self.d, self.lags, self.step)


def to_flm(design: Design, U: float) -> FlmDataset:
    """Extract the functional-linear-model rows at sampling interval ``U``.

    ``U`` must be a positive integer multiple of the grid step.
    Observation ``i`` contributes ``floor((T_i - alpha_star) / U) + 1``
    rows at times ``alpha_star + l * U``, all inside ``[alpha_star,
    T_i]``.
    """
    stride = snap_to_index(float(U) / design.step, what=f"sampling interval {U!r}")
    if stride < 1:
        raise GridError(f"sampling interval {U!r} must be at least one grid step")
    k0 = design.alpha_star_index()
    ys, zs, obs_ids, l_ids = [], [], [], []
    window_parts: list[list[np.ndarray]] = [[] for _ in range(design.p)]
    counts = []
    imap = CoefficientIndexMap.from_design(design)
    for i, obs in enumerate(design.observations):
        n_rows = (len(obs.y) - 1 - k0) // stride + 1
        counts.append(n_rows)
        t_idx = k0 + stride * np.arange(n_rows)
        ys.append(obs.y.values[t_idx])
        zs.append(np.tile(np.asarray(obs.z, dtype=float), (n_rows, 1)))
        obs_ids.append(np.full(n_rows, i, dtype=int))
        l_ids.append(np.arange(n_rows, dtype=int))
        for j in range(design.p):
            L = imap.sizes[j] - 1
            idx = t_idx[:, None] - np.arange(L + 1)[None, :]
            window_parts[j].append(obs.x[j].values[idx])
    return FlmDataset(
        U=float(U),
        step=design.step,
        lags=design.lags,
        alpha_star=design.alpha_star,
        y=np.concatenate(ys),
        z=np.concatenate(zs, axis=0),
        windows=tuple(np.concatenate(parts, axis=0) for parts in window_parts),
        obs_index=np.concatenate(obs_ids),
        l_index=np.concatenate(l_ids),
        counts=tuple(counts),
    )


def _design_matrix(data: FlmDataset) -> tuple[np.ndarray, CoefficientIndexMap]:
    imap = data.index_map()
    A = np.zeros((data.row_count, imap.size))
    A[:, 0] = 1.0
    if data.d:
        A[:, 1 : 1 + data.d] = data.z
    w = imap.lag_weights()
    for j in range(len(data.lags)):
        sl = imap.covariate_slice(j)
        A[:, sl] = data.windows[j] * w[sl][None, :]
    return A, imap


def flm_normal_equations(data: FlmDataset) -> tuple[np.ndarray, np.ndarray]:
    """Unweighted normal equations ``(A'A, A'y)`` of the row regression."""
    A, _ = _design_matrix(data)
    return A.T @ A, A.T @ data.y


def flm_row_residuals(data: FlmDataset, coef: CoefficientSet) -> np.ndarray:
    """Row-wise residuals ``y - prediction`` at the given coefficients."""
    A, imap = _design_matrix(data)
    return data.y - A @ imap.pack(coef)


def fit_flm(
    data: FlmDataset,
    lam: float = 0.0,
    pivot_tol: float = DEFAULT_PIVOT_TOL,
) -> CoefficientSet:
    """Least-squares fit of the down-sampled rows.

    Minimizes the sum of squared row residuals plus ``lam`` times the
    squared second differences of each lag kernel. Without a penalty a
    rank-deficient normal matrix raises :class:`NearSingularError`;
    with ``lam > 0`` the penalty usually restores uniqueness.
    """
    lam = float(lam)
    if lam < 0.0:
        raise ValueError(f"penalty weight must be nonnegative, got {lam!r}")
    A, imap = _design_matrix(data)
    if data.row_count < 1:
        raise ConformalityError("no rows to fit")
    G = A.T @ A
    F = A.T @ data.y
    if lam == 0.0:
        evals = scipy.linalg.eigh(G, eigvals_only=True)
        min_eig, max_eig = float(evals[0]), float(evals[-1])
        if max_eig <= 0.0 or min_eig <= pivot_tol * max_eig:
            raise NearSingularError(min_eig, max_eig)
        c = scipy.linalg.solve(G, F, assume_a="pos")
    else:
        D = second_difference_operator(imap)
        c = scipy.linalg.solve(G + lam * (D.T @ D), F, assume_a="sym")
    return imap.unpack(c)
