"""Multi-output ridge regression with deterministic k-fold cross-validation.

Inputs are z-scored column-wise and targets centred before solving::

    primal (d <= n):  W = (Xs^T Xs + lam I)^-1 Xs^T Yc
    dual   (d >  n):  W = Xs^T (Xs Xs^T + lam I)^-1 Yc

Both systems are solved by Cholesky factorisation. Prediction is
``weights @ ((x - input_mean) / input_scale) + bias`` with ``bias`` equal to
the training target mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

SCALE_FLOOR = 1e-12
DEFAULT_LAMBDA_GRID = tuple(10.0**k for k in range(-3, 6))
DEFAULT_FOLDS = 5

# reciprocal condition number below which a factorised system counts as singular
_RCOND_LIMIT = 1e-14


class SingularSystemError(np.linalg.LinAlgError):
    """The regularised normal equations could not be factorised (typically lam = 0)."""


@dataclass(frozen=True)
class CvReport:
    lambda_grid: tuple[float, ...]
    fold_mse: np.ndarray  # len(grid) x folds; inf where the solve was singular
    selected_lambda: float
    folds: int
    seed: int

    @property
    def mean_mse(self) -> np.ndarray:
        return self.fold_mse.mean(axis=1)


@dataclass(frozen=True)
class RegressionModel:
    weights: np.ndarray  # k x d, acting on standardised inputs
    bias: np.ndarray  # k
    lam: float
    input_mean: np.ndarray
    input_scale: np.ndarray
    target_mean: np.ndarray
    cv: CvReport | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("weights", "bias", "input_mean", "input_scale", "target_mean"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k, d = self.weights.shape
        if self.bias.shape != (k,) or self.target_mean.shape != (k,):
            raise ValueError("bias/target_mean length must equal the number of outputs")
        if self.input_mean.shape != (d,) or self.input_scale.shape != (d,):
            raise ValueError("input_mean/input_scale length must equal the number of inputs")
        if not np.all(self.input_scale > 0):
            raise ValueError("input_scale must be strictly positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def n_inputs(self) -> int:
        return self.weights.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights.shape[0]

    def predict(self, x) -> np.ndarray:
        """Predict for one input vector (returns k values) or a batch of rows (n x k)."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_inputs or x.ndim not in (1, 2):
            raise ValueError(f"expected input of length {self.n_inputs}, got shape {x.shape}")
        z = (x - self.input_mean) / self.input_scale
        return z @ self.weights.T + self.bias


def predict(model: RegressionModel, x) -> np.ndarray:
    return model.predict(x)


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("mse: empty input")
    return float(np.mean((a - b) ** 2))


# --------------------------------------------------------------------------
# solver


def _check_xy(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError(f"X {X.shape} and Y {Y.shape} must be 2-D with matching rows")
    if X.shape[0] == 0:
        raise ValueError("cannot fit on zero rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("X and Y must be finite")
    return X, Y


class _Normalised:
    """Standardised design, centred targets, and the Gram matrix of the chosen form."""

    def __init__(self, X: np.ndarray, Y: np.ndarray, solver: str = "auto"):
        n, d = X.shape
        self.input_mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.active = std > SCALE_FLOOR
        self.input_scale = np.maximum(std, SCALE_FLOOR)
        self.target_mean = Y.mean(axis=0)
        Xs = (X[:, self.active] - self.input_mean[self.active]) / self.input_scale[self.active]
        self.Xs = Xs
        self.Yc = Y - self.target_mean
        if solver == "auto":
            solver = "primal" if d <= n else "dual"
        if solver not in ("primal", "dual"):
            raise ValueError(f"unknown solver {solver!r}")
        self.solver = solver
        self.d = d
        if solver == "primal":
            self.gram = Xs.T @ Xs
            self.rhs = Xs.T @ self.Yc
        else:
            self.gram = Xs @ Xs.T
            self.rhs = self.Yc

    def weights(self, lam: float) -> np.ndarray:
        """k x d weight matrix in standardised coordinates."""
        k = self.Yc.shape[1]
        W = np.zeros((k, self.d))
        if self.Xs.shape[1] == 0:
            return W
        system = self.gram + lam * np.eye(self.gram.shape[0])
        try:
            factor = linalg.cho_factor(system, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"{self.solver} system not positive definite at lambda={lam}") from exc
        diag = np.abs(np.diag(factor[0]))
        if diag.min() ** 2 < _RCOND_LIMIT * diag.max() ** 2 * system.shape[0]:
            raise SingularSystemError(f"{self.solver} system numerically singular at lambda={lam}")
        sol = linalg.cho_solve(factor, self.rhs, check_finite=False)
        if self.solver == "dual":
            sol = self.Xs.T @ sol
        W[:, self.active] = sol.T
        return W

    def model(self, lam: float, cv: CvReport | None = None) -> RegressionModel:
        return RegressionModel(
            weights=self.weights(lam),
            bias=self.target_mean,
            lam=float(lam),
            input_mean=self.input_mean,
            input_scale=self.input_scale,
            target_mean=self.target_mean,
            cv=cv,
        )


def fit_ridge(X, Y, lam: float, solver: str = "auto") -> RegressionModel:
    """Fit ridge regression; ``solver`` is "auto", "primal" or "dual"."""
    if not lam >= 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    X, Y = _check_xy(X, Y)
    return _Normalised(X, Y, solver).model(lam)


# --------------------------------------------------------------------------
# cross-validation


def fold_assignment(n: int, folds: int, seed: int, ids: Sequence[str] | None = None) -> np.ndarray:
    """Fold index per row: sort rows by id, permute with ``seed``, deal round-robin."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if n < folds:
        raise ValueError(f"cannot split {n} rows into {folds} folds")
    order = np.arange(n) if ids is None else np.array(sorted(range(n), key=lambda i: ids[i]))
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order[perm]] = np.arange(n) % folds
    return assignment


def kfold_cv(
    X,
    Y,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    ids: Sequence[str] | None = None,
) -> CvReport:
    X, Y = _check_xy(X, Y)
    grid = tuple(float(g) for g in lambda_grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(not g >= 0 for g in grid):
        raise ValueError("lambda grid values must be non-negative")
    n = X.shape[0]
    if ids is not None and len(ids) != n:
        raise ValueError("ids length must match the number of rows")
    assignment = fold_assignment(n, folds, seed, ids)
    fold_mse = np.full((len(grid), folds), np.inf)
    for f in range(folds):
        held = assignment == f
        prob = _Normalised(X[~held], Y[~held])
        for g, lam in enumerate(grid):
            try:
                pred = prob.model(lam).predict(X[held])
            except SingularSystemError:
                continue
            fold_mse[g, f] = mse(pred, Y[held])
    mean = fold_mse.mean(axis=1)
    if not np.any(np.isfinite(mean)):
        raise SingularSystemError("every lambda in the grid produced a singular system")
    best = mean.min()
    # ties go to the larger lambda
    selected = max(lam for lam, m in zip(grid, mean) if m == best)
    return CvReport(grid, fold_mse, selected, folds, seed)


def fit_ridge_cv(
    X,
    Y,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    ids: Sequence[str] | None = None,
) -> RegressionModel:
    """Select lambda by :func:`kfold_cv`, then refit on all rows."""
    report = kfold_cv(X, Y, lambda_grid, folds, seed, ids)
    X, Y = _check_xy(X, Y)
    return _Normalised(X, Y).model(report.selected_lambda, cv=report)
