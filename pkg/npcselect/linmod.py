"""Standardization, Ridge, coordinate-descent Lasso, cross-validation and MAE.

Conventions:
    Lasso minimizes (1/(2n)) * ||y - X b||^2 + lambda * ||b||_1
    Ridge minimizes ||y - X b||^2 + lambda * ||b||^2
"""

import concurrent.futures
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from tqdm import tqdm

from .logger import resolve
from .multiplicity import SelectionResult
from .utils import CONFIG

LASSO_OBJECTIVE = "(1/(2n))*||y - Xb||^2 + lambda*||b||_1"
RIDGE_OBJECTIVE = "||y - Xb||^2 + lambda*||b||^2"


class ConvergenceError(RuntimeError):
    """Coordinate descent hit max_iter before meeting its tolerance."""


@dataclass(frozen=True, eq=False)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray   # zero-variance flags

    def to_dict(self):
        return {'means': self.means.tolist(), 'stds': self.stds.tolist(),
                'constant': [bool(c) for c in self.constant]}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data['means'], dtype=np.float64), np.asarray(data['stds'], dtype=np.float64),
                   np.asarray(data['constant'], dtype=bool))


@dataclass(frozen=True, eq=False)
class ModelFit:
    kind: str
    coefficients: np.ndarray   # [n_vars_used][n_responses]
    intercepts: np.ndarray
    lambdas: Tuple[float, ...]
    variables_used: Tuple[int, ...]
    standardizer: Optional[Standardizer]
    n_vars_total: int

    def __post_init__(self):
        if self.kind not in ('ridge', 'lasso'):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if not np.isfinite(self.coefficients).all():
            raise ValueError("coefficient matrix is not finite")
        if list(self.variables_used) != sorted(self.variables_used):
            raise ValueError("variables_used must be sorted")

    @property
    def n_responses(self):
        return self.intercepts.shape[0]

    def to_dict(self):
        return {
            'kind': self.kind,
            'objective': RIDGE_OBJECTIVE if self.kind == 'ridge' else LASSO_OBJECTIVE,
            'lambdas': list(self.lambdas),
            'variables_used': list(self.variables_used),
            'n_vars_total': self.n_vars_total,
            'intercepts': self.intercepts.tolist(),
            'coefficients': self.coefficients.tolist(),
            'standardizer': None if self.standardizer is None else self.standardizer.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        n_resp = len(data['intercepts'])
        coefficients = np.asarray(data['coefficients'], dtype=np.float64).reshape(-1, n_resp)
        standardizer = data.get('standardizer')
        return cls(
            kind=data['kind'],
            coefficients=coefficients,
            intercepts=np.asarray(data['intercepts'], dtype=np.float64),
            lambdas=tuple(float(x) for x in data['lambdas']),
            variables_used=tuple(int(v) for v in data['variables_used']),
            standardizer=None if standardizer is None else Standardizer.from_dict(standardizer),
            n_vars_total=int(data['n_vars_total']),
        )


@dataclass(frozen=True)
class LassoPath:
    lambdas: Tuple[float, ...]
    supports: Tuple[Tuple[int, ...], ...]
    coefficients: np.ndarray   # [lambda][variable]


def _as_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {X.shape}")
    return X


def fit_standardizer(X) -> Standardizer:
    X = _as_matrix(X)
    if X.shape[0] < 2:
        raise ValueError(f"standardizer needs at least 2 rows, got {X.shape[0]}")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    constant = stds <= 1e-12 * np.maximum(1.0, np.abs(means))
    stds = np.where(constant, 1.0, stds)
    return Standardizer(means, stds, constant)


def apply_standardizer(st: Standardizer, X) -> np.ndarray:
    X = _as_matrix(X)
    if X.shape[1] != st.means.shape[0]:
        raise ValueError(f"standardizer fitted on {st.means.shape[0]} columns, got {X.shape[1]}")
    Z = (X - st.means) / st.stds
    Z[:, st.constant] = 0.0
    return Z


def _ridge_solve(gram, xty, lam):
    """Solve (gram + lam*I) b = xty by Cholesky; raises LinAlgError if not SPD."""
    system = gram + lam * np.eye(gram.shape[0])
    factor = linalg.cho_factor(system, lower=True, check_finite=False)
    return linalg.cho_solve(factor, xty, check_finite=False)


def ridge_fit(X, Y, lam, center=True, variables_used=None, standardizer=None, n_vars_total=None) -> ModelFit:
    """Ridge per response; ``lam`` is a scalar or one value per response."""
    X = _as_matrix(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    if Y.shape[0] != n:
        raise ValueError(f"X has {n} rows but Y has {Y.shape[0]}")
    lams = np.broadcast_to(np.asarray(lam, dtype=np.float64), (Y.shape[1],))
    if (lams < 0).any() or not np.isfinite(lams).all():
        raise ValueError(f"ridge lambda must be finite and >= 0, got {lam}")

    if center:
        x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    else:
        x_mean, y_mean = np.zeros(p), np.zeros(Y.shape[1])
    Xc, Yc = X - x_mean, Y - y_mean

    coefficients = np.zeros((p, Y.shape[1]))
    if p:
        if (lams == 0).any() and np.linalg.matrix_rank(Xc) < p:
            raise ValueError("singular system at lambda=0: X is not full column rank")
        gram, xty = Xc.T @ Xc, Xc.T @ Yc
        for r, lam_r in enumerate(lams):
            try:
                coefficients[:, r] = _ridge_solve(gram, xty[:, r], lam_r)
            except linalg.LinAlgError:
                raise ValueError(f"singular system at lambda={lam_r}") from None
    intercepts = y_mean - x_mean @ coefficients

    if variables_used is None:
        variables_used = tuple(range(p))
    return ModelFit('ridge', coefficients, intercepts, tuple(float(x) for x in lams), tuple(variables_used),
                    standardizer, n_vars_total if n_vars_total is not None else p)


def soft_threshold(z, gamma):
    if np.any(np.asarray(gamma) < 0):
        raise ValueError(f"soft threshold needs gamma >= 0, got {gamma}")
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


def lasso_objective(X, y, beta, lam):
    r = y - X @ beta
    return float(r @ r / (2.0 * len(y)) + lam * np.abs(beta).sum())


def _settle_active(gram, xty, lam, beta, resid_corr):
    """Jump to the exact minimizer over the current sign pattern, if it keeps those signs.

    Returns True when ``beta`` (and ``resid_corr``) were moved.
    """
    active = np.flatnonzero(beta)
    if active.size == 0:
        return False
    signs = np.sign(beta[active])
    try:
        factor = linalg.cho_factor(gram[np.ix_(active, active)], lower=True, check_finite=False)
    except linalg.LinAlgError:
        return False
    solution = linalg.cho_solve(factor, xty[active] - lam * signs, check_finite=False)
    if not np.isfinite(solution).all() or (np.sign(solution) != signs).any():
        return False
    resid_corr -= gram[:, active] @ (solution - beta[active])
    beta[active] = solution
    return True


def _lasso_cd(gram, xty, lam, beta, tol, max_iter, history=None, X=None, y=None, working=None):
    """Cyclic coordinate descent with covariance updates, in place on ``beta``.

    ``gram`` is X'X/n and ``xty`` is X'y/n. Full sweeps cover ``working``
    (default: every coordinate) plus the nonzero ones; once they settle, any
    coordinate left out that breaks the KKT bound is added and sweeps resume.
    """
    resid_corr = xty - gram @ beta
    diag = np.diag(gram)
    usable = diag > 0
    beta[~usable] = 0.0
    if working is None:
        in_set = usable.copy()
    else:
        in_set = np.zeros(len(beta), dtype=bool)
        in_set[np.asarray(working, dtype=np.intp)] = True
        in_set &= usable
        in_set |= beta != 0.0

    def sweep(indices):
        max_change = 0.0
        for j in indices:
            old = beta[j]
            z = resid_corr[j] + diag[j] * old
            if z > lam:
                new = (z - lam) / diag[j]
            elif z < -lam:
                new = (z + lam) / diag[j]
            else:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                resid_corr[:] -= gram[:, j] * delta
                beta[j] = new
                max_change = max(max_change, abs(delta))
        if history is not None:
            history.append(lasso_objective(X, y, beta, lam))
        return max_change

    sweeps = 0
    while sweeps < max_iter:
        # convergence is only declared on a full sweep with no KKT violator outside it
        sweeps += 1
        if sweep(np.flatnonzero(in_set)) <= tol:
            violators = usable & ~in_set & (np.abs(resid_corr) > lam)
            if not violators.any():
                return sweeps
            in_set |= violators
            continue
        _settle_active(gram, xty, lam, beta, resid_corr)
        nonzero = np.flatnonzero(beta != 0.0)
        while sweeps < max_iter:
            sweeps += 1
            if sweep(nonzero) <= tol:
                break
    raise ConvergenceError(f"lasso did not converge in {int(max_iter)} sweeps (lambda={lam})")


def lasso_fit(X, y, lam, tol=CONFIG['lasso']['tol'], max_iter=CONFIG['lasso']['max_iter'],
              beta0=None, return_history=False):
    """Lasso coefficients for standardized ``X`` and centered ``y``."""
    if lam < 0:
        raise ValueError(f"lasso lambda must be >= 0, got {lam}")
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    gram, xty = X.T @ X / n, X.T @ y / n
    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, dtype=np.float64)
    history = [lasso_objective(X, y, beta, lam)] if return_history else None
    _lasso_cd(gram, xty, float(lam), beta, tol, max_iter, history, X, y)
    if return_history:
        return beta, history
    return beta


def lambda_max(X, y):
    X = _as_matrix(X)
    return float(np.abs(X.T @ y).max() / X.shape[0]) if X.shape[1] else 0.0


def default_lambda_grid(X, y, n_lambdas=CONFIG['lasso']['n_lambdas'], ratio=None):
    """Descending log grid from lambda_max; the floor is 1e-4 of it, 1e-2 when n <= p."""
    X = _as_matrix(X)
    if ratio is None:
        wide = X.shape[0] <= X.shape[1]
        ratio = CONFIG['lasso']['lambda_min_ratio_wide' if wide else 'lambda_min_ratio']
    top = lambda_max(X, y)
    if top <= 0:
        return (0.0,)
    return tuple(float(x) for x in np.geomspace(top, ratio * top, n_lambdas))


def explained_deviance(gram, xty, yy, beta):
    """Fraction of ``yy`` (= y'y/n) explained by ``beta``; 1.0 for a constant response."""
    if yy <= 0:
        return 1.0
    rss = yy - 2.0 * float(beta @ xty) + float(beta @ gram @ beta)
    return 1.0 - rss / yy


def lasso_path(X, y, lambdas=None, tol=CONFIG['lasso']['tol'], max_iter=CONFIG['lasso']['max_iter'],
               eps=CONFIG['lasso']['support_eps'], early_stop=False) -> LassoPath:
    """Warm-started fits along a descending grid (default: from lambda_max).

    Each step starts from the sequential strong set: coordinates whose
    residual correlation at the previous solution is below
    ``2*lambda_k - lambda_{k-1}`` sit out until a KKT check calls them in.

    With ``early_stop`` the path ends, after ``min_path_length`` steps, once
    the explained deviance reaches ``max_dev_ratio`` or gains less than
    ``min_dev_change`` of itself from one step to the next. The returned
    ``lambdas`` are the ones actually fitted.
    """
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    if lambdas is None:
        lambdas = default_lambda_grid(X, y)
    lambdas = tuple(sorted((float(x) for x in lambdas), reverse=True))
    n = X.shape[0]
    gram, xty = X.T @ X / n, X.T @ y / n
    yy = float(y @ y) / n
    beta = np.zeros(X.shape[1])
    coefficients = np.empty((len(lambdas), X.shape[1]))
    stop = CONFIG['lasso']

    previous = max(lambdas[0], lambda_max(X, y)) if lambdas else 0.0
    deviance = 0.0
    fitted = len(lambdas)
    for k, lam in enumerate(lambdas):
        resid_corr = xty - gram @ beta
        working = np.flatnonzero((np.abs(resid_corr) >= 2.0 * lam - previous) | (beta != 0.0))
        _lasso_cd(gram, xty, lam, beta, tol, max_iter, working=working)
        coefficients[k] = beta
        previous = lam
        if early_stop:
            current = explained_deviance(gram, xty, yy, beta)
            saturated = current >= stop['max_dev_ratio'] or current - deviance < stop['min_dev_change'] * current
            deviance = current
            if k + 1 >= stop['min_path_length'] and saturated:
                fitted = k + 1
                break
    lambdas, coefficients = lambdas[:fitted], coefficients[:fitted]
    supports = tuple(tuple(int(j) for j in np.flatnonzero(np.abs(row) > eps)) for row in coefficients)
    return LassoPath(lambdas, supports, coefficients)


def _fold_ids(n, k_folds, seed):
    order = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.intp)
    ids[order] = np.arange(n) % k_folds
    return ids


def cv_errors(X, y, grid, k_folds=CONFIG['lasso']['k_folds'], seed=0, model='lasso'):
    """Mean validation MAE across folds for every grid value (grid order kept)."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("lambda grid is empty")
    if k_folds < 2:
        raise ValueError(f"k_folds must be >= 2, got {k_folds}")
    if n < k_folds:
        raise ValueError(f"{n} rows cannot be split into {k_folds} folds")
    if model not in ('lasso', 'ridge'):
        raise ValueError(f"unknown model {model!r}")

    fold_ids = _fold_ids(n, k_folds, seed)
    errors = np.zeros(len(grid))
    for fold in range(k_folds):
        held = fold_ids == fold
        x_mean, y_mean = X[~held].mean(axis=0), y[~held].mean()
        X_tr, y_tr = X[~held] - x_mean, y[~held] - y_mean
        X_va, y_va = X[held] - x_mean, y[held]
        if model == 'lasso':
            path = lasso_path(X_tr, y_tr, grid)
            by_lambda = dict(zip(path.lambdas, path.coefficients))
            coefs = [by_lambda[g] for g in grid]
        else:
            gram, xty = X_tr.T @ X_tr, X_tr.T @ y_tr
            coefs = []
            for g in grid:
                try:
                    coefs.append(_ridge_solve(gram, xty, g) if X.shape[1] else np.zeros(0))
                except linalg.LinAlgError:
                    coefs.append(None)
        for k, beta in enumerate(coefs):
            if beta is None:
                errors[k] = np.inf
            else:
                errors[k] += np.abs(X_va @ beta + y_mean - y_va).mean() / k_folds
    return errors


def cv_select_lambda(X, y, grid, k_folds=CONFIG['lasso']['k_folds'], seed=0, model='lasso') -> float:
    """Grid value with the lowest mean fold MAE; ties go to the larger lambda."""
    errors = cv_errors(X, y, grid, k_folds, seed, model)
    best = errors.min()
    tied = [float(g) for g, e in zip(grid, errors) if e <= best + 1e-12 * max(1.0, abs(best))]
    return max(tied)


def multivariate_lasso_select(X, Y, grid=None, k_folds=CONFIG['lasso']['k_folds'], seed=0,
                              eps=CONFIG['lasso']['support_eps'], logger=None,
                              n_lambdas=CONFIG['lasso']['n_lambdas'], min_ratio=None,
                              progress=False, n_workers=1) -> SelectionResult:
    """Union over responses of the CV-tuned Lasso supports.

    Without an explicit ``grid`` each response gets its own grid of
    ``n_lambdas`` values down from its lambda_max, cut short where the
    full-data path saturates; the folds are then fitted on the surviving
    values. Responses run on a thread pool and land in fixed slots, so the
    result does not depend on ``n_workers``.
    """
    logger = resolve(logger)
    X = _as_matrix(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[1] < 1:
        raise ValueError("need at least one response")
    Xc = X - X.mean(axis=0)

    def select_one(r):
        yc = Y[:, r] - Y[:, r].mean()
        if grid is None:
            path = lasso_path(Xc, yc, default_lambda_grid(Xc, yc, n_lambdas, min_ratio), eps=eps,
                              early_stop=True)
        else:
            path = lasso_path(Xc, yc, grid, eps=eps)
        lam = cv_select_lambda(Xc, yc, path.lambdas, k_folds, seed, 'lasso')
        return lam, set(path.supports[path.lambdas.index(lam)])

    results = [None] * Y.shape[1]
    with tqdm(total=Y.shape[1], desc="Lasso CV", unit="response", disable=not progress) as pbar:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, int(n_workers))) as executor:
            futures = {executor.submit(select_one, r): r for r in range(Y.shape[1])}
            for future in concurrent.futures.as_completed(futures):
                results[futures[future]] = future.result()
                pbar.update(1)

    selected = set()
    for r, (lam, support) in enumerate(results):
        logger.log('DEBUG', f"Lasso response {r + 1}: lambda={lam:.6g}, {len(support)} variables")
        selected |= support
    return SelectionResult(tuple(sorted(selected)), 'lasso', X.shape[1],
                           lambdas=tuple(lam for lam, _ in results))


def ridge_cv_fit(X, Y, variables, grid=CONFIG['ridge']['grid'], k_folds=CONFIG['ridge']['k_folds'],
                 seed=0) -> ModelFit:
    """Standardize the chosen columns, tune lambda per response by CV, then fit Ridge.

    Zero-variance columns are dropped; an empty selection gives the
    intercept-only model.
    """
    X = _as_matrix(X)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    used = sorted(int(v) for v in variables)
    if used:
        keep = ~fit_standardizer(X[:, used]).constant
        used = [v for v, k in zip(used, keep) if k]
    standardizer = fit_standardizer(X[:, used]) if used else Standardizer(np.zeros(0), np.ones(0), np.zeros(0, bool))
    Z = apply_standardizer(standardizer, X[:, used]) if used else np.zeros((X.shape[0], 0))

    lams = [cv_select_lambda(Z, Y[:, r], grid, k_folds, seed, 'ridge') if used else 0.0
            for r in range(Y.shape[1])]
    return ridge_fit(Z, Y, lams, variables_used=tuple(used), standardizer=standardizer,
                     n_vars_total=X.shape[1])


def predict(fit: ModelFit, X_new) -> np.ndarray:
    X_new = _as_matrix(X_new)
    if X_new.shape[1] != fit.n_vars_total:
        raise ValueError(f"model expects {fit.n_vars_total} columns, got {X_new.shape[1]}")
    if not fit.variables_used:
        return np.tile(fit.intercepts, (X_new.shape[0], 1))
    Z = X_new[:, list(fit.variables_used)]
    if fit.standardizer is not None:
        Z = apply_standardizer(fit.standardizer, Z)
    return Z @ fit.coefficients + fit.intercepts


def mae(predictions, truth) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape != truth.shape:
        raise ValueError(f"shape mismatch: predictions {predictions.shape} vs truth {truth.shape}")
    if predictions.size == 0:
        raise ValueError("mae needs at least one entry")
    return float(np.abs(predictions - truth).mean())
