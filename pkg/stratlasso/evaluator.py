import os
import time
import math
import numpy as np
import pandas as pd
from dataclasses import dataclass, asdict
from stratlasso.dataset import ParameterError, get_rng
from stratlasso.solver import SolverOptions, MethodFit, fit_method, build_method_design, lambda_grid
from stratlasso.theory import SupportSets

"""[StratLasso.2026.10.19]"""

TAU0_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
SUPPORT_TOL = 1e-8

'''fold purposes of stratified_folds()'''
FOLD_INNER = 0
FOLD_OUTER = 1

METRICS_HEADER = ('cell', 'n_k', 'p', 'd_H', 'delta_mode', 'replicate', 'seed', 'method',
                  'accuracy_T', 'accuracy_S', 'accuracy_T_full', 'accuracy_S_full',
                  'prediction_error', 'log_prediction_error', 'lambda1', 'tau0', 'converged', 'errors')


"""metrics"""


def support_estimate(dec, tol=SUPPORT_TOL):
    S = frozenset(int(j) for j in np.flatnonzero(np.abs(dec.mu) > tol))
    T = frozenset((int(k), int(j)) for k, j in np.argwhere(np.abs(dec.gamma) > tol))
    return SupportSets(S, T)


def support_accuracy(est, truth, universe, K):
    """fraction of [K] x universe pairs (for T) and of universe (for S) classified alike"""
    universe = sorted(int(j) for j in universe)
    if len(universe) == 0:
        return 1.0, 1.0
    miss_t = sum(((k, j) in est.T) != ((k, j) in truth.T) for k in range(K) for j in universe)
    miss_s = sum((j in est.S) != (j in truth.S) for j in universe)
    return 1 - miss_t / (K * len(universe)), 1 - miss_s / len(universe)


def prediction_error(ds, beta_true, beta_hat):
    """sum_k ||X^(k) (beta*_k - beta_hat_k)||^2 / n"""
    beta_true = np.asarray(beta_true, dtype=np.float64)
    beta_hat = np.asarray(beta_hat, dtype=np.float64)
    if beta_true.shape != (ds.K, ds.p) or beta_hat.shape != (ds.K, ds.p):
        raise ParameterError(f'| prediction_error(): shapes {beta_true.shape}, {beta_hat.shape} != ({ds.K}, {ds.p})')
    diff = beta_true - beta_hat
    return sum(float(((x @ diff[k]) ** 2).sum()) for k, (x, _) in enumerate(ds.strata)) / ds.n


def log_prediction_error(error):
    return math.log(error) if error > 0 else -math.inf


@dataclass
class MetricsRecord:
    cell: int
    n_k: int
    p: int
    d_H: int
    delta_mode: str
    replicate: int
    seed: int
    method: str
    accuracy_T: float = math.nan
    accuracy_S: float = math.nan
    accuracy_T_full: float = math.nan
    accuracy_S_full: float = math.nan
    prediction_error: float = math.nan
    log_prediction_error: float = math.nan
    lambda1: float = math.nan
    tau0: float = math.nan
    converged: bool = False
    errors: str = ''
    method_id: int = 0  # position in the run's method list, sort key only

    def to_row(self):
        data = asdict(self)
        return [data[key] for key in METRICS_HEADER]


"""cross-validation"""


def stratified_folds(ds, folds, seed, purpose=FOLD_INNER):
    """fold id of every observation, drawn within each stratum"""
    if folds < 2:
        raise ParameterError(f'| stratified_folds(): need folds >= 2, got {folds}')
    if (ds.n_k < folds).any():
        k = int(np.argmin(ds.n_k))
        raise ParameterError(f'| stratified_folds(): stratum {ds.stratum_labels[k]!r} has {ds.n_k[k]} '
                             f'observations for {folds} folds')
    fold_ids = list()
    for k, n_k in enumerate(ds.n_k):
        order = get_rng(seed, purpose, k).permutation(n_k)
        ids = np.empty(n_k, dtype=np.int64)
        ids[order] = np.arange(n_k) % folds
        fold_ids.append(ids)
    return fold_ids


def split_fold(ds, fold_ids, fold):
    train = ds.take([np.flatnonzero(ids != fold) for ids in fold_ids])
    test = ds.take([np.flatnonzero(ids == fold) for ids in fold_ids])
    return train, test


def heldout_loss(ds, method_fit):
    """mean squared error (Gaussian) or mean negative log-likelihood (binary) on `ds`"""
    beta = method_fit.decomposition.beta
    total = 0.0
    for k, (x, y) in enumerate(ds.strata):
        eta = x @ beta[k]
        if ds.response_kind == 'binary':
            eta = eta + method_fit.result.intercept
            total += float((np.logaddexp(0.0, eta) - y * eta).sum())
        else:
            total += float(((y - eta) ** 2).sum())
    return total / ds.n


def default_lambda_grid(ds, method, tau0=1.0, refs=None, options=None):
    options = SolverOptions() if options is None else options
    if method != 'fused':
        return lambda_grid(build_method_design(ds, method, tau0, refs), options.lambda_num, options.lambda_ratio)
    lam_max = max(float(np.abs(x.T @ y).max()) for x, y in ds.strata) / ds.n  # beta = 0 is optimal beyond this
    ratio = options.lambda_ratio
    if ratio is None:
        ratio = 1e-2 if ds.n < ds.K * ds.p else 1e-3
    lam_max = lam_max if lam_max > 0 else 1.0
    return np.geomspace(lam_max, lam_max * ratio, options.lambda_num)


@dataclass
class CVResult:
    method: str
    tau0_grid: np.ndarray  # n_tau
    lambda_grids: np.ndarray  # n_tau x n_lambda
    mean: np.ndarray  # n_tau x n_lambda, mean held-out loss
    se: np.ndarray  # n_tau x n_lambda, standard error over folds
    best: tuple  # (lambda1, tau0)
    best_index: tuple  # (tau index, lambda index)
    seed: int
    folds: int
    n_unconverged: int = 0
    fit: MethodFit = None  # refit on all data at the best pair

    @property
    def grid(self):
        return [(float(lam), float(tau0)) for tau0, lams in zip(self.tau0_grid, self.lambda_grids) for lam in lams]

    def to_dict(self):
        return {'method': self.method, 'seed': self.seed, 'folds': self.folds,
                'best': {'lambda1': self.best[0], 'tau0': self.best[1]},
                'n_unconverged': self.n_unconverged,
                'grid': [{'lambda1': lam, 'tau0': tau0, 'mean_cv_loss': float(m), 'se': float(s)}
                         for (lam, tau0), m, s in zip(self.grid, self.mean.ravel(), self.se.ravel())]}


def select_one_se(tau0_grid, lambda_grids, mean, se):
    """among pairs within one standard error of the minimum: the largest lambda1, then tau0 nearest 1"""
    t_min, i_min = np.unravel_index(np.argmin(mean), mean.shape)
    threshold = mean[t_min, i_min] + se[t_min, i_min]
    candidates = [(t, i) for t, i in np.argwhere(mean <= threshold)]
    t, i = min(candidates, key=lambda ti: (-lambda_grids[ti[0], ti[1]],
                                           abs(math.log(tau0_grid[ti[0]])), tau0_grid[ti[0]]))
    return int(t), int(i)


def cross_validate(ds, method='proposal', lambdas=None, tau0_grid=None, folds=5, seed=0, refs=None,
                   options=None, if_refit=True, if_print=False):
    """K-fold CV of (lambda1, tau0), folds drawn within each stratum; warm starts along each
    (fold, tau0) path."""
    options = SolverOptions() if options is None else options
    if tau0_grid is None:
        tau0_grid = TAU0_GRID if method in {'proposal', 'basic', 'fused'} else (1.0,)
    tau0_grid = np.asarray(tau0_grid, dtype=np.float64).ravel()
    fold_ids = stratified_folds(ds, folds, seed)
    splits = [split_fold(ds, fold_ids, f) for f in range(folds)]

    if lambdas is None:
        lambda_grids = np.array([default_lambda_grid(ds, method, tau0, refs, options) for tau0 in tau0_grid])
    else:
        grid = np.asarray(lambdas, dtype=np.float64).ravel()
        if grid.size > 1 and not (np.diff(grid) < 0).all():
            raise ParameterError('| cross_validate(): the lambda grid must be strictly decreasing')
        lambda_grids = np.tile(grid, (tau0_grid.size, 1))

    losses = np.empty(lambda_grids.shape + (folds,))
    n_unconverged = 0
    for t, tau0 in enumerate(tau0_grid):
        for f, (train, test) in enumerate(splits):
            warm = None
            for i, lambda1 in enumerate(lambda_grids[t]):
                warm = fit_method(train, method, lambda1, tau0, refs, options, warm)
                losses[t, i, f] = heldout_loss(test, warm)
                n_unconverged += not warm.converged

    mean = losses.mean(axis=2)
    se = losses.std(axis=2, ddof=1) / np.sqrt(folds)
    t, i = select_one_se(tau0_grid, lambda_grids, mean, se)
    best = (float(lambda_grids[t, i]), float(tau0_grid[t]))
    if if_print:
        print(f"| cross_validate(): {method} best lambda1={best[0]:.6g} tau0={best[1]:g} "
              f"cv_loss={mean[t, i]:.6g}+-{se[t, i]:.3g}, unconverged fits {n_unconverged}")

    fit = fit_method(ds, method, best[0], best[1], refs, options) if if_refit else None
    return CVResult(method, tau0_grid, lambda_grids, mean, se, best, (t, i), seed, folds, n_unconverged, fit)


def double_cv_prediction_error(ds, method, folds=5, seed=0, refs=None, options=None, tau0_grid=None):
    """outer folds estimate the held-out loss, inner folds select (lambda1, tau0)"""
    outer_ids = stratified_folds(ds, folds, seed, FOLD_OUTER)
    losses = list()
    for f in range(folds):
        train, test = split_fold(ds, outer_ids, f)
        cv = cross_validate(train, method, None, tau0_grid, folds, seed, refs, options)
        losses.append(heldout_loss(test, cv.fit))
    return float(np.mean(losses)), losses


"""recorder"""


class Evaluator:  # [StratLasso.2026.10.19]
    def __init__(self, cwd, if_print=True):
        self.recorder = list()  # MetricsRecord
        self.metrics_path = f'{cwd}/metrics.csv'
        self.summary_path = f'{cwd}/summary.csv'
        self.cwd = cwd
        self.if_print = if_print
        self.start_time = time.time()
        if if_print:
            print(f"{'#' * 80}\n"
                  f"{'Cell':<5}{'Rep':>4}  {'Method':<14}|"
                  f"{'accT':>7}{'accS':>7}{'logPE':>9} |"
                  f"{'lambda1':>10}{'tau0':>6} | {'etc.'}")

    def record(self, records):
        for r in records:
            self.recorder.append(r)
            if self.if_print:
                print(f"{r.cell:<5}{r.replicate:>4}  {r.method:<14}|"
                      f"{r.accuracy_T:7.3f}{r.accuracy_S:7.3f}{r.log_prediction_error:9.3f} |"
                      f"{r.lambda1:10.3e}{r.tau0:6.2f} | {r.errors or ('' if r.converged else 'unconverged')}")

    def get_metrics_frame(self):
        rows = sorted(self.recorder, key=lambda r: (r.cell, r.replicate, r.method_id))
        return pd.DataFrame([r.to_row() for r in rows], columns=list(METRICS_HEADER))

    def get_summary_frame(self):
        frame = self.get_metrics_frame()
        keys = ['cell', 'n_k', 'p', 'd_H', 'delta_mode', 'method']
        values = ['accuracy_T', 'accuracy_S', 'accuracy_T_full', 'accuracy_S_full',
                  'prediction_error', 'log_prediction_error']
        summary = frame.groupby(keys, sort=False)[values].mean().reset_index()
        summary['replicates'] = frame.groupby(keys, sort=False).size().to_numpy()
        return summary

    def save_or_load_recorder(self, if_save):
        if if_save:
            self.get_metrics_frame().to_csv(self.metrics_path, index=False, float_format='%.12g')
            self.get_summary_frame().to_csv(self.summary_path, index=False, float_format='%.12g')
            if self.if_print:
                print(f"| Evaluator: {len(self.recorder)} rows in {time.time() - self.start_time:.0f}s, "
                      f"saved {self.metrics_path}")
        elif os.path.exists(self.metrics_path):
            frame = pd.read_csv(self.metrics_path, keep_default_na=False, na_values=[''])
            frame['errors'] = frame['errors'].fillna('').astype(str)
            self.recorder = [MetricsRecord(**{k: row[k] for k in METRICS_HEADER}) for _, row in frame.iterrows()]


"""heatmap"""


def get_diverging_cmap():
    from matplotlib.colors import LinearSegmentedColormap
    # odd N puts value 0 exactly on the middle color
    return LinearSegmentedColormap.from_list('stratlasso_diverging', ['#2166ac', '#f7f7f7', '#b2182b'], N=255)


def heatmap_colors(matrices):
    """RGBA per cell on one symmetric scale [-vmax, vmax] shared by all matrices"""
    from matplotlib.colors import Normalize
    matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
    vmax = max(float(np.abs(m).max()) if m.size else 0.0 for m in matrices)
    vmax = vmax if vmax > 0 else 1.0
    cmap = get_diverging_cmap()
    norm = Normalize(vmin=-vmax, vmax=vmax)
    return [cmap(norm(m)) for m in matrices], vmax


def save_heatmap_svg(matrices, labels, path, predictor_names=None, stratum_labels=None, title=None):
    """One panel per K×p matrix: rows are predictors, columns are strata."""
    matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
    if len({m.shape for m in matrices}) != 1:
        raise ParameterError(f'| save_heatmap_svg(): panels differ in shape {[m.shape for m in matrices]}')
    assert len(labels) == len(matrices)
    K, p = matrices[0].shape
    predictor_names = [f'x{j + 1}' for j in range(p)] if predictor_names is None else predictor_names
    stratum_labels = [str(k + 1) for k in range(K)] if stratum_labels is None else stratum_labels

    import matplotlib as mpl
    mpl.use('Agg')
    import matplotlib.pyplot as plt
    from matplotlib.cm import ScalarMappable
    from matplotlib.colors import Normalize

    colors, vmax = heatmap_colors(matrices)
    with mpl.rc_context({'svg.hashsalt': 'stratlasso', 'svg.fonttype': 'path'}):
        fig, axs = plt.subplots(1, len(matrices), squeeze=False,
                                figsize=(1.2 + 0.25 * K * len(matrices) + 1.0 * len(matrices), 1.5 + 0.2 * p))
        for ax, rgba, label in zip(axs[0], colors, labels):
            ax.imshow(rgba.transpose(1, 0, 2), interpolation='nearest', aspect='auto')
            ax.set_title(label, fontsize=9)
            ax.set_xticks(np.arange(K))
            ax.set_xticklabels(stratum_labels, fontsize=6, rotation=90)
            ax.set_yticks(np.arange(p))
            ax.set_yticklabels(predictor_names, fontsize=6)
            ax.set_xlabel('stratum', fontsize=7)
        mappable = ScalarMappable(norm=Normalize(vmin=-vmax, vmax=vmax), cmap=get_diverging_cmap())
        fig.colorbar(mappable, ax=list(axs[0]), shrink=0.8)
        if title:
            fig.suptitle(title, fontsize=10)
        fig.savefig(path, format='svg', metadata={'Date': None})
        plt.close(fig)
    return path
