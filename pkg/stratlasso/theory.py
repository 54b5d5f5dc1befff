import math
import numpy as np
from dataclasses import dataclass, field
from scipy.linalg import eigvalsh, solve
from stratlasso.dataset import ParameterError, is_equal, mode_reference, NONE_REF
from stratlasso.design import TauWeights, ReferenceVector

"""[StratLasso.2026.10.19]"""

RANK_TOL = 1e-10  # relative eigenvalue floor of a Gram matrix
NO_NONNULL = -math.inf  # D1 when S is empty


class ConditionError(ArithmeticError):
    pass


class RankError(np.linalg.LinAlgError):
    pass


@dataclass
class SupportSets:
    S: frozenset  # predictors j
    T: frozenset  # pairs (k, j)
    J: np.ndarray = None  # augmented columns, when a layout is given

    def to_dict(self):
        return {'S': sorted(self.S), 'T': sorted([list(t) for t in self.T]),
                'J': None if self.J is None else self.J.tolist()}


@dataclass
class ICReport:
    lambda_min: float  # smallest eigenvalue of X_J'X_J/n
    c: float  # max_{j not in J} ||(X_J'X_J)^-1 X_J'X_j||_1, nan when singular
    holds: bool
    gamma_slack: float  # 1 - c
    if_singular: bool = False

    def to_dict(self):
        return {'lambda_min': self.lambda_min, 'c': _finite_or_none(self.c), 'holds': self.holds,
                'gamma_slack': _finite_or_none(self.gamma_slack), 'singular': self.if_singular}


@dataclass
class HeterogeneityDegrees:
    D0: int  # max deviating strata over j not in S
    D1: float  # max deviating strata over j in S, NO_NONNULL when S is empty
    Kstar: list  # per predictor, strata sharing the reference value
    deviating: np.ndarray = None  # per predictor, number of strata off the reference value

    def to_dict(self):
        return {'D0': self.D0, 'D1': _finite_or_none(self.D1),
                'Kstar': [k.tolist() for k in self.Kstar]}


@dataclass
class RecoveryThresholds:
    eta: int
    lambda1: float  # margin x the bound, 1.01 by default
    lambda1_bound: float
    beta_min: float
    gamma: float
    C_min: float
    heterogeneity: np.ndarray = None  # per stratum, beta_min * sqrt(n / n_k) / tau0

    def to_dict(self):
        return {'eta': self.eta, 'lambda1': self.lambda1, 'lambda1_bound': self.lambda1_bound,
                'beta_min': self.beta_min, 'gamma': self.gamma, 'C_min': self.C_min,
                'heterogeneity': None if self.heterogeneity is None else self.heterogeneity.tolist()}


def _finite_or_none(value):
    return float(value) if value is not None and np.isfinite(value) else None


"""WSmedian"""


def wsmedian_objective(x, b, tau):
    x = np.asarray(x, dtype=np.float64)
    return np.abs(x) + (tau * np.abs(b[None, :] - np.ravel(x)[:, None])).sum(axis=1).reshape(x.shape)


def wsmedian(b, tau):
    """Minimizer of |x| + sum_k tau_k |b_k - x|.

    The objective is piecewise linear with breakpoints {0} U {b_k}, so its minimizer set is an
    interval between breakpoints. Returns (value, (low, high)), value being the minimizer of
    smallest magnitude.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    tau = np.asarray(tau, dtype=np.float64).ravel()
    assert b.shape == tau.shape and (tau > 0).all()

    points = np.unique(np.concatenate(([0.0], b)))
    values = wsmedian_objective(points, b, tau)
    f_min = values.min()
    at_min = points[values <= f_min + 1e-12 * max(1.0, abs(f_min))]
    low, high = float(at_min.min()), float(at_min.max())
    if low <= 0.0 <= high:
        value = 0.0
    else:
        value = low if low > 0 else high
    return value, (low, high)


"""supports and heterogeneity"""


def _get_beta(gt):
    return np.asarray(gt.beta if hasattr(gt, 'beta') else gt, dtype=np.float64)


def reference_values(gt, refs=None):
    """beta_{l_j, j} per predictor; refs None means l*, the mode of {0, beta_{.,j}}"""
    beta = _get_beta(gt)
    if refs is None:
        if hasattr(gt, 'mode_vector'):
            return np.asarray(gt.mode_vector, dtype=np.float64)
        return mode_reference(beta)[0]
    refs = refs.refs if isinstance(refs, ReferenceVector) else np.asarray(refs, dtype=np.int64)
    assert (refs != NONE_REF).all()
    return beta[refs, np.arange(beta.shape[1])]


def support_sets_from_truth(gt, refs=None, layout=None):
    beta = _get_beta(gt)
    ref_value = reference_values(gt, refs)
    if_s = ~is_equal(ref_value, 0.0)
    if_t = ~is_equal(beta, ref_value[None, :])

    S = frozenset(int(j) for j in np.flatnonzero(if_s))
    T = frozenset((int(k), int(j)) for k, j in np.argwhere(if_t))
    J = None
    if layout is not None:
        cols = [layout.col_mu[j] for j in sorted(S)] + [layout.col_gamma[k, j] for k, j in sorted(T)]
        assert min(cols, default=0) >= 0, '| support_sets_from_truth(): a support column is absent from the layout'
        J = np.array(sorted(cols), dtype=np.int64)
    return SupportSets(S, T, J)


def heterogeneity_degrees(gt, refs=None):
    beta = _get_beta(gt)
    ref_value = reference_values(gt, refs)
    if_s = ~is_equal(ref_value, 0.0)
    if_same = is_equal(beta, ref_value[None, :])
    deviating = (~if_same).sum(axis=0)

    D0 = int(deviating[~if_s].max()) if (~if_s).any() else 0
    D1 = int(deviating[if_s].max()) if if_s.any() else NO_NONNULL
    Kstar = [np.flatnonzero(if_same[:, j]) for j in range(beta.shape[1])]
    return HeterogeneityDegrees(D0, D1, Kstar, deviating)


"""irrepresentability"""


def _min_eig(gram):
    eigs = eigvalsh(gram)
    return float(eigs[0]), float(max(1.0, abs(eigs[-1])))


def ic_generic(design, J):
    """Lambda_min of X_J'X_J/n and the irrepresentability constant of the columns outside J"""
    J = np.unique(np.asarray(list(J), dtype=np.int64))
    assert J.size >= 1
    others = np.setdiff1d(np.arange(design.m), J)

    x_j = design.mat[:, J]
    gram_jj = (x_j.T @ x_j).toarray() / design.n
    lambda_min, scale = _min_eig(gram_jj)
    if lambda_min <= RANK_TOL * scale:
        return ICReport(0.0, math.nan, False, math.nan, True)

    if others.size == 0:
        c = 0.0
    else:
        gram_jo = (x_j.T @ design.mat[:, others]).toarray() / design.n
        coef = solve(gram_jj, gram_jo, assume_a='pos')
        c = float(np.abs(coef).sum(axis=0).max())
    return ICReport(lambda_min, c, c < 1, 1 - c)


def tau0_feasible_interval(K, D0, D1):
    """open interval of tau0 giving the irrepresentability condition for orthogonal balanced strata,
    None when empty"""
    assert K >= 1
    sqrt_k = math.sqrt(K)
    if D1 == NO_NONNULL:
        lower = 0.0
    else:
        lower = sqrt_k / (K - 2 * D1) if K - 2 * D1 > 0 else math.inf
    upper = sqrt_k / D0 if D0 > 0 else math.inf
    if lower >= upper:
        return None
    return lower, upper


def ic_orthogonal_balanced(K, degrees, tau0):
    interval = tau0_feasible_interval(K, degrees.D0, degrees.D1)
    return interval is not None and interval[0] < tau0 < interval[1]


def balanced_recovery_constants(K, D0, D1, tau0):
    """(gamma, C_min) for orthogonal balanced strata with tau_k = tau0 / sqrt(K)"""
    if not tau0 > 0:
        raise ParameterError(f'| balanced_recovery_constants(): tau0={tau0} must be positive')
    if D1 != NO_NONNULL and D1 >= K:
        raise ParameterError(f'| balanced_recovery_constants(): need D1 < K, got D1={D1}, K={K}')
    sqrt_k = math.sqrt(K)
    gamma = 1 - D0 * tau0 / sqrt_k
    if D1 != NO_NONNULL:
        gamma = min(gamma, 1 - (sqrt_k + D1 * tau0) / ((K - D1) * tau0))
    d1 = 0 if D1 == NO_NONNULL else D1

    inv2 = tau0 ** -2
    root = 0.5 * ((inv2 + 1) - math.sqrt((inv2 - 1) ** 2 + 4 * d1 / (tau0 ** 2 * K)))
    return gamma, min(1.0, inv2, root)


def recovery_thresholds(eta, sigma, n, K, p, tau0, gamma, C_min, s_size, n_k=None, margin=1.01):
    if eta not in (0, 1):
        raise ParameterError(f'| recovery_thresholds(): eta={eta} must be 0 or 1')
    if not gamma > 0:
        raise ConditionError(f'| recovery_thresholds(): gamma={gamma} <= 0, recovery thresholds undefined')
    if not C_min > 0:
        raise ConditionError(f'| recovery_thresholds(): C_min={C_min} <= 0, recovery thresholds undefined')

    bound = 2 / (gamma * min(1.0, tau0)) * math.sqrt(2 * sigma ** 2 * math.log((K + eta) * p) / n)
    lambda1 = margin * bound
    beta_min = lambda1 * (math.sqrt(s_size) / C_min + 4 * sigma / math.sqrt(C_min))
    n_k = np.full(K, n / K) if n_k is None else np.asarray(n_k, dtype=np.float64)
    heterogeneity = beta_min * np.sqrt(n / n_k) / tau0
    return RecoveryThresholds(eta, lambda1, bound, beta_min, gamma, C_min, heterogeneity)


"""general designs"""


@dataclass
class GeneralICReport:
    c1: float  # over mu columns of null predictors
    c2: float  # over gamma columns of the basic layout
    c2bar: float  # over gamma columns of the overparametrized layout
    holds_basic: bool  # c1 < 1 and c2 < 1
    holds_overparam: bool  # c1 < 1 and c2bar < 1 (meaningful for the optimal reference)
    lambda_min_strata: list = field(default_factory=list)  # Lambda_min(Sigma_k / n_k)
    lambda_min_tilde: float = None  # Lambda_min(Sigma_tilde / n)

    def to_dict(self):
        return {'c1': self.c1, 'c2': self.c2, 'c2bar': self.c2bar, 'holds_basic': self.holds_basic,
                'holds_overparam': self.holds_overparam, 'lambda_min_strata': self.lambda_min_strata,
                'lambda_min_tilde': self.lambda_min_tilde}


def _tau_array(tau):
    return tau.tau if isinstance(tau, TauWeights) else np.asarray(tau, dtype=np.float64)


def ic_general(ds, refs, tau, gt):
    """Irrepresentability constants from per-stratum blocks, without the augmented design.

    Per stratum k with deviation set T_k: Sigma_k = X_T'X_T, omega_j = Sigma_k^-1 X_T'X_j,
    Omega_k = Sigma_k^-1 X_T'X_S, Z_j = (I - Pi_k) X_j. Across strata: Sigma_tilde =
    sum_k X_S'(I - Pi_k) X_S and Omega_tilde_kj = Sigma_tilde^-1 X_S^(k)' Z_j^(k).
    `refs` None means the optimal reference.
    """
    beta = _get_beta(gt)
    tau = _tau_array(tau)
    K, p = ds.K, ds.p
    assert beta.shape == (K, p) and tau.shape == (K,)
    ref_value = reference_values(gt, refs)
    if refs is None:
        ref_index = gt.optimal_reference if hasattr(gt, 'optimal_reference') else mode_reference(beta)[1]
    else:
        ref_index = refs.refs if isinstance(refs, ReferenceVector) else np.asarray(refs)

    S = np.flatnonzero(~is_equal(ref_value, 0.0))
    if_same = is_equal(beta, ref_value[None, :])

    '''per stratum blocks'''
    omegas, big_omegas, zs, lambda_min_strata = list(), list(), list(), list()
    for k, (x, _) in enumerate(ds.strata):
        t_k = np.flatnonzero(~if_same[k])
        x_t = x[:, t_k]
        if t_k.size:
            sigma_k = x_t.T @ x_t
            lambda_min, scale = _min_eig(sigma_k / ds.n_k[k])
            if lambda_min <= RANK_TOL * scale:
                raise RankError(f'| ic_general(): X_T\'X_T of stratum {k} ({ds.stratum_labels[k]!r}) is singular')
            omega = solve(sigma_k, x_t.T @ x, assume_a='pos')  # |T_k| x p
            lambda_min_strata.append(lambda_min)
        else:
            omega = np.zeros((0, p))
            lambda_min_strata.append(None)
        omegas.append(omega)
        big_omegas.append(omega[:, S])
        zs.append(x - x_t @ omega)

    sigma_tilde = sum(x[:, S].T @ z[:, S] for (x, _), z in zip(ds.strata, zs)) if S.size else np.zeros((0, 0))
    lambda_min_tilde = None
    if S.size:
        lambda_min_tilde, scale = _min_eig(sigma_tilde / ds.n)
        if lambda_min_tilde <= RANK_TOL * scale:
            raise RankError('| ic_general(): Sigma_tilde pooled over strata is singular')
        omega_tilde = [solve(sigma_tilde, x[:, S].T @ z, assume_a='pos') for (x, _), z in zip(ds.strata, zs)]
    else:
        omega_tilde = [np.zeros((0, p)) for _ in range(K)]

    '''mu columns of null predictors'''
    c1 = 0.0
    for j in np.setdiff1d(np.arange(p), S):
        alpha = sum(ot[:, j] for ot in omega_tilde)
        value = np.abs(alpha).sum() + sum(tau[k] * np.abs(omegas[k][:, j] - big_omegas[k] @ alpha).sum()
                                          for k in range(K))
        c1 = max(c1, float(value))

    '''gamma columns sharing the reference value'''
    c2 = c2bar = 0.0
    for j in range(p):
        for k in np.flatnonzero(if_same[:, j]):
            alpha = omega_tilde[k][:, j]
            value = np.abs(alpha).sum() / tau[k] \
                + sum(tau[l] / tau[k] * np.abs(big_omegas[l] @ alpha).sum() for l in range(K) if l != k) \
                + np.abs(omegas[k][:, j] - big_omegas[k] @ alpha).sum()
            c2bar = max(c2bar, float(value))
            if k != ref_index[j]:
                c2 = max(c2, float(value))

    return GeneralICReport(c1, c2, c2bar, c1 < 1 and c2 < 1, c1 < 1 and c2bar < 1,
                           lambda_min_strata, lambda_min_tilde)


@dataclass
class SpecialCaseReport:
    case: str
    conditions: dict
    constants: dict
    thresholds: RecoveryThresholds = None

    def to_dict(self):
        return {'case': self.case, 'conditions': self.conditions, 'constants': self.constants,
                'thresholds': None if self.thresholds is None else self.thresholds.to_dict()}


def special_case_checks(ds, tau, case, gt, sigma=None):
    """Conditions of the two special cases: 'homogeneous' (no stratum deviates, T empty) and
    'independent' (no common effect, S empty)."""
    beta = _get_beta(gt)
    tau_w = tau if isinstance(tau, TauWeights) else TauWeights(tau)
    tau = tau_w.tau
    K, p = ds.K, ds.p
    conditions, constants = dict(), dict()
    thresholds = None

    if case == 'homogeneous':
        if not is_equal(beta, beta[:1]).all():
            raise ParameterError('| special_case_checks(): the homogeneous case needs identical strata coefficients')
        S = np.flatnonzero(~is_equal(beta[0], 0.0))
        x_pool = ds.pooled_x()
        conditions['sum_tau_above_one'] = bool(tau.sum() > 1)

        if S.size:
            gram = x_pool[:, S].T @ x_pool[:, S]
            c_min, scale = _min_eig(gram / ds.n)
            if c_min <= RANK_TOL * scale:
                raise RankError('| special_case_checks(): X_S\'X_S of the pooled strata is singular')
            others = np.setdiff1d(np.arange(p), S)
            c1 = float(np.abs(solve(gram, x_pool[:, S].T @ x_pool[:, others], assume_a='pos')).sum(axis=0).max()) \
                if others.size else 0.0
            c2 = max(float(np.abs(solve(gram, x[:, S].T @ x, assume_a='pos')).sum(axis=0).max()) / tau[k]
                     for k, (x, _) in enumerate(ds.strata))
        else:
            c_min, c1, c2 = 1.0, 0.0, 0.0
        s_size = int(S.size)
        beta_signal = np.abs(beta[0, S]).min() if S.size else math.inf

    elif case == 'independent':
        if not is_equal(reference_values(gt), 0.0).all():
            raise ParameterError('| special_case_checks(): the independent case needs an all-zero mode (S empty)')
        if_zero = is_equal(beta, 0.0)
        conditions['tau_balance'] = bool(all(tau[~if_zero[:, j]].sum() < 1 + tau[if_zero[:, j]].sum()
                                             for j in range(p)))
        c1_terms = np.zeros(p)
        c2 = 0.0
        c_min = math.inf
        for k, (x, _) in enumerate(ds.strata):
            t_k = np.flatnonzero(~if_zero[k])
            if t_k.size == 0:
                continue
            sigma_k = x[:, t_k].T @ x[:, t_k]
            lambda_min, scale = _min_eig(sigma_k / ds.n_k[k])
            if lambda_min <= RANK_TOL * scale:
                raise RankError(f'| special_case_checks(): X_T\'X_T of stratum {k} '
                                f'({ds.stratum_labels[k]!r}) is singular')
            c_min = min(c_min, lambda_min)
            norms = np.abs(solve(sigma_k, x[:, t_k].T @ x, assume_a='pos')).sum(axis=0)
            c1_terms += tau[k] * norms
            outside = np.setdiff1d(np.arange(p), t_k)
            if outside.size:
                c2 = max(c2, float(norms[outside].max()))
        c1 = float(c1_terms.max())
        c_min = 1.0 if c_min == math.inf else c_min
        s_size = int((~if_zero).sum())
        beta_signal = np.abs(beta[~if_zero])
        signal_stratum = np.nonzero(~if_zero)[0]
    else:
        raise ParameterError(f'| special_case_checks(): unknown case {case!r}')

    gamma = min(1 - c1, 1 - c2)
    conditions['c1_below_one'] = c1 < 1
    conditions['c2_below_one'] = c2 < 1
    constants.update({'c1': c1, 'c2': c2, 'gamma': gamma, 'C_min': c_min, 'sum_tau': float(tau.sum())})

    if sigma is not None and gamma > 0 and tau_w.tau0 is not None:
        tau0 = tau_w.tau0
        thresholds = recovery_thresholds(1, sigma, ds.n, K, p, tau0, gamma, c_min, s_size, ds.n_k, margin=1.0)
        if case == 'independent':  # signal enters through tau0 * |T|^(1/2), each stratum scaled by sqrt(n / n_k)
            thresholds.beta_min = thresholds.lambda1 * (tau0 * math.sqrt(s_size) / c_min + 4 * sigma / math.sqrt(c_min))
            thresholds.heterogeneity = thresholds.beta_min * np.sqrt(ds.n / ds.n_k)
            conditions['beta_min'] = bool((beta_signal > thresholds.heterogeneity[signal_stratum]).all())
        else:
            conditions['beta_min'] = bool(beta_signal > thresholds.beta_min)
    return SpecialCaseReport(case, conditions, constants, thresholds)
