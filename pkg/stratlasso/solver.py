import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass, field, asdict
from scipy.special import expit, logit
from scipy.linalg import cho_factor, cho_solve
from stratlasso.dataset import ParameterError, mode_reference, is_equal
from stratlasso.design import (TauWeights, ReferenceVector, CoefficientDecomposition,
                               build_design_overparam, build_design_basic, build_design_pooled,
                               build_design_independent, theta_to_decomposition)

"""[StratLasso.2026.10.19]"""

METHODS = ('proposal', 'basic', 'pooled', 'independent', 'fused')
ETA_SEPARATION = 30.0  # |linear predictor| beyond this flags quasi-separation
WEIGHT_MIN = 1e-5  # floor of the logistic working weights p(1-p)


@dataclass
class SolverOptions:
    kkt_tol: float = 1e-6  # Gaussian KKT tolerance
    logistic_kkt_tol: float = 1e-5  # logistic KKT tolerance (composite subgradient)
    update_tol: float = 1e-9  # max |coordinate update| * column norm
    max_iters: int = 100000  # budget of coordinate sweeps
    max_newton: int = 100  # proximal Newton steps (logistic)
    if_active_set: bool = True  # sweep the active set between full sweeps
    admm_tol: float = 1e-6  # primal and dual residual tolerance (fused)
    admm_max_iters: int = 5000
    admm_rho: float = 1.0  # initial ADMM penalty, balanced by x2 / /2
    lambda_num: int = 100  # default path length
    lambda_ratio: float = None  # lambda_min / lambda_max, None means 1e-3 (1e-2 when n < m)
    fused_tol: float = 1e-4  # equality tolerance when reading a fused estimate as mu + gamma

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f'| SolverOptions: unknown fields {sorted(unknown)}')
        return cls(**data)


@dataclass
class PenaltySpec:
    lambda1: float
    tau: TauWeights = None  # fixes lambda_{2,k} = tau_k * lambda1

    def __post_init__(self):
        if not self.lambda1 >= 0:
            raise ParameterError(f'| PenaltySpec: lambda1={self.lambda1} must be nonnegative')

    def lambda2(self):
        return None if self.tau is None else self.tau.tau * self.lambda1


@dataclass
class FitResult:
    theta: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool
    lambda1: float = 0.0
    intercept: float = 0.0  # logistic only
    flags: list = field(default_factory=list)

    def to_dict(self):
        return {'lambda1': self.lambda1, 'objective': self.objective, 'iterations': self.iterations,
                'kkt_residual': self.kkt_residual, 'converged': self.converged,
                'intercept': self.intercept, 'flags': list(self.flags), 'theta': self.theta.tolist()}


@dataclass
class PathResult:
    lambda_grid: np.ndarray
    fits: list


"""KKT and penalty grid"""


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def _kkt_from_grad(grad, theta, lambda1):
    if grad.size == 0:
        return 0.0
    residual = np.where(theta != 0, np.abs(grad + lambda1 * np.sign(theta)),
                        np.maximum(0.0, np.abs(grad) - lambda1))
    return float(residual.max())


def null_intercept(y):
    y_bar = np.clip(np.mean(y), 1e-12, 1 - 1e-12)
    return float(logit(y_bar))


def smooth_gradient(design, theta, intercept=None):
    """gradient of the unpenalized loss at theta (intercept None: null-model intercept for binary)"""
    theta = np.asarray(theta, dtype=np.float64)
    mat = design.mat
    if design.response_kind == 'binary':
        intercept = null_intercept(design.y) if intercept is None else intercept
        prob = expit(intercept + mat @ theta)
        return mat.T @ (prob - design.y) / design.n
    return -(mat.T @ (design.y - mat @ theta)) / design.n


def kkt_residual(design, theta, lambda1, intercept=None):
    theta = np.asarray(theta, dtype=np.float64)
    return _kkt_from_grad(smooth_gradient(design, theta, intercept), theta, lambda1)


def lambda_max(design):
    """smallest lambda1 with theta_hat = 0"""
    y = design.y
    if design.response_kind == 'binary':
        y = y - y.mean()
    if design.m == 0:
        return 0.0
    return float(np.abs(design.mat.T @ y).max() / design.n)


def lambda_grid(design, num=100, ratio=None):
    """`num` log-spaced values from lambda_max down to lambda_max * ratio"""
    if ratio is None:
        ratio = 1e-2 if design.n < design.m else 1e-3
    lam_max = lambda_max(design)
    if lam_max <= 0:
        lam_max = 1.0  # all fits are zero
    return np.geomspace(lam_max, lam_max * ratio, num)


"""coordinate descent solvers"""


class SolverBase:  # [StratLasso.2026.10.19]
    def __init__(self):
        """Lasso over an augmented design: loss(theta) + lambda1 * ||theta||_1.

        explicit call self.init() to load options before fitting.
        """
        self.kkt_tol = 1e-6
        self.update_tol = 1e-9
        self.max_iters = 100000
        self.if_active_set = True
        self.options = None

    def init(self, options=None):
        self.options = SolverOptions() if options is None else options
        self.kkt_tol = self.options.kkt_tol
        self.update_tol = self.options.update_tol
        self.max_iters = self.options.max_iters
        self.if_active_set = self.options.if_active_set
        return self

    def fit(self, design, lambda1, theta0=None, intercept0=None):
        raise NotImplementedError

    def check_flags(self, design, lambda1):
        flags = list()
        if lambda1 == 0 and (design.m > design.n or np.linalg.matrix_rank(design.mat.toarray()) < design.m):
            flags.append('non-unique')
        return flags


class SolverGaussian(SolverBase):
    def __init__(self):
        SolverBase.__init__(self)
        self.loss = 'gaussian'

    def fit(self, design, lambda1, theta0=None, intercept0=None):
        """cyclic coordinate descent with covariance updates: q = (X'X/n) theta is kept current"""
        gram, xty, diag = design.get_gram()
        if_dense = isinstance(gram, np.ndarray)
        sqrt_diag = np.sqrt(np.maximum(diag, 0.0))
        yy = float(design.y @ design.y) / design.n / 2
        lam = float(lambda1)

        theta = np.zeros(design.m) if theta0 is None else np.array(theta0, dtype=np.float64)
        assert theta.shape == (design.m,)

        def get_objective(_q):
            return yy - float(xty @ theta) + float(theta @ _q) / 2 + lam * float(np.abs(theta).sum())

        def sweep(cols, _q, obj_prev):
            max_change = 0.0
            for j in cols:
                d_j = diag[j]
                if d_j <= 0.0:
                    continue
                old = theta[j]
                z = xty[j] - _q[j] + d_j * old
                if z > lam:
                    new = (z - lam) / d_j
                elif z < -lam:
                    new = (z + lam) / d_j
                else:
                    new = 0.0
                if new != old:
                    delta = new - old
                    theta[j] = new
                    if if_dense:
                        _q += delta * gram[j]
                    else:
                        beg, end = gram.indptr[j], gram.indptr[j + 1]
                        _q[gram.indices[beg:end]] += delta * gram.data[beg:end]
                    max_change = max(max_change, abs(delta) * sqrt_diag[j])
            obj = get_objective(_q)
            assert obj <= obj_prev + 1e-10 * max(1.0, abs(obj_prev)), \
                f'| SolverGaussian: objective increased {obj_prev:.12g} -> {obj:.12g}'
            return max_change, obj

        all_cols = np.arange(design.m)
        q = gram @ theta
        objective = get_objective(q)
        sweeps = 0
        converged = False
        while sweeps < self.max_iters:
            q = gram @ theta  # refresh against drift of the running update
            max_change, objective = sweep(all_cols, q, objective)
            sweeps += 1
            if max_change <= self.update_tol:
                if _kkt_from_grad(q - xty, theta, lam) <= self.kkt_tol:
                    converged = True
                    break
                if max_change == 0.0:
                    break  # nothing moves, the tolerance cannot be met

            if self.if_active_set:
                active = np.flatnonzero(theta)
                while sweeps < self.max_iters and active.size:
                    max_change, objective = sweep(active, q, objective)
                    sweeps += 1
                    if max_change <= self.update_tol:
                        break

        residual = kkt_residual(design, theta, lam)
        converged = converged and residual <= self.kkt_tol
        flags = self.check_flags(design, lam)
        if not converged:
            flags.append('max_iters' if sweeps >= self.max_iters else 'stalled')
        objective = float(((design.y - design.mat @ theta) ** 2).sum() / design.n / 2 + lam * np.abs(theta).sum())
        return FitResult(theta, objective, sweeps, residual, converged, lam, 0.0, flags)


class SolverLogistic(SolverBase):
    def __init__(self):
        SolverBase.__init__(self)
        self.loss = 'logistic'
        self.kkt_tol = 1e-5
        self.max_newton = 100

    def init(self, options=None):
        SolverBase.init(self, options)
        self.kkt_tol = self.options.logistic_kkt_tol
        self.max_newton = self.options.max_newton
        return self

    @staticmethod
    def smooth_value_and_grad(design, theta, intercept):
        """(1/n) negative log-likelihood, its gradient in theta and in the intercept"""
        eta = intercept + design.mat @ theta
        value = float(np.mean(np.logaddexp(0.0, eta) - design.y * eta))
        diff = expit(eta) - design.y
        return value, design.mat.T @ diff / design.n, float(diff.mean())

    def get_objective(self, design, theta, intercept, lam):
        eta = intercept + design.mat @ theta
        return float(np.mean(np.logaddexp(0.0, eta) - design.y * eta)) + lam * float(np.abs(theta).sum())

    def fit(self, design, lambda1, theta0=None, intercept0=None):
        """proximal Newton: weighted least-squares model of the loss, inner coordinate descent,
        backtracking on the composite objective"""
        lam = float(lambda1)
        n = design.n
        mat = design.mat
        y = design.y
        theta = np.zeros(design.m) if theta0 is None else np.array(theta0, dtype=np.float64)
        intercept = null_intercept(y) if intercept0 is None else float(intercept0)
        flags = self.check_flags(design, lam)
        if y.min() == y.max():
            flags.append('separation')

        objective = self.get_objective(design, theta, intercept, lam)
        sweeps = 0
        converged = False
        residual = np.inf
        for _ in range(self.max_newton):
            eta = intercept + mat @ theta
            if np.abs(eta).max() > ETA_SEPARATION:
                flags.append('separation')
                break

            prob = expit(eta)
            grad = mat.T @ (prob - y) / n
            grad0 = float(np.mean(prob - y))
            residual = max(_kkt_from_grad(grad, theta, lam), abs(grad0))
            if residual <= self.kkt_tol:
                converged = True
                break
            if sweeps >= self.max_iters:
                break

            weight = np.maximum(prob * (1 - prob), WEIGHT_MIN)
            target = eta + (y - prob) / weight
            inner_tol = max(1e-12, 1e-3 * residual)
            new_theta, new_intercept, inner_sweeps = self.inner_cd(
                design, theta.copy(), intercept, weight, target, lam, inner_tol, self.max_iters - sweeps)
            sweeps += inner_sweeps

            '''backtracking line search'''
            d_theta = new_theta - theta
            d_intercept = new_intercept - intercept
            decrease = float(grad @ d_theta) + grad0 * d_intercept \
                + lam * (np.abs(new_theta).sum() - np.abs(theta).sum())
            if decrease >= 0:
                break
            step = 1.0
            while step > 1e-10:
                cand_theta = theta + step * d_theta
                cand_intercept = intercept + step * d_intercept
                cand_objective = self.get_objective(design, cand_theta, cand_intercept, lam)
                if cand_objective <= objective + 1e-4 * step * decrease:
                    break
                step /= 2
            else:
                break
            theta, intercept, objective = cand_theta, cand_intercept, cand_objective

        if not converged:
            flags.append('max_iters' if sweeps >= self.max_iters else 'stalled')
        return FitResult(theta, objective, sweeps, float(residual), converged, lam, intercept, flags)

    @staticmethod
    def inner_cd(design, theta, intercept, weight, target, lam, tol, max_sweeps):
        """minimize (1/2n) sum_i w_i (t_i - b - x_i theta)^2 + lam ||theta||_1 over the CSC columns"""
        n = design.n
        mat = design.mat
        indptr, indices, data = mat.indptr, mat.indices, mat.data
        resid = weight * (target - intercept - mat @ theta)  # weighted residual
        col_weight = np.asarray(mat.multiply(mat).T @ weight).ravel() / n
        weight_sum = float(weight.sum())
        weight_norm = np.sqrt(weight_sum / n)

        sweeps = 0
        while sweeps < max(max_sweeps, 1):
            sweeps += 1
            delta0 = float(resid.sum()) / weight_sum
            intercept += delta0
            resid -= weight * delta0
            max_change = abs(delta0) * weight_norm

            for j in range(design.m):
                d_j = col_weight[j]
                if d_j <= 0.0:
                    continue
                rows = indices[indptr[j]:indptr[j + 1]]
                vals = data[indptr[j]:indptr[j + 1]]
                old = theta[j]
                z = float(vals @ resid[rows]) / n + d_j * old
                new = (np.sign(z) * max(abs(z) - lam, 0.0)) / d_j
                if new != old:
                    delta = new - old
                    theta[j] = new
                    resid[rows] -= delta * weight[rows] * vals
                    max_change = max(max_change, abs(delta) * np.sqrt(d_j))
            if max_change <= tol:
                break
        return theta, intercept, sweeps


def build_solver(design, options=None):
    solver = SolverLogistic() if design.response_kind == 'binary' else SolverGaussian()
    return solver.init(options)


def _check_penalty(design, pen):
    if pen.tau is not None and not np.allclose(pen.tau.tau, design.tau.tau, rtol=1e-12, atol=0):
        raise ParameterError('| solver: PenaltySpec tau differs from the tau built into the design columns')


def lasso_gaussian(design, pen, options=None, theta0=None):
    _check_penalty(design, pen)
    return SolverGaussian().init(options).fit(design, pen.lambda1, theta0)


def lasso_logistic(design, pen, options=None, theta0=None, intercept0=None):
    _check_penalty(design, pen)
    if design.response_kind != 'binary':
        raise ParameterError('| lasso_logistic(): the design response is not binary')
    return SolverLogistic().init(options).fit(design, pen.lambda1, theta0, intercept0)


def fit_path(design, grid=None, options=None, if_print=False):
    """regularization path, each fit warm-started from the previous one"""
    options = SolverOptions() if options is None else options
    grid = lambda_grid(design, options.lambda_num, options.lambda_ratio) if grid is None \
        else np.asarray(grid, dtype=np.float64).ravel()
    if grid.size > 1 and not (np.diff(grid) < 0).all():
        raise ParameterError('| fit_path(): the lambda grid must be strictly decreasing')

    solver = build_solver(design, options)
    fits = list()
    theta = None
    intercept = None
    for lambda1 in grid:
        result = solver.fit(design, lambda1, theta, intercept)
        fits.append(result)
        theta, intercept = result.theta, result.intercept if design.response_kind == 'binary' else None
        if if_print and not result.converged:
            print(f"| fit_path(): WARNING lambda1={lambda1:.6g} not converged {result.flags}")
    return PathResult(grid, fits)


"""clique-based generalized fused lasso (Gaussian comparator)"""


@dataclass
class FusedResult:
    beta: np.ndarray  # K×p
    objective: float
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    lambda1: float = 0.0
    lambda2: float = 0.0
    rho: float = 1.0
    state: tuple = None  # (z1, z2, u1, u2, rho) for warm starts
    flags: list = field(default_factory=list)

    @property
    def kkt_residual(self):
        return max(self.primal_residual, self.dual_residual)

    def to_dict(self):
        return {'lambda1': self.lambda1, 'lambda2': self.lambda2, 'objective': self.objective,
                'iterations': self.iterations, 'primal_residual': self.primal_residual,
                'dual_residual': self.dual_residual, 'converged': self.converged, 'rho': self.rho,
                'flags': list(self.flags)}


def clique_difference_operator(K, p):
    """rows beta[a, j] - beta[b, j] for every j and a < b, on beta flattened stratum-major"""
    rows, cols, vals = list(), list(), list()
    row = 0
    for j in range(p):
        for a in range(K):
            for b in range(a + 1, K):
                rows.extend((row, row))
                cols.extend((a * p + j, b * p + j))
                vals.extend((1.0, -1.0))
                row += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(row, K * p))


def fused_objective(ds, beta, lambda1, lambda2):
    beta = np.asarray(beta, dtype=np.float64)
    loss = sum(float(((y - x @ beta[k]) ** 2).sum()) for k, (x, y) in enumerate(ds.strata)) / ds.n / 2
    pairs = np.abs(beta[:, None, :] - beta[None, :, :]).sum() / 2
    return loss + lambda1 * float(np.abs(beta).sum()) + lambda2 * float(pairs)


class SolverFusedClique:  # [StratLasso.2026.10.19]
    def __init__(self):
        self.tol = 1e-6
        self.max_iters = 5000
        self.rho = 1.0
        self.balance_gap = 10  # check residual balance every balance_gap iterations

    def init(self, options=None):
        options = SolverOptions() if options is None else options
        self.tol = options.admm_tol
        self.max_iters = options.admm_max_iters
        self.rho = options.admm_rho
        return self

    def fit(self, ds, lambda1, lambda2, state=None):
        """consensus ADMM: x = beta, z1 = x (l1 part), z2 = D x (pairwise differences)"""
        if ds.response_kind != 'gaussian':
            raise ParameterError('| fused_clique_gaussian(): needs a Gaussian response')
        if lambda1 < 0 or lambda2 < 0:
            raise ParameterError(f'| fused_clique_gaussian(): negative penalty ({lambda1}, {lambda2})')
        K, p, n = ds.K, ds.p, ds.n
        dim = K * p
        diff_op = clique_difference_operator(K, p)
        diff_gram = (diff_op.T @ diff_op).toarray()
        hessian = sp.block_diag([x.T @ x / n for x, _ in ds.strata], format='csr').toarray()
        xty = np.concatenate([x.T @ y for x, y in ds.strata]) / n

        if state is None:
            z1 = np.zeros(dim)
            z2 = np.zeros(diff_op.shape[0])
            u1 = np.zeros(dim)
            u2 = np.zeros(diff_op.shape[0])
            rho = self.rho
        else:
            z1, z2, u1, u2 = (s.copy() for s in state[:4])
            rho = state[4]  # scaled duals u belong to this rho

        factor = cho_factor(hessian + rho * (np.eye(dim) + diff_gram))
        primal = dual = np.inf
        converged = False
        iteration = 0
        for iteration in range(1, self.max_iters + 1):
            x = cho_solve(factor, xty + rho * (z1 - u1) + rho * (diff_op.T @ (z2 - u2)))
            dx = diff_op @ x
            z1_old, z2_old = z1, z2
            z1 = soft_threshold(x + u1, lambda1 / rho)
            z2 = soft_threshold(dx + u2, lambda2 / rho)
            u1 = u1 + x - z1
            u2 = u2 + dx - z2

            primal = max(float(np.abs(x - z1).max()), float(np.abs(dx - z2).max()) if z2.size else 0.0)
            dual = rho * max(float(np.abs(z1 - z1_old).max()),
                             float(np.abs(diff_op.T @ (z2 - z2_old)).max()) if z2.size else 0.0)
            if primal <= self.tol and dual <= self.tol:
                converged = True
                break

            '''residual balancing'''
            if iteration % self.balance_gap == 0:
                scale = 2.0 if primal > 10 * dual else 0.5 if dual > 10 * primal else 1.0
                if scale != 1.0 and 1e-6 <= rho * scale <= 1e6:
                    rho *= scale
                    u1 = u1 / scale
                    u2 = u2 / scale
                    factor = cho_factor(hessian + rho * (np.eye(dim) + diff_gram))

        beta = z1.reshape(K, p)
        objective = fused_objective(ds, beta, lambda1, lambda2)
        flags = list() if converged else ['max_iters']
        return FusedResult(beta, objective, iteration, primal, dual, converged, float(lambda1), float(lambda2),
                           rho, (z1, z2, u1, u2, rho), flags)


def fused_clique_gaussian(ds, lambda1, lambda2, options=None, state=None):
    return SolverFusedClique().init(options).fit(ds, lambda1, lambda2, state)


def fused_lambda2(lambda1, ratio, K):
    """lambda2 such that one deviating stratum pays ratio * lambda1 / sqrt(K), as under tau0 = ratio"""
    return ratio * lambda1 / (np.sqrt(K) * max(K - 1, 1))


"""method dispatch"""


@dataclass
class MethodFit:
    method: str
    decomposition: CoefficientDecomposition
    lambda1: float
    tau0: float
    result: object  # FitResult or FusedResult

    @property
    def converged(self):
        return self.result.converged

    def to_dict(self):
        data = {'method': self.method, 'lambda1': self.lambda1, 'tau0': self.tau0}
        data.update({k: v for k, v in self.result.to_dict().items() if k != 'theta'})
        return data


def parse_method(method):
    """'basic:first' -> ('basic', 'first'); 'proposal' -> ('proposal', None)"""
    name, _, ref_spec = str(method).partition(':')
    if name not in METHODS:
        raise ParameterError(f'| parse_method(): unknown method {method!r}, choose from {METHODS}')
    if name == 'basic' and not ref_spec:
        ref_spec = 'first'
    return name, (ref_spec or None)


def build_method_design(ds, method, tau0=1.0, refs=None):
    if method == 'proposal':
        return build_design_overparam(ds, TauWeights.from_rule(tau0, ds.n_k))
    if method == 'basic':
        assert isinstance(refs, ReferenceVector)
        return build_design_basic(ds, refs, TauWeights.from_rule(tau0, ds.n_k))
    if method == 'pooled':
        return build_design_pooled(ds)
    if method == 'independent':
        return build_design_independent(ds)
    raise ParameterError(f'| build_method_design(): {method!r} has no augmented design')


def decompose_by_mode(beta, rtol):
    """mu_j = per-predictor mode of beta_{.,j}; entries within rtol of the mode are snapped onto it"""
    mu, _ = mode_reference(beta, rtol)
    gamma = np.where(is_equal(beta, mu[None, :], rtol), 0.0, beta - mu[None, :])
    return CoefficientDecomposition.from_parts(mu, gamma)


def fit_method(ds, method, lambda1, tau0=1.0, refs=None, options=None, warm=None):
    """fit one method at one (lambda1, tau0); `warm` is a previous MethodFit for a warm start"""
    options = SolverOptions() if options is None else options
    if method == 'fused':
        lambda2 = fused_lambda2(lambda1, tau0, ds.K)
        result = fused_clique_gaussian(ds, lambda1, lambda2, options, None if warm is None else warm.result.state)
        return MethodFit(method, decompose_by_mode(result.beta, options.fused_tol), lambda1, tau0, result)

    design = build_method_design(ds, method, tau0, refs)
    solver = build_solver(design, options)
    theta0 = intercept0 = None
    if warm is not None:
        theta0, intercept0 = warm.result.theta, warm.result.intercept
    result = solver.fit(design, lambda1, theta0, intercept0 if design.response_kind == 'binary' else None)
    return MethodFit(method, theta_to_decomposition(result.theta, design.layout, design.tau), lambda1, tau0, result)
