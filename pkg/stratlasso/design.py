import os
import json
import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass
from stratlasso.dataset import ParameterError, NONE_REF

"""[StratLasso.2026.10.19]"""

GRAM_DENSE_MAX = 4096  # keep X'X/n dense up to this many columns


class RepresentationError(ValueError):
    pass


class ReferenceVector:
    def __init__(self, refs, K):
        refs = np.array(refs, dtype=np.int64).ravel()
        if ((refs < 0) | (refs >= K)).any():
            raise ParameterError(f'| ReferenceVector: entries must lie in [0, {K}), got {refs.tolist()}')
        self.refs = refs
        self.K = K

    @classmethod
    def uniform(cls, r, K, p):
        return cls(np.full(p, r), K)

    @classmethod
    def from_spec(cls, spec, K, p, gt=None):
        """'first', 'last', 'oracle', one stratum index 'r', or p comma-separated indices"""
        spec = str(spec).strip()
        if spec == 'first':
            return cls.uniform(0, K, p)
        if spec == 'last':
            return cls.uniform(K - 1, K, p)
        if spec == 'oracle':
            if gt is None:
                raise ParameterError('| ReferenceVector: basic:oracle needs a ground truth (--truth or --scenario)')
            # mode 0 held by no stratum: no reference reproduces it, stratum 0 stands in
            refs = np.where(gt.optimal_reference == NONE_REF, 0, gt.optimal_reference)
            return cls(refs, K)
        try:
            values = [int(i) for i in spec.split(',')]
        except ValueError:
            raise ParameterError(f'| ReferenceVector: cannot read reference spec {spec!r}')
        if len(values) == 1:
            return cls.uniform(values[0], K, p)
        if len(values) != p:
            raise ParameterError(f'| ReferenceVector: {len(values)} references given for p={p} predictors')
        return cls(values, K)


class TauWeights:
    def __init__(self, tau, tau0=None):
        tau = np.array(tau, dtype=np.float64).ravel()
        if not (np.isfinite(tau).all() and (tau > 0).all()):
            raise ParameterError(f'| TauWeights: every tau_k must be positive and finite, got {tau.tolist()}')
        self.tau = tau
        self.tau0 = tau0  # None when tau does not follow the default rule

    @classmethod
    def from_rule(cls, tau0, n_k):
        """tau_k = tau0 * sqrt(n_k / n)"""
        if not tau0 > 0:
            raise ParameterError(f'| TauWeights: tau0={tau0} must be positive')
        n_k = np.asarray(n_k, dtype=np.float64)
        return cls(tau0 * np.sqrt(n_k / n_k.sum()), tau0)

    def to_dict(self):
        return {'tau0': self.tau0, 'tau': self.tau.tolist()}


class DesignLayout:
    def __init__(self, tags, K, p, kind, refs=None):
        """Column tags of an augmented design.

        `list tags` one (block, k, j) per column, block in {'mu', 'gamma'}, k=-1 for 'mu'
        `str kind` 'overparam', 'basic', 'pooled' or 'independent'
        `array refs` reference stratum per predictor ('basic' only)
        """
        self.tags = [(str(b), int(k), int(j)) for b, k, j in tags]
        self.K = K
        self.p = p
        self.m = len(self.tags)
        self.kind = kind
        self.refs = None if refs is None else np.asarray(refs, dtype=np.int64)

        self.col_mu = np.full(p, -1, dtype=np.int64)
        self.col_gamma = np.full((K, p), -1, dtype=np.int64)
        for col, (block, k, j) in enumerate(self.tags):
            if block == 'mu':
                self.col_mu[j] = col
            else:
                self.col_gamma[k, j] = col

    def to_dict(self):
        return {'kind': self.kind, 'K': self.K, 'p': self.p,
                'refs': None if self.refs is None else self.refs.tolist(),
                'columns': [{'block': b, 'k': None if k < 0 else k, 'j': j} for b, k, j in self.tags]}

    @classmethod
    def from_dict(cls, data):
        tags = [(c['block'], -1 if c['k'] is None else c['k'], c['j']) for c in data['columns']]
        return cls(tags, data['K'], data['p'], data['kind'], data['refs'])

    def save_or_load_layout(self, cwd, if_save):
        path = f"{cwd}/layout.json"
        if if_save:
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(self.to_dict(), f, indent=1)
            return self
        elif os.path.exists(path):
            with open(path, encoding='utf-8') as f:
                return DesignLayout.from_dict(json.load(f))


class AugmentedDesign:  # [StratLasso.2026.10.19]
    def __init__(self, ds, mat, layout, tau):
        """The pooled lasso problem (Y, X_aug) of a stratified dataset.

        X_aug is stored column-major (scipy CSC). Column gamma(k, j) holds X_j^(k)/tau_k on the
        rows of stratum k, so theta stores tau_k * gamma_k and every column gets the same penalty.
        """
        self.y = ds.pooled_y()
        self.mat = mat.tocsc()
        self.layout = layout
        self.tau = tau
        self.response_kind = ds.response_kind
        self.xs = [x for x, _ in ds.strata]  # matrix-free products
        self.n = ds.n
        self.m = layout.m
        self.K = ds.K
        self.p = ds.p
        self.row_offsets = ds.row_offsets
        assert self.mat.shape == (self.n, self.m)

        self._gram = None

    def dot(self, theta):
        """X_aug @ theta without the sparse matrix"""
        theta = np.asarray(theta, dtype=np.float64)
        assert theta.shape == (self.m,)
        mu = np.where(self.layout.col_mu >= 0, theta[self.layout.col_mu], 0.0)
        out = np.empty(self.n)
        for k, x in enumerate(self.xs):
            cols = self.layout.col_gamma[k]
            gamma = np.where(cols >= 0, theta[cols], 0.0) / self.tau.tau[k]
            out[self.row_offsets[k]:self.row_offsets[k + 1]] = x @ (mu + gamma)
        return out

    def rdot(self, r):
        """X_aug.T @ r without the sparse matrix"""
        r = np.asarray(r, dtype=np.float64)
        assert r.shape == (self.n,)
        out = np.zeros(self.m)
        mu = np.zeros(self.p)
        for k, x in enumerate(self.xs):
            xr = x.T @ r[self.row_offsets[k]:self.row_offsets[k + 1]]
            mu += xr
            cols = self.layout.col_gamma[k]
            out[cols[cols >= 0]] = xr[cols >= 0] / self.tau.tau[k]
        cols = self.layout.col_mu
        out[cols[cols >= 0]] = mu[cols >= 0]
        return out

    def get_gram(self):
        """(X'X/n, X'y/n, diag(X'X/n)); dense for small m, CSC otherwise"""
        if self._gram is None:
            gram = (self.mat.T @ self.mat).tocsc() / self.n
            if self.m <= GRAM_DENSE_MAX:
                gram = gram.toarray()
                diag = np.diag(gram).copy()
            else:
                diag = gram.diagonal()
            xty = self.mat.T @ self.y / self.n
            self._gram = (gram, xty, diag)
        return self._gram


@dataclass
class CoefficientDecomposition:
    mu: np.ndarray  # p
    gamma: np.ndarray  # K×p
    beta: np.ndarray  # K×p, beta[k] = mu + gamma[k]
    tau: TauWeights = None

    @classmethod
    def from_parts(cls, mu, gamma, tau=None):
        mu = np.asarray(mu, dtype=np.float64)
        gamma = np.asarray(gamma, dtype=np.float64)
        return cls(mu, gamma, mu[None, :] + gamma, tau)


"""builders"""


def build_pooled_response(ds):
    return ds.pooled_y()


def _build_design(ds, tau, kind, if_mu, gamma_mask, refs=None):
    K, p = ds.K, ds.p
    blocks = list()
    tags = list()
    if if_mu:
        blocks.append(sp.csc_matrix(ds.pooled_x()))
        tags.extend(('mu', -1, j) for j in range(p))
    if gamma_mask is not None and gamma_mask.any():
        gamma = sp.block_diag([x / tau.tau[k] for k, (x, _) in enumerate(ds.strata)], format='csc')
        keep = gamma_mask.ravel()  # row-major: gamma(0, .), gamma(1, .), ...
        blocks.append(gamma[:, np.flatnonzero(keep)])
        tags.extend(('gamma', k, j) for k in range(K) for j in range(p) if gamma_mask[k, j])
    mat = sp.hstack(blocks, format='csc')
    layout = DesignLayout(tags, K, p, kind, None if refs is None else refs.refs)
    return AugmentedDesign(ds, mat, layout, tau)


def _check_tau(ds, tau):
    if tau.tau.shape != (ds.K,):
        raise ParameterError(f'| design: {tau.tau.shape[0]} tau weights for K={ds.K} strata')


def build_design_overparam(ds, tau):
    _check_tau(ds, tau)
    return _build_design(ds, tau, 'overparam', True, np.ones((ds.K, ds.p), dtype=bool))


def build_design_basic(ds, refs, tau):
    _check_tau(ds, tau)
    if refs.refs.shape != (ds.p,) or refs.K != ds.K:
        raise ParameterError(f'| build_design_basic(): reference vector does not fit K={ds.K}, p={ds.p}')
    mask = np.arange(ds.K)[:, None] != refs.refs[None, :]
    return _build_design(ds, tau, 'basic', True, mask, refs)


def build_design_pooled(ds):
    """one lasso on the pooled strata: mu columns only"""
    return _build_design(ds, TauWeights(np.ones(ds.K)), 'pooled', True, None)


def build_design_independent(ds):
    """K lassos with a common per-stratum penalty: gamma columns only, tau_k = n_k / n"""
    tau = TauWeights(ds.n_k / ds.n)
    return _build_design(ds, tau, 'independent', False, np.ones((ds.K, ds.p), dtype=bool))


"""theta <-> decomposition"""


def theta_to_decomposition(theta, layout, tau):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (layout.m,):
        raise ParameterError(f'| theta_to_decomposition(): theta length {theta.size} != {layout.m} columns')
    col_mu = layout.col_mu
    col_gamma = layout.col_gamma
    mu = np.where(col_mu >= 0, theta[col_mu], 0.0)
    gamma = np.where(col_gamma >= 0, theta[col_gamma], 0.0) / tau.tau[:, None]
    return CoefficientDecomposition.from_parts(mu, gamma, tau)


def decomposition_to_theta(dec, layout):
    col_mu = layout.col_mu
    col_gamma = layout.col_gamma
    if np.any((col_mu < 0) & (dec.mu != 0)):
        raise RepresentationError(f'| decomposition_to_theta(): nonzero mu outside the {layout.kind} layout')
    if np.any((col_gamma < 0) & (dec.gamma != 0)):
        bad = np.argwhere((col_gamma < 0) & (dec.gamma != 0))[0]
        raise RepresentationError(f'| decomposition_to_theta(): nonzero gamma at (k={bad[0]}, j={bad[1]}) '
                                  f'has no column in the {layout.kind} layout')
    theta = np.zeros(layout.m)
    theta[col_mu[col_mu >= 0]] = dec.mu[col_mu >= 0]
    scaled = dec.gamma * dec.tau.tau[:, None]
    theta[col_gamma[col_gamma >= 0]] = scaled[col_gamma >= 0]
    return theta
