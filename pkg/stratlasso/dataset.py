import os
import json
import numpy as np
import pandas as pd
from dataclasses import dataclass, asdict
from numpy.random import Generator, Philox, SeedSequence
from scipy.linalg import toeplitz, cholesky

"""[StratLasso.2026.10.19]"""

NONE_REF = -1  # reference sentinel: the mode is 0 and no stratum holds 0
EQUAL_RTOL = 1e-9  # |a-b| <= rtol*max(1,|a|,|b|)

'''sub-seed purposes of generate_scenario()'''
SEED_DESIGN = 0
SEED_SUPPORT = 1
SEED_DELTA = 2
SEED_NOISE = 3


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class ParameterError(ValueError):
    pass


class StratifiedDataset:  # [StratLasso.2026.10.19]
    def __init__(self, strata, response_kind='gaussian', stratum_labels=None, predictor_names=None):
        """K per-stratum blocks (X^(k), y^(k)) sharing the same p predictors.

        `list strata` sequence of (X: n_k×p, y: n_k) pairs, in stratum order
        `str response_kind` 'gaussian' or 'binary' (y in {0,1})
        `list stratum_labels` original labels, default '1'..'K'
        `list predictor_names` column names, default 'x1'..'xp'
        """
        if len(strata) == 0:
            raise ParameterError('| StratifiedDataset: need at least one stratum')
        if response_kind not in {'gaussian', 'binary'}:
            raise ParameterError(f'| StratifiedDataset: unknown response_kind {response_kind!r}')

        self.strata = list()
        p = np.asarray(strata[0][0]).shape[-1]
        for k, (x, y) in enumerate(strata):
            x = np.array(x, dtype=np.float64, ndmin=2)
            y = np.array(y, dtype=np.float64).ravel()
            if x.shape[1] != p:
                raise ParameterError(f'| StratifiedDataset: stratum {k} has {x.shape[1]} predictors, expected {p}')
            if x.shape[0] != y.shape[0] or x.shape[0] < 1:
                raise ParameterError(f'| StratifiedDataset: stratum {k} has X rows {x.shape[0]}, y length {y.shape[0]}')
            if response_kind == 'binary' and not np.isin(y, (0.0, 1.0)).all():
                raise ParameterError(f'| StratifiedDataset: binary response in stratum {k} is not in {{0,1}}')
            x.setflags(write=False)
            y.setflags(write=False)
            self.strata.append((x, y))

        self.response_kind = response_kind
        self.K = len(self.strata)
        self.p = int(p)
        self.n_k = np.array([x.shape[0] for x, _ in self.strata], dtype=np.int64)
        self.n = int(self.n_k.sum())
        self.row_offsets = np.concatenate(([0], np.cumsum(self.n_k)))

        self.stratum_labels = [str(k + 1) for k in range(self.K)] if stratum_labels is None else list(stratum_labels)
        self.predictor_names = [f'x{j + 1}' for j in range(self.p)] \
            if predictor_names is None else list(predictor_names)
        assert len(self.stratum_labels) == self.K
        assert len(self.predictor_names) == self.p

    def pooled_x(self):
        return np.vstack([x for x, _ in self.strata])

    def pooled_y(self):
        return np.concatenate([y for _, y in self.strata])

    def take(self, rows_list):
        """new dataset keeping rows `rows_list[k]` of every stratum k"""
        strata = [(x[rows], y[rows]) for (x, y), rows in zip(self.strata, rows_list)]
        return StratifiedDataset(strata, self.response_kind, self.stratum_labels, self.predictor_names)

    def with_strata(self, strata):
        return StratifiedDataset(strata, self.response_kind, self.stratum_labels, self.predictor_names)


@dataclass
class GroundTruth:
    beta: np.ndarray  # K×p, row k holds beta*_k
    mode_vector: np.ndarray  # p, most frequent value of {0, beta*_{.,j}}
    optimal_reference: np.ndarray  # p, stratum holding the mode, NONE_REF otherwise
    noise_sd: float = 1.0
    support: np.ndarray = None  # P0, the predictors with a nonzero coefficient in some stratum

    @classmethod
    def from_beta(cls, beta, noise_sd=1.0):
        beta = np.array(beta, dtype=np.float64, ndmin=2)
        mode_vector, optimal_reference = mode_reference(beta)
        support = np.flatnonzero(np.any(beta != 0, axis=0))
        return cls(beta, mode_vector, optimal_reference, float(noise_sd), support)

    def to_dict(self):
        return {'beta': self.beta.tolist(),
                'mode_vector': self.mode_vector.tolist(),
                'optimal_reference': self.optimal_reference.tolist(),
                'noise_sd': self.noise_sd,
                'support': None if self.support is None else self.support.tolist()}

    @classmethod
    def from_json(cls, path):
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
        if 'beta' not in data:
            raise SchemaError(f'| GroundTruth.from_json(): key "beta" missing in {path}')
        return cls.from_beta(data['beta'], data.get('noise_sd', 1.0))


@dataclass
class SimulationScenario:
    K: int = 10  # number of strata
    p: int = 20  # number of predictors
    n_k: object = 50  # observations per stratum: int, or a sequence of K ints
    support_size: int = 10  # |P0|
    d_H: int = 1  # heterogeneity level
    delta_mode: str = 'constant'  # 'constant', 'random', or 'grouped'
    correlation_base: float = 0.5  # Toeplitz rho
    snr: float = 1.0  # overall signal-to-noise ratio
    seed: int = 0  # master seed of every draw
    group_scale: float = None  # 'grouped' only: the step a, None means sqrt(K)/3

    def sizes(self):
        if np.ndim(self.n_k) == 0:
            return np.full(self.K, int(self.n_k), dtype=np.int64)
        return np.array(self.n_k, dtype=np.int64)

    def check(self):
        if self.K < 1 or self.p < 1:
            raise ParameterError(f'| SimulationScenario: need K >= 1 and p >= 1, got K={self.K}, p={self.p}')
        sizes = self.sizes()
        if sizes.shape != (self.K,) or (sizes < 1).any():
            raise ParameterError(f'| SimulationScenario: n_k={self.n_k} must give K={self.K} counts >= 1')
        if not 0 <= self.support_size <= self.p:
            raise ParameterError(f'| SimulationScenario: support_size={self.support_size} not in [0, p={self.p}]')
        if not 0 <= self.d_H <= self.K:
            raise ParameterError(f'| SimulationScenario: d_H={self.d_H} not in [0, K={self.K}]')
        if self.delta_mode not in {'constant', 'random', 'grouped'}:
            raise ParameterError(f'| SimulationScenario: unknown delta_mode {self.delta_mode!r}')
        if not 0 <= self.correlation_base < 1:
            raise ParameterError(f'| SimulationScenario: correlation_base={self.correlation_base} not in [0, 1)')
        if self.snr <= 0:
            raise ParameterError(f'| SimulationScenario: snr={self.snr} must be positive')
        if self.seed < 0:
            raise ParameterError(f'| SimulationScenario: seed={self.seed} must be nonnegative')

    def to_dict(self):
        data = asdict(self)
        if np.ndim(self.n_k) != 0:
            data['n_k'] = [int(n) for n in self.n_k]
        return data

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f'| SimulationScenario: unknown fields {sorted(unknown)}')
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        with open(path, encoding='utf-8') as f:
            return cls.from_dict(json.load(f))


def is_equal(a, b, rtol=EQUAL_RTOL):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) <= rtol * np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def get_rng(seed, *spawn_key):
    """Philox stream for one (purpose, stratum, ...) key of a master seed"""
    return Generator(Philox(SeedSequence(int(seed), spawn_key=tuple(int(i) for i in spawn_key))))


"""load and export"""


def load_csv(path, stratum_column='stratum', response_column='y', response_kind='gaussian'):
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except UnicodeDecodeError as error:
        raise ParseError(f'| load_csv(): {path} is not valid UTF-8 ({error.reason} at byte {error.start})')

    for column in (stratum_column, response_column):
        if column not in df.columns:
            raise SchemaError(f'| load_csv(): column {column!r} not found in {path}')
    predictor_names = [c for c in df.columns if c not in {stratum_column, response_column}]
    if len(predictor_names) == 0:
        raise SchemaError(f'| load_csv(): no predictor column in {path}')

    values = dict()
    for column in [response_column, ] + predictor_names:
        parsed = pd.to_numeric(df[column].str.strip(), errors='coerce')
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            raise ParseError(f'| load_csv(): non-numeric value {df[column].iloc[row]!r} '
                             f'in column {column!r} at row {row}')
        values[column] = parsed.to_numpy(dtype=np.float64)

    x_all = np.column_stack([values[c] for c in predictor_names])
    y_all = values[response_column]
    labels = pd.unique(df[stratum_column])  # order of first appearance

    strata = list()
    for label in labels:
        mask = (df[stratum_column] == label).to_numpy()
        strata.append((x_all[mask], y_all[mask]))
    return StratifiedDataset(strata, response_kind, [str(i) for i in labels], predictor_names)


def export_csv(ds, path, stratum_column='stratum', response_column='y'):
    frames = list()
    for label, (x, y) in zip(ds.stratum_labels, ds.strata):
        frame = pd.DataFrame(x, columns=ds.predictor_names)
        frame.insert(0, response_column, y)
        frame.insert(0, stratum_column, label)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False, float_format='%.12g', encoding='utf-8')


class ScalingRecord:
    def __init__(self, scale, zero_columns):
        self.scale = scale  # K×p, X_standardized = X * scale
        self.zero_columns = zero_columns  # (k, j) left unscaled

    def back_transform(self, beta):
        """coefficients of the standardized data -> coefficients of the original data"""
        return np.asarray(beta) * self.scale


def standardize(ds, if_print=True):
    scale = np.ones((ds.K, ds.p))
    zero_columns = list()
    strata = list()
    for k, (x, y) in enumerate(ds.strata):
        norm = np.sqrt((x ** 2).sum(axis=0) / ds.n_k[k])
        if_zero = norm == 0
        factor = np.ones(ds.p)
        factor[~if_zero] = 1.0 / norm[~if_zero]
        factor[np.abs(factor - 1.0) <= 1e-12] = 1.0  # keeps a standardized input bit-identical

        for j in np.flatnonzero(if_zero):
            zero_columns.append((k, int(j)))
            if if_print:
                print(f"| standardize(): WARNING zero column {ds.predictor_names[j]!r} "
                      f"in stratum {ds.stratum_labels[k]!r}, left unscaled")
        scale[k] = factor
        strata.append((x * factor, y))
    return ds.with_strata(strata), ScalingRecord(scale, zero_columns)


"""ground truth and scenarios"""


def mode_reference(beta, rtol=EQUAL_RTOL):
    """Per predictor j, the most frequent value of {0, beta_{0,j}, ..., beta_{K-1,j}}.

    Ties prefer 0, then the smallest |value|, then the smallest value.
    Returns (mode_vector, optimal_reference), the reference being the first stratum
    holding the mode, or NONE_REF when the mode is 0 and no stratum is 0.
    """
    beta = np.array(beta, dtype=np.float64, ndmin=2)
    p = beta.shape[1]
    mode_vector = np.zeros(p)
    optimal_reference = np.full(p, NONE_REF, dtype=np.int64)
    for j in range(p):
        values = np.concatenate(([0.0], beta[:, j]))
        counts = is_equal(values[:, None], values[None, :], rtol).sum(axis=1)
        tied = values[counts == counts.max()]
        if is_equal(tied, 0.0, rtol).any():
            mode = 0.0
        else:
            mode = tied[np.lexsort((tied, np.abs(tied)))[0]]
        matches = np.flatnonzero(is_equal(beta[:, j], mode, rtol))
        mode_vector[j] = mode
        if matches.size:
            optimal_reference[j] = matches[0]
    return mode_vector, optimal_reference


def generate_scenario(s):
    """Synthetic strata: Toeplitz Gaussian rows, P0 split in two halves with opposite
    heterogeneity patterns, noise level set from the realized signal and `snr`."""
    s.check()
    K, p = s.K, s.p
    sizes = s.sizes()
    sqrt_k = np.sqrt(K)

    '''design'''
    sigma_x = toeplitz(s.correlation_base ** np.arange(p))
    chol = cholesky(sigma_x, lower=True)
    xs = [get_rng(s.seed, SEED_DESIGN, k).standard_normal((sizes[k], p)) @ chol.T for k in range(K)]

    '''support and its two halves'''
    rng = get_rng(s.seed, SEED_SUPPORT)
    support = np.sort(rng.choice(p, size=s.support_size, replace=False))
    shuffled = rng.permutation(support)
    half = (s.support_size + 1) // 2
    first = np.sort(shuffled[:half])
    second = np.sort(shuffled[half:])

    '''deviations'''
    rng = get_rng(s.seed, SEED_DELTA)
    delta_abs = rng.uniform(sqrt_k / 2, 2 * sqrt_k, size=(K, p))
    delta_sign = np.where(rng.random((K, p)) < 0.5, -1.0, 1.0)
    delta = np.full((K, p), sqrt_k) if s.delta_mode == 'constant' else delta_abs * delta_sign

    beta = np.zeros((K, p))
    if s.delta_mode == 'grouped':
        step = sqrt_k / 3 if s.group_scale is None else s.group_scale
        group = (np.arange(K) * 4) // K
        beta[:, support] = (np.array([-step, 0.0, step, 2 * step])[group])[:, None]
    elif s.d_H == 0:
        beta[:, support] = 1.0
    else:
        if_low = (np.arange(K) < s.d_H)[:, None]
        beta[:, first] = np.where(if_low, 1.0 + delta[:, first], 1.0)
        beta[:, second] = np.where(if_low, 1.0, 1.0 + delta[:, second])

    '''noise'''
    signal = sum(float(((x @ beta[k]) ** 2).sum()) for k, x in enumerate(xs)) / sizes.sum()
    noise_sd = float(np.sqrt(signal / s.snr)) if signal > 0 else 1.0
    ys = [xs[k] @ beta[k] + noise_sd * get_rng(s.seed, SEED_NOISE, k).standard_normal(sizes[k]) for k in range(K)]

    ds = StratifiedDataset(list(zip(xs, ys)))
    mode_vector, optimal_reference = mode_reference(beta)
    gt = GroundTruth(beta, mode_vector, optimal_reference, noise_sd, support)
    return ds, gt


def build_dataset(input_path=None, scenario=None, stratum_column='stratum', response_column='y',
                  response_kind='gaussian', truth_path=None, if_print=False):
    """CSV file or generated scenario -> (StratifiedDataset, GroundTruth or None)"""
    if scenario is not None:
        if isinstance(scenario, str):
            scenario = SimulationScenario.from_json(scenario) if os.path.exists(scenario) \
                else SimulationScenario.from_dict(json.loads(scenario))
        elif isinstance(scenario, dict):
            scenario = SimulationScenario.from_dict(scenario)
        ds, gt = generate_scenario(scenario)
    elif input_path is not None:
        ds = load_csv(input_path, stratum_column, response_column, response_kind)
        gt = None
    else:
        raise ParameterError('| build_dataset(): need an input CSV or a scenario')

    if truth_path is not None:
        gt = GroundTruth.from_json(truth_path)
        if gt.beta.shape != (ds.K, ds.p):
            raise SchemaError(f'| build_dataset(): truth shape {gt.beta.shape} != (K, p)=({ds.K}, {ds.p})')

    if if_print:
        get_dataset_info(ds, if_print=True)
    return ds, gt


def get_dataset_info(ds, if_print=True):
    info = {'K': ds.K, 'p': ds.p, 'n': ds.n, 'n_k': ds.n_k.tolist(), 'response_kind': ds.response_kind}
    if if_print:
        print(f"| get_dataset_info(): K={ds.K}, p={ds.p}, n={ds.n}, "
              f"n_k=[{', '.join(str(n) for n in ds.n_k[:8])}{', ...' if ds.K > 8 else ''}], "
              f"response={ds.response_kind}")
    return info
