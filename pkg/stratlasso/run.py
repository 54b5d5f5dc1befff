import os
import sys
import json
import time
import argparse
import itertools
import numpy as np
import pandas as pd
import scipy.sparse as sp
import multiprocessing as mp
from multiprocessing.connection import wait

from stratlasso.dataset import SchemaError, ParseError, ParameterError, SimulationScenario, is_equal
from stratlasso.dataset import build_dataset, generate_scenario, standardize, get_dataset_info
from stratlasso.design import RepresentationError, ReferenceVector, TauWeights
from stratlasso.design import build_design_overparam, build_design_basic
from stratlasso.solver import SolverOptions, parse_method, build_method_design, fit_method
from stratlasso.theory import ConditionError, RankError, NO_NONNULL
from stratlasso.theory import support_sets_from_truth, heterogeneity_degrees, ic_generic, ic_general
from stratlasso.theory import tau0_feasible_interval, ic_orthogonal_balanced, balanced_recovery_constants
from stratlasso.theory import recovery_thresholds, special_case_checks
from stratlasso.evaluator import Evaluator, MetricsRecord, cross_validate, double_cv_prediction_error
from stratlasso.evaluator import support_estimate, support_accuracy, prediction_error, log_prediction_error
from stratlasso.evaluator import save_heatmap_svg

"""[StratLasso.2026.10.19]"""

COMMANDS = ('fit', 'cv', 'simulate', 'ic-check', 'transform')
SIMULATE_METHODS = ('proposal', 'basic:first', 'basic:oracle', 'fused')
BLAS_THREAD_VARS = ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS', 'VECLIB_MAXIMUM_THREADS')
ORTHOGONAL_TOL = 1e-6

'''exit codes'''
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_THEORY = 4


class Arguments:  # [StratLasso.2026.10.19]
    def __init__(self, command='fit'):
        self.command = command  # fit | cv | simulate | ic-check | transform

        '''Arguments for data'''
        self.input = None  # CSV path with one row per observation
        self.scenario = None  # JSON path, JSON text or dict of a SimulationScenario, used instead of `input`
        self.truth = None  # JSON with "beta" (K×p), the ground truth of `input`
        self.stratum_column = 'stratum'
        self.response_column = 'y'
        self.response_kind = 'gaussian'  # 'gaussian' or 'binary'
        self.if_standardize = True  # rescale every column to ||X_j^(k)||^2 = n_k before fitting

        '''Arguments for the estimator'''
        self.method = None  # comma list, None means 'proposal' (SIMULATE_METHODS for simulate)
        self.lambda1 = None  # None means cross-validated (lambda1, tau0)
        self.tau0 = 1.0  # tau_k = tau0 * sqrt(n_k / n)
        self.tau = None  # free tau_k per stratum, overrides tau0 (ic-check)
        self.refs = 'first'  # reference spec of the basic layout in ic-check
        self.folds = 5  # CV folds, drawn within each stratum
        self.if_double = False  # cv: outer folds estimate the prediction error
        self.solver = dict()  # SolverOptions overrides

        '''Arguments for the simulation grid'''
        self.K = 10  # number of strata
        self.n_k = (50,)  # one cell per combination of n_k, p, d_H and delta_mode
        self.p = (20,)
        self.d_H = (1, 3)
        self.delta_modes = ('constant', 'random')
        self.support_size = 10  # |P0|, capped at p
        self.correlation_base = 0.5
        self.snr = 1.0
        self.replicates = 10

        '''Arguments for device'''
        self.threads = int(os.environ.get('STRATLASSO_THREADS', 1))  # simulate: number of worker processes
        self.seed = 0  # master seed of folds and replicates

        '''Arguments for save'''
        self.cwd = None  # output directory, None means './stratlasso_<command>'
        self.if_remove = False  # remove the cwd folder? (True, False, None:ask me)
        self.if_print = True

    def update(self, data):
        unknown = [key for key in data if not hasattr(self, key)]
        if unknown:
            raise SchemaError(f'| Arguments: unknown config keys {unknown}')
        for key, value in data.items():
            setattr(self, key, tuple(value) if isinstance(value, list) and key != 'tau' else value)
        return self

    def to_dict(self):
        return {key: (list(value) if isinstance(value, tuple) else value) for key, value in vars(self).items()}

    @classmethod
    def from_json(cls, path, command='fit'):
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise SchemaError(f'| Arguments.from_json(): {path} does not hold a JSON object')
        return cls(command).update(data)

    def get_methods(self):
        if self.method is None:
            return list(SIMULATE_METHODS) if self.command == 'simulate' else ['proposal']
        methods = [m.strip() for m in str(self.method).split(',') if m.strip()]
        for method in methods:
            parse_method(method)
        return methods

    def get_solver_options(self):
        return SolverOptions.from_dict(dict(self.solver))

    def init_before_running(self):
        '''check'''
        assert self.command in COMMANDS
        if self.command != 'simulate' and self.input is None and self.scenario is None:
            raise ParameterError(f'| Arguments: {self.command} needs --input or --scenario')
        if self.lambda1 is not None and not float(self.lambda1) >= 0:
            raise ParameterError(f'| Arguments: lambda1={self.lambda1} must be nonnegative')
        if not float(self.tau0) > 0:
            raise ParameterError(f'| Arguments: tau0={self.tau0} must be positive')
        if not int(self.threads) >= 1:
            raise ParameterError(f'| Arguments: threads={self.threads} must be at least 1')
        if self.folds < 2:
            raise ParameterError(f'| Arguments: folds={self.folds} must be at least 2')
        if self.replicates < 1:
            raise ParameterError(f'| Arguments: replicates={self.replicates} must be at least 1')
        self.get_methods()
        self.get_solver_options()

        '''auto set'''
        if self.cwd is None:
            self.cwd = f"./stratlasso_{self.command.replace('-', '_')}"

        '''remove history'''
        if self.if_remove is None:
            self.if_remove = bool(input(f"| PRESS 'y' to REMOVE: {self.cwd}? ") == 'y')
        if self.if_remove:
            import shutil
            shutil.rmtree(self.cwd, ignore_errors=True)
            if self.if_print:
                print(f"| Remove cwd: {self.cwd}")
        os.makedirs(self.cwd, exist_ok=True)
        if not os.access(self.cwd, os.W_OK):
            raise ParameterError(f'| Arguments: output directory {self.cwd} is not writable')


'''output'''


def _round12(value):
    """12 significant digits, numpy scalars unwrapped, non-finite floats as null"""
    if isinstance(value, dict):
        return {str(k): _round12(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_round12(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(f'{value:.12g}') if np.isfinite(value) else None
    return value


def save_json(data, path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(_round12(data), f, indent=1)
        f.write('\n')
    return path


def load_data(args):
    ds, gt = build_dataset(args.input, args.scenario, args.stratum_column, args.response_column,
                           args.response_kind, args.truth, args.if_print)
    scaling = None
    if args.if_standardize:
        ds, scaling = standardize(ds, args.if_print)
    return ds, gt, scaling


def get_refs(ds, ref_spec, gt):
    return ReferenceVector.from_spec(ref_spec, ds.K, ds.p, gt) if ref_spec is not None else None


def fit_one(ds, method, args, options, gt):
    """MethodFit at the given lambda1, or at the cross-validated pair when lambda1 is None"""
    name, ref_spec = parse_method(method)
    if name == 'fused' and ds.response_kind == 'binary':
        raise ParameterError('| fit: the fused comparator is Gaussian only')
    refs = get_refs(ds, ref_spec, gt)
    if args.lambda1 is None:
        cv = cross_validate(ds, name, None, None, args.folds, args.seed, refs, options, if_print=args.if_print)
        return cv.fit, cv
    return fit_method(ds, name, float(args.lambda1), float(args.tau0), refs, options), None


'''fit and cv'''


def run_fit(args):
    args.init_before_running()
    ds, gt, scaling = load_data(args)
    options = args.get_solver_options()

    frames, reports, heatmaps = list(), list(), list()
    if_converged = True
    for method in args.get_methods():
        method_fit, cv = fit_one(ds, method, args, options, gt)
        dec = method_fit.decomposition
        beta_original = dec.beta if scaling is None else scaling.back_transform(dec.beta)
        frames.append(pd.DataFrame({
            'method': method,
            'stratum': np.repeat(ds.stratum_labels, ds.p),
            'predictor': np.tile(ds.predictor_names, ds.K),
            'beta': dec.beta.ravel(),
            'mu': np.tile(dec.mu, ds.K),
            'gamma': dec.gamma.ravel(),
            'beta_original': np.asarray(beta_original).ravel(),
        }))
        report = method_fit.to_dict()
        report['method'] = method
        report['support'] = support_estimate(dec).to_dict()
        if cv is not None:
            report['cv'] = {'best': {'lambda1': cv.best[0], 'tau0': cv.best[1]}, 'folds': cv.folds,
                            'seed': cv.seed, 'n_unconverged': cv.n_unconverged}
        reports.append(report)
        heatmaps.append((method, beta_original))
        if_converged &= bool(method_fit.converged)
        if args.if_print:
            print(f"| run_fit(): {method:<14} lambda1={method_fit.lambda1:.6g} tau0={method_fit.tau0:g} "
                  f"converged={method_fit.converged} flags={report.get('flags')}")

    pd.concat(frames, ignore_index=True).to_csv(f'{args.cwd}/coefficients.csv', index=False, float_format='%.12g')
    save_json({'dataset': get_dataset_info(ds, if_print=False), 'converged': if_converged, 'fits': reports},
              f'{args.cwd}/fit.json')

    if gt is not None:
        heatmaps.append(('truth', gt.beta))
    save_heatmap_svg([m for _, m in heatmaps], [label for label, _ in heatmaps], f'{args.cwd}/heatmap.svg',
                     ds.predictor_names, ds.stratum_labels)
    if not if_converged and args.if_print:
        print(f"| run_fit(): WARNING a fit did not converge, see {args.cwd}/fit.json")
    return EXIT_OK if if_converged else EXIT_NOT_CONVERGED


def run_cv(args):
    args.init_before_running()
    ds, gt, _ = load_data(args)
    options = args.get_solver_options()

    results = list()
    if_converged = True
    for method in args.get_methods():
        name, ref_spec = parse_method(method)
        refs = get_refs(ds, ref_spec, gt)
        cv = cross_validate(ds, name, None, None, args.folds, args.seed, refs, options, if_print=args.if_print)
        result = cv.to_dict()
        result['method'] = method
        result['fit'] = cv.fit.to_dict()
        if args.if_double:
            error, fold_errors = double_cv_prediction_error(ds, name, args.folds, args.seed, refs, options)
            result['double_cv'] = {'prediction_error': error, 'fold_errors': fold_errors}
            if args.if_print:
                print(f"| run_cv(): {method} double CV prediction error {error:.6g}")
        results.append(result)
        if_converged &= bool(cv.fit.converged)

    save_json({'dataset': get_dataset_info(ds, if_print=False), 'results': results}, f'{args.cwd}/cv.json')
    return EXIT_OK if if_converged else EXIT_NOT_CONVERGED


'''simulate'''


def get_cells(args):
    cells = list()
    for n_k, p, d_H, delta_mode in itertools.product(args.n_k, args.p, args.d_H, args.delta_modes):
        cells.append({'n_k': int(n_k), 'p': int(p), 'd_H': int(d_H), 'delta_mode': str(delta_mode)})
    return cells


def get_replicate_seed(master_seed, cell_id, replicate):
    return int(np.random.SeedSequence(int(master_seed), spawn_key=(cell_id, replicate)).generate_state(1)[0])


def get_scoring_truth(gt, name, refs):
    """true supports in the parametrization being fit: a basic fit is scored against its own references,
    including basic:oracle, which falls back to stratum 0 where the mode is 0 but no stratum is 0"""
    return support_sets_from_truth(gt, refs if name == 'basic' else None)


def run_replicate(args, job):
    """scenario draw, then every method with cross-validation -> list of MetricsRecord"""
    cell_id, cell, replicate, seed = job
    scenario = SimulationScenario(K=args.K, p=cell['p'], n_k=cell['n_k'],
                                  support_size=min(args.support_size, cell['p']), d_H=cell['d_H'],
                                  delta_mode=cell['delta_mode'], correlation_base=args.correlation_base,
                                  snr=args.snr, seed=seed)
    ds, gt = generate_scenario(scenario)
    options = args.get_solver_options()
    universe = gt.support
    records = list()
    for method_id, method in enumerate(args.get_methods()):
        record = MetricsRecord(cell_id, cell['n_k'], cell['p'], cell['d_H'], cell['delta_mode'],
                               replicate, seed, method, method_id=method_id)
        try:
            name, ref_spec = parse_method(method)
            refs = get_refs(ds, ref_spec, gt)
            cv = cross_validate(ds, name, None, None, args.folds, seed, refs, options)
            dec = cv.fit.decomposition

            truth = get_scoring_truth(gt, name, refs)
            est = support_estimate(dec)
            record.accuracy_T, record.accuracy_S = support_accuracy(est, truth, universe, ds.K)
            record.accuracy_T_full, record.accuracy_S_full = support_accuracy(est, truth, range(ds.p), ds.K)
            record.prediction_error = prediction_error(ds, gt.beta, dec.beta)
            record.log_prediction_error = log_prediction_error(record.prediction_error)
            record.lambda1, record.tau0 = cv.best
            record.converged = bool(cv.fit.converged)
        except (ValueError, ArithmeticError) as error:
            record.errors = f'{type(error).__name__}: {error}'
        records.append(record)
    return records


class PipeWorker:
    def __init__(self, worker_num):
        self.worker_num = worker_num
        self.pipes = [mp.Pipe() for _ in range(worker_num)]
        self.pipe1s = [pipe[1] for pipe in self.pipes]

    def run(self, args, worker_id):
        pipe0 = self.pipes[worker_id][0]
        while True:
            job = pipe0.recv()
            if job is None:
                break
            pipe0.send(run_replicate(args, job))


def run_simulate(args):
    args.init_before_running()
    cells = get_cells(args)
    jobs = [(cell_id, cell, replicate, get_replicate_seed(args.seed, cell_id, replicate))
            for cell_id, cell in enumerate(cells) for replicate in range(args.replicates)]
    for cell in cells:
        SimulationScenario(K=args.K, p=cell['p'], n_k=cell['n_k'], support_size=min(args.support_size, cell['p']),
                           d_H=cell['d_H'], delta_mode=cell['delta_mode'], correlation_base=args.correlation_base,
                           snr=args.snr).check()
    save_json({'arguments': args.to_dict(), 'cells': cells}, f'{args.cwd}/simulate.json')

    evaluator = Evaluator(args.cwd, args.if_print)
    worker_num = min(int(args.threads), len(jobs))

    # workers inherit single-threaded BLAS so every replicate computes the same bits
    for key in BLAS_THREAD_VARS:
        os.environ[key] = '1'
    mp.set_start_method(method='spawn', force=True)
    worker_pipe = PipeWorker(worker_num)
    process = [mp.Process(target=worker_pipe.run, args=(args, worker_id)) for worker_id in range(worker_num)]
    [p.start() for p in process]

    try:
        pending = iter(jobs)
        busy = dict()
        for pipe1 in worker_pipe.pipe1s:
            job = next(pending, None)
            if job is not None:
                pipe1.send(job)
                busy[pipe1] = job
        while busy:
            for pipe1 in wait(list(busy)):
                evaluator.record(pipe1.recv())
                job = next(pending, None)
                if job is None:
                    del busy[pipe1]
                else:
                    pipe1.send(job)
                    busy[pipe1] = job
        [pipe1.send(None) for pipe1 in worker_pipe.pipe1s]
        [p.join(timeout=60) for p in process]
    finally:
        process_safely_terminate(process)

    evaluator.save_or_load_recorder(if_save=True)
    n_errors = sum(bool(r.errors) for r in evaluator.recorder)
    if args.if_print and n_errors:
        print(f"| run_simulate(): WARNING {n_errors} method fits failed, see the errors column")
    return EXIT_OK


def process_safely_terminate(process):
    for p in process:
        try:
            if p.is_alive():
                p.kill()
        except OSError as e:
            print(e)
            pass


'''ic-check'''


def is_orthogonal_balanced(ds, tol=ORTHOGONAL_TOL):
    if (ds.n_k != ds.n_k[0]).any():
        return False
    return all(np.abs(x.T @ x / ds.n_k[k] - np.eye(ds.p)).max() <= tol for k, (x, _) in enumerate(ds.strata))


def _ic_report(design, J):
    if J.size == 0:  # empty support: max over all columns of an empty sum
        return {'lambda_min': None, 'c': 0.0, 'holds': True, 'gamma_slack': 1.0, 'singular': False,
                'empty_support': True}
    return ic_generic(design, J).to_dict()


def _thresholds_report(eta, gt, ds, tau0, gamma, c_min, sets):
    if gamma is None or c_min is None or not gamma > 0 or not c_min > 0:
        return None
    return recovery_thresholds(eta, gt.noise_sd, ds.n, ds.K, ds.p, tau0, gamma, c_min,
                               len(sets.S) + len(sets.T), ds.n_k).to_dict()


def run_ic_check(args):
    args.init_before_running()
    ds, gt = build_dataset(args.input, args.scenario, args.stratum_column, args.response_column,
                           args.response_kind, args.truth, args.if_print)
    if gt is None:
        raise ParameterError('| run_ic_check(): needs a ground truth (--truth or --scenario)')
    tau = TauWeights(args.tau) if args.tau is not None else TauWeights.from_rule(float(args.tau0), ds.n_k)
    if tau.tau.shape != (ds.K,):
        raise ParameterError(f'| run_ic_check(): {tau.tau.size} tau weights for K={ds.K} strata')
    refs = ReferenceVector.from_spec(args.refs, ds.K, ds.p, gt)
    report = {'tau': tau.to_dict(), 'refs': refs.refs.tolist()}
    exit_code = EXIT_OK

    '''generic constants of the basic and the overparametrized layouts'''
    degrees = heterogeneity_degrees(gt)
    report['heterogeneity'] = degrees.to_dict()
    design0 = build_design_overparam(ds, tau)
    sets0 = support_sets_from_truth(gt, None, design0.layout)
    report['support'] = sets0.to_dict()
    report['generic_overparam'] = _ic_report(design0, sets0.J)
    design_l = build_design_basic(ds, refs, tau)
    sets_l = support_sets_from_truth(gt, refs, design_l.layout)
    report['generic_basic'] = _ic_report(design_l, sets_l.J)

    '''closed form for orthogonal balanced strata'''
    if_orthogonal = is_orthogonal_balanced(ds) and tau.tau0 is not None
    report['orthogonal_balanced'] = if_orthogonal
    if if_orthogonal:
        interval = tau0_feasible_interval(ds.K, degrees.D0, degrees.D1)
        report['tau0_interval'] = None if interval is None else list(interval)
        report['holds_closed_form'] = ic_orthogonal_balanced(ds.K, degrees, tau.tau0)

    '''block constants'''
    try:
        general = {'basic': ic_general(ds, refs, tau, gt).to_dict(),
                   'optimal': ic_general(ds, None, tau, gt).to_dict()}
        report['general'] = general
    except RankError as error:
        report['general'] = {'error': str(error)}
        exit_code = EXIT_THEORY

    '''recovery thresholds'''
    if tau.tau0 is not None:
        if if_orthogonal and (degrees.D1 == NO_NONNULL or degrees.D1 < ds.K):
            gamma, c_min = balanced_recovery_constants(ds.K, degrees.D0, degrees.D1, tau.tau0)
        else:
            generic = report['generic_overparam']
            gamma, c_min = generic['gamma_slack'], generic['lambda_min']
        # overparametrized design with log((K + 1) p), basic design with log(K p)
        report['thresholds'] = _thresholds_report(1, gt, ds, tau.tau0, gamma, c_min, sets0)
        generic = report['generic_basic']
        report['thresholds_basic'] = _thresholds_report(0, gt, ds, tau.tau0, generic['gamma_slack'],
                                                        generic['lambda_min'], sets_l)

    '''special cases'''
    try:
        if is_equal(gt.beta, gt.beta[:1]).all():
            report['homogeneous'] = special_case_checks(ds, tau, 'homogeneous', gt, gt.noise_sd).to_dict()
        if is_equal(gt.mode_vector, 0.0).all() and np.any(gt.beta != 0):
            report['independent'] = special_case_checks(ds, tau, 'independent', gt, gt.noise_sd).to_dict()
    except RankError as error:
        report['special_case_error'] = str(error)
        exit_code = EXIT_THEORY

    save_json(report, f'{args.cwd}/ic.json')
    if args.if_print:
        print(f"| run_ic_check(): IC overparam holds={report['generic_overparam']['holds']}, "
              f"saved {args.cwd}/ic.json")
    return exit_code


'''transform'''


def run_transform(args):
    args.init_before_running()
    ds, gt, _ = load_data(args)
    method = args.get_methods()[0]
    name, ref_spec = parse_method(method)
    design = build_method_design(ds, name, float(args.tau0), get_refs(ds, ref_spec, gt))
    design.layout.save_or_load_layout(args.cwd, if_save=True)
    pd.DataFrame({'stratum': np.repeat(ds.stratum_labels, ds.n_k), 'y': design.y}).to_csv(
        f'{args.cwd}/response.csv', index=False, float_format='%.12g')
    sp.save_npz(f'{args.cwd}/design.npz', design.mat, compressed=True)
    if args.if_print:
        print(f"| run_transform(): {design.layout.kind} design n={design.n}, m={design.m}, "
              f"nnz={design.mat.nnz}, saved in {args.cwd}")
    return EXIT_OK


'''command line'''

RUNNERS = {'fit': run_fit, 'cv': run_cv, 'simulate': run_simulate, 'ic-check': run_ic_check,
           'transform': run_transform}


def _int_list(text):
    return tuple(int(i) for i in text.split(','))


def _float_list(text):
    return [float(i) for i in text.split(',')]


def build_parser():
    parser = argparse.ArgumentParser(prog='stratlasso', description='Lasso estimation for stratified data')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', help='JSON file of Arguments attributes, flags override it')
    parser.add_argument('--input', help='CSV with a stratum column, a response column and predictors')
    parser.add_argument('--out-dir', dest='cwd')
    parser.add_argument('--method', help="comma list of proposal, basic[:<refs>], pooled, independent, fused")
    parser.add_argument('--lambda1', type=float)
    parser.add_argument('--tau0', type=float)
    parser.add_argument('--tau', type=_float_list, help='comma list of free tau_k (ic-check)')
    parser.add_argument('--refs', help="first, last, oracle, an index, or p comma-separated indices")
    parser.add_argument('--seed', type=int)
    parser.add_argument('--threads', type=int)
    parser.add_argument('--scenario', help='JSON file or JSON text of a simulation scenario')
    parser.add_argument('--truth', help='JSON file with the true coefficients "beta"')
    parser.add_argument('--stratum-column', dest='stratum_column')
    parser.add_argument('--response-column', dest='response_column')
    parser.add_argument('--response-kind', dest='response_kind', choices=('gaussian', 'binary'))
    parser.add_argument('--folds', type=int)
    parser.add_argument('--double', dest='if_double', action='store_const', const=True)
    parser.add_argument('--no-standardize', dest='if_standardize', action='store_const', const=False)
    parser.add_argument('--remove', dest='if_remove', action='store_const', const=True)
    parser.add_argument('--quiet', dest='if_print', action='store_const', const=False)

    group = parser.add_argument_group('simulate grid')
    group.add_argument('--K', type=int)
    group.add_argument('--n-k', dest='n_k', type=_int_list)
    group.add_argument('--p', type=_int_list)
    group.add_argument('--d-h', dest='d_H', type=_int_list)
    group.add_argument('--delta-modes', dest='delta_modes', type=lambda text: tuple(text.split(',')))
    group.add_argument('--support-size', dest='support_size', type=int)
    group.add_argument('--replicates', type=int)
    group.add_argument('--snr', type=float)
    return parser


def main(argv=None):
    namespace = build_parser().parse_args(argv)
    command = namespace.command
    try:
        args = Arguments.from_json(namespace.config, command) if namespace.config else Arguments(command)
        overrides = {k: v for k, v in vars(namespace).items() if k not in {'command', 'config'} and v is not None}
        args.update(overrides)
        start_time = time.time()
        exit_code = RUNNERS[command](args)
        if args.if_print:
            print(f"| stratlasso {command}: exit {exit_code}, UsedTime {time.time() - start_time:.0f}s")
        return exit_code
    except (ConditionError, RankError) as error:
        print(f'| stratlasso {command}: {error}', file=sys.stderr)
        return EXIT_THEORY
    except (SchemaError, ParseError, ParameterError, RepresentationError, json.JSONDecodeError, OSError) as error:
        print(f'| stratlasso {command}: {error}', file=sys.stderr)
        return EXIT_CONFIG


if __name__ == '__main__':
    sys.exit(main())
