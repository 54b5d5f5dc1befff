import os
import json
import math
import numpy as np
import pandas as pd
import pytest
import scipy.sparse as sp

from stratlasso.dataset import NONE_REF, SimulationScenario, export_csv, generate_scenario
from stratlasso.design import ReferenceVector, CoefficientDecomposition
from stratlasso.evaluator import METRICS_HEADER, support_estimate, support_accuracy
from stratlasso.theory import balanced_recovery_constants, support_sets_from_truth
from stratlasso.run import (Arguments, EXIT_OK, EXIT_CONFIG, SIMULATE_METHODS, main, run_simulate,
                            get_replicate_seed, get_scoring_truth, is_orthogonal_balanced)

SCENARIO = json.dumps({'K': 3, 'p': 5, 'n_k': 20, 'support_size': 2, 'd_H': 1, 'seed': 3})


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def write_config(path, data):
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


def balanced_beta():
    beta = np.zeros((8, 8))
    beta[:, 0] = 1.0
    beta[[1, 4], 0] = [3.0, -1.0]
    beta[:, 1] = 2.0
    beta[5, 2] = 1.5
    return beta


'''arguments'''


def test_arguments_update_and_defaults(tmp_path):
    args = Arguments('simulate').update({'n_k': [20, 40], 'tau': [1.0, 2.0]})
    assert args.n_k == (20, 40) and args.tau == [1.0, 2.0]
    assert args.get_methods() == list(SIMULATE_METHODS)
    assert Arguments('fit').get_methods() == ['proposal']
    args = Arguments('fit').update({'scenario': SCENARIO, 'cwd': str(tmp_path / 'out'), 'if_print': False})
    args.init_before_running()
    assert os.path.isdir(args.cwd)


def test_replicate_seeds_are_distinct():
    seeds = {get_replicate_seed(0, cell, rep) for cell in range(3) for rep in range(10)}
    assert len(seeds) == 30
    assert get_replicate_seed(5, 1, 2) == get_replicate_seed(5, 1, 2)


'''fit'''


def test_fit_writes_outputs(tmp_path):
    out = tmp_path / 'fit'
    code = main(['fit', '--scenario', SCENARIO, '--lambda1', '0.05', '--out-dir', str(out), '--quiet'])
    assert code == EXIT_OK
    frame = pd.read_csv(out / 'coefficients.csv')
    assert list(frame.columns) == ['method', 'stratum', 'predictor', 'beta', 'mu', 'gamma', 'beta_original']
    assert len(frame) == 3 * 5
    np.testing.assert_allclose(frame['beta'], frame['mu'] + frame['gamma'], atol=1e-12)
    report = read_json(out / 'fit.json')
    assert report['converged'] and report['dataset']['K'] == 3
    assert report['fits'][0]['method'] == 'proposal'
    content = (out / 'heatmap.svg').read_text(encoding='utf-8')
    assert '<svg' in content


def test_fit_large_penalty_gives_zero(tmp_path):
    out = tmp_path / 'fit'
    assert main(['fit', '--scenario', SCENARIO, '--lambda1', '1e6', '--out-dir', str(out), '--quiet']) == EXIT_OK
    frame = pd.read_csv(out / 'coefficients.csv')
    assert (frame['beta'] == 0).all()


def test_fit_reference_changes_basic_estimate(tmp_path):
    out = tmp_path / 'fit'
    code = main(['fit', '--scenario', SCENARIO, '--lambda1', '0.02', '--method', 'basic:first,basic:last',
                 '--out-dir', str(out), '--quiet'])
    assert code == EXIT_OK
    frame = pd.read_csv(out / 'coefficients.csv')
    first = frame[frame['method'] == 'basic:first']['beta'].to_numpy()
    last = frame[frame['method'] == 'basic:last']['beta'].to_numpy()
    assert first.shape == last.shape == (15,)
    assert np.abs(first - last).max() > 1e-6


def test_fit_on_csv(tmp_path, small_dataset):
    ds, _ = small_dataset
    export_csv(ds, str(tmp_path / 'data.csv'))
    out = tmp_path / 'fit'
    code = main(['fit', '--input', str(tmp_path / 'data.csv'), '--lambda1', '0.05', '--method', 'proposal,pooled',
                 '--out-dir', str(out), '--quiet'])
    assert code == EXIT_OK
    frame = pd.read_csv(out / 'coefficients.csv', dtype={'stratum': str})
    assert sorted(set(frame['method'])) == ['pooled', 'proposal']
    assert frame['stratum'].tolist()[:4] == ['1'] * 4


def test_fit_with_cross_validation(tmp_path):
    out = tmp_path / 'fit'
    config = write_config(tmp_path / 'config.json', {'solver': {'lambda_num': 5}, 'folds': 3})
    code = main(['fit', '--config', config, '--scenario', SCENARIO, '--out-dir', str(out), '--quiet'])
    assert code == EXIT_OK
    cv = read_json(out / 'fit.json')['fits'][0]['cv']
    assert cv['folds'] == 3 and cv['best']['tau0'] in (0.25, 0.5, 1.0, 2.0, 4.0)


'''errors'''


def test_exit_code_missing_column(tmp_path):
    path = tmp_path / 'data.csv'
    path.write_text('group,y,x\n1,1,2\n1,2,3\n', encoding='utf-8')
    assert main(['fit', '--input', str(path), '--lambda1', '0.1', '--out-dir', str(tmp_path / 'o'),
                 '--quiet']) == EXIT_CONFIG


def test_exit_code_invalid_utf8(tmp_path):
    path = tmp_path / 'data.csv'
    path.write_bytes(b'stratum,y,x\n1,1,2\n1,2,\xff\n')
    assert main(['fit', '--input', str(path), '--lambda1', '0.1', '--out-dir', str(tmp_path / 'o'),
                 '--quiet']) == EXIT_CONFIG


def test_exit_code_unknown_method(tmp_path):
    assert main(['fit', '--scenario', SCENARIO, '--method', 'ridge', '--out-dir', str(tmp_path / 'o'),
                 '--quiet']) == EXIT_CONFIG


def test_exit_code_unknown_config_key(tmp_path):
    config = write_config(tmp_path / 'config.json', {'strata': 3})
    assert main(['fit', '--config', config, '--scenario', SCENARIO, '--out-dir', str(tmp_path / 'o'),
                 '--quiet']) == EXIT_CONFIG


def test_exit_code_oracle_without_truth(tmp_path, small_dataset):
    ds, _ = small_dataset
    export_csv(ds, str(tmp_path / 'data.csv'))
    assert main(['fit', '--input', str(tmp_path / 'data.csv'), '--lambda1', '0.1', '--method', 'basic:oracle',
                 '--out-dir', str(tmp_path / 'o'), '--quiet']) == EXIT_CONFIG


'''ic-check'''


@pytest.mark.parametrize('tau0, expected', [(1.0, True), (4.0, False)])
def test_ic_check_orthogonal_balanced(tmp_path, make_orthonormal, tau0, expected):
    beta = balanced_beta()
    ds = make_orthonormal(8, 8, 8, seed=6, beta=beta)
    assert is_orthogonal_balanced(ds)
    export_csv(ds, str(tmp_path / 'data.csv'))
    write_config(tmp_path / 'truth.json', {'beta': beta.tolist(), 'noise_sd': 1.0})
    out = tmp_path / 'ic'
    code = main(['ic-check', '--input', str(tmp_path / 'data.csv'), '--truth', str(tmp_path / 'truth.json'),
                 '--tau0', str(tau0), '--out-dir', str(out), '--quiet'])
    assert code == EXIT_OK
    report = read_json(out / 'ic.json')
    assert report['orthogonal_balanced']
    low, high = report['tau0_interval']
    assert low == pytest.approx(np.sqrt(8) / 4) and high == pytest.approx(np.sqrt(8))
    assert report['holds_closed_form'] is expected
    assert report['generic_overparam']['holds'] is expected
    assert report['heterogeneity']['D0'] == 1 and report['heterogeneity']['D1'] == 2
    general = report['general']['optimal']
    assert max(general['c1'], general['c2bar']) == pytest.approx(report['generic_overparam']['c'], abs=1e-8)
    assert (report['thresholds'] is not None) is expected
    if expected:
        gamma, c_min = balanced_recovery_constants(8, 1, 2, tau0)
        thresholds = report['thresholds']
        assert thresholds['eta'] == 1 and thresholds['C_min'] == pytest.approx(c_min)
        assert thresholds['lambda1_bound'] == pytest.approx(2 / gamma * math.sqrt(2 * math.log(9 * 8) / 64))
    basic = report['thresholds_basic']
    assert (basic is not None) is report['generic_basic']['holds']
    if basic is not None:
        gamma = report['generic_basic']['gamma_slack']
        assert basic['eta'] == 0
        bound = 2 / (gamma * min(1.0, tau0)) * math.sqrt(2 * math.log(8 * 8) / 64)
        assert basic['lambda1_bound'] == pytest.approx(bound)


def test_ic_check_needs_truth(tmp_path, small_dataset):
    ds, _ = small_dataset
    export_csv(ds, str(tmp_path / 'data.csv'))
    assert main(['ic-check', '--input', str(tmp_path / 'data.csv'), '--out-dir', str(tmp_path / 'o'),
                 '--quiet']) == EXIT_CONFIG


'''transform and cv'''


def test_transform_writes_design(tmp_path):
    out = tmp_path / 'transform'
    code = main(['transform', '--scenario', SCENARIO, '--method', 'basic:first', '--out-dir', str(out), '--quiet'])
    assert code == EXIT_OK
    layout = read_json(out / 'layout.json')
    assert layout['kind'] == 'basic' and layout['refs'] == [0] * 5
    mat = sp.load_npz(out / 'design.npz')
    assert mat.shape == (60, 3 * 5)
    response = pd.read_csv(out / 'response.csv')
    assert len(response) == 60


def test_cv_with_double(tmp_path):
    out = tmp_path / 'cv'
    config = write_config(tmp_path / 'config.json', {'solver': {'lambda_num': 5}})
    code = main(['cv', '--config', config, '--scenario', SCENARIO, '--method', 'pooled', '--folds', '3',
                 '--double', '--out-dir', str(out), '--quiet'])
    assert code == EXIT_OK
    result = read_json(out / 'cv.json')['results'][0]
    assert result['method'] == 'pooled'
    assert len(result['grid']) == 5
    assert len(result['double_cv']['fold_errors']) == 3
    assert result['double_cv']['prediction_error'] > 0


def test_oracle_scored_in_its_own_parametrization():
    for seed in range(20):
        _, gt = generate_scenario(SimulationScenario(K=10, p=20, n_k=20, support_size=10, d_H=1,
                                                     delta_mode='random', seed=seed))
        if (gt.optimal_reference[gt.support] == NONE_REF).any():
            break
    else:
        pytest.fail('no scenario with a mode held by no stratum')
    refs = ReferenceVector.from_spec('oracle', gt.beta.shape[0], gt.beta.shape[1], gt)
    mu = gt.beta[refs.refs, np.arange(gt.beta.shape[1])]
    est = support_estimate(CoefficientDecomposition.from_parts(mu, gt.beta - mu[None, :]))
    for universe in (gt.support, range(gt.beta.shape[1])):
        assert support_accuracy(est, get_scoring_truth(gt, 'basic', refs), universe, 10) == (1.0, 1.0)
    assert get_scoring_truth(gt, 'proposal', None) == support_sets_from_truth(gt)


'''simulate'''


def simulate_config(tmp_path, name, threads):
    return write_config(tmp_path / f'{name}.json', {
        'K': 3, 'n_k': [20], 'p': [5], 'd_H': [1], 'delta_modes': ['constant'], 'support_size': 2,
        'replicates': 4, 'folds': 3, 'threads': threads, 'seed': 11, 'solver': {'lambda_num': 5}})


def test_simulate_outputs_and_determinism(tmp_path):
    out1, out2 = tmp_path / 'sim1', tmp_path / 'sim2'
    assert main(['simulate', '--config', simulate_config(tmp_path, 'a', 1), '--out-dir', str(out1),
                 '--quiet']) == EXIT_OK
    metrics = pd.read_csv(out1 / 'metrics.csv', keep_default_na=False)
    assert list(metrics.columns) == list(METRICS_HEADER)
    assert len(metrics) == 4 * len(SIMULATE_METHODS)
    assert metrics['method'].tolist()[:4] == list(SIMULATE_METHODS)
    assert (metrics['errors'] == '').all()
    summary = pd.read_csv(out1 / 'summary.csv')
    assert summary['replicates'].tolist() == [4] * len(SIMULATE_METHODS)
    assert read_json(out1 / 'simulate.json')['cells'] == [{'n_k': 20, 'p': 5, 'd_H': 1, 'delta_mode': 'constant'}]

    assert main(['simulate', '--config', simulate_config(tmp_path, 'b', 4), '--out-dir', str(out2),
                 '--quiet']) == EXIT_OK
    assert (out1 / 'metrics.csv').read_bytes() == (out2 / 'metrics.csv').read_bytes()


@pytest.mark.slow
def test_simulation_trends(tmp_path):
    args = Arguments('simulate').update({
        'K': 10, 'n_k': [50], 'p': [20], 'd_H': [1, 3], 'delta_modes': ['constant', 'random'],
        'support_size': 10, 'replicates': 20, 'threads': min(4, os.cpu_count() or 1),
        'solver': {'lambda_num': 30}, 'cwd': str(tmp_path / 'sim'), 'if_print': False})
    assert run_simulate(args) == EXIT_OK
    metrics = pd.read_csv(tmp_path / 'sim' / 'metrics.csv', keep_default_na=False)

    constant = metrics[metrics['delta_mode'] == 'constant']
    accuracy = constant.groupby(['d_H', 'method'])['accuracy_T'].mean()
    for d_H in (1, 3):
        assert abs(accuracy[(d_H, 'proposal')] - accuracy[(d_H, 'basic:oracle')]) <= 0.05
    assert accuracy[(1, 'proposal')] - accuracy[(1, 'basic:first')] >= 0.10

    random = metrics[metrics['delta_mode'] == 'random']
    error = random.pivot_table(index=['cell', 'replicate'], columns='method', values='prediction_error')
    assert (error['proposal'] <= error['basic:first']).mean() >= 0.8
