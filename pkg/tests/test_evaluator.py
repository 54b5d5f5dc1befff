import math
import numpy as np
import pytest
from matplotlib.colors import to_rgb

from stratlasso.dataset import StratifiedDataset, ParameterError, get_rng
from stratlasso.design import CoefficientDecomposition, ReferenceVector
from stratlasso.solver import SolverOptions, fit_method
from stratlasso.theory import SupportSets
from stratlasso.evaluator import (METRICS_HEADER, MetricsRecord, Evaluator, support_estimate, support_accuracy,
                                  prediction_error, log_prediction_error, stratified_folds, split_fold,
                                  heldout_loss, select_one_se, cross_validate, double_cv_prediction_error,
                                  heatmap_colors, save_heatmap_svg)

QUICK = SolverOptions(lambda_num=5)


'''metrics'''


def test_support_estimate():
    dec = CoefficientDecomposition.from_parts([0.0, 1e-9, 2.0], [[0.0, 0.0, 0.0], [0.5, 0.0, -1e-3]])
    est = support_estimate(dec)
    assert est.S == frozenset({2})
    assert est.T == frozenset({(1, 0), (1, 2)})
    assert support_estimate(dec, tol=10.0).S == frozenset()
    assert support_estimate(CoefficientDecomposition.from_parts(np.zeros(3), np.zeros((2, 3)))).T == frozenset()


def test_support_accuracy_counts():
    K, universe = 20, range(20)
    truth = SupportSets(frozenset({0, 1}), frozenset({(0, 0), (3, 5)}))
    assert support_accuracy(truth, truth, universe, K) == (1.0, 1.0)
    one_wrong = SupportSets(truth.S, truth.T | {(7, 7)})
    accuracy_t, accuracy_s = support_accuracy(one_wrong, truth, universe, K)
    assert accuracy_t == pytest.approx(399 / 400)
    assert accuracy_s == 1.0
    assert support_accuracy(truth, one_wrong, universe, K) == (accuracy_t, accuracy_s)


def test_support_accuracy_complement():
    K, universe = 2, [0, 1]
    truth = SupportSets(frozenset({0}), frozenset({(0, 0), (1, 1)}))
    complement = SupportSets(frozenset({1}), frozenset({(1, 0), (0, 1)}))
    assert support_accuracy(complement, truth, universe, K) == (0.0, 0.0)
    assert support_accuracy(complement, truth, [], K) == (1.0, 1.0)


def test_prediction_error(make_orthonormal):
    ds = make_orthonormal(3, 10, 4, seed=1)
    beta = get_rng(2).standard_normal((3, 4))
    assert prediction_error(ds, beta, beta) == 0.0
    shifted = beta.copy()
    shifted[1, 2] += 1.0
    assert prediction_error(ds, beta, shifted) == pytest.approx(10 / 30)

    doubled = ds.with_strata([(2 * x, y) for x, y in ds.strata])
    assert prediction_error(doubled, beta, shifted) == pytest.approx(4 * prediction_error(ds, beta, shifted))
    with pytest.raises(ParameterError):
        prediction_error(ds, beta, beta[:, :2])


def test_log_prediction_error():
    assert log_prediction_error(0.0) == -math.inf
    assert log_prediction_error(math.e) == pytest.approx(1.0)


def test_metrics_record_row():
    row = MetricsRecord(0, 50, 20, 1, 'constant', 3, 42, 'proposal', accuracy_T=0.9).to_row()
    assert len(row) == len(METRICS_HEADER)
    assert row[METRICS_HEADER.index('accuracy_T')] == 0.9
    assert row[METRICS_HEADER.index('errors')] == ''


'''cross-validation'''


def test_folds_are_deterministic_and_balanced(small_dataset):
    ds, _ = small_dataset
    ids1 = stratified_folds(ds, 4, seed=3)
    ids2 = stratified_folds(ds, 4, seed=3)
    for a, b, n_k in zip(ids1, ids2, ds.n_k):
        np.testing.assert_array_equal(a, b)
        counts = np.bincount(a, minlength=4)
        assert counts.max() - counts.min() <= 1 and counts.sum() == n_k
    assert any((a != b).any() for a, b in zip(ids1, stratified_folds(ds, 4, seed=4)))


def test_folds_reject_small_strata(small_dataset):
    ds, _ = small_dataset
    with pytest.raises(ParameterError):
        stratified_folds(ds, 9, seed=0)
    with pytest.raises(ParameterError):
        stratified_folds(ds, 1, seed=0)


def test_every_fold_covers_every_stratum(small_dataset):
    ds, _ = small_dataset
    ids = stratified_folds(ds, 5, seed=1)
    for fold in range(5):
        train, test = split_fold(ds, ids, fold)
        assert (test.n_k > 0).all() and (train.n_k > 0).all()
        assert (train.n_k + test.n_k == ds.n_k).all()


def test_heldout_loss(small_dataset):
    ds, _ = small_dataset
    fit = fit_method(ds, 'pooled', 1e6)
    assert not fit.decomposition.beta.any()
    assert heldout_loss(ds, fit) == pytest.approx(float((ds.pooled_y() ** 2).mean()))


def test_heldout_loss_binary():
    x = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    ds = StratifiedDataset([(x, np.array([0.0, 1.0, 0.0, 1.0]))], 'binary')
    fit = fit_method(ds, 'pooled', 1.0)
    assert fit.result.intercept == pytest.approx(0.0, abs=1e-8)
    assert heldout_loss(ds, fit) == pytest.approx(math.log(2))


def test_select_one_se():
    lambdas = np.array([[3.0, 2.0, 1.0]])
    mean = np.array([[1.0, 0.9, 1.5]])
    se = np.full((1, 3), 0.2)
    assert select_one_se(np.array([1.0]), lambdas, mean, se) == (0, 0)
    tau0_grid = np.array([0.5, 2.0, 1.0, 4.0])
    lambdas = np.tile([2.0, 1.0], (4, 1))
    assert select_one_se(tau0_grid, lambdas, np.ones((4, 2)), np.zeros((4, 2))) == (2, 0)
    # |log 0.5| == |log 2|: the smaller tau0 wins
    assert select_one_se(tau0_grid[[1, 0]], lambdas[:2], np.ones((2, 2)), np.zeros((2, 2))) == (1, 0)


def test_cross_validate_single_point(small_dataset):
    ds, _ = small_dataset
    cv = cross_validate(ds, 'proposal', lambdas=[0.1], tau0_grid=[2.0], folds=3, seed=1)
    assert cv.best == (0.1, 2.0)
    assert cv.best_index == (0, 0)
    assert cv.fit is not None and cv.fit.tau0 == 2.0
    assert cv.to_dict()['grid'][0]['lambda1'] == 0.1


def test_cross_validate_is_deterministic(small_dataset):
    ds, _ = small_dataset
    cv1 = cross_validate(ds, 'proposal', tau0_grid=[0.5, 1.0], folds=3, seed=7, options=QUICK)
    cv2 = cross_validate(ds, 'proposal', tau0_grid=[0.5, 1.0], folds=3, seed=7, options=QUICK)
    assert cv1.mean.shape == (2, 5)
    np.testing.assert_array_equal(cv1.mean, cv2.mean)
    assert cv1.best == cv2.best
    np.testing.assert_array_equal(cv1.fit.decomposition.beta, cv2.fit.decomposition.beta)


@pytest.mark.parametrize('method', ['pooled', 'independent', 'fused', 'basic'])
def test_cross_validate_methods(small_dataset, method):
    ds, _ = small_dataset
    refs = ReferenceVector.uniform(0, ds.K, ds.p) if method == 'basic' else None
    tau0_grid = [0.5, 1.0] if method in ('fused', 'basic') else None
    cv = cross_validate(ds, method, tau0_grid=tau0_grid, folds=3, seed=0, refs=refs, options=QUICK)
    assert cv.mean.shape == (1 if tau0_grid is None else 2, 5)
    assert np.isfinite(cv.mean).all()
    assert cv.best[0] in cv.lambda_grids[cv.best_index[0]]
    assert cv.fit.decomposition.beta.shape == (ds.K, ds.p)


def test_cross_validate_large_penalty_is_null_model(small_dataset):
    ds, _ = small_dataset
    cv = cross_validate(ds, 'pooled', lambdas=[1e3, 1e2], folds=4, seed=2, if_refit=False)
    ids = stratified_folds(ds, 4, seed=2)
    null = [float((split_fold(ds, ids, f)[1].pooled_y() ** 2).mean()) for f in range(4)]
    assert cv.mean[0, 0] == pytest.approx(np.mean(null))
    assert cv.fit is None


def test_cross_validate_rejects_increasing_grid(small_dataset):
    ds, _ = small_dataset
    with pytest.raises(ParameterError):
        cross_validate(ds, 'pooled', lambdas=[0.1, 0.2], folds=3)


def test_double_cv(small_dataset):
    ds, _ = small_dataset
    mean, losses = double_cv_prediction_error(ds, 'pooled', folds=2, seed=0, options=QUICK)
    assert len(losses) == 2
    assert mean == pytest.approx(np.mean(losses))
    assert mean > 0


@pytest.mark.slow
def test_pure_noise_selects_large_penalty():
    options = SolverOptions(lambda_num=20)
    hits = 0
    for seed in range(20):
        ds = StratifiedDataset([(get_rng(seed, 0, k).standard_normal((50, 10)),
                                 get_rng(seed, 1, k).standard_normal(50)) for k in range(4)])
        cv = cross_validate(ds, 'proposal', folds=5, seed=seed, options=options)
        hits += cv.best_index[1] <= 4 and np.count_nonzero(cv.fit.decomposition.mu) <= 2
    assert hits >= 18


'''recorder'''


def test_evaluator_save_and_load(tmp_path):
    evaluator = Evaluator(str(tmp_path), if_print=False)
    records = [MetricsRecord(0, 50, 20, 1, 'constant', rep, 100 + rep, method, accuracy_T=0.5 + rep / 10,
                             accuracy_S=1.0, prediction_error=0.1, log_prediction_error=math.log(0.1),
                             lambda1=0.01, tau0=1.0, converged=True, method_id=i)
               for rep in (1, 0) for i, method in enumerate(('proposal', 'fused'))]
    records[0].errors = 'ConditionError'
    evaluator.record(records)

    frame = evaluator.get_metrics_frame()
    assert list(frame.columns) == list(METRICS_HEADER)
    assert frame['replicate'].tolist() == [0, 0, 1, 1]
    assert frame['method'].tolist() == ['proposal', 'fused', 'proposal', 'fused']
    summary = evaluator.get_summary_frame()
    assert summary['replicates'].tolist() == [2, 2]
    assert summary['accuracy_T'].tolist() == pytest.approx([0.55, 0.55])

    evaluator.save_or_load_recorder(if_save=True)
    loaded = Evaluator(str(tmp_path), if_print=False)
    loaded.save_or_load_recorder(if_save=False)
    assert len(loaded.recorder) == 4
    again = loaded.get_metrics_frame()
    assert again['errors'].tolist() == ['', '', 'ConditionError', '']
    np.testing.assert_allclose(again['accuracy_T'], frame['accuracy_T'])
    assert again['converged'].tolist() == [True] * 4


'''heatmap'''


def test_heatmap_zero_is_neutral():
    colors, vmax = heatmap_colors([np.zeros((2, 3))])
    assert vmax == 1.0
    np.testing.assert_allclose(colors[0][..., :3], np.broadcast_to(to_rgb('#f7f7f7'), (2, 3, 3)), atol=1e-6)


def test_heatmap_single_nonzero_cell():
    matrix = np.zeros((3, 4))
    matrix[1, 2] = 2.5
    colors, vmax = heatmap_colors([matrix])
    assert vmax == 2.5
    neutral = np.array(to_rgb('#f7f7f7'))
    differs = np.abs(colors[0][..., :3] - neutral).max(axis=2) > 1e-6
    assert np.argwhere(differs).tolist() == [[1, 2]]


def test_heatmap_scale_is_symmetric():
    colors, _ = heatmap_colors([np.array([[1.0, 0.5, -0.5]])])
    neutral = np.array(to_rgb('#f7f7f7'))
    toward_red = (colors[0][0, 1, :3] - neutral) / (np.array(to_rgb('#b2182b')) - neutral)
    toward_blue = (colors[0][0, 2, :3] - neutral) / (np.array(to_rgb('#2166ac')) - neutral)
    np.testing.assert_allclose(toward_red, toward_blue, atol=1e-6)
    assert 0 < toward_red[0] < 1


def test_heatmap_shared_scale():
    _, vmax = heatmap_colors([np.array([[0.5]]), np.array([[-3.0]])])
    assert vmax == 3.0


def test_heatmap_svg_is_byte_identical(tmp_path):
    matrices = [get_rng(1).standard_normal((3, 5)), np.zeros((3, 5))]
    path1 = save_heatmap_svg(matrices, ['fit', 'truth'], str(tmp_path / 'a.svg'), title='beta')
    path2 = save_heatmap_svg(matrices, ['fit', 'truth'], str(tmp_path / 'b.svg'), title='beta')
    with open(path1, 'rb') as f1, open(path2, 'rb') as f2:
        content = f1.read()
        assert content == f2.read()
    assert content.lstrip().startswith(b'<?xml') and b'<svg' in content


def test_heatmap_rejects_mixed_shapes(tmp_path):
    with pytest.raises(ParameterError):
        save_heatmap_svg([np.zeros((2, 3)), np.zeros((3, 2))], ['a', 'b'], str(tmp_path / 'x.svg'))
