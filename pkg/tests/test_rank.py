import numpy as np
import pytest

from deepjive.datagen import TrainTestSplit
from deepjive.rank import (
    build_rank_report,
    choose_total_rank,
    fit_plain_autoencoder,
    select_joint_rank,
    write_rank_report_csv,
)
from deepjive.training import TrainConfig


def low_rank_latents(rank, r_max=6, n=80, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(r_max, rank)) @ rng.normal(size=(rank, n))
    if noise:
        M += noise * rng.normal(size=(r_max, n))
    return M


def test_curve_is_zero_at_true_rank():
    lat = low_rank_latents(rank=2)
    choice = choose_total_rank(lat)
    assert len(choice.curve) == 7
    assert choice.curve[2] == pytest.approx(0.0, abs=1e-20)
    assert choice.rank <= 2
    assert choice.crossed


def test_curve_matches_singular_value_tail_sums():
    lat = low_rank_latents(rank=4, noise=0.3, seed=1)
    choice = choose_total_rank(lat)
    centered = lat - lat.mean(axis=1, keepdims=True)
    s = np.linalg.svd(centered, compute_uv=False)
    for r in range(len(choice.curve)):
        tail = np.sum(s[r:] ** 2) / lat.size
        assert choice.curve[r] == pytest.approx(tail, rel=1e-9, abs=1e-15)


def test_curve_mode_picks_first_below_threshold():
    lat = low_rank_latents(rank=3, seed=2)
    choice = choose_total_rank(lat)
    below = np.nonzero(choice.curve < choice.threshold)[0]
    assert choice.rank == below[0]


def test_default_threshold_is_five_percent_of_total():
    lat = low_rank_latents(rank=3, noise=0.5, seed=3)
    choice = choose_total_rank(lat)
    assert choice.threshold == pytest.approx(0.05 * choice.curve[0])


def test_derivative_mode_uses_error_drops():
    lat = low_rank_latents(rank=2, noise=0.05, seed=4)
    choice = choose_total_rank(lat, threshold=0.01, mode="derivative")
    drops = choice.curve[:-1] - choice.curve[1:]
    assert choice.rank == np.nonzero(drops < 0.01)[0][0]


def test_threshold_never_crossed_is_flagged():
    lat = low_rank_latents(rank=6, noise=1.0, seed=5)
    choice = choose_total_rank(lat, threshold=0.0)
    assert choice.rank == 6
    assert not choice.crossed


def test_choose_total_rank_validation():
    with pytest.raises(ValueError):
        choose_total_rank(np.zeros(5))
    with pytest.raises(ValueError):
        choose_total_rank(np.zeros((2, 5)), mode="elbow")


def test_independent_scores_give_zero_joint_rank():
    rng = np.random.default_rng(6)
    mats = [rng.normal(size=(3, 400)), rng.normal(size=(4, 400))]
    res = select_joint_rank(mats, n_sims=100, seed=0)
    assert res.rank == 0
    assert res.null_maxima.shape == (100,)
    assert res.quantile >= res.null_maxima[0]


def test_planted_common_factors_are_detected():
    rng = np.random.default_rng(7)
    n = 400
    common = rng.normal(size=(2, n))
    mats = []
    for _ in range(2):
        mix = rng.normal(size=(4, 2)) @ common + 0.05 * rng.normal(size=(4, n))
        mats.append(mix)
    res = select_joint_rank(mats, n_sims=100, seed=0)
    assert res.rank >= 2


def test_select_joint_rank_standardizes_away_scale():
    rng = np.random.default_rng(8)
    mats = [rng.normal(size=(3, 300)), rng.normal(size=(3, 300))]
    a = select_joint_rank(mats, n_sims=50, seed=1)
    b = select_joint_rank([1e6 * mats[0], mats[1]], n_sims=50, seed=1)
    np.testing.assert_allclose(a.singular_values, b.singular_values, rtol=1e-9)


def test_select_joint_rank_validation():
    ok = np.zeros((2, 30))
    with pytest.raises(ValueError):
        select_joint_rank([])
    with pytest.raises(ValueError):
        select_joint_rank([ok, np.zeros((2, 29))])
    with pytest.raises(ValueError):
        select_joint_rank([ok], n_sims=5)
    with pytest.raises(ValueError):
        select_joint_rank([ok], confidence=1.5)


def ae_setup(seed=0, n=100, p=8, rank=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, rank)) @ rng.normal(size=(rank, p))
    split = TrainTestSplit(np.arange(0, 80), np.arange(80, n))
    cfg = TrainConfig(epochs=60, batch_size=20, lr=1e-2, orthogonality=False, seed=seed)
    return X, split, cfg


def test_plain_autoencoder_learns_and_reports_both_splits():
    X, split, cfg = ae_setup()
    res = fit_plain_autoencoder(X, r_max=3, split=split, config=cfg, seed=0)
    assert res.train_latents.shape == (3, 80)
    assert res.test_latents.shape == (3, 20)
    assert res.history[-1] < 0.1 * res.history[0]
    var = float(np.mean(X[split.test] ** 2))
    assert res.test_error < 0.1 * var


def test_plain_autoencoder_is_seeded():
    X, split, cfg = ae_setup(seed=1)
    a = fit_plain_autoencoder(X, r_max=2, split=split, config=cfg, seed=3)
    b = fit_plain_autoencoder(X, r_max=2, split=split, config=cfg, seed=3)
    np.testing.assert_array_equal(a.train_latents, b.train_latents)
    assert a.test_error == b.test_error


def test_plain_autoencoder_rejects_bad_r_max():
    X, split, cfg = ae_setup()
    with pytest.raises(ValueError):
        fit_plain_autoencoder(X, r_max=0, split=split, config=cfg)
    with pytest.raises(ValueError):
        fit_plain_autoencoder(X, r_max=9, split=split, config=cfg)


def test_rank_report_and_csv_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    common = rng.normal(size=(1, 200))
    mats = [
        np.vstack([common + 0.01 * rng.normal(size=(1, 200)),
                   rng.normal(size=(2, 200))])
        for _ in range(2)
    ]
    report = build_rank_report(mats, n_sims=30, seed=0)
    assert len(report.modalities) == 2
    assert report.joint.n_sims == 30

    write_rank_report_csv(tmp_path, report)
    curves = (tmp_path / "rank_curves.csv").read_text().strip().splitlines()
    assert curves[0] == "modality,rank,error,chosen,threshold,crossed"
    assert len(curves) == 1 + 2 * 4    # header + K * (r_max + 1)
    first = curves[1].split(",")
    assert float(first[2]) == report.modalities[0].curve[0]

    nulls = (tmp_path / "rank_null_maxima.csv").read_text().strip().splitlines()
    assert len(nulls) == 1 + 30
    sv = (tmp_path / "rank_singular_values.csv").read_text().strip().splitlines()
    assert len(sv) == 1 + len(report.joint.singular_values)
