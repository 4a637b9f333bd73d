import numpy as np
import pytest

from deepjive.datagen import gen_1d
from deepjive.networks import NetworkSpec, build_network
from deepjive.tensor import Tensor
from deepjive.training import (
    TrainConfig,
    TrainingDiverged,
    arch_loss,
    encode_dataset,
    loss_exchange,
    loss_explicit,
    loss_merged,
    ortho_penalty,
    reconstruct_dataset,
    regression_step,
    total_loss,
    train,
    write_history_csv,
)


def tiny_spec(variant="explicit", indiv=(1, 1)):
    return NetworkSpec([(3,), (2,)], [[], []], 1, list(indiv), variant=variant)


def seeded_net(variant="explicit", seed=0, indiv=(1, 1)):
    net = build_network(tiny_spec(variant, indiv), seed=seed)
    vals = {}
    for i, (name, p) in enumerate(sorted(net.parameters().items())):
        p.data[...] = 0.05 * ((i % 5) + 1) * (
            1 + np.arange(p.data.size).reshape(p.data.shape)
        )
        vals[name] = p.data.copy()
    return net, vals


def affine(x, vals, prefix):
    return x @ vals[f"{prefix}.weight"] + vals[f"{prefix}.bias"]


BATCH = [
    np.array([[0.3, -0.7, 1.2], [1.0, 0.4, -0.2], [-0.5, 0.8, 0.1]]),
    np.array([[0.9, -0.1], [0.2, 0.6], [-1.1, 0.5]]),
]


def mse_np(a, b):
    return float(np.mean((a - b) ** 2))


def test_loss_explicit_matches_hand_arithmetic():
    net, vals = seeded_net("explicit")
    got = loss_explicit(net, BATCH).item()
    joint = [affine(BATCH[k], vals, f"m{k}.jhead") for k in range(2)]
    indiv = [affine(BATCH[k], vals, f"m{k}.shead") for k in range(2)]
    expect = 0.0
    for k in range(2):
        recon = affine(joint[k], vals, f"m{k}.jdec.0") + affine(
            indiv[k], vals, f"m{k}.sdec.0"
        )
        expect += mse_np(BATCH[k], recon)
    expect += mse_np(joint[0], joint[1])
    assert got == pytest.approx(expect, abs=1e-12)


def test_loss_exchange_has_k_squared_reconstruction_terms():
    net, vals = seeded_net("exchange")
    got = loss_exchange(net, BATCH).item()
    joint = [affine(BATCH[k], vals, f"m{k}.jhead") for k in range(2)]
    indiv = [affine(BATCH[k], vals, f"m{k}.shead") for k in range(2)]
    expect = 0.0
    for k in range(2):
        s_k = affine(indiv[k], vals, f"m{k}.sdec.0")
        for j in range(2):
            recon = affine(joint[j], vals, f"m{k}.jdec.0") + s_k
            expect += mse_np(BATCH[k], recon)
    assert got == pytest.approx(expect, abs=1e-12)


def test_loss_merged_uses_one_shared_latent():
    net, vals = seeded_net("merged")
    got = loss_merged(net, BATCH).item()
    pre = [affine(BATCH[k], vals, f"m{k}.jhead") for k in range(2)]
    shared = affine(np.hstack(pre), vals, "merge")
    expect = 0.0
    for k in range(2):
        indiv = affine(BATCH[k], vals, f"m{k}.shead")
        recon = affine(shared, vals, f"m{k}.jdec.0") + affine(
            indiv, vals, f"m{k}.sdec.0"
        )
        expect += mse_np(BATCH[k], recon)
    assert got == pytest.approx(expect, abs=1e-12)


def test_variant_guards_reject_wrong_network():
    net, _ = seeded_net("merged")
    with pytest.raises(ValueError):
        loss_explicit(net, BATCH)
    with pytest.raises(ValueError):
        loss_exchange(net, BATCH)


def test_arch_loss_dispatches_on_spec():
    for variant, fn in [
        ("explicit", loss_explicit),
        ("exchange", loss_exchange),
        ("merged", loss_merged),
    ]:
        net, _ = seeded_net(variant)
        assert arch_loss(net, BATCH).item() == pytest.approx(
            fn(net, BATCH).item(), abs=1e-12
        )


def test_ortho_penalty_matches_hand_arithmetic():
    net, vals = seeded_net("explicit")
    penalty, residual = ortho_penalty(net, BATCH)
    expect = 0.0
    for k in range(2):
        joint = affine(BATCH[k], vals, f"m{k}.jhead")
        indiv = affine(BATCH[k], vals, f"m{k}.shead")
        pred = affine(joint, vals, f"m{k}.reg")
        expect += float(np.mean(pred ** 2))
        np.testing.assert_allclose(residual[k].data, indiv - pred, atol=1e-12)
    assert penalty.item() == pytest.approx(expect, abs=1e-12)


def test_ortho_penalty_freezes_regression_weights():
    net, _ = seeded_net("explicit")
    penalty, _ = ortho_penalty(net, BATCH)
    penalty.backward()
    for k, mod in enumerate(net.modalities):
        np.testing.assert_array_equal(mod.reg.weight.grad, 0.0)
        # The encoder feeding the joint latent does receive gradient.
        assert np.any(mod.joint_head.weight.grad != 0)


def test_ortho_penalty_zero_when_no_individual_branch():
    net = build_network(tiny_spec(indiv=(0, 0)), seed=0)
    penalty, residual = ortho_penalty(net, BATCH)
    assert penalty.item() == 0.0
    assert residual == [None, None]


def test_residual_plus_prediction_recovers_individual_latent():
    net, vals = seeded_net("merged")
    _, residual = ortho_penalty(net, BATCH)
    bundle = net.encode([Tensor(b) for b in BATCH])
    for k in range(2):
        pred = affine(bundle.joint[k].data, vals, f"m{k}.reg")
        np.testing.assert_allclose(
            residual[k].data + pred,
            affine(BATCH[k], vals, f"m{k}.shead"),
            atol=1e-12,
        )


def test_regression_step_only_updates_adversary():
    net, _ = seeded_net("explicit")
    before_main = {k: p.data.copy() for k, p in net.parameters().items()
                   if ".reg." not in k}
    before_reg = {k: p.data.copy() for k, p in net.parameters().items()
                  if ".reg." in k}
    losses = regression_step(net, BATCH, regression_lr=0.1)
    assert len(losses) == 2 and all(v >= 0 for v in losses)
    after = net.parameters()
    for k, v in before_main.items():
        np.testing.assert_array_equal(after[k].data, v)
    assert any(not np.array_equal(after[k].data, v) for k, v in before_reg.items())


def test_regression_steps_approach_least_squares_fit():
    # With the encoders fixed, repeated adversary steps should drive the
    # regression loss to the closed-form linear least-squares optimum.
    net, vals = seeded_net("explicit")
    rng = np.random.default_rng(0)
    batch = [rng.normal(size=(64, 3)), rng.normal(size=(64, 2))]
    first = regression_step(net, batch, regression_lr=0.5)
    for _ in range(600):
        last = regression_step(net, batch, regression_lr=0.5)
    optimum = 0.0
    for k in range(2):
        joint = affine(batch[k], vals, f"m{k}.jhead")
        indiv = affine(batch[k], vals, f"m{k}.shead")
        A = np.hstack([joint, np.ones((64, 1))])
        coef, *_ = np.linalg.lstsq(A, indiv, rcond=None)
        optimum += float(np.mean((indiv - A @ coef) ** 2))
    assert sum(last) < sum(first)
    assert sum(last) == pytest.approx(optimum, rel=1e-3, abs=1e-9)


def test_total_loss_is_affine_in_gamma():
    net, _ = seeded_net("explicit")
    t0 = total_loss(net, BATCH, 0.0).item()
    t1 = total_loss(net, BATCH, 1.0).item()
    t2 = total_loss(net, BATCH, 2.0).item()
    assert t2 - t1 == pytest.approx(t1 - t0, abs=1e-10)
    assert t0 == pytest.approx(arch_loss(net, BATCH).item(), abs=1e-12)
    with pytest.raises(ValueError):
        total_loss(net, BATCH, -0.1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValueError):
        TrainConfig(lr=1e-3, regression_lr=1e-3)
    cfg = TrainConfig(lr=2e-3)
    assert cfg.regression_lr == pytest.approx(2e-2)
    # Matching rates are fine once the adversary is disabled.
    TrainConfig(lr=1e-3, regression_lr=1e-3, orthogonality=False)


def train_setup(variant="explicit", seed=0, p=12):
    ds, _ = gen_1d(n=80, p=p, seed=seed)
    spec = NetworkSpec([(p,), (p,)], [[], []], 1, [1, 1], variant=variant)
    return ds, build_network(spec, seed=seed)


def test_train_reduces_architectural_loss():
    ds, net = train_setup()
    cfg = TrainConfig(epochs=15, batch_size=16, lr=3e-3, seed=1)
    net, history = train(net, ds.train_arrays(), cfg)
    assert len(history) == 15
    assert history[-1].loss_arch < 0.5 * history[0].loss_arch
    assert all(np.isfinite(
        [h.loss_arch, h.loss_ortho, h.loss_regression, h.joint_identity]
    ).all() for h in history)


def test_train_is_deterministic():
    outs = []
    for _ in range(2):
        ds, net = train_setup(seed=3)
        cfg = TrainConfig(epochs=4, batch_size=16, lr=1e-3, seed=5)
        net, history = train(net, ds.train_arrays(), cfg)
        outs.append(
            (
                {k: p.data.copy() for k, p in net.parameters().items()},
                [(h.loss_arch, h.loss_ortho, h.loss_regression) for h in history],
            )
        )
    (pa, ha), (pb, hb) = outs
    assert ha == hb
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)


def test_train_merged_reports_zero_joint_identity():
    ds, net = train_setup(variant="merged")
    _, history = train(net, ds.train_arrays(), TrainConfig(epochs=2, batch_size=20, seed=0))
    assert all(h.joint_identity == 0.0 for h in history)


def test_train_explicit_tracks_nonzero_joint_identity():
    ds, net = train_setup(variant="explicit")
    _, history = train(net, ds.train_arrays(), TrainConfig(epochs=2, batch_size=20, seed=0))
    assert history[0].joint_identity > 0.0


def test_train_without_orthogonality_keeps_adversary_fixed():
    ds, net = train_setup()
    before = {k: p.data.copy() for k, p in net.parameters().items() if ".reg." in k}
    cfg = TrainConfig(epochs=2, batch_size=16, orthogonality=False, seed=0)
    train(net, ds.train_arrays(), cfg)
    after = net.parameters()
    for k, v in before.items():
        np.testing.assert_array_equal(after[k].data, v)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_raises_with_context():
    ds, net = train_setup()
    cfg = TrainConfig(
        epochs=5, batch_size=16, lr=1e12, optimizer="sgd",
        orthogonality=False, seed=0,
    )
    with pytest.raises(TrainingDiverged, match="epoch"):
        train(net, ds.train_arrays(), cfg)


def test_train_rejects_mismatched_dataset():
    _, net = train_setup(p=12)
    bad = [np.zeros((10, 7)), np.zeros((10, 7))]
    with pytest.raises(ValueError):
        train(net, bad, TrainConfig(epochs=1, seed=0))
    with pytest.raises(ValueError):
        train(net, [np.zeros((0, 12)), np.zeros((0, 12))], TrainConfig(epochs=1, seed=0))


def test_write_history_csv_round_trips_floats(tmp_path):
    from deepjive.training import HistoryRow

    row = HistoryRow(0, 1.0 / 3.0, 2.0 / 7.0, 1e-17, 0.0)
    path = tmp_path / "h.csv"
    write_history_csv(path, [row])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,loss_arch,loss_ortho,loss_regression,joint_identity"
    cells = lines[1].split(",")
    assert float(cells[1]) == row.loss_arch
    assert float(cells[3]) == row.loss_regression


def test_encode_dataset_matches_single_batch_encode():
    ds, net = train_setup(seed=2)
    arrays = ds.train_arrays()
    lat = encode_dataset(net, arrays, batch_size=17)
    bundle = net.encode([Tensor(a) for a in arrays])
    for k in range(2):
        np.testing.assert_allclose(lat["joint"][k], bundle.joint_scores(k), atol=1e-12)
        np.testing.assert_allclose(
            lat["individual"][k], bundle.individual_scores(k), atol=1e-12
        )
    assert lat["joint"][0].shape == (1, arrays[0].shape[0])


def test_reconstruct_dataset_matches_forward():
    ds, net = train_setup(seed=4)
    arrays = ds.train_arrays()
    out = reconstruct_dataset(net, arrays, batch_size=13)
    fwd = net.forward([Tensor(a) for a in arrays])
    for k in range(2):
        np.testing.assert_allclose(out.recon[k], fwd.recon[k].data, atol=1e-12)
        np.testing.assert_allclose(out.joint_part[k], fwd.joint_part[k].data, atol=1e-12)
