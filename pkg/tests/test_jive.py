import numpy as np
import pytest

from deepjive.jive import jive_fit


def make_noise_free(seed=0, n=40, sizes=(12, 9)):
    """Rank-1 joint plus rank-1 individual per block, individual score
    directions orthogonal to the joint one so the parts are identifiable."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=n)
    v /= np.linalg.norm(v)
    blocks, joints, indivs = [], [], []
    for p in sizes:
        z = rng.normal(size=n)
        z -= (z @ v) * v
        z /= np.linalg.norm(z)
        u = rng.normal(size=p) * 3.0
        w = rng.normal(size=p)
        J = np.outer(u, v)
        S = np.outer(w, z)
        blocks.append(J + S)
        joints.append(J)
        indivs.append(S)
    return blocks, joints, indivs


def test_noise_free_recovery_is_exact():
    blocks, joints, indivs = make_noise_free()
    # Default tol stops on an energy plateau; recovery error tracks the
    # tolerance, so a tight tol gives near machine-precision parts.
    dec = jive_fit(blocks, 1, [1, 1], center=False, tol=1e-14)
    assert dec.converged
    for k in range(2):
        np.testing.assert_allclose(dec.joint[k], joints[k], atol=1e-10)
        np.testing.assert_allclose(dec.individual[k], indivs[k], atol=1e-10)
        np.testing.assert_allclose(dec.residual[k], 0.0, atol=1e-10)


def test_decomposition_identity_holds_exactly():
    rng = np.random.default_rng(1)
    blocks = [rng.normal(size=(8, 30)), rng.normal(size=(6, 30))]
    dec = jive_fit(blocks, 2, [1, 2])
    for k in range(2):
        rebuilt = (
            dec.joint[k] + dec.individual[k] + dec.residual[k]
            + dec.means[k][:, None]
        )
        np.testing.assert_allclose(rebuilt, blocks[k], atol=1e-10)


def test_individual_rows_orthogonal_to_joint_scores():
    rng = np.random.default_rng(2)
    blocks = [rng.normal(size=(10, 25)), rng.normal(size=(7, 25))]
    dec = jive_fit(blocks, 2, [2, 1])
    vj = dec.joint_scores / np.linalg.norm(dec.joint_scores, axis=1, keepdims=True)
    for s_k in dec.individual:
        assert np.max(np.abs(s_k @ vj.T)) < 1e-8


def test_zero_individual_rank_gives_empty_scores():
    blocks, joints, _ = make_noise_free(sizes=(5, 5))
    dec = jive_fit([j.copy() for j in joints], 1, [0, 0], center=False)
    for k in range(2):
        np.testing.assert_allclose(dec.individual[k], 0.0, atol=1e-12)
        assert dec.individual_scores[k].shape == (0, 40)
        np.testing.assert_allclose(dec.joint[k], joints[k], atol=1e-8)


def test_zero_joint_rank_reduces_to_per_block_svd():
    rng = np.random.default_rng(3)
    blocks = [rng.normal(size=(6, 20)), rng.normal(size=(5, 20))]
    dec = jive_fit(blocks, 0, [2, 2], center=False)
    assert dec.joint_scores.shape == (0, 20)
    for k in range(2):
        np.testing.assert_allclose(dec.joint[k], 0.0, atol=1e-12)
        # With no joint part the individual SVD sees the raw block.
        from deepjive.linalg import truncated_svd

        np.testing.assert_allclose(
            dec.individual[k], truncated_svd(blocks[k], 2), atol=1e-8
        )


def test_history_records_energy_per_iteration():
    blocks, _, _ = make_noise_free(seed=4)
    dec = jive_fit(blocks, 1, [1, 1], center=False)
    assert len(dec.history) == dec.n_iter
    assert dec.history[-1] > 0


def test_convergence_flag_false_when_iterations_exhausted():
    rng = np.random.default_rng(5)
    blocks = [rng.normal(size=(9, 30)), rng.normal(size=(9, 30))]
    dec = jive_fit(blocks, 3, [3, 3], tol=0.0, max_iter=3)
    assert not dec.converged
    assert dec.n_iter == 3


def test_input_validation():
    ok = np.zeros((4, 10))
    with pytest.raises(ValueError):
        jive_fit([ok], 1, [1])
    with pytest.raises(ValueError):
        jive_fit([ok, np.zeros((4, 9))], 1, [1, 1])
    with pytest.raises(ValueError):
        jive_fit([ok, ok], 1, [1])
    with pytest.raises(ValueError):
        jive_fit([ok, ok], 50, [1, 1])
    with pytest.raises(ValueError):
        jive_fit([ok, ok], 1, [1, 99])


def test_centering_stores_means():
    rng = np.random.default_rng(6)
    base = rng.normal(size=(5, 15))
    shifted = base + 7.0
    dec = jive_fit([shifted, base], 1, [1, 1])
    np.testing.assert_allclose(dec.means[0], shifted.mean(axis=1), atol=1e-12)
