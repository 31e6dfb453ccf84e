import numpy as np
import pytest

from sensoropt import aoptimal, lowrank
from sensoropt.lowrank import block_concat, exact_qr, load_qr, randomized_qr, save_qr
from sensoropt.model import dense_map, identity_prior, zero_map

ORTHO_TOL = 1e-10


def low_rank_matrix(rng, n, m, rank):
    return (rng.standard_normal((n, rank))
            @ rng.standard_normal((rank, m)))


class TestRandomizedQR:
    def test_exact_rank_recovery(self):
        rng = np.random.default_rng(0)
        a = low_rank_matrix(rng, 60, 40, rank=12)
        qrm = randomized_qr(dense_map(a), ell=20, q=2, rng_seed=1)
        rel = np.linalg.norm(a - qrm.reconstruct()) / np.linalg.norm(a)
        assert rel <= 1e-8
        assert qrm.orthonormality_defect() <= ORTHO_TOL
        assert qrm.ell <= 20

    def test_zero_operator_truncates_to_empty(self):
        with pytest.warns(UserWarning, match="zero"):
            qrm = randomized_qr(zero_map(15, 30), ell=5, q=1, rng_seed=0)
        assert qrm.ell == 0
        assert qrm.residual_estimate == 0.0

    def test_rank_above_min_dimension_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            randomized_qr(zero_map(10, 8), ell=9, q=0, rng_seed=0)

    def test_drop_tol_trims_at_six_orders_of_magnitude(self):
        # spectrum decaying geometrically: retain exactly the singular values
        # within 1e-6 of the largest
        rng = np.random.default_rng(3)
        n, m = 40, 30
        svals = np.logspace(0, -9, m)
        u, _ = np.linalg.qr(rng.standard_normal((n, m)))
        v, _ = np.linalg.qr(rng.standard_normal((m, m)))
        a = (u * svals) @ v.T
        qrm = randomized_qr(dense_map(a), ell=m, q=2, rng_seed=0,
                            drop_tol=1e-6)
        expected = int(np.count_nonzero(svals > 1e-6 * svals[0]))
        assert qrm.ell == pytest.approx(expected, abs=1)

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(5)
        a = low_rank_matrix(rng, 25, 20, rank=8)
        q1 = randomized_qr(dense_map(a), ell=10, q=2, rng_seed=7)
        q2 = randomized_qr(dense_map(a), ell=10, q=2, rng_seed=7)
        assert np.array_equal(q1.Q, q2.Q)
        assert np.array_equal(q1.R, q2.R)

    def test_two_seeds_agree_within_residual_scale(self):
        # objectives built from two independent randomised factorisations
        # differ by no more than 10x the (relative) residual estimate
        rng = np.random.default_rng(9)
        n, m = 50, 30
        svals = np.logspace(0, -8, m)
        u, _ = np.linalg.qr(rng.standard_normal((n, m)))
        v, _ = np.linalg.qr(rng.standard_normal((m, m)))
        a = (u * svals) @ v.T
        prior = identity_prior(n)
        objs, resids = [], []
        for seed in (0, 1):
            qrm = randomized_qr(dense_map(a), ell=m, q=2, rng_seed=seed,
                                drop_tol=1e-8)
            objs.append(aoptimal.assemble(qrm, prior))
            resids.append(qrm.residual_estimate)
        w_rng = np.random.default_rng(11)
        for _ in range(5):
            w = w_rng.uniform(0, 1, m)
            j0 = aoptimal.objective(objs[0], w)
            j1 = aoptimal.objective(objs[1], w)
            assert abs(j0 - j1) / abs(j0) <= 10.0 * max(resids)


class TestExactQR:
    def test_identity_input(self):
        qrm = exact_qr(np.eye(6))
        assert qrm.ell == 6
        # up to sign convention
        assert np.allclose(np.abs(qrm.Q), np.eye(6))
        assert np.allclose(qrm.Q @ qrm.R, np.eye(6))

    def test_full_rank_random(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((50, 30))
        qrm = exact_qr(a)
        assert qrm.ell == 30
        assert qrm.residual_estimate <= 1e-12
        assert qrm.orthonormality_defect() <= ORTHO_TOL

    def test_duplicated_columns_reduce_rank(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((20, 6))
        a = np.hstack([base, base[:, :3]])
        qrm = exact_qr(a)
        assert qrm.ell == 6 < a.shape[1]
        assert np.linalg.norm(a - qrm.reconstruct()) <= 1e-10 * np.linalg.norm(a)


class TestBlockConcat:
    def test_identical_blocks_recompress_to_single_rank(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((20, 8))
        block = exact_qr(a)
        merged = block_concat([block, block])
        assert merged.ell == block.ell
        assert merged.m_obs == 2
        stacked = np.hstack([a, a])
        assert (np.linalg.norm(stacked - merged.reconstruct())
                <= 1e-10 * np.linalg.norm(stacked))

    def test_orthogonal_blocks_add_ranks(self):
        rng = np.random.default_rng(6)
        q, _ = np.linalg.qr(rng.standard_normal((30, 12)))
        a1 = q[:, :6] @ rng.standard_normal((6, 8))
        a2 = q[:, 6:] @ rng.standard_normal((6, 8))
        b1, b2 = exact_qr(a1), exact_qr(a2)
        merged = block_concat([b1, b2])
        assert merged.ell == b1.ell + b2.ell

    def test_reproduces_stacked_action(self):
        rng = np.random.default_rng(7)
        blocks = [rng.standard_normal((25, 10)) for _ in range(3)]
        merged = block_concat([exact_qr(b) for b in blocks])
        stacked = np.hstack(blocks)
        assert (np.linalg.norm(stacked - merged.reconstruct())
                <= 1e-10 * np.linalg.norm(stacked))
        assert merged.orthonormality_defect() <= ORTHO_TOL

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(8)
        b1 = exact_qr(rng.standard_normal((10, 4)))
        b2 = exact_qr(rng.standard_normal((12, 4)))
        with pytest.raises(ValueError, match="share"):
            block_concat([b1, b2])


def test_exact_build_matches_dense_oracle_when_residual_small(make_instance):
    from sensoropt import oracle

    ref = make_instance(21, n=18, m=10, m_obs=2)
    assert ref.qrm.residual_estimate <= 1e-10
    rng = np.random.default_rng(0)
    for _ in range(5):
        w = rng.uniform(0, 1, ref.m)
        assert aoptimal.objective(ref.obj, w) == pytest.approx(
            oracle.dense_objective(ref.inst, w), rel=1e-8)
        g_lr = aoptimal.gradient(ref.obj, w)
        g_dn = oracle.dense_gradient(ref.inst, w)
        assert np.allclose(g_lr, g_dn, rtol=1e-6, atol=0)


def test_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    a = rng.standard_normal((15, 12))
    qrm = exact_qr(a, m=6, m_obs=2)
    save_qr(qrm, tmp_path / "qr")
    back = load_qr(tmp_path / "qr")
    assert back.ell == qrm.ell
    assert back.m == 6 and back.m_obs == 2
    assert np.allclose(back.Q, qrm.Q, rtol=0, atol=1e-15)
    assert np.allclose(back.R, qrm.R, rtol=0, atol=1e-15)
