"""Meta transfer learning: lasso aggregation, sigma pilot, residual fit."""

import math

import numpy as np
import pytest

from embalign.data import PairedDataset
from embalign.errors import DomainError, IntegrityError
from embalign.mtl import (
    SourceBank,
    estimate_sigma,
    fit_mtl,
    fit_residual_mtl,
    fit_weights_lasso,
    lasso_penalty_rate,
    predict_mtl,
    restricted_eigen_diag,
    source_predictions,
)
from embalign.nn import MlpParams, forward_batch, lq_norm, params_equal
from embalign.oracles import lasso_prox_gradient
from embalign.train import Architecture, FixedPenalty, TrainConfig, fit_penalized
from embalign.world import MlpTruth, MultiSubjectSpec, WorldSpec, generate


def quick_cfg(**kw):
    base = dict(
        epochs=12, batch_size=64, learning_rate=0.2, lr_decay=1.0,
        seed=0, val_fraction=0.0, patience=0,
    )
    base.update(kw)
    return TrainConfig(**base)


def random_bank(seed, k=3, d=5, m=3, hidden=(4,)):
    rng = np.random.default_rng(seed)
    models = []
    for _ in range(k):
        dims = [d, *hidden, m]
        layers = [0.5 * rng.standard_normal((dims[i + 1], dims[i])) for i in range(len(dims) - 1)]
        models.append(MlpParams(layers))
    return SourceBank(models)


def lasso_objective(preds, y, gamma, lam):
    resid = y - np.einsum("k,ikm->im", gamma, preds)
    return float(np.sum(resid * resid) / y.shape[0]) + lam * float(np.sum(np.abs(gamma)))


class TestSourcePredictions:
    def test_single_source_equals_forward_batch(self):
        bank = random_bank(0, k=1)
        x = np.random.default_rng(1).standard_normal((6, 5))
        preds = source_predictions(bank, x)
        np.testing.assert_array_equal(preds[:, 0, :], forward_batch(bank.models[0], x))

    def test_zero_model_contributes_zeros(self):
        bank = SourceBank([MlpParams([np.zeros((4, 5)), np.zeros((3, 4))])])
        preds = source_predictions(bank, np.ones((2, 5)))
        np.testing.assert_array_equal(preds, np.zeros((2, 1, 3)))

    def test_entrywise_match_against_individual_calls(self):
        from embalign.nn import forward

        bank = random_bank(2, k=3)
        x = np.random.default_rng(3).standard_normal((2, 5))
        preds = source_predictions(bank, x)
        for i in range(2):
            for k in range(3):
                np.testing.assert_array_equal(preds[i, k], forward(bank.models[k], x[i]))


class TestEstimateSigma:
    def test_noiseless_combination_recovered(self):
        bank = random_bank(4, k=3)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((100, 5))
        preds = source_predictions(bank, x)
        y = np.einsum("k,ikm->im", np.array([0.5, -0.2, 0.8]), preds)
        est = estimate_sigma(PairedDataset(x, y), bank)
        assert est.value <= 1e-6
        assert not est.ridge_fallback

    def test_pure_noise_recovers_sigma(self):
        bank = random_bank(6, k=4)
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2000, 5))
        y = 0.7 * rng.standard_normal((2000, 3))
        est = estimate_sigma(PairedDataset(x, y), bank)
        assert abs(est.value - 0.7) <= 0.15 * 0.7

    def test_scaling(self):
        bank = random_bank(8, k=4)
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2000, 5))
        noise = rng.standard_normal((2000, 3))
        a = estimate_sigma(PairedDataset(x, 0.4 * noise), bank)
        b = estimate_sigma(PairedDataset(x, 0.8 * noise), bank)
        assert abs(b.value - 2 * a.value) <= 0.15 * 2 * a.value

    def test_needs_more_rows_than_sources(self):
        bank = random_bank(10, k=3)
        with pytest.raises(DomainError):
            estimate_sigma(PairedDataset(np.zeros((3, 5)), np.zeros((3, 3))), bank)

    def test_ridge_fallback_on_duplicated_sources(self):
        base = random_bank(11, k=1)
        bank = SourceBank([base.models[0], base.models[0].copy()])
        rng = np.random.default_rng(12)
        x = rng.standard_normal((50, 5))
        y = rng.standard_normal((50, 3))
        est = estimate_sigma(PairedDataset(x, y), bank)
        assert est.ridge_fallback


class TestFitWeightsLasso:
    def test_global_kill_threshold(self):
        bank = random_bank(13, k=3)
        rng = np.random.default_rng(14)
        x = rng.standard_normal((30, 5))
        y = rng.standard_normal((30, 3))
        preds = source_predictions(bank, x)
        cross = np.einsum("im,ikm->k", y, preds) / 30
        lam = 2.0 * float(np.max(np.abs(cross))) + 1e-12
        res = fit_weights_lasso(PairedDataset(x, y), bank, lam)
        np.testing.assert_array_equal(res.gamma, np.zeros(3))
        assert res.converged

    def test_single_source_closed_form(self):
        bank = random_bank(15, k=1)
        rng = np.random.default_rng(16)
        x = rng.standard_normal((40, 5))
        y = rng.standard_normal((40, 3))
        preds = source_predictions(bank, x)[:, 0, :]
        res = fit_weights_lasso(PairedDataset(x, y), bank, 0.0)
        expected = float(np.sum(y * preds) / np.sum(preds * preds))
        assert res.gamma[0] == pytest.approx(expected, rel=1e-12)

    def test_matches_proximal_gradient_oracle(self):
        bank = random_bank(17, k=3)
        rng = np.random.default_rng(18)
        x = rng.standard_normal((4, 5))
        y = rng.standard_normal((4, 2)) @ np.ones((2, 3)) * 0.3 + rng.standard_normal((4, 3))
        data = PairedDataset(x, y)
        preds = source_predictions(bank, x)
        lam = 0.05
        res = fit_weights_lasso(data, bank, lam)
        oracle = lasso_prox_gradient(preds, y, lam)
        ours = lasso_objective(preds, y, res.gamma, lam)
        theirs = lasso_objective(preds, y, oracle, lam)
        assert ours <= theirs + 1e-8
        assert res.kkt_violation <= 1e-10

    def test_degenerate_source_flagged(self):
        zero = MlpParams([np.zeros((4, 5)), np.zeros((3, 4))])
        bank = SourceBank([zero] + random_bank(19, k=1).models)
        rng = np.random.default_rng(20)
        data = PairedDataset(rng.standard_normal((20, 5)), rng.standard_normal((20, 3)))
        res = fit_weights_lasso(data, bank, 0.01)
        assert res.degenerate == [0]
        assert res.gamma[0] == 0.0


class TestLassoPenaltyRate:
    def test_zero_sigma(self):
        assert lasso_penalty_rate(0.0, 5, 100, 1.0) == 0.0

    def test_unit_case(self):
        assert lasso_penalty_rate(1.0, math.e, 1, 1.0) == pytest.approx(1.0, abs=1e-12)

    def test_quadrupling_n_halves(self):
        a = lasso_penalty_rate(1.0, 10, 100, 0.5)
        b = lasso_penalty_rate(1.0, 10, 400, 0.5)
        assert b == pytest.approx(a / 2, rel=1e-12)

    def test_log_floor_for_single_source(self):
        assert lasso_penalty_rate(1.0, 1, 100, 1.0) == pytest.approx(0.1, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            lasso_penalty_rate(-1.0, 5, 100, 1.0)
        with pytest.raises(DomainError):
            lasso_penalty_rate(1.0, 0, 100, 1.0)


class TestFitResidualMtl:
    def test_zero_gamma_reduces_to_direct_fit(self):
        bank = random_bank(21, k=2)
        rng = np.random.default_rng(22)
        data = PairedDataset(rng.standard_normal((50, 5)), rng.standard_normal((50, 3)))
        cfg = quick_cfg(lambda_mode=FixedPenalty(0.02), seed=23)
        res, _ = fit_residual_mtl(data, bank, np.zeros(2), Architecture((5,)), cfg)
        direct, _ = fit_penalized(data.x, data.y, Architecture((5,)), cfg, lam=0.02)
        assert params_equal(res, direct)

    def test_perfectly_explained_target_gives_null_residual(self):
        bank = random_bank(24, k=2)
        rng = np.random.default_rng(25)
        x = rng.standard_normal((60, 5))
        gamma = np.array([0.6, -0.3])
        y = np.einsum("k,ikm->im", gamma, source_predictions(bank, x))
        res, _ = fit_residual_mtl(
            PairedDataset(x, y), bank, gamma, Architecture((5,)), quick_cfg(epochs=120)
        )
        assert lq_norm(res.layers[-1], 2.0) <= 1e-6

    def test_composition_does_not_hurt_training_loss(self):
        bank = random_bank(26, k=2)
        rng = np.random.default_rng(27)
        x = rng.standard_normal((80, 5))
        y = rng.standard_normal((80, 3)) * 0.5
        data = PairedDataset(x, y)
        gamma = np.array([0.2, 0.1])
        res, _ = fit_residual_mtl(
            data, bank, gamma, Architecture((5,)), quick_cfg(lambda_mode=FixedPenalty(0.001), epochs=30)
        )
        agg = np.einsum("k,ikm->im", gamma, source_predictions(bank, x))
        loss_agg = float(np.mean(np.sum((y - agg) ** 2, axis=1)))
        composed = agg + forward_batch(res, x)
        loss_comp = float(np.mean(np.sum((y - composed) ** 2, axis=1)))
        assert loss_comp <= loss_agg + 1e-8


class TestFitMtl:
    def test_single_zero_source_collapses_to_direct_fit(self):
        zero = MlpParams([np.zeros((4, 5)), np.zeros((3, 4))])
        bank = SourceBank([zero])
        rng = np.random.default_rng(28)
        data = PairedDataset(rng.standard_normal((40, 5)), 0.3 * rng.standard_normal((40, 3)))
        cfg = quick_cfg(lambda_mode=FixedPenalty(0.01), seed=29)
        model = fit_mtl(data, bank, Architecture((5,)), cfg)
        np.testing.assert_array_equal(model.gamma, np.zeros(1))
        x_new = rng.standard_normal((7, 5))
        np.testing.assert_array_equal(
            predict_mtl(model, bank, x_new), forward_batch(model.residual, x_new)
        )

    def test_records_pipeline_quantities(self):
        spec = WorldSpec(
            6, 4, MlpTruth(Architecture((5,))), sigma=0.05,
            subjects=MultiSubjectSpec(3, 1, (0.7, 0.0, 0.0), 0.0), seed=30,
        )
        world = generate(spec, 80, 0, 20)
        cfg = quick_cfg(seed=31)
        model = fit_mtl(world.paired, world.bank, Architecture((5,)), cfg)
        assert model.sigma_hat >= 0
        assert model.lambdas.weights >= 0
        assert model.bank_digest == world.bank.digest()
        assert model.lasso is not None and model.lasso.kkt_violation <= 1e-10

    def test_bank_mismatch_rejected(self):
        bank = random_bank(32, k=2)
        rng = np.random.default_rng(33)
        data = PairedDataset(rng.standard_normal((30, 5)), rng.standard_normal((30, 3)))
        model = fit_mtl(data, bank, Architecture((5,)), quick_cfg())
        other = random_bank(34, k=2)
        with pytest.raises(IntegrityError):
            predict_mtl(model, other, data.x)

    def test_prediction_composition_bitwise(self):
        bank = random_bank(35, k=3)
        rng = np.random.default_rng(36)
        data = PairedDataset(rng.standard_normal((40, 5)), rng.standard_normal((40, 3)))
        model = fit_mtl(data, bank, Architecture((5,)), quick_cfg(seed=37))
        x_new = rng.standard_normal((9, 5))
        expected = forward_batch(model.residual, x_new)
        for k in range(bank.k):
            expected = expected + model.gamma[k] * forward_batch(bank.models[k], x_new)
        np.testing.assert_array_equal(predict_mtl(model, bank, x_new), expected)

    def test_sources_never_mutated(self):
        from embalign.formats import model_to_bytes

        bank = random_bank(38, k=2)
        before = [model_to_bytes(m) for m in bank.models]
        rng = np.random.default_rng(39)
        data = PairedDataset(rng.standard_normal((30, 5)), rng.standard_normal((30, 3)))
        fit_mtl(data, bank, Architecture((5,)), quick_cfg())
        after = [model_to_bytes(m) for m in bank.models]
        assert before == after


class TestRestrictedEigenDiag:
    def test_orthonormal_predictions_give_one(self):
        # single-output linear sources picking distinct coordinates of a
        # scaled identity design: the prediction gram is exactly identity
        d = 4
        models = [MlpParams([np.eye(d)[k : k + 1]]) for k in range(3)]
        bank = SourceBank(models)
        x = np.eye(d) * 2.0  # n = d rows; (1/n) sum x_ik x_il = delta_kl
        got = restricted_eigen_diag(bank, x, [0, 1, 2])
        assert got == pytest.approx(1.0, abs=1e-12)

    def test_duplicated_source_gives_zero(self):
        base = random_bank(40, k=1)
        bank = SourceBank([base.models[0], base.models[0].copy()])
        x = np.random.default_rng(41).standard_normal((30, 5))
        assert restricted_eigen_diag(bank, x, [0, 1]) == pytest.approx(0.0, abs=1e-10)

    def test_matches_loop_built_gram_eigensolve(self):
        bank = random_bank(42, k=3)
        x = np.random.default_rng(43).standard_normal((20, 5))
        preds = source_predictions(bank, x)
        gram = np.zeros((3, 3))
        for i in range(20):
            for j in range(3):
                for k in range(3):
                    gram[j, k] += preds[i, j] @ preds[i, k]
        gram /= 20
        expected = float(np.linalg.eigvalsh(gram)[0])
        assert restricted_eigen_diag(bank, x, [0, 1, 2]) == pytest.approx(expected, abs=1e-8)

    def test_empty_support_rejected(self):
        bank = random_bank(44, k=2)
        with pytest.raises(DomainError):
            restricted_eigen_diag(bank, np.zeros((5, 5)), [])
