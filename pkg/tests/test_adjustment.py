import math

import numpy as np
import pytest
import torch

from senta.adjustment import (
    FeatureBank,
    adjust,
    build_feature_bank,
    class_means,
    compute_alpha,
    distill_loss,
    predict,
    train_distill,
    train_senta,
)
from senta.bundles import ModelBundle
from senta.confounder import ModelConfig, confounder_infer, train_confounder
from senta.corpus import POLARITIES, SynthConfig, carve_dev, generate_synthetic
from senta.errors import (
    BankMismatchError,
    ConfigError,
    DimensionError,
    EmptyClassError,
)

FAST = ModelConfig(dim=32, heads=4, ffn_dim=64, max_len=24, max_epochs=2, seed=0)


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SynthConfig(train_size=120, test_size=40), seed=13)


@pytest.fixture(scope="module")
def splits(corpus):
    return carve_dev(corpus.train, seed=1)


@pytest.fixture(scope="module")
def conf_bundle(splits):
    train, dev = splits
    return train_confounder(train, dev, FAST)


@pytest.fixture(scope="module")
def bank(conf_bundle, splits):
    return build_feature_bank(conf_bundle, splits[0])


def toy_bank(means, counts=None):
    means = np.asarray(means, dtype=np.float64)
    return FeatureBank(
        means=means,
        counts=counts or tuple([1] * means.shape[0]),
        source_bundle_id="test",
    )


class TestClassMeans:
    def test_singletons_equal_inputs(self):
        hidden = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        means, counts = class_means(hidden, [0, 1, 2])
        assert np.array_equal(means, hidden)
        assert counts == (1, 1, 1)

    def test_two_vector_mean(self):
        hidden = np.array([[0.0, 0.0], [2.0, 4.0], [9.0, 9.0]])
        means, counts = class_means(hidden, [0, 0, 1])
        assert np.array_equal(means[0], [1.0, 2.0])
        assert counts == (2, 1, 0)

    def test_matches_single_pass_oracle(self):
        # Independent oracle: plain running sums, one vector at a time.
        rng = np.random.default_rng(42)
        hidden = rng.normal(size=(300, 17)).astype(np.float32)
        labels = rng.integers(0, 3, size=300)
        sums = [np.zeros(17, dtype=np.float64) for _ in range(3)]
        counts = [0, 0, 0]
        for vec, lab in zip(hidden, labels):
            sums[lab] += vec.astype(np.float64)
            counts[lab] += 1
        means, got_counts = class_means(hidden, labels)
        assert got_counts == tuple(counts)
        for c in range(3):
            oracle = sums[c] / counts[c]
            rel = np.abs(means[c] - oracle) / np.maximum(np.abs(oracle), 1e-12)
            assert rel.max() < 1e-6


class TestBuildFeatureBank:
    def test_means_match_recomputation(self, conf_bundle, bank, splits):
        outs = confounder_infer(conf_bundle, splits[0])
        hidden = np.stack([o.hidden for o in outs]).astype(np.float64)
        labels = [POLARITIES.index(i.polarity) for i in splits[0]]
        for c in range(3):
            rows = hidden[[i for i, l in enumerate(labels) if l == c]]
            assert np.allclose(bank.means[c], rows.mean(axis=0), rtol=1e-6)

    def test_counts_and_source(self, conf_bundle, bank, splits):
        assert sum(bank.counts) == len(splits[0])
        assert bank.source_bundle_id == conf_bundle.content_id()

    def test_empty_class_rejected(self, conf_bundle, splits):
        only_two = [i for i in splits[0] if i.polarity != "neutral"]
        with pytest.raises(EmptyClassError, match="neutral"):
            build_feature_bank(conf_bundle, only_two)

    def test_round_trip(self, bank, tmp_path):
        bank.save(tmp_path / "bank.bin")
        loaded = FeatureBank.load(tmp_path / "bank.bin")
        assert np.array_equal(loaded.means, bank.means)
        assert loaded.counts == bank.counts
        assert loaded.content_id() == bank.content_id()


class TestComputeAlpha:
    def test_equals_confounder_probs(self, conf_bundle, corpus):
        inst = corpus.ori_test[0]
        alpha = compute_alpha(conf_bundle, inst)
        (out,) = confounder_infer(conf_bundle, [inst])
        assert np.allclose(alpha, out.probs, atol=0)

    def test_simplex(self, conf_bundle, corpus):
        for inst in corpus.ori_test[:10]:
            alpha = compute_alpha(conf_bundle, inst)
            assert abs(float(alpha.sum()) - 1.0) < 1e-6
            assert np.all(alpha >= 0)

    def test_uniform_head(self, conf_bundle, corpus):
        saved = {k: v.clone() for k, v in conf_bundle.head.state_dict().items()}
        with torch.no_grad():
            conf_bundle.head.weight.zero_()
            conf_bundle.head.bias.zero_()
        try:
            alpha = compute_alpha(conf_bundle, corpus.ori_test[0])
            assert np.allclose(alpha, 1.0 / 3.0, atol=1e-7)
        finally:
            conf_bundle.head.load_state_dict(saved)


class TestAdjust:
    def test_one_hot_selects_class_mean(self):
        bank = toy_bank([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        rep = adjust(np.zeros(2), np.array([0.0, 1.0, 0.0]), bank)
        assert np.array_equal(rep.h_confound, [3.0, 4.0])

    def test_equal_means_degenerate(self):
        v = np.array([7.0, -1.0, 2.0])
        bank = toy_bank([v, v, v])
        rep = adjust(np.zeros(3), np.array([0.2, 0.5, 0.3]), bank)
        assert np.allclose(rep.h_confound, v)

    def test_weighted_sum_of_basis(self):
        bank = toy_bank(np.eye(3))
        rep = adjust(np.zeros(3), np.array([0.5, 0.25, 0.25]), bank)
        assert np.allclose(rep.h_confound, [0.5, 0.25, 0.25], atol=1e-12)

    def test_concatenation_layout(self):
        bank = toy_bank(np.eye(3))
        h = np.array([9.0, 8.0])
        rep = adjust(h, np.array([1.0, 0.0, 0.0]), bank)
        assert rep.h_adjust.shape == (5,)
        assert np.array_equal(rep.h_adjust[:2], h)
        assert np.array_equal(rep.h_adjust[2:], rep.h_confound)

    def test_one_over_m_scale(self):
        bank = toy_bank(np.eye(3))
        alpha = np.array([0.5, 0.25, 0.25])
        plain = adjust(np.zeros(3), alpha, bank, scale_mode="none")
        scaled = adjust(np.zeros(3), alpha, bank, scale_mode="one-over-m")
        assert np.allclose(scaled.h_confound, plain.h_confound / 3.0)

    def test_linear_in_alpha(self):
        rng = np.random.default_rng(5)
        bank = toy_bank(rng.normal(size=(3, 6)))
        a = rng.dirichlet(np.ones(3))
        b = rng.dirichlet(np.ones(3))
        lam = 0.3
        mix = adjust(np.zeros(6), lam * a + (1 - lam) * b, bank).h_confound
        parts = lam * adjust(np.zeros(6), a, bank).h_confound + (
            1 - lam
        ) * adjust(np.zeros(6), b, bank).h_confound
        assert np.allclose(mix, parts, atol=1e-12)

    def test_convex_hull_bounds(self):
        rng = np.random.default_rng(6)
        bank = toy_bank(rng.normal(size=(3, 8)))
        lo = bank.means.min(axis=0) - 1e-12
        hi = bank.means.max(axis=0) + 1e-12
        for _ in range(100):
            alpha = rng.dirichlet(np.ones(3))
            hc = adjust(np.zeros(8), alpha, bank).h_confound
            assert np.all(hc >= lo) and np.all(hc <= hi)

    def test_dimension_errors(self):
        bank = toy_bank(np.eye(3))
        with pytest.raises(DimensionError):
            adjust(np.zeros((2, 2)), np.array([1.0, 0.0, 0.0]), bank)
        with pytest.raises(DimensionError):
            adjust(np.zeros(3), np.array([0.5, 0.5]), bank)
        with pytest.raises(ConfigError):
            adjust(np.zeros(3), np.array([1.0, 0.0, 0.0]), bank, scale_mode="half")

    def test_alpha_must_be_simplex(self):
        bank = toy_bank(np.eye(3))
        with pytest.raises(ValueError):
            adjust(np.zeros(3), np.array([0.9, 0.9, 0.9]), bank)


class TestTrainSenta:
    def test_confounder_frozen(self, conf_bundle, bank, splits, tmp_path):
        train, dev = splits
        before = conf_bundle.save(tmp_path / "before")
        senta = train_senta(conf_bundle, bank, train, dev, FAST)
        after = senta.confounder.save(tmp_path / "after")
        assert (before / "params.bin").read_bytes() == (after / "params.bin").read_bytes()
        assert (before / "vocab.txt").read_bytes() == (after / "vocab.txt").read_bytes()

    def test_zero_epochs_still_evaluable(self, conf_bundle, bank, splits, corpus):
        train, dev = splits
        cfg = ModelConfig(dim=32, heads=4, ffn_dim=64, max_len=24, max_epochs=0)
        senta = train_senta(conf_bundle, bank, train, dev, cfg)
        preds = predict(senta, corpus.ori_test[:8])
        assert len(preds) == 8
        assert set(preds) <= set(POLARITIES)

    def test_metadata_records_provenance(self, conf_bundle, bank, splits):
        train, dev = splits
        senta = train_senta(conf_bundle, bank, train, dev, FAST)
        assert senta.meta["bank_id"] == bank.content_id()
        assert senta.meta["confounder_id"] == conf_bundle.content_id()
        assert senta.meta["scale_mode"] == "none"

    def test_bank_dim_mismatch(self, conf_bundle, splits):
        train, dev = splits
        bad = toy_bank(np.zeros((3, 7)))
        with pytest.raises(BankMismatchError):
            train_senta(conf_bundle, bad, train, dev, FAST)

    def test_foreign_bank_rejected(self, conf_bundle, splits):
        train, dev = splits
        foreign = toy_bank(np.zeros((3, 32)))
        with pytest.raises(BankMismatchError):
            train_senta(conf_bundle, foreign, train, dev, FAST)

    def test_deterministic(self, conf_bundle, bank, splits):
        train, dev = splits
        a = train_senta(conf_bundle, bank, train, dev, FAST)
        b = train_senta(conf_bundle, bank, train, dev, FAST)
        assert a.content_id() == b.content_id()

    def test_save_load_round_trip(self, conf_bundle, bank, splits, corpus, tmp_path):
        train, dev = splits
        senta = train_senta(conf_bundle, bank, train, dev, FAST)
        senta.save(tmp_path / "senta")
        loaded = ModelBundle.load(tmp_path / "senta")
        assert loaded.kind == "senta"
        batch = corpus.revnon_test[:12]
        assert predict(loaded, batch) == predict(senta, batch)

    def test_share_init_copies_encoder(self, conf_bundle, bank, splits):
        train, dev = splits
        cfg = ModelConfig(dim=32, heads=4, ffn_dim=64, max_len=24, max_epochs=0)
        senta = train_senta(conf_bundle, bank, train, dev, cfg, share_init=True)
        for k, v in senta.encoder.state_dict().items():
            assert torch.equal(v, conf_bundle.encoder.state_dict()[k])


class TestDistillLoss:
    def test_weight_zero_is_plain_cross_entropy(self):
        torch.manual_seed(0)
        student = torch.randn(8, 3)
        teacher = torch.randn(8, 3)
        labels = torch.randint(0, 3, (8,))
        ce = torch.nn.functional.cross_entropy(student, labels)
        loss = distill_loss(student, teacher, labels, temperature=3.0, weight=0.0)
        assert abs(loss.item() - ce.item()) < 1e-9

    @pytest.mark.parametrize("temperature", [1.0, 2.0, 4.0])
    def test_equal_logits_zero_kl(self, temperature):
        torch.manual_seed(1)
        logits = torch.randn(8, 3)
        labels = torch.randint(0, 3, (8,))
        full = distill_loss(logits, logits.clone(), labels, temperature, weight=1.0)
        assert abs(full.item()) < 1e-9

    def test_hand_computed_fixture(self):
        # teacher (1, 0, -1), student (0, 0, 0), T=2: KL computed with plain
        # math, independently of the torch implementation.
        t = [1.0, 0.0, -1.0]
        temp = 2.0
        exp_t = [math.exp(v / temp) for v in t]
        z = sum(exp_t)
        p_t = [e / z for e in exp_t]
        kl = sum(p * (math.log(p) - math.log(1.0 / 3.0)) for p in p_t)
        expected = temp**2 * kl

        student = torch.zeros(1, 3)
        teacher = torch.tensor([t])
        labels = torch.tensor([0])
        loss = distill_loss(student, teacher, labels, temperature=temp, weight=1.0)
        assert abs(loss.item() - expected) < 1e-6

    def test_config_validation(self):
        logits = torch.zeros(1, 3)
        labels = torch.tensor([0])
        with pytest.raises(ConfigError):
            distill_loss(logits, logits, labels, temperature=0.0, weight=0.5)
        with pytest.raises(ConfigError):
            distill_loss(logits, logits, labels, temperature=1.0, weight=1.5)


class TestTrainDistill:
    def test_trains_and_predicts(self, conf_bundle, splits, corpus):
        train, dev = splits
        student = train_distill(conf_bundle, train, dev, FAST, temperature=2.0, weight=0.5)
        assert student.kind == "plain"
        assert student.meta["teacher_id"] == conf_bundle.content_id()
        preds = predict(student, corpus.ori_test[:8])
        assert set(preds) <= set(POLARITIES)

    def test_bad_config(self, conf_bundle, splits):
        train, dev = splits
        with pytest.raises(ConfigError):
            train_distill(conf_bundle, train, dev, FAST, temperature=-1.0)
        with pytest.raises(ConfigError):
            train_distill(conf_bundle, train, dev, FAST, weight=2.0)


class TestMixtureScaleAtStepZero:
    def test_training_path_mixtures_scale_by_one_over_m(self, conf_bundle, bank, corpus):
        # The precomputed training-time mixtures must differ between scale
        # modes by exactly the 1/m factor before the head ever sees them.
        from senta.adjustment import _mixtures

        batch = corpus.ori_test[:16]
        plain = _mixtures(conf_bundle, bank, batch, "none")
        scaled = _mixtures(conf_bundle, bank, batch, "one-over-m")
        assert torch.allclose(scaled * 3.0, plain, atol=1e-6)


class TestConvexHullExactSolve:
    def test_mixture_weights_recoverable(self):
        # With m <= d+1 and affinely independent means, the mixture's convex
        # weights can be recovered by solving the linear system exactly.
        rng = np.random.default_rng(12)
        bank = toy_bank(rng.normal(size=(3, 8)))
        for _ in range(25):
            alpha = rng.dirichlet(np.ones(3))
            hc = adjust(np.zeros(8), alpha, bank).h_confound
            system = np.vstack([bank.means.T, np.ones(3)])
            rhs = np.concatenate([hc, [1.0]])
            recovered, residual, *_ = np.linalg.lstsq(system, rhs, rcond=None)
            assert np.allclose(system @ recovered, rhs, atol=1e-9)
            assert np.allclose(recovered, alpha, atol=1e-8)
            assert np.all(recovered >= -1e-9)
