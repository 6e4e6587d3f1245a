"""Round-trip tests for the versioned model documents."""

import numpy as np
import pytest

from credence import serialize
from credence.engine import (
    BitCondition,
    IdentityMap,
    LatentSpace,
    NbrModel,
    TableRule,
    ideal_synthetic_model,
    parse_query,
)
from credence.training import (
    AutoencoderHyper,
    AutoencoderNbr,
    SyntheticWorldConfig,
    TrainHyper,
    train_synthetic,
)


class TestModelDocuments:
    def test_ideal_model_roundtrip_is_byte_identical(self, tmp_path):
        model = ideal_synthetic_model()
        path = tmp_path / "model.json"
        serialize.save(path, model)
        first = path.read_bytes()
        again = serialize.load(path)
        serialize.save(path, again)
        assert path.read_bytes() == first

    def test_roundtrip_preserves_query_answers_exactly(self, tmp_path):
        model = ideal_synthetic_model()
        path = tmp_path / "model.json"
        serialize.save(path, model)
        loaded = serialize.load(path)
        condition, proposition = parse_query("C: x0=1; Q: x10=1")
        a = model.query(condition, proposition)
        b = loaded.query(condition, proposition)
        assert a.bel == b.bel
        assert a.pl == b.pl

    def test_table_rule_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        table = rng.random(8)
        model = NbrModel(
            LatentSpace(3), IdentityMap(3), (TableRule(table, 3),), (0.123456789123456789,)
        )
        path = tmp_path / "m.json"
        serialize.save(path, model)
        loaded = serialize.load(path)
        np.testing.assert_array_equal(loaded.rules[0].table, table)
        assert loaded.beliefs[0] == model.beliefs[0]

    def test_trained_network_model_roundtrip(self, tmp_path):
        model, _ = train_synthetic(
            SyntheticWorldConfig(count=400, seed=0), TrainHyper(max_steps=40, seed=0)
        )
        path = tmp_path / "trained.json"
        serialize.save(path, model)
        loaded = serialize.load(path)
        xs = np.random.default_rng(1).integers(0, 2, size=(32, 11), dtype=np.uint8)
        np.testing.assert_array_equal(
            model.keep_probability_batch(xs), loaded.keep_probability_batch(xs)
        )

    def test_rejects_unknown_version(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"version": 99, "kind": "rule-model"}')
        with pytest.raises(serialize.DocumentError):
            serialize.load(path)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("not json at all")
        with pytest.raises(serialize.DocumentError):
            serialize.load(path)


class TestAutoencoderDocuments:
    def test_autoencoder_artifact_roundtrip(self, tmp_path):
        from credence.autodiff import Mlp

        rng = np.random.default_rng(2)
        hyper = AutoencoderHyper(latent_dim=4, hidden_width=8)
        artifact = AutoencoderNbr(
            encoder=Mlp([6, 8, 4], rng=rng),
            decoder=Mlp([4, 8, 6], rng=rng),
            networks=[Mlp([5, 8, 1], rng=rng), Mlp([5, 8, 1], rng=rng)],
            slices=[(0, 5), (1, 6)],
            beliefs=(0.8, 0.65),
            hyper=hyper,
            observation_dim=6,
        )
        path = tmp_path / "ae.json"
        serialize.save(path, artifact)
        first = path.read_bytes()
        loaded = serialize.load(path)
        serialize.save(path, loaded)
        assert path.read_bytes() == first
        xs = np.random.default_rng(3).integers(0, 2, size=(16, 6), dtype=np.uint8)
        np.testing.assert_array_equal(
            artifact.composed_model().keep_probability_batch(xs),
            loaded.composed_model().keep_probability_batch(xs),
        )
        np.testing.assert_array_equal(
            artifact.latent_model().x_table(), loaded.latent_model().x_table()
        )


class TestClassifierDocuments:
    def test_rule_bank_roundtrip(self, tmp_path):
        from credence.classifier import AdvConfig, ToyDataConfig, train_toy_classifier

        classifier = train_toy_classifier(
            ToyDataConfig(points_per_class=30, seed=0),
            AdvConfig(step1_steps=40, step2_steps=40, step3_steps=20, seed=0),
        )
        path = tmp_path / "bank.json"
        serialize.save(path, classifier)
        first = path.read_bytes()
        loaded = serialize.load(path)
        serialize.save(path, loaded)
        assert path.read_bytes() == first
        xs = np.random.default_rng(4).normal(size=(20, 2))
        np.testing.assert_array_equal(classifier.predict(xs), loaded.predict(xs))
