import dataclasses
import json
import os

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rxnvae import vae
from rxnvae.config import ModelConfig
from rxnvae.errors import EmptyDataset, NonFiniteError, SchemaError, TrainingDiverged
from rxnvae.executor import compute_metrics, synthesizability_eval
from rxnvae.generator import generate_toy_dataset
from rxnvae.jt_codec import decode_junction
from rxnvae.logger import RunLogger
from rxnvae.numerics import constant
from rxnvae.trees import validate_structure
from rxnvae.vae import (
    RxnTreeVAE,
    elbo_loss,
    embed,
    evaluate_loss,
    kl_weight,
    load_model,
    reconstruct,
    sample_prior,
    save_model,
    sidecar_path,
    train,
)

from .gradcheck import max_rel_error


@pytest.mark.parametrize("epoch, warmup, beta", [
    (1, 10, 0.0),
    (6, 10, 0.5),
    (11, 10, 1.0),
    (40, 10, 1.0),
    (1, 0, 1.0),
])
def test_kl_weight_schedule(epoch, warmup, beta):
    assert kl_weight(epoch, warmup) == pytest.approx(beta)


def test_beta_zero_is_reconstruction_only(tiny_model, toy_data):
    _, pairs = toy_data
    _, parts = elbo_loss(tiny_model, pairs[0], 0.0, np.random.default_rng(0))
    assert parts["total"] == parts["jt"] + parts["rxn"]


def test_components_are_nonnegative(tiny_model, toy_data):
    _, pairs = toy_data
    rng = np.random.default_rng(1)
    for pair in pairs[:5]:
        _, parts = elbo_loss(tiny_model, pair, 1.0, rng)
        assert all(parts[k] >= 0 for k in ("jt", "rxn", "kl_x", "kl_y", "total"))


@pytest.mark.parametrize("seed", range(20))
def test_elbo_gradients_on_two_step_pair(small_vocab, small_pairs, seed):
    pair = small_pairs[1]
    assert pair.reaction.depth() == 2
    model = RxnTreeVAE(ModelConfig(latent_dim=2, hidden_dim=3, seed=seed), small_vocab)

    def loss():
        return elbo_loss(model, pair, 0.7, np.random.default_rng(100 + seed))[0]

    assert max_rel_error(loss, model.params.values()) <= 1e-4


def test_train_rejects_empty_dataset(tiny_model):
    with pytest.raises(EmptyDataset):
        train(tiny_model, [])


def test_training_is_deterministic(toy_data, tiny_config):
    vocab, pairs = toy_data
    finals = []
    for _ in range(2):
        model = RxnTreeVAE(tiny_config, vocab)
        train(model, pairs[:6])
        finals.append(model.params.state_dict())
    for name in finals[0]:
        assert_array_equal(finals[0][name], finals[1][name])


def test_reconstruction_loss_goes_down(toy_data, tiny_config):
    vocab, pairs = toy_data
    config = dataclasses.replace(tiny_config, epochs=20, batch_size=4)
    report = train(RxnTreeVAE(config, vocab), pairs[:10], config)
    first, last = report.rows[0], report.rows[-1]
    assert len(report.rows) == 20
    assert last.jt + last.rxn < first.jt + first.rxn


def test_report_and_run_log(tmp_path, tiny_model, toy_data):
    _, pairs = toy_data
    run_log = RunLogger(os.path.join(tmp_path, "train.log"))
    report = train(tiny_model, pairs[:4], run_logger=run_log)
    assert [r.epoch for r in report.rows] == [1, 2]
    assert report.rows[0].beta == 0.0
    assert report.last.beta == 1.0
    assert sum(" EPOCH " in line for line in run_log.lines) == 2

    csv_path = os.path.join(tmp_path, "train.csv")
    report.write_csv(csv_path)
    with open(csv_path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0].split(",") == list(report.FIELDS) + ["kl_warmup_epochs"]
    assert len(lines) == 3


def test_non_finite_loss_names_the_example(monkeypatch, tiny_model, toy_data):
    _, pairs = toy_data

    def explode(*args, **kwargs):
        raise NonFiniteError("exp produced non-finite values")

    monkeypatch.setattr(vae, "elbo_loss", explode)
    with pytest.raises(TrainingDiverged) as info:
        train(tiny_model, pairs[:3])
    assert info.value.example_index in (0, 1, 2)


def test_sample_prior(tiny_model):
    rng = np.random.default_rng(3)
    assert sample_prior(tiny_model, 0, rng) == []
    for pair in sample_prior(tiny_model, 5, rng):
        validate_structure(pair.reaction, tiny_model.vocab.templates, tiny_model.vocab.n_starting)
        pair.junction.validate(tiny_model.vocab.n_substructures)


def test_greedy_prior_samples_repeat(tiny_model):
    a = sample_prior(tiny_model, 3, np.random.default_rng(8), greedy=True)
    b = sample_prior(tiny_model, 3, np.random.default_rng(8), greedy=True)
    assert a == b


def test_embed_is_deterministic(tiny_model, toy_data):
    _, pairs = toy_data
    a = embed(tiny_model, pairs[0])
    b = embed(tiny_model, pairs[0])
    assert_array_equal(a[0], b[0])
    assert_array_equal(a[1], b[1])
    assert a[0].shape == (tiny_model.latent_dim,)


def test_reconstruct_returns_valid_pair(tiny_model, toy_data):
    _, pairs = toy_data
    pair = reconstruct(tiny_model, pairs[0])
    validate_structure(pair.reaction, tiny_model.vocab.templates, tiny_model.vocab.n_starting)


def test_checkpoint_round_trip(tmp_path, tiny_model, toy_data):
    _, pairs = toy_data
    train(tiny_model, pairs[:4])
    path = os.path.join(tmp_path, "model.ckpt")
    save_model(tiny_model, path)
    loaded = load_model(path)

    assert loaded.config == tiny_model.config
    assert loaded.vocab == tiny_model.vocab
    assert loaded.adam.t == tiny_model.adam.t
    for name, arr in tiny_model.params.state_dict().items():
        assert_array_equal(loaded.params[name].data, arr.astype(np.float32).astype(np.float64))
        assert_allclose(loaded.adam.m[name], tiny_model.adam.m[name], rtol=1e-6, atol=1e-30)

    before = evaluate_loss(tiny_model, pairs[:4], seed=2)
    after = evaluate_loss(loaded, pairs[:4], seed=2)
    assert after["total"] == pytest.approx(before["total"], rel=1e-4)


def test_bad_sidecar(tmp_path, tiny_model):
    path = os.path.join(tmp_path, "model.ckpt")
    save_model(tiny_model, path)
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump({"format_version": 99}, f)
    with pytest.raises(SchemaError):
        load_model(path)


@pytest.mark.slow
def test_training_halves_loss_on_toy_corpus():
    vocab, pairs = generate_toy_dataset(seed=0, n_trees=200, n_templates=8, n_start_molecules=20, max_depth=2,
                                        apply_frequency_floor=False)
    config = ModelConfig(latent_dim=8, hidden_dim=32, lr=0.003, batch_size=16, epochs=30, kl_warmup_epochs=5)
    report = train(RxnTreeVAE(config, vocab), pairs, config)
    assert report.rows[-1].total < 0.5 * report.rows[0].total


# ---------------------------------------------------------------- long experiments

def _overfit(n_trees, epochs):
    vocab, pairs = generate_toy_dataset(seed=5, n_trees=n_trees, n_templates=6, n_start_molecules=15, max_depth=2,
                                        apply_frequency_floor=False)
    # warm-up longer than training keeps beta small, so the posterior means stay informative
    config = ModelConfig(latent_dim=16, hidden_dim=64, lr=0.003, batch_size=10, epochs=epochs,
                         kl_warmup_epochs=5 * epochs, seed=0)
    model = RxnTreeVAE(config, vocab)
    train(model, pairs, config)
    return model, pairs


@pytest.fixture(scope="module")
def overfit_50():
    return _overfit(50, 200)


@pytest.fixture(scope="module")
def overfit_20():
    return _overfit(20, 200)


@pytest.fixture(scope="module")
def trained_on_corpus():
    vocab, pairs = generate_toy_dataset(seed=0, n_trees=2000, n_templates=8, n_start_molecules=20, max_depth=3)
    config = ModelConfig(latent_dim=16, hidden_dim=48, lr=0.003, batch_size=32, epochs=30, kl_warmup_epochs=10)
    model = RxnTreeVAE(config, vocab)
    train(model, pairs, config)
    return model, RxnTreeVAE(config, vocab), pairs


@pytest.mark.slow
def test_overfit_model_reconstructs_training_pairs(overfit_50):
    model, pairs = overfit_50
    junction_hits = reaction_hits = 0
    for pair in pairs:
        out = reconstruct(model, pair)
        junction_hits += out.junction.same_tree(pair.junction)
        reaction_hits += out.reaction.same_tree(pair.reaction)
    assert junction_hits >= 0.8 * len(pairs)
    assert reaction_hits >= 0.8 * len(pairs)


@pytest.mark.slow
def test_overfit_embeddings_stay_apart(overfit_50):
    model, pairs = overfit_50
    distinct = [p for p in pairs if not p.reaction.same_tree(pairs[0].reaction)]
    a_x, a_y = embed(model, pairs[0])
    b_x, b_y = embed(model, distinct[0])
    assert np.linalg.norm(np.concatenate([a_x - b_x, a_y - b_y])) > 1e-3


@pytest.mark.slow
def test_overfit_junction_decoder_recovers_trees(overfit_20):
    model, pairs = overfit_20
    hits = 0
    for pair in pairs:
        mu_x, _ = embed(model, pair)
        hits += decode_junction(model.params, constant(mu_x)).same_tree(pair.junction)
    assert hits >= 16


@pytest.mark.slow
def test_overfit_model_prior_samples_execute(overfit_20):
    model, pairs = overfit_20
    samples = sample_prior(model, 200, np.random.default_rng(11))
    report = compute_metrics([s.reaction for s in samples], {p.product for p in pairs}, model.vocab)
    assert report.validity >= 30.0


@pytest.mark.slow
def test_trained_model_generates_valid_novel_molecules(trained_on_corpus):
    trained, untrained, pairs = trained_on_corpus
    products = {p.product for p in pairs}
    reference = ([p.reaction for p in pairs], [p.product for p in pairs])

    def metrics(model):
        samples = sample_prior(model, 500, np.random.default_rng(23))
        return compute_metrics([s.reaction for s in samples], products, model.vocab, reference=reference)

    after, before = metrics(trained), metrics(untrained)
    assert after.validity >= 50.0
    assert after.uniqueness > 0.0
    assert after.novelty > 0.0
    assert after.descriptor_distance <= 0.7 * before.descriptor_distance


@pytest.mark.slow
def test_trained_model_modal_rate_covers_single_sample_validity(trained_on_corpus):
    trained, _, _ = trained_on_corpus
    report = synthesizability_eval(trained, n_codes=200, k_decodes=10, rng=np.random.default_rng(29))
    assert report.rate >= report.single_sample_validity
    assert report.single_sample_validity > 0.0
