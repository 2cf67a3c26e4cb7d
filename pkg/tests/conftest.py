import numpy as np
import pytest

from rxnvae.config import DecodeLimits, ModelConfig
from rxnvae.generator import generate_toy_dataset
from rxnvae.providers.toy import decompose_labels, decompose_toy
from rxnvae.state import EXPAND_LABEL, NodeKind
from rxnvae.trees import ReactionTreeBuilder, TemplateEntry, TemplateRegistry, TreePair, Vocabularies
from rxnvae.vae import RxnTreeVAE

STARTING = ("AQB", "QC", "AB", "QQ", "CAB", "BQC")


def one_step(template, leaves):
    b = ReactionTreeBuilder()
    root = b.add(NodeKind.MOLECULE, EXPAND_LABEL)
    t = b.add(NodeKind.TEMPLATE, template, parent=root)
    for leaf in leaves:
        b.add(NodeKind.MOLECULE, leaf, parent=t)
    return b.build()


def two_step(outer, inner, inner_leaves, outer_leaves):
    """outer(inner(inner_leaves...), outer_leaves...) in generation order."""
    b = ReactionTreeBuilder()
    root = b.add(NodeKind.MOLECULE, EXPAND_LABEL)
    t = b.add(NodeKind.TEMPLATE, outer, parent=root)
    mid = b.add(NodeKind.MOLECULE, EXPAND_LABEL, parent=t)
    for leaf in outer_leaves:
        b.add(NodeKind.MOLECULE, leaf, parent=t)
    t2 = b.add(NodeKind.TEMPLATE, inner, parent=mid)
    for leaf in inner_leaves:
        b.add(NodeKind.MOLECULE, leaf, parent=t2)
    return b.build()


@pytest.fixture(scope="session")
def registry():
    return TemplateRegistry((
        TemplateEntry(0, 1, "A"),
        TemplateEntry(1, 2, "B"),
        TemplateEntry(2, 3, "C"),
        TemplateEntry(3, 2, "Q"),
        TemplateEntry(4, 1, "Q"),
    ))


SMALL_TREES = (
    (lambda: one_step(3, [0, 1]), "T3(AQB,QC)"),
    (lambda: two_step(3, 4, [3], [1]), "T3(QC,T4(QQ))"),
    (lambda: one_step(1, [2, 5]), "T1(AB,BQC)"),
)


@pytest.fixture(scope="session")
def small_vocab(registry):
    labels = sorted({lab for _, p in SMALL_TREES for lab in decompose_labels(p)[0]} | set(STARTING))
    return Vocabularies(tuple(labels), STARTING, registry)


@pytest.fixture(scope="session")
def small_pairs(small_vocab):
    return [TreePair(decompose_toy(p, small_vocab), make(), p) for make, p in SMALL_TREES]


@pytest.fixture(scope="session")
def toy_data():
    return generate_toy_dataset(seed=3, n_trees=30, n_templates=6, n_start_molecules=15, max_depth=3,
                                apply_frequency_floor=False)


@pytest.fixture
def tiny_config():
    return ModelConfig(latent_dim=4, hidden_dim=8, lr=0.01, batch_size=8, epochs=2, kl_warmup_epochs=1, seed=0)


@pytest.fixture
def tiny_model(toy_data, tiny_config):
    vocab, _ = toy_data
    return RxnTreeVAE(tiny_config, vocab)


@pytest.fixture
def limits():
    return DecodeLimits()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
