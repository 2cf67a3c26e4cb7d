import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rxnvae.errors import ArityMismatch, MalformedMolecule, PreconditionFailed, StructureError, UnknownTemplate
from rxnvae.providers.toy import (
    ToyBackend,
    apply_template_toy,
    decompose_labels,
    decompose_toy,
    is_canonical,
    nesting_depth,
    parse_molecule,
)
from rxnvae.state import EXPAND_LABEL, NodeKind
from rxnvae.trees import JunctionTree, ReactionTree, TemplateEntry, TemplateRegistry, validate_structure

from .conftest import one_step, two_step

fragments = st.text(alphabet="ABCQXYZ", min_size=1, max_size=12)


# ---------------------------------------------------------------- toy chemistry

def test_apply_template_builds_sorted_term(registry):
    assert apply_template_toy(registry, 3, ["AQB", "QC"]) == "T3(AQB,QC)"


def test_apply_template_ignores_reactant_order(registry):
    assert apply_template_toy(registry, 3, ["QC", "AQB"]) == "T3(AQB,QC)"


def test_missing_token_names_the_reactant(registry):
    with pytest.raises(PreconditionFailed) as info:
        apply_template_toy(registry, 3, ["AB", "QC"])
    assert info.value.reactant_index == 0


def test_wrong_reactant_count(registry):
    with pytest.raises(ArityMismatch):
        apply_template_toy(registry, 3, ["AQB"])


def test_unknown_template(registry):
    with pytest.raises(UnknownTemplate):
        apply_template_toy(registry, 99, ["AQB"])


@settings(max_examples=100, deadline=None)
@given(st.lists(fragments, min_size=2, max_size=2), st.randoms(use_true_random=False))
def test_product_is_canonical_and_order_free(reactants, rnd):
    reactants = [r + "Q" if "Q" not in r and len(r) < 12 else r for r in reactants]
    if any("Q" not in r for r in reactants):
        return
    backend = ToyBackend(TemplateRegistry((TemplateEntry(0, 2, "Q"),)))
    shuffled = list(reactants)
    rnd.shuffle(shuffled)
    product = backend.apply(0, reactants)
    assert product == backend.apply(0, shuffled)
    assert is_canonical(product)


def test_canonical_detection():
    assert is_canonical("T3(AQB,QC)")
    assert not is_canonical("T3(QC,AQB)")
    assert not is_canonical("T3(")


@pytest.mark.parametrize("text", ["", "T3(", "T3(AB", "T3(AB))", "ab", "ABCDEFGHIJKLM", "T(AB)"])
def test_malformed_molecules(text):
    with pytest.raises(MalformedMolecule):
        parse_molecule(text)


def test_decompose_fragment():
    labels, edges = decompose_labels("AQB")
    assert labels == ["AQB"]
    assert edges == []


def test_decompose_one_step_term():
    labels, edges = decompose_labels("T3(AQB,QC)")
    assert labels == ["T3", "AQB", "QC"]
    assert edges == [(0, 1), (0, 2)]


def _count_terms(text):
    # independent count: one node per template head plus one per fragment
    return len(re.findall(r"T\d+\(", text)) + len(re.findall(r"[A-Z]+(?=[,)]|$)", text))


@pytest.mark.parametrize("text", [
    "T0(T1(T2(AB,QC),QQ))",
    "T3(QC,T4(QQ))",
    "T2(AB,T1(T0(XA),YB),ZC)",
])
def test_decomposition_node_count(text):
    labels, edges = decompose_labels(text)
    assert len(labels) == _count_terms(text)
    assert len(edges) == len(labels) - 1
    assert nesting_depth(text) >= 1


def test_decompose_toy_uses_vocab_indices(small_vocab):
    tree = decompose_toy("T3(AQB,QC)", small_vocab)
    assert [small_vocab.substructures[i] for i in tree.labels] == ["T3", "AQB", "QC"]


def test_decompose_toy_unknown_substructure(small_vocab):
    with pytest.raises(StructureError):
        decompose_toy("T3(ZZZ,QC)", small_vocab)


# ---------------------------------------------------------------- tree invariants

def test_junction_tree_rejects_two_parents():
    with pytest.raises(StructureError):
        JunctionTree((0, 1, 2), ((0, 2), (1, 2)), root=0)


def test_junction_tree_rejects_wrong_edge_count():
    with pytest.raises(StructureError):
        JunctionTree((0, 1, 2), ((0, 1),), root=0)


def test_junction_tree_rejects_root_with_parent():
    with pytest.raises(StructureError):
        JunctionTree((0, 1), ((1, 0),), root=0)


def test_junction_label_out_of_vocab():
    with pytest.raises(StructureError) as info:
        JunctionTree((0, 7), ((0, 1),)).validate(5)
    assert info.value.node_id == 1


def test_canonical_form_ignores_node_ids():
    a = JunctionTree((0, 1, 2), ((0, 1), (0, 2)))
    b = JunctionTree((0, 2, 1), ((0, 1), (0, 2)))
    assert a.same_tree(b)
    assert a != b


def test_valid_reaction_trees(registry):
    validate_structure(one_step(3, [0, 1]), registry, 6)
    validate_structure(two_step(3, 4, [3], [1]), registry, 6)


def test_arity_violation_names_template_node(registry):
    with pytest.raises(StructureError) as info:
        validate_structure(one_step(3, [0]), registry, 6)
    assert info.value.node_id == 1


def test_root_must_be_expand_molecule(registry):
    tree = ReactionTree((NodeKind.MOLECULE,), (0,), ())
    with pytest.raises(StructureError):
        validate_structure(tree, registry, 6)


def test_leaf_label_must_be_starting_molecule(registry):
    with pytest.raises(StructureError) as info:
        validate_structure(one_step(3, [0, 9]), registry, 6)
    assert info.value.node_id == 3


def test_template_under_template_is_rejected(registry):
    tree = ReactionTree(
        (NodeKind.MOLECULE, NodeKind.TEMPLATE, NodeKind.TEMPLATE, NodeKind.MOLECULE),
        (EXPAND_LABEL, 0, 0, 1),
        ((0, 1), (1, 2), (2, 3)),
    )
    with pytest.raises(StructureError):
        validate_structure(tree, registry, 6)


def test_reaction_depth_counts_templates(registry):
    assert one_step(3, [0, 1]).depth() == 1
    assert two_step(3, 4, [3], [1]).depth() == 2


def test_registry_rejects_bad_entries():
    with pytest.raises(StructureError):
        TemplateRegistry((TemplateEntry(0, 4, "A"),))
    with pytest.raises(StructureError):
        TemplateRegistry((TemplateEntry(1, 1, "A"),))
    with pytest.raises(StructureError):
        TemplateRegistry((TemplateEntry(0, 1, "ab"),))
