"""Toy chemistry.

A molecule is a canonical string: either a fragment (1-12 uppercase letters) or
a term ``T<id>(c1,...,cm)`` whose children are canonical molecules sorted
lexicographically. Template ``id`` with token ``X`` fires iff every reactant's
string contains ``X``; the product is the term over the sorted reactants.
"""

import re
from dataclasses import dataclass
from typing import Tuple

from ..errors import ArityMismatch, MalformedMolecule, PreconditionFailed, StructureError, UnknownTemplate
from ..trees import JunctionTree

FRAGMENT_RE = re.compile(r"[A-Z]{1,12}")
MAX_FRAGMENT_LEN = 12


@dataclass(frozen=True)
class MolTerm:
    """Parsed molecule. ``template`` is None for fragments."""

    template: "int | None"
    fragment: str = ""
    children: Tuple["MolTerm", ...] = ()

    @property
    def label(self):
        return self.fragment if self.template is None else f"T{self.template}"

    def to_string(self):
        if self.template is None:
            return self.fragment
        return f"T{self.template}(" + ",".join(c.to_string() for c in self.children) + ")"


class _Parser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, msg):
        return MalformedMolecule(f"{msg} at position {self.pos} in {self.text!r}")

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self):
        term = self.molecule()
        if self.pos != len(self.text):
            raise self.error("trailing characters")
        return term

    def molecule(self):
        start = self.pos
        if self.peek() == "T" and self.pos + 1 < len(self.text) and self.text[self.pos + 1].isdigit():
            self.pos += 1
            while self.peek().isdigit():
                self.pos += 1
            template = int(self.text[start + 1:self.pos])
            if self.peek() != "(":
                raise self.error("expected '('")
            self.pos += 1
            children = [self.molecule()]
            while self.peek() == ",":
                self.pos += 1
                children.append(self.molecule())
            if self.peek() != ")":
                raise self.error("expected ')'")
            self.pos += 1
            return MolTerm(template, "", tuple(children))

        while self.peek().isalpha() and self.peek().isupper():
            self.pos += 1
        fragment = self.text[start:self.pos]
        if not fragment:
            raise self.error("expected a fragment or template term")
        if len(fragment) > MAX_FRAGMENT_LEN:
            raise self.error(f"fragment longer than {MAX_FRAGMENT_LEN}")
        return MolTerm(None, fragment)


def parse_molecule(text):
    if not isinstance(text, str) or not text:
        raise MalformedMolecule(f"not a molecule string: {text!r}")
    return _Parser(text).parse()


def is_canonical(text):
    try:
        term = parse_molecule(text)
    except MalformedMolecule:
        return False

    def sorted_children(t):
        kids = [c.to_string() for c in t.children]
        return kids == sorted(kids) and all(sorted_children(c) for c in t.children)

    return sorted_children(term)


def nesting_depth(text):
    depth = best = 0
    for ch in text:
        if ch == "(":
            depth += 1
            best = max(best, depth)
        elif ch == ")":
            depth -= 1
    return best


def apply_template_toy(registry, template_id, reactants):
    if template_id not in registry:
        raise UnknownTemplate(template_id)
    entry = registry[template_id]
    if len(reactants) != entry.arity:
        raise ArityMismatch(template_id, entry.arity, len(reactants))
    for i, r in enumerate(reactants):
        if entry.token not in r:
            raise PreconditionFailed(i, f"reactant {r!r} lacks token {entry.token!r}")
    return f"T{template_id}(" + ",".join(sorted(reactants)) + ")"


def decompose_labels(molecule):
    """Preorder (labels, edges) of the term tree; node 0 is the root."""
    term = parse_molecule(molecule)
    labels = []
    edges = []

    def visit(t, parent):
        node_id = len(labels)
        labels.append(t.label)
        if parent is not None:
            edges.append((parent, node_id))
        for c in t.children:
            visit(c, node_id)

    visit(term, None)
    return labels, edges


def decompose_toy(molecule, vocab):
    """Junction tree of a molecule; ``vocab`` is a Vocabularies or a label->index mapping."""
    labels, edges = decompose_labels(molecule)
    if hasattr(vocab, "substructure_index"):
        index = [vocab.substructure_index(label) for label in labels]
    else:
        missing = [label for label in labels if label not in vocab]
        if missing:
            raise StructureError(f"substructures not in vocabulary: {missing}")
        index = [vocab[label] for label in labels]
    return JunctionTree(tuple(index), tuple(edges), root=0)


class ToyBackend:
    name = "toy"

    def __init__(self, registry):
        self.registry = registry

    def apply(self, template_id, reactants):
        return apply_template_toy(self.registry, template_id, list(reactants))
