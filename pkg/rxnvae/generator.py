"""Synthetic reaction-tree corpus built on the toy chemistry."""

import logging
import math
import string
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleConfig
from .providers.toy import apply_template_toy, decompose_labels, decompose_toy
from .state import EXPAND_LABEL, NodeKind
from .trees import ReactionTreeBuilder, TemplateEntry, TemplateRegistry, TreePair, Vocabularies

log = logging.getLogger(__name__)

# 'T' starts template terms, so it is kept out of fragments and tokens
ALPHABET = [c for c in string.ascii_uppercase if c != "T"]
ARITY_CHOICES = (1, 2, 3)
ARITY_PROBS = (0.3, 0.5, 0.2)
TOKEN_COVERAGE = 0.10
MAX_ATTEMPTS = 1000
LEAF_PROB = 0.5


@dataclass
class _Node:
    """Nested tree plan used while generating; ``template`` None marks a leaf."""

    product: str
    template: "int | None" = None
    start_index: int = -1
    children: list = field(default_factory=list)


def _make_registry(rng, n_templates):
    entries = []
    for t in range(n_templates):
        arity = int(rng.choice(ARITY_CHOICES, p=ARITY_PROBS))
        token = ALPHABET[int(rng.integers(len(ALPHABET)))]
        entries.append(TemplateEntry(t, arity, token))
    return TemplateRegistry(tuple(entries))


def _make_starting_molecules(rng, n, tokens):
    molecules = []
    seen = set()
    attempts = 0
    while len(molecules) < n:
        attempts += 1
        if attempts > MAX_ATTEMPTS * max(1, n):
            raise InfeasibleConfig(f"cannot draw {n} distinct starting molecules")
        length = int(rng.integers(2, 6))
        mol = "".join(ALPHABET[int(i)] for i in rng.integers(len(ALPHABET), size=length))
        if mol not in seen:
            seen.add(mol)
            molecules.append(mol)

    # every template token must appear in at least 10% of the starting molecules
    need = max(1, math.ceil(TOKEN_COVERAGE * n))
    for token in sorted(set(tokens)):
        attempts = 0
        while sum(token in m for m in molecules) < need:
            attempts += 1
            if attempts > MAX_ATTEMPTS:
                raise InfeasibleConfig(f"no starting molecule can take token {token!r} after {MAX_ATTEMPTS} attempts")
            candidates = [i for i, m in enumerate(molecules) if token not in m and len(m) < 12]
            if not candidates:
                continue
            i = candidates[int(rng.integers(len(candidates)))]
            pos = int(rng.integers(len(molecules[i]) + 1))
            mol = molecules[i][:pos] + token + molecules[i][pos:]
            if mol in seen:
                continue
            seen.discard(molecules[i])
            seen.add(mol)
            molecules[i] = mol
    return molecules


class _TreeSampler:
    def __init__(self, rng, registry, molecules):
        self.rng = rng
        self.registry = registry
        self.molecules = molecules
        self.by_token = {c: [i for i, m in enumerate(molecules) if c in m] for c in ALPHABET}

    def leaf(self, token):
        pool = self.by_token[token] if token else range(len(self.molecules))
        pool = list(pool)
        if not pool:
            return None
        i = pool[int(self.rng.integers(len(pool)))]
        return _Node(self.molecules[i], start_index=i)

    def molecule(self, token, depth_left, force_reaction=False):
        if not force_reaction and (depth_left == 0 or self.rng.random() < LEAF_PROB):
            return self.leaf(token)
        for _ in range(20):
            t = int(self.rng.integers(len(self.registry)))
            entry = self.registry[t]
            children = []
            for _slot in range(entry.arity):
                child = self.molecule(entry.token, depth_left - 1)
                if child is None:
                    break
                children.append(child)
            else:
                product = apply_template_toy(self.registry, t, [c.product for c in children])
                if token is None or token in product:
                    return _Node(product, template=t, children=children)
        return None if force_reaction else self.leaf(token)


def _to_reaction_tree(plan):
    """Node ids follow the decoder's generation order: FIFO over pending molecules,
    each template followed by its reactants."""
    builder = ReactionTreeBuilder()
    root = builder.add(NodeKind.MOLECULE, EXPAND_LABEL)
    queue = deque([(root, plan)])
    while queue:
        mol_id, node = queue.popleft()
        t_id = builder.add(NodeKind.TEMPLATE, node.template, parent=mol_id)
        for child in node.children:
            if child.template is None:
                builder.add(NodeKind.MOLECULE, child.start_index, parent=t_id)
            else:
                c_id = builder.add(NodeKind.MOLECULE, EXPAND_LABEL, parent=t_id)
                queue.append((c_id, child))
    return builder.build()


def _usage(tree):
    templates = Counter()
    starts = Counter()
    for i in range(tree.n_nodes):
        if tree.is_template(i):
            templates[tree.labels[i]] += 1
        elif not tree.children(i):
            starts[tree.labels[i]] += 1
    return templates, starts


def _apply_frequency_floor(trees, n_trees, floor):
    """Drop trees using templates/starting molecules seen fewer than ``floor`` times
    in the selection, refilling from the pool, until the selection is stable."""
    pool = list(range(len(trees)))
    usage = [_usage(t) for t in trees]
    while len(pool) >= n_trees:
        selected = pool[:n_trees]
        t_count, s_count = Counter(), Counter()
        for i in selected:
            t_count.update(usage[i][0])
            s_count.update(usage[i][1])
        rare = {i for i in selected
                if any(t_count[k] < floor for k in usage[i][0]) or any(s_count[k] < floor for k in usage[i][1])}
        if not rare:
            return selected
        pool = [i for i in pool if i not in rare]
    log.warning("Frequency floor %d not reachable with %d trees; floor relaxed", floor, n_trees)
    return list(range(n_trees))


def generate_toy_dataset(seed, n_trees, n_templates, n_start_molecules, max_depth,
                         frequency_floor=5, apply_frequency_floor=True):
    """Deterministic corpus of (junction tree, reaction tree, product) triples and its vocabularies."""
    if min(n_trees, n_templates, n_start_molecules, max_depth) < 1:
        raise InfeasibleConfig("all counts must be >= 1")
    if max_depth > 6:
        raise InfeasibleConfig("max_depth must be <= 6")

    rng = np.random.default_rng(seed)
    registry = _make_registry(rng, n_templates)
    molecules = _make_starting_molecules(rng, n_start_molecules, [e.token for e in registry.entries])
    sampler = _TreeSampler(rng, registry, molecules)

    pool_size = n_trees * 3 if apply_frequency_floor else n_trees
    plans = []
    attempts = 0
    while len(plans) < pool_size:
        attempts += 1
        if attempts > MAX_ATTEMPTS * pool_size:
            raise InfeasibleConfig("could not sample enough valid reaction trees")
        plan = sampler.molecule(None, max_depth, force_reaction=True)
        if plan is not None:
            plans.append(plan)

    trees = [_to_reaction_tree(p) for p in plans]
    if apply_frequency_floor:
        keep = _apply_frequency_floor(trees, n_trees, frequency_floor)
    else:
        keep = list(range(n_trees))

    products = [plans[i].product for i in keep]
    labels = sorted({label for p in products for label in decompose_labels(p)[0]})
    vocab = Vocabularies(tuple(labels), tuple(molecules), registry)
    pairs = [TreePair(decompose_toy(plans[i].product, vocab), trees[i], plans[i].product) for i in keep]
    log.info("Generated %d trees (%d templates, %d starting molecules, %d substructures)",
             len(pairs), vocab.n_templates, vocab.n_starting, vocab.n_substructures)
    return vocab, pairs
