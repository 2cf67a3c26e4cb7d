"""Bottom-up execution of reaction trees and the generation metrics built on it."""

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .errors import ChemistryError
from .providers.oracle import oracle_filter
from .providers.toy import ToyBackend, nesting_depth
from .state import ExecStatus
from .trees import validate_structure
from .utils import ensure_parent_dir
from .vae import decode

log = logging.getLogger(__name__)

MAX_PRODUCT_LENGTH = 120
MAX_NESTING = 6
LENGTH_BIN_WIDTH = 10
LENGTH_BINS = 21
DEPTH_BINS = 11


@dataclass(frozen=True)
class Step:
    node_id: int
    template_id: int
    reactants: Tuple[str, ...]
    product: str


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecStatus
    product: Optional[str] = None
    failed_node: Optional[int] = None
    reason: str = ""
    trace: Tuple[Step, ...] = ()

    @property
    def valid(self):
        return self.status == ExecStatus.VALID

    def to_dict(self):
        return {
            "status": "valid" if self.valid else "invalid",
            "product": self.product,
            "failed_node": self.failed_node,
            "reason": self.reason,
            "trace": [{"node": s.node_id, "template": s.template_id, "reactants": list(s.reactants),
                       "product": s.product} for s in self.trace],
        }


def execute(tree, vocab, backend=None):
    """Run every template node in post-order. Chemical failure is returned, structural failure raised."""
    validate_structure(tree, vocab.templates, vocab.n_starting)
    backend = backend or ToyBackend(vocab.templates)
    products = {}
    trace = []
    for i in tree.postorder():
        kids = tree.children(i)
        if tree.is_template(i):
            template = tree.labels[i]
            reactants = tuple(products[c] for c in kids)
            try:
                product = backend.apply(template, list(reactants))
            except ChemistryError as e:
                return ExecutionResult(ExecStatus.INVALID, failed_node=i, reason=str(e), trace=tuple(trace))
            trace.append(Step(i, template, reactants, product))
            products[i] = product
        elif kids:
            products[i] = products[kids[0]]
        else:
            products[i] = vocab.starting_molecules[tree.labels[i]]
    return ExecutionResult(ExecStatus.VALID, product=products[tree.root], trace=tuple(trace))


def execute_many(trees, vocab, backend=None, threads=1, progress=False):
    """Results in input order; ``threads > 1`` fans out over a thread pool."""
    backend = backend or ToyBackend(vocab.templates)
    trees = list(trees)
    if threads <= 1 or len(trees) < 2:
        return [execute(t, vocab, backend) for t in tqdm(trees, desc="Executing", disable=not progress)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(tqdm(pool.map(lambda t: execute(t, vocab, backend), trees), total=len(trees),
                         desc="Executing", disable=not progress))


def default_quality(product):
    return len(product) <= MAX_PRODUCT_LENGTH and nesting_depth(product) <= MAX_NESTING


# ---------------------------------------------------------------- descriptors

def _histogram(values, n_bins):
    h = np.zeros(n_bins)
    for v in values:
        h[min(int(v), n_bins - 1)] += 1
    total = h.sum()
    return h / total if total else None


def _l1(a, b):
    if a is None and b is None:
        return 0.0
    if a is None or b is None:
        # distance between a distribution and nothing: the maximum L1 gap
        return 2.0
    return float(np.abs(a - b).sum())


def _descriptors(trees, products, n_templates):
    usage = []
    for t in trees:
        usage.extend(t.labels[i] for i in t.template_nodes())
    return (
        _histogram([len(p) // LENGTH_BIN_WIDTH for p in products], LENGTH_BINS),
        _histogram([t.depth() for t in trees], DEPTH_BINS),
        _histogram(usage, max(1, n_templates)),
    )


def descriptor_distance(gen_trees, gen_products, ref_trees, ref_products, n_templates):
    """Sum of L1 distances between normalized histograms of product length (bins of 10),
    tree depth and template usage. 0 means identical distributions, 6 is the maximum."""
    gen = _descriptors(gen_trees, gen_products, n_templates)
    ref = _descriptors(ref_trees, ref_products, n_templates)
    return sum(_l1(a, b) for a, b in zip(gen, ref))


# ---------------------------------------------------------------- metrics

@dataclass
class MetricsReport:
    n_generated: int
    n_valid: int
    validity: float
    uniqueness: float
    novelty: float
    quality: float
    descriptor_distance: float
    empty: bool = False
    no_valid: bool = False
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _pct(num, den):
    return 100.0 * num / den if den else 0.0


def metrics_from_results(trees, results, training_products, quality_hook=None,
                         reference=None, n_templates=0):
    """``reference`` is ``(trees, products)`` of the training set for the descriptor distance."""
    quality_hook = quality_hook or default_quality
    n = len(results)
    if n == 0:
        return MetricsReport(0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, empty=True, no_valid=True)
    valid = [r.product for r in results if r.valid]
    n_valid = len(valid)
    distinct = set(valid)
    novel = [p for p in valid if p not in training_products]
    passing = [p for p in valid if quality_hook(p)]
    distance = 0.0
    if reference is not None:
        distance = descriptor_distance(trees, valid, reference[0], reference[1], n_templates)
    return MetricsReport(
        n_generated=n,
        n_valid=n_valid,
        validity=_pct(n_valid, n),
        uniqueness=_pct(len(distinct), n_valid),
        novelty=_pct(len(novel), n_valid),
        quality=_pct(len(passing), n_valid),
        descriptor_distance=distance,
        no_valid=n_valid == 0,
        counts={"distinct": len(distinct), "novel": len(novel), "quality_pass": len(passing)},
    )


def compute_metrics(generated, training_products, vocab, backend=None, quality_hook=None,
                    reference=None, threads=1):
    results = execute_many(generated, vocab, backend, threads)
    return metrics_from_results(list(generated), results, set(training_products), quality_hook,
                                reference, vocab.n_templates)


def oracle_quality_hook(client):
    """Quality predicate backed by the oracle's ``filter`` op."""
    return lambda product: oracle_filter(client, product)


# ---------------------------------------------------------------- synthesizability

def modal_product(products):
    """Most frequent product; ties go to the lexicographically smallest."""
    if not products:
        return None
    counts = Counter(products)
    best = max(counts.values())
    return min(p for p, c in counts.items() if c == best)


@dataclass
class SynthReport:
    n_codes: int
    k_decodes: int
    rate: float
    single_sample_validity: float
    modal_products: List[Optional[str]] = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def synthesizability_eval(model, n_codes=1000, k_decodes=10, backend=None, rng=None, limits=None,
                          greedy=False, progress=False):
    """Per prior code: decode ``k_decodes`` times, keep the modal valid product and re-execute its tree."""
    rng = rng if rng is not None else np.random.default_rng(0)
    vocab = model.vocab
    backend = backend or ToyBackend(vocab.templates)
    successes = 0
    valid_decodes = 0
    modal = []
    for _ in tqdm(range(n_codes), desc="Synthesizability", disable=not progress):
        z_x = rng.standard_normal(model.latent_dim)
        z_y = rng.standard_normal(model.latent_dim)
        by_product = {}
        for _k in range(k_decodes):
            pair = decode(model, z_x, z_y, None if greedy else rng, limits)
            result = execute(pair.reaction, vocab, backend)
            if result.valid:
                valid_decodes += 1
                by_product.setdefault(result.product, []).append(pair.reaction)
        best = modal_product([p for p, trees in by_product.items() for _ in trees])
        modal.append(best)
        if best is not None and execute(by_product[best][0], vocab, backend).valid:
            successes += 1
    return SynthReport(
        n_codes=n_codes,
        k_decodes=k_decodes,
        rate=_pct(successes, n_codes),
        single_sample_validity=_pct(valid_decodes, n_codes * k_decodes),
        modal_products=modal,
    )


def write_trace(results, path):
    """One JSON line per executed step (or failure) of every tree."""
    ensure_parent_dir(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for i, r in enumerate(results):
            for s in r.trace:
                f.write(json.dumps({"tree": i, "node": s.node_id, "template": s.template_id,
                                    "reactants": list(s.reactants), "product": s.product}) + "\n")
            if not r.valid:
                f.write(json.dumps({"tree": i, "node": r.failed_node, "failed": r.reason}) + "\n")
