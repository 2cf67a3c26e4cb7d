"""Dataset files.

UTF-8 JSON:
    {"format_version": 1,
     "vocabularies": {"substructures": [...], "starting_molecules": [...],
                      "templates": [{"id", "arity", "token"}]},
     "trees": [{"junction": {"nodes": [{"id", "label"}], "edges": [[p, c]], "root"},
                "reaction": {"nodes": [{"id", "kind", "label"}], "edges": [[p, c]], "root"},
                "product": "..."}]}
"""

import json
import logging
from dataclasses import dataclass
from typing import List

from .errors import RxnVAEError, SchemaError, StructureError
from .providers.toy import is_canonical
from .state import NodeKind
from .trees import JunctionTree, ReactionTree, TreePair, Vocabularies, validate_structure
from .utils import ensure_parent_dir

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
_KIND_NAMES = {NodeKind.MOLECULE: "molecule", NodeKind.TEMPLATE: "template"}
_KIND_VALUES = {v: k for k, v in _KIND_NAMES.items()}


@dataclass(frozen=True)
class Dataset:
    vocab: Vocabularies
    pairs: List[TreePair]

    def __len__(self):
        return len(self.pairs)

    def products(self):
        return {p.product for p in self.pairs}


def _junction_to_json(tree):
    return {
        "nodes": [{"id": i, "label": label} for i, label in enumerate(tree.labels)],
        "edges": [[p, c] for p, c in tree.edges],
        "root": tree.root,
    }


def _reaction_to_json(tree):
    return {
        "nodes": [{"id": i, "kind": _KIND_NAMES[k], "label": label}
                  for i, (k, label) in enumerate(zip(tree.kinds, tree.labels))],
        "edges": [[p, c] for p, c in tree.edges],
        "root": tree.root,
    }


def dataset_to_json(dataset):
    return {
        "format_version": FORMAT_VERSION,
        "vocabularies": dataset.vocab.to_dict(),
        "trees": [{"junction": _junction_to_json(p.junction),
                   "reaction": _reaction_to_json(p.reaction),
                   "product": p.product} for p in dataset.pairs],
    }


def save_dataset(dataset, path):
    ensure_parent_dir(path)
    text = json.dumps(dataset_to_json(dataset), indent=1, ensure_ascii=False)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text + "\n")
    log.debug("Saved %d trees to %s", len(dataset), path)


def _require(cond, message, path, field):
    if not cond:
        raise SchemaError(message, path=path, field=field)


def _read_nodes(obj, path, field, with_kind):
    _require(isinstance(obj, dict), "expected an object", path, field)
    nodes = obj.get("nodes")
    edges = obj.get("edges")
    _require(isinstance(nodes, list) and nodes, "'nodes' must be a non-empty list", path, field)
    _require(isinstance(edges, list), "'edges' must be a list", path, field)
    _require(isinstance(obj.get("root"), int), "'root' must be an integer", path, field)
    kinds, labels = [], []
    for pos, node in enumerate(nodes):
        where = f"{field}.nodes[{pos}]"
        _require(isinstance(node, dict) and node.get("id") == pos,
                 f"node ids must be dense and ordered, expected id {pos}", path, where)
        _require(isinstance(node.get("label"), int), "'label' must be an integer", path, where)
        if with_kind:
            _require(node.get("kind") in _KIND_VALUES, "'kind' must be 'molecule' or 'template'", path, where)
            kinds.append(_KIND_VALUES[node["kind"]])
        labels.append(node["label"])
    for pos, edge in enumerate(edges):
        _require(isinstance(edge, list) and len(edge) == 2 and all(isinstance(x, int) for x in edge),
                 "edge must be [parent, child]", path, f"{field}.edges[{pos}]")
    return kinds, labels, [tuple(e) for e in edges], obj["root"]


def _read_vocab(raw, path):
    _require(isinstance(raw, dict), "top level must be an object", path, None)
    _require(raw.get("format_version") == FORMAT_VERSION,
             f"unsupported format_version {raw.get('format_version')!r}", path, "format_version")
    try:
        return Vocabularies.from_dict(raw["vocabularies"])
    except (KeyError, TypeError, ValueError, RxnVAEError) as e:
        raise SchemaError(f"bad vocabularies: {e}", path=path, field="vocabularies") from e


def _read_reaction(item, vocab, path, field):
    try:
        kinds, r_labels, r_edges, r_root = _read_nodes(item.get("reaction"), path, f"{field}.reaction", True)
        reaction = ReactionTree(tuple(kinds), tuple(r_labels), tuple(r_edges), r_root)
        validate_structure(reaction, vocab.templates, vocab.n_starting)
    except StructureError as e:
        raise SchemaError(str(e), path=path, field=f"{field}.reaction") from e
    return reaction


def dataset_from_json(raw, path=None):
    vocab = _read_vocab(raw, path)
    trees = raw.get("trees")
    _require(isinstance(trees, list), "'trees' must be a list", path, "trees")
    pairs = []
    for i, item in enumerate(trees):
        field = f"trees[{i}]"
        _require(isinstance(item, dict), "expected an object", path, field)
        try:
            _, j_labels, j_edges, j_root = _read_nodes(item.get("junction"), path, f"{field}.junction", False)
            junction = JunctionTree(tuple(j_labels), tuple(j_edges), j_root).validate(vocab.n_substructures)
        except StructureError as e:
            raise SchemaError(str(e), path=path, field=f"{field}.junction") from e
        reaction = _read_reaction(item, vocab, path, field)
        product = item.get("product")
        _require(isinstance(product, str) and is_canonical(product),
                 f"product {product!r} is not a canonical molecule", path, f"{field}.product")
        pairs.append(TreePair(junction, reaction, product))
    return Dataset(vocab, pairs)


def _read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"JSON parse error at line {e.lineno} column {e.colno}: {e.msg}", path=path) from e
    except UnicodeDecodeError as e:
        raise SchemaError(f"not UTF-8: {e}", path=path) from e


def load_dataset(path):
    """Parse and schema-check a dataset file; never returns a partial dataset."""
    return dataset_from_json(_read_json(path), path=path)


def save_samples(path, vocab, pairs, results):
    """Generated pairs with their execution outcome; ``product`` is null for invalid trees."""
    ensure_parent_dir(path)
    doc = {
        "format_version": FORMAT_VERSION,
        "vocabularies": vocab.to_dict(),
        "trees": [{"junction": _junction_to_json(p.junction),
                   "reaction": _reaction_to_json(p.reaction),
                   "product": r.product,
                   "valid": r.valid} for p, r in zip(pairs, results)],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(doc, indent=1, ensure_ascii=False) + "\n")


def load_reaction_trees(path):
    """Vocabularies and reaction trees of a dataset or samples file."""
    raw = _read_json(path)
    vocab = _read_vocab(raw, path)
    trees = raw.get("trees")
    _require(isinstance(trees, list), "'trees' must be a list", path, "trees")
    out = []
    for i, item in enumerate(trees):
        _require(isinstance(item, dict), "expected an object", path, f"trees[{i}]")
        out.append(_read_reaction(item, vocab, path, f"trees[{i}]"))
    return vocab, out
