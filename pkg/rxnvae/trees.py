"""Junction trees, reaction trees, template registry and vocabularies.

All types are immutable after construction and safe to share between threads.
Node ids are dense ``0..n-1``; edges are ``(parent, child)`` pairs and a node's
children keep the order in which their edges are stored.
"""

from dataclasses import dataclass, field
from typing import Tuple

from .errors import StructureError
from .state import EXPAND_LABEL, NodeKind


def _index_edges(n, edges, root):
    if n == 0:
        raise StructureError("tree has no nodes")
    if not 0 <= root < n:
        raise StructureError(f"root {root} out of range", node_id=root)
    if len(edges) != n - 1:
        raise StructureError(f"{n} nodes need {n - 1} edges, got {len(edges)}")
    children = {i: [] for i in range(n)}
    parent = {}
    for p, c in edges:
        if not (0 <= p < n and 0 <= c < n):
            raise StructureError(f"edge ({p}, {c}) references a missing node")
        if c in parent:
            raise StructureError("node has two parents", node_id=c)
        if c == root:
            raise StructureError("root has a parent", node_id=c)
        parent[c] = p
        children[p].append(c)
    # connected + acyclic: every node reachable from root exactly once
    seen = set()
    stack = [root]
    while stack:
        i = stack.pop()
        if i in seen:
            raise StructureError("cycle", node_id=i)
        seen.add(i)
        stack.extend(children[i])
    if len(seen) != n:
        missing = min(set(range(n)) - seen)
        raise StructureError("not connected to the root", node_id=missing)
    return {i: tuple(cs) for i, cs in children.items()}, parent


@dataclass(frozen=True)
class JunctionTree:
    labels: Tuple[int, ...]
    edges: Tuple[Tuple[int, int], ...]
    root: int = 0
    _children: dict = field(init=False, repr=False, compare=False)
    _parent: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        object.__setattr__(self, "edges", tuple((int(p), int(c)) for p, c in self.edges))
        children, parent = _index_edges(len(self.labels), self.edges, self.root)
        object.__setattr__(self, "_children", children)
        object.__setattr__(self, "_parent", parent)

    @property
    def n_nodes(self):
        return len(self.labels)

    def children(self, i):
        return self._children[i]

    def parent(self, i):
        return self._parent.get(i)

    def neighbors(self, i):
        p = self._parent.get(i)
        return ((p,) if p is not None else ()) + self._children[i]

    def leaves(self):
        return [i for i in range(self.n_nodes) if len(self.neighbors(i)) <= 1]

    def validate(self, vocab_size):
        for i, label in enumerate(self.labels):
            if not 0 <= label < vocab_size:
                raise StructureError(f"substructure label {label} outside vocabulary of {vocab_size}", node_id=i)
        return self

    def canonical(self, i=None):
        """Nested tuple form, children ordered by their own canonical form."""
        i = self.root if i is None else i
        return (self.labels[i], tuple(sorted(self.canonical(c) for c in self._children[i])))

    def same_tree(self, other):
        return self.canonical() == other.canonical()


@dataclass(frozen=True)
class ReactionTree:
    kinds: Tuple[NodeKind, ...]
    labels: Tuple[int, ...]
    edges: Tuple[Tuple[int, int], ...]
    root: int = 0
    _children: dict = field(init=False, repr=False, compare=False)
    _parent: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.kinds) != len(self.labels):
            raise StructureError("kinds and labels differ in length")
        object.__setattr__(self, "kinds", tuple(NodeKind(k) for k in self.kinds))
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        object.__setattr__(self, "edges", tuple((int(p), int(c)) for p, c in self.edges))
        children, parent = _index_edges(len(self.labels), self.edges, self.root)
        object.__setattr__(self, "_children", children)
        object.__setattr__(self, "_parent", parent)

    @property
    def n_nodes(self):
        return len(self.labels)

    def children(self, i):
        return self._children[i]

    def parent(self, i):
        return self._parent.get(i)

    def is_template(self, i):
        return self.kinds[i] == NodeKind.TEMPLATE

    def template_nodes(self):
        return [i for i, k in enumerate(self.kinds) if k == NodeKind.TEMPLATE]

    def postorder(self):
        order = []
        stack = [(self.root, False)]
        while stack:
            i, done = stack.pop()
            if done:
                order.append(i)
                continue
            stack.append((i, True))
            for c in reversed(self._children[i]):
                stack.append((c, False))
        return order

    def depth(self, i=None):
        """Number of reaction steps on the longest root-to-leaf path."""
        i = self.root if i is None else i
        below = max((self.depth(c) for c in self._children[i]), default=0)
        return below + (1 if self.is_template(i) else 0)

    def canonical(self, i=None):
        i = self.root if i is None else i
        return (int(self.kinds[i]), self.labels[i], tuple(sorted(self.canonical(c) for c in self._children[i])))

    def same_tree(self, other):
        return self.canonical() == other.canonical()


class ReactionTreeBuilder:
    def __init__(self):
        self.kinds = []
        self.labels = []
        self.edges = []

    def add(self, kind, label, parent=None):
        node_id = len(self.kinds)
        self.kinds.append(NodeKind(kind))
        self.labels.append(int(label))
        if parent is not None:
            self.edges.append((parent, node_id))
        return node_id

    def relabel(self, node_id, label):
        self.labels[node_id] = int(label)

    def __len__(self):
        return len(self.kinds)

    def build(self):
        return ReactionTree(tuple(self.kinds), tuple(self.labels), tuple(self.edges), root=0)


@dataclass(frozen=True)
class TemplateEntry:
    id: int
    arity: int
    token: str


@dataclass(frozen=True)
class TemplateRegistry:
    entries: Tuple[TemplateEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        for i, e in enumerate(self.entries):
            if e.id != i:
                raise StructureError(f"template ids must be dense 0..T-1, found {e.id} at position {i}")
            if not 1 <= e.arity <= 3:
                raise StructureError(f"template {e.id} arity {e.arity} not in 1..3")
            if len(e.token) != 1 or not e.token.isupper():
                raise StructureError(f"template {e.id} token {e.token!r} is not one uppercase letter")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, template_id):
        return self.entries[template_id]

    def __contains__(self, template_id):
        return 0 <= template_id < len(self.entries)

    def arity(self, template_id):
        return self.entries[template_id].arity

    def token(self, template_id):
        return self.entries[template_id].token

    @property
    def max_arity(self):
        return max((e.arity for e in self.entries), default=1)

    def to_list(self):
        return [{"id": e.id, "arity": e.arity, "token": e.token} for e in self.entries]

    @classmethod
    def from_list(cls, items):
        return cls(tuple(TemplateEntry(int(d["id"]), int(d["arity"]), str(d["token"])) for d in items))


@dataclass(frozen=True)
class Vocabularies:
    substructures: Tuple[str, ...]
    starting_molecules: Tuple[str, ...]
    templates: TemplateRegistry
    _sub_index: dict = field(init=False, repr=False, compare=False)
    _start_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "substructures", tuple(self.substructures))
        object.__setattr__(self, "starting_molecules", tuple(self.starting_molecules))
        for name, items in (("substructures", self.substructures), ("starting_molecules", self.starting_molecules)):
            if len(set(items)) != len(items):
                raise StructureError(f"duplicate entries in {name} vocabulary")
        object.__setattr__(self, "_sub_index", {s: i for i, s in enumerate(self.substructures)})
        object.__setattr__(self, "_start_index", {s: i for i, s in enumerate(self.starting_molecules)})

    @property
    def n_substructures(self):
        return len(self.substructures)

    @property
    def n_starting(self):
        return len(self.starting_molecules)

    @property
    def n_templates(self):
        return len(self.templates)

    def substructure_index(self, label):
        try:
            return self._sub_index[label]
        except KeyError:
            raise StructureError(f"substructure {label!r} not in vocabulary") from None

    def starting_index(self, molecule):
        return self._start_index.get(molecule)

    def to_dict(self):
        return {
            "substructures": list(self.substructures),
            "starting_molecules": list(self.starting_molecules),
            "templates": self.templates.to_list(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["substructures"]), tuple(d["starting_molecules"]),
                   TemplateRegistry.from_list(d["templates"]))


@dataclass(frozen=True)
class TreePair:
    junction: JunctionTree
    reaction: ReactionTree
    product: str = ""


def validate_structure(tree, registry, n_starting):
    """Reference checker for the reaction-tree invariants. Raises StructureError naming the node."""
    root = tree.root
    if tree.kinds[root] != NodeKind.MOLECULE or tree.labels[root] != EXPAND_LABEL:
        raise StructureError("root must be a molecule labeled -1", node_id=root)
    for i in range(tree.n_nodes):
        kids = tree.children(i)
        label = tree.labels[i]
        if tree.kinds[i] == NodeKind.TEMPLATE:
            if label not in registry:
                raise StructureError(f"template label {label} not in registry", node_id=i)
            if len(kids) != registry.arity(label):
                raise StructureError(f"template {label} has {len(kids)} children, arity is "
                                     f"{registry.arity(label)}", node_id=i)
            for c in kids:
                if tree.kinds[c] != NodeKind.MOLECULE:
                    raise StructureError("template child is not a molecule", node_id=c)
        else:
            if not kids:
                if not 0 <= label < n_starting:
                    raise StructureError(f"leaf molecule label {label} is not a starting molecule", node_id=i)
            else:
                if label != EXPAND_LABEL:
                    raise StructureError("intermediate molecule must be labeled -1", node_id=i)
                if len(kids) != 1 or tree.kinds[kids[0]] != NodeKind.TEMPLATE:
                    raise StructureError("intermediate molecule needs exactly one template child", node_id=i)
    return tree
