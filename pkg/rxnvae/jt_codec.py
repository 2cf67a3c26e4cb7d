"""Junction-tree encoder (two-phase tree message passing) and top-down decoder.

Parameters live in a ParamStore under the ``jt.`` prefix:

    jt.msg_gru.*        GRU producing a message m_ij from x_i and the sum of m_ki, k in N(i)\\j
    jt.W0, jt.U0        node embedding h_i = ReLU(W0 x_i + U0 sum_k m_ki)
    jt.mu.*, jt.logvar.*   posterior heads on h_root
    jt.dec_gru.*        traversal state GRU over [z_x, onehot(label)]
    jt.topo.*           expand/backtrack logit on [z_x, s]
    jt.label.*          substructure logits on [z_x, s]
"""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import StructureError
from .numerics import (
    GRUWeights,
    Tensor,
    add,
    add_linear,
    add_n,
    apply_linear,
    bce_with_logits,
    concat,
    constant,
    cross_entropy,
    exp,
    gru_cell,
    linear,
    mul,
    no_grad,
    one_hot,
    relu,
    scale,
    sigmoid,
    softmax_np,
    zeros,
)
from .trees import JunctionTree

log = logging.getLogger(__name__)

PREFIX = "jt"


@dataclass
class NodeEmbeddings:
    H: List[Tensor]
    root: int

    def __len__(self):
        return len(self.H)


@dataclass
class PosteriorParams:
    mu: Tensor
    logvar: Tensor

    @property
    def dim(self):
        return self.mu.size


def add_junction_params(store, n_substructures, hidden_dim, latent_dim, rng):
    V, h, d = n_substructures, hidden_dim, latent_dim
    GRUWeights.create(store, f"{PREFIX}.msg_gru", V, h, rng)
    store.add(f"{PREFIX}.W0", (h, V), rng, fan_in=V)
    store.add(f"{PREFIX}.U0", (h, h), rng, fan_in=h)
    add_linear(store, f"{PREFIX}.mu", d, h, rng)
    add_linear(store, f"{PREFIX}.logvar", d, h, rng)
    GRUWeights.create(store, f"{PREFIX}.dec_gru", d + V, h, rng)
    add_linear(store, f"{PREFIX}.topo", 1, d + h, rng)
    add_linear(store, f"{PREFIX}.label", V, d + h, rng)
    return store


def _vocab_size(params):
    return params[f"{PREFIX}.W0"].shape[1]


def _hidden_size(params):
    return params[f"{PREFIX}.W0"].shape[0]


def default_root(tree):
    """Encoding root: the leaf with the smallest node id."""
    return min(tree.leaves())


def _rooted_order(tree, root):
    """Preorder of the undirected tree hung from ``root`` and the resulting parent map."""
    up = {root: None}
    order = []
    stack = [root]
    while stack:
        i = stack.pop()
        order.append(i)
        for k in sorted(tree.neighbors(i), reverse=True):
            if k not in up:
                up[k] = i
                stack.append(k)
    return order, up


def _incoming_sum(messages, tree, i, exclude, h):
    sources = [k for k in tree.neighbors(i) if k != exclude]
    missing = [k for k in sources if (k, i) not in messages]
    if missing:
        raise StructureError(f"message ({missing[0]}, {i}) needed before it was computed", node_id=i)
    if not sources:
        return zeros(h)
    return add_n([messages[(k, i)] for k in sources])


def compute_messages(params, tree, root):
    """Both message directions on every edge: leaves-to-root first, then root-to-leaves."""
    V, h = _vocab_size(params), _hidden_size(params)
    gru = GRUWeights.from_store(params, f"{PREFIX}.msg_gru")
    x = [one_hot(label, V) for label in tree.labels]
    order, up = _rooted_order(tree, root)
    messages = {}
    for i in reversed(order):
        j = up[i]
        if j is not None:
            messages[(i, j)] = gru_cell(gru, x[i], _incoming_sum(messages, tree, i, j, h))
    for i in order:
        for c in tree.neighbors(i):
            if c != up[i]:
                messages[(i, c)] = gru_cell(gru, x[i], _incoming_sum(messages, tree, i, c, h))
    return messages


def encode_junction(params, tree, root=None):
    """Node embeddings and the posterior over z_x read off the root's embedding."""
    V, h = _vocab_size(params), _hidden_size(params)
    tree.validate(V)
    root = default_root(tree) if root is None else root
    messages = compute_messages(params, tree, root)
    W0, U0 = params[f"{PREFIX}.W0"], params[f"{PREFIX}.U0"]
    H = []
    for i, label in enumerate(tree.labels):
        inward = _incoming_sum(messages, tree, i, None, h)
        H.append(relu(add(linear(W0, None, one_hot(label, V)), linear(U0, None, inward))))
    post = PosteriorParams(apply_linear(params, f"{PREFIX}.mu", H[root]),
                           apply_linear(params, f"{PREFIX}.logvar", H[root]))
    return NodeEmbeddings(H, root), post


def sample_latent(post, rng):
    """Reparameterized draw z = mu + exp(logvar / 2) * eps."""
    eps = constant(rng.standard_normal(post.mu.size))
    return add(post.mu, mul(exp(scale(post.logvar, 0.5)), eps))


# ---------------------------------------------------------------- decoder

class _DecoderHeads:
    def __init__(self, params, z_x):
        self.params = params
        self.z = z_x
        self.V = _vocab_size(params)
        self.h = _hidden_size(params)
        self.gru = GRUWeights.from_store(params, f"{PREFIX}.dec_gru")

    def step(self, label, s):
        x = one_hot(label, self.V) if label is not None else zeros(self.V)
        return gru_cell(self.gru, concat([self.z, x]), s)

    def topo_logit(self, s):
        return apply_linear(self.params, f"{PREFIX}.topo", concat([self.z, s]))

    def label_logits(self, s):
        return apply_linear(self.params, f"{PREFIX}.label", concat([self.z, s]))


def _pick(logits, rng):
    if rng is None:
        return int(np.argmax(logits))
    p = softmax_np(logits)
    return int(rng.choice(len(p), p=p))


def _expand(p, rng):
    return rng.random() < p if rng is not None else p > 0.5


def decode_junction(params, z_x, rng=None, limits=None):
    """Depth-first generation. Greedy when ``rng`` is None, sampled otherwise."""
    max_nodes = limits.jt_max_nodes if limits is not None else 40
    if max_nodes < 1:
        raise StructureError("jt_max_nodes must be >= 1")
    with no_grad():
        heads = _DecoderHeads(params, z_x)
        s_root = heads.step(None, zeros(heads.h))
        labels = [_pick(heads.label_logits(s_root).data, rng)]
        edges = []

        def visit(node, s):
            while len(labels) < max_nodes:
                p = float(sigmoid(heads.topo_logit(s)).data[0])
                if not _expand(p, rng):
                    return
                s_child = heads.step(labels[node], s)
                child = len(labels)
                labels.append(_pick(heads.label_logits(s_child).data, rng))
                edges.append((node, child))
                visit(child, s_child)
                s = heads.step(labels[child], s)

        visit(0, s_root)
    return JunctionTree(tuple(labels), tuple(edges), root=0)


def _ordered_children(tree, i):
    return sorted(tree.children(i), key=lambda c: (tree.labels[c], tree.canonical(c)))


def junction_teacher_forced_loss(params, tree, z_x):
    """Topology BCE plus label CE along the ground-truth depth-first traversal."""
    heads = _DecoderHeads(params, z_x)
    tree.validate(heads.V)
    s_root = heads.step(None, zeros(heads.h))
    terms = [cross_entropy(heads.label_logits(s_root), tree.labels[tree.root])]

    def visit(node, s):
        for child in _ordered_children(tree, node):
            terms.append(bce_with_logits(heads.topo_logit(s), 1.0))
            s_child = heads.step(tree.labels[node], s)
            terms.append(cross_entropy(heads.label_logits(s_child), tree.labels[child]))
            visit(child, s_child)
            s = heads.step(tree.labels[child], s)
        terms.append(bce_with_logits(heads.topo_logit(s), 0.0))

    visit(tree.root, s_root)
    loss = terms[0]
    for t in terms[1:]:
        loss = add(loss, t)
    return loss
