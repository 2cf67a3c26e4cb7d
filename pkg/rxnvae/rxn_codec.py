"""Reaction-tree encoder and the attention-guided reaction-tree decoder.

Parameters under the ``rxn.`` prefix:

    rxn.mol_emb, rxn.tmpl_emb   one-hot lookup tables for starting molecules and templates
    rxn.W1, rxn.U1              product representation v_i = ReLU(W1 y_T + U1 sum_t v_jt)
    rxn.mu.*, rxn.logvar.*      posterior heads on v_root
    rxn.W_root                  s_root = ReLU(W_root z_y)
    rxn.gru_t.*, rxn.gru_m.*    template-step and molecule-step GRUs over [z_y, c]
    rxn.tmpl_out.*              template logits on [z_y, s_T]
    rxn.mol_out.*               molecule logits on [z_y, s_j]; the last class is "expand" (-1)
"""

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import StructureError
from .jt_codec import PosteriorParams
from .numerics import (
    GRUWeights,
    Tensor,
    add,
    add_linear,
    add_n,
    apply_linear,
    concat,
    cross_entropy,
    gru_cell,
    linear,
    matvec,
    no_grad,
    one_hot,
    relu,
    softmax,
    softmax_np,
    stack,
    transpose,
)
from .state import EXPAND_LABEL, NodeKind
from .trees import ReactionTreeBuilder, validate_structure

log = logging.getLogger(__name__)

PREFIX = "rxn"


@dataclass
class RxnNodeState:
    node_id: int
    s: Tensor
    depth: int
    c: Tensor = None


def add_reaction_params(store, n_starting, n_templates, hidden_dim, latent_dim, rng):
    S, T, h, d = n_starting, n_templates, hidden_dim, latent_dim
    store.add(f"{PREFIX}.mol_emb", (h, S), rng, fan_in=S)
    store.add(f"{PREFIX}.tmpl_emb", (h, T), rng, fan_in=T)
    store.add(f"{PREFIX}.W1", (h, h), rng, fan_in=h)
    store.add(f"{PREFIX}.U1", (h, h), rng, fan_in=h)
    add_linear(store, f"{PREFIX}.mu", d, h, rng)
    add_linear(store, f"{PREFIX}.logvar", d, h, rng)
    store.add(f"{PREFIX}.W_root", (h, d), rng, fan_in=d)
    GRUWeights.create(store, f"{PREFIX}.gru_t", d + h, h, rng)
    GRUWeights.create(store, f"{PREFIX}.gru_m", d + h, h, rng)
    add_linear(store, f"{PREFIX}.tmpl_out", T, d + h, rng)
    add_linear(store, f"{PREFIX}.mol_out", S + 1, d + h, rng)
    return store


def _sizes(params):
    h, S = params[f"{PREFIX}.mol_emb"].shape
    T = params[f"{PREFIX}.tmpl_emb"].shape[1]
    return S, T, h


def encode_reaction(params, tree, vocab):
    """Bottom-up encoding; returns the posterior over z_y."""
    S, T, _ = _sizes(params)
    if vocab.n_starting != S or vocab.n_templates != T:
        raise StructureError(f"vocabulary sizes ({vocab.n_starting}, {vocab.n_templates}) "
                             f"do not match parameters ({S}, {T})")
    validate_structure(tree, vocab.templates, S)
    mol_emb, tmpl_emb = params[f"{PREFIX}.mol_emb"], params[f"{PREFIX}.tmpl_emb"]
    W1, U1 = params[f"{PREFIX}.W1"], params[f"{PREFIX}.U1"]

    v = {}
    for i in tree.postorder():
        kids = tree.children(i)
        if tree.is_template(i):
            y_t = linear(tmpl_emb, None, one_hot(tree.labels[i], T))
            reactants = add_n([v[c] for c in kids])
            v[i] = relu(add(linear(W1, None, y_t), linear(U1, None, reactants)))
        elif kids:
            v[i] = v[kids[0]]
        else:
            v[i] = linear(mol_emb, None, one_hot(tree.labels[i], S))
    v_root = v[tree.root]
    return PosteriorParams(apply_linear(params, f"{PREFIX}.mu", v_root),
                           apply_linear(params, f"{PREFIX}.logvar", v_root))


def attention(H_x, s):
    """alpha_j = softmax_j <s, h_j>; context c = sum_j alpha_j h_j."""
    H = H_x.H if hasattr(H_x, "H") else list(H_x)
    if not H:
        raise StructureError("attention over an empty junction tree")
    Hm = stack(H)
    alpha = softmax(matvec(Hm, s))
    return alpha, matvec(transpose(Hm), alpha)


class _Steps:
    """Shared decoder arithmetic for free-running generation and teacher forcing."""

    def __init__(self, params, z_y, H_x, use_step_context):
        self.params = params
        self.z = z_y
        self.H_x = H_x
        self.use_step_context = use_step_context
        self.S, self.T, self.h = _sizes(params)
        self.gru_t = GRUWeights.from_store(params, f"{PREFIX}.gru_t")
        self.gru_m = GRUWeights.from_store(params, f"{PREFIX}.gru_m")

    def root_state(self):
        return relu(linear(self.params[f"{PREFIX}.W_root"], None, self.z))

    def template_step(self, s_i):
        _, c_i = attention(self.H_x, s_i)
        s_t = gru_cell(self.gru_t, concat([self.z, c_i]), s_i)
        logits = apply_linear(self.params, f"{PREFIX}.tmpl_out", concat([self.z, s_t]))
        return c_i, s_t, logits

    def molecule_step(self, c_i, s_prev):
        # the literal reading feeds the parent's context to every reactant step
        c = attention(self.H_x, s_prev)[1] if self.use_step_context else c_i
        s_j = gru_cell(self.gru_m, concat([self.z, c]), s_prev)
        logits = apply_linear(self.params, f"{PREFIX}.mol_out", concat([self.z, s_j]))
        return s_j, logits


def _choose(logits, rng, allowed=None):
    logits = np.array(logits, dtype=np.float64)
    if allowed is not None:
        logits = np.where(allowed, logits, -np.inf)
    if rng is None:
        return int(np.argmax(logits))
    p = softmax_np(logits)
    return int(rng.choice(len(p), p=p))


def decode_reaction(params, z_y, H_x, registry, rng=None, limits=None, use_step_context=False):
    """Generate a structurally valid reaction tree. Greedy when ``rng`` is None."""
    max_depth = limits.rxn_max_depth if limits is not None else 5
    max_nodes = limits.rxn_max_nodes if limits is not None else 50
    if max_depth < 1:
        raise StructureError("rxn_max_depth must be >= 1")
    max_arity = registry.max_arity
    if max_nodes < 2 + max_arity:
        raise StructureError(f"rxn_max_nodes {max_nodes} cannot hold a single reaction of arity {max_arity}")

    with no_grad():
        steps = _Steps(params, z_y, H_x, use_step_context)
        if len(registry) != steps.T:
            raise StructureError(f"registry has {len(registry)} templates, parameters expect {steps.T}")
        expand_class = steps.S
        builder = ReactionTreeBuilder()
        pending = deque([RxnNodeState(builder.add(NodeKind.MOLECULE, EXPAND_LABEL), steps.root_state(), 0)])

        while pending:
            node = pending.popleft()
            c_i, s_t, t_logits = steps.template_step(node.s)
            node.c = c_i
            template = _choose(t_logits.data, rng)
            t_id = builder.add(NodeKind.TEMPLATE, template, parent=node.node_id)
            arity = registry.arity(template)
            s_prev = s_t
            for k in range(arity):
                s_j, m_logits = steps.molecule_step(c_i, s_prev)
                child_depth = node.depth + 1
                slots_left = arity - k
                # reserve room for every pending expansion at the widest template
                fits = len(builder) + slots_left + (len(pending) + 1) * (1 + max_arity) <= max_nodes
                if child_depth >= max_depth:
                    allowed = np.arange(expand_class + 1) < expand_class
                    label = _choose(m_logits.data, rng, allowed)
                elif not fits:
                    label = int(np.argmax(m_logits.data[:expand_class]))
                else:
                    label = _choose(m_logits.data, rng)
                if label == expand_class:
                    m_id = builder.add(NodeKind.MOLECULE, EXPAND_LABEL, parent=t_id)
                    pending.append(RxnNodeState(m_id, s_j, child_depth))
                else:
                    builder.add(NodeKind.MOLECULE, label, parent=t_id)
                s_prev = s_j

    tree = builder.build()
    return validate_structure(tree, registry, steps.S)


def reaction_loss_terms(params, tree, z_y, H_x, use_step_context=False):
    """Per-node cross-entropy terms in generation order (FIFO over pending molecules)."""
    steps = _Steps(params, z_y, H_x, use_step_context)
    expand_class = steps.S
    terms = []
    pending = deque([(tree.root, steps.root_state())])
    while pending:
        mol, s_i = pending.popleft()
        (t_node,) = tree.children(mol)
        c_i, s_t, t_logits = steps.template_step(s_i)
        terms.append(cross_entropy(t_logits, tree.labels[t_node]))
        s_prev = s_t
        for child in tree.children(t_node):
            s_j, m_logits = steps.molecule_step(c_i, s_prev)
            if tree.children(child):
                terms.append(cross_entropy(m_logits, expand_class))
                pending.append((child, s_j))
            else:
                terms.append(cross_entropy(m_logits, tree.labels[child]))
            s_prev = s_j
    return terms


def reaction_teacher_forced_loss(params, tree, z_y, H_x, use_step_context=False):
    terms = reaction_loss_terms(params, tree, z_y, H_x, use_step_context)
    loss = terms[0]
    for t in terms[1:]:
        loss = add(loss, t)
    return loss
