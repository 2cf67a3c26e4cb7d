"""Joint junction-tree / reaction-tree VAE: ELBO, training loop, sampling, checkpoints."""

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np
from tqdm import tqdm

from .config import DecodeLimits, ModelConfig
from .errors import EmptyDataset, NonFiniteError, SchemaError, TrainingDiverged
from .jt_codec import add_junction_params, decode_junction, encode_junction, junction_teacher_forced_loss, sample_latent
from .numerics import (
    AdamState,
    ParamStore,
    Tape,
    add,
    adam_step,
    backward,
    clip_grad_norm,
    constant,
    kl_diag_gaussian,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    scale,
)
from .rxn_codec import add_reaction_params, decode_reaction, encode_reaction, reaction_teacher_forced_loss
from .trees import TreePair, Vocabularies
from .utils import ensure_parent_dir

log = logging.getLogger(__name__)

SIDECAR_VERSION = 1
COMPONENTS = ("jt", "rxn", "kl_x", "kl_y")


class RxnTreeVAE:
    """Parameters of both codecs plus the tape and optimizer state that train them.

    A model is owned by one trainer at a time; decoding with frozen parameters
    may run on several threads.
    """

    def __init__(self, config, vocab):
        self.config = config.validate()
        self.vocab = vocab
        rng = np.random.default_rng(config.seed)
        self.params = ParamStore()
        add_junction_params(self.params, vocab.n_substructures, config.hidden_dim, config.latent_dim, rng)
        add_reaction_params(self.params, vocab.n_starting, vocab.n_templates, config.hidden_dim,
                            config.latent_dim, rng)
        self.tape = Tape()
        self.adam = AdamState(lr=config.lr)

    @property
    def latent_dim(self):
        return self.config.latent_dim

    def __repr__(self):
        return (f"RxnTreeVAE(latent={self.config.latent_dim}, hidden={self.config.hidden_dim}, "
                f"params={self.params.num_parameters()})")


# ---------------------------------------------------------------- objective

def elbo_loss(model, pair, beta, rng):
    """Negative ELBO of one pair: L_junction + L_reaction + beta * (KL_x + KL_y).

    Returns the loss tensor and the float value of each component.
    """
    params = model.params
    emb, post_x = encode_junction(params, pair.junction)
    post_y = encode_reaction(params, pair.reaction, model.vocab)
    z_x = sample_latent(post_x, rng)
    z_y = sample_latent(post_y, rng)
    l_jt = junction_teacher_forced_loss(params, pair.junction, z_x)
    l_rxn = reaction_teacher_forced_loss(params, pair.reaction, z_y, emb, model.config.use_step_context)
    kl_x = kl_diag_gaussian(post_x.mu, post_x.logvar)
    kl_y = kl_diag_gaussian(post_y.mu, post_y.logvar)
    total = add(add(l_jt, l_rxn), scale(add(kl_x, kl_y), float(beta)))
    parts = {"jt": l_jt.item(), "rxn": l_rxn.item(), "kl_x": kl_x.item(), "kl_y": kl_y.item(),
             "beta": float(beta), "total": total.item()}
    return total, parts


def kl_weight(epoch, warmup_epochs):
    """Linear 0 -> 1 over the first ``warmup_epochs`` epochs (1-based), then 1."""
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, (epoch - 1) / warmup_epochs)


@dataclass
class EpochRow:
    epoch: int
    beta: float
    jt: float
    rxn: float
    kl_x: float
    kl_y: float
    total: float
    seconds: float


@dataclass
class TrainReport:
    kl_warmup_epochs: int
    rows: List[EpochRow] = field(default_factory=list)

    FIELDS = ("epoch", "beta", "jt", "rxn", "kl_x", "kl_y", "total", "seconds")

    def write_csv(self, path):
        ensure_parent_dir(path)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(self.FIELDS + ("kl_warmup_epochs",))
            for r in self.rows:
                writer.writerow([r.epoch, f"{r.beta:.6f}", f"{r.jt:.6f}", f"{r.rxn:.6f}", f"{r.kl_x:.6f}",
                                 f"{r.kl_y:.6f}", f"{r.total:.6f}", f"{r.seconds:.3f}", self.kl_warmup_epochs])

    @property
    def last(self):
        return self.rows[-1] if self.rows else None


def train(model, pairs, config=None, run_logger=None, progress=False):
    """Mini-batch Adam on the summed per-example loss. Deterministic given ``config.seed``."""
    config = (config or model.config).validate()
    pairs = list(pairs)
    if not pairs:
        raise EmptyDataset("cannot train on an empty dataset")
    model.adam.lr = config.lr
    rng = np.random.default_rng(config.seed)
    report = TrainReport(config.kl_warmup_epochs)
    n = len(pairs)

    epochs = tqdm(range(1, config.epochs + 1), desc="Training", disable=not progress)
    for epoch in epochs:
        started = time.monotonic()
        beta = kl_weight(epoch, config.kl_warmup_epochs)
        sums = dict.fromkeys(COMPONENTS + ("total",), 0.0)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            model.params.zero_grad()
            with model.tape.recording():
                batch_loss = None
                for idx in batch:
                    try:
                        loss, parts = elbo_loss(model, pairs[idx], beta, rng)
                    except NonFiniteError as e:
                        model.tape.clear()
                        raise TrainingDiverged(f"epoch {epoch}: example {int(idx)} produced a non-finite "
                                               f"value ({e})", example_index=int(idx)) from e
                    batch_loss = loss if batch_loss is None else add(batch_loss, loss)
                    for k in sums:
                        sums[k] += parts[k]
                backward(batch_loss, model.tape)
            norm = clip_grad_norm(model.params, config.grad_clip)
            if not np.isfinite(norm):
                raise TrainingDiverged(f"epoch {epoch}: gradient norm is {norm} in batch starting at "
                                       f"example {int(batch[0])}", example_index=int(batch[0]))
            adam_step(model.adam, model.params)

        row = EpochRow(epoch, beta, *(sums[k] / n for k in COMPONENTS), sums["total"] / n,
                       time.monotonic() - started)
        report.rows.append(row)
        epochs.set_postfix(loss=f"{row.total:.3f}")
        log.debug("epoch %d: %s", epoch, row)
        if run_logger:
            run_logger.log_event("EPOCH", f"{epoch}/{config.epochs} total={row.total:.4f} jt={row.jt:.4f} "
                                          f"rxn={row.rxn:.4f} kl={row.kl_x + row.kl_y:.4f}",
                                 suffix=f"beta {beta:.2f}")
    return report


def evaluate_loss(model, pairs, beta=1.0, seed=0):
    """Mean loss components over ``pairs`` with frozen parameters and seeded latent noise."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    rng = np.random.default_rng(seed)
    sums = dict.fromkeys(COMPONENTS + ("total",), 0.0)
    with no_grad():
        for pair in pairs:
            _, parts = elbo_loss(model, pair, beta, rng)
            for k in sums:
                sums[k] += parts[k]
    return {k: v / len(pairs) for k, v in sums.items()}


# ---------------------------------------------------------------- generation

def decode(model, z_x, z_y, rng=None, limits=None):
    """Junction tree first, then the reaction tree attending over its re-encoded embeddings."""
    limits = limits or DecodeLimits()
    with no_grad():
        z_x = z_x if hasattr(z_x, "data") else constant(z_x)
        z_y = z_y if hasattr(z_y, "data") else constant(z_y)
        junction = decode_junction(model.params, z_x, rng, limits)
        emb, _ = encode_junction(model.params, junction)
        reaction = decode_reaction(model.params, z_y, emb, model.vocab.templates, rng, limits,
                                   model.config.use_step_context)
    return TreePair(junction, reaction)


def sample_prior(model, n, rng, limits=None, greedy=False):
    """``n`` pairs decoded from independent N(0, I) draws of z_x and z_y."""
    out = []
    d = model.latent_dim
    for _ in range(n):
        z_x = rng.standard_normal(d)
        z_y = rng.standard_normal(d)
        out.append(decode(model, z_x, z_y, None if greedy else rng, limits))
    return out


def embed(model, pair):
    """Posterior means (mu_x, mu_y) as numpy vectors."""
    with no_grad():
        _, post_x = encode_junction(model.params, pair.junction)
        post_y = encode_reaction(model.params, pair.reaction, model.vocab)
    return post_x.mu.numpy(), post_y.mu.numpy()


def reconstruct(model, pair, limits=None):
    mu_x, mu_y = embed(model, pair)
    return decode(model, mu_x, mu_y, None, limits)


# ---------------------------------------------------------------- checkpoints

def sidecar_path(path):
    return f"{path}.json"


def save_model(model, path):
    tensors = model.params.state_dict()
    for name in model.params.names():
        if name in model.adam.m:
            tensors[f"vae.adam.m.{name}"] = model.adam.m[name]
            tensors[f"vae.adam.v.{name}"] = model.adam.v[name]
    tensors["vae.adam.t"] = np.array([model.adam.t], dtype=np.float64)
    save_checkpoint(path, tensors)
    sidecar = {
        "format_version": SIDECAR_VERSION,
        "model": model.config.to_dict(),
        "vocabularies": model.vocab.to_dict(),
    }
    with open(sidecar_path(path), "w", encoding="utf-8", newline="\n") as f:
        json.dump(sidecar, f, indent=1)
        f.write("\n")
    log.info("Saved model to %s", path)


def load_model(path):
    try:
        with open(sidecar_path(path), "r", encoding="utf-8") as f:
            sidecar = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"bad sidecar: {e}", path=sidecar_path(path)) from e
    if sidecar.get("format_version") != SIDECAR_VERSION:
        raise SchemaError(f"unsupported sidecar version {sidecar.get('format_version')!r}", path=sidecar_path(path))
    try:
        config = ModelConfig(**sidecar["model"])
        vocab = Vocabularies.from_dict(sidecar["vocabularies"])
    except (KeyError, TypeError) as e:
        raise SchemaError(f"bad sidecar: {e}", path=sidecar_path(path)) from e

    model = RxnTreeVAE(config, vocab)
    tensors = load_checkpoint(path)
    model.params.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("vae.")})
    if "vae.adam.t" in tensors:
        model.adam.t = int(tensors["vae.adam.t"][0])
    for name in model.params.names():
        if f"vae.adam.m.{name}" in tensors:
            model.adam.m[name] = tensors[f"vae.adam.m.{name}"]
            model.adam.v[name] = tensors[f"vae.adam.v.{name}"]
    return model
