"""Gaussian-process surrogate, expected improvement and batched latent-space optimization.

The GP is exact over a subset of the data (the best-scoring half plus the most
recent points) with an RBF kernel and a constant prior mean equal to the mean
target.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import norm
from tqdm import tqdm

from .config import BOConfig
from .errors import GPError
from .executor import execute
from .providers.toy import ToyBackend
from .trees import TreePair
from .utils import encode_f32_b64, ensure_parent_dir
from .vae import decode, embed

log = logging.getLogger(__name__)

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
VARIANCE_FLOOR = 1e-12
HYPER_FIT_MAX = 300
LOG_BOUNDS = (
    (np.log(1e-3), np.log(1e3)),   # lengthscale
    (np.log(1e-6), np.log(1e4)),   # signal variance
    (np.log(1e-8), np.log(1e1)),   # noise variance
)


@dataclass
class GPModel:
    Z: np.ndarray
    y: np.ndarray
    lengthscale: float
    signal_var: float
    noise_var: float
    prior_mean: float
    jitter: float
    chol: tuple
    alpha: np.ndarray

    @property
    def n(self):
        return len(self.y)


def rbf_kernel(A, B, lengthscale, signal_var):
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T)
    return signal_var * np.exp(-0.5 * np.maximum(sq, 0.0) / lengthscale ** 2)


def _factor(K):
    """Cholesky of K, adding diagonal jitter up to 1e-6 if needed."""
    eye = np.eye(len(K))
    for jitter in JITTERS:
        try:
            return cho_factor(K + jitter * eye, lower=True), jitter
        except LinAlgError:
            continue
    raise GPError("kernel matrix is not positive definite even with 1e-6 jitter")


def _neg_log_marginal(theta, Z, y, sq, fixed_noise):
    ell, sf2 = np.exp(theta[0]), np.exp(theta[1])
    sn2 = fixed_noise if fixed_noise is not None else np.exp(theta[2])
    n = len(y)
    Kf = sf2 * np.exp(-0.5 * sq / ell ** 2)
    K = Kf + sn2 * np.eye(n)
    try:
        (L, lower), _ = _factor(K)
    except GPError:
        return 1e25, np.zeros_like(theta)
    a = cho_solve((L, lower), y)
    nll = 0.5 * y @ a + np.sum(np.log(np.diag(L))) + 0.5 * n * np.log(2 * np.pi)
    W = cho_solve((L, lower), np.eye(n)) - np.outer(a, a)
    grad = [0.5 * np.sum(W * (Kf * sq / ell ** 2)), 0.5 * np.sum(W * Kf)]
    if fixed_noise is None:
        grad.append(0.5 * sn2 * np.trace(W))
    return float(nll), np.array(grad)


def gp_fit(Z, y, hyper_init=(1.0, 1.0, 0.1), restarts=8, rng=None, fixed_noise=None):
    """Multi-start marginal-likelihood fit of (lengthscale, signal variance, noise variance).

    Targets are standardized for the search; the returned hyperparameters are in the
    original units. ``fixed_noise`` pins the noise variance (0 interpolates).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) < 2 or Z.shape[0] != len(y):
        raise GPError(f"gp_fit needs at least 2 points with matching targets, got Z{Z.shape} y{y.shape}")
    rng = rng if rng is not None else np.random.default_rng(0)
    prior_mean = float(y.mean())
    scale = float(y.std()) or 1.0
    y_std = (y - prior_mean) / scale

    fit_idx = np.arange(len(y))
    if len(y) > HYPER_FIT_MAX:
        fit_idx = np.sort(rng.choice(len(y), HYPER_FIT_MAX, replace=False))
    Zf, yf = Z[fit_idx], y_std[fit_idx]
    sq = np.maximum(np.sum(Zf * Zf, 1)[:, None] + np.sum(Zf * Zf, 1)[None, :] - 2 * Zf @ Zf.T, 0.0)

    noise_std = None if fixed_noise is None else fixed_noise / scale ** 2
    bounds = list(LOG_BOUNDS[:2]) if fixed_noise is not None else list(LOG_BOUNDS)
    init = np.log(np.asarray(hyper_init, dtype=np.float64))[:len(bounds)]
    starts = [np.clip(init, *np.array(bounds).T)]
    for _ in range(max(0, restarts - 1)):
        starts.append(np.array([rng.uniform(lo, hi) for lo, hi in bounds]))

    best = None
    for x0 in starts:
        res = minimize(_neg_log_marginal, x0, args=(Zf, yf, sq, noise_std), jac=True,
                       method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun:
            best = res
    ell, sf2 = float(np.exp(best.x[0])), float(np.exp(best.x[1])) * scale ** 2
    sn2 = float(fixed_noise) if fixed_noise is not None else float(np.exp(best.x[2])) * scale ** 2
    log.debug("GP fit n=%d: lengthscale=%.4g signal=%.4g noise=%.4g nll=%.4g", len(y), ell, sf2, sn2, best.fun)
    return gp_build(Z, y, ell, sf2, sn2, prior_mean)


def gp_build(Z, y, lengthscale, signal_var, noise_var, prior_mean=None):
    """Condition a GP with fixed hyperparameters on (Z, y)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    prior_mean = float(y.mean()) if prior_mean is None else float(prior_mean)
    K = rbf_kernel(Z, Z, lengthscale, signal_var) + noise_var * np.eye(len(y))
    chol, jitter = _factor(K)
    alpha = cho_solve(chol, y - prior_mean)
    return GPModel(Z, y, lengthscale, signal_var, noise_var, prior_mean, jitter, chol, alpha)


def gp_predict(model, Zs):
    """Posterior mean and predictive variance (noise included) at each row of ``Zs``."""
    Zs = np.atleast_2d(np.asarray(Zs, dtype=np.float64))
    Ks = rbf_kernel(Zs, model.Z, model.lengthscale, model.signal_var)
    mean = model.prior_mean + Ks @ model.alpha
    v = cho_solve(model.chol, Ks.T)
    var = model.signal_var + model.noise_var - np.sum(Ks * v.T, axis=1)
    var = np.where(var < VARIANCE_FLOOR, 0.0, var)
    return mean, var


def expected_improvement(mean, variance, best_so_far):
    """EI for maximization; reduces to max(mean - best, 0) where the variance is 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    gap = mean - best_so_far
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sigma > 0, gap / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, gap * norm.cdf(u) + sigma * norm.pdf(u), np.maximum(gap, 0.0))
    return np.maximum(ei, 0.0)


# ---------------------------------------------------------------- the loop

@dataclass
class Proposal:
    iteration: int
    z: np.ndarray
    pair: TreePair
    product: Optional[str]
    score: Optional[float]

    @property
    def valid(self):
        return self.product is not None

    def to_record(self):
        return {"iter": self.iteration, "z": encode_f32_b64(self.z), "product": self.product,
                "score": self.score, "valid": self.valid}


def select_subset(scores, subset_size):
    """Indices of the best-scoring half of ``subset_size`` plus the most recent points."""
    n = len(scores)
    if n <= subset_size:
        return np.arange(n)
    by_score = np.argsort(-np.asarray(scores), kind="stable")[: subset_size // 2]
    chosen = set(int(i) for i in by_score)
    for i in range(n - 1, -1, -1):
        if len(chosen) >= subset_size:
            break
        chosen.add(i)
    return np.array(sorted(chosen))


def candidate_pool(rng, Z, scores, config):
    """Half fresh prior draws, half Gaussian perturbations of the current top codes."""
    dim = Z.shape[1]
    n_prior = config.candidate_pool_size // 2
    n_pert = config.candidate_pool_size - n_prior
    prior = rng.standard_normal((n_prior, dim))
    top = Z[np.argsort(-np.asarray(scores), kind="stable")[: config.top_k_perturb]]
    picks = top[rng.integers(len(top), size=n_pert)]
    return np.vstack([prior, picks + config.perturb_sigma * rng.standard_normal((n_pert, dim))])


def _decode_and_execute(model, z, backend, limits):
    d = model.latent_dim
    pair = decode(model, z[d:], z[:d], None, limits)
    result = execute(pair.reaction, model.vocab, backend)
    return pair, result.product if result.valid else None


def _evaluate(model, codes, scorer, backend, limits, iteration, threads):
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            decoded = list(pool.map(lambda z: _decode_and_execute(model, z, backend, limits), codes))
    else:
        decoded = [_decode_and_execute(model, z, backend, limits) for z in codes]
    # scoring stays sequential: oracle connections serialize requests anyway
    return [Proposal(iteration, z, pair, product, float(scorer(product)) if product is not None else None)
            for z, (pair, product) in zip(codes, decoded)]


def training_codes(model, pairs):
    """Posterior-mean codes z_y (+) z_x of the training pairs."""
    rows = []
    for pair in pairs:
        mu_x, mu_y = embed(model, pair)
        rows.append(np.concatenate([mu_y, mu_x]))
    return np.array(rows)


def bo_loop(model, scorer, pairs, config=None, backend=None, limits=None, run_logger=None,
            log_path=None, threads=1, progress=False):
    """Batched EI search over z_y (+) z_x. Returns every evaluated proposal in order."""
    config = (config or BOConfig()).validate()
    backend = backend or ToyBackend(model.vocab.templates)
    rng = np.random.default_rng(config.seed)
    pairs = list(pairs)

    Z = training_codes(model, pairs)
    scores = [float(scorer(p.product)) for p in pairs]
    best = max(scores) if scores else -np.inf
    proposals = []
    log_file = None
    if log_path:
        ensure_parent_dir(log_path)
        log_file = open(log_path, "w", encoding="utf-8", newline="\n")
    try:
        for it in tqdm(range(1, config.iterations + 1), desc="BO iterations", disable=not progress):
            idx = select_subset(scores, config.subset_size)
            gp = gp_fit(Z[idx], np.asarray(scores)[idx], restarts=config.gp_restarts, rng=rng)
            pool = candidate_pool(rng, Z, scores, config)
            mean, var = gp_predict(gp, pool)
            ei = expected_improvement(mean, var, best)
            chosen = pool[np.argsort(-ei, kind="stable")[: config.batch_per_iter]]

            batch = _evaluate(model, chosen, scorer, backend, limits, it, threads)
            proposals.extend(batch)
            if log_file:
                for p in batch:
                    log_file.write(json.dumps(p.to_record()) + "\n")

            valid = [p for p in batch if p.valid]
            if not valid:
                log.warning("BO iteration %d produced no valid product", it)
            else:
                Z = np.vstack([Z] + [p.z[None, :] for p in valid])
                scores.extend(p.score for p in valid)
                top = max(valid, key=lambda p: p.score)
                if top.score > best:
                    best = top.score
                    if run_logger:
                        run_logger.log_event("BEST", f"{top.product} score={top.score:.4f}", suffix=f"iter {it}")
            if run_logger:
                run_logger.log_event("ITER", f"{it}/{config.iterations} valid={len(valid)}/{len(batch)} "
                                             f"best={best:.4f}")
    finally:
        if log_file:
            log_file.close()
    return proposals


def random_search(model, scorer, n, rng, backend=None, limits=None, threads=1):
    """Equal-budget baseline: greedy decodes of ``n`` prior codes."""
    backend = backend or ToyBackend(model.vocab.templates)
    codes = rng.standard_normal((n, 2 * model.latent_dim))
    return _evaluate(model, codes, scorer, backend, limits, 0, threads)


def top_k(proposals, k=3):
    """Best valid proposals by score, ties broken by product string."""
    valid = [p for p in proposals if p.valid]
    return sorted(valid, key=lambda p: (-p.score, p.product))[:k]


def score_histogram_rows(random_scores, bo_scores, bins=20):
    """Shared-bin histogram counts: (bin_lo, bin_hi, random_count, bo_count)."""
    both = np.concatenate([np.asarray(random_scores, float), np.asarray(bo_scores, float)])
    if both.size == 0:
        return []
    lo, hi = float(both.min()), float(both.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    r, _ = np.histogram(random_scores, bins=edges)
    b, _ = np.histogram(bo_scores, bins=edges)
    return [(float(edges[i]), float(edges[i + 1]), int(r[i]), int(b[i])) for i in range(bins)]


@dataclass
class BOSummary:
    n_evaluated: int
    n_valid: int
    best: List[dict]
    random_best: List[dict]
    top10_mean: float
    random_top10_mean: float

    def to_dict(self):
        return dict(self.__dict__)


def _top_mean(proposals, k=10):
    best = top_k(proposals, k)
    return float(np.mean([p.score for p in best])) if best else float("nan")


def summarize(bo_proposals, random_proposals):
    def describe(p):
        return {"product": p.product, "score": p.score, "iter": p.iteration,
                "route": [list(e) for e in p.pair.reaction.edges],
                "labels": list(p.pair.reaction.labels)}

    return BOSummary(
        n_evaluated=len(bo_proposals),
        n_valid=sum(p.valid for p in bo_proposals),
        best=[describe(p) for p in top_k(bo_proposals, 3)],
        random_best=[describe(p) for p in top_k(random_proposals, 3)],
        top10_mean=_top_mean(bo_proposals),
        random_top10_mean=_top_mean(random_proposals),
    )
