"""Property scorers for latent-space optimization.

A scorer is any callable ``product -> float`` (higher is better) defined on valid products.
"""

import logging
import math

from .errors import ConfigError
from .providers.oracle import oracle_score
from .providers.toy import nesting_depth

log = logging.getLogger(__name__)

SCORE_TOKEN = "Q"


def token_score(product):
    """Count of 'Q' minus 0.1 per character: rewards the token, penalizes size."""
    return product.count(SCORE_TOKEN) - 0.1 * len(product)


def _desirability_length(n, center=30.0, width=20.0):
    return math.exp(-((n - center) / width) ** 2)


def drug_likeness(product):
    """Bounded [0, 1] desirability: geometric mean of length, nesting and letter-diversity terms."""
    letters = [c for c in product if c.isalpha() and c != "T"]
    d_len = _desirability_length(len(product))
    d_nest = 1.0 / (1.0 + max(0, nesting_depth(product) - 3))
    d_div = min(1.0, len(set(letters)) / 8.0) if letters else 0.0
    return (d_len * d_nest * d_div) ** (1.0 / 3.0)


class OracleScorer:
    """Scores products through the oracle's ``score`` op; results are memoized per product."""

    def __init__(self, client):
        self.client = client
        self._cache = {}

    def __call__(self, product):
        if product not in self._cache:
            self._cache[product] = oracle_score(self.client, product)
        return self._cache[product]


SCORERS = {
    "token": token_score,
    "drug_likeness": drug_likeness,
}


def get_scorer(name, client=None):
    if name == "oracle":
        if client is None:
            raise ConfigError("scorer 'oracle' needs --oracle")
        return OracleScorer(client)
    try:
        return SCORERS[name]
    except KeyError:
        raise ConfigError(f"unknown scorer {name!r}; choose from {sorted(SCORERS) + ['oracle']}") from None
