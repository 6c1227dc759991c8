"""Synthetic rating data with Zipf-like item popularity."""

from __future__ import annotations

import numpy as np

from .data import InteractionDataset


def make_skewed_dataset(
    n_users: int = 2000,
    n_items: int = 500,
    mean_profile: float = 20.0,
    zipf_exponent: float = 1.3,
    n_factors: int = 8,
    taste_weight: float = 0.3,
    noise: float = 0.5,
    seed: int = 0,
) -> InteractionDataset:
    """Sample a 1-5 rating dataset whose item exposure follows a power law.

    Each user rates a Poisson-sized profile (at least 5 items) drawn without
    replacement with log-probability ``log(popularity) + taste_weight * affinity``,
    where affinity comes from random low-rank user/item factors. Ratings are
    the rounded affinity plus Gaussian noise, clipped to 1-5.
    """
    rng = np.random.default_rng(seed)
    popularity = 1.0 / np.arange(1, n_items + 1) ** zipf_exponent
    popularity = popularity[rng.permutation(n_items)]

    U = rng.normal(size=(n_users, n_factors)) / np.sqrt(n_factors)
    V = rng.normal(size=(n_items, n_factors))
    affinity = U @ V.T

    sizes = np.clip(rng.poisson(mean_profile - 5, n_users) + 5, 5, n_items // 2)
    # Gumbel top-k == sampling without replacement proportional to exp(logits)
    keys = np.log(popularity)[None, :] + taste_weight * affinity + rng.gumbel(size=affinity.shape)
    order = np.argsort(-keys, axis=1, kind="stable")

    users, items = [], []
    for u in range(n_users):
        chosen = np.sort(order[u, : sizes[u]])
        users.append(np.full(len(chosen), u))
        items.append(chosen)
    users = np.concatenate(users)
    items = np.concatenate(items)
    raw = 3.2 + 1.2 * affinity[users, items] + noise * rng.normal(size=len(users))
    ratings = np.clip(np.rint(raw), 1, 5)

    return InteractionDataset(
        users.astype(np.int64),
        items.astype(np.int64),
        ratings.astype(np.float64),
        tuple(f"u{u}" for u in range(n_users)),
        tuple(f"i{i}" for i in range(n_items)),
        (1.0, 5.0),
    )
