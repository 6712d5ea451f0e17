"""Reference placements the optimal policies are compared against."""
from __future__ import annotations

import numpy as np

from .delay import CachePolicy
from .demand import DemandModel, global_popularity, local_popularity
from .optimizer import solve_policy1

__all__ = [
    "top_files",
    "global_pop_policy",
    "local_pop_policy",
    "modal_cells",
    "femtocaching_policy",
    "femtocaching_pop",
    "femtocaching_pref",
]


def top_files(scores, n_cache: int) -> np.ndarray:
    """Indices of the ``n_cache`` largest scores; ties go to the lower index."""
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    return order[: int(n_cache)]


def global_pop_policy(p, n_cells: int, n_cache: int) -> CachePolicy:
    """Every BS stores the same ``n_cache`` globally most popular files."""
    p = np.asarray(p, dtype=float)
    if n_cache > len(p):
        raise ValueError("cache holds more files than the library")
    C = np.zeros((n_cells, len(p)))
    C[:, top_files(p, n_cache)] = 1.0
    return CachePolicy(C, n_cache)


def local_pop_policy(model: DemandModel, n_cache: int) -> CachePolicy:
    """BS ``j`` stores the ``n_cache`` most popular files among requests in cell ``j``."""
    C = np.zeros((model.n_cells, model.n_files))
    for j in range(model.n_cells):
        C[j, top_files(local_popularity(model, j), n_cache)] = 1.0
    return CachePolicy(C, n_cache)


def modal_cells(A) -> np.ndarray:
    """Most probable cell of every user (lower index on ties)."""
    return np.argmax(np.asarray(A), axis=1)


def femtocaching_policy(weights, fixed_cells, tau, layout, F, n_cache) -> CachePolicy:
    """Delay-optimal placement for users pinned to known cells.

    Parameters
    ----------
    weights : array_like, shape (N_u, N_f)
        Joint request probabilities of (user, file); rows give the per-user
        file weights and row sums the user weights.
    fixed_cells : array_like of int, shape (N_u,)
        Cell each user is assumed to stay in.
    """
    W = np.asarray(weights, dtype=float)
    W = W / W.sum()
    s = W.sum(axis=1)
    Q = W / np.where(s > 0, s, 1.0)[:, None]
    Q[s == 0] = 1.0 / W.shape[1]
    A = np.zeros((len(W), layout.n_cells))
    A[np.arange(len(W)), np.asarray(fixed_cells)] = 1.0
    return solve_policy1(DemandModel(Q, s, A), tau, layout, F, n_cache).policy


def femtocaching_pop(model: DemandModel, tau, layout, F, n_cache) -> CachePolicy:
    """Pinned users, identical activity, every user requesting by ``p``."""
    p = global_popularity(model)
    W = np.tile(p, (model.n_users, 1)) / model.n_users
    return femtocaching_policy(W, modal_cells(model.A), tau, layout, F, n_cache)


def femtocaching_pref(model: DemandModel, tau, layout, F, n_cache) -> CachePolicy:
    """Pinned users requesting by their own preference ``s_u q_{f|u}``."""
    return femtocaching_policy(model.joint, modal_cells(model.A), tau, layout, F, n_cache)
