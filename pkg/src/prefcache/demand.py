"""User demand statistics: preferences, activity levels and locations."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DemandModel",
    "InfeasibleSimilarityError",
    "zipf",
    "global_popularity",
    "local_popularity",
    "cosine_similarity",
    "mean_pairwise_similarity",
    "synthesize_preferences",
    "synthesize_activity",
    "synthesize_locations",
    "synthesize_demand",
]

_STOCH_TOL = 1e-9
#: Zipf skew of each user's own file ranking in the diverse base. Low skews
#: (e.g. the popularity skew 0.6) cannot push the mean similarity near 0.1.
DIVERSE_SKEW = 4.0


class InfeasibleSimilarityError(ValueError):
    """The requested mean similarity is outside the achievable range."""

    def __init__(self, target, low, high):
        super().__init__(
            f"target similarity {target:.4f} outside achievable range [{low:.4f}, {high:.4f}]"
        )
        self.target = target
        self.bounds = (low, high)


def _check_stochastic(name, arr, axis=-1):
    if np.any(arr < -_STOCH_TOL) or np.any(arr > 1 + _STOCH_TOL):
        raise ValueError(f"{name} has entries outside [0, 1]")
    if not np.allclose(arr.sum(axis=axis), 1.0, rtol=0, atol=_STOCH_TOL):
        raise ValueError(f"{name} rows must sum to 1")


@dataclass(frozen=True, eq=False)
class DemandModel:
    """Preference matrix ``Q`` (N_u x N_f), activity ``s`` and locations ``A``.

    ``Q[u, f]`` is the probability that user ``u`` asks for file ``f`` given it
    makes a request, ``s[u]`` the share of requests from user ``u`` and
    ``A[u, j]`` the probability the user is in cell ``j`` when requesting.
    """

    Q: np.ndarray
    s: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float, ndmin=2)
        s = np.array(self.s, dtype=float, ndmin=1)
        A = np.array(self.A, dtype=float, ndmin=2)
        _check_stochastic("Q", Q)
        _check_stochastic("s", s)
        _check_stochastic("A", A)
        if not (len(Q) == len(s) == len(A)):
            raise ValueError("Q, s and A disagree on the number of users")
        for arr, name in ((Q, "Q"), (s, "s"), (A, "A")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_users(self) -> int:
        return len(self.s)

    @property
    def n_files(self) -> int:
        return self.Q.shape[1]

    @property
    def n_cells(self) -> int:
        return self.A.shape[1]

    @property
    def joint(self) -> np.ndarray:
        """``q_uf = s_u q_{f|u}``."""
        return self.s[:, None] * self.Q

    def with_preferences(self, Q) -> "DemandModel":
        return DemandModel(Q, self.s, self.A)

    def with_locations(self, A) -> "DemandModel":
        return DemandModel(self.Q, self.s, A)

    def popularity_only(self) -> "DemandModel":
        """Same model with every preference row replaced by ``p``."""
        p = global_popularity(self)
        return self.with_preferences(np.tile(p, (self.n_users, 1)))

    def to_dict(self) -> dict:
        return {
            "N_u": self.n_users,
            "N_f": self.n_files,
            "N_b": self.n_cells,
            "Q": self.Q.tolist(),
            "s": self.s.tolist(),
            "A": self.A.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DemandModel":
        model = cls(d["Q"], d["s"], d["A"])
        header = (d.get("N_u"), d.get("N_f"), d.get("N_b"))
        actual = (model.n_users, model.n_files, model.n_cells)
        if any(h is not None and h != a for h, a in zip(header, actual)):
            raise ValueError(f"header {header} does not match matrices {actual}")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "DemandModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def zipf(n: int, delta: float) -> np.ndarray:
    """Zipf probabilities ``i**-delta / sum`` for ranks ``i = 1..n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if delta < 0:
        raise ValueError("skewness must be non-negative")
    w = np.arange(1, n + 1, dtype=float) ** (-float(delta))
    return w / w.sum()


def global_popularity(model: DemandModel) -> np.ndarray:
    return model.s @ model.Q


def local_popularity(model: DemandModel, j: int) -> np.ndarray:
    """Popularity of files among requests issued in cell ``j``."""
    weights = model.A[:, j] * model.s
    mass = weights.sum()
    if mass <= 0:
        raise ValueError(f"cell {j} receives no requests; local popularity undefined")
    return weights @ model.Q / mass


def cosine_similarity(q_u, q_v) -> float:
    q_u = np.asarray(q_u, dtype=float)
    q_v = np.asarray(q_v, dtype=float)
    nu, nv = np.linalg.norm(q_u), np.linalg.norm(q_v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(q_u @ q_v / (nu * nv))


def mean_pairwise_similarity(Q) -> float:
    """Unweighted mean cosine similarity over all distinct user pairs."""
    Q = np.asarray(Q, dtype=float)
    if len(Q) < 2:
        return 1.0
    U = Q / np.linalg.norm(Q, axis=1, keepdims=True)
    G = U @ U.T
    iu = np.triu_indices(len(Q), k=1)
    return float(G[iu].mean())


def _fit_columns(Q: np.ndarray, s: np.ndarray, p: np.ndarray,
                 rounds: int = 100, tol: float = 1e-8) -> np.ndarray:
    """Iterative proportional fitting of ``s @ Q = p`` with stochastic rows."""
    Q = Q.copy()
    for _ in range(rounds):
        col = s @ Q
        Q *= np.divide(p, col, out=np.ones_like(p), where=col > 0)
        Q /= Q.sum(axis=1, keepdims=True)
        if np.max(np.abs(s @ Q - p)) < tol:
            break
    return Q


def _diverse_base(p, s, rng, delta_u: float, n_iter: int = 100) -> np.ndarray:
    """Maximally diverse preferences: permuted Zipf rows, fitted to ``p``.

    Each user starts from ``zipf(N_f, delta_u)`` laid over its own random file
    order. The s-weighted columns are then fitted to ``p``; rows stay
    stochastic. A final exact correction spreads any residual column error
    over all users in proportion to their activity.
    """
    n_u, n_f = len(s), len(p)
    base = zipf(n_f, delta_u)
    Q = np.empty((n_u, n_f))
    for u in range(n_u):
        Q[u, rng.permutation(n_f)] = base
    Q = _fit_columns(Q, s, p, rounds=n_iter)
    return _exact_columns(Q, s, p)


def _exact_columns(Q, s, p):
    # sum_u s_u * (p - s @ Q) = p - s @ Q, and the correction sums to zero per row
    resid = p - s @ Q
    Q = Q + resid[None, :]
    if Q.min() < 0:
        # fall back to mixing in p; keeps rows stochastic and columns exact
        neg = Q.min()
        lam = -neg / (p.min() - neg) if p.min() > neg else 1.0
        Q = (1 - lam) * Q + lam * p[None, :]
    return np.clip(Q, 0.0, None)


def synthesize_preferences(p, s, target_sim: float, rng, delta_u: float | None = None,
                           tol: float = 0.02, return_details: bool = False):
    """Preference matrix with popularity ``p`` and a target mean similarity.

    Rows are blends ``lam * p + (1 - lam) * Q_div`` of the popularity and a
    diverse base; every blend satisfies ``s @ Q = p`` exactly, and ``lam`` is
    bisected until the mean pairwise cosine similarity is within ``tol`` of
    ``target_sim``.

    Raises
    ------
    InfeasibleSimilarityError
        If ``target_sim`` lies below the base's similarity by more than
        ``tol`` (or above 1).
    """
    p = np.asarray(p, dtype=float)
    s = np.asarray(s, dtype=float)
    delta_u = DIVERSE_SKEW if delta_u is None else delta_u
    n_u = len(s)
    ones = np.tile(p, (n_u, 1))
    if target_sim >= 1.0 - 1e-12 or n_u < 2:
        if target_sim > 1.0 + 1e-12:
            raise InfeasibleSimilarityError(target_sim, 0.0, 1.0)
        return (ones, 1.0) if return_details else ones
    Q_div = _diverse_base(p, s, rng, delta_u)
    floor = mean_pairwise_similarity(Q_div)
    if target_sim < floor - tol:
        raise InfeasibleSimilarityError(target_sim, floor, 1.0)

    def sim(lam):
        return mean_pairwise_similarity(lam * ones + (1 - lam) * Q_div)

    lo, hi = 0.0, 1.0
    lam = 0.0
    if floor < target_sim:
        for _ in range(60):
            lam = 0.5 * (lo + hi)
            val = sim(lam)
            if abs(val - target_sim) < tol * 1e-3:
                break
            if val < target_sim:
                lo = lam
            else:
                hi = lam
    Q = lam * ones + (1 - lam) * Q_div
    return (Q, sim(lam)) if return_details else Q


def synthesize_activity(n_users: int, delta_s: float, rng) -> np.ndarray:
    """Zipf activity levels assigned to users in random order."""
    s = np.empty(n_users)
    s[rng.permutation(n_users)] = zipf(n_users, delta_s)
    return s


def synthesize_locations(n_users: int, n_cells: int, delta_a: float, rng) -> np.ndarray:
    """Location matrix whose rows are Zipf(delta_a) over a random cell ranking."""
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    base = zipf(n_cells, delta_a)
    A = np.empty((n_users, n_cells))
    for u in range(n_users):
        A[u, rng.permutation(n_cells)] = base
    return A


def synthesize_demand(n_users: int, n_files: int, n_cells: int, *, delta_p: float = 0.6,
                      delta_s: float = 0.4, delta_a: float = 1.0, target_sim: float = 0.1,
                      rng, delta_u: float | None = None) -> DemandModel:
    """Draw a full demand model; independent streams per component."""
    r_pref, r_act, r_loc = rng.spawn(3)
    p = zipf(n_files, delta_p)
    s = synthesize_activity(n_users, delta_s, r_act)
    A = synthesize_locations(n_users, n_cells, delta_a, r_loc)
    Q = synthesize_preferences(p, s, target_sim, r_pref, delta_u=delta_u)
    return DemandModel(Q, s, A)
