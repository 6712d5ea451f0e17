"""Average download delays of a fractional cache placement.

A user in sector ``(j, i)`` fetches file ``f`` from its rank 1, 2, 3 BSs in
turn and finishes over the backhaul (rank 4). For strictly increasing
per-bit delays the expected delay of that fetch equals

    max_k { F tau_k - F sum_{l<k} c_{b^l f} (tau_k - tau_l) }

which is what :func:`user_delays` evaluates; :func:`user_avg_delay_piecewise`
walks the branches explicitly and serves as its oracle.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .demand import DemandModel
from .geometry import N_RANKS, N_SECTORS, NetworkLayout
from .radio import TauTable

__all__ = [
    "CachePolicy",
    "DelayReport",
    "user_delays",
    "user_avg_delay",
    "user_avg_delay_piecewise",
    "nonoverlap_user_delay",
    "evaluate",
]

FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CachePolicy:
    """Cache fractions ``C[b, f]`` in [0, 1] with row sums at most ``N_c``."""

    C: np.ndarray
    n_cache: float | None = None

    def __post_init__(self):
        C = np.array(self.C, dtype=float, ndmin=2)
        tol = FEASIBILITY_TOL
        if np.any(C < -tol) or np.any(C > 1 + tol):
            raise ValueError("cache fractions must lie in [0, 1]")
        if self.n_cache is not None and np.any(C.sum(axis=1) > self.n_cache + tol):
            raise ValueError(f"a BS caches more than N_c={self.n_cache} files")
        C = np.clip(C, 0.0, 1.0) + 0.0
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def n_cells(self) -> int:
        return self.C.shape[0]

    @property
    def n_files(self) -> int:
        return self.C.shape[1]

    def to_csv(self, path) -> None:
        """Write ``b, f, c_bf`` rows."""
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["b", "f", "c_bf"])
            for b, f in np.ndindex(*self.C.shape):
                w.writerow([b, f, repr(float(self.C[b, f]))])

    @classmethod
    def from_csv(cls, path, n_cache=None) -> "CachePolicy":
        with open(Path(path), newline="") as fh:
            rows = [(int(r["b"]), int(r["f"]), float(r["c_bf"])) for r in csv.DictReader(fh)]
        C = np.zeros((max(r[0] for r in rows) + 1, max(r[1] for r in rows) + 1))
        for b, f, c in rows:
            C[b, f] = c
        return cls(C, n_cache)


@dataclass(frozen=True)
class DelayReport:
    per_user: np.ndarray
    network_avg: float
    max_weighted: float
    argmax_user: int

    def row(self, policy_name: str) -> dict:
        return {
            "policy_name": policy_name,
            "T_s": self.network_avg,
            "max_weighted_s": self.max_weighted,
            "argmax_user": self.argmax_user,
        }

    def to_json(self, policy_name: str = "") -> str:
        d = self.row(policy_name)
        d["per_user_s"] = [float(x) for x in self.per_user]
        return json.dumps(d)


def _as_matrix(policy) -> np.ndarray:
    return policy.C if isinstance(policy, CachePolicy) else np.asarray(policy, dtype=float)


def _rank_caches(C: np.ndarray, layout: NetworkLayout) -> np.ndarray:
    """Cached fraction at each rank: shape (N_b, 12, 3, N_f); 0 for absent ranks."""
    ob = layout.ordered_bs
    out = C[np.maximum(ob, 0)]
    return np.where((ob >= 0)[..., None], out, 0.0)


def _fetch_delays(C, tau: TauTable, layout: NetworkLayout, n_users: int) -> np.ndarray:
    """Per-bit expected delay of each fetch, shape (U, N_b, 12, N_f).

    ``U`` is 1 when ``tau`` is shared by all users.
    """
    n_b = layout.n_cells
    avail = layout.available_ranks()  # (N_b, 12, 3)
    cr = _rank_caches(C, layout)  # (N_b, 12, 3, N_f)
    u_dim = 1 if tau.uniform_users else n_users
    t = tau.broadcast(u_dim, n_b, N_SECTORS)  # (U, N_b, 12, 4)
    avail4 = np.concatenate([avail, np.ones((n_b, N_SECTORS, 1), bool)], axis=-1)
    if np.isnan(t[:, avail4]).any():
        raise ValueError("tau table has no value for a rank the layout uses")
    best = None
    for k in range(N_RANKS + 1):
        if k < N_RANKS and not avail4[..., k].any():
            continue
        tk = t[..., k]
        val = np.broadcast_to(tk[..., None], tk.shape + (C.shape[1],)).copy()
        for l in range(k):
            gap = np.where(avail4[..., l], tk - np.nan_to_num(t[..., l]), 0.0)
            val -= cr[None, :, :, l, :] * gap[..., None]
        val = np.where(avail4[None, :, :, k, None], val, -np.inf)
        best = val if best is None else np.maximum(best, val)
    return best


def user_delays(policy, tau: TauTable, model: DemandModel, layout: NetworkLayout,
                F: float) -> np.ndarray:
    """Average delay of every user in seconds (vector of length N_u)."""
    C = _as_matrix(policy)
    fetch = _fetch_delays(C, tau, layout, model.n_users)  # (U, N_b, 12, N_f)
    # sum over sectors then weight by a_uj q_f|u
    per_cell_file = fetch.sum(axis=2) / N_SECTORS  # (U, N_b, N_f)
    if per_cell_file.shape[0] == 1:
        out = np.einsum("uj,uf,jf->u", model.A, model.Q, per_cell_file[0])
    else:
        out = np.einsum("uj,uf,ujf->u", model.A, model.Q, per_cell_file)
    return F * out


def user_avg_delay(u: int, policy, tau: TauTable, model: DemandModel,
                   layout: NetworkLayout, F: float) -> float:
    """Average delay of user ``u`` over its requests and locations."""
    return float(user_delays(policy, tau, model, layout, F)[u])


def _piecewise_fetch(c_ranks, taus, present) -> float:
    """Expected per-bit delay of one fetch by explicit branch selection."""
    acc = 0.0  # cached fraction collected so far
    delay = 0.0
    for l in range(N_RANKS):
        if not present[l]:
            continue
        if acc + c_ranks[l] >= 1.0:
            return delay + (1.0 - acc) * taus[l]
        acc += c_ranks[l]
        delay += c_ranks[l] * taus[l]
    return delay + (1.0 - acc) * taus[N_RANKS]


def user_avg_delay_piecewise(u: int, policy, tau: TauTable, model: DemandModel,
                             layout: NetworkLayout, F: float) -> float:
    """Same quantity as :func:`user_avg_delay`, via the four-branch rule."""
    C = _as_matrix(policy)
    t = tau.broadcast(model.n_users, layout.n_cells)
    total = 0.0
    for j in range(layout.n_cells):
        if model.A[u, j] == 0:
            continue
        for i in range(N_SECTORS):
            bs = layout.ordered_bs[j, i]
            present = bs >= 0
            for f in range(model.n_files):
                c_ranks = [C[b, f] if b >= 0 else 0.0 for b in bs]
                fetch = _piecewise_fetch(c_ranks, t[u, j, i], present)
                total += model.A[u, j] * model.Q[u, f] / N_SECTORS * fetch
    return F * total


def nonoverlap_user_delay(policy, tau_local: float, tau_backhaul: float,
                          model: DemandModel, F: float) -> np.ndarray:
    """Per-user delay when only the local BS is reachable (closed form)."""
    C = _as_matrix(policy)
    per = C * tau_local + (1.0 - C) * tau_backhaul  # (N_b, N_f)
    return F * np.einsum("uj,uf,jf->u", model.A, model.Q, per)


def evaluate(policy, tau: TauTable, model: DemandModel, layout: NetworkLayout,
             F: float) -> DelayReport:
    """Network average and maximal weighted user delay of a placement."""
    t = user_delays(policy, tau, model, layout, F)
    weighted = model.n_users * model.s * t
    k = int(np.argmax(weighted))
    return DelayReport(t, float(model.s @ t), float(weighted[k]), k)
