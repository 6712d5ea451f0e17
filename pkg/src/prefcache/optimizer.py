"""Optimal cache placement as a linear program.

The weighted objective ``(1 - eta) T + eta max_u N_u s_u t_u`` is made linear
with one epigraph variable ``mu`` per (sector, cell, file[, user]) bounding
the four branch delays of a fetch, and one scalar ``nu`` bounding every
weighted user delay.

Internally delays are expressed in units of the largest per-bit delay so the
solver sees coefficients of order one; results are rescaled to seconds.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .delay import CachePolicy, evaluate
from .demand import DemandModel
from .geometry import N_RANKS, N_SECTORS, NetworkLayout
from .radio import TauTable

__all__ = [
    "LpInstance",
    "LpSolution",
    "LpSolveError",
    "build_lp",
    "solve_lp",
    "solve",
    "solve_policy1",
    "solve_policy2",
    "eta_sweep",
    "write_lp",
]


class LpSolveError(RuntimeError):
    """The solver stopped without an optimal point."""

    def __init__(self, message, incumbent=None):
        super().__init__(message)
        self.incumbent = incumbent


@dataclass(frozen=True, eq=False)
class LpInstance:
    """Sparse LP ``min c @ x  s.t.  A_ub @ x <= b_ub, bounds``.

    Variables are laid out as ``[c_bf (N_b*N_f), mu (n_mu), nu]``.
    """

    cost: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    bounds: np.ndarray
    eta: float
    mode: str
    n_cells: int
    n_files: int
    n_users: int
    n_cache: float
    scale: float  # seconds per objective unit
    tau_ref: float  # seconds/bit per mu unit
    mu_shape: tuple = field(default=())

    @property
    def n_c(self) -> int:
        return self.n_cells * self.n_files

    @property
    def n_mu(self) -> int:
        return int(np.prod(self.mu_shape))

    @property
    def n_vars(self) -> int:
        return self.n_c + self.n_mu + 1

    @property
    def n_constraints(self) -> int:
        return self.A_ub.shape[0]


@dataclass(frozen=True, eq=False)
class LpSolution:
    policy: CachePolicy
    objective: float
    mu: np.ndarray  # s/bit, shape mu_shape
    nu: float  # seconds
    stats: dict


def build_lp(eta: float, model: DemandModel, tau: TauTable, layout: NetworkLayout,
             F: float, n_cache: float, mode: str = "auto") -> LpInstance:
    """Assemble the epigraph LP for trade-off weight ``eta``.

    ``mode`` is ``"collapsed"`` (one ``mu`` per sector and file, valid when all
    users share the same per-bit delays), ``"full"`` (one per user as well) or
    ``"auto"``.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if mode == "auto":
        mode = "collapsed" if tau.uniform_users else "full"
    if mode not in ("collapsed", "full"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "collapsed" and not tau.uniform_users:
        raise ValueError("collapsed mode needs per-bit delays shared by all users")
    tau.check_monotone(layout.available_ranks())

    n_b, n_f, n_u = layout.n_cells, model.n_files, model.n_users
    if model.n_cells != n_b:
        raise ValueError("demand and layout disagree on the number of cells")
    n_s = N_SECTORS
    u_dim = 1 if mode == "collapsed" else n_u
    t_all = tau.broadcast(u_dim, n_b, n_s)
    tau_ref = float(np.nanmax(t_all))
    t = t_all / tau_ref
    avail = layout.available_ranks()
    avail4 = np.concatenate([avail, np.ones((n_b, n_s, 1), bool)], axis=-1)

    mu_shape = (u_dim, n_b, n_s, n_f)
    n_c = n_b * n_f
    n_mu = int(np.prod(mu_shape))
    nu_col = n_c + n_mu
    mu_idx = n_c + np.arange(n_mu).reshape(mu_shape)

    # branch constraints: -mu - sum_{l<k} c_{b^l f} (tau_k - tau_l) <= -tau_k
    rows, cols, vals, rhs = [], [], [], []
    n_rows = 0
    for k in range(N_RANKS + 1):
        sel = np.broadcast_to(avail4[None, :, :, k, None], mu_shape)
        m_ids = mu_idx[sel]
        cnt = m_ids.size
        if cnt == 0:
            continue
        r_ids = n_rows + np.arange(cnt)
        rows.append(r_ids)
        cols.append(m_ids)
        vals.append(-np.ones(cnt))
        tk = np.broadcast_to(t[..., k, None], mu_shape)[sel]
        rhs.append(-tk)
        for l in range(k):
            use = np.broadcast_to(avail4[None, :, :, l, None], mu_shape)[sel]
            gap = (np.broadcast_to((t[..., k] - np.nan_to_num(t[..., l]))[..., None],
                                   mu_shape))[sel]
            bs = np.broadcast_to(layout.ordered_bs[None, :, :, l, None], mu_shape)[sel]
            ff = np.broadcast_to(np.arange(n_f), mu_shape)[sel]
            keep = use & (gap != 0)
            rows.append(r_ids[keep])
            cols.append(bs[keep] * n_f + ff[keep])
            vals.append(-gap[keep])
        n_rows += cnt

    # per-(u, j, f) weight a_uj q_uf / 12
    w = model.A[:, :, None] * model.joint[:, None, :] / n_s  # (N_u, N_b, N_f)
    # fairness: N_u sum a_uj q_uf mu / 12 - nu <= 0 (delays in units of F tau_ref)
    for u in range(n_u):
        coeff = np.broadcast_to(w[u][:, None, :], (n_b, n_s, n_f))
        ids = mu_idx[0 if mode == "collapsed" else u]
        nz = coeff != 0
        rows.append(np.full(nz.sum() + 1, n_rows))
        cols.append(np.append(ids[nz], nu_col))
        vals.append(np.append(n_u * coeff[nz], -1.0))
        rhs.append([0.0])
        n_rows += 1
    # cache budget
    for b in range(n_b):
        rows.append(np.full(n_f, n_rows))
        cols.append(b * n_f + np.arange(n_f))
        vals.append(np.ones(n_f))
        rhs.append([float(n_cache)])
        n_rows += 1

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, n_c + n_mu + 1),
    )
    cost = np.zeros(n_c + n_mu + 1)
    if mode == "collapsed":
        wm = np.broadcast_to(w.sum(axis=0)[None, :, None, :], mu_shape)
    else:
        wm = np.broadcast_to(w[:, :, None, :], mu_shape)
    cost[n_c:nu_col] = (1.0 - eta) * wm.ravel()
    cost[nu_col] = eta
    bounds = np.zeros((n_c + n_mu + 1, 2))
    bounds[:n_c, 1] = 1.0
    bounds[n_c:, 1] = np.inf
    return LpInstance(
        cost=cost, A_ub=A, b_ub=np.concatenate(rhs).astype(float), bounds=bounds,
        eta=float(eta), mode=mode, n_cells=n_b, n_files=n_f, n_users=n_u,
        n_cache=float(n_cache), scale=float(F) * tau_ref, tau_ref=tau_ref,
        mu_shape=mu_shape,
    )


def _tighten(inst: LpInstance, x: np.ndarray) -> np.ndarray:
    """Lower each mu to the largest branch it bounds, and nu to its max row.

    Neither move can break feasibility or raise the objective.
    """
    x = x.copy()
    n_c, n_mu = inst.n_c, inst.n_mu
    A = inst.A_ub
    branch_rows = A.shape[0] - inst.n_users - inst.n_cells
    Ab = A[:branch_rows]
    # each branch row has exactly one mu entry with coefficient -1
    mu_cols = Ab[:, n_c:n_c + n_mu].tocoo()
    lhs_wo_mu = Ab[:, :n_c] @ x[:n_c]
    # row reads -mu + lhs_wo_mu <= b  =>  mu >= lhs_wo_mu - b
    need = np.full(n_mu, -np.inf)
    np.maximum.at(need, mu_cols.col, lhs_wo_mu[mu_cols.row] - inst.b_ub[mu_cols.row])
    x[n_c:n_c + n_mu] = need
    Af = A[branch_rows:branch_rows + inst.n_users]
    x[-1] = max(0.0, float(np.max(Af[:, :-1] @ x[:-1])))
    return x


def solve_lp(inst: LpInstance, method: str = "highs-ds", time_limit: float | None = None,
             tie_break: bool = True) -> LpSolution:
    """Solve with the HiGHS dual simplex (deterministic).

    For ``eta = 1`` the min-max optimum is rarely unique; with ``tie_break``
    a second solve keeps the max-weighted delay at its optimum and minimizes
    the network average delay among those placements.
    """
    options = {"presolve": True}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = linprog(inst.cost, A_ub=inst.A_ub, b_ub=inst.b_ub, bounds=inst.bounds,
                  method=method, options=options)
    if res.status != 0 or res.x is None:
        incumbent = None
        if res.x is not None:
            incumbent = CachePolicy(np.clip(res.x[: inst.n_c], 0, 1).reshape(
                inst.n_cells, inst.n_files))
        raise LpSolveError(f"LP solver stopped: {res.message}", incumbent)
    x = _tighten(inst, res.x)
    iterations = int(getattr(res, "nit", 0))
    if tie_break and inst.eta == 1.0:
        x, extra = _secondary_average(inst, x, method, options)
        iterations += extra
    obj_units = float(inst.cost @ x)
    C = np.clip(x[: inst.n_c].reshape(inst.n_cells, inst.n_files), 0.0, 1.0) + 0.0  # no -0.0
    # snap solver round-off at the box bounds so vertex solutions are exact
    near = np.abs(C - np.round(C)) < 1e-9
    C[near] = np.round(C[near])
    _repair_capacity(C, inst.n_cache)
    resid = np.maximum(inst.A_ub @ x - inst.b_ub, 0.0)
    stats = {
        "iterations": iterations,
        "primal_residual": float(resid.max(initial=0.0)),
        "status": res.message,
        "n_vars": inst.n_vars,
        "n_constraints": inst.n_constraints,
    }
    mu = x[inst.n_c:inst.n_c + inst.n_mu].reshape(inst.mu_shape) * inst.tau_ref
    return LpSolution(
        policy=CachePolicy(C, inst.n_cache),
        objective=obj_units * inst.scale,
        mu=mu,
        nu=float(x[-1]) * inst.scale,
        stats=stats,
    )


def _repair_capacity(C: np.ndarray, n_cache: float) -> None:
    """Pull rows back under ``n_cache`` after solver feasibility slack (in place).

    The excess (around 1e-8) is taken from fractional entries so that
    integral ones stay exact; a row without any falls back to scaling.
    """
    for b in np.flatnonzero(C.sum(axis=1) > n_cache):
        row = C[b]
        excess = row.sum() - n_cache
        frac = (row > 0) & (row < 1)
        if row[frac].sum() > excess:
            row[frac] -= excess * row[frac] / row[frac].sum()
        else:
            row *= n_cache / row.sum()


def _secondary_average(inst: LpInstance, x, method, options):
    """Among min-max optimal placements pick one with least average delay."""
    nu_star = x[-1]
    avg_cost = np.zeros_like(inst.cost)
    n_c, n_mu = inst.n_c, inst.n_mu
    # T in the same units: sum_u sum_jif a q mu / 12 equals the fairness rows / N_u summed
    fair = inst.A_ub[-(inst.n_users + inst.n_cells):-inst.n_cells]
    avg_cost[n_c:n_c + n_mu] = np.asarray(fair[:, n_c:n_c + n_mu].sum(axis=0)).ravel() / inst.n_users
    bounds = inst.bounds.copy()
    bounds[-1, 1] = nu_star * (1 + 1e-9) + 1e-12
    res = linprog(avg_cost, A_ub=inst.A_ub, b_ub=inst.b_ub, bounds=bounds,
                  method=method, options=options)
    if res.status != 0 or res.x is None:
        return x, 0
    y = _tighten(inst, res.x)
    # keep the first-stage point if round-off pushed nu above the optimum
    if y[-1] > nu_star * (1 + 1e-7) + 1e-12:
        return x, int(getattr(res, "nit", 0))
    return y, int(getattr(res, "nit", 0))


def solve(eta: float, model: DemandModel, tau: TauTable, layout: NetworkLayout, F: float,
          n_cache: float, mode: str = "auto", **kw) -> LpSolution:
    return solve_lp(build_lp(eta, model, tau, layout, F, n_cache, mode), **kw)


def solve_policy1(model, tau, layout, F, n_cache, **kw) -> LpSolution:
    """Placement minimizing the network average delay."""
    return solve(0.0, model, tau, layout, F, n_cache, **kw)


def solve_policy2(model, tau, layout, F, n_cache, **kw) -> LpSolution:
    """Placement minimizing the maximal weighted user average delay."""
    return solve(1.0, model, tau, layout, F, n_cache, **kw)


def eta_sweep(model, tau, layout, F, n_cache, etas) -> list[tuple[float, float, float]]:
    """``(eta, T, max_weighted)`` of the optimal placement for every ``eta``."""
    out = []
    for eta in etas:
        sol = solve(float(eta), model, tau, layout, F, n_cache)
        rep = evaluate(sol.policy, tau, model, layout, F)
        out.append((float(eta), rep.network_avg, rep.max_weighted))
    return out


def write_lp(inst: LpInstance, path) -> None:
    """Write the instance in CPLEX LP text format (objective in LP units)."""
    names = [f"c_{b}_{f}" for b in range(inst.n_cells) for f in range(inst.n_files)]
    names += [f"mu_{k}" for k in range(inst.n_mu)] + ["nu"]

    def expr(idx, coef):
        parts = []
        for i, v in zip(idx, coef):
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {abs(v):.17g} {names[i]}")
        text = " ".join(parts) or "0 nu"
        return text[2:] if text.startswith("+ ") else text

    nz = np.flatnonzero(inst.cost)
    lines = ["\\ cache placement LP", f"\\ eta = {inst.eta}, scale = {inst.scale!r} s/unit",
             "Minimize", " obj: " + expr(nz, inst.cost[nz]), "Subject To"]
    A = inst.A_ub.tocsr()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        lines.append(f" r{r}: {expr(A.indices[lo:hi], A.data[lo:hi])} <= {inst.b_ub[r]:.17g}")
    lines.append("Bounds")
    for i, (lo, hi) in enumerate(inst.bounds):
        hi_txt = "+inf" if np.isinf(hi) else f"{hi:.17g}"
        lines.append(f" {lo:.17g} <= {names[i]} <= {hi_txt}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")
