"""Request-level simulation of the delay model.

Each simulated request draws a user by activity, a file by that user's
preference, a cell by its location row and a point uniformly in a random
sector of the cell. The per-bit delay of each rank is taken at that exact
point, and the file is fetched from ranks 1, 2, 3 and the backhaul in turn.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .delay import CachePolicy, evaluate
from .demand import DemandModel
from .geometry import N_RANKS, N_SECTORS, NetworkLayout, sample_triangles, _local_sector_vertices
from .radio import (
    RadioParams,
    TauTable,
    _gains_to,
    avg_rate_exact_mc,
    compute_tau_table,
    interference_set,
    rate_at,
)

__all__ = [
    "SimConfig",
    "SimResult",
    "simulate",
    "validate_tau",
    "validate_delay_model",
    "validate_rate_approximation",
]


@dataclass(frozen=True)
class SimConfig:
    n_requests: int = 1_000_000
    seed: int = 0
    #: 0 uses the fading-averaged rate; k > 0 averages k explicit fading draws
    fading_samples_per_location: int = 0
    chunk_size: int = 100_000
    trace_path: str | None = None

    def __post_init__(self):
        if self.n_requests < 1:
            raise ValueError("n_requests must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


@dataclass
class SimResult:
    T: float
    T_se: float
    per_user_mean: np.ndarray
    per_user_count: np.ndarray
    per_user_se: np.ndarray
    hit_fraction: float
    n_requests: int

    def to_json(self) -> str:
        d = asdict(self)
        for k in ("per_user_mean", "per_user_count", "per_user_se"):
            d[k] = [float(x) for x in d[k]]
        return json.dumps(d)


def _draw_categorical(rng, cum_rows: np.ndarray) -> np.ndarray:
    r = rng.random(len(cum_rows))
    idx = (r[:, None] >= cum_rows).sum(axis=1)
    return np.minimum(idx, cum_rows.shape[1] - 1)


def _rates_with_fading(points, b, layout, params: RadioParams, k: int, rng):
    """Per-point ZF rate averaged over ``k`` explicit fading draws."""
    nt, pt = params.n_antennas, params.transmit_power_w
    g = _gains_to(points, b, layout, params)
    n = len(points)
    h = rng.exponential(1.0, (n, k))
    interf = np.zeros((n, k))
    for bb in sorted(interference_set(b, layout)):
        interf += pt * rng.gamma(nt, 1.0 / nt, (n, k)) * _gains_to(points, bb, layout, params)[:, None]
    sinr = pt / nt * h * g[:, None] / (interf + params.noise_power_w)
    return params.bandwidth_hz * np.log2(1.0 + sinr).mean(axis=1)


def _point_taus(points, serving, layout, params, cfg, rng, rate_fn):
    """Per-bit delay (s/bit) at each point from its serving BS (-1 = absent)."""
    out = np.full(len(points), np.nan)
    for b in np.unique(serving):
        if b < 0:
            continue
        m = serving == b
        if rate_fn is not None:
            r = rate_fn(points[m], int(b))
        elif cfg.fading_samples_per_location > 0:
            r = _rates_with_fading(points[m], int(b), layout, params,
                                   cfg.fading_samples_per_location, rng)
        else:
            r = rate_at(points[m], int(b), layout, params)
        out[m] = 1.0 / np.asarray(r)
    return out


def _fetch(c_ranks, taus, present):
    """Vectorized branch rule: c_ranks, taus (n, 3|4), present (n, 3)."""
    n = len(c_ranks)
    acc = np.zeros(n)
    delay = np.zeros(n)
    done = np.zeros(n, bool)
    for l in range(N_RANKS):
        c = np.where(present[:, l], c_ranks[:, l], 0.0)
        t = np.nan_to_num(taus[:, l])
        finish = ~done & present[:, l] & (acc + c >= 1.0)
        delay = np.where(finish, delay + (1.0 - acc) * t, delay)
        go_on = ~done & ~finish
        delay = np.where(go_on, delay + c * t, delay)
        acc = np.where(go_on, acc + c, acc)
        done |= finish
    delay = np.where(done, delay, delay + (1.0 - acc) * taus[:, N_RANKS])
    return delay, done


def simulate(policy, model: DemandModel, layout: NetworkLayout,
             radio_params: RadioParams | None, F: float, cfg: SimConfig,
             tau: TauTable | None = None, rate_fn=None) -> SimResult:
    """Simulate ``cfg.n_requests`` requests and average their delays.

    With ``tau`` the per-bit delays are taken from the table (no location
    dependence); otherwise they come from ``radio_params`` at the sampled
    point, or from ``rate_fn(points, bs)`` when given.
    """
    if tau is None and radio_params is None and rate_fn is None:
        raise ValueError("need radio parameters, a rate function or a tau table")
    C = policy.C if isinstance(policy, CachePolicy) else np.asarray(policy, float)
    n_u, n_b = model.n_users, layout.n_cells
    backhaul = None if radio_params is None else 1.0 / radio_params.backhaul_bps
    if tau is not None:
        t_tab = tau.broadcast(n_u, n_b)
    cum_s = np.cumsum(model.s)[None, :]
    cum_q = np.cumsum(model.Q, axis=1)
    cum_a = np.cumsum(model.A, axis=1)
    local_tris = _local_sector_vertices(layout.D)

    n_chunks = -(-cfg.n_requests // cfg.chunk_size)
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_chunks)
    sums = np.zeros(n_u)
    sqs = np.zeros(n_u)
    counts = np.zeros(n_u, dtype=np.int64)
    hits = 0
    trace = None
    if cfg.trace_path:
        trace_fh = open(cfg.trace_path, "w", newline="")
        trace = csv.writer(trace_fh)
        trace.writerow(["u", "f", "j", "x", "y", "delay_s"])
    try:
        for ci, ss in enumerate(seeds):
            n = min(cfg.chunk_size, cfg.n_requests - ci * cfg.chunk_size)
            rng = np.random.default_rng(ss)
            u = _draw_categorical(rng, np.broadcast_to(cum_s, (n, n_u)))
            f = _draw_categorical(rng, cum_q[u])
            j = _draw_categorical(rng, cum_a[u])
            i = rng.integers(0, N_SECTORS, n)
            pts = sample_triangles(local_tris[i] + layout.bs_positions[j][:, None, :], rng)
            ranks = layout.ordered_bs[j, i]  # (n, 3)
            present = ranks >= 0
            c_ranks = np.where(present, C[np.maximum(ranks, 0), f[:, None]], 0.0)
            if tau is not None:
                taus = t_tab[u, j, i]
            else:
                taus = np.empty((n, N_RANKS + 1))
                for l in range(N_RANKS):
                    taus[:, l] = _point_taus(pts, ranks[:, l], layout, radio_params, cfg,
                                             rng, rate_fn)
                taus[:, N_RANKS] = backhaul
            d, hit = _fetch(c_ranks, taus, present)
            d = F * d
            np.add.at(sums, u, d)
            np.add.at(sqs, u, d * d)
            counts += np.bincount(u, minlength=n_u)
            hits += int(hit.sum())
            if trace is not None:
                for row in zip(u, f, j, pts[:, 0], pts[:, 1], d):
                    trace.writerow([int(row[0]), int(row[1]), int(row[2]),
                                    f"{row[3]:.3f}", f"{row[4]:.3f}", repr(float(row[5]))])
    finally:
        if trace is not None:
            trace_fh.close()

    N = cfg.n_requests
    total = sums.sum()
    mean = total / N
    var = max(sqs.sum() / N - mean**2, 0.0)
    safe = np.maximum(counts, 1)
    pu_mean = np.where(counts > 0, sums / safe, np.nan)
    pu_var = np.maximum(sqs / safe - pu_mean**2, 0.0)
    pu_se = np.where(counts > 1, np.sqrt(pu_var / safe), np.nan)
    return SimResult(
        T=float(mean), T_se=float(np.sqrt(var / N)), per_user_mean=pu_mean,
        per_user_count=counts, per_user_se=pu_se, hit_fraction=hits / N, n_requests=N,
    )


def validate_tau(layout: NetworkLayout, radio_params: RadioParams, cfg: SimConfig,
                 table: TauTable | None = None, rate_fn=None) -> dict[int, float]:
    """Relative error of the quadrature table against location sampling.

    ``cfg.n_requests`` uniform points are drawn over all sectors; for every
    rank the sample mean of ``1 / rate`` (over sectors where the rank exists)
    is compared with the tabulated value. Returns ``{rank: rel_error}`` for
    ranks 1..3 that exist.
    """
    if table is None:
        table = compute_tau_table(layout, radio_params, rate_fn=rate_fn)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_requests
    j = rng.integers(0, layout.n_cells, n)
    i = rng.integers(0, N_SECTORS, n)
    pts = sample_triangles(_local_sector_vertices(layout.D)[i] + layout.bs_positions[j][:, None, :], rng)
    ref = table.rank_average()[0]
    out = {}
    for l in range(N_RANKS):
        serving = layout.ordered_bs[j, i, l]
        if not np.any(serving >= 0):
            continue
        taus = _point_taus(pts, serving, layout, radio_params, cfg, rng, rate_fn)
        # weight sectors equally, matching the sector-averaged table
        keep = serving >= 0
        sector_id = j[keep] * N_SECTORS + i[keep]
        s_sum = np.bincount(sector_id, weights=taus[keep], minlength=layout.n_cells * N_SECTORS)
        s_cnt = np.bincount(sector_id, minlength=layout.n_cells * N_SECTORS)
        has = s_cnt > 0
        est = np.mean(s_sum[has] / s_cnt[has])
        out[l + 1] = float(abs(est - ref[l]) / ref[l])
    return out


def validate_delay_model(policy, model: DemandModel, layout: NetworkLayout,
                         radio_params: RadioParams, F: float, cfg: SimConfig,
                         tau: TauTable | None = None, rate_fn=None) -> float:
    """``|T_sim - T_model| / T_model`` for one placement."""
    if tau is None:
        tau = compute_tau_table(layout, radio_params, rate_fn=rate_fn)
    analytic = evaluate(policy, tau, model, layout, F).network_avg
    sim = simulate(policy, model, layout, radio_params, F, cfg, rate_fn=rate_fn)
    return abs(sim.T - analytic) / analytic


def validate_rate_approximation(layout: NetworkLayout, radio_params: RadioParams,
                                n_points: int = 50, n_draws: int = 100_000,
                                seed: int = 0) -> np.ndarray:
    """Relative error of the Gamma-approximated rate at random locations.

    Noise is switched off so every point is interference limited. Points are
    drawn uniformly over cells whose BS has co-band interferers and served by
    that BS; each is compared with a ``n_draws`` fading Monte Carlo estimate.
    """
    params = radio_params.replace(noise_psd_w_per_hz=0.0)
    cells = [b for b in range(layout.n_cells) if interference_set(b, layout)]
    if not cells:
        raise ValueError("layout has no interference-limited cell")
    rng = np.random.default_rng(seed)
    j = rng.choice(cells, n_points)
    i = rng.integers(0, N_SECTORS, n_points)
    pts = sample_triangles(_local_sector_vertices(layout.D)[i] + layout.bs_positions[j][:, None, :], rng)
    errs = np.empty(n_points)
    for k in range(n_points):
        approx = rate_at(pts[k], int(j[k]), layout, params)
        exact = avg_rate_exact_mc(pts[k], int(j[k]), layout, params, n_draws, rng)
        errs[k] = abs(approx - exact) / exact
    return errs
