"""Per-bit download delays from the zero-forcing downlink model.

The fading-averaged rate from a serving BS is approximated in the
interference-limited regime by matching the first two moments of
``X = h g + N_t sum h' g'`` and ``Y = N_t sum h' g'`` to Gamma variables,
then using ``E[ln Gamma(k, theta)] = psi(k) + ln(theta)``. Signal fading is
``Exp(1)`` and every interferer's aggregate fading is ``Gamma(N_t, 1/N_t)``.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import digamma, exp1

from .geometry import N_RANKS, N_SECTORS, NetworkLayout, interference_set

__all__ = [
    "RadioParams",
    "GammaMoments",
    "TauTable",
    "TauMonotonicityError",
    "NoInterferenceError",
    "pathloss_gain",
    "gamma_moments",
    "avg_rate_highsnr",
    "noise_limited_rate",
    "avg_rate_exact_mc",
    "rate_at",
    "triangle_rule",
    "sector_tau_values",
    "compute_tau_table",
]

_LN2 = np.log(2.0)
MIN_DISTANCE_M = 1.0


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class RadioParams:
    """Downlink and backhaul parameters (SI units).

    Defaults reproduce the simulation setup: 46 dBm, 4 antennas, pathloss
    ``35.5 + 37.6 log10(r)`` dB, 5 MHz per user and a 2 Mbps backhaul.
    """

    transmit_power_w: float = dbm_to_watt(46.0)
    n_antennas: int = 4
    pathloss_exponent: float = 3.76
    pathloss_intercept: float = 10.0 ** (-3.55)
    bandwidth_hz: float = 5e6
    backhaul_bps: float = 2e6
    noise_psd_w_per_hz: float = dbm_to_watt(-174.0)
    noise_figure_db: float = 9.0

    def __post_init__(self):
        positive = (
            self.transmit_power_w,
            self.n_antennas,
            self.pathloss_intercept,
            self.bandwidth_hz,
            self.backhaul_bps,
        )
        if min(positive) <= 0:
            raise ValueError("radio parameters must be positive")
        if self.pathloss_exponent <= 2:
            raise ValueError("pathloss exponent must exceed 2")
        if self.noise_psd_w_per_hz < 0:
            raise ValueError("noise PSD must be non-negative")

    @property
    def noise_power_w(self) -> float:
        return self.noise_psd_w_per_hz * self.bandwidth_hz * 10.0 ** (self.noise_figure_db / 10.0)

    def replace(self, **kw) -> "RadioParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class GammaMoments:
    k_x: float | np.ndarray
    theta_x: float | np.ndarray
    k_y: float | np.ndarray
    theta_y: float | np.ndarray


class NoInterferenceError(ValueError):
    """The serving BS has no co-band interferer; use the noise-limited rate."""


class TauMonotonicityError(ValueError):
    """Location-averaged per-bit delays are not strictly increasing in rank."""


def pathloss_gain(r, params: RadioParams | None = None):
    """Linear pathloss gain ``intercept * r**(-alpha)``.

    ``r`` must be strictly positive; callers clamp to ``MIN_DISTANCE_M``.
    """
    params = params or RadioParams()
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pathloss is singular at r <= 0; clamp the distance first")
    out = params.pathloss_intercept * r ** (-params.pathloss_exponent)
    return out if out.ndim else float(out)


def gamma_moments(signal_gain, interference_gains, n_antennas: int) -> GammaMoments:
    """Shape/scale pairs of the Gamma laws matched to X and Y.

    ``interference_gains`` may be a 1-D sequence (one point) or an array whose
    last axis runs over interferers, with ``signal_gain`` broadcasting against
    the leading axes.
    """
    gi = np.asarray(interference_gains, dtype=float)
    if gi.size == 0 or gi.shape[-1] == 0:
        raise NoInterferenceError("empty interference set")
    g = np.asarray(signal_gain, dtype=float)
    if np.any(g <= 0):
        raise ValueError("signal gain must be positive")
    nt = float(n_antennas)
    g1 = gi.sum(axis=-1)
    g2 = (gi**2).sum(axis=-1)
    mean_x = g + nt * g1
    var_x = g**2 + nt * g2
    k_x = mean_x**2 / var_x
    theta_x = var_x / mean_x
    k_y = nt * g1**2 / g2
    theta_y = g2 / g1
    if k_x.ndim == 0:
        return GammaMoments(float(k_x), float(theta_x), float(k_y), float(theta_y))
    return GammaMoments(k_x, theta_x, k_y, theta_y)


def avg_rate_highsnr(m: GammaMoments, bandwidth_hz: float):
    """Interference-limited average rate ``W (E[log2 X] - E[log2 Y])``."""
    bits = np.log2(np.divide(m.theta_x, m.theta_y)) + (
        digamma(m.k_x) - digamma(m.k_y)
    ) / _LN2
    return bandwidth_hz * bits


def noise_limited_rate(snr, bandwidth_hz: float):
    """``W E[log2(1 + snr h)]`` for ``h ~ Exp(1)``.

    Uses the identity ``E[ln(1 + a h)] = exp(1/a) E1(1/a)``; the large
    argument branch falls back to its asymptotic series to avoid overflow.
    """
    snr = np.asarray(snr, dtype=float)
    x = 1.0 / snr
    with np.errstate(over="ignore"):
        exact = np.exp(np.minimum(x, 700.0)) * exp1(x)
    asym = (1.0 - 1.0 / x + 2.0 / x**2 - 6.0 / x**3) / x
    nats = np.where(x < 50.0, exact, asym)
    out = bandwidth_hz * nats / _LN2
    return out if out.ndim else float(out)


def _gains_to(points: np.ndarray, bs: int | np.ndarray, layout: NetworkLayout, params):
    d = np.linalg.norm(points - layout.bs_positions[bs], axis=-1)
    return pathloss_gain(np.maximum(d, MIN_DISTANCE_M), params)


def rate_at(points, serving_bs: int, layout: NetworkLayout, params: RadioParams):
    """Fading-averaged rate (bits/s) at ``points`` when served by ``serving_bs``.

    Interference-limited BSs use the Gamma approximation; a BS without
    co-band interferers falls back to the noise-limited rate.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = _gains_to(pts, serving_bs, layout, params)
    interferers = sorted(interference_set(serving_bs, layout))
    if interferers:
        gi = np.stack([_gains_to(pts, b, layout, params) for b in interferers], axis=-1)
        rate = avg_rate_highsnr(gamma_moments(g, gi, params.n_antennas), params.bandwidth_hz)
    else:
        if params.noise_power_w <= 0:
            raise NoInterferenceError("no interferers and no noise: rate is unbounded")
        snr = params.transmit_power_w / params.n_antennas * g / params.noise_power_w
        rate = noise_limited_rate(snr, params.bandwidth_hz)
    rate = np.asarray(rate)
    return rate if np.ndim(points) > 1 else float(rate[0])


def avg_rate_exact_mc(user_point, serving_bs: int, layout: NetworkLayout,
                      params: RadioParams, n_samples: int, rng) -> float:
    """Monte Carlo estimate of the fading-averaged ZF rate at one location.

    Draws ``h ~ Exp(1)`` for the signal and ``Gamma(N_t, 1/N_t)`` for every
    co-band interferer, then averages ``W log2(1 + SINR)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    p = np.asarray(user_point, dtype=float)
    nt = params.n_antennas
    pt = params.transmit_power_w
    g = _gains_to(p, serving_bs, layout, params)
    interferers = sorted(interference_set(serving_bs, layout))
    h = rng.exponential(1.0, n_samples)
    signal = pt / nt * h * g
    interference = np.zeros(n_samples)
    for b in interferers:
        hb = rng.gamma(nt, 1.0 / nt, n_samples)
        interference += pt * hb * _gains_to(p, b, layout, params)
    sinr = signal / (interference + params.noise_power_w)
    return float(params.bandwidth_hz * np.mean(np.log2(1.0 + sinr)))


def triangle_rule(tri: np.ndarray, order: int = 24):
    """Gauss-Legendre points/weights on a triangle via the collapsed map.

    With vertices ``(a, b, c)`` the map ``x = a + t (b - a) + t v (c - b)``
    sends ``[0, 1]^2`` onto the triangle with Jacobian ``2 |T| t``; the
    returned weights sum to one, so ``weights @ f(points)`` is the mean.
    """
    x, w = leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    t, v = np.meshgrid(x, x, indexing="ij")
    wt = np.outer(w, w) * 2.0 * t
    a, b, c = np.asarray(tri, dtype=float)
    pts = a + t[..., None] * (b - a) + (t * v)[..., None] * (c - b)
    return pts.reshape(-1, 2), wt.ravel()


@dataclass(frozen=True, eq=False)
class TauTable:
    """Location-averaged per-bit delays (s/bit) for ranks 1..4.

    ``values`` has shape ``(U, B, S, 4)`` where each of ``U`` (users),
    ``B`` (cells) and ``S`` (sectors) is either 1, meaning shared, or full
    size. NaN marks a rank that is absent everywhere it is stored.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(1, 1, 1, -1)
        if v.ndim != 4 or v.shape[-1] != N_RANKS + 1:
            raise ValueError("tau values must have shape (U, B, S, 4)")
        if not np.all(np.isfinite(v[..., 3])) or np.any(v[..., 3] <= 0):
            raise ValueError("backhaul delay must be finite and positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_ranks(cls, taus) -> "TauTable":
        """Table shared by all users and sectors; ``None`` marks absent ranks."""
        arr = np.array([np.nan if t is None else t for t in taus], dtype=float)
        return cls(arr)

    @property
    def uniform_users(self) -> bool:
        return self.values.shape[0] == 1

    @property
    def per_sector(self) -> bool:
        return self.values.shape[1] > 1 or self.values.shape[2] > 1

    def broadcast(self, n_u: int, n_b: int, n_s: int = N_SECTORS) -> np.ndarray:
        return np.broadcast_to(self.values, (n_u, n_b, n_s, N_RANKS + 1))

    def rank_average(self) -> np.ndarray:
        """Per-user rank delays averaged over the sectors where a rank exists."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN ranks stay NaN
            return np.nanmean(self.values, axis=(1, 2))

    def collapsed(self) -> "TauTable":
        """Drop the sector dependence, keeping the sector-averaged values."""
        return TauTable(self.rank_average()[:, None, None, :])

    def check_monotone(self, available: np.ndarray | None = None) -> None:
        """Raise unless delays strictly increase over every present rank."""
        v = self.values
        if available is not None:
            n_u = v.shape[0]
            avail4 = np.concatenate(
                [available, np.ones(available.shape[:2] + (1,), bool)], axis=-1
            )
            v = np.where(avail4[None], self.broadcast(n_u, *available.shape[:2]), np.nan)
        flat = v.reshape(-1, N_RANKS + 1)
        for row in flat:
            present = row[~np.isnan(row)]
            if np.any(np.diff(present) <= 0):
                raise TauMonotonicityError(
                    f"per-bit delays {row} are not strictly increasing in rank; "
                    "the farther-BS-is-slower ordering is required"
                )

    def to_csv(self, path) -> None:
        """Write ``user, rank, tau_s_per_bit`` rows of the sector averages."""
        avg = self.rank_average()
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user", "rank", "tau_s_per_bit"])
            for u, row in enumerate(avg):
                for rank, t in enumerate(row, start=1):
                    w.writerow([u if not self.uniform_users else "*", rank, repr(float(t))])


def sector_tau_values(layout: NetworkLayout, params: RadioParams,
                      quadrature_order: int = 24, rate_fn=None) -> np.ndarray:
    """Mean of ``1 / rate`` over every sector triangle for each present rank.

    Returns shape ``(N_b, 12, 4)`` in s/bit with NaN for absent ranks and the
    backhaul delay ``1 / C_bh`` in the last slot. ``rate_fn(points, bs)``
    replaces the radio model when given.
    """
    if rate_fn is None:
        def rate_fn(pts, b):
            return rate_at(pts, b, layout, params)

    n_b = layout.n_cells
    out = np.full((n_b, N_SECTORS, N_RANKS + 1), np.nan)
    out[..., 3] = 1.0 / params.backhaul_bps
    for j in range(n_b):
        for i in range(N_SECTORS):
            pts, wts = triangle_rule(layout.sector_vertices(j, i), quadrature_order)
            for rank in range(N_RANKS):
                b = layout.ordered_bs[j, i, rank]
                if b >= 0:
                    out[j, i, rank] = wts @ (1.0 / np.asarray(rate_fn(pts, int(b))))
    return out


def compute_tau_table(layout: NetworkLayout, params: RadioParams,
                      quadrature_order: int = 24, rate_fn=None) -> TauTable:
    """Location-averaged per-bit delay of each rank, shared by all users.

    Every sector is integrated on its own and the results are averaged over
    the sectors in which the rank exists; on the bounded 7-cell layout the
    edge sectors differ from the inner ones, so no single reference sector
    is representative.

    Raises
    ------
    TauMonotonicityError
        If the averaged delays do not strictly increase from rank 1 to 4.
    """
    per_sector = sector_tau_values(layout, params, quadrature_order, rate_fn)
    table = TauTable(per_sector[None]).collapsed()
    table.check_monotone()
    return table
