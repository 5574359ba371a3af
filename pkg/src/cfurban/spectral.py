"""Downlink spectral-efficiency engine.

Per fading realization: i.i.d. Rayleigh small-scale channels on top of the
large-scale gains, per-entry MMSE channel estimates from orthogonal pilots,
centralized MMSE precoding directions over each UE's serving set, and a
per-AP equal power split. The per-UE SE is the channel-hardening bound

    SE_k = (1 - tau_p / tau_c) * log2(1 + SINR_k)
    SINR_k = |E[h_k^H w_k]|^2 /
             (sum_i E[|h_k^H w_i|^2] - |E[h_k^H w_k]|^2 + n0)

with the expectations estimated across the realizations of one drop.

All powers are in mW internally; the fading variance of an entry is its
linear channel power gain, so received powers and the noise floor live on
the same scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import GainTable, RadioParams, dbm_to_mw
from .serving import ServingAssignment, ap_load


@dataclass(frozen=True)
class FrameParams:
    """Coherence block structure and Monte-Carlo depth.

    tau_p defaults to the UE count (orthogonal pilots); pilot power defaults
    to the AP transmit power. tau_p == tau_c is allowed and yields zero SE
    (the whole block is spent on pilots).
    """

    tau_c: int = 200
    tau_p: int | None = None
    pilot_power_dbm: float | None = None
    n_fading: int = 100

    def __post_init__(self):
        if self.tau_c < 1:
            raise ValueError("tau_c must be >= 1")
        if self.tau_p is not None and not 0 < self.tau_p <= self.tau_c:
            raise ValueError("tau_p must satisfy 0 < tau_p <= tau_c")
        if self.n_fading < 1:
            raise ValueError("n_fading must be >= 1")


@dataclass
class SeResult:
    se_per_ue: np.ndarray  # bits/s/Hz
    sinr_per_ue: np.ndarray  # linear
    serving_size_per_ue: np.ndarray


def _draw_fading(gain_lin: np.ndarray, rng, n: int) -> np.ndarray:
    """(n, M, K) i.i.d. CN(0, gain) draws; zero-gain entries are exactly 0."""
    m, k = gain_lin.shape
    zr = rng.standard_normal((n, m, k))
    zi = rng.standard_normal((n, m, k))
    return np.sqrt(gain_lin / 2.0)[None] * (zr + 1j * zi)


def sample_fading(gains: GainTable | np.ndarray, rng) -> np.ndarray:
    """One (M, K) small-scale realization with per-entry variance equal to
    the linear channel gain."""
    g = gains.linear_gains() if isinstance(gains, GainTable) else np.asarray(gains)
    return _draw_fading(g, rng, 1)[0]


def estimation_variance(gain_lin, pilot_energy_mw: float, noise_mw: float):
    """MMSE estimate variance gamma = c g^2 / (c g + n0) with c the pilot
    energy (pilot power times tau_p)."""
    g = np.asarray(gain_lin, dtype=float)
    denom = pilot_energy_mw * g + noise_mw
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(denom > 0, pilot_energy_mw * g * g / denom, 0.0)
    return gamma


def _estimate(h, gain_lin, pilot_energy_mw, noise_mw, rng):
    """Per-entry MMSE estimates consistent with the realized channels.

    The estimate is the MMSE filter applied to the actual pilot observation,
    so realized channel = estimate + independent error with variance
    gain - gamma.
    """
    shape = h.shape
    w = np.sqrt(noise_mw / 2.0) * (
        rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    )
    c = pilot_energy_mw
    y = np.sqrt(c) * h + w
    denom = c * gain_lin + noise_mw
    with np.errstate(invalid="ignore", divide="ignore"):
        coef = np.where(denom > 0, np.sqrt(c) * gain_lin / denom, 0.0)
    hhat = coef[None] * y if h.ndim == 3 else coef * y
    gamma = estimation_variance(gain_lin, c, noise_mw)
    return hhat, gain_lin - gamma


def mmse_estimate(h, gains: GainTable, frame: FrameParams, radio: RadioParams, rng):
    """Public estimation entry point working on a GainTable.

    Requires tau_p >= number of UEs (orthogonal pilots; pilot reuse is
    unsupported). Returns (estimates, error_variances).
    """
    g = gains.linear_gains()
    k = g.shape[1]
    tau_p = frame.tau_p if frame.tau_p is not None else k
    if tau_p < k:
        raise ValueError(
            f"tau_p={tau_p} below UE count {k} would require pilot reuse (unsupported)"
        )
    pilot_dbm = (
        frame.pilot_power_dbm if frame.pilot_power_dbm is not None else radio.tx_power
    )
    c = dbm_to_mw(pilot_dbm) * tau_p
    return _estimate(np.asarray(h), g, c, dbm_to_mw(radio.noise_dbm), rng)


def mmse_precoders(
    estimates: np.ndarray,
    error_variances: np.ndarray,
    assignment: ServingAssignment,
    loads: np.ndarray,
    p_mw: float,
    noise_mw: float,
) -> np.ndarray:
    """Centralized MMSE precoding directions with per-AP equal power split.

    For UE k with serving set S the direction solves

        (p * sum_i D hhat_i hhat_i^H D + p * D C_err D + n0 I) v = D hhat_k

    restricted to the rows/columns S. Each entry is then scaled so that the
    average of |w_mk|^2 over the supplied realizations equals p / load_m for
    serving APs (and is 0 elsewhere). Accepts (M, K) or stacked (n, M, K)
    estimates; normalization averages over the stack.
    """
    hh = np.asarray(estimates)
    squeeze = hh.ndim == 2
    if squeeze:
        hh = hh[None]
    n, m, k = hh.shape
    err_sum = np.asarray(error_variances).sum(axis=1)  # (M,)
    v = np.zeros((n, m, k), dtype=complex)
    for kk in range(k):
        s = np.nonzero(assignment.mask[:, kk])[0]
        if len(s) == 0:
            continue
        hs = hh[:, s, :]  # (n, |S|, K)
        a = p_mw * (hs @ hs.conj().transpose(0, 2, 1))
        diag = p_mw * err_sum[s] + noise_mw
        a[:, np.arange(len(s)), np.arange(len(s))] += diag[None, :]
        v[:, s, kk] = np.linalg.solve(a, hh[:, s, kk][..., None])[..., 0]

    mean_sq = (np.abs(v) ** 2).mean(axis=0)  # (M, K)
    with np.errstate(invalid="ignore", divide="ignore"):
        target = p_mw / np.maximum(loads, 1)[:, None]
        scale = np.where(
            assignment.mask & (mean_sq > 0), np.sqrt(target / np.maximum(mean_sq, 1e-300)), 0.0
        )
    w = v * scale[None]
    return w[0] if squeeze else w


def hardening_sinr(h: np.ndarray, w: np.ndarray, noise_mw: float) -> np.ndarray:
    """Hardening-bound SINR per UE from stacked realizations.

    h and w are (n, M, K); expectations are sample means over axis 0.
    """
    x = np.einsum("nmk,nmi->nki", h.conj(), w)  # x[t, k, i] = h_k^H w_i
    sig = x.mean(axis=0)
    pw = (np.abs(x) ** 2).mean(axis=0)
    num = np.abs(np.diagonal(sig)) ** 2
    den = pw.sum(axis=1) - num + noise_mw
    return num / den


def downlink_se(
    gains: GainTable,
    assignment: ServingAssignment,
    frame: FrameParams,
    radio: RadioParams,
    rng,
) -> SeResult:
    """Hardening-bound downlink SE per UE for one drop.

    Fresh fading, estimates, and precoders are drawn for each of the
    frame.n_fading realizations; all expectations are sample averages over
    that set (including the per-entry precoder power normalization). UEs
    whose serving set has no finite-SNR AP come out at SE exactly 0.
    """
    g = gains.linear_gains()
    m, k = g.shape
    tau_p = frame.tau_p if frame.tau_p is not None else k
    if tau_p < k:
        raise ValueError(
            f"tau_p={tau_p} below UE count {k} would require pilot reuse (unsupported)"
        )
    if tau_p > frame.tau_c:
        raise ValueError("tau_p cannot exceed tau_c")
    prelog = 1.0 - tau_p / frame.tau_c

    p_mw = dbm_to_mw(radio.tx_power)
    n0 = dbm_to_mw(radio.noise_dbm)
    pilot_dbm = (
        frame.pilot_power_dbm if frame.pilot_power_dbm is not None else radio.tx_power
    )
    c = dbm_to_mw(pilot_dbm) * tau_p

    loads = ap_load(assignment)
    h = _draw_fading(g, rng, frame.n_fading)
    hhat, err_var = _estimate(h, g, c, n0, rng)
    w = mmse_precoders(hhat, err_var, assignment, loads, p_mw, n0)
    sinr = hardening_sinr(h, w, n0)
    se = prelog * np.log2(1.0 + sinr)
    return SeResult(
        se_per_ue=se,
        sinr_per_ue=sinr,
        serving_size_per_ue=assignment.serving_sizes,
    )
