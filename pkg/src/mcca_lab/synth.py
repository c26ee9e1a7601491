"""Synthetic multi-view data with known shared latents.

Latents are smoothed white noise (moving average over ``smoothing``
samples), then jointly whitened so they are exactly zero-mean, unit
variance and mutually uncorrelated in-sample.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ViewCollection, ViewMatrix
from .errors import InvalidConfigError

MIXINGS = ("linear", "cubic", "tanh")


@dataclass(frozen=True)
class SynthConfig:
    num_views: int = 6
    channels_per_view: int | tuple = 8
    samples: int = 10_000
    latent_dim: int = 1
    snr_db: float = 0.0
    mixing: str = "linear"
    seed: int = 0
    smoothing: int = 8
    sample_rate_hz: float = 64.0
    stimulus_lag: int = 8

    def __post_init__(self):
        if self.num_views < 1:
            raise InvalidConfigError(f"num_views must be positive, got {self.num_views}")
        dims = self.view_dims
        if len(dims) != self.num_views or min(dims) < 1:
            raise InvalidConfigError(f"channels_per_view {self.channels_per_view} does not give "
                                     f"{self.num_views} positive channel counts")
        if self.samples < 2:
            raise InvalidConfigError(f"samples must be at least 2, got {self.samples}")
        if not 1 <= self.latent_dim <= min(dims):
            raise InvalidConfigError(f"latent_dim must lie in [1, {min(dims)}], got {self.latent_dim}")
        if self.mixing not in MIXINGS:
            raise InvalidConfigError(f"mixing must be one of {MIXINGS}, got {self.mixing!r}")
        if math.isnan(self.snr_db):
            raise InvalidConfigError("snr_db must not be NaN")
        if self.smoothing < 1 or self.stimulus_lag < 0:
            raise InvalidConfigError("smoothing must be >= 1 and stimulus_lag >= 0")

    @property
    def view_dims(self) -> list[int]:
        if isinstance(self.channels_per_view, (tuple, list)):
            return [int(d) for d in self.channels_per_view]
        return [int(self.channels_per_view)] * self.num_views


@dataclass
class GroundTruth:
    latents: np.ndarray
    mixing_matrices: list
    noise: list
    sources: list = field(default_factory=list)
    oracle_projections: list = field(default_factory=list)
    mixing: str = "linear"


def apply_mixing(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "linear":
        return x
    if kind == "cubic":
        return x + 0.3 * x**3
    if kind == "tanh":
        return np.tanh(2.0 * x)
    raise InvalidConfigError(f"unknown mixing {kind!r}")


def smooth_noise(rng: np.random.Generator, T: int, k: int, window: int) -> np.ndarray:
    raw = rng.standard_normal((T + window - 1, k))
    csum = np.vstack([np.zeros((1, k)), np.cumsum(raw, axis=0)])
    return (csum[window:] - csum[:-window]) / window


def whiten(x: np.ndarray) -> np.ndarray:
    """Symmetric whitening: zero mean, identity sample covariance (ddof=1)."""
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    return xc @ (evecs / np.sqrt(evals)) @ evecs.T


def gram_schmidt(x: np.ndarray) -> np.ndarray:
    """Whiten columns in order, so column 0 keeps its direction exactly."""
    xc = x - x.mean(axis=0)
    q, r = np.linalg.qr(xc)
    q = q * np.sign(np.diag(r))
    return q * np.sqrt(len(x) - 1)


def random_mixing(rng: np.random.Generator, rows: int, cols: int, max_cond: float = 1e3) -> np.ndarray:
    while True:
        M = rng.standard_normal((rows, cols))
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] > 0 and s[0] / s[-1] < max_cond:
            return M


def _power(x: np.ndarray) -> float:
    xc = x - x.mean(axis=0)
    return float(np.sum(xc * xc))


def generate(cfg: SynthConfig) -> tuple[ViewCollection, GroundTruth]:
    """Views sharing ``latent_dim`` latents, each with white noise at ``snr_db``.

    View ``n`` is ``mixing(latents @ M_n) + noise_n`` and the noise is scaled
    so that the view's total signal-to-noise power ratio is exactly
    ``snr_db``.  ``+inf`` means no noise, ``-inf`` means noise only.
    """
    rng = np.random.default_rng(cfg.seed)
    T = cfg.samples
    latents = whiten(smooth_noise(rng, T, cfg.latent_dim, cfg.smoothing))
    views, mixes, noises, oracles = [], [], [], []
    for n, d in enumerate(cfg.view_dims):
        M = random_mixing(rng, cfg.latent_dim, d)
        signal = apply_mixing(latents @ M, cfg.mixing)
        white = rng.standard_normal((T, d))
        if cfg.snr_db == math.inf:
            noise = np.zeros((T, d))
        elif cfg.snr_db == -math.inf:
            signal = np.zeros((T, d))
            noise = white
        else:
            ratio = 10.0 ** (-cfg.snr_db / 10.0)
            noise = white * np.sqrt(ratio * _power(signal) / _power(white))
        views.append(ViewMatrix(signal + noise, view_id=n, sample_rate_hz=cfg.sample_rate_hz))
        mixes.append(M)
        noises.append(noise)
        # matched filter for the first latent under white noise
        oracles.append(M[0] / np.dot(M[0], M[0]))
    truth = GroundTruth(latents, mixes, noises, oracle_projections=oracles, mixing=cfg.mixing)
    return ViewCollection(tuple(views)), truth


def measured_snr_db(view: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(_power(view - noise) / _power(noise))


def oracle_isc_target(cfg: SynthConfig, truth: GroundTruth) -> float:
    """ISC of the matched-filter projections, in closed form.

    With ``w_n = m_n / |m_n|^2`` each projection is ``latent + e_n`` where
    ``e_n`` has variance ``sigma_n^2 / |m_n|^2``; hence
    ``ISC = N / sum_n (1 + sigma_n^2 / |m_n|^2)``.  Linear mixing with a
    single latent only.
    """
    if cfg.mixing != "linear" or cfg.latent_dim != 1:
        raise InvalidConfigError("closed-form ISC target needs linear mixing and latent_dim = 1")
    N = len(truth.mixing_matrices)
    total = 0.0
    for M, noise in zip(truth.mixing_matrices, truth.noise):
        m = M[0]
        sigma2 = _power(noise) / ((len(noise) - 1) * len(m))
        total += 1.0 + sigma2 / np.dot(m, m)
    return N / total


def generate_stimulus_response(cfg: SynthConfig, planted_corr: float
                               ) -> tuple[ViewMatrix, ViewCollection, GroundTruth]:
    """A 1-D stimulus envelope and ``num_views`` responses to it.

    The driven latent is the envelope delayed by ``cfg.stimulus_lag``
    samples.  Response ``n`` mixes ``d_n`` sources through a random square
    ``M_n``: source 0 is ``planted_corr * latent + sqrt(1 - planted_corr^2) *
    noise_n`` and the rest are subject-specific nuisance.  All sources of a
    view are whitened jointly with the latent (latent first), so source 0
    has correlation exactly ``planted_corr`` with the latent and, under
    linear mixing, is also the best linear 1-D projection of the response.
    ``snr_db`` and ``latent_dim`` are not used here.
    """
    if not 0 <= planted_corr < 1:
        raise InvalidConfigError(f"planted_corr must lie in [0, 1), got {planted_corr}")
    rng = np.random.default_rng(cfg.seed)
    T, lag = cfg.samples, cfg.stimulus_lag
    base = smooth_noise(rng, T + lag, 1, cfg.smoothing)[:, 0]
    envelope = base[lag:]
    driven = base[:T]
    latent = gram_schmidt(driven[:, None])[:, 0]
    a, b = planted_corr, math.sqrt(1.0 - planted_corr**2)

    responses, mixes, noises, sources, oracles = [], [], [], [], []
    for n, d in enumerate(cfg.view_dims):
        raw = smooth_noise(rng, T, d, cfg.smoothing)
        basis = gram_schmidt(np.column_stack([latent, raw]))
        noise = basis[:, 1]
        src = np.column_stack([a * basis[:, 0] + b * noise, basis[:, 2:]])
        M = random_mixing(rng, d, d)
        x = apply_mixing(src @ M, cfg.mixing)
        responses.append(ViewMatrix(x, view_id=n, sample_rate_hz=cfg.sample_rate_hz))
        mixes.append(M)
        noises.append(noise)
        sources.append(src)
        oracles.append(np.linalg.inv(M)[:, 0])
    stimulus = ViewMatrix(envelope, view_id=len(responses), sample_rate_hz=cfg.sample_rate_hz)
    truth = GroundTruth(latent[:, None], mixes, noises, sources, oracles, cfg.mixing)
    return stimulus, ViewCollection(tuple(responses)), truth


def latent_recovery(components: np.ndarray, latents: np.ndarray) -> float:
    """Mean over latents of the multiple correlation with ``components``.

    Invariant to any invertible linear recombination of the components.
    """
    C = np.asarray(components, dtype=np.float64)
    L = np.asarray(latents, dtype=np.float64)
    C = (C - C.mean(axis=0)).reshape(len(C), -1)
    L = (L - L.mean(axis=0)).reshape(len(L), -1)
    coef, *_ = np.linalg.lstsq(C, L, rcond=None)
    fitted = C @ coef
    r2 = np.sum(fitted * fitted, axis=0) / np.sum(L * L, axis=0)
    return float(np.mean(np.sqrt(np.clip(r2, 0.0, 1.0))))


def best_linear_correlation(x: np.ndarray, target: np.ndarray) -> float:
    return latent_recovery(x, target)
