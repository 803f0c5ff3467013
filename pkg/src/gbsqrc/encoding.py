"""Feature-to-phase encoding and the programmable interferometer surrogate.

A feature vector is turned into a 1920-entry spectral phase pattern by a
generic, task-independent pipeline (replication over contiguous pixels,
transmissivity compensation, Gaussian smoothing, fixed quadratic chirp).  The
data-dependent passive unitary is synthesized as alternating fixed Haar-random
mixing layers and diagonal phase layers read off the pattern, which is the
canonical surrogate for a pump-programmable frequency-converter.

The compensation curve, smoothing width and chirp are global constants across
all tasks; only the feature count (and hence the replication factor) changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .gaussian import haar_unitary

SLM_PIXELS = 1920
DEFAULT_WINDOW = (560, 1360)  # pump support, ~40% of the pixel row
DEFAULT_SMOOTHING_SIGMA = 8.0
DEFAULT_SCALE = math.pi  # with inputs normalized to [0, 1] the feature phase stays <= pi
# the fixed chirp accumulates 20*pi from the window center to its edge
DEFAULT_CHIRP = 20.0 * math.pi / ((DEFAULT_WINDOW[1] - DEFAULT_WINDOW[0]) / 2) ** 2
COMPENSATION_FLOOR = 0.5


def raised_cosine_compensation(
    pixels: int = SLM_PIXELS, floor: float = COMPENSATION_FLOOR
) -> np.ndarray:
    """Transmissivity compensation: peaks at the center pixel, ``floor`` at the edges."""
    k = np.arange(pixels)
    u = (k - (pixels - 1) / 2) / ((pixels - 1) / 2)
    return floor + (1.0 - floor) * np.cos(np.pi * u / 2) ** 2


@dataclass(frozen=True)
class EncoderConfig:
    """Static parameters of the feature-to-phase encoding."""

    n_features: int
    pixels: int = SLM_PIXELS
    smoothing_sigma: float = DEFAULT_SMOOTHING_SIGMA
    chirp: float = DEFAULT_CHIRP
    scale: float = DEFAULT_SCALE
    window: tuple[int, int] = DEFAULT_WINDOW
    compensation: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_features < 1 or self.n_features > self.pixels:
            raise ValueError("need 1 <= n_features <= pixels")
        lo, hi = self.window
        if not (0 <= lo <= hi <= self.pixels):
            raise ValueError(f"window {self.window} not within [0, {self.pixels}]")
        comp = self.compensation
        if comp is None:
            comp = raised_cosine_compensation(self.pixels)
        comp = np.asarray(comp, dtype=float)
        if comp.shape != (self.pixels,):
            raise ValueError("compensation vector length must equal the pixel count")
        if np.any(comp <= 0) or np.any(comp > 1):
            raise ValueError("compensation entries must lie in (0, 1]")
        comp = comp.copy()
        comp.flags.writeable = False
        object.__setattr__(self, "compensation", comp)

    @property
    def pixels_per_feature(self) -> int:
        return self.pixels // self.n_features

    @property
    def window_center(self) -> float:
        return (self.window[0] + self.window[1]) / 2


def encode_features(x, cfg: EncoderConfig) -> np.ndarray:
    """Spectral phase pattern (radians, length ``cfg.pixels``) for one sample.

    Pipeline: replicate each feature over ``pixels_per_feature`` contiguous
    pixels (trailing pixels repeat the last feature), multiply by the
    compensation curve, Gaussian-smooth, scale to radians, then add the fixed
    chirp.  The scale applies to the feature part only so that the chirp stays
    identical across tasks.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.n_features,):
        raise ValueError(f"expected {cfg.n_features} features, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    p = cfg.pixels_per_feature
    pattern = np.repeat(x, p)
    pad = cfg.pixels - pattern.shape[0]
    if pad:
        pattern = np.concatenate([pattern, np.full(pad, x[-1])])
    pattern = pattern * cfg.compensation
    if cfg.smoothing_sigma > 0:
        pattern = gaussian_filter1d(pattern, cfg.smoothing_sigma, mode="nearest")
    k = np.arange(cfg.pixels)
    return cfg.scale * pattern + cfg.chirp * (k - cfg.window_center) ** 2


def effective_mode_count(cfg: EncoderConfig, control_bins: int | None = None) -> int:
    """Number of independently controllable phase bins inside the pump window.

    The bin granularity defaults to the smoothing width (a feature finer than
    the Gaussian kernel is not independently controllable); pass
    ``control_bins`` to count with an explicit bin grid instead.
    """
    if control_bins is None:
        control_bins = int(round(cfg.pixels / cfg.smoothing_sigma))
    width = cfg.pixels / control_bins
    lo, hi = cfg.window
    first = math.ceil(lo / width)
    last = math.floor(hi / width)
    return max(last - first, 0)


@dataclass(frozen=True)
class ReservoirConfig:
    """Fixed (untrained) structure of the optical reservoir surrogate."""

    modes: int
    layers: int = 2
    mixer_seed: int = 0
    loss: float | tuple = 0.6

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("modes must be >= 1")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    def loss_vector(self) -> np.ndarray:
        eta = np.broadcast_to(np.asarray(self.loss, dtype=float), (self.modes,))
        if np.any(eta < 0) or np.any(eta > 1):
            raise ValueError("loss transmissivities must lie in [0, 1]")
        return eta.copy()


def mixer_unitaries(rc: ReservoirConfig) -> list[np.ndarray]:
    """The ``layers + 1`` fixed Haar-random mixing unitaries, seeded per layer."""
    return [
        haar_unitary(rc.modes, np.random.default_rng([rc.mixer_seed, layer]))
        for layer in range(rc.layers + 1)
    ]


def phase_bins(mask: np.ndarray, cfg: EncoderConfig, modes: int) -> np.ndarray:
    """Downsample a phase pattern to per-mode phases: mean over equal window bins."""
    lo, hi = cfg.window
    if hi - lo < modes:
        raise ValueError(f"window of {hi - lo} pixels cannot carry {modes} phase bins")
    edges = lo + np.round(np.arange(modes + 1) * (hi - lo) / modes).astype(int)
    return np.array([mask[edges[j] : edges[j + 1]].mean() for j in range(modes)])


def build_unitary(mask: np.ndarray, cfg: EncoderConfig, rc: ReservoirConfig) -> np.ndarray:
    """Data-dependent reservoir unitary: alternating mixers and phase layers.

    ``U = W_{L+1} prod_{k=L..1} [diag(exp(i phi)) W_k]`` with ``phi`` the mask
    downsampled to ``rc.modes`` bins; the same phases enter every layer.
    """
    phis = phase_bins(np.asarray(mask, dtype=float), cfg, rc.modes)
    mixers = mixer_unitaries(rc)
    diag = np.exp(1j * phis)[:, None]
    u = mixers[0]
    for k in range(1, rc.layers + 1):
        u = mixers[k] @ (diag * u)
    return u
