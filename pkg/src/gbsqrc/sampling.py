"""Finite-frame camera acquisition: sampling, detector imperfections, erasure.

Three simulation routes produce the per-sample measurement record:

* ``exact_small`` draws joint photon numbers from the truncated-Fock joint
  distribution (up to 4 modes, any Gaussian source).
* ``classical_mixture`` draws per-frame coherent amplitudes from the source's
  classical P-distribution, propagates them through the unitary and loss, and
  draws independent Poisson counts per pixel.  Squeezed light has no classical
  P-distribution and is rejected.
* ``estimator_asymptotic`` skips frames entirely and draws the estimated
  moments from their asymptotic sampling distribution (normal mean, Wishart
  covariance with ``F - 1`` degrees of freedom).

Frames are real-valued (post gain-division estimates); optional Gaussian
readout noise is added per pixel.

Binary frame cache layout (little-endian): three ``uint64`` header words
``(n_frames, n_pixels, seed)`` followed by ``n_frames * n_pixels`` float64
counts in row-major (frame-by-frame) order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import fock_joint_distribution, sample_joint_counts
from .gaussian import GaussianState, SupercontinuumSource, check_unitary, propagated_moments

DEFAULT_PIXELS = 512
FRAME_MAGIC_DTYPE = np.dtype("<u8")


@dataclass(frozen=True)
class DetectionModel:
    """Camera model: pixel count, per-pixel efficiency, readout noise."""

    pixels: int = DEFAULT_PIXELS
    efficiency: float | tuple = 1.0
    readout_std: float = 0.05

    def __post_init__(self):
        if self.pixels < 1:
            raise ValueError("pixel count must be >= 1")
        if self.readout_std < 0:
            raise ValueError("readout noise std must be >= 0")
        eta = self.efficiency_vector()
        if np.any(eta < 0) or np.any(eta > 1):
            raise ValueError("pixel efficiencies must lie in [0, 1]")

    def efficiency_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.efficiency, dtype=float), (self.pixels,)).copy()

    def mode_pixels(self, modes: int) -> np.ndarray:
        """Mode-to-pixel map: modes land on the central pixels, in order."""
        if modes > self.pixels:
            raise ValueError(f"{modes} modes do not fit on {self.pixels} pixels")
        offset = (self.pixels - modes) // 2
        return np.arange(offset, offset + modes)


@dataclass(frozen=True)
class FrameSet:
    """Per-frame, per-pixel photon counts for one dataset sample."""

    frames: np.ndarray
    seed: int

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 2 or frames.shape[0] < 2:
            raise ValueError("frames must be an (F, P) array with F >= 2")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frame counts must be finite")
        frames = frames.copy()
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.frames.shape[1]


def pixel_moments(source, unitary, loss, det: DetectionModel):
    """Analytic pixel-level photon moments after propagation and detection.

    Detector efficiency composes with the reservoir loss at the mode level;
    readout noise adds its variance to the diagonal.  Pixels that carry no
    mode see only readout noise.
    """
    modes = source.modes
    pix = det.mode_pixels(modes)
    eta_det = det.efficiency_vector()[pix]
    eta = eta_det if loss is None else np.broadcast_to(np.asarray(loss, float), (modes,)) * eta_det
    mu_m, sigma_m = propagated_moments(source, unitary, eta)
    mu = np.zeros(det.pixels)
    sigma = np.zeros((det.pixels, det.pixels))
    mu[pix] = mu_m
    sigma[np.ix_(pix, pix)] = sigma_m
    sigma[np.diag_indices_from(sigma)] += det.readout_std**2
    return mu, sigma


def _classical_amplitudes(source, n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Per-frame input amplitudes from the source's classical P-distribution."""
    m = source.modes
    if isinstance(source, SupercontinuumSource):
        if source.g > 0:
            s = rng.gamma(shape=1.0 / source.g, scale=source.g, size=n_frames)
        else:
            s = np.ones(n_frames)
        return np.sqrt(s)[:, None] * source.alpha[None, :]
    if isinstance(source, GaussianState):
        nbar = np.real(np.diag(source.n_mat))
        diag_n = np.abs(source.n_mat - np.diag(np.diag(source.n_mat))).max() < 1e-12
        if np.abs(source.m_mat).max() < 1e-12 and diag_n:
            amps = np.broadcast_to(source.alpha, (n_frames, m)).copy()
            if nbar.max() > 0:
                z = rng.standard_normal((n_frames, m)) + 1j * rng.standard_normal((n_frames, m))
                amps = amps + z * np.sqrt(nbar / 2)[None, :]
            return amps
        raise ValueError(
            "classical_mixture requires a P-representable source "
            "(coherent, thermal, or supercontinuum); use exact_small (M <= 4) "
            "or estimator_asymptotic for squeezed light"
        )
    raise TypeError(f"unsupported source type {type(source).__name__}")


def sample_frames(
    source,
    unitary,
    loss,
    det: DetectionModel,
    n_frames: int,
    mode: str,
    seed: int,
) -> FrameSet:
    """Simulate ``n_frames`` camera frames for one propagated source.

    ``mode`` is ``"exact_small"`` or ``"classical_mixture"``; the frame-free
    ``"estimator_asymptotic"`` route lives in :func:`asymptotic_estimate`.
    """
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    rng = np.random.default_rng(seed)
    modes = source.modes
    pix = det.mode_pixels(modes)
    eta_det = det.efficiency_vector()[pix]
    eta = eta_det if loss is None else np.broadcast_to(np.asarray(loss, float), (modes,)) * eta_det

    if mode == "classical_mixture":
        amps = _classical_amplitudes(source, n_frames, rng)
        if unitary is not None:
            amps = amps @ check_unitary(unitary).T
        rates = np.abs(amps) ** 2 * eta[None, :]
        counts = rng.poisson(rates).astype(float)
    elif mode == "exact_small":
        if modes > 4:
            raise ValueError(
                "exact_small supports at most 4 modes; use classical_mixture "
                "(classical sources) or estimator_asymptotic"
            )
        kwargs = _fock_source_kwargs(source)
        p, _ = fock_joint_distribution(unitary=unitary, loss=eta, **kwargs)
        counts = sample_joint_counts(p, n_frames, rng)
    elif mode == "estimator_asymptotic":
        raise ValueError(
            "estimator_asymptotic produces no frames; call asymptotic_estimate"
        )
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")

    frames = np.zeros((n_frames, det.pixels))
    frames[:, pix] = counts
    if det.readout_std > 0:
        frames += rng.normal(0.0, det.readout_std, size=frames.shape)
    return FrameSet(frames=frames, seed=seed)


def _fock_source_kwargs(source) -> dict:
    if isinstance(source, GaussianState):
        nbar = np.real(np.diag(source.n_mat))
        m_diag = np.diag(source.m_mat)
        off_n = np.abs(source.n_mat - np.diag(np.diag(source.n_mat))).max()
        off_m = np.abs(source.m_mat - np.diag(m_diag)).max()
        if off_n > 1e-12 or off_m > 1e-12:
            raise ValueError("exact_small requires an unmixed (product) source state")
        if np.abs(m_diag).max() < 1e-12:
            if nbar.max() > 1e-12:
                return {"nbar": nbar, "alpha": source.alpha}
            return {"alpha": source.alpha}
        # recover r from n = sinh^2 r on the squeezed diagonal
        r = np.arcsinh(np.sqrt(nbar))
        if np.abs(m_diag + np.sinh(r) * np.cosh(r)).max() > 1e-9:
            raise ValueError(
                "exact_small supports squeezed sources in the package phase "
                "convention (m_mat diagonal negative real) only"
            )
        return {"squeeze_r": r, "alpha": source.alpha}
    raise ValueError("exact_small requires a Gaussian source state")


def asymptotic_estimate(mu, sigma, n_frames: int, rng: np.random.Generator):
    """Draw ``(mu_hat, sigma_hat)`` from the estimators' asymptotic distribution.

    ``mu_hat ~ Normal(mu, sigma / F)`` and ``sigma_hat = W / (F - 1)`` with
    ``W ~ Wishart(sigma, F - 1)``, realized through a factor of the positive
    part of ``sigma``.
    """
    if n_frames < 2:
        raise ValueError("need at least 2 frames")
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    w, v = np.linalg.eigh((sigma + sigma.T) / 2)
    keep = w > max(w.max(), 0.0) * 1e-14
    factor = v[:, keep] * np.sqrt(w[keep])
    rank = factor.shape[1]
    mu_hat = mu + factor @ rng.standard_normal(rank) / np.sqrt(n_frames)
    z = rng.standard_normal((rank, n_frames - 1))
    g = factor @ z
    sigma_hat = g @ g.T / (n_frames - 1)
    return mu_hat, sigma_hat


def erase_pixels_poisson(fs: FrameSet, window, seed: int) -> FrameSet:
    """Replace the windowed pixels, per frame, by Poisson draws at their mean.

    Per-pixel means are preserved in expectation while every cross-pixel
    correlation involving the window is destroyed.  An empty window is a no-op.
    """
    window = np.asarray(window, dtype=int)
    if window.size == 0:
        return fs
    if window.min() < 0 or window.max() >= fs.n_pixels:
        raise ValueError("window indices outside the pixel range")
    rng = np.random.default_rng(seed)
    means = np.maximum(fs.frames[:, window].mean(axis=0), 0.0)
    frames = fs.frames.copy()
    frames[:, window] = rng.poisson(
        np.broadcast_to(means, (fs.n_frames, window.size))
    ).astype(float)
    return FrameSet(frames=frames, seed=fs.seed)


def restrict_wavelengths(fs: FrameSet, keep, seed: int) -> FrameSet:
    """Keep only the listed pixels informative; Poisson-randomize the rest.

    Output dimensionality is unchanged, so downstream feature shapes stay
    fixed across a mode sweep.
    """
    keep = np.asarray(keep, dtype=int)
    mask = np.ones(fs.n_pixels, dtype=bool)
    mask[keep] = False
    return erase_pixels_poisson(fs, np.nonzero(mask)[0], seed)


def erase_features_poisson(mu_hat, sigma_hat, erase, n_frames: int, rng):
    """Estimator-level mirror of :func:`erase_pixels_poisson`.

    For runs in ``estimator_asymptotic`` mode there are no frames to
    randomize, so the erased pixels' estimated moments are redrawn with the
    statistics a Poisson-randomized pixel would produce: mean kept up to
    estimator noise, diagonal at the Poisson variance, correlations replaced
    by zero-mean estimator noise.
    """
    erase = np.asarray(erase, dtype=int)
    mu_hat = np.asarray(mu_hat, dtype=float).copy()
    sigma_hat = np.asarray(sigma_hat, dtype=float).copy()
    if erase.size == 0:
        return mu_hat, sigma_hat
    lam = np.maximum(mu_hat[erase], 0.0)
    mu_hat[erase] = lam + rng.standard_normal(erase.size) * np.sqrt(lam / n_frames)
    var_diag = np.maximum(np.diag(sigma_hat), 0.0)
    noise = rng.standard_normal((erase.size, sigma_hat.shape[0]))
    cross = noise * np.sqrt(np.outer(lam, var_diag) / n_frames)
    sigma_hat[erase, :] = cross
    sigma_hat[:, erase] = cross.T
    # erased-block entries, then the Poisson diagonal with chi^2 spread
    block = rng.standard_normal((erase.size, erase.size))
    block = block * np.sqrt(np.outer(lam, lam) / n_frames)
    sigma_hat[np.ix_(erase, erase)] = (block + block.T) / 2
    chi2 = rng.chisquare(n_frames - 1, size=erase.size) / (n_frames - 1)
    sigma_hat[erase, erase] = lam * chi2
    return mu_hat, sigma_hat


def total_counts(fs: FrameSet) -> float:
    """Sum of all counts over frames and pixels."""
    return float(fs.frames.sum())


def save_frames(path, fs: FrameSet) -> None:
    with open(path, "wb") as fh:
        np.array([fs.n_frames, fs.n_pixels, fs.seed], dtype=FRAME_MAGIC_DTYPE).tofile(fh)
        fs.frames.astype("<f8").tofile(fh)


def load_frames(path) -> FrameSet:
    with open(path, "rb") as fh:
        header = np.fromfile(fh, dtype=FRAME_MAGIC_DTYPE, count=3)
        if header.size != 3:
            raise ValueError(f"{path}: truncated frame file header")
        n_frames, n_pixels, seed = (int(v) for v in header)
        data = np.fromfile(fh, dtype="<f8", count=n_frames * n_pixels)
    if data.size != n_frames * n_pixels:
        raise ValueError(f"{path}: truncated frame payload")
    return FrameSet(frames=data.reshape(n_frames, n_pixels), seed=seed)
