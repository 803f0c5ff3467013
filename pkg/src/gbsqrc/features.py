"""From frames to classifier inputs: moment estimation, selection, scaling, PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sampling import FrameSet


@dataclass(frozen=True)
class ReservoirFeatures:
    """Estimated mean-field vector and photon-number covariance of one sample."""

    mu: np.ndarray
    sigma: np.ndarray

    def covariance_vector(self) -> np.ndarray:
        """Row-major flattening of the covariance matrix."""
        return self.sigma.reshape(-1)


def estimate_features(fs: FrameSet) -> ReservoirFeatures:
    """Sample mean and unbiased (F - 1 divisor) sample covariance over frames."""
    if fs.n_frames < 2:
        raise ValueError("need at least 2 frames to estimate a covariance")
    mu = fs.frames.mean(axis=0)
    centered = fs.frames - mu
    sigma = centered.T @ centered / (fs.n_frames - 1)
    return ReservoirFeatures(mu=mu, sigma=(sigma + sigma.T) / 2)


def anova_f_scores(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """One-way ANOVA F statistic per feature column.

    Between-class mean square over within-class mean square.  A feature with
    zero within-class variance but distinct class means scores ``inf``; an
    all-constant feature scores 0.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    n, _ = x.shape
    if classes.size < 2:
        raise ValueError("need at least 2 classes")
    if n < classes.size:
        raise ValueError("need at least one sample per class")
    grand = x.mean(axis=0)
    ss_between = np.zeros(x.shape[1])
    ss_within = np.zeros(x.shape[1])
    for c in classes:
        xc = x[labels == c]
        mean_c = xc.mean(axis=0)
        ss_between += xc.shape[0] * (mean_c - grand) ** 2
        ss_within += ((xc - mean_c) ** 2).sum(axis=0)
    ms_between = ss_between / (classes.size - 1)
    ms_within = ss_within / (n - classes.size)
    scores = np.zeros(x.shape[1])
    live = ms_within > 0
    scores[live] = ms_between[live] / ms_within[live]
    scores[~live & (ms_between > 0)] = np.inf
    return scores


@dataclass(frozen=True)
class SelectionMask:
    """Sorted indices of the retained features plus the full score vector."""

    indices: np.ndarray
    f_scores: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.size

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[:, self.indices]


def anova_select(x: np.ndarray, labels: np.ndarray, k: int) -> SelectionMask:
    """Keep the ``k`` features with the largest F scores (ties to lower index)."""
    scores = anova_f_scores(x, labels)
    if not 1 <= k <= scores.size:
        raise ValueError(f"k must be in [1, {scores.size}]")
    order = np.lexsort((np.arange(scores.size), -scores))
    return SelectionMask(indices=np.sort(order[:k]), f_scores=scores)


def choose_k(x_train, y_train, x_val, y_val, candidates, train_fn) -> int:
    """Pick the selection size with the best validation accuracy (ties: smaller k).

    ``train_fn(x, y)`` must return a model with a matching ``predict`` through
    :func:`gbsqrc.classifiers.predict`; accuracy is evaluated on the held-out
    validation split.
    """
    from .classifiers import predict

    candidates = sorted(set(int(k) for k in candidates))
    if not candidates:
        raise ValueError("empty candidate grid")
    best_k, best_acc = None, -1.0
    scores = anova_f_scores(x_train, y_train)
    order = np.lexsort((np.arange(scores.size), -scores))
    for k in candidates:
        idx = np.sort(order[:k])
        model = train_fn(x_train[:, idx], y_train)
        acc = float(np.mean(predict(model, x_val[:, idx]) == y_val))
        if acc > best_acc:
            best_k, best_acc = k, acc
    return best_k


class Standardizer:
    """Per-feature zero mean, unit variance fit on the training split only.

    Zero-variance features map to exactly 0 so that degenerate columns never
    produce NaNs downstream.
    """

    def __init__(self):
        self.mean_ = None
        self.scale_ = None

    def fit(self, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=float)
        if x.shape[0] < 2:
            raise ValueError("need at least 2 samples to standardize")
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        std[std == 0] = 1.0
        self.scale_ = std
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.mean_ is None:
            raise RuntimeError("standardizer is not fitted")
        return (np.asarray(x, dtype=float) - self.mean_) / self.scale_

    def fit_transform(self, x: np.ndarray) -> np.ndarray:
        return self.fit(x).transform(x)


@dataclass(frozen=True)
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (k, D), orthonormal rows
    singular_values: np.ndarray
    projected: np.ndarray  # (n, k)
    explained_variance_ratio: np.ndarray

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) @ self.components.T

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean


def pca(x: np.ndarray, n_components: int) -> PCAResult:
    """Centered SVD with components sorted by non-increasing singular value."""
    x = np.asarray(x, dtype=float)
    n, d = x.shape
    if not 1 <= n_components <= min(n, d):
        raise ValueError(f"n_components must be in [1, {min(n, d)}]")
    mean = x.mean(axis=0)
    u, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    var = s**2
    ratio = var / var.sum() if var.sum() > 0 else np.zeros_like(var)
    return PCAResult(
        mean=mean,
        components=vt[:n_components],
        singular_values=s[:n_components],
        projected=u[:, :n_components] * s[:n_components],
        explained_variance_ratio=ratio[:n_components],
    )


def singular_value_report(matrices: dict, n_components: int) -> dict:
    """Per-source singular values (after standardization) and their means.

    Every source must contribute the same number of components so the spectra
    are comparable; the result is JSON-serializable for plotting.
    """
    report = {}
    for name, x in matrices.items():
        x = np.asarray(x, dtype=float)
        k = min(n_components, min(x.shape))
        if k < n_components:
            raise ValueError(f"source {name!r} supports only {k} components")
        scaled = Standardizer().fit_transform(x)
        res = pca(scaled, n_components)
        report[name] = {
            "singular_values": [float(v) for v in res.singular_values],
            "mean_singular_value": float(np.mean(res.singular_values)),
        }
    return report
