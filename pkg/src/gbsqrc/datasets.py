"""Benchmark datasets, stratified splitting and photon-budget calibration.

Four tasks: interleaved-arc "moons" (multiclass reconstruction of the classic
two-class generator), Gaussian "blobs", a 7-class/12-feature spoken-vowel
table loaded from CSV, and digit images loaded from IDX files and projected
onto principal components.  Generated data can be exported to CSV with
provenance comment lines; synthetic stand-ins for the vowel and digit corpora
are provided for offline runs and share the exact on-disk formats.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from . import features as _features
from .gaussian import (
    GaussianState,
    SupercontinuumSource,
    make_coherent,
    make_squeezed_vacuum,
    make_supercontinuum,
    make_thermal,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
VOWEL_CLASSES = 7
VOWEL_EXAMPLES_PER_CLASS = 37
VOWEL_FEATURES = 12


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels in [0, L) and generation provenance."""

    x: np.ndarray
    labels: np.ndarray
    name: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        labels = np.asarray(self.labels, dtype=int)
        if x.ndim != 2 or labels.shape != (x.shape[0],):
            raise ValueError("x must be (n, d) with one label per row")
        if not np.all(np.isfinite(x)):
            raise ValueError("dataset contains non-finite features")
        classes = np.unique(labels)
        if not np.array_equal(classes, np.arange(classes.size)):
            raise ValueError("labels must be consecutive integers starting at 0")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.x.tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()[:16]


def _balanced_counts(n: int, classes: int) -> np.ndarray:
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    return counts


def make_moons_multiclass(n: int, classes: int, noise: float = 0.1, seed: int = 0) -> Dataset:
    """Chain of interleaved unit-radius half-circle arcs, one per class.

    The classic two-moon pair extended periodically: class ``c`` is the arc of
    the unit circle centered at ``(c, 0.5 (c mod 2))``, opening downward for
    even ``c`` and upward for odd ``c``, plus isotropic Gaussian noise.  Each
    adjacent pair interleaves exactly like the familiar two moons, so classes
    are never linearly separable from their neighbors but stay disjoint at
    small noise.  ``L = 2`` recovers the standard shape.
    """
    if not 2 <= classes <= 6:
        raise ValueError("classes must be in 2..6")
    if n < 10 * classes:
        raise ValueError("need at least 10 samples per class")
    rng = np.random.default_rng(seed)
    centers = moon_arc_centers(classes)
    xs, ys = [], []
    for c, count in enumerate(_balanced_counts(n, classes)):
        t = rng.uniform(0.0, np.pi, count)
        if c % 2 == 0:
            arc = np.stack([np.cos(t), np.sin(t)], axis=1)
        else:
            arc = np.stack([-np.cos(t), -np.sin(t)], axis=1)
        pts = centers[c] + arc + noise * rng.standard_normal((count, 2))
        xs.append(pts)
        ys.append(np.full(count, c))
    ds = Dataset(
        x=np.vstack(xs), labels=np.concatenate(ys), name=f"moons{classes}",
        provenance={"generator": "moons", "n": n, "classes": classes,
                    "noise": noise, "seed": seed},
    )
    return ds


def moon_arc_centers(classes: int) -> np.ndarray:
    """Circle centers of the noiseless arcs (for residual checks)."""
    return np.array([[float(c), 0.5 * (c % 2)] for c in range(classes)])


def make_blobs(n: int, classes: int, cluster_std=1.0, box: float = 10.0,
               seed: int = 0) -> Dataset:
    """Isotropic Gaussian clusters at seeded-uniform centers in ``[-box, box]^2``.

    ``cluster_std`` may be a scalar or one value per class.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if n < 10 * classes:
        raise ValueError("need at least 10 samples per class")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-box, box, size=(classes, 2))
    stds = np.broadcast_to(np.asarray(cluster_std, dtype=float), (classes,))
    xs, ys = [], []
    for c, count in enumerate(_balanced_counts(n, classes)):
        xs.append(centers[c] + stds[c] * rng.standard_normal((count, 2)))
        ys.append(np.full(count, c))
    return Dataset(
        x=np.vstack(xs), labels=np.concatenate(ys), name=f"blobs{classes}",
        provenance={"generator": "blobs", "n": n, "classes": classes,
                    "cluster_std": list(map(float, stds)), "box": box, "seed": seed},
    )


def save_csv(path, ds: Dataset) -> None:
    """CSV export with provenance comment lines and a header row."""
    with open(path, "w") as fh:
        fh.write(f"# name: {ds.name}\n")
        for key, value in sorted(ds.provenance.items()):
            fh.write(f"# {key}: {value}\n")
        cols = [f"f{i + 1}" for i in range(ds.n_features)]
        fh.write(",".join(cols + ["label"]) + "\n")
        for row, label in zip(ds.x, ds.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{label}\n")


def load_csv(path, name: str | None = None) -> Dataset:
    """Load a feature CSV (comment lines, header, numeric columns + label)."""
    rows, labels = [], []
    header = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts[:-1]])
                labels.append(int(parts[-1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if header is None or not rows:
        raise ValueError(f"{path}: no data rows")
    labels = np.asarray(labels)
    # remap arbitrary label values onto 0..L-1, preserving sort order
    classes = np.unique(labels)
    remap = {c: i for i, c in enumerate(classes)}
    labels = np.array([remap[c] for c in labels])
    return Dataset(x=np.asarray(rows), labels=labels,
                   name=name or str(path), provenance={"path": str(path)})


def load_vowels(path) -> Dataset:
    """Load the 12-feature spoken-vowel table; per-feature ranges go to provenance."""
    import warnings

    ds = load_csv(path, name="vowels")
    if ds.n_features != VOWEL_FEATURES:
        raise ValueError(f"{path}: expected {VOWEL_FEATURES} feature columns, got {ds.n_features}")
    counts = np.bincount(ds.labels)
    if ds.n_classes != VOWEL_CLASSES or np.any(counts != VOWEL_EXAMPLES_PER_CLASS):
        warnings.warn(
            f"{path}: expected {VOWEL_CLASSES} classes x {VOWEL_EXAMPLES_PER_CLASS} "
            f"examples, got counts {counts.tolist()}; proceeding",
            stacklevel=2,
        )
    provenance = dict(ds.provenance)
    provenance["feature_min"] = ds.x.min(axis=0).tolist()
    provenance["feature_max"] = ds.x.max(axis=0).tolist()
    return Dataset(x=ds.x, labels=ds.labels, name="vowels", provenance=provenance)


def make_synthetic_vowels(seed: int = 0) -> Dataset:
    """Offline stand-in for the vowel corpus: 7 classes x 37 x 12 features.

    Formant-like class templates with small within-class spread; shaped so a
    linear classifier scores high but below 100%, like the real table.
    """
    rng = np.random.default_rng(seed)
    base = np.linspace(300.0, 3200.0, VOWEL_FEATURES)
    templates = base[None, :] * (1.0 + 0.22 * rng.standard_normal((VOWEL_CLASSES, VOWEL_FEATURES)))
    templates = np.abs(templates) + 50.0
    xs, ys = [], []
    for c in range(VOWEL_CLASSES):
        spread = 0.05 * templates[c]
        xs.append(templates[c] + spread * rng.standard_normal((VOWEL_EXAMPLES_PER_CLASS, VOWEL_FEATURES)))
        ys.append(np.full(VOWEL_EXAMPLES_PER_CLASS, c))
    return Dataset(
        x=np.vstack(xs), labels=np.concatenate(ys), name="vowels-synthetic",
        provenance={"generator": "synthetic-vowels", "seed": seed},
    )


def write_idx_images(path, images: np.ndarray) -> None:
    """Write uint8 images in the standard big-endian IDX3 layout."""
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(np.asarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.size))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise ValueError(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{path}: bad IDX image magic 0x{magic:08x}")
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != n * rows * cols:
        raise ValueError(f"{path}: truncated IDX image payload")
    return data.reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) != 8:
            raise ValueError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{path}: bad IDX label magic 0x{magic:08x}")
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != n:
        raise ValueError(f"{path}: truncated IDX label payload")
    return data.astype(int)


def load_mnist_pca(images_path, labels_path, per_class: int = 300,
                   components: int = 100, seed: int = 0) -> Dataset:
    """Digit images -> per-class subset -> PCA projection.

    The projection is fitted on the selected working subset (the data that
    actually enters the optical encoder), not on the full corpus.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError("image and label counts differ")
    rng = np.random.default_rng(seed)
    keep = []
    for digit in range(int(labels.max()) + 1):
        idx = np.flatnonzero(labels == digit)
        if idx.size < per_class:
            raise ValueError(f"digit {digit} has only {idx.size} samples, need {per_class}")
        keep.append(rng.choice(idx, size=per_class, replace=False))
    keep = np.concatenate(keep)
    flat = images[keep].reshape(keep.size, -1).astype(float) / 255.0
    res = _features.pca(flat, components)
    return Dataset(
        x=res.projected, labels=labels[keep], name="mnist-pca",
        provenance={"images": str(images_path), "labels": str(labels_path),
                    "per_class": per_class, "components": components, "seed": seed},
    )


_DIGIT_FONT = {
    0: ["###", "#.#", "#.#", "#.#", "###"],
    1: [".#.", "##.", ".#.", ".#.", "###"],
    2: ["###", "..#", "###", "#..", "###"],
    3: ["###", "..#", "###", "..#", "###"],
    4: ["#.#", "#.#", "###", "..#", "..#"],
    5: ["###", "#..", "###", "..#", "###"],
    6: ["###", "#..", "###", "#.#", "###"],
    7: ["###", "..#", ".#.", ".#.", ".#."],
    8: ["###", "#.#", "###", "#.#", "###"],
    9: ["###", "#.#", "###", "..#", "###"],
}


def make_synthetic_digit_images(per_class: int, seed: int = 0):
    """Glyph-rendered 28x28 digit images with jitter, scale and noise.

    A stand-in for the handwritten corpus that exercises the same IDX loaders
    and classification pipeline offline.
    """
    from scipy.ndimage import gaussian_filter, zoom

    rng = np.random.default_rng(seed)
    images = np.zeros((per_class * 10, 28, 28), dtype=np.uint8)
    labels = np.zeros(per_class * 10, dtype=np.uint8)
    pos = 0
    for digit in range(10):
        glyph = np.array(
            [[1.0 if ch == "#" else 0.0 for ch in row] for row in _DIGIT_FONT[digit]]
        )
        for _ in range(per_class):
            scale = rng.uniform(3.2, 4.4)
            img = zoom(glyph, scale, order=1)
            canvas = np.zeros((28, 28))
            dy = (28 - img.shape[0]) // 2 + rng.integers(-3, 4)
            dx = (28 - img.shape[1]) // 2 + rng.integers(-3, 4)
            y0, x0 = np.clip(dy, 0, 28 - img.shape[0]), np.clip(dx, 0, 28 - img.shape[1])
            canvas[y0 : y0 + img.shape[0], x0 : x0 + img.shape[1]] = img
            canvas = gaussian_filter(canvas, rng.uniform(0.4, 0.9))
            canvas += rng.normal(0, 0.04, canvas.shape)
            canvas = np.clip(canvas / max(canvas.max(), 1e-9), 0, 1)
            images[pos] = (canvas * 255).astype(np.uint8)
            labels[pos] = digit
            pos += 1
    order = rng.permutation(pos)
    return images[order], labels[order]


@dataclass(frozen=True)
class SplitSpec:
    """Stratified train/validation/test fractions plus the shuffle seed."""

    train: float
    test: float
    validation: float = 0.0
    seed: int = 0
    stratify: bool = True

    def __post_init__(self):
        total = self.train + self.validation + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {total}")
        if min(self.train, self.test) <= 0 or self.validation < 0:
            raise ValueError("train and test fractions must be positive")


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def _allocate(n: int, fractions: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of ``n`` items to the given fractions."""
    raw = fractions * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    return counts


def split(ds: Dataset, spec: SplitSpec) -> SplitIndices:
    """Stratified shuffle split; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    fractions = np.array([spec.train, spec.validation, spec.test])
    buckets = [[], [], []]
    if spec.stratify:
        for c in range(ds.n_classes):
            idx = np.flatnonzero(ds.labels == c)
            rng.shuffle(idx)
            counts = _allocate(idx.size, fractions)
            pos = 0
            for b in range(3):
                buckets[b].append(idx[pos : pos + counts[b]])
                pos += counts[b]
    else:
        idx = rng.permutation(ds.n_samples)
        counts = _allocate(idx.size, fractions)
        pos = 0
        for b in range(3):
            buckets[b].append(idx[pos : pos + counts[b]])
            pos += counts[b]
    parts = [np.sort(np.concatenate(b)) for b in buckets]
    train_classes = np.unique(ds.labels[parts[0]])
    if train_classes.size != ds.n_classes:
        raise ValueError("a class is absent from the training split")
    return SplitIndices(train=parts[0], validation=parts[1], test=parts[2])


def spectral_profile(modes: int, width_frac: float = 0.25) -> np.ndarray:
    """Relative per-mode occupation: a Gaussian bell over the mode index.

    Real broadband sources are brighter at band center than at the edges; a
    non-uniform spectrum also keeps the source's second moments sensitive to
    the reservoir unitary (a strictly flat spectrum commutes with it).
    """
    k = np.arange(modes)
    z = (k - (modes - 1) / 2) / max(width_frac * modes, 1e-12)
    return np.exp(-0.5 * z**2)


@dataclass(frozen=True)
class BudgetCalibration:
    """Per-source brightness so expected total detected photons match a target."""

    target_total: float
    frames: int
    occupations: np.ndarray  # per-mode source mean photon number (any kind)
    params: dict  # source kind -> brightness parameter vector
    expected_totals: dict

    def source(self, kind: str, modes: int, supercontinuum_g: float = 1.0):
        """Instantiate the calibrated source state for ``kind``."""
        value = self.params[kind]
        if kind == "squeezed":
            return make_squeezed_vacuum(value)
        if kind == "coherent":
            return make_coherent(value.astype(complex))
        if kind == "thermal":
            return make_thermal(value)
        if kind == "supercontinuum":
            return make_supercontinuum(value.astype(complex), supercontinuum_g)
        raise KeyError(kind)


def calibrate_budget(kinds, target_total: float, frames: int, modes: int,
                     loss_eta, r_max: float = 2.0, profile=None) -> BudgetCalibration:
    """Solve each source's brightness for a matched photon budget.

    The expected total detected photons per sample is
    ``frames * sum_i eta_i * n_i`` (passive unitaries conserve photon number),
    and every source follows the same spectral profile, so the per-mode
    occupations ``n_i`` are shared across kinds and solved in closed form.
    """
    if target_total <= 0:
        raise ValueError("target total must be > 0")
    eta = np.broadcast_to(np.asarray(loss_eta, dtype=float), (modes,))
    p = spectral_profile(modes) if profile is None else np.asarray(profile, dtype=float)
    occupations = p * (target_total / (frames * float(eta @ p)))
    params, totals = {}, {}
    for kind in kinds:
        if kind == "squeezed":
            r = np.arcsinh(np.sqrt(occupations))
            if r.max() > r_max:
                raise ValueError(
                    f"target needs squeezing r = {r.max():.3f} above the source "
                    f"cap r_max = {r_max}"
                )
            params[kind] = r
        elif kind in ("coherent", "supercontinuum"):
            params[kind] = np.sqrt(occupations)
        elif kind == "thermal":
            params[kind] = occupations.copy()
        else:
            raise KeyError(f"unknown source kind {kind!r}")
        totals[kind] = float(frames * eta @ occupations)
    return BudgetCalibration(
        target_total=target_total, frames=frames, occupations=occupations,
        params=params, expected_totals=totals,
    )
