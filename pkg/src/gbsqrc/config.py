"""Experiment configuration: dataclasses, YAML round-trip, seed derivation.

Every stochastic stage derives its generator from the master seed plus a
stage tag (and sample/repetition indices) through SHA-256, so results are
independent of execution order and worker count.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .encoding import DEFAULT_CHIRP, DEFAULT_SCALE, DEFAULT_SMOOTHING_SIGMA, DEFAULT_WINDOW

SOURCE_KINDS = ("squeezed", "coherent", "thermal", "supercontinuum")
FEATURE_KINDS = ("covariance", "mean_field", "raw")
SAMPLING_MODES = ("exact_small", "classical_mixture", "estimator_asymptotic")
CLASSIFIER_KINDS = ("svm", "ridge", "logistic", "pinv", "sgd")
SWEEP_AXES = ("classes", "frames", "modes", "power")


def derive_seed(master: int, *tags) -> int:
    """Deterministic 64-bit sub-seed from the master seed and stage tags."""
    h = hashlib.sha256(str(int(master)).encode())
    for tag in tags:
        h.update(b"|")
        h.update(str(tag).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(master: int, *tags) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *tags))


@dataclass
class DatasetConfig:
    task: str = "moons"  # moons | blobs | vowels | mnist
    n: int = 600
    classes: int = 4
    noise: float = 0.1  # moons arc noise
    cluster_std: float | list = 1.0  # blobs; scalar or per-class list
    box: float = 10.0
    path: str | None = None  # vowels CSV
    images_path: str | None = None  # digits IDX
    labels_path: str | None = None
    per_class: int = 300
    components: int = 100

    def __post_init__(self):
        if self.task not in ("moons", "blobs", "vowels", "mnist"):
            raise ValueError(f"unknown task {self.task!r}")


@dataclass
class SourceConfig:
    kind: str = "squeezed"
    target_total_photons: float | None = 1.76e5  # matched-budget calibration
    brightness: float | None = None  # explicit per-mode r / |alpha| / nbar instead
    supercontinuum_g: float = 1.0
    r_max: float = 2.0

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if (self.target_total_photons is None) == (self.brightness is None):
            raise ValueError("set exactly one of target_total_photons and brightness")


@dataclass
class ReservoirSection:
    modes: int = 32
    layers: int = 2
    mixer_seed: int | None = None  # derived from the master seed when None
    loss: float = 0.6


@dataclass
class EncoderSection:
    smoothing_sigma: float = DEFAULT_SMOOTHING_SIGMA
    chirp: float = DEFAULT_CHIRP
    scale: float = DEFAULT_SCALE
    window: list = field(default_factory=lambda: list(DEFAULT_WINDOW))


@dataclass
class SamplingSection:
    frames: int = 5000
    mode: str = "estimator_asymptotic"
    pixels: int = 64
    readout_std: float = 0.05
    efficiency: float = 1.0

    def __post_init__(self):
        if self.mode not in SAMPLING_MODES:
            raise ValueError(f"unknown sampling mode {self.mode!r}")


@dataclass
class FeatureSection:
    kind: str = "covariance"
    selection_grid: list = field(default_factory=lambda: [128, 512, 2048, 4096])

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")


@dataclass
class ClassifierSection:
    kind: str = "svm"
    svm_c: float = 1.0
    ridge_lambda: float = 1.0
    logistic_l2: float = 0.0
    sgd_lr: float = 0.01
    sgd_epochs: int = 300
    sgd_batch: int = 64

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise ValueError(f"unknown classifier kind {self.kind!r}")


@dataclass
class SplitSection:
    train: float = 0.82
    validation: float = 0.08
    test: float = 0.10


@dataclass
class SweepSection:
    axis: str = "frames"
    values: list = field(default_factory=list)

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")


@dataclass
class ExperimentConfig:
    seed: int = 0
    repetitions: int = 5
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    reservoir: ReservoirSection = field(default_factory=ReservoirSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    features: FeatureSection = field(default_factory=FeatureSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    split: SplitSection = field(default_factory=SplitSection)
    sweep: SweepSection | None = None

    def mixer_seed(self) -> int:
        if self.reservoir.mixer_seed is not None:
            return self.reservoir.mixer_seed
        return derive_seed(self.seed, "mixers")

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.sweep is None:
            out.pop("sweep")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        sections = {
            "dataset": DatasetConfig,
            "source": SourceConfig,
            "reservoir": ReservoirSection,
            "encoder": EncoderSection,
            "sampling": SamplingSection,
            "features": FeatureSection,
            "classifier": ClassifierSection,
            "split": SplitSection,
            "sweep": SweepSection,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in sections and value is not None:
                section_cls = sections[key]
                extra = set(value) - {f.name for f in fields(section_cls)}
                if extra:
                    raise ValueError(f"unknown keys in [{key}]: {sorted(extra)}")
                kwargs[key] = section_cls(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def config_hash(self) -> str:
        return hashlib.sha256(to_yaml(self).encode()).hexdigest()[:16]

    def simulation_hash(self) -> str:
        """Hash over the sections that determine the simulated features."""
        payload = {
            "seed": self.seed,
            "dataset": asdict(self.dataset),
            "source": asdict(self.source),
            "reservoir": asdict(self.reservoir),
            "encoder": asdict(self.encoder),
            "sampling": asdict(self.sampling),
        }
        text = yaml.safe_dump(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def to_yaml(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def from_yaml(text: str) -> ExperimentConfig:
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("config file must contain a mapping")
    return ExperimentConfig.from_dict(data)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return from_yaml(fh.read())


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(to_yaml(cfg))
