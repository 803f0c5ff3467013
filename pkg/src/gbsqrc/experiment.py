"""End-to-end experiment runs: encode, simulate, estimate, select, train, report.

Per-sample simulation is embarrassingly parallel; every sample owns a seed
derived from (master seed, sample index), so worker count never changes the
result.  Features are simulated once per configuration and reused across the
repeated train/test shuffles that produce the error bars.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .classifiers import (
    evaluate,
    logistic_train,
    pinv_train,
    ridge_train,
    sgd_train,
    svm_train,
)
from .config import ExperimentConfig, derive_rng, derive_seed, to_yaml
from .datasets import (
    Dataset,
    SplitSpec,
    calibrate_budget,
    load_mnist_pca,
    load_vowels,
    make_blobs,
    make_moons_multiclass,
    make_synthetic_vowels,
    spectral_profile,
    split,
)
from .encoding import EncoderConfig, ReservoirConfig, build_unitary, encode_features
from .features import Standardizer, anova_select, choose_k, estimate_features
from .sampling import (
    DetectionModel,
    asymptotic_estimate,
    erase_features_poisson,
    pixel_moments,
    restrict_wavelengths,
    sample_frames,
)

CACHE_ENV_VAR = "GBSQRC_CACHE"


class StageError(RuntimeError):
    """Pipeline failure annotated with the stage name and sample index."""


@dataclass
class SimulatedFeatures:
    """Per-sample measurement estimates for one experiment configuration."""

    mu: np.ndarray  # (n, P)
    sigma: np.ndarray  # (n, P, P)
    photon_totals: np.ndarray  # (n,) expected or realized detected photons


@dataclass
class RunReport:
    task: str
    source_kind: str
    feature_kind: str
    classifier_kind: str
    accuracies: list
    mean_accuracy: float
    std_accuracy: float
    confusions: list
    selected_k: list
    photon_total_mean: float
    photon_total_std: float
    repetitions: int
    config: dict
    config_hash: str
    code_version: str = __version__
    sweep_axis: str | None = None
    sweep_value: float | None = None
    wall_time: float = 0.0

    def to_metrics_dict(self) -> dict:
        """Deterministic metrics payload; wall time goes to a sidecar file."""
        out = {
            "task": self.task,
            "source": self.source_kind,
            "features": self.feature_kind,
            "classifier": self.classifier_kind,
            "accuracies": self.accuracies,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "selected_k": self.selected_k,
            "confusions": self.confusions,
            "photon_total_mean": self.photon_total_mean,
            "photon_total_std": self.photon_total_std,
            "repetitions": self.repetitions,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "config": self.config,
        }
        if self.sweep_axis is not None:
            out["sweep_axis"] = self.sweep_axis
            out["sweep_value"] = self.sweep_value
        return out


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    seed = derive_seed(cfg.seed, "dataset")
    if d.task == "moons":
        return make_moons_multiclass(d.n, d.classes, d.noise, seed)
    if d.task == "blobs":
        return make_blobs(d.n, d.classes, d.cluster_std, d.box, seed)
    if d.task == "vowels":
        if d.path is None:
            return make_synthetic_vowels(seed)
        return load_vowels(d.path)
    if d.task == "mnist":
        if d.images_path is None or d.labels_path is None:
            raise ValueError("mnist task needs images_path and labels_path (see gen-data)")
        return load_mnist_pca(d.images_path, d.labels_path, d.per_class, d.components, seed)
    raise ValueError(f"unknown task {d.task!r}")


def resolve_source(cfg: ExperimentConfig, brightness_scale: float = 1.0):
    """Calibrated source state plus its expected detected total per sample.

    All sources share the spectral profile; ``brightness`` fixes the
    band-center occupation directly, while ``target_total_photons`` solves it
    from the photon budget.
    """
    s = cfg.source
    modes = cfg.reservoir.modes
    eta = np.broadcast_to(np.asarray(cfg.reservoir.loss, float), (modes,))
    eta_det = eta * cfg.sampling.efficiency
    profile = spectral_profile(modes)
    if s.brightness is not None:
        center_occ = {
            "squeezed": float(np.sinh(s.brightness) ** 2),
            "coherent": float(s.brightness**2),
            "supercontinuum": float(s.brightness**2),
            "thermal": float(s.brightness),
        }[s.kind]
        target = center_occ * brightness_scale * cfg.sampling.frames * float(eta_det @ profile)
    else:
        target = s.target_total_photons * brightness_scale
    cal = calibrate_budget(
        [s.kind],
        target_total=target,
        frames=cfg.sampling.frames,
        modes=modes,
        loss_eta=eta_det,
        r_max=s.r_max,
        profile=profile,
    )
    source = cal.source(s.kind, modes, s.supercontinuum_g)
    return source, cal.expected_totals[s.kind]


def _normalize_inputs(x: np.ndarray) -> np.ndarray:
    """Per-feature min-max normalization to [0, 1] over the whole dataset.

    This mirrors the fixed per-dataset scaling applied before phase encoding;
    constant features map to 0.
    """
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span[span == 0] = 1.0
    return (x - lo) / span


def _simulate_one(x_norm, cfg, enc, rc, det, source, mode, frames, seed):
    mask = encode_features(x_norm, enc)
    unitary = build_unitary(mask, enc, rc)
    if mode == "estimator_asymptotic":
        mu, sigma = pixel_moments(source, unitary, rc.loss_vector(), det)
        mu_hat, sigma_hat = asymptotic_estimate(mu, sigma, frames, np.random.default_rng(seed))
        total = frames * float(mu.sum())
    else:
        fs = sample_frames(source, unitary, rc.loss_vector(), det, frames, mode, seed)
        est = estimate_features(fs)
        mu_hat, sigma_hat = est.mu, est.sigma
        total = float(fs.frames.sum())
    return mu_hat, sigma_hat, total


def simulate_features(
    ds: Dataset,
    cfg: ExperimentConfig,
    threads: int = 1,
    cache_dir: str | None = None,
    brightness_scale: float = 1.0,
) -> SimulatedFeatures:
    """Simulate the measurement record for every dataset sample."""
    cache_path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        tag = cfg.simulation_hash()
        if brightness_scale != 1.0:
            tag += f"-p{brightness_scale:g}"
        cache_path = os.path.join(cache_dir, f"features-{tag}.npz")
        if os.path.exists(cache_path):
            data = np.load(cache_path)
            return SimulatedFeatures(
                mu=data["mu"], sigma=data["sigma"], photon_totals=data["totals"]
            )

    x_norm = _normalize_inputs(ds.x)
    enc = EncoderConfig(
        n_features=ds.n_features,
        smoothing_sigma=cfg.encoder.smoothing_sigma,
        chirp=cfg.encoder.chirp,
        scale=cfg.encoder.scale,
        window=tuple(cfg.encoder.window),
    )
    rc = ReservoirConfig(
        modes=cfg.reservoir.modes,
        layers=cfg.reservoir.layers,
        mixer_seed=cfg.mixer_seed(),
        loss=cfg.reservoir.loss,
    )
    det = DetectionModel(
        pixels=cfg.sampling.pixels,
        efficiency=cfg.sampling.efficiency,
        readout_std=cfg.sampling.readout_std,
    )
    source, _ = resolve_source(cfg, brightness_scale)
    n, pixels = ds.n_samples, det.pixels
    mu = np.empty((n, pixels))
    sigma = np.empty((n, pixels, pixels))
    totals = np.empty(n)

    def work(i):
        try:
            return _simulate_one(
                x_norm[i], cfg, enc, rc, det, source,
                cfg.sampling.mode, cfg.sampling.frames,
                derive_seed(cfg.seed, "measure", i),
            )
        except Exception as exc:
            raise StageError(f"simulation failed at sample {i}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n)))
    else:
        results = [work(i) for i in range(n)]
    for i, (m, s, t) in enumerate(results):
        mu[i], sigma[i], totals[i] = m, s, t

    if cache_path:
        np.savez(cache_path, mu=mu, sigma=sigma, totals=totals)
    return SimulatedFeatures(mu=mu, sigma=sigma, photon_totals=totals)


def feature_matrix(ds: Dataset, sim: SimulatedFeatures | None, kind: str) -> np.ndarray:
    if kind == "raw":
        return ds.x.copy()
    if kind == "mean_field":
        return sim.mu.copy()
    if kind == "covariance":
        n = sim.sigma.shape[0]
        return sim.sigma.reshape(n, -1).copy()
    raise ValueError(f"unknown feature kind {kind!r}")


def make_trainer(cfg: ExperimentConfig, rep: int):
    c = cfg.classifier
    if c.kind == "svm":
        return lambda x, y: svm_train(x, y, c_reg=c.svm_c)
    if c.kind == "ridge":
        return lambda x, y: ridge_train(x, y, lam=c.ridge_lambda)
    if c.kind == "logistic":
        return lambda x, y: logistic_train(x, y, lam=c.logistic_l2)
    if c.kind == "pinv":
        return lambda x, y: pinv_train(x, y)
    if c.kind == "sgd":
        seed = derive_seed(cfg.seed, "train", rep)
        return lambda x, y: sgd_train(
            x, y, lr=c.sgd_lr, epochs=c.sgd_epochs, batch_size=c.sgd_batch, seed=seed
        )
    raise ValueError(f"unknown classifier kind {c.kind!r}")


def train_eval_rep(x_all, ds: Dataset, cfg: ExperimentConfig, rep: int):
    """One shuffled split: standardize, select (covariance kind), train, test."""
    spec = SplitSpec(
        train=cfg.split.train,
        validation=cfg.split.validation,
        test=cfg.split.test,
        seed=derive_seed(cfg.seed, "split", rep),
    )
    parts = split(ds, spec)
    y = ds.labels
    scaler = Standardizer().fit(x_all[parts.train])
    x_train = scaler.transform(x_all[parts.train])
    x_test = scaler.transform(x_all[parts.test])
    trainer = make_trainer(cfg, rep)
    selected_k = x_train.shape[1]
    if cfg.features.kind == "covariance":
        grid = [k for k in cfg.features.selection_grid if k <= x_train.shape[1]]
        if not grid:
            grid = [x_train.shape[1]]
        if len(grid) > 1 and parts.validation.size > 0:
            x_val = scaler.transform(x_all[parts.validation])
            selected_k = choose_k(
                x_train, y[parts.train], x_val, y[parts.validation], grid, trainer
            )
        else:
            selected_k = grid[-1]
        mask = anova_select(x_train, y[parts.train], selected_k)
        x_train, x_test = mask.apply(x_train), mask.apply(x_test)
    model = trainer(x_train, y[parts.train])
    metrics = evaluate(model, x_test, y[parts.test])
    return metrics, selected_k


def run_experiment(
    cfg: ExperimentConfig,
    threads: int = 1,
    cache_dir: str | None = None,
    ds: Dataset | None = None,
    sim: SimulatedFeatures | None = None,
) -> RunReport:
    """Full protocol: simulate (unless given), then repeat shuffled train/test."""
    t0 = time.time()
    if ds is None:
        ds = build_dataset(cfg)
    if sim is None and cfg.features.kind != "raw":
        sim = simulate_features(ds, cfg, threads=threads, cache_dir=cache_dir)
    x_all = feature_matrix(ds, sim, cfg.features.kind)
    accuracies, confusions, ks = [], [], []
    for rep in range(cfg.repetitions):
        metrics, k = train_eval_rep(x_all, ds, cfg, rep)
        accuracies.append(metrics.accuracy)
        confusions.append(metrics.confusion.tolist())
        ks.append(int(k))
    totals = sim.photon_totals if sim is not None else np.zeros(1)
    acc = np.asarray(accuracies)
    return RunReport(
        task=ds.name,
        source_kind=cfg.source.kind,
        feature_kind=cfg.features.kind,
        classifier_kind=cfg.classifier.kind,
        accuracies=[float(a) for a in acc],
        mean_accuracy=float(acc.mean()),
        std_accuracy=float(acc.std(ddof=1)) if acc.size > 1 else 0.0,
        confusions=confusions,
        selected_k=ks,
        photon_total_mean=float(totals.mean()),
        photon_total_std=float(totals.std()),
        repetitions=cfg.repetitions,
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        sweep_axis=None,
        sweep_value=None,
        wall_time=time.time() - t0,
    )


def _erased_sim(sim: SimulatedFeatures, keep: np.ndarray, frames: int, master: int,
                pixels: int) -> SimulatedFeatures:
    """Estimator-level wavelength restriction for frame-free simulations."""
    erase = np.setdiff1d(np.arange(pixels), keep)
    mu = sim.mu.copy()
    sigma = sim.sigma.copy()
    for i in range(mu.shape[0]):
        rng = derive_rng(master, "erase", i, keep.size)
        mu[i], sigma[i] = erase_features_poisson(mu[i], sigma[i], erase, frames, rng)
    return SimulatedFeatures(mu=mu, sigma=sigma, photon_totals=sim.photon_totals)


def central_pixels(pixels: int, count: int) -> np.ndarray:
    offset = (pixels - count) // 2
    return np.arange(offset, offset + count)


def sweep(
    cfg: ExperimentConfig,
    axis: str,
    values,
    threads: int = 1,
    cache_dir: str | None = None,
) -> list[RunReport]:
    """Ordered experiment runs along one swept axis.

    ``classes`` regenerates (or subsets, for digits) the dataset; ``frames``
    rescales the acquisition at fixed source brightness; ``modes`` keeps only
    the central pixels informative; ``power`` scales the source brightness
    with the photon budget recalibrated accordingly.
    """
    reports = []
    if axis == "classes":
        base_ds = build_dataset(cfg) if cfg.dataset.task == "mnist" else None
        base_sim = None
        if base_ds is not None and cfg.features.kind != "raw":
            base_sim = simulate_features(base_ds, cfg, threads=threads, cache_dir=cache_dir)
        for v in values:
            v = int(v)
            cfg_v = ExperimentConfig.from_dict(cfg.to_dict())
            if cfg_v.dataset.task == "mnist":
                keep = base_ds.labels < v
                ds_v = Dataset(
                    x=base_ds.x[keep], labels=base_ds.labels[keep],
                    name=f"{base_ds.name}-{v}c", provenance=base_ds.provenance,
                )
                sim_v = None
                if base_sim is not None:
                    sim_v = SimulatedFeatures(
                        mu=base_sim.mu[keep], sigma=base_sim.sigma[keep],
                        photon_totals=base_sim.photon_totals[keep],
                    )
                report = run_experiment(cfg_v, threads, cache_dir, ds=ds_v, sim=sim_v)
            else:
                cfg_v.dataset.classes = v
                report = run_experiment(cfg_v, threads, cache_dir)
            report.sweep_axis, report.sweep_value = axis, float(v)
            reports.append(report)
    elif axis == "frames":
        # hold the calibrated brightness fixed: photons grow with frames
        for v in values:
            v = int(v)
            cfg_v = ExperimentConfig.from_dict(cfg.to_dict())
            cfg_v.sampling.frames = v
            if cfg.source.brightness is None:
                scaled = cfg.source.target_total_photons * v / cfg.sampling.frames
                cfg_v.source.target_total_photons = scaled
            report = run_experiment(cfg_v, threads, cache_dir)
            report.sweep_axis, report.sweep_value = axis, float(v)
            reports.append(report)
    elif axis == "modes":
        ds = build_dataset(cfg)
        asymptotic = cfg.sampling.mode == "estimator_asymptotic"
        base_sim = simulate_features(ds, cfg, threads=threads, cache_dir=cache_dir)
        for v in values:
            v = int(v)
            keep = central_pixels(cfg.sampling.pixels, v)
            if asymptotic:
                sim_v = _erased_sim(base_sim, keep, cfg.sampling.frames, cfg.seed,
                                    cfg.sampling.pixels)
            else:
                sim_v = _restricted_frames_sim(ds, cfg, keep, threads)
            report = run_experiment(cfg, threads, cache_dir=None, ds=ds, sim=sim_v)
            report.sweep_axis, report.sweep_value = axis, float(v)
            reports.append(report)
    elif axis == "power":
        for v in values:
            v = float(v)
            ds = build_dataset(cfg)
            sim = simulate_features(ds, cfg, threads=threads, cache_dir=cache_dir,
                                    brightness_scale=v)
            report = run_experiment(cfg, threads, cache_dir=None, ds=ds, sim=sim)
            report.sweep_axis, report.sweep_value = axis, v
            reports.append(report)
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    return reports


def _restricted_frames_sim(ds, cfg, keep, threads) -> SimulatedFeatures:
    """Re-simulate frames per sample and apply the wavelength restriction."""
    x_norm = _normalize_inputs(ds.x)
    enc = EncoderConfig(
        n_features=ds.n_features,
        smoothing_sigma=cfg.encoder.smoothing_sigma,
        chirp=cfg.encoder.chirp,
        scale=cfg.encoder.scale,
        window=tuple(cfg.encoder.window),
    )
    rc = ReservoirConfig(
        modes=cfg.reservoir.modes, layers=cfg.reservoir.layers,
        mixer_seed=cfg.mixer_seed(), loss=cfg.reservoir.loss,
    )
    det = DetectionModel(
        pixels=cfg.sampling.pixels, efficiency=cfg.sampling.efficiency,
        readout_std=cfg.sampling.readout_std,
    )
    source, _ = resolve_source(cfg)
    n, pixels = ds.n_samples, det.pixels
    sim = SimulatedFeatures(
        mu=np.empty((n, pixels)), sigma=np.empty((n, pixels, pixels)),
        photon_totals=np.empty(n),
    )

    def work(i):
        mask = encode_features(x_norm[i], enc)
        unitary = build_unitary(mask, enc, rc)
        fs = sample_frames(source, unitary, rc.loss_vector(), det,
                           cfg.sampling.frames, cfg.sampling.mode,
                           derive_seed(cfg.seed, "measure", i))
        fs = restrict_wavelengths(fs, keep, derive_seed(cfg.seed, "erase", i, keep.size))
        est = estimate_features(fs)
        return est.mu, est.sigma, float(fs.frames.sum())

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, range(n)))
    else:
        results = [work(i) for i in range(n)]
    for i, (m, s, t) in enumerate(results):
        sim.mu[i], sim.sigma[i], sim.photon_totals[i] = m, s, t
    return sim


def emit_outputs(reports, out_dir, cfg: ExperimentConfig | None = None) -> list:
    """Write metrics JSON, confusion/sweep CSVs and the config echo.

    Metric files are byte-deterministic for a fixed config and seed; wall
    times go to a separate ``timing.txt`` sidecar.
    """
    if isinstance(reports, RunReport):
        reports = [reports]
    os.makedirs(out_dir, exist_ok=True)
    written = []
    first = reports[0] if reports else None
    stem = "run"
    if first is not None:
        seed = first.config.get("seed", 0)
        stem = f"{first.task}-{first.source_kind}-{first.feature_kind}-s{seed}"

    metrics_path = os.path.join(out_dir, f"{stem}-metrics.json")
    with open(metrics_path, "w") as fh:
        json.dump([r.to_metrics_dict() for r in reports], fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(metrics_path)

    sweep_path = os.path.join(out_dir, f"{stem}-sweep.csv")
    with open(sweep_path, "w") as fh:
        fh.write("axis,value,mean_accuracy,std_accuracy,repetitions\n")
        for r in reports:
            if r.sweep_axis is not None:
                fh.write(
                    f"{r.sweep_axis},{r.sweep_value!r},{r.mean_accuracy!r},"
                    f"{r.std_accuracy!r},{r.repetitions}\n"
                )
    written.append(sweep_path)

    for ridx, r in enumerate(reports):
        conf_path = os.path.join(out_dir, f"{stem}-confusion-{ridx}.csv")
        with open(conf_path, "w") as fh:
            for rep_conf in r.confusions:
                for row in rep_conf:
                    fh.write(",".join(str(v) for v in row) + "\n")
                fh.write("\n")
        written.append(conf_path)

    if cfg is not None:
        cfg_path = os.path.join(out_dir, f"{stem}-config.yaml")
        with open(cfg_path, "w") as fh:
            fh.write(to_yaml(cfg))
        written.append(cfg_path)

    timing_path = os.path.join(out_dir, f"{stem}-timing.txt")
    with open(timing_path, "w") as fh:
        for ridx, r in enumerate(reports):
            fh.write(f"report {ridx}: wall_time {r.wall_time:.3f} s\n")
    written.append(timing_path)
    return written
