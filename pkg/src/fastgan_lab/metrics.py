"""Sample-quality metrics at desk scale.

FID uses identity features on raw coordinates; the classifier score and
conditional entropy use a small MLP classifier trained on the real data and
then frozen.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .games import GanNetworks, LabeledDataset
from .nn import MLP
from .rng import stream

PSD_TOL = 1e-10
METRIC_FIELDS = ("fid", "classifier_score", "mode_coverage", "conditional_entropy", "sample_count")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self):
        cov = self.covariance
        if cov.shape != (self.mean.size, self.mean.size):
            raise MetricError(f"covariance shape {cov.shape} does not match mean {self.mean.shape}")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=1e-10):
            raise MetricError("covariance must be symmetric")
        if cov.size and np.linalg.eigvalsh(cov).min() < -PSD_TOL * max(1.0, np.abs(cov).max()):
            raise MetricError("covariance is indefinite beyond tolerance")


def feature_stats(samples, feature_map=None) -> GaussianStats:
    """Mean and unbiased covariance of ``feature_map(samples)`` (identity by default)."""
    feats = np.asarray(samples if feature_map is None else feature_map(samples), dtype=np.float64)
    n, d = feats.shape
    if n < d + 1:
        raise MetricError(f"need at least {d + 1} samples for {d}-dimensional features, got {n}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    cov = centered.T @ centered / (n - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T), n)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if w.min(initial=0.0) < -PSD_TOL * max(1.0, np.abs(w).max(initial=0.0)):
        raise MetricError("matrix is indefinite beyond tolerance")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)."""
    if s1.mean.shape != s2.mean.shape:
        raise MetricError(f"dimension mismatch: {s1.mean.shape} vs {s2.mean.shape}")
    if np.array_equal(s1.mean, s2.mean) and np.array_equal(s1.covariance, s2.covariance):
        # skip the square roots, whose rounding would leave ~1e-16 instead of 0
        return 0.0
    diff = s1.mean - s2.mean
    r1 = _psd_sqrt(s1.covariance)
    inner = _psd_sqrt(r1 @ s2.covariance @ r1)
    value = diff @ diff + np.trace(s1.covariance) + np.trace(s2.covariance) - 2.0 * np.trace(inner)
    return float(max(value, 0.0))


def classifier_score(probs) -> float:
    """exp(mean_n KL(p(y|x_n) || p(y))), p(y) the row mean; 0 log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise MetricError("rows must be probability vectors")
    marginal = p.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))


def mode_coverage(samples, dataset: LabeledDataset, radius_mult: float = 3.0) -> tuple[float, np.ndarray]:
    """Fraction of modes with at least max(1, n / (10 C)) samples within radius_mult * std."""
    if radius_mult <= 0:
        raise MetricError("radius_mult must be positive")
    samples = np.asarray(samples, dtype=np.float64)
    C = dataset.class_count
    d2 = ((samples[:, None, :] - dataset.mode_centers[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1)
    inside = d2[np.arange(len(samples)), nearest] <= (radius_mult * dataset.mode_std) ** 2
    counts = np.bincount(nearest[inside], minlength=C)
    need = max(1.0, len(samples) / (10.0 * C))
    return float(np.mean(counts >= need)), counts


def _entropy(p: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(-np.sum(np.where(p > 0, p * np.log(p), 0.0)))


def conditional_entropy(probs_by_class) -> float:
    """Mean over conditioning classes of H(mean classifier distribution within the class)."""
    groups = probs_by_class.values() if isinstance(probs_by_class, Mapping) else probs_by_class
    ents = [_entropy(np.asarray(g, dtype=np.float64).mean(axis=0)) for g in groups if len(g)]
    if not ents:
        raise MetricError("no class-conditioned samples")
    return float(np.mean(ents))


class FrozenClassifier:
    """Small MLP p(y|x) trained once on real data, then used read-only."""

    def __init__(self, mlp: MLP, class_count: int):
        self.mlp = mlp
        self.class_count = class_count

    @classmethod
    def train(cls, dataset: LabeledDataset, seed: int = 0, width: int = 32, steps: int = 400, lr: float = 1e-2) -> "FrozenClassifier":
        rng = stream(seed, "classifier")
        mlp = MLP.init(rng, dataset.dim, width, 1, [dataset.class_count])
        params = mlp.params
        m = [np.zeros_like(p.data) for p in params]
        v = [np.zeros_like(p.data) for p in params]
        x = ad.Tensor(dataset.samples)
        n = len(dataset)
        idx = (np.arange(n), dataset.labels)
        for t in range(1, steps + 1):
            logp = ad.log_softmax(mlp(x)[0], axis=1)
            loss = ad.scale(ad.mean(ad.index(logp, idx)), -1.0)
            for k, g in enumerate(ad.grad(loss, params)):
                m[k] = 0.9 * m[k] + 0.1 * g.data
                v[k] = 0.999 * v[k] + 0.001 * g.data**2
                params[k].data = params[k].data - lr * (m[k] / (1 - 0.9**t)) / (np.sqrt(v[k] / (1 - 0.999**t)) + 1e-8)
        return cls(mlp, dataset.class_count)

    def predict_proba(self, samples) -> np.ndarray:
        with ad.no_grad():
            logp = ad.log_softmax(self.mlp(ad.constant(np.asarray(samples, dtype=np.float64)))[0], axis=1)
        return np.exp(logp.data)

    def accuracy(self, dataset: LabeledDataset) -> float:
        return float(np.mean(self.predict_proba(dataset.samples).argmax(axis=1) == dataset.labels))


@dataclass(frozen=True)
class MetricsRecord:
    fid: float
    classifier_score: float
    mode_coverage: float
    conditional_entropy: float
    sample_count: int
    feature_space: str = "identity|frozen_classifier"

    def to_row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_FIELDS}

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def evaluate_samples(
    samples,
    labels,
    dataset: LabeledDataset,
    classifier: FrozenClassifier,
    real_stats: Optional[GaussianStats] = None,
    radius_mult: float = 3.0,
) -> MetricsRecord:
    samples = np.asarray(samples, dtype=np.float64)
    real_stats = real_stats or feature_stats(dataset.samples)
    probs = classifier.predict_proba(samples)
    labels = np.asarray(labels)
    by_class = {k: probs[labels == k] for k in range(dataset.class_count)}
    return MetricsRecord(
        fid=frechet_distance(real_stats, feature_stats(samples)),
        classifier_score=classifier_score(probs),
        mode_coverage=mode_coverage(samples, dataset, radius_mult)[0],
        conditional_entropy=conditional_entropy(by_class),
        sample_count=len(samples),
    )


def generate_samples(networks: GanNetworks, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Class-balanced conditional samples."""
    labels = np.arange(n) % networks.class_count
    z = rng.standard_normal((n, networks.noise_dim))
    with ad.no_grad():
        x = networks.generate(z, labels).data
    return x, labels


class GeneratorEvaluator:
    """Bundles the frozen classifier and real statistics for repeated evaluation."""

    def __init__(
        self,
        dataset: LabeledDataset,
        n_samples: int = 10000,
        seed: int = 0,
        radius_mult: float = 3.0,
        classifier_seed: Optional[int] = None,
    ):
        self.dataset = dataset
        self.n_samples = n_samples
        self.radius_mult = radius_mult
        self.classifier = FrozenClassifier.train(dataset, seed=seed if classifier_seed is None else classifier_seed)
        self.real_stats = feature_stats(dataset.samples)
        self.rng = stream(seed, "metrics")

    def __call__(self, networks: GanNetworks) -> MetricsRecord:
        x, y = generate_samples(networks, self.n_samples, self.rng)
        return evaluate_samples(x, y, self.dataset, self.classifier, self.real_stats, self.radius_mult)


def sample_set_metrics(samples: Sequence, labels, dataset: LabeledDataset, seed: int = 0) -> MetricsRecord:
    return evaluate_samples(samples, labels, dataset, FrozenClassifier.train(dataset, seed=seed))
