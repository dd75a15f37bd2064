"""GAN objectives as differentiable functions of raw discriminator outputs.

Sign conventions: discriminator losses are the quantities D *ascends*;
generator losses are the quantities G *descends*. Probabilities are always
handled in log space (log-sigmoid / log-softmax).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOSS_KINDS = ("original", "nonsaturating", "acgan", "robgan", "fastgan")
CLASSIFICATION_TERMS = ("log_prob", "raw_prob")


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class DiscriminatorOutput:
    adv_score: Tensor  # (n,)
    class_logits: Tensor  # (n, C)

    @property
    def class_count(self) -> int:
        return self.class_logits.shape[-1]


@dataclass(frozen=True)
class LossCoefficients:
    alpha_c_f: float = 1.0
    alpha_c_g: float = 1.0
    use_kl: bool = True
    use_g_class: bool = True

    def __post_init__(self):
        for name, on in (("alpha_c_f", self.use_kl), ("alpha_c_g", self.use_g_class)):
            value = getattr(self, name)
            if on and not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1] when its term is enabled, got {value}")


def _label_log_prob(class_logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    n, C = class_logits.shape
    if labels.shape != (n,):
        raise LabelError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise LabelError(f"labels must lie in [0, {C}), got range [{labels.min()}, {labels.max()}]")
    return ad.index(ad.log_softmax(class_logits, axis=1), (np.arange(n), labels))


def gan_loss_original(scores_real: Tensor, scores_fake: Tensor) -> Tensor:
    """mean log D(x_r) + mean log(1 - D(x_f)), D = sigmoid(score)."""
    return ad.add(
        ad.mean(ad.log_sigmoid(scores_real)),
        ad.mean(ad.log_sigmoid(ad.scale(scores_fake, -1.0))),
    )


def gan_loss_nonsaturating(scores_fake: Tensor) -> Tensor:
    """mean -log D(x_f); the generator descends this."""
    return ad.scale(ad.mean(ad.log_sigmoid(scores_fake)), -1.0)


def acgan_d_real(out_real: DiscriminatorOutput, y_real) -> Tensor:
    return ad.mean(ad.add(ad.log_sigmoid(out_real.adv_score), _label_log_prob(out_real.class_logits, y_real)))


def acgan_d_fake(out_fake: DiscriminatorOutput, y_fake) -> Tensor:
    fake = ad.log_sigmoid(ad.scale(out_fake.adv_score, -1.0))
    return ad.mean(ad.add(fake, _label_log_prob(out_fake.class_logits, y_fake)))


def acgan_d_loss(out_real: DiscriminatorOutput, y_real, out_fake: DiscriminatorOutput, y_fake) -> Tensor:
    """Joint log-likelihood of (real, y_r) and (fake, y_f), factored over the two heads."""
    return ad.add(acgan_d_real(out_real, y_real), acgan_d_fake(out_fake, y_fake))


def robgan_fake_loss(out_fake: DiscriminatorOutput) -> Tensor:
    """mean log P(fake | x_f); the class head is ignored on fakes."""
    return ad.mean(ad.log_sigmoid(ad.scale(out_fake.adv_score, -1.0)))


def kl_to_uniform(probs) -> float:
    """KL(p || U) = log C - H(p) for a probability vector (or rows of a matrix, averaged)."""
    p = np.asarray(probs, dtype=np.float64)
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-8):
        raise ValueError("probabilities must be nonnegative and sum to 1")
    C = p.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p * C), 0.0)
    return float(np.mean(terms.sum(axis=-1)))


def kl_to_uniform_logits(class_logits: Tensor) -> Tensor:
    """Per-row KL(softmax(logits) || U), shape (n,)."""
    logp = ad.log_softmax(class_logits, axis=1)
    C = class_logits.shape[1]
    return ad.sum_(ad.mul(ad.exp(logp), ad.add(logp, np.log(C))), axis=1)


def fastgan_d_real(out_real: DiscriminatorOutput, y_real, classification_term: str = "log_prob") -> Tensor:
    hinge = ad.scale(ad.relu(ad.sub(1.0, out_real.adv_score)), -1.0)
    logp = _label_log_prob(out_real.class_logits, y_real)
    if classification_term == "log_prob":
        cls = logp
    elif classification_term == "raw_prob":
        cls = ad.exp(logp)
    else:
        raise ValueError(f"classification_term must be one of {CLASSIFICATION_TERMS}")
    return ad.mean(ad.add(hinge, cls))


def fastgan_d_fake(out_fake: DiscriminatorOutput, coeffs: LossCoefficients) -> Tensor:
    hinge = ad.mean(ad.scale(ad.relu(ad.add(1.0, out_fake.adv_score)), -1.0))
    if not coeffs.use_kl:
        return hinge
    kl = ad.mean(kl_to_uniform_logits(out_fake.class_logits))
    return ad.sub(hinge, ad.scale(kl, coeffs.alpha_c_f))


def fastgan_d_loss(
    out_real: DiscriminatorOutput,
    y_real,
    out_fake: DiscriminatorOutput,
    coeffs: LossCoefficients,
    classification_term: str = "log_prob",
) -> Tensor:
    """Hinge real/fake terms, real-label classification, minus alpha_c_f * KL(fake class probs || U)."""
    return ad.add(fastgan_d_real(out_real, y_real, classification_term), fastgan_d_fake(out_fake, coeffs))


def fastgan_g_loss(out_fake: DiscriminatorOutput, y_fake, coeffs: LossCoefficients) -> Tensor:
    adv = ad.scale(ad.mean(out_fake.adv_score), -1.0)
    if not coeffs.use_g_class:
        # labels are still validated so a bad batch fails the same way either way
        _label_log_prob(out_fake.class_logits, y_fake)
        return adv
    logp = ad.mean(_label_log_prob(out_fake.class_logits, y_fake))
    return ad.sub(adv, ad.scale(logp, coeffs.alpha_c_g))


@dataclass(frozen=True)
class GanObjective:
    """The three quantities Algorithm-1 style training needs, for one loss family."""

    kind: str
    coeffs: LossCoefficients
    classification_term: str = "log_prob"

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")

    def d_real(self, out: DiscriminatorOutput, y) -> Tensor:
        if self.kind == "fastgan":
            return fastgan_d_real(out, y, self.classification_term)
        if self.kind in ("acgan", "robgan"):
            return acgan_d_real(out, y)
        return ad.mean(ad.log_sigmoid(out.adv_score))

    def d_fake(self, out: DiscriminatorOutput, y) -> Tensor:
        if self.kind == "fastgan":
            return fastgan_d_fake(out, self.coeffs)
        if self.kind == "acgan":
            return acgan_d_fake(out, y)
        return robgan_fake_loss(out)

    def g(self, out: DiscriminatorOutput, y) -> Tensor:
        if self.kind == "fastgan":
            return fastgan_g_loss(out, y, self.coeffs)
        if self.kind == "original":
            return ad.mean(ad.log_sigmoid(ad.scale(out.adv_score, -1.0)))
        adv = gan_loss_nonsaturating(out.adv_score)
        if self.kind == "nonsaturating" or not self.coeffs.use_g_class:
            return adv
        logp = ad.mean(_label_log_prob(out.class_logits, y))
        return ad.sub(adv, ad.scale(logp, self.coeffs.alpha_c_g))


def adv_loss_taylor_gap(score_fn: Callable[[Tensor], Tensor], x, c: float) -> tuple[float, float]:
    """Exact one-step worst case of log D(x + eps), ||eps||_2 <= c, versus its linearization.

    ``score_fn`` maps a point to the raw score, D = sigmoid(score). The exact
    value moves the full radius against the input gradient; the approximation
    is log D(x) - c * ||grad_x log D(x)||.
    """
    if c < 0:
        raise ValueError("perturbation scale must be nonnegative")
    xt = ad.tensor(x, requires_grad=True)
    logd = ad.log_sigmoid(score_fn(xt))
    (g,) = ad.grad(logd, [xt])
    gnorm = float(np.linalg.norm(g.data))
    base = logd.item()
    if c == 0 or gnorm == 0.0:
        return base, base
    step = -c * g.data / gnorm
    with ad.no_grad():
        exact = ad.log_sigmoid(score_fn(ad.tensor(xt.data + step))).item()
    return exact, base - c * gnorm
