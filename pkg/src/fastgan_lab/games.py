"""Two-player differentiable objectives, toy datasets and MLP conditional GANs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .losses import DiscriminatorOutput
from .nn import MLP
from .rng import stream


class GameError(ValueError):
    pass


@dataclass(frozen=True)
class GameSpec:
    """min_x max_y f(x, y) with optional closed-form equilibrium and Hessian blocks."""

    name: str
    min_player_dim: int
    max_player_dim: int
    objective: Callable[[Tensor, Tensor], Tensor]
    analytic_equilibrium: Optional[tuple[np.ndarray, np.ndarray]] = None
    analytic_hessians: Optional[dict[str, np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def value(self, x, y) -> float:
        with ad.no_grad():
            return self.objective(ad.tensor(x), ad.tensor(y)).item()

    def gradients(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        xt, yt = ad.tensor(x, requires_grad=True), ad.tensor(y, requires_grad=True)
        gx, gy = ad.grad(self.objective(xt, yt), [xt, yt])
        return gx.data.copy(), gy.data.copy()

    def hessian_blocks(self, x, y) -> dict[str, np.ndarray]:
        """Dense H_xx, H_xy, H_yx, H_yy assembled column by column from HVPs."""
        xt, yt = ad.tensor(x, requires_grad=True), ad.tensor(y, requires_grad=True)
        f = self.objective(xt, yt)
        n, m = self.min_player_dim, self.max_player_dim
        full = np.zeros((n + m, n + m))
        for j in range(n + m):
            e = np.zeros(n + m)
            e[j] = 1.0
            full[:, j] = ad.hvp(f, [xt, yt], e).data
        return {
            "xx": full[:n, :n],
            "xy": full[:n, n:],
            "yx": full[n:, :n],
            "yy": full[n:, n:],
        }


def make_bilinear_game(A) -> GameSpec:
    """f(x, y) = x^T A y."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.shape[0] != A.shape[1]:
        raise GameError(f"bilinear game needs a square matrix, got {A.shape}")
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise GameError(f"singular coupling matrix (condition number {cond:.3e})")
    k = A.shape[0]
    At = Tensor(A)

    def objective(x, y):
        return ad.sum_(ad.mul(x, ad.matmul(At, y)))

    zero = np.zeros(k)
    return GameSpec(
        "bilinear",
        k,
        k,
        objective,
        (zero, zero.copy()),
        {"xx": np.zeros((k, k)), "xy": A.copy(), "yx": A.T.copy(), "yy": np.zeros((k, k))},
        {"A": A},
    )


def make_quadratic_game(A, B, C) -> GameSpec:
    """f(x, y) = 1/2 x^T A x + x^T B y - 1/2 y^T C y."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    for name, M in (("A", A), ("C", C)):
        if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12, rtol=0):
            raise GameError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(M).min() < -1e-10:
            raise GameError(f"{name} must be positive semidefinite")
    n, m = A.shape[0], C.shape[0]
    if B.shape != (n, m):
        raise GameError(f"B must be {n}x{m}, got {B.shape}")
    At, Bt, Ct = Tensor(A), Tensor(B), Tensor(C)

    def objective(x, y):
        xAx = ad.sum_(ad.mul(x, ad.matmul(At, x)))
        xBy = ad.sum_(ad.mul(x, ad.matmul(Bt, y)))
        yCy = ad.sum_(ad.mul(y, ad.matmul(Ct, y)))
        return ad.sub(ad.add(ad.scale(xAx, 0.5), xBy), ad.scale(yCy, 0.5))

    return GameSpec(
        "quadratic",
        n,
        m,
        objective,
        (np.zeros(n), np.zeros(m)),
        {"xx": A.copy(), "xy": B.copy(), "yx": B.T.copy(), "yy": -C},
        {"A": A, "B": B, "C": C},
    )


def make_dirac_game() -> GameSpec:
    """Generator is a point mass at theta, discriminator scores psi * x, real data at 0."""

    def objective(theta, psi):
        real = ad.log_sigmoid(ad.scale(psi, 0.0))
        fake = ad.log_sigmoid(ad.scale(ad.mul(psi, theta), -1.0))
        return ad.sum_(ad.add(real, fake))

    return GameSpec("dirac", 1, 1, objective, (np.zeros(1), np.zeros(1)))


def random_quadratic_game(rng: np.random.Generator, n: int, m: int, strength: float = 1.0) -> GameSpec:
    """Quadratic game with H_xx positive definite and H_xy H_yx positive definite (n <= m)."""
    Q = rng.normal(size=(n, n))
    A = Q @ Q.T / n + 0.1 * np.eye(n)
    B = strength * rng.normal(size=(n, m))
    R = rng.normal(size=(m, m))
    C = R @ R.T / m + 0.1 * np.eye(m)
    return make_quadratic_game(A, B, C)


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    mode_centers: np.ndarray
    mode_std: float

    def __post_init__(self):
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("labels must lie in [0, class_count)")

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.dim)] + ["label"])
            for row, lab in zip(self.samples, self.labels):
                w.writerow([repr(float(v)) for v in row] + [int(lab)])

    @classmethod
    def from_csv(cls, path, class_count=None, mode_centers=None, mode_std=float("nan")) -> "LabeledDataset":
        samples, labels = read_samples_csv(path)
        if labels is None:
            raise ValueError(f"{path}: dataset CSV needs a label column")
        C = int(class_count if class_count is not None else labels.max() + 1)
        if mode_centers is None:
            mode_centers = np.stack([samples[labels == k].mean(axis=0) for k in range(C)])
            if np.isnan(mode_std):
                resid = samples - mode_centers[labels]
                mode_std = float(resid.std())
        return cls(samples, labels, C, np.asarray(mode_centers), float(mode_std))


def read_samples_csv(path) -> tuple[np.ndarray, Optional[np.ndarray]]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    lcol = header.index("label") if "label" in header else None
    samples = np.array([[float(r[i]) for i in xcols] for r in body], dtype=np.float64).reshape(-1, len(xcols))
    labels = None if lcol is None else np.array([int(r[lcol]) for r in body], dtype=np.int64)
    return samples, labels


def ring_centers(modes: int, radius: float) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    centers = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    centers[np.abs(centers) < 1e-15] = 0.0
    return centers


def sample_gaussian_mixture(modes: int, radius: float, std: float, n: int, seed: int) -> LabeledDataset:
    """Stratified draw from ``modes`` isotropic Gaussians evenly spaced on a circle."""
    if modes < 2 or n < modes or std <= 0:
        raise ValueError("need modes >= 2, n >= modes and std > 0")
    rng = stream(seed, "dataset")
    centers = ring_centers(modes, radius)
    counts = np.full(modes, n // modes)
    counts[: n % modes] += 1
    labels = np.repeat(np.arange(modes), counts)
    samples = centers[labels] + std * rng.standard_normal((n, 2))
    return LabeledDataset(samples, labels, modes, centers, float(std))


# ---------------------------------------------------------------------------
# networks


@dataclass
class GanNetworks:
    generator: MLP
    discriminator: MLP
    noise_dim: int
    class_count: int
    data_dim: int

    def generate(self, z, labels) -> Tensor:
        z = ad.constant(z)
        return self.generator(ad.concat([z, ad.one_hot(labels, self.class_count)], axis=1))[0]

    def discriminate(self, x) -> DiscriminatorOutput:
        adv, logits = self.discriminator(ad.constant(x))
        return DiscriminatorOutput(ad.reshape(adv, (-1,)), logits)

    @property
    def g_params(self) -> list[Tensor]:
        return self.generator.params

    @property
    def d_params(self) -> list[Tensor]:
        return self.discriminator.params


def mlp_param_count(in_dim: int, width: int, depth: int, head_dims) -> int:
    count, prev = 0, in_dim
    for _ in range(depth):
        count += prev * width + width
        prev = width
    return count + sum(prev * h + h for h in head_dims)


def build_mlp_gan(noise_dim: int, hidden_width: int, depth: int, data_dim: int, class_count: int, seed: int) -> GanNetworks:
    if min(noise_dim, hidden_width, depth, data_dim, class_count) <= 0:
        raise ValueError("all network dimensions must be positive")
    rng = stream(seed, "init")
    gen = MLP.init(rng, noise_dim + class_count, hidden_width, depth, [data_dim])
    disc = MLP.init(rng, data_dim, hidden_width, depth, [1, class_count])
    return GanNetworks(gen, disc, noise_dim, class_count, data_dim)
