"""
Proxy evaluation metrics.

These are desk-scale stand-ins computed from this model's own discriminator
features: a Gaussian-fit Frechet distance in place of FID, mean pairwise L1 in
place of LPIPS diversity, and the gaps in Laplacian / high-frequency energy
between real and generated images.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from sdtm import ops
from sdtm.data import DatasetIndex, Episode, sample_episode
from sdtm.errors import EmptyBatchError, ShapeError
from sdtm.frequency import high_freq_energy
from sdtm.gan import TrainState
from sdtm.models import DiscriminatorNet, generator_forward
from sdtm.schemas import EvalReport
from sdtm.structural import laplacian_energy
from sdtm.tensor import Tensor

logger = logging.getLogger(__name__)


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(matrix)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def proxy_frechet(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """
    |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    tr((S_a S_b)^(1/2)) is taken as the trace of the square root of the
    symmetric S_a^(1/2) S_b S_a^(1/2), which has the same eigenvalues.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"feature sets must be [N, D], got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise EmptyBatchError("proxy_frechet needs at least two vectors per set")

    diff = a.mean(axis=0) - b.mean(axis=0)
    sigma_a = np.atleast_2d(np.cov(a, rowvar=False))
    sigma_b = np.atleast_2d(np.cov(b, rowvar=False))
    root_a = _sqrt_psd(sigma_a)
    middle = root_a @ sigma_b @ root_a
    eigvals = np.linalg.eigvalsh((middle + middle.T) / 2)
    tr_covmean = float(np.sum(np.sqrt(np.clip(eigvals, 0.0, None))))
    value = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * tr_covmean)
    return max(value, 0.0)


def pairwise_l1(images: np.ndarray) -> float:
    """Mean per-pixel L1 distance over all unordered pairs; 0 for fewer than two images."""
    n = images.shape[0]
    if n < 2:
        return 0.0
    flat = images.reshape(n, -1).astype(np.float64)
    distances = [np.mean(np.abs(flat[i] - flat[j])) for i in range(n) for j in range(i + 1, n)]
    return float(np.mean(distances))


def tap_vectors(disc: DiscriminatorNet, images: np.ndarray) -> np.ndarray:
    """Spatially averaged tap-layer activations, one vector per image."""
    tap = disc(Tensor(images)).tap
    return ops.adaptive_avg_pool(tap, 1, 1).data.reshape(images.shape[0], -1).astype(np.float64)


@dataclass
class SetComparison:
    proxy_frechet: float
    laplacian_gap: float
    high_freq_gap: float


def compare_sets(disc: DiscriminatorNet, real: np.ndarray, fake: np.ndarray) -> SetComparison:
    return SetComparison(
        proxy_frechet=proxy_frechet(tap_vectors(disc, real), tap_vectors(disc, fake)),
        laplacian_gap=abs(laplacian_energy(real) - laplacian_energy(fake)),
        high_freq_gap=abs(high_freq_energy(real) - high_freq_energy(fake)),
    )


def generate_for_episode(state: TrainState, episode: Episode, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` single-image generator passes, each with its own modulation draw."""
    conditioning = [Tensor(x.data[None]) for x in episode.images]
    return np.concatenate([generator_forward(state.gen, conditioning, rng).data for _ in range(count)])


def evaluate_episodes(
    state: TrainState,
    episodes: Sequence[Episode],
    rng: np.random.Generator,
    samples_per_episode: int = 3,
    split: str = "unseen",
) -> EvalReport:
    if not episodes:
        raise EmptyBatchError("evaluation needs at least one episode")
    reals: List[np.ndarray] = []
    fakes: List[np.ndarray] = []
    diversity: List[float] = []
    for episode in episodes:
        generated = generate_for_episode(state, episode, samples_per_episode, rng)
        fakes.append(generated)
        reals.append(np.stack([x.data for x in episode.images]))
        diversity.append(pairwise_l1(generated))
    real, fake = np.concatenate(reals), np.concatenate(fakes)
    comparison = compare_sets(state.disc, real, fake)
    return EvalReport(
        iteration=state.iteration,
        split=split,
        n_episodes=len(episodes),
        proxy_frechet=comparison.proxy_frechet,
        proxy_diversity_l1=float(np.mean(diversity)),
        proxy_laplacian_gap=comparison.laplacian_gap,
        proxy_high_freq_gap=comparison.high_freq_gap,
    )


def evaluate(
    state: TrainState,
    index: DatasetIndex,
    split: str,
    n_episodes: int,
    rng: np.random.Generator,
    samples_per_episode: int = 3,
    png_enabled: bool = False,
) -> EvalReport:
    k = state.config.k
    episodes = [sample_episode(index, split, k, rng, png_enabled) for _ in range(n_episodes)]
    report = evaluate_episodes(state, episodes, rng, samples_per_episode, split)
    logger.info("proxy evaluation on %d %s episodes: %s", n_episodes, split, report.to_line())
    return report
