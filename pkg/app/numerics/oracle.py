"""Monte-Carlo ground truth for the largest-eigenvalue CDF.

H = H_d + G / sqrt(K + 1) with G i.i.d. standard circular complex Gaussian,
and phi_s the largest eigenvalue of (K + 1) H^H H.
"""
import logging
import math
from multiprocessing import Pool
from typing import List, Optional, Sequence

import numpy as np

from app.core.config import MC_BATCH, SEED
from app.core.errors import ConvergenceError, ModelError, UsageError
from app.core.models import ChannelSample, McEstimate, MimoConfig, Spectrum

logger = logging.getLogger(__name__)

POWER_TOL = 1e-12
POWER_MAX_ITER = 100_000
# full Hermitian eigensolve is the fallback up to this size
EIGH_FALLBACK_DIM = 8


def mean_matrix_from_spectrum(spec: Spectrum, cfg: MimoConfig) -> np.ndarray:
    """n_r x n_t mean matrix whose (K+1) H_d^H H_d has nonzero eigenvalues spec."""
    if spec.s != cfg.s:
        raise ModelError(f"spectrum has {spec.s} eigenvalues but min(n_t, n_r) = {cfg.s}")
    Hd = np.zeros((cfg.n_r, cfg.n_t), dtype=complex)
    idx = np.arange(cfg.s)
    Hd[idx, idx] = np.sqrt(np.asarray(spec.lambdas) / (cfg.K + 1.0))
    return Hd


def _gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_channel(cfg: MimoConfig, Hd: np.ndarray, rng: np.random.Generator) -> ChannelSample:
    return ChannelSample(H=Hd + _gaussian(rng, Hd.shape) / math.sqrt(cfg.K + 1.0))


def _gram(H: np.ndarray) -> np.ndarray:
    """The s x s Gram form of H (batched over leading axes)."""
    Hh = np.conj(np.swapaxes(H, -1, -2))
    if H.shape[-2] >= H.shape[-1]:
        return Hh @ H
    return H @ Hh


def _power_batch(W: np.ndarray, tol: float, max_iter: int):
    """Largest eigenvalue of each Hermitian PSD W[b]; returns (values, converged mask)."""
    B, s, _ = W.shape
    v = np.ones((B, s), dtype=complex) / math.sqrt(s)
    lam = np.zeros(B)
    active = np.ones(B, dtype=bool)
    for _ in range(max_iter):
        w = np.einsum("bij,bj->bi", W[active], v[active])
        new = np.real(np.einsum("bi,bi->b", np.conj(v[active]), w))
        norm = np.linalg.norm(w, axis=1)
        norm[norm == 0] = 1.0
        v[active] = w / norm[:, None]
        done = np.abs(new - lam[active]) <= tol * np.abs(new)
        lam[active] = new
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
    return lam, ~active


def _largest(W: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    lam, ok = _power_batch(W, tol, max_iter)
    if not ok.all():
        if W.shape[-1] > EIGH_FALLBACK_DIM:
            raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations "
                                   f"for {int((~ok).sum())} samples (near-degenerate top pair)")
        logger.debug(f"power iteration fell back to eigvalsh for {int((~ok).sum())} samples")
        lam[~ok] = np.linalg.eigvalsh(W[~ok])[:, -1]
    return lam


def largest_eig(sample: ChannelSample, cfg: MimoConfig, tol: float = POWER_TOL,
                max_iter: int = POWER_MAX_ITER) -> float:
    """Largest eigenvalue of (K + 1) H^H H by power iteration on the Gram form."""
    W = _gram(sample.H)[None, :, :]
    return float((cfg.K + 1.0) * _largest(W, tol, max_iter)[0])


def _batch_task(lambdas: List[float], cfg: MimoConfig, size: int, seed_seq: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    Hd = mean_matrix_from_spectrum(Spectrum(lambdas=lambdas), cfg)
    H = Hd[None, :, :] + _gaussian(rng, (size,) + Hd.shape) / math.sqrt(cfg.K + 1.0)
    return (cfg.K + 1.0) * _largest(_gram(H), POWER_TOL, POWER_MAX_ITER)


def sample_largest_eigs(spec: Spectrum, cfg: MimoConfig, n_samples: int, seed: int = SEED,
                        workers: int = 1, batch: int = MC_BATCH) -> np.ndarray:
    """n_samples draws of phi_s; batch b uses the b-th spawned child seed, so results do not depend on workers."""
    if n_samples < 1:
        raise UsageError(f"need at least one sample, got {n_samples}")
    sizes = [batch] * (n_samples // batch)
    if n_samples % batch:
        sizes.append(n_samples % batch)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    tasks = [(spec.lambdas, cfg, size, child) for size, child in zip(sizes, children)]
    if workers > 1 and len(tasks) > 1:
        with Pool(processes=min(workers, len(tasks))) as pool:
            parts = pool.starmap(_batch_task, tasks)
    else:
        parts = [_batch_task(*task) for task in tasks]
    return np.concatenate(parts)


def empirical_cdf(x: float, spec: Spectrum, cfg: MimoConfig, n_samples: int = 100_000, seed: int = SEED,
                  workers: int = 1) -> McEstimate:
    return empirical_cdf_grid([x], spec, cfg, n_samples, seed, workers)[0]


def empirical_cdf_grid(xs: Sequence[float], spec: Spectrum, cfg: MimoConfig, n_samples: int = 100_000,
                       seed: int = SEED, workers: int = 1, samples: Optional[np.ndarray] = None) -> List[McEstimate]:
    """Empirical CDF at every x from one sample set."""
    if n_samples < 1000:
        raise UsageError(f"Monte-Carlo estimates need at least 1000 samples, got {n_samples}")
    if samples is None:
        samples = sample_largest_eigs(spec, cfg, n_samples, seed, workers)
    ordered = np.sort(samples)
    counts = np.searchsorted(ordered, np.asarray(xs, dtype=float), side="right")
    logger.info(f"monte-carlo {cfg.n_t}x{cfg.n_r}: {len(samples)} samples, seed {seed}")
    return [McEstimate.from_counts(int(c), len(samples), seed) for c in counts]
