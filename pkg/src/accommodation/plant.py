"""Formant-resonator articulatory plant.

Maps 6 articulatory parameters (jaw height, tongue body, tongue dorsum,
tongue tip, lip protrusion, lip height; each in [-1, 1]) to 18 log band
magnitudes on a half-integer Bark grid.  Three resonances are placed by a
fixed smooth formant map and scaled by a per-speaker vocal-tract factor.

Learners only see the plant through :class:`PlantOracle`, which counts
queries and exposes no derivatives.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

log = logging.getLogger(__name__)

ARTIC_NAMES = ("jh", "tb", "td", "tt", "lp", "lh")
N_ARTIC = 6
N_BANDS = 18
DEFAULT_FLOOR = 1e-3
SPEAKER_LAMBDAS = {"RS": 1.0, "S1": 0.88, "S2": 1.12}


@dataclass(frozen=True)
class SpeakerPlant:
    speaker_id: str
    lam: float
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if not 0.7 <= self.lam <= 1.4:
            raise ValueError(f"vocal-tract scale {self.lam} outside [0.7, 1.4]")
        if not self.floor > 0:
            raise ValueError("spectral floor must be positive")


def speaker(speaker_id: str) -> SpeakerPlant:
    """The standard plant for ``RS``, ``S1`` or ``S2``."""
    try:
        return SpeakerPlant(speaker_id, SPEAKER_LAMBDAS[speaker_id])
    except KeyError:
        raise ValueError(f"unknown speaker {speaker_id!r}; known: {sorted(SPEAKER_LAMBDAS)}") from None


def bark_of_freq(f_hz):
    """Analytic Bark value ``13 atan(0.00076 f) + 3.5 atan((f / 7500)^2)``."""
    f = np.asarray(f_hz, dtype=np.float64)
    z = 13.0 * np.arctan(0.00076 * f) + 3.5 * np.arctan((f / 7500.0) ** 2)
    return float(z) if z.ndim == 0 else z


def _bisect_bark(target: float) -> float:
    lo, hi = 0.0, 8000.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        if bark_of_freq(mid) < target:
            lo = mid
        else:
            hi = mid


@lru_cache(maxsize=None)
def _band_centers() -> tuple[float, ...]:
    return tuple(_bisect_bark(j - 0.5) for j in range(1, N_BANDS + 1))


def band_centers() -> np.ndarray:
    """Center frequencies (Hz) at Bark 0.5, 1.5, ..., 17.5.

    Bisection on [0, 8000] Hz runs to full float precision.
    """
    return np.array(_band_centers())


def _clamp(a: np.ndarray) -> tuple[np.ndarray, int]:
    a = np.asarray(a, dtype=np.float64)
    outside = int(np.count_nonzero((a < -1.0) | (a > 1.0)))
    if outside:
        log.warning("plant clamped %d articulatory values into [-1, 1]", outside)
        a = np.clip(a, -1.0, 1.0)
    return a, outside


def _raw_formants(a: np.ndarray, lam: float) -> np.ndarray:
    jh, tb, td, tt, lp, lh = np.moveaxis(a, -1, 0)
    u1 = -0.45 * jh - 0.20 * tb + 0.10 * tt - 0.15 * lh + 0.10 * np.tanh(tb * jh)
    u2 = 0.15 * jh + 0.25 * tb + 0.30 * td - 0.30 * lp + 0.10 * np.tanh(tt * td)
    u3 = 0.10 * td + 0.25 * tt - 0.15 * lp + 0.05 * np.tanh(tb * lp)
    return lam * np.stack([500.0 * np.exp(u1), 1500.0 * np.exp(u2), 2500.0 * np.exp(u3)], axis=-1)


def formant_map(a, lam: float):
    """Formant frequencies and bandwidths (Hz) for articulatory vector(s) ``a``.

    Returns ``(F, B)``, each of shape ``a.shape[:-1] + (3,)``.  The three
    resonances are numbered by increasing frequency, so ``F1 < F2 < F3``
    holds everywhere; in corners of the domain the raw expressions for the
    first and second (or second and third) resonances trade places.
    Bandwidths are ``80 + 0.02 F``.
    """
    a, _ = _clamp(a)
    F = np.sort(_raw_formants(a, lam), axis=-1)
    return F, 80.0 + 0.02 * F


def _synthesize(a: np.ndarray, sp: SpeakerPlant) -> np.ndarray:
    F, B = formant_map(a, sp.lam)
    fc = band_centers()
    ratio = (fc[..., None] - F[..., None, :]) / B[..., None, :]
    energy = np.sum(1.0 / (1.0 + ratio * ratio), axis=-1)
    return np.log(energy + sp.floor)


def synthesize_frame(a, sp: SpeakerPlant) -> np.ndarray:
    """One 18-band acoustic frame for one articulatory vector."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (N_ARTIC,):
        raise ValueError(f"expected a 6-vector, got shape {a.shape}")
    return _synthesize(a, sp)


def synthesize_utterance(traj, sp: SpeakerPlant) -> np.ndarray:
    """Frame-by-frame synthesis of a (T, 6) trajectory into (T, 18)."""
    traj = np.asarray(traj, dtype=np.float64)
    if traj.size == 0:
        return np.zeros((0, N_BANDS))
    if traj.ndim != 2 or traj.shape[1] != N_ARTIC:
        raise ValueError(f"expected a (T, 6) trajectory, got shape {traj.shape}")
    return _synthesize(traj, sp)


class PlantOracle:
    """Black-box access to a speaker plant.

    ``queries`` counts synthesized frames; ``clamped`` counts articulatory
    values that fell outside [-1, 1] and had to be clamped.
    """

    def __init__(self, sp: SpeakerPlant):
        self._plant = sp
        self.queries = 0
        self.clamped = 0

    @property
    def speaker_id(self) -> str:
        return self._plant.speaker_id

    def __call__(self, a_batch: np.ndarray) -> np.ndarray:
        a_batch = np.asarray(a_batch, dtype=np.float64)
        if a_batch.ndim != 2 or a_batch.shape[1] != N_ARTIC:
            raise ValueError(f"expected (N, 6) commands, got {a_batch.shape}")
        a_batch, n_clamped = _clamp(a_batch)
        self.clamped += n_clamped
        self.queries += a_batch.shape[0]
        return _synthesize(a_batch, self._plant)


def estimate_lipschitz(sp: SpeakerPlant, points: np.ndarray, step: float = 1e-4) -> float:
    """Empirical Lipschitz constant of the plant over ``points``.

    The local gain at each point is the largest singular value of a
    forward-difference Jacobian.
    """
    points = np.clip(np.asarray(points, dtype=np.float64), -1.0 + step, 1.0 - step)
    base = _synthesize(points, sp)
    jac = np.empty((points.shape[0], N_BANDS, N_ARTIC))
    for k in range(N_ARTIC):
        shifted = points.copy()
        shifted[:, k] += step
        jac[:, :, k] = (_synthesize(shifted, sp) - base) / step
    return float(np.linalg.norm(jac, ord=2, axis=(1, 2)).max())


def sweep_points(n: int, seed: int = 0) -> np.ndarray:
    """Quasi-random (scrambled Sobol) points filling [-1, 1]^6."""
    from scipy.stats import qmc

    m = math.ceil(math.log2(max(n, 2)))
    pts = qmc.Sobol(N_ARTIC, scramble=True, seed=seed).random_base2(m)[:n]
    return 2.0 * pts - 1.0
