"""Evaluation probes for trained runs.

* offset probe: how well f predicts the plant around the commands g
  actually produces, as a function of distance from them;
* correctness proxy: nearest-prototype phoneme classification of the
  plant's rendition of g's commands, segment by segment;
* articulatory recovery: g's commands against the generating trajectory
  (only meaningful for self-imitation, and high values do not imply bad
  imitation since several configurations can produce the same frames).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .corpus import Inventory, Utterance
from .models import ForwardModel, InverseModel
from .numerics import INFER
from .plant import ARTIC_NAMES, N_ARTIC, SpeakerPlant, synthesize_utterance
from .rng import RngStream

OFFSET_MAX = 1.5
N_BINS = 10
PROBE_CLAMP = 0.98


@dataclass
class OffsetProbeResult:
    epoch_tag: str
    samples: np.ndarray  # (n, 2): distance, error
    bin_edges: np.ndarray
    bin_mean_error: np.ndarray
    bin_count: np.ndarray

    def bins(self) -> list[tuple[float, float, float, int]]:
        return [
            (float(self.bin_edges[i]), float(self.bin_edges[i + 1]), float(self.bin_mean_error[i]), int(self.bin_count[i]))
            for i in range(len(self.bin_count))
        ]

    @property
    def nearest_bin_error(self) -> float:
        return float(self.bin_mean_error[np.flatnonzero(self.bin_count)[0]])

    def spearman(self) -> float:
        """Rank correlation between bin index and mean error over non-empty bins."""
        filled = np.flatnonzero(self.bin_count)
        return float(spearmanr(filled, self.bin_mean_error[filled])[0])


@dataclass
class CorrectnessCurve:
    speaker_id: str
    seed: int
    epochs: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def add(self, epoch: int, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"correctness {value} outside [0, 1]")
        self.epochs.append(epoch)
        self.values.append(value)


def _commands(g: InverseModel, utterances: list[Utterance]) -> list[np.ndarray]:
    return [g.apply(u.frames, INFER)[0] for u in utterances]


def bin_samples(distance: np.ndarray, error: np.ndarray, n_bins: int = N_BINS):
    """Equal-width bins over [0, max distance]; returns ``(edges, mean_error, count)``."""
    edges = np.linspace(0.0, float(distance.max()) if distance.size else 0.0, n_bins + 1)
    if edges[-1] > 0:
        idx = np.minimum((distance / edges[-1] * n_bins).astype(int), n_bins - 1)
    else:
        idx = np.zeros(distance.shape, dtype=int)
    count = np.bincount(idx, minlength=n_bins)
    total = np.bincount(idx, weights=error, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return edges, mean, count


def probe_forward_accuracy(
    g: InverseModel,
    f: ForwardModel,
    plant: SpeakerPlant,
    test_set: list[Utterance],
    n_offsets_per_frame: int = 1,
    stream: RngStream | None = None,
    max_offset: float = OFFSET_MAX,
    n_bins: int = N_BINS,
    epoch_tag: str = "final",
) -> OffsetProbeResult:
    """Forward-model error around g's own commands.

    Each command is displaced in a uniformly random direction by a
    magnitude uniform in [0, max_offset], clamped to +-0.98, and f's
    prediction there is compared with the plant (Euclidean error).
    """
    if not test_set:
        raise ValueError("offset probe needs a non-empty test set")
    stream = stream or RngStream(0, "probe")
    a = np.concatenate(_commands(g, test_set))
    a = np.repeat(a, n_offsets_per_frame, axis=0)
    direction = stream.normal(a.shape)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    magnitude = stream.uniform_range(0.0, max_offset, a.shape[0])
    shifted = np.clip(a + magnitude[:, None] * direction, -PROBE_CLAMP, PROBE_CLAMP)
    distance = np.linalg.norm(shifted - a, axis=1)
    predicted, _ = f.apply(shifted, INFER)
    error = np.linalg.norm(predicted - synthesize_utterance(shifted, plant), axis=1)
    edges, mean, count = bin_samples(distance, error, n_bins)
    return OffsetProbeResult(epoch_tag, np.column_stack([distance, error]), edges, mean, count)


def central_frames(start: int, end: int, keep: float = 0.5) -> slice:
    """The middle ``keep`` fraction of [start, end); the whole segment if that leaves < 2 frames."""
    trim = int((end - start) * (1.0 - keep) / 2.0)
    if end - start - 2 * trim < 2:
        return slice(start, end)
    return slice(start + trim, end - trim)


def classify_segments(
    produced: list[np.ndarray], test_set: list[Utterance], prototypes: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-prototype labels of segment means; returns ``(predicted, true)``."""
    predicted, true = [], []
    for frames, utt in zip(produced, test_set):
        if utt.segments is None:
            raise ValueError(f"{utt.id}: correctness needs segment labels")
        for label, start, end in utt.segments:
            mean = frames[central_frames(start, end)].mean(axis=0)
            predicted.append(int(np.argmin(np.linalg.norm(prototypes - mean, axis=1))))
            true.append(label)
    return np.array(predicted, dtype=int), np.array(true, dtype=int)


def probe_correctness(
    g: InverseModel,
    agent: SpeakerPlant,
    test_set: list[Utterance],
    inventory: Inventory,
) -> float:
    """Fraction of labelled segments whose production is classified correctly.

    Productions are the agent plant's rendition of g's commands; prototypes
    are the agent plant's rendition of the inventory targets.
    """
    produced = [synthesize_utterance(a, agent) for a in _commands(g, test_set)]
    prototypes = synthesize_utterance(inventory.targets, agent)
    predicted, true = classify_segments(produced, test_set, prototypes)
    if true.size == 0:
        raise ValueError("no labelled segments in the test set")
    return float(np.mean(predicted == true))


def probe_articulatory_recovery(g: InverseModel, test_set: list[Utterance]) -> dict[str, float]:
    """Per-dimension and overall RMSE of g's commands against ground truth."""
    if any(u.artic is None for u in test_set):
        raise ValueError("articulatory recovery needs ground-truth trajectories")
    est = np.concatenate(_commands(g, test_set))
    truth = np.concatenate([u.artic for u in test_set])
    sq = (est - truth) ** 2
    out = {name: float(np.sqrt(sq[:, k].mean())) for k, name in enumerate(ARTIC_NAMES[:N_ARTIC])}
    out["overall"] = float(np.sqrt(sq.mean()))
    return out


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def write_offset_probe(results: list[OffsetProbeResult], bins_path, raw_path) -> None:
    with open(bins_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch_tag", "bin_lo", "bin_hi", "mean_error", "count"])
        for r in results:
            for lo, hi, mean, count in r.bins():
                w.writerow([r.epoch_tag, f"{lo:.17g}", f"{hi:.17g}", f"{mean:.17g}", count])
    with open(raw_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch_tag", "distance", "error"])
        for r in results:
            for d, e in r.samples:
                w.writerow([r.epoch_tag, f"{d:.17g}", f"{e:.17g}"])


def write_correctness(curves: list[CorrectnessCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "speaker", "seed", "correctness"])
        for c in curves:
            for epoch, value in zip(c.epochs, c.values):
                w.writerow([epoch, c.speaker_id, c.seed, f"{value:.17g}"])
