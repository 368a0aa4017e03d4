"""Accommodation learning loop.

Per minibatch:

1. invert the acoustic targets with g (train mode) and send the commands
   to the plant, which answers with the frames they actually produce;
2. fit f to those plant answers (one Adam step, f in train mode);
3. invert again, predict the result with the updated f in infer mode and
   take one Adam step on g against the targets, backpropagating through f
   without touching f's parameters.

The trainer reads only utterance ids and frames.  Ground-truth articulation
and segment labels stay in the corpus for the probes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import numerics as nx
from .corpus import Corpus, Utterance
from .models import (
    ForwardModel,
    InverseModel,
    ModelConfig,
    frozen_chain_backward,
    init_forward,
    init_inverse,
    save_checkpoint,
)
from .numerics import INFER, TRAIN
from .plant import N_BANDS, PlantOracle, SpeakerPlant
from .rng import RngStream

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "rmse_forward", "rmse_inverse", "train_loss_f", "train_loss_g", "wall_time_s"]
CHECKPOINT_NAMES = ("epoch-1", "best", "final")


class TrainingDiverged(RuntimeError):
    pass


class FreezeViolation(RuntimeError):
    pass


@dataclass
class TrainConfig:
    K: int = 8
    lr_f: float = 3e-3
    lr_g: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    recompute_for_inverse: bool = True
    profile: str = "paper"
    exploration_noise: float = 0.0
    verify_freeze: bool = True
    normalize_inputs: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.exploration_noise < 0:
            raise ValueError("exploration_noise must be non-negative")


@dataclass
class EpochMetrics:
    epoch: int
    rmse_forward: float
    rmse_inverse: float
    train_loss_f: float
    train_loss_g: float
    wall_time: float
    rmse_imitation: float = float("nan")
    plant_queries: int = 0

    def csv_row(self) -> list[str]:
        vals = [self.rmse_forward, self.rmse_inverse, self.train_loss_f, self.train_loss_g]
        return [str(self.epoch)] + [f"{v:.17g}" for v in vals] + [f"{self.wall_time:.6f}"]


@dataclass
class RunRecord:
    config: TrainConfig
    model_config: ModelConfig
    metrics: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    checkpoints: dict[str, tuple[ForwardModel, InverseModel]] = field(default_factory=dict)
    freeze_checks: int = 0
    plant_clamped: int = 0
    train_frames: int = 0
    run_dir: Path | None = None
    probes: dict = field(default_factory=dict)

    @property
    def final(self) -> EpochMetrics:
        return self.metrics[-1]


@dataclass
class Streams:
    dropout_f: RngStream
    dropout_g: RngStream
    noise: RngStream

    @classmethod
    def for_seed(cls, seed: int) -> "Streams":
        return cls(RngStream(seed, "dropout/f"), RngStream(seed, "dropout/g"), RngStream(seed, "noise"))


# ---------------------------------------------------------------------------
# Data access
# ---------------------------------------------------------------------------


def frames_only(utterances: list[Utterance]) -> list[tuple[str, np.ndarray]]:
    """The learner's view of a corpus: ids and acoustic frames, nothing else."""
    return [(u.id, u.frames) for u in utterances]


def pad_batch(seqs: list[np.ndarray]):
    """Stack (T_i, 18) sequences into time-major (T_max, K, 18) plus a validity mask."""
    T = max(s.shape[0] for s in seqs)
    S = np.zeros((T, len(seqs), N_BANDS))
    mask = np.zeros((T, len(seqs)), dtype=bool)
    for k, s in enumerate(seqs):
        S[: s.shape[0], k] = s
        mask[: s.shape[0], k] = True
    return S, mask


# ---------------------------------------------------------------------------
# One step
# ---------------------------------------------------------------------------


def accommodation_step(
    S: np.ndarray,
    mask: np.ndarray,
    f: ForwardModel,
    g: InverseModel,
    plant: PlantOracle,
    config: TrainConfig,
    streams: Streams,
    record: RunRecord | None = None,
) -> tuple[float, float]:
    """One accommodation update on a padded minibatch; returns ``(loss_f, loss_g)``.

    Padding frames (``mask == False``) never reach the plant, the losses or
    the gradients.
    """
    targets = S[mask]

    # (i) invert and ground the attempted articulations on the plant
    A, g_cache = g.apply(S, TRAIN, streams.dropout_g)
    a = A[mask]
    if config.exploration_noise > 0:
        a = np.clip(a + config.exploration_noise * streams.noise.normal(a.shape), -0.98, 0.98)
    s_tilde = plant(a)

    # (ii) fit f to the plant's answers
    f_before = None if config.recompute_for_inverse else f.copy()
    s_hat, f_cache = f.apply(a, TRAIN, streams.dropout_f)
    loss_f, d_hat = nx.mse_loss(s_hat, s_tilde)
    f.backward(f_cache, d_hat)
    nx.adam_step(f.store, config.lr_f, config.beta1, config.beta2, config.eps)

    # (iii) imitation update of g through the frozen f
    checksum = f.store.checksum() if config.verify_freeze else None
    if config.recompute_for_inverse:
        A, g_cache = g.apply(S, TRAIN, streams.dropout_g)
        frozen = f
    else:
        frozen = f_before
    s_hat_inv, f_inv_cache = frozen.apply(A[mask], INFER)
    loss_g, d_imit = nx.mse_loss(s_hat_inv, targets)
    frozen_chain_backward(frozen, g, f_inv_cache, g_cache, d_imit, valid=mask)
    nx.adam_step(g.store, config.lr_g, config.beta1, config.beta2, config.eps)
    if checksum is not None:
        if f.store.checksum() != checksum:
            raise FreezeViolation("forward model parameters changed during the inverse update")
        if record is not None:
            record.freeze_checks += 1
    return loss_f, loss_g


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate_split(f: ForwardModel, g: InverseModel, plant, utterances: list[Utterance]):
    """Validation RMSEs in infer mode.

    Returns ``(rmse_forward, rmse_inverse, rmse_imitation)``: f against the
    plant, the plant's rendition against the targets, and f's prediction
    against the targets.  Utterances are processed in id order so the
    result does not depend on the order given.
    """
    if not utterances:
        raise ValueError("cannot evaluate an empty split")
    oracle = plant if isinstance(plant, PlantOracle) else PlantOracle(plant)
    view = sorted(frames_only(utterances), key=lambda item: item[0])
    S, mask = pad_batch([frames for _, frames in view])
    A, _ = g.apply(S, INFER)
    a = A[mask]
    s = S[mask]
    s_tilde = oracle(a)
    s_hat, _ = f.apply(a, INFER)
    n = s.size
    rmse = lambda x, y: math.sqrt(float(np.sum((x - y) ** 2)) / n)  # noqa: E731
    return rmse(s_hat, s_tilde), rmse(s, s_tilde), rmse(s, s_hat)


# ---------------------------------------------------------------------------
# Full run
# ---------------------------------------------------------------------------


def _param_norms(f: ForwardModel, g: InverseModel) -> dict[str, float]:
    return {
        "forward": float(math.sqrt(sum(float(np.sum(p.value**2)) for p in f.store.entries.values()))),
        "inverse": float(math.sqrt(sum(float(np.sum(p.value**2)) for p in g.store.entries.values()))),
    }


def _snapshot(f: ForwardModel, g: InverseModel):
    return f.copy(), g.copy()


def run_training(
    corpus: Corpus,
    agent: SpeakerPlant,
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    run_dir=None,
    on_epoch: Callable[[int, ForwardModel, InverseModel], None] | None = None,
    extra_config: dict | None = None,
) -> RunRecord:
    """Train f and g on the corpus' training split by imitation.

    ``agent`` is the plant the learner speaks with; the corpus may have
    been rendered by another speaker.  ``on_epoch(epoch, f, g)`` is called
    once before training (epoch 0) and after every epoch.  When ``run_dir``
    is given, the config snapshot, the metrics file (appended and flushed
    every epoch) and the epoch-1 / best / final checkpoints are written
    there.
    """
    model_config = model_config or ModelConfig.for_profile(config.profile, init_seed=config.seed)
    train = frames_only(corpus.subset("train"))
    val = corpus.subset("val")
    if not train or not val:
        raise ValueError("corpus needs non-empty train and val splits")

    f = init_forward(model_config, RngStream(model_config.init_seed, "init/forward"))
    g = init_inverse(model_config, RngStream(model_config.init_seed, "init/inverse"))
    if config.normalize_inputs:
        allf = np.concatenate([fr for _, fr in train])
        g.input_mean = allf.mean(axis=0)
        g.input_scale = allf.std(axis=0) + 1e-6
    streams = Streams.for_seed(config.seed)
    train_plant = PlantOracle(agent)
    eval_plant = PlantOracle(agent)
    record = RunRecord(config, model_config, train_frames=sum(fr.shape[0] for _, fr in train))

    metrics_fh = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        record.run_dir = run_dir
        snapshot = {
            "train": asdict(config),
            "model": asdict(model_config),
            "agent": {"speaker": agent.speaker_id, "lambda": agent.lam},
            "corpus": {"seed": corpus.seed, "n": corpus.n, "speaker": corpus.speaker_id, "lambda": corpus.lam},
        }
        snapshot.update(extra_config or {})
        (run_dir / "config.json").write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
        metrics_fh = open(run_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(metrics_fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        metrics_fh.flush()

    def save(name: str):
        record.checkpoints[name] = _snapshot(f, g)
        if run_dir is not None:
            save_checkpoint(run_dir / f"{name}.ckpt", f, g, {"name": name, "epoch": epoch})

    if on_epoch is not None:
        on_epoch(0, f, g)

    best = math.inf
    since_best = 0
    epoch = 0
    try:
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            q0 = train_plant.queries
            order = RngStream(config.seed, f"shuffle/{epoch}").permutation(len(train))
            losses_f, losses_g = [], []
            for start in range(0, len(order), config.K):
                batch = [train[i] for i in order[start : start + config.K]]
                S, mask = pad_batch([frames for _, frames in batch])
                lf, lg = accommodation_step(S, mask, f, g, train_plant, config, streams, record)
                if not (math.isfinite(lf) and math.isfinite(lg)):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} (loss_f={lf}, loss_g={lg}); "
                        f"batch={[uid for uid, _ in batch]}; parameter norms={_param_norms(f, g)}"
                    )
                losses_f.append(lf)
                losses_g.append(lg)
            rf, ri, rm = evaluate_split(f, g, eval_plant, val)
            m = EpochMetrics(
                epoch, rf, ri, float(np.mean(losses_f)), float(np.mean(losses_g)),
                time.perf_counter() - t0, rm, train_plant.queries - q0,
            )
            record.metrics.append(m)
            if metrics_fh is not None:
                writer.writerow(m.csv_row())
                metrics_fh.flush()
            log.info("epoch %d: rmse_forward=%.4f rmse_inverse=%.4f", epoch, rf, ri)
            if epoch == 1:
                save("epoch-1")
            if ri < best:
                best, since_best = ri, 0
                record.best_epoch = epoch
                save("best")
            else:
                since_best += 1
            if on_epoch is not None:
                on_epoch(epoch, f, g)
            if since_best >= config.patience:
                break
        save("final")
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    record.plant_clamped = train_plant.clamped
    if train_plant.clamped:
        log.warning("plant clamped %d command values during training", train_plant.clamped)
    return record


def read_metrics(path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in rows]
