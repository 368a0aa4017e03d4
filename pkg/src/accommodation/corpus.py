"""Synthetic multi-speaker corpora.

An inventory of articulatory targets (vowel-like configurations) is shared
by all speakers.  Utterances are sequences of held targets, smoothed by a
Gaussian kernel and rendered through a speaker's plant.  With a shared
seed, utterance ``i`` has the same articulation for every speaker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .plant import N_ARTIC, N_BANDS, SpeakerPlant, speaker, synthesize_utterance
from .rng import RngStream, splitmix64_next  # noqa: F401  (re-exported)

FORMAT_VERSION = 1
DEFAULT_V = 8
MIN_SEPARATION = 0.5
MAX_INVENTORY_ATTEMPTS = 1000
SMOOTH_SIGMA = 3.0
SMOOTH_RADIUS = 9
TRAJ_CLAMP = 0.98


class GenerationError(RuntimeError):
    pass


class CorpusFormatError(ValueError):
    pass


@dataclass
class Inventory:
    targets: np.ndarray  # (V, 6); label v is row v

    def __len__(self) -> int:
        return self.targets.shape[0]


@dataclass
class Utterance:
    id: str
    speaker_id: str
    frames: np.ndarray
    artic: np.ndarray | None = None
    segments: list[tuple[int, int, int]] | None = None

    def __post_init__(self):
        T = self.frames.shape[0]
        if self.frames.ndim != 2 or self.frames.shape[1] != N_BANDS or T < 1:
            raise ValueError(f"{self.id}: frames must be (T>=1, 18), got {self.frames.shape}")
        if self.artic is not None and self.artic.shape != (T, N_ARTIC):
            raise ValueError(f"{self.id}: artic shape {self.artic.shape} does not match T={T}")
        if self.segments is not None:
            pos = 0
            for _, start, end in self.segments:
                if start != pos or end <= start:
                    raise ValueError(f"{self.id}: segments must tile [0, T) in order")
                pos = end
            if pos != T:
                raise ValueError(f"{self.id}: segments end at {pos}, T={T}")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class CorpusSplit:
    train: list[str]
    val: list[str]
    test: list[str]


@dataclass
class Corpus:
    seed: int
    n: int
    speaker_id: str
    lam: float
    utterances: list[Utterance] = field(default_factory=list)
    split: CorpusSplit = field(default_factory=lambda: CorpusSplit([], [], []))

    def by_id(self) -> dict[str, Utterance]:
        return {u.id: u for u in self.utterances}

    def subset(self, name: str) -> list[Utterance]:
        lookup = self.by_id()
        return [lookup[i] for i in getattr(self.split, name)]

    @property
    def plant(self) -> SpeakerPlant:
        return SpeakerPlant(self.speaker_id, self.lam)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _reference_plant() -> SpeakerPlant:
    return speaker("RS")


def gen_inventory(seed: int, n_targets: int = DEFAULT_V) -> Inventory:
    """Draw targets in [-0.9, 0.9]^6, rejecting acoustically crowded ones.

    A candidate is kept only if its RS-plant frame is at least 0.5 away
    (Euclidean) from every target kept so far.
    """
    stream = RngStream(seed, "inventory")
    rs = _reference_plant()
    targets: list[np.ndarray] = []
    frames: list[np.ndarray] = []
    attempts = 0
    while len(targets) < n_targets:
        if attempts >= MAX_INVENTORY_ATTEMPTS:
            raise GenerationError(
                f"could not place {n_targets} targets {MIN_SEPARATION} apart in {MAX_INVENTORY_ATTEMPTS} draws"
            )
        attempts += 1
        cand = stream.uniform_range(-0.9, 0.9, N_ARTIC)
        frame = synthesize_utterance(cand[None, :], rs)[0]
        if all(np.linalg.norm(frame - other) >= MIN_SEPARATION for other in frames):
            targets.append(cand)
            frames.append(frame)
    return Inventory(np.array(targets).reshape(n_targets, N_ARTIC))


def gaussian_kernel(sigma: float = SMOOTH_SIGMA, radius: int = SMOOTH_RADIUS) -> np.ndarray:
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(k * k) / (2.0 * sigma * sigma))
    return w / w.sum()


def smooth(x: np.ndarray, sigma: float = SMOOTH_SIGMA, radius: int = SMOOTH_RADIUS) -> np.ndarray:
    """Per-column Gaussian smoothing with reflect padding (edge not repeated)."""
    w = gaussian_kernel(sigma, radius)
    padded = np.pad(x, ((radius, radius), (0, 0)), mode="reflect")
    T = x.shape[0]
    out = np.zeros_like(x)
    for j, wj in enumerate(w):
        out += wj * padded[j : j + T]
    return out


@dataclass
class TrajectoryParams:
    min_segments: int = 3
    max_segments: int = 8
    min_hold: int = 8
    max_hold: int = 20
    sigma: float = SMOOTH_SIGMA


def gen_trajectory(inventory: Inventory, stream: RngStream, params: TrajectoryParams | None = None):
    """Held inventory targets, Gaussian-smoothed; returns ``(artic, segments)``.

    Segment boundaries are those of the piecewise-constant sequence before
    smoothing.
    """
    params = params or TrajectoryParams()
    m = stream.integer(params.min_segments, params.max_segments)
    pieces = []
    segments = []
    start = 0
    for _ in range(m):
        label = stream.integer(0, len(inventory) - 1)
        hold = stream.integer(params.min_hold, params.max_hold)
        pieces.append(np.repeat(inventory.targets[label][None, :], hold, axis=0))
        segments.append((label, start, start + hold))
        start += hold
    steps = np.concatenate(pieces, axis=0)
    artic = np.clip(smooth(steps, params.sigma), -TRAJ_CLAMP, TRAJ_CLAMP)
    return artic, segments


def split_sizes(n: int) -> tuple[int, int, int]:
    """``(train, val, test)`` counts: 20% test, then 20% of the rest for validation."""
    n_test = n // 5
    n_val = (n - n_test) // 5
    return n - n_test - n_val, n_val, n_test


def make_split(ids: list[str], seed: int) -> CorpusSplit:
    n_train, n_val, n_test = split_sizes(len(ids))
    if min(n_train, n_val, n_test) < 1:
        raise GenerationError(f"split would be empty for n={len(ids)} (train/val/test = {n_train}/{n_val}/{n_test})")
    order = [ids[i] for i in RngStream(seed, "split").permutation(len(ids))]
    return CorpusSplit(
        train=sorted(order[n_test + n_val :]),
        val=sorted(order[n_test : n_test + n_val]),
        test=sorted(order[:n_test]),
    )


def utterance_id(i: int) -> str:
    return f"utt{i:04d}"


def gen_corpus(
    sp: SpeakerPlant,
    n_utterances: int,
    seed: int,
    n_targets: int = DEFAULT_V,
    params: TrajectoryParams | None = None,
) -> Corpus:
    ids = [utterance_id(i) for i in range(n_utterances)]
    split = make_split(ids, seed)
    inventory = gen_inventory(seed, n_targets)
    utterances = []
    for i, uid in enumerate(ids):
        artic, segments = gen_trajectory(inventory, RngStream(seed, f"traj/{i}"), params)
        frames = synthesize_utterance(artic, sp)
        utterances.append(Utterance(uid, sp.speaker_id, frames, artic, segments))
    return Corpus(seed, n_utterances, sp.speaker_id, sp.lam, utterances, split)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def fmt_float(x: float) -> str:
    return f"{x:.17g}"


def _matrix_json(m: np.ndarray) -> str:
    return "[" + ",".join("[" + ",".join(fmt_float(v) for v in row) + "]" for row in m) + "]"


def _utterance_line(u: Utterance) -> str:
    parts = [
        f'"id":{json.dumps(u.id)}',
        f'"speaker":{json.dumps(u.speaker_id)}',
        f'"frames":{_matrix_json(u.frames)}',
        f'"artic":{"null" if u.artic is None else _matrix_json(u.artic)}',
        f'"segments":{"null" if u.segments is None else json.dumps([list(s) for s in u.segments])}',
    ]
    return "{" + ",".join(parts) + "}"


def write_corpus(corpus: Corpus, path) -> None:
    header = {"format_version": FORMAT_VERSION, "seed": corpus.seed, "n": corpus.n,
              "speaker": corpus.speaker_id, "lambda": corpus.lam}
    header_line = json.dumps(header)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header_line + "\n")
        for u in corpus.utterances:
            fh.write(_utterance_line(u) + "\n")


def _parse_matrix(value, width: int, lineno: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise CorpusFormatError(f"line {lineno}: field {name!r} must be rows of {width} numbers")
    return arr


def read_corpus(path) -> Corpus:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        return Corpus(seed=0, n=0, speaker_id="", lam=1.0)
    try:
        header = json.loads(lines[0])
        if header.get("format_version") != FORMAT_VERSION:
            raise CorpusFormatError(f"line 1: unsupported format_version {header.get('format_version')!r}")
        corpus = Corpus(int(header["seed"]), int(header["n"]), header["speaker"], float(header["lambda"]))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorpusFormatError):
            raise
        raise CorpusFormatError(f"line 1: malformed header ({exc})") from None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frames = _parse_matrix(rec["frames"], N_BANDS, lineno, "frames")
            artic = None if rec["artic"] is None else _parse_matrix(rec["artic"], N_ARTIC, lineno, "artic")
            segments = None if rec["segments"] is None else [tuple(int(v) for v in s) for s in rec["segments"]]
            corpus.utterances.append(Utterance(rec["id"], rec["speaker"], frames, artic, segments))
        except CorpusFormatError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(f"line {lineno}: malformed utterance record ({exc})") from None
    if len(corpus.utterances) != corpus.n:
        raise CorpusFormatError(f"line {len(lines)}: header declares n={corpus.n}, found {len(corpus.utterances)} records")
    if corpus.n:
        corpus.split = make_split([u.id for u in corpus.utterances], corpus.seed)
    return corpus
