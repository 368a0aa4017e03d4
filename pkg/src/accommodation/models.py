"""Forward model f (articulation -> acoustics) and inverse model g.

f is framewise: four blocks of dense -> batch-norm -> tanh -> dropout,
then a linear head to 18 bands.  g is causal and recurrent: two stacked
LSTM layers with dropout, a time-distributed dense layer to 6 outputs and
a tanh squash that keeps commands inside the plant's domain.  g first
standardizes each input band with fixed statistics (``input_mean``,
``input_scale``) set from the training frames.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import INFER, TRAIN, BatchNormState, ContractError, ParamStore
from .plant import N_ARTIC, N_BANDS
from .rng import RngStream

CHECKPOINT_VERSION = 1
PROFILE_WIDTHS = {"paper": 256, "desk": 64}


@dataclass
class ModelConfig:
    hidden_width: int = 256
    n_hidden_layers: int = 4
    lstm_cells: int = 32
    dropout_p: float = 0.25
    init_seed: int = 0

    def __post_init__(self):
        if self.hidden_width < 1 or self.lstm_cells < 1 or self.n_hidden_layers < 1:
            raise ValueError("model widths must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @classmethod
    def for_profile(cls, profile: str, **overrides) -> "ModelConfig":
        if profile not in PROFILE_WIDTHS:
            raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILE_WIDTHS)}")
        return cls(hidden_width=PROFILE_WIDTHS[profile], **overrides)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _uniform(stream: RngStream, shape, bound: float) -> np.ndarray:
    return stream.uniform_range(-bound, bound, shape)


class ForwardModel:
    def __init__(self, config: ModelConfig, store: ParamStore, bn: list[BatchNormState]):
        self.config = config
        self.store = store
        self.bn = bn
        self.debug = False

    @property
    def widths(self) -> list[int]:
        return [N_ARTIC] + [self.config.hidden_width] * self.config.n_hidden_layers + [N_BANDS]

    def apply(self, a: np.ndarray, mode: str, stream: RngStream | None = None):
        """Map (N, 6) commands to (N, 18) predicted frames; returns ``(y, cache)``."""
        if a.ndim != 2 or a.shape[1] != N_ARTIC:
            raise ContractError(f"forward model expects (N, 6) input, got {a.shape}")
        p = self.config.dropout_p
        s = self.store
        x = a
        blocks = []
        for k in range(1, self.config.n_hidden_layers + 1):
            z = nx.dense_forward(x, s[f"dense{k}.W"], s[f"dense{k}.b"])
            zn, bn_cache = nx.batchnorm_forward(z, self.bn[k - 1], mode)
            h = nx.tanh_forward(zn)
            out, mask = nx.dropout_forward(h, p, stream, mode)
            blocks.append((x, bn_cache, h, mask))
            x = out
        y = nx.dense_forward(x, s["head.W"], s["head.b"])
        if self.debug:
            nx.check_finite(y, "forward model output")
        return y, {"mode": mode, "blocks": blocks, "head_in": x}

    def backward(self, cache, dy: np.ndarray, accumulate: bool = True) -> np.ndarray:
        """Gradient w.r.t. the input commands.

        With ``accumulate=False`` no parameter gradient is touched; this is
        how the inverse update sees f as a frozen function.
        """
        s = self.store
        p = self.config.dropout_p
        dx, dW, db = nx.dense_backward(cache["head_in"], s["head.W"], dy)
        if accumulate:
            s.accumulate("head.W", dW)
            s.accumulate("head.b", db)
        for k in range(self.config.n_hidden_layers, 0, -1):
            x, bn_cache, h, mask = cache["blocks"][k - 1]
            dh = nx.dropout_backward(mask, p, dx) if cache["mode"] == TRAIN else dx
            dzn = nx.tanh_backward(h, dh)
            dz, dgamma, dbeta = nx.batchnorm_backward(bn_cache, dzn)
            dx, dW, db = nx.dense_backward(x, s[f"dense{k}.W"], dz)
            if accumulate:
                s.accumulate(f"bn{k}.gamma", dgamma)
                s.accumulate(f"bn{k}.beta", dbeta)
                s.accumulate(f"dense{k}.W", dW)
                s.accumulate(f"dense{k}.b", db)
        return dx

    def copy(self) -> "ForwardModel":
        return copy.deepcopy(self)


class InverseModel:
    def __init__(self, config: ModelConfig, store: ParamStore):
        self.config = config
        self.store = store
        self.debug = False
        self.input_mean = np.zeros(N_BANDS)
        self.input_scale = np.ones(N_BANDS)

    def _lstm(self, k: int):
        s = self.store
        return {"W": s[f"lstm{k}.W"], "U": s[f"lstm{k}.U"], "b": s[f"lstm{k}.b"]}

    def apply(self, s_seq: np.ndarray, mode: str, stream: RngStream | None = None):
        """Map acoustic sequences to commands in (-1, 1).

        Accepts (T, 18) or time-major (T, N, 18); the output has the same
        leading shape with 6 trailing features.  LSTM states start at zero.
        """
        single = s_seq.ndim == 2
        x = s_seq[:, None, :] if single else s_seq
        if x.ndim != 3 or x.shape[2] != N_BANDS:
            raise ContractError(f"inverse model expects (T, [N,] 18) input, got {s_seq.shape}")
        T, N, _ = x.shape
        p = self.config.dropout_p
        x = (x - self.input_mean) / self.input_scale
        h1, c1 = nx.lstm_sequence_forward(x, self._lstm(1))
        d1, m1 = nx.dropout_forward(h1, p, stream, mode)
        h2, c2 = nx.lstm_sequence_forward(d1, self._lstm(2))
        d2, m2 = nx.dropout_forward(h2, p, stream, mode)
        flat = d2.reshape(T * N, -1)
        a = np.tanh(nx.dense_forward(flat, self.store["head.W"], self.store["head.b"])).reshape(T, N, N_ARTIC)
        if self.debug:
            nx.check_finite(a, "inverse model output")
        cache = {"mode": mode, "single": single, "c1": c1, "c2": c2, "m1": m1, "m2": m2, "flat": flat, "a": a}
        return (a[:, 0, :] if single else a), cache

    def backward(self, cache, da: np.ndarray) -> None:
        """Accumulate parameter gradients for upstream gradient ``da``."""
        s = self.store
        p = self.config.dropout_p
        if cache["single"]:
            da = da[:, None, :]
        a = cache["a"]
        T, N, _ = a.shape
        dzh = (da * (1.0 - a * a)).reshape(T * N, N_ARTIC)
        dflat, dW, db = nx.dense_backward(cache["flat"], s["head.W"], dzh)
        s.accumulate("head.W", dW)
        s.accumulate("head.b", db)
        dd2 = dflat.reshape(T, N, -1)
        dh2 = nx.dropout_backward(cache["m2"], p, dd2) if cache["mode"] == TRAIN else dd2
        dd1, g2 = nx.lstm_sequence_backward(cache["c2"], dh2)
        dh1 = nx.dropout_backward(cache["m1"], p, dd1) if cache["mode"] == TRAIN else dd1
        _, g1 = nx.lstm_sequence_backward(cache["c1"], dh1)
        for k, grads in ((1, g1), (2, g2)):
            for key, g in grads.items():
                s.accumulate(f"lstm{k}.{key}", g)

    def copy(self) -> "InverseModel":
        return copy.deepcopy(self)


def init_forward(config: ModelConfig, stream: RngStream | None = None) -> ForwardModel:
    """Glorot-uniform weights, zero biases, unit batch-norm scale."""
    stream = stream or RngStream(config.init_seed, "init/forward")
    store = ParamStore()
    bn = []
    widths = [N_ARTIC] + [config.hidden_width] * config.n_hidden_layers + [N_BANDS]
    for k in range(1, config.n_hidden_layers + 1):
        fi, fo = widths[k - 1], widths[k]
        store.add(f"dense{k}.W", _uniform(stream, (fi, fo), glorot_bound(fi, fo)))
        store.add(f"dense{k}.b", np.zeros(fo))
        gamma = store.add(f"bn{k}.gamma", np.ones(fo))
        beta = store.add(f"bn{k}.beta", np.zeros(fo))
        bn.append(BatchNormState.create(gamma, beta))
    fi = widths[-2]
    store.add("head.W", _uniform(stream, (fi, N_BANDS), glorot_bound(fi, N_BANDS)))
    store.add("head.b", np.zeros(N_BANDS))
    return ForwardModel(config, store, bn)


def init_inverse(config: ModelConfig, stream: RngStream | None = None) -> InverseModel:
    """Glorot-uniform per gate matrix, zero biases except forget-gate bias 1."""
    stream = stream or RngStream(config.init_seed, "init/inverse")
    H = config.lstm_cells
    store = ParamStore()
    for k, din in ((1, N_BANDS), (2, H)):
        W = np.concatenate([_uniform(stream, (din, H), glorot_bound(din, H)) for _ in range(4)], axis=1)
        U = np.concatenate([_uniform(stream, (H, H), glorot_bound(H, H)) for _ in range(4)], axis=1)
        b = np.zeros(4 * H)
        b[H : 2 * H] = 1.0
        store.add(f"lstm{k}.W", W)
        store.add(f"lstm{k}.U", U)
        store.add(f"lstm{k}.b", b)
    store.add("head.W", _uniform(stream, (H, N_ARTIC), glorot_bound(H, N_ARTIC)))
    store.add("head.b", np.zeros(N_ARTIC))
    return InverseModel(config, store)


def forward_apply(f: ForwardModel, a_batch: np.ndarray, mode: str = INFER, stream: RngStream | None = None):
    return f.apply(a_batch, mode, stream)[0]


def inverse_apply(g: InverseModel, s_seq: np.ndarray, mode: str = INFER, stream: RngStream | None = None):
    return g.apply(s_seq, mode, stream)[0]


def frozen_chain_backward(f: ForwardModel, g: InverseModel, f_cache, g_cache, dshat: np.ndarray, valid=None):
    """Push the imitation-error gradient through a frozen f into g.

    ``dshat`` is dL/d(s_hat) for the frames f was applied to.  When g ran
    on a padded batch, ``valid`` is the (T, N) mask that selected those
    frames.  f's parameter gradients are never written.  Returns dL/da.
    """
    if f_cache.get("mode") != INFER:
        raise ContractError("frozen-chain backward needs f applied in infer mode")
    if "a" not in g_cache:
        raise ContractError("missing inverse model cache")
    da_frames = f.backward(f_cache, dshat, accumulate=False)
    a = g_cache["a"]
    if valid is None:
        da = da_frames.reshape((a.shape[0], N_ARTIC) if g_cache["single"] else a.shape)
    else:
        da = np.zeros(a.shape)
        da[valid] = da_frames
    g.backward(g_cache, da)
    return da


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _fmt(values: np.ndarray) -> str:
    return "[" + ",".join(f"{v:.17g}" for v in np.asarray(values).reshape(-1)) + "]"


def _store_json(store: ParamStore) -> str:
    items = [
        f'{{"name":{json.dumps(name)},"shape":{json.dumps(list(p.value.shape))},"data":{_fmt(p.value)}}}'
        for name, p in store.entries.items()
    ]
    return "[" + ",".join(items) + "]"


def checkpoint_text(f: ForwardModel, g: InverseModel, meta: dict | None = None) -> str:
    bn = ",".join(f'{{"running_mean":{_fmt(b.running_mean)},"running_var":{_fmt(b.running_var)}}}' for b in f.bn)
    return (
        "{"
        f'"format_version":{CHECKPOINT_VERSION},'
        f'"meta":{json.dumps(meta or {}, sort_keys=True)},'
        f'"config":{json.dumps(asdict(f.config), sort_keys=True)},'
        f'"forward":{{"entries":{_store_json(f.store)},"batchnorm":[{bn}]}},'
        f'"inverse":{{"entries":{_store_json(g.store)},'
        f'"input_mean":{_fmt(g.input_mean)},"input_scale":{_fmt(g.input_scale)}}}'
        "}\n"
    )


def save_checkpoint(path, f: ForwardModel, g: InverseModel, meta: dict | None = None) -> None:
    Path(path).write_text(checkpoint_text(f, g, meta), encoding="utf-8")


def _entries(records) -> dict[str, np.ndarray]:
    return {r["name"]: np.array(r["data"], dtype=np.float64).reshape(r["shape"]) for r in records}


def load_checkpoint(path):
    """Returns ``(f, g, meta)``; infer-mode outputs match the saved models exactly."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    config = ModelConfig(**doc["config"])
    f = init_forward(config, RngStream(0, "checkpoint"))
    f.store.load_values(_entries(doc["forward"]["entries"]))
    for state, rec in zip(f.bn, doc["forward"]["batchnorm"]):
        state.running_mean[...] = rec["running_mean"]
        state.running_var[...] = rec["running_var"]
    g = init_inverse(config, RngStream(0, "checkpoint"))
    g.store.load_values(_entries(doc["inverse"]["entries"]))
    g.input_mean = np.array(doc["inverse"]["input_mean"], dtype=np.float64)
    g.input_scale = np.array(doc["inverse"]["input_scale"], dtype=np.float64)
    return f, g, doc["meta"]
