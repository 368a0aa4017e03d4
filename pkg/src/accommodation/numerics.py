"""Dense numerics with explicit forward/backward passes.

Tensors are plain float64 numpy arrays.  Each layer is a pair of functions:
``*_forward`` returns the output and whatever the matching ``*_backward``
needs; nothing builds a computation graph.
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .rng import RngStream

DTYPE = np.float64
TRAIN = "train"
INFER = "infer"


class ContractError(ValueError):
    """Arguments violate an operation's shape or type contract."""


class ConfigurationError(ValueError):
    """An operation was asked to run in an unsupported configuration."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity crossed a checked layer boundary."""


class InvalidCheckError(RuntimeError):
    """A gradient check closure is not deterministic."""


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values at {where}")
    return x


def _check_mode(mode: str) -> None:
    if mode not in (TRAIN, INFER):
        raise ConfigurationError(f"mode must be 'train' or 'infer', got {mode!r}")


# ---------------------------------------------------------------------------
# Parameters and Adam
# ---------------------------------------------------------------------------


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray


@dataclass
class ParamStore:
    """Named trainable tensors with their gradients and Adam moments.

    Values are updated in place, so other objects (batch-norm states) may
    hold references to them.
    """

    entries: "OrderedDict[str, Param]" = field(default_factory=OrderedDict)
    step_count: int = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=DTYPE)
        self.entries[name] = Param(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __iter__(self) -> Iterator[str]:
        return iter(self.entries)

    def grad(self, name: str) -> np.ndarray:
        return self.entries[name].grad

    def accumulate(self, name: str, g: np.ndarray) -> None:
        self.entries[name].grad += g

    def zero_grad(self) -> None:
        for p in self.entries.values():
            p.grad.fill(0.0)

    def n_params(self) -> int:
        return sum(p.value.size for p in self.entries.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, p in self.entries.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.value).tobytes())
        return h.hexdigest()

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self.entries.items():
            new = np.asarray(values[name], dtype=DTYPE)
            if new.shape != p.value.shape:
                raise ContractError(f"{name}: shape {new.shape} != {p.value.shape}")
            p.value[...] = new


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One bias-corrected Adam update in place; gradients are zeroed after."""
    store.step_count += 1
    t = store.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in store.entries.values():
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * p.grad
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * p.grad * p.grad
        p.value -= lr * (p.adam_m / c1) / (np.sqrt(p.adam_v / c2) + eps)
        p.grad.fill(0.0)
    return store


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


def dense_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or W.ndim != 2 or b.ndim != 1 or x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ContractError(f"dense_forward: x{x.shape} W{W.shape} b{b.shape}")
    return x @ W + b


def dense_backward(x: np.ndarray, W: np.ndarray, dy: np.ndarray):
    """Returns ``(dx, dW, db)``."""
    if dy.ndim != 2 or dy.shape[0] != x.shape[0] or dy.shape[1] != W.shape[1] or x.shape[1] != W.shape[0]:
        raise ContractError(f"dense_backward: x{x.shape} W{W.shape} dy{dy.shape}")
    return dy @ W.T, x.T @ dy, dy.sum(axis=0)


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    @classmethod
    def create(cls, gamma: np.ndarray, beta: np.ndarray, momentum: float = 0.9, epsilon: float = 1e-5):
        d = gamma.shape[0]
        return cls(gamma, beta, np.zeros(d, dtype=DTYPE), np.ones(d, dtype=DTYPE), momentum, epsilon)


def batchnorm_forward(x: np.ndarray, state: BatchNormState, mode: str):
    """Batch normalization over axis 0.

    Train mode normalizes by the batch's biased statistics and moves the
    running statistics toward them (``running = m * running + (1-m) * batch``).
    Infer mode normalizes by the running statistics.
    """
    _check_mode(mode)
    if x.ndim != 2 or x.shape[1] != state.gamma.shape[0]:
        raise ContractError(f"batchnorm_forward: x{x.shape} features {state.gamma.shape}")
    if mode == TRAIN:
        if x.shape[0] < 2:
            raise ConfigurationError("batch normalization in train mode needs a batch of at least 2")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1.0 - m) * mean
        state.running_var[...] = m * state.running_var + (1.0 - m) * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = (x - mean) * inv_std
    y = state.gamma * xhat + state.beta
    return y, {"op": "batchnorm", "mode": mode, "xhat": xhat, "inv_std": inv_std, "gamma": state.gamma}


def batchnorm_backward(cache: dict, dy: np.ndarray):
    """Returns ``(dx, dgamma, dbeta)`` for a cache from :func:`batchnorm_forward`."""
    if cache.get("op") != "batchnorm":
        raise ContractError("batchnorm_backward needs a batchnorm_forward cache")
    xhat, inv_std, gamma = cache["xhat"], cache["inv_std"], cache["gamma"]
    if dy.shape != xhat.shape:
        raise ContractError(f"batchnorm_backward: dy{dy.shape} vs {xhat.shape}")
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    if cache["mode"] == INFER:
        return dxhat * inv_std, dgamma, dbeta
    n = dy.shape[0]
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def dropout_forward(x: np.ndarray, p: float, stream: RngStream | None, mode: str):
    """Inverted dropout; returns ``(y, mask)`` with a 0/1 mask."""
    _check_mode(mode)
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if mode == INFER or p == 0.0:
        return x, np.ones_like(x)
    if stream is None:
        raise ConfigurationError("train-mode dropout needs an RNG stream")
    mask = (stream.uniform(x.shape) < 1.0 - p).astype(DTYPE)
    return x * mask / (1.0 - p), mask


def dropout_apply_mask(x: np.ndarray, mask: np.ndarray, p: float) -> np.ndarray:
    return x * mask / (1.0 - p)


def dropout_backward(mask: np.ndarray, p: float, dy: np.ndarray) -> np.ndarray:
    return dy * mask / (1.0 - p)


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------
# Gate blocks along the last axis of W (Din x 4H), U (H x 4H), b (4H) are
# ordered input, forget, output, candidate.


def _lstm_shapes(x: np.ndarray, h_prev: np.ndarray, params) -> int:
    W, U, b = params["W"], params["U"], params["b"]
    H = U.shape[0]
    if (
        W.shape != (x.shape[-1], 4 * H)
        or U.shape != (H, 4 * H)
        or b.shape != (4 * H,)
        or h_prev.shape[-1] != H
    ):
        raise ContractError(f"lstm: x{x.shape} h{h_prev.shape} W{W.shape} U{U.shape} b{b.shape}")
    return H


def _lstm_gates(z: np.ndarray, H: int):
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H : 2 * H])
    o = sigmoid(z[:, 2 * H : 3 * H])
    g = np.tanh(z[:, 3 * H :])
    return i, f, o, g


def lstm_cell_forward(x_t, h_prev, c_prev, params):
    """One LSTM step; returns ``(h_t, c_t, cache)``."""
    H = _lstm_shapes(x_t, h_prev, params)
    z = x_t @ params["W"] + h_prev @ params["U"] + params["b"]
    i, f, o, g = _lstm_gates(z, H)
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = {"x": x_t, "h_prev": h_prev, "c_prev": c_prev, "gates": (i, f, o, g), "tc": tc, "params": params}
    return h, c, cache


def _lstm_cell_dz(gates, tc, c_prev, dh, dc):
    i, f, o, g = gates
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * g * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dh * tc * o * (1.0 - o),
            dc * i * (1.0 - g * g),
        ],
        axis=1,
    )
    return dz, dc * f


def lstm_cell_backward(cache, dh_t, dc_t):
    """Returns ``(dx_t, dh_prev, dc_prev, dparams)`` for one step."""
    if "gates" not in cache:
        raise ContractError("lstm_cell_backward needs an lstm_cell_forward cache")
    params = cache["params"]
    dz, dc_prev = _lstm_cell_dz(cache["gates"], cache["tc"], cache["c_prev"], dh_t, dc_t)
    dparams = {"W": cache["x"].T @ dz, "U": cache["h_prev"].T @ dz, "b": dz.sum(axis=0)}
    return dz @ params["W"].T, dz @ params["U"].T, dc_prev, dparams


def lstm_sequence_forward(x: np.ndarray, params, h0=None, c0=None):
    """Run an LSTM over a time-major batch ``x`` of shape (T, N, Din).

    Equivalent to looping :func:`lstm_cell_forward`; the input projection is
    done for all steps at once.  Returns ``(h_seq, cache)``.
    """
    T, N, _ = x.shape
    U = params["U"]
    H = U.shape[0]
    h = np.zeros((N, H), dtype=DTYPE) if h0 is None else h0
    c = np.zeros((N, H), dtype=DTYPE) if c0 is None else c0
    _lstm_shapes(x[0] if T else np.zeros((N, x.shape[2])), h, params)
    zx = (x.reshape(T * N, -1) @ params["W"]).reshape(T, N, 4 * H) + params["b"]
    hs = np.empty((T + 1, N, H), dtype=DTYPE)
    cs = np.empty((T + 1, N, H), dtype=DTYPE)
    gates = np.empty((T, 4, N, H), dtype=DTYPE)
    tcs = np.empty((T, N, H), dtype=DTYPE)
    hs[0], cs[0] = h, c
    for t in range(T):
        z = zx[t] + hs[t] @ U
        i, f, o, g = _lstm_gates(z, H)
        cs[t + 1] = f * cs[t] + i * g
        tcs[t] = np.tanh(cs[t + 1])
        hs[t + 1] = o * tcs[t]
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, o, g
    cache = {"x": x, "hs": hs, "cs": cs, "gates": gates, "tcs": tcs, "params": params}
    return hs[1:], cache


def lstm_sequence_backward(cache, dh_seq: np.ndarray):
    """Backpropagation through time.  Returns ``(dx_seq, dparams)``."""
    x, hs, cs, gates, tcs, params = (cache[k] for k in ("x", "hs", "cs", "gates", "tcs", "params"))
    T, N, Din = x.shape
    H = hs.shape[2]
    W, U = params["W"], params["U"]
    dz_all = np.empty((T, N, 4 * H), dtype=DTYPE)
    dh = np.zeros((N, H), dtype=DTYPE)
    dc = np.zeros((N, H), dtype=DTYPE)
    for t in range(T - 1, -1, -1):
        dz, dc = _lstm_cell_dz(tuple(gates[t]), tcs[t], cs[t], dh + dh_seq[t], dc)
        dz_all[t] = dz
        dh = dz @ U.T
    dz_flat = dz_all.reshape(T * N, 4 * H)
    dparams = {
        "W": x.reshape(T * N, Din).T @ dz_flat,
        "U": hs[:-1].reshape(T * N, H).T @ dz_flat,
        "b": dz_flat.sum(axis=0),
    }
    dx = (dz_flat @ W.T).reshape(T, N, Din)
    return dx, dparams


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean of squared differences over all entries; returns ``(loss, dpred)``."""
    if pred.shape != target.shape:
        raise ContractError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    n_checked: int
    tolerance: float
    worst: tuple[str, tuple[int, ...]] | None

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    closure: Callable[[ParamStore], float],
    store: ParamStore,
    tolerance: float,
    h: float = 1e-5,
    max_per_entry: int | None = 20,
    seed: int = 0,
    floor: float = 1e-6,
    names: list[str] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``closure(store)`` must return the scalar loss at the store's current
    values and accumulate analytic gradients into ``store``.  Up to
    ``max_per_entry`` entries per parameter are sampled (all of them when
    None).  Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    store.zero_grad()
    loss0 = closure(store)
    analytic = {name: store.grad(name).copy() for name in store}
    store.zero_grad()
    if closure(store) != loss0:
        raise InvalidCheckError("closure returned different losses for identical parameters")
    rng = np.random.default_rng(seed)
    worst_err, worst, n_checked = 0.0, None, 0
    for name in names or list(store):
        value = store[name]
        flat = value.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_entry is not None and flat.size > max_per_entry:
            idx = rng.choice(flat.size, size=max_per_entry, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            store.zero_grad()
            lp = closure(store)
            flat[k] = orig - h
            store.zero_grad()
            lm = closure(store)
            flat[k] = orig
            num = (lp - lm) / (2.0 * h)
            ana = analytic[name].reshape(-1)[k]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            n_checked += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (name, np.unravel_index(k, value.shape))
    store.zero_grad()
    return GradCheckReport(worst_err, n_checked, tolerance, worst)
