"""
Layers Service - Differentiable building blocks for the text classifiers

Each operation has a forward function returning ``(output, cache)`` and a
backward function mapping the upstream gradient (plus the cache) to the
input gradient and parameter gradients. Layer objects wrap those functions,
own named parameters, and keep no per-call state, so a trained model can be
shared between threads for inference.

Shapes: sequences are ``batch x time x channels``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, softmax

from services.errors import NumericError, ShapeError

RECURRENT_KINDS = ("LSTM", "GRU")
RECURRENT_INIT_SCALE = 0.05


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


# ── Convolution / pooling ────────────────────────────────────

def conv1d(inputs: np.ndarray, kernels: np.ndarray, bias: np.ndarray):
    """Valid cross-correlation along time followed by ReLU.

    inputs: B x T x C, kernels: K x w x C, bias: K -> B x (T-w+1) x K
    """
    width = kernels.shape[1]
    if inputs.shape[1] < width:
        raise ShapeError(f"conv1d needs at least {width} timesteps, got {inputs.shape[1]}")
    if inputs.shape[2] != kernels.shape[2]:
        raise ShapeError(f"conv1d expects {kernels.shape[2]} channels, got {inputs.shape[2]}")
    windows = sliding_window_view(inputs, width, axis=1).transpose(0, 1, 3, 2)
    pre = np.einsum("btwc,kwc->btk", windows, kernels) + bias
    out = np.maximum(pre, 0.0)
    return out, (inputs.shape, windows, pre, kernels)


def conv1d_backward(grad: np.ndarray, cache):
    in_shape, windows, pre, kernels = cache
    dpre = grad * (pre > 0)
    dkernels = np.einsum("btwc,btk->kwc", windows, dpre)
    dbias = dpre.sum(axis=(0, 1))
    dinputs = np.zeros(in_shape)
    steps = pre.shape[1]
    for j in range(kernels.shape[1]):
        dinputs[:, j:j + steps, :] += dpre @ kernels[:, j, :]
    return dinputs, dkernels, dbias


def maxpool1d(inputs: np.ndarray, pool: int):
    """Non-overlapping max over windows of ``pool`` steps; the remainder is dropped."""
    batch, steps, channels = inputs.shape
    if steps < pool:
        raise ShapeError(f"maxpool1d needs at least {pool} timesteps, got {steps}")
    out_steps = steps // pool
    grouped = inputs[:, : out_steps * pool].reshape(batch, out_steps, pool, channels)
    arg = grouped.argmax(axis=2)
    out = np.take_along_axis(grouped, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (inputs.shape, arg, pool)


def maxpool1d_backward(grad: np.ndarray, cache):
    in_shape, arg, pool = cache
    batch, out_steps, channels = grad.shape
    # first index wins on ties (argmax semantics)
    route = np.arange(pool)[None, None, :, None] == arg[:, :, None, :]
    dgrouped = route * grad[:, :, None, :]
    dinputs = np.zeros(in_shape)
    dinputs[:, : out_steps * pool] = dgrouped.reshape(batch, out_steps * pool, channels)
    return dinputs


def global_maxpool(inputs: np.ndarray):
    """Max over time, keeping a length-1 time axis."""
    arg = inputs.argmax(axis=1)
    out = np.take_along_axis(inputs, arg[:, None, :], axis=1)
    return out, (inputs.shape, arg)


def global_maxpool_backward(grad: np.ndarray, cache):
    in_shape, arg = cache
    dinputs = np.zeros(in_shape)
    np.put_along_axis(dinputs, arg[:, None, :], grad, axis=1)
    return dinputs


# ── Recurrent cells ──────────────────────────────────────────

@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray | None = None


def recurrent_cell_step(kind: str, x_t: np.ndarray, state: CellState, params: dict, mask: np.ndarray | None = None):
    """One LSTM or GRU step. ``mask`` is the (pre-scaled) input dropout mask.

    LSTM params: W ((C+H) x 4H, gate columns i|f|o|g), b (4H)
    GRU params:  W_zr ((C+H) x 2H, columns z|r), b_zr, W_h ((C+H) x H), b_h
    """
    x_in = x_t if mask is None else x_t * mask
    h = state.h
    units = h.shape[1]
    if kind == "LSTM":
        joined = np.concatenate([x_in, h], axis=1)
        act = joined @ params["W"] + params["b"]
        i = expit(act[:, :units])
        f = expit(act[:, units:2 * units])
        o = expit(act[:, 2 * units:3 * units])
        g = np.tanh(act[:, 3 * units:])
        c_new = f * state.c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        cache = (kind, joined, i, f, o, g, state.c, tanh_c, mask)
        new_state = CellState(h_new, c_new)
    elif kind == "GRU":
        joined = np.concatenate([x_in, h], axis=1)
        act = joined @ params["W_zr"] + params["b_zr"]
        z = expit(act[:, :units])
        r = expit(act[:, units:])
        candidate_in = np.concatenate([x_in, r * h], axis=1)
        candidate = np.tanh(candidate_in @ params["W_h"] + params["b_h"])
        h_new = (1.0 - z) * h + z * candidate
        cache = (kind, joined, candidate_in, z, r, candidate, h, mask)
        new_state = CellState(h_new)
    else:
        raise ShapeError(f"unknown recurrent kind {kind!r}")

    if not np.all(np.isfinite(new_state.h)):
        raise NumericError(f"{kind} state became non-finite")
    return new_state, cache


def recurrent_cell_backward(dh: np.ndarray, dc: np.ndarray | None, cache, params: dict, grads: dict):
    """Backward through one step; accumulates into ``grads``.

    Returns (dx_t, dh_prev, dc_prev).
    """
    kind = cache[0]
    if kind == "LSTM":
        _, joined, i, f, o, g, c_prev, tanh_c, mask = cache
        inputs = joined.shape[1] - dh.shape[1]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c ** 2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_prev = dc * f
        dact = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g ** 2)], axis=1
        )
        grads["W"] += joined.T @ dact
        grads["b"] += dact.sum(axis=0)
        djoined = dact @ params["W"].T
        dx = djoined[:, :inputs]
        dh_prev = djoined[:, inputs:]
    else:
        _, joined, candidate_in, z, r, candidate, h_prev, mask = cache
        inputs = joined.shape[1] - dh.shape[1]
        dcandidate = dh * z
        dz = dh * (candidate - h_prev)
        dh_prev = dh * (1.0 - z)
        dcand_act = dcandidate * (1.0 - candidate ** 2)
        grads["W_h"] += candidate_in.T @ dcand_act
        grads["b_h"] += dcand_act.sum(axis=0)
        dcandidate_in = dcand_act @ params["W_h"].T
        dx = dcandidate_in[:, :inputs]
        drh = dcandidate_in[:, inputs:]
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r
        dact = np.concatenate([dz * z * (1 - z), dr * r * (1 - r)], axis=1)
        grads["W_zr"] += joined.T @ dact
        grads["b_zr"] += dact.sum(axis=0)
        djoined = dact @ params["W_zr"].T
        dx = dx + djoined[:, :inputs]
        dh_prev = dh_prev + djoined[:, inputs:]
        dc_prev = None

    if mask is not None:
        dx = dx * mask
    return dx, dh_prev, dc_prev


def init_recurrent_params(kind: str, input_dim: int, units: int, rng: np.random.Generator) -> dict:
    joined = input_dim + units
    scale = RECURRENT_INIT_SCALE
    if kind == "LSTM":
        return {
            "W": rng.uniform(-scale, scale, size=(joined, 4 * units)),
            "b": np.zeros(4 * units),
        }
    return {
        "W_zr": rng.uniform(-scale, scale, size=(joined, 2 * units)),
        "b_zr": np.zeros(2 * units),
        "W_h": rng.uniform(-scale, scale, size=(joined, units)),
        "b_h": np.zeros(units),
    }


def _unroll(kind: str, inputs: np.ndarray, params: dict, mask):
    batch, steps, _ = inputs.shape
    units = params["b"].shape[0] // 4 if kind == "LSTM" else params["b_h"].shape[0]
    state = CellState(np.zeros((batch, units)), np.zeros((batch, units)) if kind == "LSTM" else None)
    outputs = np.empty((batch, steps, units))
    caches = []
    for t in range(steps):
        state, cache = recurrent_cell_step(kind, inputs[:, t, :], state, params, mask)
        outputs[:, t, :] = state.h
        caches.append(cache)
    return outputs, caches


def _unroll_backward(kind: str, grad: np.ndarray, caches, params: dict, grads: dict, in_dim: int):
    batch, steps, units = grad.shape
    dinputs = np.zeros((batch, steps, in_dim))
    dh_next = np.zeros((batch, units))
    dc_next = np.zeros((batch, units)) if kind == "LSTM" else None
    for t in reversed(range(steps)):
        dx, dh_next, dc_next = recurrent_cell_backward(grad[:, t, :] + dh_next, dc_next, caches[t], params, grads)
        dinputs[:, t, :] = dx
    return dinputs


def run_recurrent(kind: str, bidirectional: bool, inputs: np.ndarray, forward_params: dict,
                  backward_params: dict | None = None, masks=(None, None)):
    """Unroll a cell over time from a zero state.

    The bidirectional form runs a second, separately parameterised pass on
    the reversed sequence and concatenates forward step t with backward
    step t. Padded steps are processed like any other step.
    """
    if kind not in RECURRENT_KINDS:
        raise ShapeError(f"unknown recurrent kind {kind!r}")
    out_fw, caches_fw = _unroll(kind, inputs, forward_params, masks[0])
    if not bidirectional:
        return out_fw, (kind, inputs.shape, caches_fw, None)
    if backward_params is None:
        raise ShapeError("bidirectional recurrence needs backward parameters")
    out_bw, caches_bw = _unroll(kind, inputs[:, ::-1, :], backward_params, masks[1])
    out = np.concatenate([out_fw, out_bw[:, ::-1, :]], axis=2)
    return out, (kind, inputs.shape, caches_fw, caches_bw)


def run_recurrent_backward(grad: np.ndarray, cache, forward_params: dict, forward_grads: dict,
                           backward_params: dict | None = None, backward_grads: dict | None = None):
    kind, in_shape, caches_fw, caches_bw = cache
    in_dim = in_shape[2]
    if caches_bw is None:
        return _unroll_backward(kind, grad, caches_fw, forward_params, forward_grads, in_dim)
    units = grad.shape[2] // 2
    dinputs = _unroll_backward(kind, grad[:, :, :units], caches_fw, forward_params, forward_grads, in_dim)
    d_reversed = _unroll_backward(kind, grad[:, ::-1, units:], caches_bw, backward_params, backward_grads, in_dim)
    return dinputs + d_reversed[:, ::-1, :]


# ── Regularisation ───────────────────────────────────────────

def dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli(1 - rate) keep mask scaled by 1 / (1 - rate)."""
    return (rng.random(shape) >= rate) / (1.0 - rate)


def spatial_dropout(inputs: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Drop whole channels: one mask entry per (batch, channel), shared over time."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return inputs, None
    if rng is None:
        rng = np.random.default_rng()
    if inputs.ndim == 3:
        mask = dropout_mask((inputs.shape[0], 1, inputs.shape[2]), rate, rng)
    else:
        mask = dropout_mask(inputs.shape, rate, rng)
    return inputs * mask, mask


def spatial_dropout_backward(grad: np.ndarray, mask):
    return grad if mask is None else grad * mask


# ── Classifier head ──────────────────────────────────────────

def dense_relu(inputs: np.ndarray, W: np.ndarray, b: np.ndarray):
    pre = inputs @ W + b
    return np.maximum(pre, 0.0), (inputs, pre)


def dense_relu_backward(grad: np.ndarray, cache, W: np.ndarray):
    inputs, pre = cache
    dpre = grad * (pre > 0)
    return dpre @ W.T, inputs.T @ dpre, dpre.sum(axis=0)


def dense_softmax(inputs: np.ndarray, Wd: np.ndarray, bd: np.ndarray, Wo: np.ndarray, bo: np.ndarray) -> np.ndarray:
    """ReLU hidden layer then a softmax output; accepts one vector or a batch."""
    hidden, _ = dense_relu(np.atleast_2d(inputs), Wd, bd)
    probs = softmax(hidden @ Wo + bo, axis=-1)
    return probs[0] if np.ndim(inputs) == 1 else probs


# ── Layer objects ────────────────────────────────────────────

class Layer:
    """A named stage of a model. Parameters live in the model's flat dict
    under ``<prefix>/<name>``; subclasses list their local names."""

    label = "Layer"

    def __init__(self, prefix: str):
        self.prefix = prefix

    def param_names(self) -> list[str]:
        return []

    def key(self, name: str) -> str:
        return f"{self.prefix}/{name}"

    def init_params(self, rng: np.random.Generator) -> dict:
        return {}

    def output_channels(self, channels: int) -> int:
        return channels

    def forward(self, x, params: dict, training: bool, rng):
        raise NotImplementedError

    def backward(self, grad, cache, params: dict, grads: dict):
        raise NotImplementedError

    def _local(self, params: dict, names) -> dict:
        return {name: params[self.key(name)] for name in names}


class EmbeddingLayer(Layer):
    label = "Embed"

    def __init__(self, prefix: str, matrix: np.ndarray, pad_index: int = 0):
        super().__init__(prefix)
        self.matrix = np.array(matrix, dtype=np.float64)
        self.pad_index = pad_index

    def param_names(self):
        return ["W"]

    def init_params(self, rng):
        return {self.key("W"): self.matrix.copy()}

    def output_channels(self, channels):
        return self.matrix.shape[1]

    def forward(self, x, params, training, rng):
        keep = (x != self.pad_index)[..., None]
        # padding positions always read a zero vector
        return params[self.key("W")][x] * keep, (x, keep)

    def backward(self, grad, cache, params, grads):
        x, keep = cache
        dW = grads.get(self.key("W"))
        if dW is not None:
            np.add.at(dW, x.reshape(-1), (grad * keep).reshape(-1, grad.shape[-1]))
        return None


class Conv1DLayer(Layer):
    label = "Conv1D"

    def __init__(self, prefix: str, in_channels: int, filters: int, kernel_size: int):
        super().__init__(prefix)
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size

    def param_names(self):
        return ["kernels", "bias"]

    def init_params(self, rng):
        fan_in = self.kernel_size * self.in_channels
        fan_out = self.kernel_size * self.filters
        return {
            self.key("kernels"): glorot_uniform(
                rng, (self.filters, self.kernel_size, self.in_channels), fan_in, fan_out
            ),
            self.key("bias"): np.zeros(self.filters),
        }

    def output_channels(self, channels):
        return self.filters

    def forward(self, x, params, training, rng):
        return conv1d(x, params[self.key("kernels")], params[self.key("bias")])

    def backward(self, grad, cache, params, grads):
        dx, dkernels, dbias = conv1d_backward(grad, cache)
        if self.key("kernels") in grads:
            grads[self.key("kernels")] += dkernels
            grads[self.key("bias")] += dbias
        return dx


class MaxPoolLayer(Layer):
    label = "MaxPool"

    def __init__(self, prefix: str, pool: int):
        super().__init__(prefix)
        self.pool = pool

    def forward(self, x, params, training, rng):
        return maxpool1d(x, self.pool)

    def backward(self, grad, cache, params, grads):
        return maxpool1d_backward(grad, cache)


class GlobalMaxPoolLayer(Layer):
    label = "GlobalMaxPool"

    def forward(self, x, params, training, rng):
        return global_maxpool(x)

    def backward(self, grad, cache, params, grads):
        return global_maxpool_backward(grad, cache)


class RecurrentLayer(Layer):
    def __init__(self, prefix: str, kind: str, bidirectional: bool, input_dim: int, units: int, dropout_rate: float = 0.0):
        super().__init__(prefix)
        self.kind = kind
        self.bidirectional = bidirectional
        self.input_dim = input_dim
        self.units = units
        self.dropout_rate = dropout_rate

    @property
    def label(self):
        return ("Bi" if self.bidirectional else "") + self.kind

    def _directions(self):
        return ("fw", "bw") if self.bidirectional else ("fw",)

    def _cell_names(self):
        return ["W", "b"] if self.kind == "LSTM" else ["W_zr", "b_zr", "W_h", "b_h"]

    def param_names(self):
        return [f"{d}_{n}" for d in self._directions() for n in self._cell_names()]

    def init_params(self, rng):
        params = {}
        for direction in self._directions():
            for name, value in init_recurrent_params(self.kind, self.input_dim, self.units, rng).items():
                params[self.key(f"{direction}_{name}")] = value
        return params

    def output_channels(self, channels):
        return self.units * (2 if self.bidirectional else 1)

    def _cell(self, source: dict, direction: str) -> dict:
        return {n: source[self.key(f"{direction}_{n}")] for n in self._cell_names()}

    def forward(self, x, params, training, rng):
        masks = [None, None]
        if training and self.dropout_rate > 0.0:
            if rng is None:
                rng = np.random.default_rng()
            for slot in range(len(self._directions())):
                masks[slot] = dropout_mask((x.shape[0], x.shape[2]), self.dropout_rate, rng)
        backward_params = self._cell(params, "bw") if self.bidirectional else None
        return run_recurrent(self.kind, self.bidirectional, x, self._cell(params, "fw"), backward_params, tuple(masks))

    def backward(self, grad, cache, params, grads):
        scratch = {k: np.zeros_like(params[k]) for k in (self.key(n) for n in self.param_names())}
        dx = run_recurrent_backward(
            grad, cache,
            self._cell(params, "fw"), self._cell(scratch, "fw"),
            self._cell(params, "bw") if self.bidirectional else None,
            self._cell(scratch, "bw") if self.bidirectional else None,
        )
        for k, v in scratch.items():
            if k in grads:
                grads[k] += v
        return dx


class SpatialDropoutLayer(Layer):
    label = "SpatialDropout"

    def __init__(self, prefix: str, rate: float):
        super().__init__(prefix)
        self.rate = rate

    def forward(self, x, params, training, rng):
        return spatial_dropout(x, self.rate, training, rng)

    def backward(self, grad, cache, params, grads):
        return spatial_dropout_backward(grad, cache)


class DenseLayer(Layer):
    """ReLU dense layer reading the final timestep of a sequence input."""

    label = "Dense"

    def __init__(self, prefix: str, in_features: int, units: int):
        super().__init__(prefix)
        self.in_features = in_features
        self.units = units

    def param_names(self):
        return ["W", "b"]

    def init_params(self, rng):
        return {
            self.key("W"): glorot_uniform(rng, (self.in_features, self.units), self.in_features, self.units),
            self.key("b"): np.zeros(self.units),
        }

    def output_channels(self, channels):
        return self.units

    def forward(self, x, params, training, rng):
        out, cache = dense_relu(x[:, -1, :], params[self.key("W")], params[self.key("b")])
        return out, (x.shape, cache)

    def backward(self, grad, cache, params, grads):
        in_shape, dense_cache = cache
        dlast, dW, db = dense_relu_backward(grad, dense_cache, params[self.key("W")])
        if self.key("W") in grads:
            grads[self.key("W")] += dW
            grads[self.key("b")] += db
        dx = np.zeros(in_shape)
        dx[:, -1, :] = dlast
        return dx


class OutputLayer(Layer):
    """Linear logits followed by softmax; backward takes d(loss)/d(logits)."""

    label = "Output"

    def __init__(self, prefix: str, in_features: int, num_classes: int):
        super().__init__(prefix)
        self.in_features = in_features
        self.num_classes = num_classes

    def param_names(self):
        return ["W", "b"]

    def init_params(self, rng):
        return {
            self.key("W"): glorot_uniform(rng, (self.in_features, self.num_classes), self.in_features, self.num_classes),
            self.key("b"): np.zeros(self.num_classes),
        }

    def output_channels(self, channels):
        return self.num_classes

    def forward(self, x, params, training, rng):
        logits = x @ params[self.key("W")] + params[self.key("b")]
        return softmax(logits, axis=-1), x

    def backward(self, dlogits, cache, params, grads):
        x = cache
        if self.key("W") in grads:
            grads[self.key("W")] += x.T @ dlogits
            grads[self.key("b")] += dlogits.sum(axis=0)
        return dlogits @ params[self.key("W")].T
