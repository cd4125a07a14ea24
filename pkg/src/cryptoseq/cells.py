"""GRU, LSTM and dense layers with backpropagation through time.

Column convention: a batch of ``B`` samples is a matrix with one sample per
column, so hidden states are ``(hidden, B)`` and a gate weight matrix is
``(hidden, hidden + input)`` acting on the stacked column ``[h_prev; x]``.
The first ``hidden`` columns of every gate matrix are the recurrent block.

Dropout masks are applied the same way in the forward and backward pass:
the input mask multiplies ``x`` before it enters any gate, the recurrent mask
multiplies ``h_prev`` where it enters a gate product.  The carry term of the
state update (``(1 - z) * h_prev`` for GRU, ``f * c_prev`` for LSTM) always
sees the unmasked state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import SchemaError, ShapeError
from .numerics import RandomStream, activate, activation_grad, matmul_unchecked as _mm

FAMILIES = ("SimpleNN", "LSTM1", "GRU1", "GRU1RecurrentDropout", "GRU2Dropout")

# layer kinds and default widths for each model family
_TOPOLOGY = {
    "SimpleNN": (("dense", 25), ("dense", 1)),
    "LSTM1": (("lstm", 50), ("dense", 1)),
    "GRU1": (("gru", 50), ("dense", 1)),
    "GRU1RecurrentDropout": (("gru", 50), ("dense", 1)),
    "GRU2Dropout": (("gru", 50), ("gru", 10), ("dense", 1)),
}

# (dropout_rate, recurrent_dropout_rate)
_DEFAULT_RATES = {
    "SimpleNN": (0.0, 0.0),
    "LSTM1": (0.0, 0.1),
    "GRU1": (0.0, 0.0),
    "GRU1RecurrentDropout": (0.0, 0.1),
    "GRU2Dropout": (0.1, 0.1),
}


class TapeMismatchError(RuntimeError):
    """The activation record does not belong to this network or masks."""


@dataclass(frozen=True)
class NetworkSpec:
    family: str
    lookback: int
    input_width: int
    layer_sizes: tuple[int, ...]
    dropout_rate: float = 0.0
    recurrent_dropout_rate: float = 0.0

    def __post_init__(self):
        if self.family not in _TOPOLOGY:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        if self.lookback < 1 or self.input_width < 1:
            raise ValueError("lookback and input_width must be positive")
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        topo = _TOPOLOGY[self.family]
        if len(self.layer_sizes) != len(topo):
            raise ValueError(
                f"{self.family} has {len(topo)} layers, got sizes {self.layer_sizes}")
        if any(n < 1 for n in self.layer_sizes) or self.layer_sizes[-1] != 1:
            raise ValueError(f"layer sizes must be positive and end in 1, got {self.layer_sizes}")
        for rate in (self.dropout_rate, self.recurrent_dropout_rate):
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rates must lie in [0, 1), got {rate}")

    @classmethod
    def for_family(cls, family: str, lookback: int, input_width: int,
                   layer_sizes=None, dropout_rate=None, recurrent_dropout_rate=None) -> "NetworkSpec":
        """Spec with the family's default widths and dropout rates, overridable."""
        if family not in _TOPOLOGY:
            raise ValueError(f"unknown model family {family!r}; expected one of {FAMILIES}")
        rates = _DEFAULT_RATES[family]
        return cls(
            family=family,
            lookback=lookback,
            input_width=input_width,
            layer_sizes=tuple(layer_sizes) if layer_sizes is not None
            else tuple(n for _, n in _TOPOLOGY[family]),
            dropout_rate=rates[0] if dropout_rate is None else float(dropout_rate),
            recurrent_dropout_rate=rates[1] if recurrent_dropout_rate is None
            else float(recurrent_dropout_rate),
        )

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(kind for kind, _ in _TOPOLOGY[self.family])

    @property
    def is_recurrent(self) -> bool:
        return self.kinds[0] != "dense"

    def layer_inputs(self) -> list[int]:
        """Input width of each layer."""
        first = self.input_width if self.is_recurrent else self.lookback * self.input_width
        return [first, *self.layer_sizes[:-1]]

    def param_count(self) -> int:
        total = 0
        for kind, n_in, n_out in zip(self.kinds, self.layer_inputs(), self.layer_sizes):
            gates = {"gru": 3, "lstm": 4, "dense": 1}[kind]
            width = n_in + (n_out if kind != "dense" else 0)
            total += gates * n_out * (width + 1)
        return total


@dataclass
class GruParams:
    w_update: np.ndarray
    w_reset: np.ndarray
    w_cand: np.ndarray
    b_update: np.ndarray
    b_reset: np.ndarray
    b_cand: np.ndarray

    def __post_init__(self):
        _check_gate_shapes(self, ("w_update", "w_reset", "w_cand"), ("b_update", "b_reset", "b_cand"))

    @property
    def hidden(self) -> int:
        return self.w_update.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_update.shape[1] - self.hidden


@dataclass
class LstmParams:
    w_forget: np.ndarray
    w_input: np.ndarray
    w_cand: np.ndarray
    w_output: np.ndarray
    b_forget: np.ndarray
    b_input: np.ndarray
    b_cand: np.ndarray
    b_output: np.ndarray

    def __post_init__(self):
        _check_gate_shapes(self, ("w_forget", "w_input", "w_cand", "w_output"),
                           ("b_forget", "b_input", "b_cand", "b_output"))

    @property
    def hidden(self) -> int:
        return self.w_forget.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_forget.shape[1] - self.hidden


@dataclass
class DenseParams:
    w: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.shape != (self.w.shape[0], 1):
            raise ShapeError(f"dense weight {self.w.shape} and bias {self.b.shape} do not conform")
        if self.activation not in ("tanh", "identity"):
            raise ValueError(f"dense activation must be tanh or identity, got {self.activation!r}")


LayerParams = Union[GruParams, LstmParams, DenseParams]


def _check_gate_shapes(p, w_names, b_names):
    shape = getattr(p, w_names[0]).shape
    if len(shape) != 2 or shape[1] <= shape[0]:
        raise ShapeError(f"gate weights must be hidden x (hidden + input), got {shape}")
    for name in w_names:
        if getattr(p, name).shape != shape:
            raise ShapeError(f"{name} has shape {getattr(p, name).shape}, expected {shape}")
    for name in b_names:
        if getattr(p, name).shape != (shape[0], 1):
            raise ShapeError(f"{name} has shape {getattr(p, name).shape}, expected {(shape[0], 1)}")


def param_arrays(layer: LayerParams) -> list[np.ndarray]:
    """The layer's arrays in canonical order (declaration order of the fields)."""
    return [getattr(layer, f.name) for f in fields(layer) if f.name != "activation"]


def _zeros_like(layer: LayerParams) -> LayerParams:
    return _map_arrays(layer, np.zeros_like)


def _map_arrays(layer: LayerParams, fn) -> LayerParams:
    updates = {f.name: fn(getattr(layer, f.name)) for f in fields(layer) if f.name != "activation"}
    return replace(layer, **updates)


@dataclass
class RecurrentNetwork:
    spec: NetworkSpec
    layers: list[LayerParams]

    def __post_init__(self):
        if len(self.layers) != len(self.spec.kinds):
            raise ShapeError("layer count does not match the spec")
        kinds = {"gru": GruParams, "lstm": LstmParams, "dense": DenseParams}
        for kind, n_in, n_out, layer in zip(self.spec.kinds, self.spec.layer_inputs(),
                                            self.spec.layer_sizes, self.layers):
            if not isinstance(layer, kinds[kind]):
                raise ShapeError(f"expected {kinds[kind].__name__}, got {type(layer).__name__}")
            if kind == "dense":
                got = layer.w.shape
                want = (n_out, n_in)
            else:
                got = (layer.hidden, layer.input_size)
                want = (n_out, n_in)
            if got != want:
                raise ShapeError(f"{kind} layer has (out, in) {got}, spec needs {want}")

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in param_arrays(layer)]

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "RecurrentNetwork":
        return RecurrentNetwork(self.spec, [_map_arrays(layer, np.copy) for layer in self.layers])

    def load_arrays(self, arrays) -> None:
        """Overwrite every parameter in place from a canonical-order sequence."""
        own = self.arrays()
        if len(own) != len(arrays):
            raise ShapeError("array count mismatch")
        for dst, src in zip(own, arrays):
            if dst.shape != np.shape(src):
                raise ShapeError(f"cannot load {np.shape(src)} into {dst.shape}")
            dst[...] = src

    @classmethod
    def zeros(cls, spec: NetworkSpec) -> "RecurrentNetwork":
        net = init_network(spec, RandomStream(0))
        return cls(spec, [_zeros_like(layer) for layer in net.layers])


def init_network(spec: NetworkSpec, rng: RandomStream) -> RecurrentNetwork:
    """Glorot-uniform weights, zero biases.

    Gate matrices use ``sqrt(6 / (hidden + hidden))`` on the recurrent columns
    and ``sqrt(6 / (input + hidden))`` on the input columns.  Draw order is
    layer by layer, matrix by matrix in field order, row-major.
    """
    layers: list[LayerParams] = []
    n_layers = len(spec.kinds)
    for idx, (kind, n_in, n_out) in enumerate(zip(spec.kinds, spec.layer_inputs(), spec.layer_sizes)):
        if kind == "dense":
            limit = math.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform((n_out, n_in), -1.0, 1.0) * limit
            act = "identity" if idx == n_layers - 1 else "tanh"
            layers.append(DenseParams(w, np.zeros((n_out, 1)), act))
            continue
        col_limit = np.concatenate([
            np.full(n_out, math.sqrt(6.0 / (2 * n_out))),
            np.full(n_in, math.sqrt(6.0 / (n_in + n_out))),
        ])
        n_gates = 3 if kind == "gru" else 4
        ws = [rng.uniform((n_out, n_out + n_in), -1.0, 1.0) * col_limit for _ in range(n_gates)]
        bs = [np.zeros((n_out, 1)) for _ in range(n_gates)]
        cls = GruParams if kind == "gru" else LstmParams
        layers.append(cls(*ws, *bs))
    return RecurrentNetwork(spec, layers)


# --- single steps ------------------------------------------------------------

@dataclass
class GruStep:
    z: np.ndarray
    r: np.ndarray
    cand: np.ndarray
    h: np.ndarray
    h_prev: np.ndarray = field(repr=False, default=None)
    hm: np.ndarray = field(repr=False, default=None)   # recurrent-masked h_prev
    rh: np.ndarray = field(repr=False, default=None)   # r * hm


@dataclass
class LstmStep:
    f: np.ndarray
    i: np.ndarray
    cand: np.ndarray
    c: np.ndarray
    o: np.ndarray
    h: np.ndarray
    h_prev: np.ndarray = field(repr=False, default=None)
    c_prev: np.ndarray = field(repr=False, default=None)
    hm: np.ndarray = field(repr=False, default=None)
    tanh_c: np.ndarray = field(repr=False, default=None)


class _GruView:
    """Gate matrices regrouped into recurrent and input blocks."""

    def __init__(self, p: GruParams):
        H = p.hidden
        self.H = H
        self.w_zr_h = np.ascontiguousarray(np.vstack([p.w_update[:, :H], p.w_reset[:, :H]]))
        self.w_c_h = np.ascontiguousarray(p.w_cand[:, :H])
        self.w_x = np.ascontiguousarray(np.vstack([p.w_update[:, H:], p.w_reset[:, H:], p.w_cand[:, H:]]))
        self.b = np.vstack([p.b_update, p.b_reset, p.b_cand])


class _LstmView:
    def __init__(self, p: LstmParams):
        H = p.hidden
        self.H = H
        gates = (p.w_forget, p.w_input, p.w_cand, p.w_output)
        self.w_h = np.ascontiguousarray(np.vstack([w[:, :H] for w in gates]))
        self.w_x = np.ascontiguousarray(np.vstack([w[:, H:] for w in gates]))
        self.b = np.vstack([p.b_forget, p.b_input, p.b_cand, p.b_output])


def _gru_cell(v: _GruView, gx: np.ndarray, h_prev: np.ndarray, h_mask) -> GruStep:
    H = v.H
    hm = h_prev if h_mask is None else h_prev * h_mask
    azr = _mm(v.w_zr_h, hm) + gx[: 2 * H]
    z = activate(azr[:H], "sigmoid")
    r = activate(azr[H:], "sigmoid")
    rh = r * hm
    cand = activate(_mm(v.w_c_h, rh) + gx[2 * H:], "tanh")
    h = (1.0 - z) * h_prev + z * cand
    return GruStep(z=z, r=r, cand=cand, h=h, h_prev=h_prev, hm=hm, rh=rh)


def _lstm_cell(v: _LstmView, gx: np.ndarray, h_prev, c_prev, h_mask) -> LstmStep:
    H = v.H
    hm = h_prev if h_mask is None else h_prev * h_mask
    a = _mm(v.w_h, hm) + gx
    f = activate(a[:H], "sigmoid")
    i = activate(a[H:2 * H], "sigmoid")
    g = activate(a[2 * H:3 * H], "tanh")
    o = activate(a[3 * H:], "sigmoid")
    c = f * c_prev + i * g
    tc = activate(c, "tanh")
    return LstmStep(f=f, i=i, cand=g, c=c, o=o, h=o * tc,
                    h_prev=h_prev, c_prev=c_prev, hm=hm, tanh_c=tc)


def _check_step_shapes(p, x, h_prev):
    if x.ndim != 2 or x.shape[0] != p.input_size:
        raise ShapeError(f"input has shape {x.shape}, expected ({p.input_size}, batch)")
    if h_prev.shape != (p.hidden, x.shape[1]):
        raise ShapeError(f"h_prev has shape {h_prev.shape}, expected {(p.hidden, x.shape[1])}")


def gru_step(p: GruParams, x, h_prev, x_mask=None, h_mask=None) -> GruStep:
    """One GRU update.  ``x`` is ``(input, B)``, ``h_prev`` is ``(hidden, B)``."""
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    _check_step_shapes(p, x, h_prev)
    v = _GruView(p)
    xm = x if x_mask is None else x * x_mask
    return _gru_cell(v, _mm(v.w_x, xm) + v.b, h_prev, h_mask)


def lstm_step(p: LstmParams, x, h_prev, c_prev, x_mask=None, h_mask=None) -> LstmStep:
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    _check_step_shapes(p, x, h_prev)
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"c_prev has shape {c_prev.shape}, expected {h_prev.shape}")
    v = _LstmView(p)
    xm = x if x_mask is None else x * x_mask
    return _lstm_cell(v, _mm(v.w_x, xm) + v.b, h_prev, c_prev, h_mask)


# --- whole network -----------------------------------------------------------

@dataclass
class DropoutMasks:
    """Per-layer keep-masks, one column per sample.

    ``input_masks[k]`` multiplies the input of layer ``k`` at every timestep;
    ``recurrent_masks[k]`` multiplies that layer's ``h_prev`` at every
    timestep.  Entries are ``0`` or ``1/(1-rate)``; ``None`` means no mask.
    """
    input_masks: list[Optional[np.ndarray]]
    recurrent_masks: list[Optional[np.ndarray]]

    @property
    def batch(self) -> int:
        for m in (*self.input_masks, *self.recurrent_masks):
            if m is not None:
                return m.shape[1]
        return 0


@dataclass
class Tape:
    """Everything ``backward`` needs from a ``forward`` call."""
    spec: NetworkSpec
    batch: int
    masks: Optional[DropoutMasks]
    records: list = field(default_factory=list)
    prediction: np.ndarray = None


def _mask(masks: Optional[DropoutMasks], which: str, k: int):
    if masks is None:
        return None
    return getattr(masks, which)[k]


def _as_batch(window, spec: NetworkSpec) -> tuple[np.ndarray, bool]:
    w = np.asarray(window, dtype=np.float64)
    single = w.ndim == 2
    if single:
        w = w[None]
    if w.ndim != 3:
        raise ShapeError(f"window must be (lookback, features) or (batch, lookback, features), got {w.shape}")
    if w.shape[1] != spec.lookback:
        raise ShapeError(f"window covers {w.shape[1]} days, network expects lookback {spec.lookback}")
    if w.shape[2] != spec.input_width:
        raise ShapeError(f"window has {w.shape[2]} features, network expects {spec.input_width}")
    return w, single


def forward(net: RecurrentNetwork, window, masks: Optional[DropoutMasks] = None):
    """Run the network on one window ``(lookback, features)`` or a batch of them.

    Returns ``(prediction, tape)``; the prediction is a float for a single
    window and a ``(B,)`` array for a batch.  ``masks=None`` is the
    inference path.
    """
    spec = net.spec
    w, single = _as_batch(window, spec)
    B, L, F = w.shape
    if masks is not None and masks.batch not in (0, B):
        raise ShapeError(f"masks are for batch {masks.batch}, window batch is {B}")
    tape = Tape(spec=spec, batch=B, masks=masks)

    if spec.is_recurrent:
        # (F, L*B): column t*B + b holds sample b at day t
        seq = np.ascontiguousarray(w.transpose(2, 1, 0).reshape(F, L * B))
        act = None
        for k, layer in enumerate(net.layers):
            if isinstance(layer, DenseParams):
                act = _dense_forward(layer, act, tape)
                continue
            x_mask = _mask(masks, "input_masks", k)
            h_mask = _mask(masks, "recurrent_masks", k)
            xm = seq if x_mask is None else seq * np.tile(x_mask, L)
            if isinstance(layer, GruParams):
                view = _GruView(layer)
                gx_all = _mm(view.w_x, xm) + view.b
                h = np.zeros((view.H, B))
                steps = []
                for t in range(L):
                    step = _gru_cell(view, gx_all[:, t * B:(t + 1) * B], h, h_mask)
                    steps.append(step)
                    h = step.h
            else:
                view = _LstmView(layer)
                gx_all = _mm(view.w_x, xm) + view.b
                h = np.zeros((view.H, B))
                c = np.zeros((view.H, B))
                steps = []
                for t in range(L):
                    step = _lstm_cell(view, gx_all[:, t * B:(t + 1) * B], h, c, h_mask)
                    steps.append(step)
                    h, c = step.h, step.c
            tape.records.append(("rnn", xm, steps))
            seq = np.hstack([s.h for s in steps])
            act = h
    else:
        act = np.ascontiguousarray(w.reshape(B, L * F).T)
        x_mask = _mask(masks, "input_masks", 0)
        if x_mask is not None:
            act = act * x_mask
        for layer in net.layers:
            act = _dense_forward(layer, act, tape)

    pred = act[0].copy()
    tape.prediction = pred
    return (float(pred[0]) if single else pred), tape


def _dense_forward(p: DenseParams, x, tape: Tape):
    y = activate(_mm(p.w, x) + p.b, p.activation)
    tape.records.append(("dense", x, y))
    return y


def backward(net: RecurrentNetwork, tape: Tape, d_loss_d_pred, masks: Optional[DropoutMasks] = None):
    """Reverse-mode gradients of a scalar loss given ``dL/dprediction``.

    ``d_loss_d_pred`` is a scalar for a single window or a ``(B,)`` array.
    Gradients are summed over the batch and all timesteps and returned as a
    list of parameter objects shaped like ``net.layers``.
    """
    if tape.spec != net.spec or len(tape.records) != len(net.layers):
        raise TapeMismatchError("tape was recorded for a different network")
    if masks is not None and masks is not tape.masks:
        raise TapeMismatchError("backward must use the masks given to forward")
    masks = tape.masks
    B = tape.batch
    d = np.asarray(d_loss_d_pred, dtype=np.float64).reshape(1, -1)
    if d.shape[1] != B:
        raise TapeMismatchError(f"got {d.shape[1]} prediction gradients for batch {B}")

    grads: list[LayerParams] = [None] * len(net.layers)
    upstream = d  # gradient wrt the current layer's output
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        kind, x, out = tape.records[k]
        need_dx = k > 0
        if kind == "dense":
            if not isinstance(layer, DenseParams) or out.shape[1] != B:
                raise TapeMismatchError(f"layer {k} record does not match")
            da = upstream * activation_grad(out, layer.activation)
            grads[k] = DenseParams(_mm(da, x.T), da.sum(axis=1, keepdims=True), layer.activation)
            upstream = _mm(layer.w.T, da) if need_dx else None
            continue
        steps = out
        if len(steps) != net.spec.lookback:
            raise TapeMismatchError(f"layer {k} recorded {len(steps)} steps")
        L = len(steps)
        if upstream.shape[1] == B:
            # only the final hidden state feeds the layer above
            dh_ext = [None] * (L - 1) + [upstream]
        else:
            dh_ext = [upstream[:, t * B:(t + 1) * B] for t in range(L)]
        x_mask = _mask(masks, "input_masks", k)
        h_mask = _mask(masks, "recurrent_masks", k)
        if isinstance(layer, GruParams):
            grads[k], dxm = _gru_backward(layer, steps, x, dh_ext, h_mask, B, k > 0)
        else:
            grads[k], dxm = _lstm_backward(layer, steps, x, dh_ext, h_mask, B, k > 0)
        if k > 0:
            upstream = dxm if x_mask is None else dxm * np.tile(x_mask, L)
    return grads


def _gru_backward(p: GruParams, steps, xm, dh_ext, h_mask, B, need_dx):
    v = _GruView(p)
    H = v.H
    L = len(steps)
    da_all = np.empty((3 * H, L * B))
    dh_next = np.zeros((H, B))
    for t in range(L - 1, -1, -1):
        s = steps[t]
        dh = dh_next if dh_ext[t] is None else dh_next + dh_ext[t]
        dz = dh * (s.cand - s.h_prev)
        dh_prev = dh * (1.0 - s.z)
        dac = dh * s.z * (1.0 - s.cand * s.cand)
        drh = _mm(v.w_c_h.T, dac)
        dr = drh * s.hm
        dhm = drh * s.r
        daz = dz * s.z * (1.0 - s.z)
        dar = dr * s.r * (1.0 - s.r)
        cols = slice(t * B, (t + 1) * B)
        da_all[:H, cols] = daz
        da_all[H:2 * H, cols] = dar
        da_all[2 * H:, cols] = dac
        dhm = dhm + _mm(v.w_zr_h.T, da_all[:2 * H, cols])
        dh_next = dh_prev + (dhm if h_mask is None else dhm * h_mask)

    hm_all = np.hstack([s.hm for s in steps])
    rh_all = np.hstack([s.rh for s in steps])
    dw_zr_h = _mm(da_all[:2 * H], hm_all.T)
    dw_c_h = _mm(da_all[2 * H:], rh_all.T)
    dw_x = _mm(da_all, xm.T)
    db = da_all.sum(axis=1, keepdims=True)
    g = GruParams(
        w_update=np.hstack([dw_zr_h[:H], dw_x[:H]]),
        w_reset=np.hstack([dw_zr_h[H:], dw_x[H:2 * H]]),
        w_cand=np.hstack([dw_c_h, dw_x[2 * H:]]),
        b_update=db[:H], b_reset=db[H:2 * H], b_cand=db[2 * H:],
    )
    dxm = _mm(v.w_x.T, da_all) if need_dx else None
    return g, dxm


def _lstm_backward(p: LstmParams, steps, xm, dh_ext, h_mask, B, need_dx):
    v = _LstmView(p)
    H = v.H
    L = len(steps)
    da_all = np.empty((4 * H, L * B))
    dh_next = np.zeros((H, B))
    dc_next = np.zeros((H, B))
    for t in range(L - 1, -1, -1):
        s = steps[t]
        dh = dh_next if dh_ext[t] is None else dh_next + dh_ext[t]
        do = dh * s.tanh_c
        dc = dc_next + dh * s.o * (1.0 - s.tanh_c * s.tanh_c)
        cols = slice(t * B, (t + 1) * B)
        da_all[:H, cols] = dc * s.c_prev * s.f * (1.0 - s.f)
        da_all[H:2 * H, cols] = dc * s.cand * s.i * (1.0 - s.i)
        da_all[2 * H:3 * H, cols] = dc * s.i * (1.0 - s.cand * s.cand)
        da_all[3 * H:, cols] = do * s.o * (1.0 - s.o)
        dhm = _mm(v.w_h.T, da_all[:, cols])
        dh_next = dhm if h_mask is None else dhm * h_mask
        dc_next = dc * s.f

    hm_all = np.hstack([s.hm for s in steps])
    dw_h = _mm(da_all, hm_all.T)
    dw_x = _mm(da_all, xm.T)
    db = da_all.sum(axis=1, keepdims=True)
    blocks = [np.hstack([dw_h[j * H:(j + 1) * H], dw_x[j * H:(j + 1) * H]]) for j in range(4)]
    biases = [db[j * H:(j + 1) * H] for j in range(4)]
    dxm = _mm(v.w_x.T, da_all) if need_dx else None
    return LstmParams(*blocks, *biases), dxm


def flatten_grads(grads: list[LayerParams]) -> list[np.ndarray]:
    return [a for layer in grads for a in param_arrays(layer)]


# --- serialization -----------------------------------------------------------

_MAGIC = "cryptoseq-params"
_VERSION = 1


def save_network(net: RecurrentNetwork, path) -> None:
    """Write ``net`` as a text header followed by little-endian float64 values.

    Layout::

        cryptoseq-params 1\\n
        family=<name>\\n
        lookback=<int>\\n
        input_width=<int>\\n
        layer_sizes=<int,int,...>\\n
        dropout_rate=<float>\\n
        recurrent_dropout_rate=<float>\\n
        values=<count>\\n
        \\n
        <count x 8 bytes, '<f8', arrays in canonical order, each row-major>
    """
    s = net.spec
    header = (
        f"{_MAGIC} {_VERSION}\n"
        f"family={s.family}\n"
        f"lookback={s.lookback}\n"
        f"input_width={s.input_width}\n"
        f"layer_sizes={','.join(str(n) for n in s.layer_sizes)}\n"
        f"dropout_rate={s.dropout_rate!r}\n"
        f"recurrent_dropout_rate={s.recurrent_dropout_rate!r}\n"
        f"values={net.param_count()}\n\n"
    )
    flat = np.concatenate([a.ravel() for a in net.arrays()]).astype("<f8")
    Path(path).write_bytes(header.encode("ascii") + flat.tobytes())


def load_network(path) -> RecurrentNetwork:
    blob = Path(path).read_bytes()
    end = blob.find(b"\n\n")
    if end < 0:
        raise SchemaError(f"{path}: missing parameter header")
    lines = blob[:end].decode("ascii").split("\n")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != _MAGIC:
        raise SchemaError(f"{path}: not a parameter file")
    if int(magic[1]) != _VERSION:
        raise SchemaError(f"{path}: unsupported version {magic[1]}")
    meta = dict(line.split("=", 1) for line in lines[1:])
    spec = NetworkSpec(
        family=meta["family"],
        lookback=int(meta["lookback"]),
        input_width=int(meta["input_width"]),
        layer_sizes=tuple(int(n) for n in meta["layer_sizes"].split(",")),
        dropout_rate=float(meta["dropout_rate"]),
        recurrent_dropout_rate=float(meta["recurrent_dropout_rate"]),
    )
    count = int(meta["values"])
    payload = blob[end + 2:]
    if len(payload) != 8 * count or count != spec.param_count():
        raise SchemaError(f"{path}: expected {spec.param_count()} values, found {len(payload) // 8}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    net = RecurrentNetwork.zeros(spec)
    offset = 0
    for a in net.arrays():
        a[...] = flat[offset:offset + a.size].reshape(a.shape)
        offset += a.size
    return net
