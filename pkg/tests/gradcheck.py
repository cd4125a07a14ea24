"""Central finite-difference oracle for network gradients."""
import numpy as np

from cryptoseq.cells import (DropoutMasks, NetworkSpec, backward, flatten_grads, forward,
                             init_network)
from cryptoseq.numerics import RandomStream

STEP = 1e-5
REL_TOL = 1e-5
# below this magnitude both gradients are at the finite-difference noise floor
TINY = 1e-7
ABS_TOL_TINY = 1e-9


def half_sse(net, X, y, masks):
    pred, _ = forward(net, X, masks)
    return 0.5 * float(np.sum((pred - y) ** 2))


def numeric_grads(net, X, y, masks, step=STEP):
    out = []
    for a in net.arrays():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            up = half_sse(net, X, y, masks)
            a[idx] = old - step
            down = half_sse(net, X, y, masks)
            a[idx] = old
            g[idx] = (up - down) / (2 * step)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    """Largest per-entry relative error; returns (rel, worst_abs_on_tiny)."""
    worst_rel = 0.0
    worst_tiny = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.ravel(a), np.ravel(n)
        scale = np.maximum(np.abs(a), np.abs(n))
        diff = np.abs(a - n)
        big = scale >= TINY
        if big.any():
            worst_rel = max(worst_rel, float(np.max(diff[big] / scale[big])))
        if (~big).any():
            worst_tiny = max(worst_tiny, float(np.max(diff[~big])))
    return worst_rel, worst_tiny


def random_masks(spec, rng, batch):
    inputs, recurrent = [], []
    for k, (kind, n_in, n_out) in enumerate(zip(spec.kinds, spec.layer_inputs(), spec.layer_sizes)):
        if kind == "dense":
            inputs.append(rng.keep_mask((n_in, batch), spec.dropout_rate) if k == 0 else None)
            recurrent.append(None)
        else:
            inputs.append(rng.keep_mask((n_in, batch), spec.dropout_rate))
            recurrent.append(rng.keep_mask((n_out, batch), spec.recurrent_dropout_rate))
    return DropoutMasks(inputs, recurrent)


def random_config(families, seed):
    """Random small spec (hidden <= 8, lookback <= 6) with perturbed biases."""
    r = RandomStream(seed)
    family = families[r.below(len(families))]
    hidden = 1 + r.below(8)
    lookback = 1 + r.below(6)
    width = 1 + r.below(5)
    batch = 1 + r.below(3)
    sizes = (hidden, 1 + r.below(8), 1) if family == "GRU2Dropout" else (hidden, 1)
    rate = 0.25 if r.below(2) else 0.0
    spec = NetworkSpec.for_family(family, lookback, width, layer_sizes=sizes,
                                  dropout_rate=rate, recurrent_dropout_rate=rate)
    net = init_network(spec, r)
    for a in net.arrays():
        a += r.uniform(a.shape, -0.3, 0.3)
    X = r.normal((batch, lookback, width))
    y = r.normal(batch)
    masks = random_masks(spec, r, batch) if rate else None
    return net, X, y, masks


def check_config(families, seed):
    net, X, y, masks = random_config(families, seed)
    pred, tape = forward(net, X, masks)
    analytic = flatten_grads(backward(net, tape, pred - y, masks))
    numeric = numeric_grads(net, X, y, masks)
    return max_relative_error(analytic, numeric)
