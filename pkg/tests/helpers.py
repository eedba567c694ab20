"""Shared test oracles."""

import numpy as np

from ofdm_tsync import nn

FD_STEP = 1e-5
# Tensors whose true gradient is identically zero (conv biases ahead of batch norm)
# only carry round-off of order eps*loss/h ~ 1e-11, so the denominator is floored.
FD_FLOOR = 1e-4


def tiny_batch(rng, model, batch):
    x = rng.normal(size=(batch, model.input_len))
    t = np.zeros((batch, model.ng))
    t[np.arange(batch), rng.integers(0, model.ng, batch)] = 1.0
    return x, t


def _loss(model, x, t, loss):
    _, cache = nn.forward(model.copy(), x, nn.TRAINING)
    return nn.loss_value(cache, t, loss)


def finite_difference_check(model, x, t, loss="bce", h=FD_STEP):
    """Per-tensor max|analytic - numeric| / max(max|analytic|, max|numeric|, FD_FLOOR)."""
    _, cache = nn.forward(model.copy(), x, nn.TRAINING)
    analytic = nn.backward(model, cache, t, loss)
    errs = {}
    for name, p in model.parameters().items():
        numeric = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = _loss(model, x, t, loss)
            p[idx] = old - h
            down = _loss(model, x, t, loss)
            p[idx] = old
            numeric[idx] = (up - down) / (2 * h)
        a = analytic[name]
        scale = max(np.max(np.abs(a)), np.max(np.abs(numeric)), FD_FLOOR)
        errs[name] = float(np.max(np.abs(a - numeric)) / scale)
    return errs


def peaked_model(spec, index):
    """A model whose output argmax is ``index`` for every input."""
    c = 4
    bias = np.zeros(spec.ng)
    bias[index] = 5.0
    return nn.NetworkModel(
        spec.n, spec.ng,
        nn.Conv1dLayer(np.zeros((2 * spec.n, 1, c)), np.zeros(c)), nn.BatchNormLayer.fresh(c),
        nn.Conv1dLayer(np.zeros((spec.ng, c, c)), np.zeros(c)), nn.BatchNormLayer.fresh(c),
        nn.DenseLayer(np.zeros((c * spec.ng, spec.ng)), bias),
    )


def shift_matrix(s, m, nlag):
    """Explicit M x Nlag matrix whose d-th column holds s starting at row d."""
    S = np.zeros((m, nlag), complex)
    for d in range(nlag):
        S[d : d + len(s), d] = s
    return S
