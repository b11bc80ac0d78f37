"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from shapecomp.tensor import Tensor

STEP = 1e-5


def numeric_grad(f, x: np.ndarray, step: float = STEP) -> np.ndarray:
    """d f / d x by central differences; ``f`` maps an array to a float."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f(x)
        flat[i] = old - step
        lo = f(x)
        flat[i] = old
        gflat[i] = (hi - lo) / (2 * step)
    return g


def rel_error(a, b) -> float:
    """Normwise relative error ||a - b||_inf / max(||a||_inf, ||b||_inf).

    Lists of arrays are compared as one concatenated gradient vector, so
    entries whose true gradient is exactly zero (e.g. a bias feeding a
    normalisation layer) are judged against the gradient's overall scale.
    """
    if isinstance(a, (list, tuple)):
        a = np.concatenate([np.ravel(x) for x in a])
        b = np.concatenate([np.ravel(x) for x in b])
    return float(np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-12))


def check(build, inputs: list, weight: np.ndarray = None, step: float = STEP) -> float:
    """Max relative error between autodiff and finite differences.

    ``build`` maps a list of Tensors to an output Tensor; the scalar checked
    is ``sum(out * weight)`` with a fixed random ``weight`` so every output
    entry contributes with a distinct coefficient.
    """
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = build(tensors)
    if weight is None:
        weight = np.random.default_rng(99).normal(size=out.shape)
    (out * weight).sum().backward()
    analytic, numeric = [], []
    for k, x in enumerate(inputs):
        def f(v, k=k):
            args = [Tensor(a) for a in inputs]
            args[k] = Tensor(v)
            return float((build(args).data * weight).sum())
        numeric.append(numeric_grad(f, x.copy(), step))
        analytic.append(tensors[k].grad)
    return rel_error(analytic, numeric)


# ----------------------------------------------------------- layer suite
def _away_from_zero(rng, shape, margin=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x + 1e-300) + x, x)


def _distinct_columns(rng, shape, gap=1e-3):
    # max-pool inputs with column maxima separated from runners-up
    x = rng.normal(size=shape)
    order = np.argsort(x, axis=0)
    for c in range(shape[1]):
        x[order[-1, c], c] += gap
    return x


def _matmul(rng):
    from shapecomp import tensor as T
    return check(lambda t: T.matmul(t[0], t[1]), [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])


def _pointwise_mlp(rng):
    from shapecomp import tensor as T
    x = rng.normal(size=(5, 3))
    w1, b1 = rng.normal(size=(3, 4)), rng.normal(size=4)
    w2, b2 = rng.normal(size=(4, 2)), rng.normal(size=2)
    # keep hidden pre-activations away from the relu kink
    h = x @ w1 + b1
    b1 = b1 + np.where(np.abs(h).min(axis=0) < 1e-3, 1e-2, 0.0)
    return check(lambda t: T.pointwise_mlp(t[0], [t[1], t[3]], [t[2], t[4]], final_activation="tanh"),
                 [x, w1, b1, w2, b2])


def _softmax(rng):
    from shapecomp import tensor as T
    return check(lambda t: T.softmax_rows(t[0]), [rng.normal(size=(4, 5))])


def _layer_norm(rng):
    from shapecomp import tensor as T
    return check(lambda t: T.layer_norm(t[0], t[1], t[2]),
                 [rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=6)])


def _batch_norm(rng):
    from shapecomp import tensor as T
    x = rng.normal(size=(2, 5, 3))

    def build(t):
        return T.batch_norm(t[0], t[1], t[2], (0, 1), np.zeros(3), np.ones(3), True)
    return check(build, [x, rng.normal(size=3), rng.normal(size=3)])


def _relu(rng):
    from shapecomp import tensor as T
    return check(lambda t: T.relu(t[0]), [_away_from_zero(rng, (4, 4))])


def _tanh(rng):
    from shapecomp import tensor as T
    return check(lambda t: T.tanh(t[0]), [rng.normal(size=(4, 4))])


def _maxpool(rng):
    from shapecomp import tensor as T
    return check(lambda t: T.max_over_points(t[0]), [_distinct_columns(rng, (6, 4))])


def _module_check(module, forward, inputs, rng):
    """Check gradients wrt the inputs and every parameter of ``module``."""
    from shapecomp.tensor import Tensor
    params = module.parameters()
    for p in params:
        p.data[...] = rng.normal(0.0, 0.5, p.shape)
    analytic, numeric = [], []
    x_t = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    module.zero_grad()
    out = forward(x_t)
    weight = np.random.default_rng(7).normal(size=out.shape)
    (out * weight).sum().backward()

    def value():
        return float((forward([Tensor(x) for x in inputs]).data * weight).sum())

    for k, x in enumerate(inputs):
        def f(v, k=k):
            saved = inputs[k]
            inputs[k] = v
            try:
                return value()
            finally:
                inputs[k] = saved
        analytic.append(x_t[k].grad)
        numeric.append(numeric_grad(f, x.copy()))
    for p in params:
        analytic.append(p.grad.copy())

        def f(v, p=p):
            saved = p.data.copy()
            p.data[...] = v
            try:
                return value()
            finally:
                p.data[...] = saved
        numeric.append(numeric_grad(f, p.data.copy()))
    return rel_error(analytic, numeric)


def _mhsa(rng):
    from shapecomp.encoder import MultiHeadSelfAttention
    block = MultiHeadSelfAttention(8, heads=2, ff_dim=8, dropout=0.1).eval()
    return _module_check(block, lambda t: block(t[0]), [rng.normal(size=(8, 8))], rng)


def _decoder(rng):
    from shapecomp.decoder import Decoder, DecoderSpec
    spec = DecoderSpec(surfaces=2, points_per_surface=3, conv_widths=(5, 4, 3), latent_dim=4)
    dec = Decoder(spec)
    seeds = rng.uniform(0, 1, size=(2, 6, 2))
    return _module_check(dec, lambda t: dec(t[0], seeds), [rng.normal(size=(2, 4))], rng)


LAYERS = {
    "matmul": _matmul, "pointwise_mlp": _pointwise_mlp, "softmax": _softmax,
    "layer_norm": _layer_norm, "batch_norm": _batch_norm, "relu": _relu, "tanh": _tanh,
    "maxpool": _maxpool, "mhsa_block": _mhsa, "decoder": _decoder,
}


def layer_errors(name: str, seeds=range(100)) -> list:
    return [LAYERS[name](np.random.default_rng([17, s])) for s in seeds]
