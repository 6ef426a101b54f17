"""Feed-forward embedding/classifier with hand-written backprop and Adam.

Layers compute ``act(x @ W + b)`` with ``W`` of shape ``(in, out)``. The first
``embed_split`` layers form the embedding ``g``; the remaining layers form
the classifier ``f`` whose last output is the logits.
"""

from dataclasses import dataclass, field

import numpy as np

from deepjdot.cost import PROB_EPS, label_loss_matrix, pairwise_sq_euclidean
from deepjdot.errors import DivergenceError, InvalidInputError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name, z, a, upstream):
    # Derivative w.r.t. the pre-activation, given post-activation ``a``.
    if name == "relu":
        return upstream * (z > 0)
    if name == "sigmoid":
        return upstream * a * (1.0 - a)
    if name == "tanh":
        return upstream * (1.0 - a * a)
    return upstream


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]


@dataclass(frozen=True)
class Mlp:
    layers: tuple
    embed_split: int

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ShapeError("model needs at least one layer")
        if not 1 <= self.embed_split <= len(layers):
            raise ShapeError(f"embed_split {self.embed_split} outside [1, {len(layers)}]")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise InvalidInputError(f"unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.out_dim,):
                raise ShapeError(f"layer {k} has inconsistent weight/bias shapes")
            if k and layers[k - 1].out_dim != layer.in_dim:
                raise ShapeError(f"layer {k} input {layer.in_dim} != previous output {layers[k - 1].out_dim}")
            if not (np.all(np.isfinite(layer.weight)) and np.all(np.isfinite(layer.bias))):
                raise InvalidInputError(f"layer {k} has non-finite parameters")

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def num_classes(self):
        return self.layers[-1].out_dim

    @property
    def embed_dim(self):
        return self.layers[self.embed_split - 1].out_dim

    def params(self):
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def with_params(self, params):
        if len(params) != 2 * len(self.layers):
            raise ShapeError("parameter list length does not match the model")
        layers = []
        for k, layer in enumerate(self.layers):
            w, b = params[2 * k], params[2 * k + 1]
            if w.shape != layer.weight.shape or b.shape != layer.bias.shape:
                raise ShapeError(f"parameter shapes for layer {k} do not match")
            layers.append(Layer(w, b, layer.activation))
        return Mlp(tuple(layers), self.embed_split)


def init_mlp(in_dim, widths, activations, embed_split, num_classes, rng):
    """Glorot-uniform weights, zero biases; a final identity layer maps to the logits.

    ``widths``/``activations`` describe the hidden layers; the embedding is the
    output of layer ``embed_split - 1``.
    """
    widths = list(widths)
    activations = list(activations)
    if len(widths) != len(activations):
        raise ShapeError("widths and activations must have the same length")
    dims = [in_dim] + widths + [num_classes]
    acts = activations + ["identity"]
    layers = []
    for fan_in, fan_out, act in zip(dims[:-1], dims[1:], acts):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Mlp(tuple(layers), embed_split)


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    post: list


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match model input dim {model.in_dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    return x


def forward_cache(model, x):
    x = _check_input(model, x)
    cache = ForwardCache([], [], [])
    h = x
    for layer in model.layers:
        z = h @ layer.weight + layer.bias
        a = _activate(layer.activation, z)
        cache.inputs.append(h)
        cache.pre.append(z)
        cache.post.append(a)
        h = a
    return cache


def forward(model, x):
    """Return ``(embeddings, logits, probs)`` for a batch of inputs."""
    cache = forward_cache(model, x)
    logits = cache.post[-1]
    return cache.post[model.embed_split - 1], logits, softmax(logits)


def backprop(model, cache, d_logits, d_embed=None):
    """Parameter gradients given gradients at the logits and, optionally, the embedding."""
    grads = [None] * (2 * len(model.layers))
    upstream = d_logits
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        if d_embed is not None and k == model.embed_split - 1:
            upstream = upstream + d_embed if upstream is not None else d_embed
        dz = _activation_grad(layer.activation, cache.pre[k], cache.post[k], upstream)
        grads[2 * k] = cache.inputs[k].T @ dz
        grads[2 * k + 1] = dz.sum(axis=0)
        if k:
            upstream = dz @ layer.weight.T
    return grads


@dataclass(frozen=True)
class VariantFlags:
    use_source_ce: bool = True
    use_align: bool = True
    use_target_ce: bool = True

    def __post_init__(self):
        if not (self.use_source_ce or self.use_align or self.use_target_ce):
            raise InvalidInputError("at least one loss term must be enabled")

    @property
    def coupled(self):
        return self.use_align or self.use_target_ce


SOURCE_ONLY = VariantFlags(True, False, False)


@dataclass(frozen=True)
class LossBreakdown:
    """Loss components; ``align`` and ``target_ce`` already carry alpha and lambda_t."""

    source_ce: float = 0.0
    align: float = 0.0
    target_ce: float = 0.0
    total: float = 0.0


def _source_ce_grad(probs, ys):
    m = probs.shape[0]
    p_true = probs[np.arange(m), ys]
    loss = float(-np.log(np.clip(p_true, PROB_EPS, 1.0)).sum() / m)
    d_logits = probs.copy()
    d_logits[np.arange(m), ys] -= 1.0
    d_logits[p_true < PROB_EPS] = 0.0
    d_logits /= m
    return loss, d_logits


def loss_and_grad(model, xs, ys, xt, gamma, alpha, lambda_t, variant=VariantFlags(), cost_space="embedding"):
    """Minibatch objective and its exact gradient w.r.t. every parameter.

    ``total = mean_i CE(y_i, f(g(xs_i))) + sum_ij gamma_ij (alpha |g(xs_i) -
    g(xt_j)|^2 + lambda_t CE(y_i, f(g(xt_j))))`` with disabled terms dropped.
    With ``cost_space="input"`` the distance is taken between raw inputs, so
    it contributes to the loss but not to the gradient.
    """
    xs = _check_input(model, xs)
    ys = np.asarray(ys, dtype=np.int64)
    if ys.shape != (xs.shape[0],):
        raise ShapeError("source labels must match the source batch length")
    if ys.size and (ys.min() < 0 or ys.max() >= model.num_classes):
        raise InvalidInputError("source labels outside the model's classes")
    if alpha < 0 or lambda_t < 0:
        raise InvalidInputError("alpha and lambda_t must be nonnegative")
    if cost_space not in ("embedding", "input"):
        raise InvalidInputError(f"unknown cost space {cost_space!r}")

    source_ce = align = target_ce = 0.0
    cache_s = forward_cache(model, xs)
    if variant.use_source_ce:
        source_ce, d_logits_s = _source_ce_grad(softmax(cache_s.post[-1]), ys)
    else:
        d_logits_s = np.zeros_like(cache_s.post[-1])
    if not variant.coupled:
        return LossBreakdown(source_ce, 0.0, 0.0, source_ce), backprop(model, cache_s, d_logits_s)

    xt = _check_input(model, xt)
    gamma = np.asarray(gamma, dtype=np.float64)
    if gamma.shape != (xs.shape[0], xt.shape[0]):
        raise ShapeError(f"coupling shape {gamma.shape} does not match batches")
    cache_t = forward_cache(model, xt)
    es = cache_s.post[model.embed_split - 1]
    et = cache_t.post[model.embed_split - 1]
    d_emb_s = None
    d_emb_t = None
    d_logits_t = np.zeros_like(cache_t.post[-1])

    if variant.use_align:
        if cost_space == "embedding":
            align = float(alpha * np.sum(gamma * pairwise_sq_euclidean(es, et)))
            rows = gamma.sum(axis=1)
            cols = gamma.sum(axis=0)
            d_emb_s = 2.0 * alpha * (rows[:, None] * es - gamma @ et)
            d_emb_t = 2.0 * alpha * (cols[:, None] * et - gamma.T @ es)
        else:
            align = float(alpha * np.sum(gamma * pairwise_sq_euclidean(xs, xt)))

    if variant.use_target_ce:
        pt = softmax(cache_t.post[-1])
        target_ce = float(lambda_t * np.sum(gamma * label_loss_matrix(ys, pt)))
        # Pairs whose probability sits on the clamp contribute no gradient.
        active = gamma * (pt[:, ys].T >= PROB_EPS)
        y_onehot = np.zeros((ys.size, model.num_classes))
        y_onehot[np.arange(ys.size), ys] = 1.0
        d_logits_t = lambda_t * (active.sum(axis=0)[:, None] * pt - active.T @ y_onehot)

    g_s = backprop(model, cache_s, d_logits_s, d_emb_s)
    g_t = backprop(model, cache_t, d_logits_t, d_emb_t)
    grads = [a + b for a, b in zip(g_s, g_t)]

    total = source_ce + align + target_ce
    return LossBreakdown(source_ce, align, target_ce, total), grads


def deepjdot_loss(model, xs, ys, xt, gamma, alpha, lambda_t, variant=VariantFlags(), cost_space="embedding"):
    return loss_and_grad(model, xs, ys, xt, gamma, alpha, lambda_t, variant, cost_space)[0]


def backward(model, xs, ys, xt, gamma, alpha, lambda_t, variant=VariantFlags(), cost_space="embedding"):
    return loss_and_grad(model, xs, ys, xt, gamma, alpha, lambda_t, variant, cost_space)[1]


@dataclass
class AdamState:
    lr: float
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr, **kwargs):
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kwargs,
        )


def adam_step(state, params, grads):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("parameter, gradient and state lists differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    with np.errstate(over="ignore"):
        new_m = [b1 * m + (1.0 - b1) * g for m, g in zip(state.m, grads)]
        new_v = [b2 * v + (1.0 - b2) * (g * g) for v, g in zip(state.v, grads)]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    with np.errstate(over="ignore", invalid="ignore"):
        new_params = [
            p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
            for p, m, v in zip(params, new_m, new_v)
        ]
    if not all(np.all(np.isfinite(p)) for p in new_params):
        raise DivergenceError(f"parameters became non-finite at Adam step {t}")
    new_state = AdamState(state.lr, new_m, new_v, t, b1, b2, state.eps)
    return new_params, new_state
