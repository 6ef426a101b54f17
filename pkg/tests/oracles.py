"""Independent reference implementations used only by the tests."""

import itertools
import math

import numpy as np


def lp_vertex_enumeration(cost, a, b):
    """Minimum of <gamma, cost> over the transport polytope by enumerating bases.

    Every basic solution uses ``n1 + n2 - 1`` arcs; solve the equality system
    on each arc subset and keep the feasible ones. Only for tiny instances.
    """
    cost = np.asarray(cost, dtype=float)
    n1, n2 = cost.shape
    arcs = [(i, j) for i in range(n1) for j in range(n2)]
    rank = n1 + n2 - 1
    rhs = np.concatenate([a, b])
    best = math.inf
    for subset in itertools.combinations(range(len(arcs)), rank):
        mat = np.zeros((n1 + n2, rank))
        for col, k in enumerate(subset):
            i, j = arcs[k]
            mat[i, col] = 1.0
            mat[n1 + j, col] = 1.0
        if np.linalg.matrix_rank(mat) < rank:
            continue
        x, *_ = np.linalg.lstsq(mat, rhs, rcond=None)
        if np.max(np.abs(mat @ x - rhs)) > 1e-10 or np.min(x) < -1e-12:
            continue
        val = sum(x[col] * cost[arcs[k]] for col, k in enumerate(subset))
        best = min(best, val)
    return best


def naive_sq_dist(a, b):
    out = [[0.0] * len(b) for _ in a]
    for i, u in enumerate(a):
        for j, w in enumerate(b):
            out[i][j] = sum((ui - wi) ** 2 for ui, wi in zip(u, w))
    return out


def _act(name, z):
    if name == "relu":
        return max(z, 0.0)
    if name == "sigmoid":
        return 1.0 / (1.0 + math.exp(-z))
    if name == "tanh":
        return math.tanh(z)
    return z


def naive_forward(model, x):
    """Per-sample scalar loops: returns (embeddings, logits, probs) as nested lists."""
    embs, logits, probs = [], [], []
    for row in np.asarray(x):
        h = [float(v) for v in row]
        emb = None
        for k, layer in enumerate(model.layers):
            w, bias = layer.weight, layer.bias
            h = [
                _act(layer.activation, sum(h[i] * w[i, o] for i in range(len(h))) + bias[o])
                for o in range(w.shape[1])
            ]
            if k == model.embed_split - 1:
                emb = list(h)
        top = max(h)
        e = [math.exp(v - top) for v in h]
        s = sum(e)
        embs.append(emb)
        logits.append(h)
        probs.append([v / s for v in e])
    return embs, logits, probs


def naive_loss(model, xs, ys, xt, gamma, alpha, lam, use_s=True, use_a=True, use_t=True):
    es, _, ps = naive_forward(model, xs)
    et, _, pt = naive_forward(model, xt)
    clamp = lambda p: min(max(p, 1e-12), 1.0)
    src = sum(-math.log(clamp(ps[i][ys[i]])) for i in range(len(ys))) / len(ys) if use_s else 0.0
    align = tgt = 0.0
    for i in range(len(ys)):
        for j in range(len(xt)):
            if use_a:
                align += gamma[i][j] * alpha * sum((u - w) ** 2 for u, w in zip(es[i], et[j]))
            if use_t:
                tgt += gamma[i][j] * lam * -math.log(clamp(pt[j][ys[i]]))
    return src, align, tgt, src + align + tgt


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central differences of ``loss_fn(params)`` for every parameter entry."""
    out = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[k][idx] += h
            minus[k][idx] -= h
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_gradcheck_case(rng):
    """A random small (model, xs, ys, xt, gamma, alpha, lambda_t) configuration."""
    from deepjdot.nn import init_mlp

    depth = int(rng.integers(1, 3))
    widths = [int(w) for w in rng.integers(2, 9, size=depth)]
    acts = [str(a) for a in rng.choice(["relu", "sigmoid", "tanh", "identity"], size=depth)]
    d_in = int(rng.integers(1, 5))
    k = int(rng.integers(2, 4))
    split = int(rng.integers(1, depth + 2))
    model = init_mlp(d_in, widths, acts, split, k, rng)
    # Nonzero biases exercise the bias gradients and move relu units off zero.
    model = model.with_params([p + rng.normal(scale=0.3, size=p.shape) if p.ndim == 1 else p
                               for p in model.params()])
    ms, mt = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    xs = rng.normal(size=(ms, d_in))
    xt = rng.normal(size=(mt, d_in))
    ys = rng.integers(0, k, size=ms)
    gamma = rng.random((ms, mt))
    gamma /= gamma.sum()
    alpha = float(rng.uniform(0, 2))
    lam = float(rng.uniform(0, 2))
    return model, xs, ys, xt, gamma, alpha, lam


def direct_supervised_loop(arch, config, source, target):
    """Plain minibatch cross-entropy training with Adam, written without the trainer.

    Replays the trainer's random stream: model init, then per iteration a
    stratified source draw followed by a (discarded) target draw.
    """
    from deepjdot import nn
    from deepjdot.trainer import sample_minibatch

    rng = np.random.default_rng(config.seed)
    model = arch.build(source.dim, source.class_count, rng)
    params = model.params()
    adam = nn.AdamState.for_params(params, config.lr)
    eye = np.eye(source.class_count)
    m = config.batch_size
    for _ in range(config.iterations):
        si = sample_minibatch(source, m, rng, stratified=config.stratify_source)
        sample_minibatch(target, m, rng)
        cache = nn.forward_cache(model, source.features[si])
        d_logits = (nn.softmax(cache.post[-1]) - eye[source.labels[si]]) / m
        params, adam = nn.adam_step(adam, params, nn.backprop(model, cache, d_logits))
        model = model.with_params(params)
    return model
