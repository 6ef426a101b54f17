"""Stochastic alternating optimization of the coupling and the network."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from deepjdot import nn
from deepjdot.cost import build_joint_cost, pairwise_sq_euclidean
from deepjdot.errors import DivergenceError, InvalidInputError, ShapeError
from deepjdot.nn import LossBreakdown, VariantFlags
from deepjdot.ot import DiscreteMeasure, solve_exact_ot, transport_cost

log = logging.getLogger(__name__)

COST_SPACES = ("embedding", "input")


@dataclass(frozen=True)
class ArchSpec:
    """Hidden layers of the network; a final identity layer to the classes is implied."""

    widths: tuple = (64, 64, 32)
    activations: tuple = ("relu", "relu", "sigmoid")
    embed_split: int = 3

    def build(self, in_dim, num_classes, rng):
        return nn.init_mlp(in_dim, self.widths, self.activations, self.embed_split, num_classes, rng)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.001
    lambda_t: float = 0.0001
    batch_size: int = 128
    lr: float = 2e-4
    iterations: int = 1000
    seed: int = 0
    variant: VariantFlags = field(default_factory=VariantFlags)
    cost_space: str = "embedding"
    stratify_source: bool = True
    inner_steps: int = 1
    eval_every: int = 100

    def __post_init__(self):
        for name in ("alpha", "lambda_t", "lr"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be finite and nonnegative")
        if not self.lr > 0:
            raise InvalidInputError("lr must be positive")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be positive")
        if self.iterations < 0:
            raise InvalidInputError("iterations must be nonnegative")
        if self.seed < 0:
            raise InvalidInputError("seed must be unsigned")
        if self.inner_steps < 1 or self.eval_every < 1:
            raise InvalidInputError("inner_steps and eval_every must be positive")
        if self.cost_space not in COST_SPACES:
            raise InvalidInputError(f"cost_space must be one of {COST_SPACES}")


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    source_accuracy: float
    target_accuracy: float
    loss: LossBreakdown
    ot_objective: float


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("history iterations must increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def last(self):
        return self.records[-1] if self.records else None


def sample_minibatch(dataset, m, rng, stratified=False):
    """Draw ``m`` distinct row indices; stratified draws ``m / K`` per class."""
    if m < 1 or m > dataset.n:
        raise InvalidInputError(f"batch size {m} outside [1, {dataset.n}]")
    if not stratified:
        return rng.permutation(dataset.n)[:m]
    if not dataset.labeled:
        raise InvalidInputError("stratified sampling needs a labeled dataset")
    k = dataset.class_count
    if m % k:
        raise InvalidInputError(f"batch size {m} is not divisible by {k} classes")
    per_class = m // k
    parts = []
    for c in range(k):
        members = np.flatnonzero(dataset.labels == c)
        if members.size < per_class:
            raise InvalidInputError(f"class {c} has {members.size} samples, need {per_class}")
        parts.append(rng.choice(members, size=per_class, replace=False))
    return np.concatenate(parts)


def coupling_cost(model, xs, ys, xt, config):
    """Ground cost between a source and a target batch under the frozen model.

    Only the coupled terms enabled by the variant enter the cost, so the
    solve minimizes exactly the coupled part of the training objective.
    """
    alpha = config.alpha if config.variant.use_align else 0.0
    lambda_t = config.lambda_t if config.variant.use_target_ce else 0.0
    es, _, _ = nn.forward(model, xs)
    et, _, pt = nn.forward(model, xt)
    if config.cost_space == "input":
        cost = alpha * pairwise_sq_euclidean(xs, xt)
        if lambda_t:
            cost = cost + build_joint_cost(es, ys, et, pt, 0.0, lambda_t)
        return cost
    return build_joint_cost(es, ys, et, pt, alpha, lambda_t)


def coupling_step(model, xs, ys, xt, config):
    """Solve the exact OT problem with uniform marginals; returns ``(gamma, objective)``."""
    xs = np.asarray(xs, dtype=np.float64)
    xt = np.asarray(xt, dtype=np.float64)
    if xs.shape[0] != xt.shape[0]:
        raise ShapeError("source and target batches must have the same size")
    m = xs.shape[0]
    cost = coupling_cost(model, xs, ys, xt, config)
    if not np.all(np.isfinite(cost)):
        raise DivergenceError("non-finite ground cost: embeddings or predictions overflowed")
    uniform = DiscreteMeasure.uniform(m)
    gamma = solve_exact_ot(cost, uniform, uniform)
    return gamma, transport_cost(gamma, cost)


def propagate_labels(gamma, src_labels, num_classes=None):
    """Class carrying the most coupling mass into each target column (lowest class on ties)."""
    gamma = np.asarray(gamma, dtype=np.float64)
    src_labels = np.asarray(src_labels, dtype=np.int64)
    if gamma.ndim != 2 or gamma.shape[0] != src_labels.size:
        raise ShapeError(f"coupling has {gamma.shape[0]} rows, got {src_labels.size} labels")
    k = num_classes if num_classes is not None else int(src_labels.max()) + 1
    mass = np.zeros((k, gamma.shape[1]))
    np.add.at(mass, src_labels, gamma)
    return mass.argmax(axis=0)


def predict(model, x):
    _, logits, _ = nn.forward(model, x)
    return logits.argmax(axis=1)


def evaluate(model, dataset):
    """Fraction of rows whose predicted class equals the label."""
    if not dataset.labeled:
        raise InvalidInputError("evaluation needs a labeled dataset")
    if dataset.n == 0:
        raise InvalidInputError("evaluation needs a nonempty dataset")
    return float(np.mean(predict(model, dataset.features) == dataset.labels))


def _check_finite(loss, iteration):
    if not np.isfinite(loss.total):
        raise DivergenceError(
            f"non-finite loss at iteration {iteration}: source_ce={loss.source_ce} "
            f"align={loss.align} target_ce={loss.target_ce}"
        )


def train(config, source, target, eval_target=None, arch=ArchSpec(), model=None):
    """Run the alternating optimization; returns ``(model, history)``.

    Each iteration draws a source and a target batch, solves the coupling
    with the network frozen, then takes ``inner_steps`` Adam steps on the
    minibatch loss with that coupling fixed. Source-only variants skip the
    solve during updates but still draw target batches, so the random
    stream matches across variants.
    """
    if not source.labeled:
        raise InvalidInputError("the source dataset must be labeled")
    if source.dim != target.dim:
        raise ShapeError(f"source has {source.dim} features, target has {target.dim}")
    m = config.batch_size
    if m > min(source.n, target.n):
        raise InvalidInputError(f"batch size {m} exceeds a domain size ({source.n}, {target.n})")

    rng = np.random.default_rng(config.seed)
    if model is None:
        model = arch.build(source.dim, source.class_count, rng)
    params = model.params()
    adam = nn.AdamState.for_params(params, config.lr)
    history = TrainHistory()
    stratify = config.stratify_source and source.labeled

    for it in range(1, config.iterations + 1):
        src_idx = sample_minibatch(source, m, rng, stratified=stratify)
        tgt_idx = sample_minibatch(target, m, rng, stratified=False)
        xs = source.features[src_idx]
        ys = source.labels[src_idx]
        xt = target.features[tgt_idx]

        record = it % config.eval_every == 0 or it == config.iterations
        gamma, objective = None, float("nan")
        if config.variant.coupled:
            gamma, objective = coupling_step(model, xs, ys, xt, config)
        elif record:
            # Diagnostic only: the full joint cost, unused by the update below.
            _, objective = coupling_step(model, xs, ys, xt, replace(config, variant=VariantFlags()))
        for _ in range(config.inner_steps):
            loss, grads = nn.loss_and_grad(
                model, xs, ys, xt, gamma, config.alpha, config.lambda_t,
                config.variant, config.cost_space,
            )
            _check_finite(loss, it)
            params, adam = nn.adam_step(adam, params, grads)
            model = model.with_params(params)

        if record:
            src_acc = evaluate(model, source)
            tgt_acc = evaluate(model, eval_target) if eval_target is not None else float("nan")
            history.append(HistoryRecord(it, src_acc, tgt_acc, loss, objective))
            log.info("iter %d source_acc=%.4f target_acc=%.4f loss=%.6f ot=%.6f",
                     it, src_acc, tgt_acc, loss.total, objective)
    return model, history
