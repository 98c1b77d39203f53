"""Stage-one training: regress seen-class classifier weights from the graph."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable

import numpy as np

from . import sparse
from .errors import NumericalError, ValidationError
from .propagation import (
    INFER,
    TRAIN,
    DgpModel,
    GcnStack,
    dgp_forward,
    gcn_forward,
    model_backward,
    normalize_adjacency,
)
from .taxonomy import ANCESTOR, DESCENDANT, TaxonomyDag, khop_decompose, merge_directions

log = logging.getLogger(__name__)

MODEL_KINDS = ("sgcn", "gcn", "dgp", "graph-free")
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3000
    learning_rate: float = 0.001
    weight_decay: float = 0.0005
    dropout_rate: float = 0.5
    negative_slope: float = 0.2
    K: int = 4
    hidden_dim: int = 2048
    normalization: str = "non-sym"
    seed: int = 0
    model_kind: str = "dgp"
    layers: int = 1  # hidden layers, GCN kinds only
    weighted: bool = True
    two_phase: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 <= self.dropout_rate < 1:
            raise ValidationError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.K < 1 or self.hidden_dim < 1 or self.layers < 1:
            raise ValidationError("K, hidden_dim and layers must be >= 1")
        if self.model_kind not in MODEL_KINDS:
            raise ValidationError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.normalization not in ("non-sym", "sym"):
            raise ValidationError(f"normalization must be 'non-sym' or 'sym', got {self.normalization!r}")

    @property
    def variant(self) -> str:
        """Short label used in reports, e.g. ``DGP(-w)`` or ``GCN-3``."""
        if self.model_kind == "dgp":
            tag = "DGP" if self.weighted else "DGP(-w)"
            return tag if self.two_phase else tag + "[one-phase]"
        if self.model_kind == "graph-free":
            return "graph-free"
        if self.model_kind == "sgcn" or self.layers == 1:
            return "SGCN" if self.normalization == "non-sym" else "SGCN[sym]"
        return f"GCN-{self.layers}"


@dataclass(frozen=True)
class SeenMask:
    indices: np.ndarray
    n_nodes: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size < 1:
            raise ValidationError("seen mask must select at least one class")
        if idx.min() < 0 or idx.max() >= self.n_nodes:
            raise ValidationError(f"seen index out of range for {self.n_nodes} nodes")
        if np.unique(idx).size != idx.size:
            raise ValidationError("seen indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def M(self) -> int:
        return int(self.indices.size)

    def unseen(self) -> np.ndarray:
        keep = np.ones(self.n_nodes, dtype=bool)
        keep[self.indices] = False
        return np.flatnonzero(keep)


@dataclass(frozen=True)
class GraphInputs:
    """Everything a model needs from the hierarchy, built lazily and cached."""

    dag: TaxonomyDag
    K: int = 4

    @property
    def n_nodes(self) -> int:
        return self.dag.n_nodes

    @cached_property
    def kh_a(self):
        return khop_decompose(self.dag, self.K, ANCESTOR)

    @cached_property
    def kh_d(self):
        return khop_decompose(self.dag, self.K, DESCENDANT)

    @cached_property
    def kh_both(self):
        return merge_directions(self.kh_a, self.kh_d)

    @cached_property
    def _gcn_cache(self) -> dict:
        return {}

    def gcn_adjacency(self, normalization: str):
        if normalization not in self._gcn_cache:
            self._gcn_cache[normalization] = normalize_adjacency(self.dag.adjacency(), normalization)
        return self._gcn_cache[normalization]

    @cached_property
    def identity(self):
        return sparse.identity(self.n_nodes)


def masked_mse_loss(pred, target, mask: SeenMask):
    """Half mean squared error over the seen rows.

    Returns ``(loss, grad)`` with ``grad`` shaped like ``pred`` and zero
    outside the masked rows.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape[0] != mask.M:
        raise ValidationError(f"target has {target.shape[0]} rows but mask selects {mask.M}")
    if pred.shape[0] != mask.n_nodes or pred.shape[1] != target.shape[1]:
        raise ValidationError(f"prediction shape {pred.shape} incompatible with target {target.shape}")
    diff = pred[mask.indices] - target
    loss = float(np.sum(diff * diff)) / (2.0 * mask.M)
    grad = np.zeros_like(pred)
    grad[mask.indices] = diff / mask.M
    return loss, grad


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float, decayed=None):
    """One Adam update with L2 weight decay folded into the gradient.

    ``decayed`` restricts the decay to the named parameters (all by default).
    Returns new parameter and state objects; inputs are not modified.
    """
    if set(params) != set(grads):
        raise ValidationError(f"parameter/gradient names differ: {sorted(params)} vs {sorted(grads)}")
    decayed = set(params) if decayed is None else set(decayed)
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValidationError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if weight_decay and name in decayed:
            g = g + weight_decay * p
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**t)
        v_hat = v / (1 - ADAM_BETA2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(config: TrainConfig, S: int, P: int, rng: np.random.Generator):
    F = config.hidden_dim
    if config.model_kind == "dgp":
        return DgpModel(
            glorot(rng, S, F),
            glorot(rng, F, P),
            np.zeros(config.K + 1),
            np.zeros(config.K + 1),
            config.negative_slope,
            config.dropout_rate,
            config.weighted,
        )
    n_hidden = 1 if config.model_kind in ("sgcn", "graph-free") else config.layers
    dims = [S] + [F] * n_hidden + [P]
    layers = tuple(glorot(rng, a, b) for a, b in zip(dims[:-1], dims[1:]))
    return GcnStack(layers, config.normalization, config.negative_slope, config.dropout_rate)


@dataclass(frozen=True)
class TrainedModel:
    """A model snapshot together with the config that says how to run it."""

    model: object
    config: TrainConfig

    def forward(self, graph: GraphInputs, x, mode: str = INFER, rng=None):
        c = self.config
        if c.model_kind == "dgp":
            if c.two_phase:
                return dgp_forward(self.model, graph.kh_d, graph.kh_a, x, mode, rng)
            return dgp_forward(self.model, graph.kh_both, graph.kh_both, x, mode, rng)
        if c.model_kind == "graph-free":
            return gcn_forward(self.model, graph.identity, x, mode, rng)
        return gcn_forward(self.model, graph.gcn_adjacency(c.normalization), x, mode, rng)

    def alphas(self):
        """Learned (alpha_d, alpha_a) for weighted DGP, else None."""
        if isinstance(self.model, DgpModel) and self.model.weighted:
            return self.model.alphas()
        return None


@dataclass
class TrainResult:
    trained: TrainedModel
    losses: list[float]

    @property
    def alphas(self):
        return self.trained.alphas()


def _check_inputs(graph: GraphInputs, x, w_true, mask: SeenMask):
    if x.ndim != 2 or x.shape[0] != graph.n_nodes:
        raise ValidationError(f"embeddings have shape {x.shape}, graph has {graph.n_nodes} nodes")
    if mask.n_nodes != graph.n_nodes:
        raise ValidationError(f"mask built for {mask.n_nodes} nodes, graph has {graph.n_nodes}")
    if w_true.ndim != 2 or w_true.shape[0] != mask.M:
        raise ValidationError(f"classifier weights have {w_true.shape[0]} rows, mask selects {mask.M}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w_true))):
        raise ValidationError("non-finite input values")


def train(
    config: TrainConfig,
    graph: GraphInputs,
    x,
    w_true,
    mask: SeenMask,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Full-batch training, one Adam step per epoch.

    ``w_true`` rows are assumed L2-normalized and ordered like ``mask.indices``.
    """
    x = np.asarray(x, dtype=np.float64)
    w_true = np.asarray(w_true, dtype=np.float64)
    _check_inputs(graph, x, w_true, mask)
    if config.model_kind == "dgp" and graph.K != config.K:
        graph = replace(graph, K=config.K)
    rng = np.random.default_rng(config.seed)
    trained = TrainedModel(init_model(config, x.shape[1], w_true.shape[1], rng), config)
    state = AdamState()
    losses: list[float] = []
    decayed = trained.model.decayed()
    for epoch in range(config.epochs):
        out, trace = trained.forward(graph, x, TRAIN, rng)
        loss, grad = masked_mse_loss(out, w_true, mask)
        if not math.isfinite(loss):
            raise NumericalError(f"loss became {loss} at epoch {epoch}")
        losses.append(loss)
        grads = model_backward(trace, grad)
        params, state = adam_step(
            trained.model.params(), grads, state, config.learning_rate, config.weight_decay, decayed
        )
        trained = TrainedModel(trained.model.with_params(params), config)
        if progress is not None:
            progress(epoch, loss)
    log.debug("%s trained: loss %.6g -> %.6g", config.variant, losses[0], losses[-1])
    return TrainResult(trained, losses)


def predict_classifiers(trained: TrainedModel, graph: GraphInputs, x) -> np.ndarray:
    """Inference-mode forward pass; row i is the classifier for node i."""
    out, _ = trained.forward(graph, np.asarray(x, dtype=np.float64), INFER)
    return out
