"""Forward and backward passes for the GCN stack and dense graph propagation.

Both models are built from the same stage::

    h -> dropout -> h @ theta -> propagate -> leaky_relu

where ``propagate`` is one normalized adjacency (GCN, unweighted DGP) or a
softmax-weighted sum of per-hop normalized adjacencies (weighted DGP). The
last stage output is L2-normalized row-wise.

Gradients are written out by hand; ``model_backward`` consumes the
``ForwardTrace`` recorded by the forward call so dropout masks are reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist

from . import sparse
from .errors import NumericalError, ValidationError
from .sparse import SparseMatrix
from .taxonomy import KHopAdjacency

TRAIN = "train"
INFER = "infer"
NORM_EPS = 1e-12


def distance_softmax(w) -> np.ndarray:
    """Softmax over hop logits, shifted by the max for stability."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValidationError(f"distance_softmax got non-finite logits {w}")
    e = np.exp(w - w.max())
    return e / e.sum()


def softmax_backward(alpha: np.ndarray, d_alpha: np.ndarray) -> np.ndarray:
    return alpha * (d_alpha - np.dot(alpha, d_alpha))


def leaky_relu(x: np.ndarray, negative_slope: float) -> np.ndarray:
    return np.where(x > 0, x, negative_slope * x)


def dropout_apply(x: np.ndarray, rate: float, rng: np.random.Generator | None, train: bool = True):
    """Inverted dropout. Returns ``(output, mask)``; the mask already carries
    the 1/(1-rate) scale, so ``output = x * mask``."""
    if not 0.0 <= rate < 1.0:
        raise ValidationError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValidationError("training-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return x * mask, mask


def l2_normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms < NORM_EPS, 1.0, norms)
    return x / safe


def _l2_normalize_backward(x: np.ndarray, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    small = norms < NORM_EPS
    safe = np.where(small, 1.0, norms)
    dx = (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / safe
    return np.where(small, dy, dx)


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class GcnStack:
    """Plain GCN: one weight matrix per propagation layer, no biases.

    ``layers[0]`` maps S -> F, the last maps to P. A "single hidden layer"
    GCN therefore has two entries.
    """

    layers: tuple[np.ndarray, ...]
    normalization: str = "non-sym"
    negative_slope: float = 0.2
    dropout_rate: float = 0.5

    def __post_init__(self):
        layers = tuple(np.asarray(t, dtype=np.float64) for t in self.layers)
        if not layers:
            raise ValidationError("GcnStack needs at least one layer")
        for i in range(1, len(layers)):
            if layers[i - 1].shape[1] != layers[i].shape[0]:
                raise ValidationError(
                    f"layer {i} input dim {layers[i].shape[0]} != layer {i - 1} output dim {layers[i - 1].shape[1]}"
                )
        if self.normalization not in ("non-sym", "sym"):
            raise ValidationError(f"normalization must be 'non-sym' or 'sym', got {self.normalization!r}")
        object.__setattr__(self, "layers", layers)

    def params(self) -> dict[str, np.ndarray]:
        return {f"theta{i}": t for i, t in enumerate(self.layers)}

    def with_params(self, params: dict[str, np.ndarray]) -> "GcnStack":
        layers = tuple(params[f"theta{i}"] for i in range(len(self.layers)))
        return GcnStack(layers, self.normalization, self.negative_slope, self.dropout_rate)

    def decayed(self) -> set[str]:
        return set(self.params())


@dataclass(frozen=True)
class DgpModel:
    """Two-phase dense propagation: descendants with ``theta_d``, then
    ancestors with ``theta_a``. ``w_d``/``w_a`` are the per-hop logits, only
    trainable (and counted) when ``weighted`` is set."""

    theta_d: np.ndarray
    theta_a: np.ndarray
    w_d: np.ndarray
    w_a: np.ndarray
    negative_slope: float = 0.2
    dropout_rate: float = 0.5
    weighted: bool = True

    def __post_init__(self):
        for name in ("theta_d", "theta_a", "w_d", "w_a"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.theta_d.ndim != 2 or self.theta_a.ndim != 2 or self.theta_d.shape[1] != self.theta_a.shape[0]:
            raise ValidationError(f"theta shapes do not chain: {self.theta_d.shape} then {self.theta_a.shape}")
        if self.theta_d.shape[1] == 0:
            raise ValidationError("hidden width must be positive")
        if self.w_d.shape != self.w_a.shape or self.w_d.ndim != 1 or self.w_d.size < 2:
            raise ValidationError(f"hop logits must be two vectors of equal length >= 2, got {self.w_d.shape}, {self.w_a.shape}")

    @property
    def K(self) -> int:
        return self.w_d.size - 1

    def params(self) -> dict[str, np.ndarray]:
        p = {"theta_d": self.theta_d, "theta_a": self.theta_a}
        if self.weighted:
            p["w_d"] = self.w_d
            p["w_a"] = self.w_a
        return p

    def with_params(self, params: dict[str, np.ndarray]) -> "DgpModel":
        return DgpModel(
            params["theta_d"],
            params["theta_a"],
            params.get("w_d", self.w_d),
            params.get("w_a", self.w_a),
            self.negative_slope,
            self.dropout_rate,
            self.weighted,
        )

    def decayed(self) -> set[str]:
        return {"theta_d", "theta_a"}

    def alphas(self) -> tuple[np.ndarray, np.ndarray]:
        """(alpha_d, alpha_a)."""
        return distance_softmax(self.w_d), distance_softmax(self.w_a)


def parameter_count(model) -> int:
    return int(sum(p.size for p in model.params().values()))


# ---------------------------------------------------------------------------
# forward


@dataclass
class _Stage:
    theta_name: str
    logit_name: str | None
    mats: tuple[SparseMatrix, ...]
    alpha: np.ndarray | None
    h_in: np.ndarray
    mask: np.ndarray
    h_drop: np.ndarray
    u: np.ndarray
    parts: list[np.ndarray] | None
    v: np.ndarray
    h_out: np.ndarray


@dataclass
class ForwardTrace:
    model: object
    mode: str
    x: np.ndarray
    operators: list
    stages: list[_Stage] = field(default_factory=list)
    pre_norm: np.ndarray | None = None
    output: np.ndarray | None = None

    @property
    def masks(self) -> list[np.ndarray]:
        return [s.mask for s in self.stages]

    @property
    def alphas(self) -> list[np.ndarray]:
        return [s.alpha for s in self.stages if s.alpha is not None]


def _check_mode(mode: str) -> bool:
    if mode not in (TRAIN, INFER):
        raise ValidationError(f"mode must be {TRAIN!r} or {INFER!r}, got {mode!r}")
    return mode == TRAIN


def _stage_forward(h, theta, mats, alpha, slope, rate, train, rng, mask=None):
    if mask is None:
        h_drop, mask = dropout_apply(h, rate, rng, train)
    else:
        h_drop = h * mask
    u = h_drop @ theta
    if alpha is None:
        parts = None
        v = sparse.spmm(mats[0], u)
    else:
        parts = [sparse.spmm(m, u) for m in mats]
        v = np.zeros_like(parts[0])
        for a, p in zip(alpha, parts):
            v += a * p
    return h_drop, mask, u, parts, v, leaky_relu(v, slope)


def _run(trace: ForwardTrace, specs, slope, rate, train, rng, masks=None):
    h = trace.x
    for i, (theta_name, theta, logit_name, mats, alpha) in enumerate(specs):
        if h.shape[1] != theta.shape[0]:
            raise ValidationError(f"layer {i}: input width {h.shape[1]} != weight rows {theta.shape[0]}")
        if mats[0].n_cols != h.shape[0]:
            raise ValidationError(f"layer {i}: adjacency {mats[0].shape} vs {h.shape[0]} nodes")
        h_drop, mask, u, parts, v, h_out = _stage_forward(
            h, theta, mats, alpha, slope, rate, train, rng, None if masks is None else masks[i]
        )
        trace.stages.append(_Stage(theta_name, logit_name, mats, alpha, h, mask, h_drop, u, parts, v, h_out))
        h = h_out
    trace.pre_norm = h
    trace.output = l2_normalize_rows(h)
    return trace.output


def normalize_adjacency(a: SparseMatrix, normalization: str) -> SparseMatrix:
    if normalization == "non-sym":
        return sparse.row_normalize(a)
    if normalization == "sym":
        return sparse.sym_normalize(a)
    raise ValidationError(f"unknown normalization {normalization!r}")


def gcn_forward(stack: GcnStack, a_norm: SparseMatrix, x, mode: str = INFER, rng=None, masks=None):
    """Run the GCN stack over a pre-normalized adjacency.

    Returns ``(output, trace)``; output rows are unit length.
    """
    train = _check_mode(mode)
    x = np.asarray(x, dtype=np.float64)
    if a_norm.n_rows != a_norm.n_cols or a_norm.n_rows != x.shape[0]:
        raise ValidationError(f"adjacency {a_norm.shape} does not match features {x.shape}")
    specs = [(f"theta{i}", t, None, (a_norm,), None) for i, t in enumerate(stack.layers)]
    trace = ForwardTrace(stack, mode, x, [a_norm])
    out = _run(trace, specs, stack.negative_slope, stack.dropout_rate, train, rng, masks)
    return out, trace


def _phase_mats(kh: KHopAdjacency, weighted: bool) -> tuple[SparseMatrix, ...]:
    return kh.normalized_buckets if weighted else (kh.normalized_union,)


def dgp_forward(model: DgpModel, kh_d: KHopAdjacency, kh_a: KHopAdjacency, x, mode: str = INFER, rng=None, masks=None):
    """Descendant phase then ancestor phase.

    Weighted mode propagates with sum_k alpha_k D_k^-1 A_k per phase;
    unweighted mode with the row-normalized union of all buckets.
    """
    train = _check_mode(mode)
    x = np.asarray(x, dtype=np.float64)
    for kh in (kh_d, kh_a):
        if len(kh.buckets) != model.K + 1:
            raise ValidationError(f"{kh.direction} decomposition has {len(kh.buckets)} buckets, model expects {model.K + 1}")
        if kh.n_nodes != x.shape[0]:
            raise ValidationError(f"{kh.direction} decomposition has {kh.n_nodes} nodes, features have {x.shape[0]}")
    alpha_d, alpha_a = model.alphas() if model.weighted else (None, None)
    specs = [
        ("theta_d", model.theta_d, "w_d", _phase_mats(kh_d, model.weighted), alpha_d),
        ("theta_a", model.theta_a, "w_a", _phase_mats(kh_a, model.weighted), alpha_a),
    ]
    trace = ForwardTrace(model, mode, x, [kh_d, kh_a])
    out = _run(trace, specs, model.negative_slope, model.dropout_rate, train, rng, masks)
    return out, trace


def replay(trace: ForwardTrace) -> np.ndarray:
    """Recompute the forward output from the trace's inputs and masks."""
    model = trace.model
    if isinstance(model, GcnStack):
        out, _ = gcn_forward(model, trace.operators[0], trace.x, trace.mode, masks=trace.masks)
    else:
        out, _ = dgp_forward(model, trace.operators[0], trace.operators[1], trace.x, trace.mode, masks=trace.masks)
    return out


# ---------------------------------------------------------------------------
# backward


def model_backward(trace: ForwardTrace, grad_out, model=None) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every trainable parameter, given the
    loss gradient w.r.t. the (normalized) forward output."""
    if model is not None and model is not trace.model:
        raise ValidationError("trace was recorded for a different model")
    if trace.output is None:
        raise ValidationError("trace is incomplete")
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != trace.output.shape:
        raise ValidationError(f"grad shape {grad_out.shape} != output shape {trace.output.shape}")
    slope = trace.model.negative_slope
    trainable = trace.model.params()
    grads: dict[str, np.ndarray] = {}
    dh = _l2_normalize_backward(trace.pre_norm, trace.output, grad_out)
    for st in reversed(trace.stages):
        dv = dh * np.where(st.v > 0, 1.0, slope)
        if st.alpha is None:
            du = sparse.spmm(st.mats[0].T, dv)
        else:
            d_alpha = np.array([np.sum(dv * p) for p in st.parts])
            if st.logit_name in trainable:
                grads[st.logit_name] = softmax_backward(st.alpha, d_alpha)
            du = np.zeros_like(st.u)
            for a, m in zip(st.alpha, st.mats):
                du += a * sparse.spmm(m.T, dv)
        theta = trainable[st.theta_name]
        grads[st.theta_name] = st.h_drop.T @ du
        dh = (du @ theta.T) * st.mask
    return {name: grads[name] for name in trainable}


# ---------------------------------------------------------------------------
# smoothing


def _is_connected(a: SparseMatrix) -> bool:
    n = a.n_rows
    if n == 0:
        return True
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in a.col_idx[a.row_ptr[u]:a.row_ptr[u + 1]]:
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    return bool(seen.all())


def row_dispersion(x: np.ndarray) -> float:
    """Largest Euclidean distance between any two rows."""
    if x.shape[0] < 2:
        return 0.0
    return float(pdist(x).max())


def smoothing_trajectory(a: SparseMatrix, x, steps: int, allow_disconnected: bool = False) -> list[float]:
    """Repeated neighbourhood averaging x <- D^-1 A x.

    Returns the row dispersion after each step. On a connected graph with
    self-loops every row converges to the same vector. Disconnected graphs are
    rejected unless ``allow_disconnected`` is set, since the rows then only
    agree within each component.
    """
    x = np.asarray(x, dtype=np.float64)
    if a.n_rows != a.n_cols or a.n_rows != x.shape[0]:
        raise ValidationError(f"adjacency {a.shape} does not match features {x.shape}")
    if a != a.T:
        raise ValidationError("smoothing needs a symmetric adjacency")
    rows = a.row_ids()
    on_diag = (rows == a.col_idx) & (a.values > 0)
    if np.count_nonzero(on_diag) != a.n_rows:
        raise ValidationError("smoothing needs self-loops on every node")
    if not allow_disconnected and not _is_connected(a):
        raise ValidationError("adjacency is disconnected; smoothing converges per component only")
    p = sparse.row_normalize(a)
    out = []
    for _ in range(steps):
        x = sparse.spmm(p, x)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite value during smoothing")
        out.append(row_dispersion(x))
    return out
