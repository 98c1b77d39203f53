"""Central finite-difference checks for the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SynthSpec, synth_hierarchy
from .propagation import TRAIN, DgpModel, GcnStack, dgp_forward, gcn_forward, model_backward, normalize_adjacency
from .taxonomy import ANCESTOR, DESCENDANT, khop_decompose, merge_directions

FD_STEP = 1e-5
NEAR_ZERO = 1e-3


def entry_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Relative error per entry; below NEAR_ZERO magnitude the denominator is
    clamped so tiny gradients are judged on absolute error instead."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), NEAR_ZERO)
    return np.abs(analytic - numeric) / denom


def numeric_gradients(loss_fn, params: dict[str, np.ndarray], step: float = FD_STEP) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn(params)`` for every parameter entry."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += step
            minus[name][idx] -= step
            g[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * step)
        out[name] = g
    return out


@dataclass
class GradCheckResult:
    label: str
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def worst(self) -> str:
        return max(self.errors, key=self.errors.get)


def _random_instance(rng: np.random.Generator, n_max=12, dim_max=8, k_max=3):
    n = int(rng.integers(3, n_max + 1))
    dag = synth_hierarchy(SynthSpec(n_nodes=n, max_depth=int(rng.integers(2, 6)), multi_parent_prob=0.3,
                                    seed=int(rng.integers(1 << 31))))
    S, F, P = (int(rng.integers(2, dim_max + 1)) for _ in range(3))
    K = int(rng.integers(1, k_max + 1))
    x = rng.standard_normal((n, S))
    return dag, x, S, F, P, K


def check_gcn(rng: np.random.Generator, n_layers: int, normalization: str = "non-sym", **size) -> GradCheckResult:
    dag, x, S, F, P, _ = _random_instance(rng, **size)
    dims = [S] + [F] * (n_layers - 1) + [P]
    stack = GcnStack(tuple(rng.standard_normal((a, b)) for a, b in zip(dims[:-1], dims[1:])),
                     normalization, 0.2, 0.5)
    a_norm = normalize_adjacency(dag.adjacency(), normalization)
    g_out = rng.standard_normal((dag.n_nodes, P))
    seed = int(rng.integers(1 << 31))

    def loss(params):
        out, _ = gcn_forward(stack.with_params(params), a_norm, x, TRAIN, np.random.default_rng(seed))
        return float(np.sum(out * g_out))

    _, trace = gcn_forward(stack, a_norm, x, TRAIN, np.random.default_rng(seed))
    analytic = model_backward(trace, g_out)
    numeric = numeric_gradients(loss, stack.params())
    errs = {k: float(entry_errors(analytic[k], numeric[k]).max()) for k in analytic}
    return GradCheckResult(f"gcn-{n_layers}", errs)


def check_dgp(rng: np.random.Generator, weighted: bool = True, two_phase: bool = True, **size) -> GradCheckResult:
    dag, x, S, F, P, K = _random_instance(rng, **size)
    kh_a = khop_decompose(dag, K, ANCESTOR)
    kh_d = khop_decompose(dag, K, DESCENDANT)
    if not two_phase:
        kh_a = kh_d = merge_directions(kh_a, kh_d)
    model = DgpModel(rng.standard_normal((S, F)), rng.standard_normal((F, P)),
                     rng.standard_normal(K + 1), rng.standard_normal(K + 1), 0.2, 0.5, weighted)
    g_out = rng.standard_normal((dag.n_nodes, P))
    seed = int(rng.integers(1 << 31))

    def loss(params):
        out, _ = dgp_forward(model.with_params(params), kh_d, kh_a, x, TRAIN, np.random.default_rng(seed))
        return float(np.sum(out * g_out))

    _, trace = dgp_forward(model, kh_d, kh_a, x, TRAIN, np.random.default_rng(seed))
    analytic = model_backward(trace, g_out)
    numeric = numeric_gradients(loss, model.params())
    errs = {k: float(entry_errors(analytic[k], numeric[k]).max()) for k in analytic}
    return GradCheckResult("dgp" if weighted else "dgp(-w)", errs)


def run_suite(seed: int = 0, instances: int = 20) -> list[GradCheckResult]:
    """``instances`` random problems for each of GCN-1/2/3 and DGP with and
    without hop weighting."""
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(instances):
        for layers in (1, 2, 3):
            results.append(check_gcn(rng, layers + 1))
        results.append(check_dgp(rng, weighted=True))
        results.append(check_dgp(rng, weighted=False))
    return results
