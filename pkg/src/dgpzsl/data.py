"""File formats and synthetic desk-scale tasks.

Formats (UTF-8, LF line endings):

* edge list: ``child<TAB>parent`` per line, ``#`` lines are comments;
* table: ``<rows> <cols>`` header, then ``<id> v1 ... vcols`` per row;
* checkpoint: ``DGPCKPT 1`` header, a model line, then one line per tensor.

Floats are written with 17 significant digits so 64-bit values survive a
save/load round trip unchanged.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .propagation import DgpModel, GcnStack, l2_normalize_rows
from .sparse import SparseMatrix, from_dense
from .taxonomy import TaxonomyDag, build_dag
from .training import SeenMask, TrainConfig, TrainedModel
from .zeroshot import FeatureBatch

CHECKPOINT_MAGIC = "DGPCKPT 1"


def fmt(v: float) -> str:
    return f"{v:.17g}"


# ---------------------------------------------------------------------------
# edge lists


def load_edge_list(path) -> list[tuple[str, str]]:
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ValidationError(f"{path}:{lineno}: expected 'child<TAB>parent', got {line!r}")
            edges.append((parts[0], parts[1]))
    if not edges:
        raise ValidationError(f"{path}: no edges")
    return edges


def save_edge_list(path, edges: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for child, parent in edges:
            fh.write(f"{child}\t{parent}\n")


def dag_edge_pairs(dag: TaxonomyDag) -> list[tuple[str, str]]:
    return [(dag.node_ids[c], dag.node_ids[p]) for c, p in dag.edges]


# ---------------------------------------------------------------------------
# tables


def load_table(path, unique_ids: bool = True) -> tuple[list[str], np.ndarray]:
    """Read a whitespace-separated table. ``unique_ids=False`` allows repeated
    ids, which the feature files use for class labels."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValidationError(f"{path}: empty file")
    head = lines[0].split()
    try:
        rows, cols = int(head[0]), int(head[1])
        if len(head) != 2 or rows < 0 or cols < 0:
            raise ValueError
    except (ValueError, IndexError):
        raise ValidationError(f"{path}:1: expected '<rows> <cols>', got {lines[0]!r}") from None
    if len(lines) - 1 != rows:
        raise ValidationError(f"{path}: header declares {rows} rows, found {len(lines) - 1}")
    ids: list[str] = []
    seen: set[str] = set()
    data = np.zeros((rows, cols))
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        tok = line.split()
        if len(tok) != cols + 1:
            raise ValidationError(f"{path}:{lineno}: expected id plus {cols} values, got {len(tok) - 1 if tok else 0}")
        if unique_ids and tok[0] in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate id {tok[0]!r}")
        seen.add(tok[0])
        ids.append(tok[0])
        for j, t in enumerate(tok[1:]):
            try:
                v = float(t)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric token {t!r} in column {j + 1}") from None
            if not math.isfinite(v):
                raise ValidationError(f"{path}:{lineno}: non-finite value {t!r}")
            data[i, j] = v
    return ids, data


def save_table(path, ids: Sequence[str], matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValidationError(f"{len(ids)} ids for a matrix of shape {matrix.shape}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for name, row in zip(ids, matrix):
            fh.write(name + " " + " ".join(fmt(v) for v in row) + "\n")


@dataclass(frozen=True)
class EmbeddingTable:
    node_ids: tuple[str, ...]
    matrix: np.ndarray

    def aligned(self, dag: TaxonomyDag) -> np.ndarray:
        """Rows reordered to the DAG's node order."""
        pos = {name: i for i, name in enumerate(self.node_ids)}
        missing = [n for n in dag.node_ids if n not in pos]
        if missing:
            raise ValidationError(f"no embedding for {len(missing)} graph nodes, e.g. {missing[:3]}")
        return self.matrix[[pos[n] for n in dag.node_ids]]


@dataclass(frozen=True)
class ClassifierWeights:
    """Seen-class classifiers, rows L2-normalized."""

    node_ids: tuple[str, ...]
    matrix: np.ndarray

    def mask(self, dag: TaxonomyDag) -> SeenMask:
        index = dag.index()
        missing = [n for n in self.node_ids if n not in index]
        if missing:
            raise ValidationError(f"classifier ids not in graph: {missing[:3]}")
        return SeenMask(np.array([index[n] for n in self.node_ids]), dag.n_nodes)


def load_embeddings(path) -> EmbeddingTable:
    ids, m = load_table(path)
    return EmbeddingTable(tuple(ids), m)


def load_weights(path) -> ClassifierWeights:
    ids, m = load_table(path)
    return ClassifierWeights(tuple(ids), l2_normalize_rows(m))


def load_features(path, dag: TaxonomyDag) -> FeatureBatch:
    labels, m = load_table(path, unique_ids=False)
    index = dag.index()
    bad = sorted({l for l in labels if l not in index})
    if bad:
        raise ValidationError(f"{path}: feature labels not in graph: {bad[:3]}")
    return FeatureBatch(m, np.array([index[l] for l in labels], dtype=np.int64))


def save_features(path, dag: TaxonomyDag, batch: FeatureBatch) -> None:
    save_table(path, [dag.node_ids[i] for i in batch.labels], batch.features)


# ---------------------------------------------------------------------------
# checkpoints


def _config_tokens(c: TrainConfig) -> str:
    extra = []
    for f in fields(c):
        if f.name == "model_kind":
            continue
        v = getattr(c, f.name)
        if isinstance(v, bool):
            v = int(v)
        elif isinstance(v, float):
            v = fmt(v)
        extra.append(f"{f.name}={v}")
    return " ".join(extra)


def save_checkpoint(path, trained: TrainedModel) -> None:
    model, c = trained.model, trained.config
    if isinstance(model, DgpModel):
        S, F = model.theta_d.shape
        P, K = model.theta_a.shape[1], model.K
    else:
        S, F = model.layers[0].shape
        P, K = model.layers[-1].shape[1], c.K
    tensors = {"theta_d": model.theta_d, "theta_a": model.theta_a, "w_d": model.w_d, "w_a": model.w_a} \
        if isinstance(model, DgpModel) else model.params()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        fh.write(f"{c.model_kind} {S} {F} {P} {K} {_config_tokens(c)}\n")
        for name, t in tensors.items():
            shape = "x".join(str(d) for d in t.shape)
            fh.write(f"{name} {shape} " + " ".join(fmt(v) for v in t.ravel()) + "\n")


def _parse_config(kind: str, tokens: list[str]) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    kw = {"model_kind": kind}
    for tok in tokens:
        key, _, val = tok.partition("=")
        if key not in types:
            raise ValidationError(f"unknown checkpoint field {key!r}")
        default = getattr(TrainConfig(), key)
        if isinstance(default, bool):
            kw[key] = val == "1"
        elif isinstance(default, int):
            kw[key] = int(val)
        elif isinstance(default, float):
            kw[key] = float(val)
        else:
            kw[key] = val
    return TrainConfig(**kw)


def load_checkpoint(path) -> TrainedModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}:1: not a checkpoint (expected {CHECKPOINT_MAGIC!r})")
    if len(lines) < 2:
        raise ValidationError(f"{path}: truncated checkpoint")
    head = lines[1].split()
    try:
        kind = head[0]
        S, F, P, K = (int(t) for t in head[1:5])
        config = _parse_config(kind, head[5:])
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}:2: bad model line ({exc})") from None
    tensors: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[2:], 3):
        if not line:
            continue
        tok = line.split()
        try:
            shape = tuple(int(d) for d in tok[1].split("x"))
            vals = np.array([float(t) for t in tok[2:]])
        except (ValueError, IndexError):
            raise ValidationError(f"{path}:{lineno}: malformed tensor line") from None
        if vals.size != int(np.prod(shape)):
            raise ValidationError(f"{path}:{lineno}: {tok[0]} declares shape {shape} but has {vals.size} values")
        tensors[tok[0]] = vals.reshape(shape)
    try:
        if kind == "dgp":
            model = DgpModel(
                tensors["theta_d"], tensors["theta_a"], tensors["w_d"], tensors["w_a"],
                config.negative_slope, config.dropout_rate, config.weighted,
            )
            if model.theta_d.shape != (S, F) or model.theta_a.shape != (F, P) or model.K != K:
                raise ValidationError(f"{path}: tensor shapes disagree with header")
        else:
            n = len([k for k in tensors if k.startswith("theta")])
            model = GcnStack(
                tuple(tensors[f"theta{i}"] for i in range(n)),
                config.normalization, config.negative_slope, config.dropout_rate,
            )
            if model.layers[0].shape[0] != S or model.layers[-1].shape[1] != P:
                raise ValidationError(f"{path}: tensor shapes disagree with header")
    except KeyError as exc:
        raise ValidationError(f"{path}: missing tensor {exc}") from None
    return TrainedModel(model, config)


# ---------------------------------------------------------------------------
# synthetic tasks


@dataclass(frozen=True)
class SynthSpec:
    n_nodes: int = 100
    max_depth: int = 6
    multi_parent_prob: float = 0.1
    seed: int = 0
    S: int = 32
    P: int = 33
    examples_per_class: int = 50
    classifier_noise: float = 1.0
    embedding_noise: float = 1.0
    feature_noise: float = 1.0
    feature_scale: float = 3.0
    unseen_fraction: float = 0.0  # 0 = every leaf at maximum depth

    def __post_init__(self):
        for name in ("n_nodes", "max_depth", "S", "P", "examples_per_class"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.P < 2:
            raise ValidationError("P must be >= 2 (weights plus bias)")
        for name in ("classifier_noise", "embedding_noise", "feature_noise", "multi_parent_prob", "unseen_fraction"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.unseen_fraction >= 1:
            raise ValidationError("unseen_fraction must be < 1")

    _ALIASES = {"n": "n_nodes", "depth": "max_depth", "epc": "examples_per_class", "unseen": "unseen_fraction"}

    @classmethod
    def parse(cls, text: str, **overrides) -> "SynthSpec":
        """``"n=60,seed=1 S=16"`` style; commas or spaces separate fields."""
        kw = dict(overrides)
        types = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
        for tok in text.replace(",", " ").split():
            key, sep, val = tok.partition("=")
            key = cls._ALIASES.get(key, key)
            if not sep or key not in types:
                raise ValidationError(f"bad synth field {tok!r}; known: {sorted(types)}")
            try:
                kw[key] = types[key](val)
            except ValueError:
                raise ValidationError(f"bad value for {key}: {val!r}") from None
        return cls(**kw)

    def as_dict(self) -> dict:
        return asdict(self)


def random_connected_graph(n: int, rng: np.random.Generator, p: float = 0.3) -> SparseMatrix:
    """Symmetric 0/1 adjacency with self-loops: a random spanning tree plus
    Erdos-Renyi edges with probability ``p``."""
    a = (rng.random((n, n)) < p).astype(float)
    for i in range(1, n):
        j = int(rng.integers(i))
        a[i, j] = 1.0
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 1.0)
    return from_dense(a)


def node_depths(dag: TaxonomyDag) -> np.ndarray:
    """Longest parent chain to a root (roots at depth 0)."""
    depth = np.full(dag.n_nodes, -1)
    order = _topological(dag)
    for i in order:
        depth[i] = 1 + max((depth[p] for p in dag.parents[i]), default=-1)
    return depth


def _topological(dag: TaxonomyDag) -> list[int]:
    indeg = [len(p) for p in dag.parents]
    queue = [i for i, d in enumerate(indeg) if d == 0]
    out = []
    while queue:
        u = queue.pop(0)
        out.append(u)
        for c in dag.children[u]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    return out


def synth_hierarchy(spec: SynthSpec) -> TaxonomyDag:
    """Random rooted DAG.

    Node i attaches to a uniformly chosen earlier node whose depth is below
    ``max_depth``; with probability ``multi_parent_prob`` it also gets a
    second parent from the strictly shallower nodes, so edges always point to
    smaller depth and no cycle can form.
    """
    rng = np.random.default_rng([spec.seed, 1])
    names = [f"n{i}" for i in range(spec.n_nodes)]
    depth = [0]
    edges: list[tuple[str, str]] = []
    for i in range(1, spec.n_nodes):
        open_nodes = [j for j in range(i) if depth[j] < spec.max_depth]
        parent = open_nodes[rng.integers(len(open_nodes))]
        depth.append(depth[parent] + 1)
        edges.append((names[i], names[parent]))
        if rng.random() < spec.multi_parent_prob:
            shallower = [j for j in range(i) if depth[j] < depth[i] and j != parent]
            if shallower:
                extra = shallower[rng.integers(len(shallower))]
                edges.append((names[i], names[extra]))
    return build_dag(edges, extra_nodes=names)


@dataclass(frozen=True)
class SynthTask:
    dag: TaxonomyDag
    embeddings: EmbeddingTable
    weights: ClassifierWeights
    mask: SeenMask
    unseen_batch: FeatureBatch
    seen_batch: FeatureBatch
    true_classifiers: np.ndarray  # every node, L2-normalized

    @property
    def unseen(self) -> np.ndarray:
        return self.mask.unseen()


def synth_task(dag: TaxonomyDag, spec: SynthSpec) -> SynthTask:
    """Graph-smooth classifiers, embeddings derived from them, and features.

    Classifiers diffuse down the hierarchy (child = mean of parents + noise),
    embeddings are a fixed random projection of the classifiers plus noise,
    and features for class c sit around ``feature_scale`` times the weight
    part of c's classifier.
    """
    rng = np.random.default_rng([spec.seed, 2])
    n, P, S = dag.n_nodes, spec.P, spec.S
    raw = np.zeros((n, P))
    for i in _topological(dag):
        if dag.parents[i]:
            raw[i] = raw[list(dag.parents[i])].mean(axis=0) + spec.classifier_noise * rng.standard_normal(P)
        else:
            raw[i] = rng.standard_normal(P)
    # zero bias: the logit of a noise-free feature is then a cosine, so its own class wins
    raw[:, -1] = 0.0
    w = l2_normalize_rows(raw)

    proj = rng.standard_normal((P, S)) / math.sqrt(P)
    emb = w @ proj + spec.embedding_noise * rng.standard_normal((n, S)) / math.sqrt(S)

    depth = node_depths(dag)
    leaves = np.array(dag.leaves(), dtype=np.int64)
    if spec.unseen_fraction > 0:
        n_unseen = max(1, int(round(spec.unseen_fraction * n)))
        order = sorted(leaves.tolist(), key=lambda i: (-depth[i], i))
        unseen = np.array(sorted(order[:n_unseen]), dtype=np.int64)
    else:
        deepest = depth[leaves].max() if leaves.size else 0
        unseen = leaves[depth[leaves] == deepest]
    seen = np.setdiff1d(np.arange(n), unseen)
    if seen.size < 2 or unseen.size < 1:
        raise ValidationError(f"split has {seen.size} seen and {unseen.size} unseen classes; need >= 2 and >= 1")

    def draw(classes):
        classes = np.asarray(classes, dtype=np.int64)
        labels = np.repeat(classes, spec.examples_per_class)
        centers = spec.feature_scale * w[labels, :-1]
        noise = spec.feature_noise * rng.standard_normal(centers.shape) / math.sqrt(P - 1)
        return FeatureBatch(centers + noise, labels)

    unseen_batch = draw(unseen)
    seen_batch = draw(seen)
    ids = tuple(dag.node_ids)
    return SynthTask(
        dag=dag,
        embeddings=EmbeddingTable(ids, emb),
        weights=ClassifierWeights(tuple(ids[i] for i in seen), w[seen]),
        mask=SeenMask(seen, n),
        unseen_batch=unseen_batch,
        seen_batch=seen_batch,
        true_classifiers=w,
    )
