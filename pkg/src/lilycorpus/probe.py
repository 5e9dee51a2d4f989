"""Linear probing over frozen per-chunk embeddings.

Per-chunk vectors arrive as JSON lines; files are pooled with
token-count weights (a mean over token positions, so a short final
chunk contributes proportionally), classes below a minimum count are
dropped, and a multinomial logistic classifier is trained from scratch
per stratified fold on fold-local standardized features. Never-predicted
classes contribute precision 0, the stricter convention; it is recorded
in the report metadata.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LilyCorpusError

VALID_LAYERS = (3, 6, 9, 12)
DEFAULT_K = 5
DEFAULT_MIN_COUNT = 10
DEFAULT_SEED = 1337
LABELS_COLUMNS = ("file_id", "task", "label")


class MalformedRecord(LilyCorpusError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class DimensionMismatch(LilyCorpusError):
    pass


class NoRecords(LilyCorpusError):
    pass


class NoClassesRemain(LilyCorpusError):
    pass


class ClassSmallerThanK(LilyCorpusError):
    pass


class InvalidFoldCount(LilyCorpusError):
    pass


class TooFewSamples(LilyCorpusError):
    pass


class SingleClass(LilyCorpusError):
    pass


class NonFiniteLoss(LilyCorpusError):
    pass


class EmptyTestSet(LilyCorpusError):
    pass


@dataclass(frozen=True)
class EmbeddingRecord:
    file_id: str
    layer: int
    chunk_index: int
    token_count: int
    vector: np.ndarray


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 200
    step_size: float = 0.1
    l2_penalty: float = 1e-4
    seed: int = 0


@dataclass
class LinearProbe:
    W: np.ndarray
    b: np.ndarray
    trained: bool
    config: ProbeConfig
    loss_history: list = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(X @ self.W.T + self.b, axis=1)


@dataclass(frozen=True)
class StandardizerParams:
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class ReportRow:
    task: str
    layer: int
    model: str
    n_samples: int
    n_classes: int
    acc_mean: float
    acc_std: float
    precision_mean: float
    precision_std: float
    recall_mean: float
    recall_std: float


@dataclass
class ProbeReport:
    rows: list
    confusions: dict        # "task/layerN" -> {class_names, matrix}
    metadata: dict


# ---------------------------------------------------------------------------
# ingestion and pooling
# ---------------------------------------------------------------------------

_REQUIRED_KEYS = ("file_id", "layer", "chunk_index", "token_count", "vector")


def load_embeddings(path: str | Path) -> list[EmbeddingRecord]:
    records: list[EmbeddingRecord] = []
    dim: int | None = None
    group_indices: dict[tuple[str, int], list[int]] = {}
    group_line: dict[tuple[str, int], int] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"bad JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise MalformedRecord(line_no, "record is not an object")
            for key in _REQUIRED_KEYS:
                if key not in obj:
                    raise MalformedRecord(line_no, f"missing field {key!r}")
            if not isinstance(obj["file_id"], str):
                raise MalformedRecord(line_no, "file_id must be a string")
            for key in ("layer", "chunk_index", "token_count"):
                if not isinstance(obj[key], int) or isinstance(obj[key], bool):
                    raise MalformedRecord(line_no, f"{key} must be an integer")
            if obj["layer"] not in VALID_LAYERS:
                raise MalformedRecord(
                    line_no, f"layer must be one of {VALID_LAYERS}")
            if obj["chunk_index"] < 0 or obj["token_count"] < 0:
                raise MalformedRecord(line_no, "negative count")
            vec = obj["vector"]
            if (not isinstance(vec, list) or not vec
                    or not all(isinstance(v, (int, float))
                               and not isinstance(v, bool) for v in vec)):
                raise MalformedRecord(
                    line_no, "vector must be a non-empty list of numbers")
            arr = np.asarray(vec, dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise MalformedRecord(line_no, "vector has non-finite values")
            if dim is None:
                dim = arr.shape[0]
            elif arr.shape[0] != dim:
                raise DimensionMismatch(
                    f"line {line_no}: dimension {arr.shape[0]} != {dim}")
            key = (obj["file_id"], obj["layer"])
            group_indices.setdefault(key, []).append(obj["chunk_index"])
            group_line[key] = line_no
            records.append(EmbeddingRecord(
                obj["file_id"], obj["layer"], obj["chunk_index"],
                obj["token_count"], arr,
            ))
    for key, indices in group_indices.items():
        if sorted(indices) != list(range(len(indices))):
            raise MalformedRecord(
                group_line[key],
                f"chunk_index values for {key} not contiguous from 0")
    return records


def records_to_jsonl(records) -> str:
    lines = []
    for rec in records:
        lines.append(json.dumps({
            "file_id": rec.file_id,
            "layer": rec.layer,
            "chunk_index": rec.chunk_index,
            "token_count": rec.token_count,
            "vector": [float(v) for v in rec.vector],
        }, ensure_ascii=False))
    return "".join(line + "\n" for line in lines)


def pool_file_embedding(records) -> np.ndarray:
    """Token-count-weighted mean over chunks; equals the mean over all
    token positions. Falls back to the unweighted mean when every chunk
    reports zero tokens."""
    records = list(records)
    if not records:
        raise NoRecords("cannot pool zero records")
    vectors = np.stack([r.vector for r in records])
    weights = np.asarray([r.token_count for r in records], dtype=np.float64)
    if weights.sum() == 0:
        return vectors.mean(axis=0)
    return (weights[:, None] * vectors).sum(axis=0) / weights.sum()


def load_labels(path: str | Path) -> dict[str, dict[str, str]]:
    """CSV with a file_id,task,label header -> {task: {file_id: label}}."""
    tasks: dict[str, dict[str, str]] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        for line_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if line_no == 1:
                if tuple(row) != LABELS_COLUMNS:
                    raise MalformedRecord(
                        line_no,
                        "labels header must be %s" % ",".join(LABELS_COLUMNS))
                continue
            if len(row) != 3:
                raise MalformedRecord(line_no, "expected 3 columns")
            file_id, task, label = row
            tasks.setdefault(task, {})[file_id] = label
    return tasks


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

def filter_classes(labels, min_count: int = DEFAULT_MIN_COUNT):
    """Classes with enough samples, plus indices of surviving samples."""
    counts: dict[str, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    kept = sorted(c for c, n in counts.items() if n >= min_count)
    if not kept:
        raise NoClassesRemain(
            f"no class reaches min_count={min_count}")
    kept_set = set(kept)
    indices = [i for i, label in enumerate(labels) if label in kept_set]
    return kept, indices


def stratified_folds(y, k: int = DEFAULT_K, seed: int = DEFAULT_SEED):
    """Fold assignment with per-class fold sizes differing by at most 1."""
    if k < 2:
        raise InvalidFoldCount(f"k must be >= 2, got {k}")
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=np.int64)
    classes = sorted(np.unique(y).tolist())
    for ci, cls in enumerate(classes):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise ClassSmallerThanK(
                f"class {cls!r} has {len(idx)} samples, fewer than k={k}")
        perm = rng.permutation(idx)
        for pos, sample in enumerate(perm):
            # rotate the starting fold per class so remainders spread out
            assignment[sample] = (pos + ci) % k
    return assignment


def fit_standardizer(X_train: np.ndarray) -> StandardizerParams:
    X_train = np.asarray(X_train, dtype=np.float64)
    if X_train.shape[0] < 2:
        raise TooFewSamples("standardization needs at least 2 samples")
    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return StandardizerParams(mean=mean, std=std)


def apply_standardizer(X: np.ndarray, params: StandardizerParams) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - params.mean) / params.std


# ---------------------------------------------------------------------------
# the probe itself
# ---------------------------------------------------------------------------

def probe_loss_and_grad(W, b, X, y, l2_penalty):
    """Softmax cross-entropy with L2 on the weights (not the bias):
    loss, dW, db."""
    n = X.shape[0]
    logits = X @ W.T + b
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    picked = probs[np.arange(n), y]
    loss = -float(np.mean(np.log(picked + 1e-300)))
    loss += 0.5 * l2_penalty * float((W * W).sum())
    grad = probs.copy()
    grad[np.arange(n), y] -= 1.0
    grad_W = grad.T @ X / n + l2_penalty * W
    grad_b = grad.mean(axis=0)
    return loss, grad_W, grad_b


def _probe_loss(W, b, X, y, l2_penalty):
    n = X.shape[0]
    logits = X @ W.T + b
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)
    picked = probs[np.arange(n), y]
    loss = -float(np.mean(np.log(picked + 1e-300)))
    return loss + 0.5 * l2_penalty * float((W * W).sum())


def train_linear_probe(
    X: np.ndarray,
    y,
    config: ProbeConfig | None = None,
    n_classes: int | None = None,
) -> LinearProbe:
    """Full-batch gradient descent from zero weights; the step is halved
    whenever it would increase the loss, so the recorded loss history is
    non-increasing."""
    config = config or ProbeConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    present = np.unique(y)
    if len(present) < 2:
        raise SingleClass("training needs at least 2 classes")
    C = n_classes if n_classes is not None else int(y.max()) + 1
    d = X.shape[1]
    W = np.zeros((C, d))
    b = np.zeros(C)
    history: list[float] = []
    for _ in range(config.epochs):
        loss, grad_W, grad_b = probe_loss_and_grad(
            W, b, X, y, config.l2_penalty)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss}")
        history.append(loss)
        step = config.step_size
        moved = False
        for _ in range(30):
            W_next = W - step * grad_W
            b_next = b - step * grad_b
            if _probe_loss(W_next, b_next, X, y,
                           config.l2_penalty) <= loss + 1e-12:
                W, b = W_next, b_next
                moved = True
                break
            step /= 2.0
        if not moved:
            break
    return LinearProbe(W=W, b=b, trained=True, config=config,
                       loss_history=history)


def evaluate(probe: LinearProbe, X_test: np.ndarray, y_test) -> dict:
    """accuracy, macro precision/recall over the probe's class set, and
    the raw confusion matrix (rows true, columns predicted)."""
    X_test = np.asarray(X_test, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if len(y_test) == 0:
        raise EmptyTestSet("no test samples")
    C = probe.W.shape[0]
    preds = probe.predict(X_test)
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (y_test, preds), 1)
    accuracy = float(np.mean(preds == y_test))
    precisions = []
    recalls = []
    for c in range(C):
        tp = confusion[c, c]
        predicted = confusion[:, c].sum()
        actual = confusion[c, :].sum()
        precisions.append(tp / predicted if predicted > 0 else 0.0)
        recalls.append(tp / actual if actual > 0 else 0.0)
    return {
        "accuracy": accuracy,
        "macro_precision": float(np.mean(precisions)),
        "macro_recall": float(np.mean(recalls)),
        "confusion": confusion,
    }


# ---------------------------------------------------------------------------
# the full harness
# ---------------------------------------------------------------------------

def pool_by_layer(records) -> dict[int, dict[str, np.ndarray]]:
    grouped: dict[tuple[str, int], list[EmbeddingRecord]] = {}
    for rec in records:
        grouped.setdefault((rec.file_id, rec.layer), []).append(rec)
    pooled: dict[int, dict[str, np.ndarray]] = {}
    for (file_id, layer), recs in grouped.items():
        pooled.setdefault(layer, {})[file_id] = pool_file_embedding(recs)
    return pooled


def run_probe(
    embeddings_path: str | Path,
    labels_path: str | Path,
    layers=VALID_LAYERS,
    k: int = DEFAULT_K,
    seed: int = DEFAULT_SEED,
    min_count: int = DEFAULT_MIN_COUNT,
    config: ProbeConfig | None = None,
    model_tag: str | None = None,
) -> ProbeReport:
    if k < 2:
        raise InvalidFoldCount(f"k must be >= 2, got {k}")
    records = load_embeddings(embeddings_path)
    if not records:
        raise NoRecords(f"no embedding records in {embeddings_path}")
    tasks = load_labels(labels_path)
    if model_tag is None:
        model_tag = Path(embeddings_path).stem
    pooled = pool_by_layer(records)

    rows: list[ReportRow] = []
    confusions: dict[str, dict] = {}
    for task in sorted(tasks):
        file_labels = tasks[task]
        for layer in layers:
            by_file = pooled.get(layer)
            if not by_file:
                raise NoRecords(f"no embeddings for layer {layer}")
            file_ids = sorted(f for f in by_file if f in file_labels)
            if not file_ids:
                raise NoRecords(
                    f"no labeled files for task {task!r} at layer {layer}")
            labels = [file_labels[f] for f in file_ids]
            class_names, keep = filter_classes(labels, min_count)
            file_ids = [file_ids[i] for i in keep]
            labels = [labels[i] for i in keep]
            index = {name: ci for ci, name in enumerate(class_names)}
            X = np.stack([by_file[f] for f in file_ids])
            y = np.asarray([index[label] for label in labels])

            folds = stratified_folds(y, k=k, seed=seed)
            accs, precs, recs_ = [], [], []
            total_confusion = np.zeros(
                (len(class_names), len(class_names)), dtype=np.int64)
            for fold in range(k):
                train = folds != fold
                test = folds == fold
                params = fit_standardizer(X[train])
                probe = train_linear_probe(
                    apply_standardizer(X[train], params), y[train],
                    config=config, n_classes=len(class_names))
                metrics = evaluate(
                    probe, apply_standardizer(X[test], params), y[test])
                accs.append(metrics["accuracy"])
                precs.append(metrics["macro_precision"])
                recs_.append(metrics["macro_recall"])
                total_confusion += metrics["confusion"]

            rows.append(ReportRow(
                task=task, layer=layer, model=model_tag,
                n_samples=len(y), n_classes=len(class_names),
                acc_mean=float(np.mean(accs)), acc_std=float(np.std(accs)),
                precision_mean=float(np.mean(precs)),
                precision_std=float(np.std(precs)),
                recall_mean=float(np.mean(recs_)),
                recall_std=float(np.std(recs_)),
            ))
            confusions[f"{task}/layer{layer}"] = {
                "class_names": list(class_names),
                "matrix": total_confusion.tolist(),
            }

    metadata = {
        "model": model_tag,
        "k": k,
        "seed": seed,
        "min_count": min_count,
        "layers": list(layers),
        "never_predicted_precision": 0.0,
    }
    return ProbeReport(rows=rows, confusions=confusions, metadata=metadata)
