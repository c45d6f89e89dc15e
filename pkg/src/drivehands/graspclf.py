"""Linear SVM grasp classifier on PCA-reduced HOG features.

The solver minimises the soft-margin hinge objective
``1/2 |w|^2 + C * sum_i c_i * max(0, 1 - y_i (w.x_i + b))`` by full-batch
sub-gradient descent with ``1/(lambda t)`` steps (``lambda = 1/(C n)``) and
t-weighted iterate averaging. The bias is handled as an extra constant
feature, so it is regularised along with ``w``. Several independent binary
problems (classes x C values) are solved side by side as matrix columns.
Sub-gradient steps are not descent steps, so the solver keeps the best
averaged iterate seen so far.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .evalkit import GraspReport, eval_grasp
from .graspfeat import HOGParams, PCAModel, hog_batch, jitter, pca_fit, pca_transform
from .refine import HandInstance

GRASP_MAGIC = "DRIVEHANDS-GRASP"
GRASP_VERSION = 1
DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


class GraspLabel(str, Enum):
    WHEEL = "wheel"
    PHONE = "phone"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


LABEL_ORDER = list(GraspLabel)
BINARY_NAMES = {1: "wheel", -1: "no_wheel"}


def binary_target(label: GraspLabel) -> int:
    return 1 if GraspLabel(label) is GraspLabel.WHEEL else -1


# -- solver -----------------------------------------------------------------

def _augment(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((len(X), 1))])


def hinge_objective(W: np.ndarray, Xa: np.ndarray, Y: np.ndarray, C, weights) -> np.ndarray:
    """Per-column ``1/2 |w|^2 + C sum c_i hinge_i`` (bias included in ``w``)."""
    hinge = np.maximum(0.0, 1.0 - Y * (Xa @ W))
    return 0.5 * (W ** 2).sum(axis=0) + np.asarray(C) * (weights * hinge).sum(axis=0)


def subgradient_solve(X, Y, C, weights=None, n_iter: int | None = None, record: bool = False):
    """Solve independent hinge problems column by column.

    ``Y`` is ``(n, m)`` in {-1, +1}; ``C`` has one value per column. Returns
    ``(W, b)`` of shapes ``(m, d)`` and ``(m,)`` plus the averaged-iterate
    objective history when ``record`` is set.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, m = Y.shape
    C = np.broadcast_to(np.asarray(C, dtype=np.float64), (m,))
    weights = np.ones((n, m)) if weights is None else np.broadcast_to(np.asarray(weights, dtype=np.float64), (n, m))
    if n_iter is None:
        n_iter = 10 * n
    Xa = _augment(X)
    lam = 1.0 / (C * n)
    radius = np.sqrt(2.0 * weights.mean(axis=0) / lam)
    W = np.zeros((Xa.shape[1], m))
    A = np.zeros_like(W)
    best = A.copy()
    best_obj = np.full(m, np.inf)
    history = []

    def keep_best(margins_a):
        nonlocal best_obj
        obj = 0.5 * (A ** 2).sum(axis=0) + C * (weights * np.maximum(0.0, 1.0 - margins_a)).sum(axis=0)
        better = obj < best_obj
        best[:, better] = A[:, better]
        best_obj = np.where(better, obj, best_obj)

    for t in range(1, n_iter + 1):
        # one product gives margins of the iterate and of the running average
        M = Y[:, :, None] * (Xa @ np.stack([W, A], axis=2).reshape(-1, 2 * m)).reshape(n, m, 2)
        if t > 1:
            keep_best(M[:, :, 1])
            if record:
                history.append(best_obj.copy())
        G = Xa.T @ ((M[:, :, 0] < 1.0) * weights * Y) / n
        W = (1.0 - 1.0 / t) * W + G / (lam * t)
        norm = np.linalg.norm(W, axis=0)
        W = W * np.minimum(1.0, radius / np.maximum(norm, 1e-300))
        A += (2.0 / (t + 1)) * (W - A)
    keep_best(Y * (Xa @ A))
    if record:
        history.append(best_obj.copy())
    out = (best[:-1].T.copy(), best[-1].copy())
    return (out, np.asarray(history)) if record else out


def balanced_weights(y: np.ndarray) -> np.ndarray:
    """``n / (2 n_class)`` per sample for a +-1 label vector."""
    n = len(y)
    pos = np.count_nonzero(y > 0)
    neg = n - pos
    return np.where(y > 0, n / (2.0 * max(pos, 1)), n / (2.0 * max(neg, 1)))


def stratified_folds(labels: Sequence, folds: int, seed: int = 0) -> np.ndarray:
    """Fold index per sample; each class is dealt round-robin after a shuffle."""
    labels = list(labels)
    rng = np.random.default_rng(seed)
    out = np.empty(len(labels), dtype=np.int64)
    offset = 0
    classes = sorted(set(labels), key=lambda c: str(c))
    for c in classes:
        idx = np.array([i for i, l in enumerate(labels) if l == c])
        idx = rng.permutation(idx)
        out[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return out


# -- model ------------------------------------------------------------------

@dataclass
class LinearSVMModel:
    kind: str  # "binary" or "ovr"
    classes: list
    weights: np.ndarray  # (m, d)
    bias: np.ndarray  # (m,)
    C: list[float]
    class_counts: list[int]
    cv: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim}-d input, got {X.shape[-1]}")
        return X @ self.weights.T + self.bias

    def to_dict(self) -> dict:
        return {"kind": self.kind, "classes": [_label_out(c) for c in self.classes],
                "weights": self.weights.tolist(), "bias": self.bias.tolist(), "C": list(self.C),
                "class_counts": list(self.class_counts), "cv": self.cv}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearSVMModel":
        classes = d["classes"] if d["kind"] == "binary" else [GraspLabel(c) for c in d["classes"]]
        return cls(d["kind"], classes, np.asarray(d["weights"], dtype=np.float64).reshape(len(d["bias"]), -1),
                   np.asarray(d["bias"], dtype=np.float64), list(d["C"]), list(d["class_counts"]), d.get("cv", {}))


def _label_out(c):
    return c.value if isinstance(c, GraspLabel) else c


def _select_and_fit(X, Y, strat, C_grid, folds, seed, n_iter, class_weight):
    """Cross-validate C per column of ``Y`` and refit on all data."""
    n, m = Y.shape
    C_grid = sorted(float(c) for c in C_grid)
    nc = len(C_grid)
    fold_of = stratified_folds(strat, folds, seed)
    acc = np.zeros((folds, m, nc))
    for f in range(folds):
        tr, te = fold_of != f, fold_of == f
        Ytr = np.repeat(Y[tr], nc, axis=1)  # column j*nc + k -> class j, C k
        Cs = np.tile(C_grid, m)
        wts = (np.repeat(np.column_stack([balanced_weights(Y[tr, j]) for j in range(m)]), nc, axis=1)
               if class_weight else None)
        Wf, bf = subgradient_solve(X[tr], Ytr, Cs, wts, n_iter)
        scores = X[te] @ Wf.T + bf
        pred = np.where(scores >= 0, 1.0, -1.0)
        acc[f] = (pred == np.repeat(Y[te], nc, axis=1)).mean(axis=0).reshape(m, nc)
    mean_acc = acc.mean(axis=0)
    chosen = [C_grid[int(np.argmax(mean_acc[j]))] for j in range(m)]
    wts = np.column_stack([balanced_weights(Y[:, j]) for j in range(m)]) if class_weight else None
    W, b = subgradient_solve(X, Y, chosen, wts, n_iter)
    cv = {"C_grid": C_grid, "folds": folds, "mean_accuracy": mean_acc.tolist(),
          "fold_accuracy": acc.tolist()}
    return W, b, chosen, cv


def _check_cv(n, folds):
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError(f"need at least {folds} samples for {folds}-fold CV")


def svm_train_binary(X, y, C_grid=DEFAULT_C_GRID, folds: int = 10, seed: int = 0,
                     n_iter: int | None = None, class_weight: bool = False) -> LinearSVMModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("binary labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise ValueError("degenerate labels")
    _check_cv(len(X), folds)
    if n_iter is None:
        n_iter = 10 * len(X)
    W, b, chosen, cv = _select_and_fit(X, y[:, None], y, C_grid, folds, seed, n_iter, class_weight)
    counts = [int(np.count_nonzero(y > 0)), int(np.count_nonzero(y < 0))]
    return LinearSVMModel("binary", [1, -1], W, b, chosen, counts, cv)


def svm_train_ovr(X, labels: Sequence, C_grid=DEFAULT_C_GRID, folds: int = 10, seed: int = 0,
                  n_iter: int | None = None, class_weight: bool = True) -> LinearSVMModel:
    """One class-vs-rest linear SVM per class present, in enum order."""
    X = np.asarray(X, dtype=np.float64)
    labels = [GraspLabel(l) for l in labels]
    classes = [c for c in LABEL_ORDER if c in labels]
    if len(classes) < 2:
        raise ValueError("degenerate labels")
    _check_cv(len(X), folds)
    if n_iter is None:
        n_iter = 10 * len(X)
    Y = np.column_stack([[1.0 if l is c else -1.0 for l in labels] for c in classes])
    W, b, chosen, cv = _select_and_fit(X, Y, labels, C_grid, folds, seed, n_iter, class_weight)
    counts = [labels.count(c) for c in classes]
    return LinearSVMModel("ovr", classes, W, b, chosen, counts, cv)


def svm_predict(model: LinearSVMModel, x):
    """``(label, scores)`` for one vector.

    Binary: +1 when ``w.x + b >= 0``. One-vs-all: highest score; ties go to
    the more frequent training class, then to enum order.
    """
    scores = model.decision(np.asarray(x, dtype=np.float64))
    if model.kind == "binary":
        return (1 if scores[0] >= 0 else -1), scores
    best = max(range(len(model.classes)),
               key=lambda i: (scores[i], model.class_counts[i], -LABEL_ORDER.index(model.classes[i])))
    return model.classes[best], scores


def svm_predict_batch(model: LinearSVMModel, X) -> list:
    return [svm_predict(model, x)[0] for x in np.atleast_2d(X)]


# -- end-to-end ---------------------------------------------------------------

@dataclass(frozen=True)
class GraspConfig:
    task: str = "3class"  # or "binary"
    hog: HOGParams = HOGParams()
    pca_dim: int = 30
    c_grid: tuple = DEFAULT_C_GRID
    folds: int = 10
    svm_iter: int | None = None
    class_weight: bool = True
    jitter_n: int = 5
    jitter_scale: tuple = (0.9, 1.1)
    jitter_shift: float = 0.1
    test_fraction: float = 0.2
    masked: bool = True

    def __post_init__(self):
        if self.task not in ("binary", "3class"):
            raise ValueError("task must be 'binary' or '3class'")


@dataclass
class GraspModel:
    pca: PCAModel
    svm: LinearSVMModel
    hog: HOGParams
    task: str
    masked: bool = True
    training: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def features(self, chips) -> np.ndarray:
        return pca_transform(self.pca, hog_batch(chips, self.hog))

    def predict_chips(self, chips) -> list:
        labels = svm_predict_batch(self.svm, self.features(chips))
        return [BINARY_NAMES[l] if self.task == "binary" else l for l in labels]

    def predict_instance(self, inst: HandInstance):
        chip = inst.chip if self.masked else inst.raw_chip
        return self.predict_chips([chip])[0]

    def to_json(self) -> str:
        doc = {
            "magic": GRASP_MAGIC,
            "version": GRASP_VERSION,
            "task": self.task,
            "masked": self.masked,
            "hog": asdict(self.hog),
            "pca": self.pca.to_dict(),
            "svm": self.svm.to_dict(),
            "training": self.training,
            "config": self.config,
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "GraspModel":
        doc = json.loads(text)
        if doc.get("magic") != GRASP_MAGIC:
            raise ValueError("not a grasp model file")
        if doc.get("version") != GRASP_VERSION:
            raise ValueError(f"unsupported grasp model version {doc.get('version')}")
        model = cls(PCAModel.from_dict(doc["pca"]), LinearSVMModel.from_dict(doc["svm"]),
                    HOGParams(**doc["hog"]), doc["task"], doc["masked"],
                    doc.get("training", {}), doc.get("config", {}))
        if model.pca.dim != model.svm.dim:
            raise ValueError("PCA output and SVM input dimensions disagree")
        return model


def save_grasp_model(path, model: GraspModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())


def load_grasp_model(path) -> GraspModel:
    with open(path, encoding="utf-8") as fh:
        return GraspModel.from_json(fh.read())


def stratified_split(labels: Sequence, test_fraction: float, seed: int):
    """Per-class shuffled split; each class sends ``round(f * n_c)`` to test."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in LABEL_ORDER:
        idx = [i for i, l in enumerate(labels) if l is c]
        if not idx:
            continue
        idx = rng.permutation(idx).tolist()
        k = int(round(test_fraction * len(idx)))
        test += idx[:k]
        train += idx[k:]
    return sorted(train), sorted(test)


@dataclass
class GraspTrainingResult:
    model: GraspModel
    report: GraspReport
    train_idx: list[int]
    test_idx: list[int]


def train_grasp_pipeline(instances: Sequence[HandInstance], labels: Sequence, config: GraspConfig = GraspConfig(),
                         seed: int = 0, images: Mapping[str, np.ndarray] | None = None,
                         full_masks: Mapping[str, np.ndarray] | None = None) -> GraspTrainingResult:
    """Split 80-20 by class, jitter the training side, HOG -> PCA -> SVM.

    Jittering happens after the split so augmented copies of a test hand
    never reach training. ``images`` maps image ids to frames and is needed
    whenever ``config.jitter_n > 1``.
    """
    labels = [GraspLabel(l) for l in labels]
    if len(set(labels)) < 2:
        raise ValueError("degenerate labels")
    train_idx, test_idx = stratified_split(labels, config.test_fraction, seed)
    if not test_idx:
        raise ValueError("test split is empty")
    if config.jitter_n > 1 and images is None:
        raise ValueError("jittering needs the source images")
    chip_of = (lambda inst: inst.chip) if config.masked else (lambda inst: inst.raw_chip)
    tr_chips, tr_labels = [], []
    for i in train_idx:
        inst = instances[i]
        copies = [inst]
        if config.jitter_n > 1:
            fm = full_masks.get(inst.image_id) if full_masks else None
            copies = jitter(inst, images[inst.image_id], config.jitter_n, config.jitter_scale,
                            config.jitter_shift, seed=[seed, i], full_mask=fm)
        tr_chips += [chip_of(c) for c in copies]
        tr_labels += [labels[i]] * len(copies)
    H = hog_batch(tr_chips, config.hog)
    pca = pca_fit(H, config.pca_dim)
    Z = pca_transform(pca, H)
    if config.task == "binary":
        y = np.array([binary_target(l) for l in tr_labels], dtype=np.float64)
        svm = svm_train_binary(Z, y, config.c_grid, config.folds, seed, config.svm_iter, config.class_weight)
    else:
        svm = svm_train_ovr(Z, tr_labels, config.c_grid, config.folds, seed, config.svm_iter, config.class_weight)
    training = {"n_train_instances": len(train_idx), "n_train_samples": len(tr_labels),
                "n_test": len(test_idx), "seed": seed}
    model = GraspModel(pca, svm, config.hog, config.task, config.masked, training)
    preds = model.predict_chips([chip_of(instances[i]) for i in test_idx])
    if config.task == "binary":
        truth = [BINARY_NAMES[binary_target(labels[i])] for i in test_idx]
        report = eval_grasp(preds, truth, ["wheel", "no_wheel"])
    else:
        truth = [labels[i] for i in test_idx]
        report = eval_grasp(preds, truth, [c for c in LABEL_ORDER if c in labels])
    model.training["report"] = report.to_dict()
    return GraspTrainingResult(model, report, train_idx, test_idx)
