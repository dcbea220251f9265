"""Built-in classifiers and cross-validated evaluation of learned features.

Classifier configs (:class:`MlpConfig`, :class:`LinearConfig`) expose
``fit(features, labels)`` returning a model with ``predict(features)``;
:func:`cross_validate` accepts any object following that protocol.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import _binfmt
from .datamodel import DataSetContainer, FoldAssignment
from .errors import InvalidArgumentError
from .tensorcore.cells import glorot_uniform
from .tensorcore.optim import OptimizerState, adam_step

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


def standardize_fit(features) -> Tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and standard deviation (floored at 1e-8)."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidArgumentError("standardization needs a non-empty (N, D) training matrix")
    return X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR)


def standardize_apply(features, mean, std) -> np.ndarray:
    return (np.asarray(features, dtype=np.float64) - mean) / std


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _encode_labels(labels) -> Tuple[List[str], np.ndarray]:
    labels = list(labels)
    if any(lab is None for lab in labels):
        raise InvalidArgumentError("every training instance needs a label")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise InvalidArgumentError(f"training set has a single class {classes}; need at least two")
    index = {c: i for i, c in enumerate(classes)}
    return classes, np.array([index[lab] for lab in labels])


def _check_features(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidArgumentError(f"features must be (N, D), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgumentError("features contain non-finite values")
    return X


# -- multilayer perceptron ---------------------------------------------------------

@dataclass(frozen=True)
class MlpConfig:
    hidden: Tuple[int, ...] = (128, 128)
    epochs: int = 400
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if any(h < 1 for h in self.hidden):
            raise InvalidArgumentError("hidden layer sizes must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")

    def fit(self, features, labels) -> "MlpModel":
        return mlp_train(features, labels, self)


@dataclass
class MlpModel:
    classes: List[str]
    params: Dict[str, np.ndarray]
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None

    @property
    def num_layers(self) -> int:
        return len(self.params) // 2

    def _forward(self, X):
        acts = [X]
        h = X
        for l in range(self.num_layers):
            z = h @ self.params[f"W{l}"] + self.params[f"b{l}"]
            h = np.maximum(z, 0.0) if l < self.num_layers - 1 else z
            acts.append(h)
        return acts

    def _prepare(self, features):
        X = _check_features(features)
        if self.mean is not None:
            X = standardize_apply(X, self.mean, self.std)
        return X.astype(np.float32)

    def predict_proba(self, features) -> np.ndarray:
        logits = self._forward(self._prepare(features))[-1].astype(np.float64)
        return softmax(logits)

    def predict(self, features) -> List[str]:
        return mlp_predict(self, features)[1]


def mlp_train(features, labels, config: MlpConfig = MlpConfig()) -> MlpModel:
    """Softmax MLP with rectifier hidden layers, cross-entropy and Adam."""
    X = _check_features(features)
    if len(X) != len(labels):
        raise InvalidArgumentError(f"{len(X)} feature rows but {len(labels)} labels")
    classes, y = _encode_labels(labels)
    rng = np.random.default_rng(config.seed)
    mean = std = None
    if config.standardize:
        mean, std = standardize_fit(X)
        X = standardize_apply(X, mean, std)
    X = X.astype(np.float32)
    sizes = [X.shape[1], *config.hidden, len(classes)]
    params = {}
    for l in range(len(sizes) - 1):
        params[f"W{l}"] = glorot_uniform(rng, sizes[l], sizes[l + 1]).astype(np.float32)
        params[f"b{l}"] = np.zeros(sizes[l + 1], dtype=np.float32)
    model = MlpModel(classes, params, mean, std)
    state = OptimizerState.for_params(params, learning_rate=config.learning_rate)
    onehot = np.eye(len(classes), dtype=np.float32)[y]
    n = len(X)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            adam_step(params, _mlp_grads(model, X[idx], onehot[idx]), state)
    return model


def _mlp_grads(model: MlpModel, X, onehot):
    acts = model._forward(X)
    delta = (softmax(acts[-1]) - onehot) / len(X)
    grads = {}
    for l in range(model.num_layers - 1, -1, -1):
        grads[f"W{l}"] = acts[l].T @ delta
        grads[f"b{l}"] = delta.sum(axis=0)
        if l > 0:
            delta = (delta @ model.params[f"W{l}"].T) * (acts[l] > 0)
    return {k: grads[k].astype(np.float32) for k in model.params}


def mlp_predict(model: MlpModel, features):
    """Returns ``(probabilities, labels)``; each probability row sums to 1."""
    probs = model.predict_proba(features)
    return probs, [model.classes[i] for i in probs.argmax(axis=1)]


# -- multinomial logistic regression ----------------------------------------------

@dataclass(frozen=True)
class LinearConfig:
    l2: float = 1e-2
    tol: float = 1e-5
    max_iter: int = 50000
    init_seed: Optional[int] = None

    def fit(self, features, labels) -> "LinearModel":
        return linear_train(features, labels, self.l2, self.tol, self.max_iter, self.init_seed)


@dataclass
class LinearModel:
    classes: List[str]
    W: np.ndarray  # (D + 1, C); last row is the bias
    iterations: int = 0
    objective: float = float("nan")
    converged: bool = False

    def predict_proba(self, features) -> np.ndarray:
        X = _check_features(features)
        return softmax(X @ self.W[:-1] + self.W[-1])

    def predict(self, features) -> List[str]:
        return linear_predict(self, features)


def _linear_objective(Xb, Y, W, l2):
    logits = Xb @ W
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    obj = -(Y * logp).sum() / len(Xb) + 0.5 * l2 * float((W * W).sum())
    grad = Xb.T @ (np.exp(logp) - Y) / len(Xb) + l2 * W
    return obj, grad


def linear_train(features, labels, l2: float = 1e-2, tol: float = 1e-5, max_iter: int = 50000,
                 init_seed: Optional[int] = None) -> LinearModel:
    """L2-regularized multinomial logistic regression by full-batch gradient descent.

    Minimizes ``mean cross-entropy + l2/2 * ||W||^2`` (bias included in W)
    with the fixed step ``1/L`` from the Hessian bound
    ``L = 0.5 * lambda_max(X^T X) / n + l2``, stopping when the gradient
    norm drops below ``tol`` or after ``max_iter`` steps.
    """
    if l2 <= 0:
        raise InvalidArgumentError("l2 must be positive")
    X = _check_features(features)
    if len(X) != len(labels):
        raise InvalidArgumentError(f"{len(X)} feature rows but {len(labels)} labels")
    classes, y = _encode_labels(labels)
    Xb = np.hstack([X, np.ones((len(X), 1))])
    Y = np.eye(len(classes))[y]
    lipschitz = 0.5 * np.linalg.eigvalsh(Xb.T @ Xb / len(Xb))[-1] + l2
    step = 1.0 / lipschitz
    if init_seed is None:
        W = np.zeros((Xb.shape[1], len(classes)))
    else:
        W = np.random.default_rng(init_seed).normal(0.0, 1.0, (Xb.shape[1], len(classes)))
    obj, grad = _linear_objective(Xb, Y, W, l2)
    it, converged = 0, False
    while it < max_iter:
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        W = W - step * grad
        obj, grad = _linear_objective(Xb, Y, W, l2)
        it += 1
    if not converged:
        converged = bool(np.linalg.norm(grad) < tol)
        if not converged:
            log.warning("logistic regression stopped at max_iter=%d (gradient norm %.3g)",
                        max_iter, np.linalg.norm(grad))
    return LinearModel(classes, W, it, float(obj), converged)


def linear_predict(model: LinearModel, features) -> List[str]:
    return [model.classes[i] for i in model.predict_proba(features).argmax(axis=1)]


# -- cross-validation ---------------------------------------------------------------

@dataclass
class EvalReport:
    classes: List[str]
    fold_accuracy: List[float] = field(default_factory=list)
    fold_uar: List[float] = field(default_factory=list)
    fold_sizes: List[int] = field(default_factory=list)
    confusion: np.ndarray = None  # rows: true class, columns: predicted class
    warnings: List[str] = field(default_factory=list)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy)) if self.fold_accuracy else float("nan")

    @property
    def mean_uar(self) -> float:
        return float(np.mean(self.fold_uar)) if self.fold_uar else float("nan")

    def to_text(self) -> str:
        out = io.StringIO()
        out.write(f"{'fold':>6} {'size':>6} {'accuracy':>10} {'UAR':>10}\n")
        for i, (n, acc, uar) in enumerate(zip(self.fold_sizes, self.fold_accuracy, self.fold_uar)):
            out.write(f"{i:>6} {n:>6} {acc:>10.4f} {uar:>10.4f}\n")
        out.write(f"{'mean':>6} {sum(self.fold_sizes):>6} {self.mean_accuracy:>10.4f} {self.mean_uar:>10.4f}\n")
        out.write("\nconfusion matrix (rows: true, columns: predicted)\n")
        width = max([len(c) for c in self.classes] + [6])
        out.write(" " * width + " " + " ".join(f"{c:>{width}}" for c in self.classes) + "\n")
        for c, row in zip(self.classes, self.confusion):
            out.write(f"{c:>{width}} " + " ".join(f"{int(v):>{width}}" for v in row) + "\n")
        for w in self.warnings:
            out.write(f"warning: {w}\n")
        return out.getvalue()

    def to_tsv(self) -> str:
        lines = ["fold\tsize\taccuracy\tuar"]
        for i, (n, acc, uar) in enumerate(zip(self.fold_sizes, self.fold_accuracy, self.fold_uar)):
            lines.append(f"{i}\t{n}\t{acc!r}\t{uar!r}")
        lines.append(f"mean\t{sum(self.fold_sizes)}\t{self.mean_accuracy!r}\t{self.mean_uar!r}")
        lines.append("")
        lines.append("true\\predicted\t" + "\t".join(self.classes))
        for c, row in zip(self.classes, self.confusion):
            lines.append(c + "\t" + "\t".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    def write(self, prefix) -> Tuple[Path, Path]:
        """Write ``<prefix>.txt`` and ``<prefix>.tsv``."""
        prefix = Path(prefix)
        txt, tsv = prefix.with_name(prefix.name + ".txt"), prefix.with_name(prefix.name + ".tsv")
        _binfmt.atomic_write(txt, self.to_text().encode("utf-8"))
        _binfmt.atomic_write(tsv, self.to_tsv().encode("utf-8"))
        return txt, tsv


def confusion_matrix(true_idx, pred_idx, num_classes) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true_idx), np.asarray(pred_idx)), 1)
    return cm


def unweighted_average_recall(cm) -> float:
    """Mean recall over classes that occur (non-zero row) in ``cm``."""
    support = cm.sum(axis=1)
    present = support > 0
    return float(np.mean(np.diag(cm)[present] / support[present]))


def cross_validate(container: DataSetContainer, folds: Optional[FoldAssignment] = None,
                   classifier=None) -> EvalReport:
    """Train on all folds but one, test on the held-out fold, for every fold.

    Standardization statistics are fit on each training split only. Uses the
    container's own fold column when ``folds`` is None.
    """
    if container.kind != "features":
        raise InvalidArgumentError(f"cross-validation needs features, container holds {container.kind}")
    classifier = classifier if classifier is not None else MlpConfig()
    labels = container.labels
    if any(lab is None for lab in labels):
        raise InvalidArgumentError("every instance needs a label for evaluation")
    if folds is not None:
        fold_idx, k = np.asarray(folds.folds), folds.k
        if len(fold_idx) != len(container):
            raise InvalidArgumentError(f"{len(fold_idx)} fold indices for {len(container)} instances")
    elif container.has_folds():
        fold_idx, k = np.array(container.folds), container.num_folds
    else:
        raise InvalidArgumentError("no fold assignment given and the container has none")
    X = container.matrix().astype(np.float64)
    classes = container.vocabulary
    cidx = {c: i for i, c in enumerate(classes)}
    y = np.array([cidx[lab] for lab in labels])
    label_arr = np.array(labels, dtype=object)
    report = EvalReport(classes, confusion=np.zeros((len(classes), len(classes)), dtype=np.int64))
    for i in range(k):
        test = fold_idx == i
        train = ~test
        if not test.any():
            report.warnings.append(f"fold {i}: empty test split, skipped")
            continue
        if not train.any():
            report.warnings.append(f"fold {i}: empty training split, skipped")
            continue
        absent = sorted(set(label_arr[test]) - set(label_arr[train]))
        if absent:
            report.warnings.append(f"fold {i}: degenerate fold, class(es) {absent} absent from training split")
        mean, std = standardize_fit(X[train])
        Xtr, Xte = standardize_apply(X[train], mean, std), standardize_apply(X[test], mean, std)
        train_classes = sorted(set(label_arr[train]))
        if len(train_classes) == 1:
            report.warnings.append(f"fold {i}: single training class, predicting {train_classes[0]!r}")
            pred = [train_classes[0]] * int(test.sum())
        else:
            model = classifier.fit(Xtr, list(label_arr[train]))
            pred = list(model.predict(Xte))
        cm = confusion_matrix(y[test], [cidx[p] for p in pred], len(classes))
        report.confusion += cm
        report.fold_sizes.append(int(test.sum()))
        report.fold_accuracy.append(float(np.trace(cm) / cm.sum()))
        report.fold_uar.append(unweighted_average_recall(cm))
    return report
