"""Train-on-synthetic, test-on-real utility evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from dpgen.data import TabularDataset

# Logistic regression hyperparameters (full-batch gradient descent on
# standardized features, zero init).
LR_STEP = 0.5
LR_ITERS = 500
LR_L2 = 1e-3


@dataclass
class EvalReport:
    classifier: str
    auroc: float
    auprc: float
    accuracy: float
    train_size: int
    test_size: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def auroc(y_true, scores) -> float:
    """Area under the ROC curve; tied scores earn half credit."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    ranks = rankdata(s)  # average ranks implement the half-credit rule
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(y_true, scores) -> float:
    """Average precision, stepping once per distinct score threshold."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("AUPRC needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp_at, n_at = tp[last], last + 1
    recall = tp_at / n_pos
    precision = tp_at / n_at
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _softmax(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


class LogisticRegression:
    """Multinomial logistic regression fit by full-batch gradient descent."""

    def __init__(self, step=LR_STEP, iters=LR_ITERS, l2=LR_L2):
        self.step, self.iters, self.l2 = step, iters, l2

    def fit(self, x, y, num_classes=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        if len(np.unique(y)) < 2:
            raise ValueError("training labels contain a single class")
        c = num_classes or int(y.max()) + 1
        self.mean_ = x.mean(axis=0)
        std = x.std(axis=0)
        self.std_ = np.where(std > 0, std, 1.0)
        xs = (x - self.mean_) / self.std_
        n, d = xs.shape
        w = np.zeros((d, c))
        b = np.zeros(c)
        onehot = np.eye(c)[y]
        for _ in range(self.iters):
            p = _softmax(xs @ w + b)
            g = (p - onehot) / n
            w -= self.step * (xs.T @ g + self.l2 * w)
            b -= self.step * g.sum(axis=0)
        self.coef_, self.intercept_ = w, b
        return self

    def predict_proba(self, x):
        xs = (np.asarray(x, dtype=float) - self.mean_) / self.std_
        return _softmax(xs @ self.coef_ + self.intercept_)


def eval_downstream(synthetic: TabularDataset, real_test: TabularDataset, classifier="logistic-regression", seed=0) -> EvalReport:
    """Fit on synthetic rows, score on real rows (raw feature units).

    Multiclass AUROC/AUPRC are one-vs-rest macro averages over the classes
    present in the test labels.
    """
    if classifier != "logistic-regression":
        raise ValueError(f"unsupported classifier {classifier!r}")
    if synthetic.columns != real_test.columns:
        raise ValueError("synthetic and real schemas differ")
    if synthetic.labels is None or real_test.labels is None:
        raise ValueError("evaluation needs labeled data")
    if not len(synthetic) or not len(real_test):
        raise ValueError("evaluation needs nonempty datasets")
    c = max(synthetic.num_classes, real_test.num_classes)
    model = LogisticRegression().fit(synthetic.raw_features(), synthetic.labels, c)
    proba = model.predict_proba(real_test.raw_features())
    y = real_test.labels
    acc = float(np.mean(np.argmax(proba, axis=1) == y))
    if c == 2:
        roc, pr = auroc(y == 1, proba[:, 1]), auprc(y == 1, proba[:, 1])
    else:
        present = [j for j in range(c) if 0 < np.sum(y == j) < len(y)]
        roc = float(np.mean([auroc(y == j, proba[:, j]) for j in present]))
        pr = float(np.mean([auprc(y == j, proba[:, j]) for j in present]))
    return EvalReport(classifier, roc, pr, acc, len(synthetic), len(real_test), int(seed))
