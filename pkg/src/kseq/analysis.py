"""Classification, sequence-divergence abnormality scoring, threshold sweeps,
and Pareto-front extraction."""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AnalysisError

from .tokenizer import TokenSequence

N_CLASSES = 24


# ---------------------------------------------------------------------------
# linear classifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainParams:
    learning_rate: float = 5.0
    l2: float = 1e-5
    epochs: int = 4000
    seed: int = 0


@dataclass(frozen=True)
class LinearClassifier:
    weights: np.ndarray   # C x F
    bias: np.ndarray      # C
    trained_on: str = ""
    hyperparams: dict = field(default_factory=dict)
    loss_history: tuple = ()

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.weights, dtype=np.float64))
        b = np.ascontiguousarray(np.asarray(self.bias, dtype=np.float64))
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise AnalysisError("classifier parameters must be finite",
                                code="non_finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    def predict_proba(self, x):
        return _softmax(np.asarray(x, dtype=np.float64) @ self.weights.T + self.bias)

    def predict(self, x):
        return self.predict_proba(x).argmax(axis=1)


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def ce_loss_and_grad(weights, bias, x, y_onehot, l2):
    """Cross-entropy + l2*||W||^2 and its gradients (kept separate so tests
    can check the gradient against finite differences)."""
    n = x.shape[0]
    probs = _softmax(x @ weights.T + bias)
    eps = 1e-300
    loss = -np.log(np.clip((probs * y_onehot).sum(axis=1), eps, None)).mean()
    loss += l2 * float((weights ** 2).sum())
    diff = (probs - y_onehot) / n
    grad_w = diff.T @ x + 2.0 * l2 * weights
    grad_b = diff.sum(axis=0)
    return loss, grad_w, grad_b


def dataset_fingerprint(x, y):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(x, dtype=np.float64).tobytes())
    h.update(np.asarray(y, dtype=np.int64).tobytes())
    return h.hexdigest()[:12]


def train_linear(x, y, hp=TrainParams(), n_classes=N_CLASSES):
    """Multinomial logistic regression by full-batch gradient descent.

    Initialization is uniform in [-0.01, 0.01] from the given seed; the
    loss history is recorded so callers can check descent behaviour.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not np.isfinite(x).all():
        raise AnalysisError("features must be finite", code="non_finite")
    present = set(np.unique(y).tolist())
    missing = sorted(set(range(n_classes)) - present)
    if missing:
        raise AnalysisError(f"classes absent from training data: {missing}",
                            code="missing_class")
    n, f = x.shape
    rng = np.random.default_rng(hp.seed)
    weights = rng.uniform(-0.01, 0.01, size=(n_classes, f))
    bias = rng.uniform(-0.01, 0.01, size=n_classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    history = []
    for _ in range(hp.epochs):
        loss, grad_w, grad_b = ce_loss_and_grad(weights, bias, x, onehot, hp.l2)
        history.append(loss)
        weights -= hp.learning_rate * grad_w
        bias -= hp.learning_rate * grad_b
    loss, _, _ = ce_loss_and_grad(weights, bias, x, onehot, hp.l2)
    history.append(loss)
    return LinearClassifier(weights=weights, bias=bias,
                            trained_on=dataset_fingerprint(x, y),
                            hyperparams={"learning_rate": hp.learning_rate,
                                         "l2": hp.l2, "epochs": hp.epochs,
                                         "seed": hp.seed},
                            loss_history=tuple(history))


def pool_features(patch_features, encoded):
    """Per-chromosome pooled vector: mean patch feature concatenated with the
    mean positional-encoded token vector."""
    return np.concatenate([patch_features.vectors.mean(axis=0),
                           encoded.vectors.mean(axis=0)])


def save_classifier(clf, path, extra=None):
    obj = {"version": 1, "weights": clf.weights.tolist(),
           "bias": clf.bias.tolist(), "trained_on": clf.trained_on,
           "hyperparams": clf.hyperparams}
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_classifier(path):
    obj = json.loads(Path(path).read_text())
    return LinearClassifier(weights=np.array(obj["weights"]),
                            bias=np.array(obj["bias"]),
                            trained_on=obj.get("trained_on", ""),
                            hyperparams=obj.get("hyperparams", {}))


# ---------------------------------------------------------------------------
# edit distance and pattern-based classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EditOp:
    op: str       # insert | delete | substitute
    index: int    # position in the source sequence (insert: before index)
    token: int | None = None

    def to_json(self):
        return {"op": self.op, "index": self.index, "token": self.token}


def edit_distance(a, b):
    """Unit-cost Levenshtein distance plus an edit script turning a into b.

    Backtrace ties prefer substitute over delete over insert. Script indices
    refer to positions in a; ops are emitted in left-to-right alignment
    order, and inserts place their token before a[index].
    """
    a = tuple(a)
    b = tuple(b)
    m, n = len(a), len(b)
    dist = np.zeros((m + 1, n + 1), dtype=np.int64)
    dist[:, 0] = np.arange(m + 1)
    dist[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            sub = dist[i - 1, j - 1] + (a[i - 1] != b[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    script = []
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (a[i - 1] != b[j - 1]):
            if a[i - 1] != b[j - 1]:
                script.append(EditOp("substitute", i - 1, b[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            script.append(EditOp("delete", i - 1, a[i - 1]))
            i -= 1
        else:
            script.append(EditOp("insert", i, b[j - 1]))
            j -= 1
    script.reverse()
    return int(dist[m, n]), tuple(script)


def apply_edit_script(a, script):
    """Replay an edit script against the source sequence."""
    out = []
    i = 0
    a = tuple(a)
    for op in script:
        while i < op.index:
            out.append(a[i])
            i += 1
        if op.op == "insert":
            out.append(op.token)
        elif op.op == "delete":
            i += 1
        elif op.op == "substitute":
            out.append(op.token)
            i += 1
        else:
            raise AnalysisError(f"unknown edit op {op.op!r}", code="bad_script")
    out.extend(a[i:])
    return tuple(out)


def _interior(seq):
    if isinstance(seq, TokenSequence):
        return seq.interior
    return tuple(seq)


def classify_by_pattern(seq, bank):
    """Nearest-canonical classification: argmin edit distance over classes
    (ties: lowest label). Returns (label, distance)."""
    interior = _interior(seq)
    best = None
    for label in bank.labels:
        d, _ = edit_distance(interior, bank.canonical(label))
        if best is None or d < best[1]:
            best = (label, d)
    if best is None:
        raise AnalysisError("pattern bank is empty", code="empty_bank")
    return best


@dataclass(frozen=True)
class DetectionResult:
    verdict: str   # normal | abnormal
    score: float
    explanation: dict

    def to_json(self):
        out = {"verdict": self.verdict, "score": self.score,
               "explanation": {
                   "canonical": list(self.explanation["canonical"]),
                   "observed": list(self.explanation["observed"]),
                   "edit_script": [op.to_json()
                                   for op in self.explanation["edit_script"]]}}
        return out


def detect_abnormal(seq, bank, predicted_class, threshold):
    """Score a sequence against its class canonical; abnormal iff the edit
    distance exceeds the threshold. The edit script is the explanation."""
    interior = _interior(seq)
    canonical = bank.canonical(predicted_class)
    score, script = edit_distance(canonical, interior)
    verdict = "abnormal" if score > threshold else "normal"
    return DetectionResult(verdict=verdict, score=float(score),
                           explanation={"canonical": canonical,
                                        "observed": interior,
                                        "edit_script": script})


# ---------------------------------------------------------------------------
# sweeps and the Pareto front
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    params: dict
    fn: int
    fp: int
    tn: int
    tp: int

    @property
    def fnr(self):
        return self.fn / (self.fn + self.tp) if self.fn + self.tp else 0.0

    @property
    def fpr(self):
        return self.fp / (self.fp + self.tn) if self.fp + self.tn else 0.0


def sweep(labeled_sequences, bank, grid):
    """One SweepPoint per grid element. labeled_sequences are
    (sequence, is_abnormal) pairs; abnormal is the positive class. Each grid
    element must carry a "threshold"; extra keys ride along in params."""
    items = [(_interior(seq), bool(flag)) for seq, flag in labeled_sequences]
    if not any(f for _, f in items) or not any(not f for _, f in items):
        raise AnalysisError("sweep needs both normal and abnormal instances",
                            code="single_class")
    scores = [classify_by_pattern(seq, bank)[1] for seq, _ in items]
    points = []
    for params in grid:
        thr = params["threshold"]
        fn = fp = tn = tp = 0
        for score, (_, abnormal) in zip(scores, items):
            flagged = score > thr
            if abnormal and flagged:
                tp += 1
            elif abnormal:
                fn += 1
            elif flagged:
                fp += 1
            else:
                tn += 1
        points.append(SweepPoint(params=dict(params), fn=fn, fp=fp, tn=tn, tp=tp))
    return points


def pareto_front(points):
    """Points not dominated in simultaneous (fnr, fpr) minimization.

    p dominates q iff p.fnr <= q.fnr and p.fpr <= q.fpr with at least one
    strict; coordinate duplicates are all retained. Sorted by fnr ascending.
    """
    if not points:
        raise AnalysisError("no sweep points", code="empty_input")
    order = sorted(range(len(points)),
                   key=lambda i: (points[i].fnr, points[i].fpr, i))
    front = []
    best_prev_fpr = None   # min fpr among strictly smaller fnr values
    group_fnr = None
    group_min_fpr = None
    for i in order:
        p = points[i]
        if group_fnr is None or p.fnr > group_fnr:
            if group_min_fpr is not None:
                best_prev_fpr = (group_min_fpr if best_prev_fpr is None
                                 else min(best_prev_fpr, group_min_fpr))
            group_fnr = p.fnr
            group_min_fpr = p.fpr
        dominated = (best_prev_fpr is not None and best_prev_fpr <= p.fpr) \
            or p.fpr > group_min_fpr
        if not dominated:
            front.append(p)
    return front


def write_sweep_csv(points, path, stamp=None):
    """Metrics CSV with the documented header; params serialize as
    semicolon-joined key=value pairs."""
    with open(path, "w", newline="") as fh:
        if stamp:
            fh.write(f"# kseq tool_version={stamp['tool_version']} "
                     f"config_hash={stamp['config_hash']} seed={stamp['seed']}\n")
        writer = csv.writer(fh)
        writer.writerow(["params", "fn", "fp", "tn", "tp", "fnr", "fpr"])
        for p in points:
            params = ";".join(f"{k}={v}" for k, v in sorted(p.params.items()))
            writer.writerow([params, p.fn, p.fp, p.tn, p.tp,
                             repr(p.fnr), repr(p.fpr)])


def accuracy(predicted, actual):
    predicted = list(predicted)
    actual = list(actual)
    if len(predicted) != len(actual) or not actual:
        raise AnalysisError("prediction/label length mismatch", code="bad_input")
    return sum(p == a for p, a in zip(predicted, actual)) / len(actual)
