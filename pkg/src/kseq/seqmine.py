"""Frequent-pattern mining over token sequences and an n-gram sequence model.

FP-Growth handles unordered itemsets; ordered structure (which is what the
band patterns actually carry) is mined as contiguous subsequences. The
pattern bank stores each class's modal interior sequence plus its frequent
ordered patterns.
"""

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MineError
from .tokenizer import EOC, SOC


def _min_count(min_support, n):
    if not 0.0 < min_support <= 1.0:
        raise MineError("min_support must lie in (0, 1]", code="bad_support")
    return max(1, math.ceil(min_support * n - 1e-9))


class _FPNode:
    __slots__ = ("item", "count", "parent", "children")

    def __init__(self, item, parent):
        self.item = item
        self.count = 0
        self.parent = parent
        self.children = {}


def _build_tree(transactions, item_counts, min_count):
    root = _FPNode(None, None)
    header = {}
    order = {item: (-count, item) for item, count in item_counts.items()}
    for transaction, weight in transactions:
        items = sorted((i for i in transaction if i in item_counts),
                       key=order.__getitem__)
        node = root
        for item in items:
            child = node.children.get(item)
            if child is None:
                child = _FPNode(item, node)
                node.children[item] = child
                header.setdefault(item, []).append(child)
            child.count += weight
            node = child
    return root, header


def _mine(transactions, min_count, suffix, results):
    item_counts = Counter()
    for transaction, weight in transactions:
        for item in transaction:
            item_counts[item] += weight
    item_counts = {i: c for i, c in item_counts.items() if c >= min_count}
    if not item_counts:
        return
    _, header = _build_tree(transactions, item_counts, min_count)
    # least frequent first, lowest id breaking ties, for deterministic output
    for item in sorted(item_counts, key=lambda i: (item_counts[i], i)):
        support = item_counts[item]
        itemset = tuple(sorted(suffix + (item,)))
        results[itemset] = support
        conditional = []
        for node in header[item]:
            path = []
            up = node.parent
            while up.item is not None:
                path.append(up.item)
                up = up.parent
            if path:
                conditional.append((tuple(reversed(path)), node.count))
        if conditional:
            _mine(conditional, min_count, suffix + (item,), results)


def fpgrowth(transactions, min_support):
    """All itemsets with support >= min_support, via FP-tree conditional
    mining. Returns [{"itemset": tuple, "support": fraction}] sorted by
    (size, lexicographic itemset)."""
    if not transactions:
        raise MineError("transaction list is empty", code="empty_input")
    n = len(transactions)
    min_count = _min_count(min_support, n)
    results = {}
    weighted = [(tuple(sorted(set(t))), 1) for t in transactions]
    _mine(weighted, min_count, (), results)
    out = [{"itemset": itemset, "support": count / n}
           for itemset, count in results.items()]
    out.sort(key=lambda r: (len(r["itemset"]), r["itemset"]))
    return out


def mine_subsequences(sequences, min_support, max_len=8):
    """All contiguous subsequences of length <= max_len whose support
    (fraction of sequences containing them at least once) reaches
    min_support."""
    if not sequences:
        raise MineError("no sequences to mine", code="empty_input")
    n = len(sequences)
    min_count = _min_count(min_support, n)
    counts = Counter()
    for seq in sequences:
        seq = tuple(seq)
        windows = {seq[i:i + length]
                   for length in range(1, min(max_len, len(seq)) + 1)
                   for i in range(len(seq) - length + 1)}
        counts.update(windows)
    out = [{"pattern": p, "support": c / n}
           for p, c in counts.items() if c >= min_count]
    out.sort(key=lambda r: (len(r["pattern"]), r["pattern"]))
    return out


@dataclass(frozen=True)
class ClassPatterns:
    canonical: tuple
    frequent: tuple   # of (pattern tuple, support)
    count: int


@dataclass(frozen=True)
class PatternBank:
    classes: dict = field(default_factory=dict)

    def canonical(self, label):
        try:
            return self.classes[label].canonical
        except KeyError:
            raise MineError(f"class {label} missing from pattern bank",
                            code="missing_class") from None

    @property
    def labels(self):
        return sorted(self.classes)


def build_pattern_bank(labeled_sequences, min_support, max_len=8, classes=None):
    """Per class: the modal exact interior sequence (ties: lexicographically
    smallest) and the frequent contiguous subsequences.

    labeled_sequences: iterable of (class_label, interior token sequence).
    classes: optional expected label set; missing ones raise.
    """
    grouped = {}
    for label, seq in labeled_sequences:
        grouped.setdefault(int(label), []).append(tuple(seq))
    if classes is not None:
        missing = sorted(set(classes) - set(grouped))
        if missing:
            raise MineError(f"no sequences for classes {missing}",
                            code="missing_class")
    bank = {}
    for label in sorted(grouped):
        seqs = grouped[label]
        counts = Counter(seqs)
        top = max(counts.values())
        canonical = min(s for s, c in counts.items() if c == top)
        frequent = tuple((r["pattern"], r["support"])
                         for r in mine_subsequences(seqs, min_support, max_len))
        bank[label] = ClassPatterns(canonical=canonical, frequent=frequent,
                                    count=len(seqs))
    return PatternBank(classes=bank)


def save_bank(bank, path, extra=None):
    obj = {"version": 1, "classes": {
        str(label): {
            "canonical": list(cp.canonical),
            "frequent": [{"pattern": list(p), "support": s} for p, s in cp.frequent],
            "count": cp.count,
        } for label, cp in bank.classes.items()}}
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_bank(path):
    obj = json.loads(Path(path).read_text())
    classes = {}
    for label, cp in obj["classes"].items():
        classes[int(label)] = ClassPatterns(
            canonical=tuple(cp["canonical"]),
            frequent=tuple((tuple(f["pattern"]), f["support"])
                           for f in cp["frequent"]),
            count=cp["count"])
    return PatternBank(classes=classes)


@dataclass(frozen=True)
class NGramModel:
    """Laplace-smoothed n-gram model over interior tokens plus EOC.

    Contexts are left-padded with SOC. Probabilities are defined over the
    training vocabulary plus EOC; an unseen token scores like a zero-count
    one.
    """

    order: int
    alpha: float
    vocab: tuple                 # interior token ids seen in training
    counts: dict                 # context tuple -> Counter of next tokens
    context_totals: dict

    @property
    def v(self):
        return len(self.vocab) + 1  # + EOC

    def prob(self, context, token):
        context = tuple(context)
        count = self.counts.get(context, {}).get(token, 0)
        total = self.context_totals.get(context, 0)
        return (count + self.alpha) / (total + self.alpha * self.v)

    def score(self, sequence):
        """Negative log-likelihood per token (nats), EOC transition included."""
        seq = tuple(sequence)
        if not seq:
            raise MineError("cannot score an empty sequence", code="empty_input")
        nll = 0.0
        for context, token in _events(seq, self.order):
            nll -= math.log(self.prob(context, token))
        return nll / (len(seq) + 1)


def _events(seq, order):
    padded = (SOC,) * (order - 1) + tuple(seq) + (EOC,)
    for i in range(order - 1, len(padded)):
        yield padded[i - order + 1:i], padded[i]


def fit_ngram(sequences, n, alpha):
    if n < 1:
        raise MineError("order must be >= 1", code="bad_order")
    if alpha <= 0:
        raise MineError("alpha must be > 0", code="bad_alpha")
    counts = {}
    totals = {}
    vocab = set()
    for seq in sequences:
        seq = tuple(seq)
        if not seq:
            raise MineError("cannot fit on an empty sequence", code="empty_input")
        vocab.update(seq)
        for context, token in _events(seq, n):
            counts.setdefault(context, Counter())[token] += 1
            totals[context] = totals.get(context, 0) + 1
    return NGramModel(order=n, alpha=float(alpha), vocab=tuple(sorted(vocab)),
                      counts=counts, context_totals=totals)


def save_ngram(model, path, extra=None):
    obj = {"version": 1, "order": model.order, "alpha": model.alpha,
           "vocab": list(model.vocab),
           "counts": {" ".join(map(str, ctx)): dict(sorted(
               (str(t), c) for t, c in ctr.items()))
               for ctx, ctr in sorted(model.counts.items())}}
    if extra:
        obj.update(extra)
    Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")


def load_ngram(path):
    obj = json.loads(Path(path).read_text())
    counts = {}
    totals = {}
    for ctx_str, ctr in obj["counts"].items():
        ctx = tuple(int(t) for t in ctx_str.split()) if ctx_str else ()
        counter = Counter({int(t): c for t, c in ctr.items()})
        counts[ctx] = counter
        totals[ctx] = sum(counter.values())
    return NGramModel(order=int(obj["order"]), alpha=float(obj["alpha"]),
                      vocab=tuple(obj["vocab"]), counts=counts,
                      context_totals=totals)
