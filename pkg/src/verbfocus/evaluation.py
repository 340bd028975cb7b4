"""Verb-focused evaluation harness over frozen encoders.

Multiple choice, retrieval recall, zero-shot classification with confusion
matrices and prediction shares, the verb-split builder, pairwise average
precision, and the class-subset resampling protocol. Every metric keeps a
deterministic tie rule: argmax picks the lowest index, rankings sort by
(-similarity, index), and AP ranks ties in input order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .encoders import DualEncoders
from .lexicon import STOPWORDS, VerbRecognizer
from .text import tokenize

OPTION_KINDS = ("positive", "random_negative", "hard_verb_negative")


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class MultipleChoiceItem:
    video_id: str
    options: tuple[str, ...]
    answer_index: int
    option_kinds: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(self, "option_kinds", tuple(self.option_kinds))
        if len(self.options) != 5:
            raise EvalError("multiple choice items need exactly 5 options")
        if len(self.option_kinds) != len(self.options):
            raise EvalError("one kind per option required")
        for kind in self.option_kinds:
            if kind not in OPTION_KINDS:
                raise EvalError(f"unknown option kind {kind!r}")
        if self.option_kinds.count("positive") != 1:
            raise EvalError("exactly one positive option required")
        if not 0 <= self.answer_index < len(self.options):
            raise EvalError("answer_index out of range")
        if self.option_kinds[self.answer_index] != "positive":
            raise EvalError("answer_index must point at the positive option")


@dataclass(frozen=True)
class ClassificationTask:
    labels: tuple[str, ...]
    items: tuple[tuple[str, int], ...]
    verb_split: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "items", tuple((v, int(c)) for v, c in self.items))
        if len(set(self.labels)) != len(self.labels):
            raise EvalError("class labels must be unique")
        for _, c in self.items:
            if not 0 <= c < len(self.labels):
                raise EvalError(f"class index {c} out of range")
        if self.verb_split is not None:
            vs = tuple(sorted(int(i) for i in self.verb_split))
            object.__setattr__(self, "verb_split", vs)
            for i in vs:
                if not 0 <= i < len(self.labels):
                    raise EvalError(f"verb_split index {i} out of range")


@dataclass
class MultipleChoiceReport:
    accuracy: float
    n_items: int
    picked_kinds: dict[str, int]

    @property
    def hard_negative_rate(self) -> float:
        if self.n_items == 0:
            return 0.0
        return self.picked_kinds.get("hard_verb_negative", 0) / self.n_items

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_items": self.n_items,
            "picked_kinds": dict(self.picked_kinds),
            "hard_negative_rate": self.hard_negative_rate,
        }


def eval_multiple_choice(encoders: DualEncoders, items) -> MultipleChoiceReport:
    """Pick the option most similar to the video; report what got picked."""
    items = list(items)
    correct = 0
    picked = {kind: 0 for kind in OPTION_KINDS}
    for item in items:
        v = encoders.encode_video(item.video_id)
        sims = encoders.encode_texts(item.options) @ v
        choice = int(np.argmax(sims))
        picked[item.option_kinds[choice]] += 1
        if choice == item.answer_index:
            correct += 1
    acc = correct / len(items) if items else 0.0
    return MultipleChoiceReport(accuracy=acc, n_items=len(items), picked_kinds=picked)


def _ranks(sims: np.ndarray) -> np.ndarray:
    """1-based rank of the diagonal entry per row; ties favor lower index."""
    n = sims.shape[0]
    ranks = np.empty(n, dtype=int)
    for i in range(n):
        row = sims[i]
        order = np.lexsort((np.arange(row.size), -row))
        ranks[i] = int(np.where(order == i)[0][0]) + 1
    return ranks


def eval_retrieval(encoders: DualEncoders, pairs, ks=(1, 5, 10)) -> dict:
    """Recall at k in both directions over matched (video_id, text) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EvalError("no retrieval pairs")
    videos = encoders.encode_videos([p[0] for p in pairs])
    texts = encoders.encode_texts([p[1] for p in pairs])
    t2v = _ranks(texts @ videos.T)
    v2t = _ranks(videos @ texts.T)
    return {
        "t2v": {f"R@{k}": float(np.mean(t2v <= k)) for k in ks},
        "v2t": {f"R@{k}": float(np.mean(v2t <= k)) for k in ks},
    }


@dataclass
class ZeroShotReport:
    class_indices: tuple[int, ...]
    top1: float
    top5: float
    average: float
    confusion: np.ndarray
    confusion_rows: np.ndarray
    prediction_shares: np.ndarray
    per_class_accuracy: np.ndarray
    class_counts: np.ndarray

    @property
    def macro_accuracy(self) -> float:
        have = self.class_counts > 0
        if not have.any():
            return 0.0
        return float(self.per_class_accuracy[have].mean())

    def to_dict(self) -> dict:
        return {
            "class_indices": list(self.class_indices),
            "top1": self.top1,
            "top5": self.top5,
            "average": self.average,
            "macro_accuracy": self.macro_accuracy,
            "confusion": self.confusion.tolist(),
            "confusion_rows": self.confusion_rows.tolist(),
            "prediction_shares": self.prediction_shares.tolist(),
            "per_class_accuracy": self.per_class_accuracy.tolist(),
            "class_counts": self.class_counts.tolist(),
        }


def eval_zero_shot(encoders: DualEncoders, task: ClassificationTask,
                   class_subset=None) -> ZeroShotReport:
    """Rank class label texts against each video, no prompt wrapping.

    With class_subset, both the candidate label set and the item list are
    restricted to those classes; indices in the report are positions within
    the subset, class_indices maps them back.
    """
    if class_subset is None:
        subset = list(range(len(task.labels)))
    else:
        subset = sorted(set(int(i) for i in class_subset))
        for i in subset:
            if not 0 <= i < len(task.labels):
                raise EvalError(f"class index {i} out of range")
    if not subset:
        raise EvalError("empty class subset")
    local = {g: l for l, g in enumerate(subset)}
    label_vecs = encoders.encode_texts([task.labels[g] for g in subset])
    items = [(vid, local[c]) for vid, c in task.items if c in local]
    C = len(subset)
    confusion = np.zeros((C, C), dtype=np.int64)
    top1_hits = 0
    top5_hits = 0
    for vid, y in items:
        sims = label_vecs @ encoders.encode_video(vid)
        pred = int(np.argmax(sims))
        confusion[y, pred] += 1
        if pred == y:
            top1_hits += 1
        order = np.lexsort((np.arange(C), -sims))
        if y in order[:5]:
            top5_hits += 1
    n = len(items)
    top1 = top1_hits / n if n else 0.0
    top5 = top5_hits / n if n else 0.0
    counts = confusion.sum(axis=1)
    rows = np.zeros_like(confusion, dtype=np.float64)
    nz = counts > 0
    rows[nz] = confusion[nz] / counts[nz, None]
    shares = confusion.sum(axis=0) / n if n else np.zeros(C)
    per_class = np.zeros(C)
    per_class[nz] = np.diag(confusion)[nz] / counts[nz]
    return ZeroShotReport(
        class_indices=tuple(subset),
        top1=top1,
        top5=top5,
        average=(top1 + top5) / 2.0,
        confusion=confusion,
        confusion_rows=rows,
        prediction_shares=np.asarray(shares, dtype=np.float64),
        per_class_accuracy=per_class,
        class_counts=counts,
    )


def verb_split_groups(labels, recognizer: VerbRecognizer) -> dict[tuple[str, ...], list[int]]:
    """Group class labels by their non-verb, non-stopword token sequence."""
    groups: dict[tuple[str, ...], list[int]] = {}
    for idx, label in enumerate(labels):
        toks = tokenize(label)
        key = tuple(t for t in toks if not recognizer.is_verb(t) and t not in STOPWORDS)
        groups.setdefault(key, []).append(idx)
    return groups


def build_verb_split(labels, recognizer: VerbRecognizer | None = None) -> tuple[int, ...]:
    """Classes distinguishable only by verb: same context tokens, different verbs."""
    if recognizer is None:
        from .lexicon import LexiconResources
        recognizer = LexiconResources.default().recognizer
    kept: list[int] = []
    for key, members in verb_split_groups(labels, recognizer).items():
        if not key or len(members) < 2:
            continue
        verb_sets = set()
        for idx in members:
            verbs = tuple(recognizer.analyze(t)[0] for t in tokenize(labels[idx])
                          if recognizer.is_verb(t))
            verb_sets.add(verbs)
        if len(verb_sets) >= 2:
            kept.extend(members)
    return tuple(sorted(kept))


def eval_pair_ap(encoders: DualEncoders, pairs) -> float:
    """Average precision over (video_id, text, label) pairs ranked by similarity.

    label is "pos" or "neg". The sort is stable, so equal similarities keep
    input order.
    """
    pairs = list(pairs)
    if not pairs:
        raise EvalError("no pairs")
    scores = np.array([
        float(np.dot(encoders.encode_video(vid), encoders.encode_text(text)))
        for vid, text, _ in pairs
    ])
    labels = np.array([1 if lab == "pos" else 0 for _, _, lab in pairs])
    if set(np.unique(labels)) - {0, 1}:
        raise EvalError("labels must be pos or neg")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    cum_pos = np.cumsum(ranked)
    positives = ranked == 1
    if not positives.any():
        raise EvalError("at least one positive pair required")
    precisions = cum_pos[positives] / (np.flatnonzero(positives) + 1)
    return float(precisions.mean())


def subset_resample_protocol(encoders: DualEncoders, task: ClassificationTask,
                             m: int, repeats: int, seed: int) -> dict:
    """Average zero-shot metrics over seeded random class subsets of size m."""
    C = len(task.labels)
    if not 1 <= m <= C:
        raise EvalError(f"subset size {m} out of range for {C} classes")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    sums = {"top1": 0.0, "top5": 0.0, "average": 0.0}
    for _ in range(repeats):
        subset = sorted(int(i) for i in rng.choice(C, size=m, replace=False))
        rep = eval_zero_shot(encoders, task, class_subset=subset)
        sums["top1"] += rep.top1
        sums["top5"] += rep.top5
        sums["average"] += rep.average
    return {k: v / repeats for k, v in sums.items()}


# -- task file I/O -------------------------------------------------------

def save_mc_items(path, items) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps({
                "record": "mc_item",
                "video_id": item.video_id,
                "options": list(item.options),
                "answer_index": item.answer_index,
                "option_kinds": list(item.option_kinds),
            }, ensure_ascii=False) + "\n")


def load_mc_items(path) -> list[MultipleChoiceItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: bad JSON: {exc}") from None
            if obj.get("record") != "mc_item":
                raise EvalError(f"{path}:{lineno}: expected mc_item record")
            items.append(MultipleChoiceItem(
                video_id=obj["video_id"],
                options=tuple(obj["options"]),
                answer_index=int(obj["answer_index"]),
                option_kinds=tuple(obj["option_kinds"]),
            ))
    return items


def save_classification_task(path, task: ClassificationTask) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"record": "class_labels", "labels": list(task.labels)},
                            ensure_ascii=False) + "\n")
        if task.verb_split is not None:
            fh.write(json.dumps({"record": "verb_split",
                                 "indices": list(task.verb_split)}) + "\n")
        for vid, c in task.items:
            fh.write(json.dumps({"record": "class_item", "video_id": vid,
                                 "class_index": c}, ensure_ascii=False) + "\n")


def load_classification_task(path) -> ClassificationTask:
    labels = None
    verb_split = None
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: bad JSON: {exc}") from None
            rec = obj.get("record")
            if rec == "class_labels":
                labels = tuple(obj["labels"])
            elif rec == "verb_split":
                verb_split = tuple(obj["indices"])
            elif rec == "class_item":
                items.append((obj["video_id"], int(obj["class_index"])))
            else:
                raise EvalError(f"{path}:{lineno}: unknown record {rec!r}")
    if labels is None:
        raise EvalError(f"{path}: missing class_labels record")
    return ClassificationTask(labels=labels, items=tuple(items), verb_split=verb_split)


def load_retrieval_pairs(path) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: bad JSON: {exc}") from None
            if obj.get("record") != "pair":
                raise EvalError(f"{path}:{lineno}: expected pair record")
            pairs.append((obj["video_id"], obj["text"]))
    return pairs


def load_scored_pairs(path) -> list[tuple[str, str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalError(f"{path}:{lineno}: bad JSON: {exc}") from None
            if obj.get("record") != "scored_pair":
                raise EvalError(f"{path}:{lineno}: expected scored_pair record")
            if obj["label"] not in ("pos", "neg"):
                raise EvalError(f"{path}:{lineno}: label must be pos or neg")
            pairs.append((obj["video_id"], obj["text"], obj["label"]))
    return pairs


def write_confusion_csv(path, report: ZeroShotReport, labels) -> None:
    names = [labels[g] for g in report.class_indices]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("true\\pred," + ",".join(names) + "\n")
        for name, row in zip(names, report.confusion):
            fh.write(name + "," + ",".join(str(int(x)) for x in row) + "\n")
