"""Contrastive losses over paired unit embeddings, with analytic gradients.

All variants share one row primitive: a positive logit against a set of
negative logits at temperature sigma, evaluated with max-subtracted
log-sum-exp. The caption-side denominator is what distinguishes variants:

  t2v          caption anchors over the batch videos
  v2t          video anchors over the batch captions
  hn           v2t plus every batch item's generated negatives in each row
  chn          v2t plus only the anchor's own generated negatives
  verb_phrase  video anchors over per-item verb-phrase embeddings

The optional hard-negative weighting reweights negative denominator terms in
proportion to softmax(beta * sim / sigma), scaled to sum to the negative
count, with the positive term scaled by alpha; gradients flow through the
weights. Reductions are means over contributing rows, so values are
comparable across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEGATIVE_VARIANTS = ("none", "hn_uncalibrated", "calibrated_hn")
NCE_MODES = ("standard", "hardneg_nce")
VERB_DIRECTIONS = ("v2t_only", "both")


@dataclass(frozen=True)
class LossConfig:
    sigma: float = 5e-3
    lambda1: float = 2.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    negative_variant: str = "calibrated_hn"
    nce_mode: str = "standard"
    alpha: float = 1.0
    beta: float = 0.1
    normalize_by_uniform: bool = True
    verb_phrase_direction: str = "v2t_only"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.negative_variant not in NEGATIVE_VARIANTS:
            raise ValueError(f"unknown negative_variant {self.negative_variant!r}")
        if self.nce_mode not in NCE_MODES:
            raise ValueError(f"unknown nce_mode {self.nce_mode!r}")
        if self.verb_phrase_direction not in VERB_DIRECTIONS:
            raise ValueError(f"unknown verb_phrase_direction {self.verb_phrase_direction!r}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass
class BatchTensors:
    """One training batch of f64 embeddings.

    video, caption: (B, d). hard: length-B list of (n_i, d) arrays holding
    each item's sampled hard-negative caption embeddings. verb: optional
    (B, d) verb-phrase embeddings with verb_mask marking items that have one.
    """

    video: np.ndarray
    caption: np.ndarray
    hard: list[np.ndarray] = field(default_factory=list)
    verb: np.ndarray | None = None
    verb_mask: np.ndarray | None = None

    def __post_init__(self):
        self.video = np.asarray(self.video, dtype=np.float64)
        self.caption = np.asarray(self.caption, dtype=np.float64)
        B, d = self.video.shape
        if B < 2:
            raise ValueError("batch size must be at least 2")
        if self.caption.shape != (B, d):
            raise ValueError("caption shape must match video shape")
        if not self.hard:
            self.hard = [np.zeros((0, d)) for _ in range(B)]
        if len(self.hard) != B:
            raise ValueError("hard list must have one entry per batch item")
        self.hard = [np.asarray(h, dtype=np.float64).reshape(-1, d) for h in self.hard]
        if self.verb is not None:
            self.verb = np.asarray(self.verb, dtype=np.float64)
            if self.verb.shape != (B, d):
                raise ValueError("verb shape must match video shape")
            if self.verb_mask is None:
                self.verb_mask = np.ones(B, dtype=bool)
            else:
                self.verb_mask = np.asarray(self.verb_mask, dtype=bool)
                if self.verb_mask.shape != (B,):
                    raise ValueError("verb_mask must have one flag per item")

    @property
    def batch_size(self) -> int:
        return self.video.shape[0]

    def hard_counts(self) -> list[int]:
        return [h.shape[0] for h in self.hard]


@dataclass
class LossGrads:
    video: np.ndarray
    caption: np.ndarray
    hard: list[np.ndarray]
    verb: np.ndarray | None = None

    @classmethod
    def zeros_like(cls, batch: BatchTensors) -> "LossGrads":
        return cls(
            video=np.zeros_like(batch.video),
            caption=np.zeros_like(batch.caption),
            hard=[np.zeros_like(h) for h in batch.hard],
            verb=None if batch.verb is None else np.zeros_like(batch.verb),
        )

    def add_scaled(self, other: "LossGrads", scale: float) -> None:
        self.video += scale * other.video
        self.caption += scale * other.caption
        for mine, theirs in zip(self.hard, other.hard):
            mine += scale * theirs
        if self.verb is not None and other.verb is not None:
            self.verb += scale * other.verb


@dataclass
class LossOutput:
    total: float
    terms: dict[str, float]
    grads: LossGrads


def _row_standard(p: float, s: np.ndarray, sigma: float):
    """Loss and d/dsim for one row: -p/sigma + lse([p, s]/sigma)."""
    logits = np.concatenate(([p], s)) / sigma
    m = logits.max()
    ex = np.exp(logits - m)
    z = ex.sum()
    loss = -p / sigma + (m + np.log(z))
    post = ex / z
    return loss, (post[0] - 1.0) / sigma, post[1:] / sigma


def _row_hardneg(p: float, s: np.ndarray, sigma: float, alpha: float, beta: float):
    """Row with similarity-weighted negatives; weights sum to the count.

    Denominator: alpha*e^{p/sigma} + sum_j w_j e^{s_j/sigma} with
    w_j = n * softmax(beta*s/sigma)_j. Differentiated through the weights.
    """
    n = s.size
    pos_logterm = np.log(alpha) + p / sigma
    if n == 0:
        return -p / sigma + pos_logterm, 0.0, np.zeros(0)
    w_logits = beta * s / sigma
    mw = w_logits.max()
    logw = mw + np.log(np.exp(w_logits - mw).sum())
    neg_logterms = np.log(n) + (1.0 + beta) * s / sigma - logw
    terms = np.concatenate(([pos_logterm], neg_logterms))
    m = terms.max()
    ex = np.exp(terms - m)
    z = ex.sum()
    loss = -p / sigma + (m + np.log(z))
    post_pos = ex[0] / z
    q = ex[1:] / z
    r = np.exp(w_logits - logw)
    dp = (post_pos - 1.0) / sigma
    ds = ((1.0 + beta) * q - beta * q.sum() * r) / sigma
    return loss, dp, ds


def _row(p: float, s: np.ndarray, cfg: LossConfig):
    if cfg.nce_mode == "hardneg_nce":
        return _row_hardneg(p, s, cfg.sigma, cfg.alpha, cfg.beta)
    return _row_standard(p, s, cfg.sigma)


def hardneg_nce_weights(neg_sims: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Per-negative weights: n * softmax(beta * sims / sigma); sum equals n."""
    s = np.asarray(neg_sims, dtype=np.float64)
    if s.size == 0:
        return np.zeros(0)
    logits = cfg.beta * s / cfg.sigma
    m = logits.max()
    ex = np.exp(logits - m)
    return s.size * ex / ex.sum()


def _pair_loss(batch: BatchTensors, cfg: LossConfig, anchor_videos: bool, term: str) -> LossOutput:
    """In-batch InfoNCE in one direction; shared by t2v and v2t."""
    B = batch.batch_size
    a = batch.video if anchor_videos else batch.caption
    b = batch.caption if anchor_videos else batch.video
    sims = a @ b.T
    dsims = np.zeros_like(sims)
    total = 0.0
    idx = np.arange(B)
    for i in range(B):
        mask = idx != i
        loss, dp, ds = _row(sims[i, i], sims[i, mask], cfg)
        total += loss
        dsims[i, i] = dp
        dsims[i, mask] = ds
    total /= B
    dsims /= B
    grads = LossGrads.zeros_like(batch)
    ga = dsims @ b
    gb = dsims.T @ a
    if anchor_videos:
        grads.video, grads.caption = ga, gb
    else:
        grads.caption, grads.video = ga, gb
    return LossOutput(total, {term: total}, grads)


def info_nce_t2v(batch: BatchTensors, cfg: LossConfig) -> LossOutput:
    """Caption anchors against the batch videos."""
    return _pair_loss(batch, cfg, anchor_videos=False, term="t2v")


def info_nce_v2t(batch: BatchTensors, cfg: LossConfig) -> LossOutput:
    """Video anchors against the batch captions."""
    return _pair_loss(batch, cfg, anchor_videos=True, term="v2t")


def _relabel(out: LossOutput, term: str) -> LossOutput:
    return LossOutput(out.total, {term: out.total}, out.grads)


def loss_hn_uncalibrated(batch: BatchTensors, cfg: LossConfig) -> LossOutput:
    """v2t with every item's hard negatives in every row's denominator."""
    counts = batch.hard_counts()
    if sum(counts) == 0:
        # No generated negatives: identical to the baseline, bit for bit.
        return _relabel(info_nce_v2t(batch, cfg), "hn_uncalibrated")
    B = batch.batch_size
    stacked = np.vstack([h for h in batch.hard if h.shape[0]])
    sims_in = batch.video @ batch.caption.T
    sims_h = batch.video @ stacked.T
    dsims_in = np.zeros_like(sims_in)
    dsims_h = np.zeros_like(sims_h)
    idx = np.arange(B)
    total = 0.0
    for i in range(B):
        mask = idx != i
        s = np.concatenate((sims_in[i, mask], sims_h[i]))
        loss, dp, ds = _row(sims_in[i, i], s, cfg)
        total += loss
        dsims_in[i, i] = dp
        dsims_in[i, mask] = ds[: B - 1]
        dsims_h[i] = ds[B - 1 :]
    total /= B
    dsims_in /= B
    dsims_h /= B
    grads = LossGrads.zeros_like(batch)
    grads.video = dsims_in @ batch.caption + dsims_h @ stacked
    grads.caption = dsims_in.T @ batch.video
    ghard = dsims_h.T @ batch.video
    offset = 0
    for i, n in enumerate(counts):
        grads.hard[i] = ghard[offset : offset + n]
        offset += n
    return LossOutput(total, {"hn_uncalibrated": total}, grads)


def loss_chn(batch: BatchTensors, cfg: LossConfig) -> LossOutput:
    """v2t where each row sees only its own hard negatives (calibrated form)."""
    counts = batch.hard_counts()
    if sum(counts) == 0:
        return _relabel(info_nce_v2t(batch, cfg), "chn")
    B = batch.batch_size
    sims_in = batch.video @ batch.caption.T
    dsims_in = np.zeros_like(sims_in)
    grads = LossGrads.zeros_like(batch)
    idx = np.arange(B)
    total = 0.0
    for i in range(B):
        mask = idx != i
        own = batch.hard[i]
        sh = own @ batch.video[i]
        s = np.concatenate((sims_in[i, mask], sh))
        loss, dp, ds = _row(sims_in[i, i], s, cfg)
        total += loss
        dsims_in[i, i] = dp
        dsims_in[i, mask] = ds[: B - 1]
        ds_h = ds[B - 1 :] / B
        if own.shape[0]:
            grads.hard[i] += np.outer(ds_h, batch.video[i])
            grads.video[i] += ds_h @ own
    total /= B
    dsims_in /= B
    grads.video += dsims_in @ batch.caption
    grads.caption = dsims_in.T @ batch.video
    return LossOutput(total, {"chn": total}, grads)


def loss_verb_phrase(batch: BatchTensors, cfg: LossConfig) -> LossOutput:
    """Video against per-item verb phrases; masked items contribute nothing.

    A masked item is excluded both as an anchor row and as a denominator
    column. Always plain InfoNCE: the hard-negative weighting applies to the
    caption-side terms only. With direction "both" the phrase-anchored
    direction (over all batch videos) is averaged in.
    """
    if batch.verb is None:
        raise ValueError("batch has no verb-phrase embeddings")
    grads = LossGrads.zeros_like(batch)
    members = np.flatnonzero(batch.verb_mask)
    M = members.size
    if M == 0:
        return LossOutput(0.0, {"verb_phrase": 0.0}, grads)
    base = LossConfig(sigma=cfg.sigma)
    both = cfg.verb_phrase_direction == "both"
    scale = 0.5 if both else 1.0
    V = batch.video[members]
    T = batch.verb[members]

    sims = V @ T.T
    dsims = np.zeros_like(sims)
    idx = np.arange(M)
    total_v2t = 0.0
    for r in range(M):
        mask = idx != r
        loss, dp, ds = _row(sims[r, r], sims[r, mask], base)
        total_v2t += loss
        dsims[r, r] = dp
        dsims[r, mask] = ds
    total_v2t /= M
    dsims *= scale / M
    gv = dsims @ T
    gt = dsims.T @ V
    for r, i in enumerate(members):
        grads.video[i] += gv[r]
        grads.verb[i] += gt[r]
    total = scale * total_v2t

    if both:
        B = batch.batch_size
        sims2 = T @ batch.video.T
        dsims2 = np.zeros_like(sims2)
        allidx = np.arange(B)
        total_t2v = 0.0
        for r, i in enumerate(members):
            mask = allidx != i
            loss, dp, ds = _row(sims2[r, i], sims2[r, mask], base)
            total_t2v += loss
            dsims2[r, i] = dp
            dsims2[r, mask] = ds
        total_t2v /= M
        dsims2 *= scale / M
        gt2 = dsims2 @ batch.video
        gv2 = dsims2.T @ T
        for r, i in enumerate(members):
            grads.verb[i] += gt2[r]
        grads.video += gv2
        total += scale * total_t2v
    return LossOutput(total, {"verb_phrase": total}, grads)


def uniform_normalizer(term: str, batch_size: int, hard_counts=None) -> float:
    """Loss value of the term under a uniform prediction; the divisor.

    Uses realized denominator sizes: log B for the in-batch directions and
    the verb term (pass the participating count as batch_size), the mean of
    log(B + n_i) for calibrated negatives, log(B + sum n_j) for the
    uncalibrated form.
    """
    if term in ("t2v", "v2t", "verb_phrase", "none"):
        return float(np.log(batch_size))
    if term == "calibrated_hn":
        counts = np.asarray(hard_counts if hard_counts is not None else [])
        if counts.size == 0:
            return float(np.log(batch_size))
        return float(np.mean(np.log(batch_size + counts)))
    if term == "hn_uncalibrated":
        total = int(np.sum(hard_counts)) if hard_counts is not None else 0
        return float(np.log(batch_size + total))
    raise ValueError(f"unknown term {term!r}")


def combined_vfc(batch: BatchTensors, cfg: LossConfig) -> LossOutput:
    """Weighted sum of t2v, the configured negative variant, and verb terms.

    The ``chn`` entry in ``terms`` holds whichever negative variant the
    config selects (plain v2t when negative_variant is "none"). With
    normalize_by_uniform, each stored term value is the raw mean divided by
    its uniform-prediction value, so a uniform batch scores 1.0 per term.
    """
    B = batch.batch_size
    t2v = info_nce_t2v(batch, cfg)
    if cfg.negative_variant == "none":
        mid = info_nce_v2t(batch, cfg)
    elif cfg.negative_variant == "hn_uncalibrated":
        mid = loss_hn_uncalibrated(batch, cfg)
    else:
        mid = loss_chn(batch, cfg)

    if batch.verb is not None:
        verb = loss_verb_phrase(batch, cfg)
        members = int(np.count_nonzero(batch.verb_mask))
    else:
        verb = LossOutput(0.0, {"verb_phrase": 0.0}, LossGrads.zeros_like(batch))
        members = 0

    if cfg.normalize_by_uniform:
        div1 = uniform_normalizer("t2v", B)
        div2 = uniform_normalizer(cfg.negative_variant, B, batch.hard_counts())
        if members > 1:
            div3 = uniform_normalizer("verb_phrase", members)
            if cfg.verb_phrase_direction == "both":
                div3 = 0.5 * (div3 + uniform_normalizer("verb_phrase", B))
        else:
            div3 = 1.0
    else:
        div1 = div2 = div3 = 1.0

    term1 = t2v.total / div1
    term2 = mid.total / div2
    term3 = verb.total / div3 if div3 else verb.total
    total = cfg.lambda1 * term1 + cfg.lambda2 * term2 + cfg.lambda3 * term3
    grads = LossGrads.zeros_like(batch)
    grads.add_scaled(t2v.grads, cfg.lambda1 / div1)
    grads.add_scaled(mid.grads, cfg.lambda2 / div2)
    if members:
        grads.add_scaled(verb.grads, cfg.lambda3 / (div3 if div3 else 1.0))
    return LossOutput(
        float(total),
        {"t2v": float(term1), "chn": float(term2), "verb_phrase": float(term3)},
        grads,
    )
