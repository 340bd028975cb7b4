"""Shared fixtures: random batches, extended-precision loss oracles, and
a finite-difference harness. The oracles recompute every loss from its
definition in np.longdouble with plain (unshifted) exponential sums, so any
agreement with the float64 implementation is evidence, not circularity.
"""

import numpy as np
import pytest

from verbfocus.corpus import (CaptionRecord, DatasetManifest, GeneratedCaption,
                              SynthSpec, VerbPhrase, VideoRecord,
                              make_synthetic_corpus, synth_verb_phrase)
from verbfocus.losses import BatchTensors, LossConfig, combined_vfc


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_batch(rng, B, d, hard_counts=None, with_verb=False, mask=None) -> BatchTensors:
    hard_counts = hard_counts if hard_counts is not None else [0] * B
    verb = unit_rows(rng, B, d) if with_verb else None
    if with_verb and mask is None:
        mask = np.ones(B, dtype=bool)
    return BatchTensors(
        video=unit_rows(rng, B, d),
        caption=unit_rows(rng, B, d),
        hard=[unit_rows(rng, n, d) if n else np.zeros((0, d)) for n in hard_counts],
        verb=verb,
        verb_mask=mask,
    )


# -- naive extended-precision oracles ------------------------------------

def _naive_row_standard(p, sims, sigma):
    L = np.longdouble
    denom = np.exp(L(p) / L(sigma)) + sum(np.exp(L(s) / L(sigma)) for s in sims)
    return -L(p) / L(sigma) + np.log(denom)


def _naive_row_hardneg(p, sims, sigma, alpha, beta):
    L = np.longdouble
    n = len(sims)
    denom = L(alpha) * np.exp(L(p) / L(sigma))
    if n:
        wz = sum(np.exp(L(beta) * L(s) / L(sigma)) for s in sims)
        for s in sims:
            w = L(n) * np.exp(L(beta) * L(s) / L(sigma)) / wz
            denom += w * np.exp(L(s) / L(sigma))
    return -L(p) / L(sigma) + np.log(denom)


def _naive_row(p, sims, cfg: LossConfig):
    if cfg.nce_mode == "hardneg_nce":
        return _naive_row_hardneg(p, sims, cfg.sigma, cfg.alpha, cfg.beta)
    return _naive_row_standard(p, sims, cfg.sigma)


def naive_t2v(batch, cfg):
    B = batch.batch_size
    total = np.longdouble(0)
    for i in range(B):
        p = float(batch.caption[i] @ batch.video[i])
        sims = [float(batch.caption[i] @ batch.video[j]) for j in range(B) if j != i]
        total += _naive_row(p, sims, cfg)
    return total / B


def naive_v2t(batch, cfg):
    B = batch.batch_size
    total = np.longdouble(0)
    for i in range(B):
        p = float(batch.video[i] @ batch.caption[i])
        sims = [float(batch.video[i] @ batch.caption[j]) for j in range(B) if j != i]
        total += _naive_row(p, sims, cfg)
    return total / B


def naive_hn(batch, cfg):
    B = batch.batch_size
    stacked = [h[k] for h in batch.hard for k in range(h.shape[0])]
    total = np.longdouble(0)
    for i in range(B):
        p = float(batch.video[i] @ batch.caption[i])
        sims = [float(batch.video[i] @ batch.caption[j]) for j in range(B) if j != i]
        sims += [float(batch.video[i] @ h) for h in stacked]
        total += _naive_row(p, sims, cfg)
    return total / B


def naive_chn(batch, cfg):
    B = batch.batch_size
    total = np.longdouble(0)
    for i in range(B):
        p = float(batch.video[i] @ batch.caption[i])
        sims = [float(batch.video[i] @ batch.caption[j]) for j in range(B) if j != i]
        sims += [float(batch.video[i] @ batch.hard[i][k])
                 for k in range(batch.hard[i].shape[0])]
        total += _naive_row(p, sims, cfg)
    return total / B


def naive_verb(batch, cfg):
    # The verb term never applies the hard-negative weighting.
    base = LossConfig(sigma=cfg.sigma)
    members = [i for i in range(batch.batch_size) if batch.verb_mask[i]]
    M = len(members)
    if M == 0:
        return np.longdouble(0)
    scale = 0.5 if cfg.verb_phrase_direction == "both" else 1.0
    total = np.longdouble(0)
    for i in members:
        p = float(batch.video[i] @ batch.verb[i])
        sims = [float(batch.video[i] @ batch.verb[j]) for j in members if j != i]
        total += _naive_row(p, sims, base)
    out = scale * total / M
    if cfg.verb_phrase_direction == "both":
        total2 = np.longdouble(0)
        for i in members:
            p = float(batch.verb[i] @ batch.video[i])
            sims = [float(batch.verb[i] @ batch.video[j])
                    for j in range(batch.batch_size) if j != i]
            total2 += _naive_row(p, sims, base)
        out += scale * total2 / M
    return out


def naive_combined(batch, cfg):
    """Longdouble recomputation of the combined objective, normalizers included."""
    L = np.longdouble
    B = batch.batch_size
    counts = batch.hard_counts()
    t1 = naive_t2v(batch, cfg)
    if cfg.negative_variant == "none":
        t2 = naive_v2t(batch, cfg)
    elif cfg.negative_variant == "hn_uncalibrated":
        t2 = naive_hn(batch, cfg)
    else:
        t2 = naive_chn(batch, cfg)
    members = int(np.count_nonzero(batch.verb_mask)) if batch.verb is not None else 0
    t3 = naive_verb(batch, cfg) if members else np.longdouble(0)

    if cfg.normalize_by_uniform:
        div1 = np.log(L(B))
        if cfg.negative_variant == "hn_uncalibrated":
            div2 = np.log(L(B + sum(counts)))
        elif cfg.negative_variant == "calibrated_hn":
            div2 = sum(np.log(L(B + n)) for n in counts) / L(len(counts))
        else:
            div2 = np.log(L(B))
        if members > 1:
            div3 = np.log(L(members))
            if cfg.verb_phrase_direction == "both":
                div3 = (div3 + np.log(L(B))) / L(2)
        else:
            div3 = L(1)
    else:
        div1 = div2 = div3 = L(1)
    return L(cfg.lambda1) * t1 / div1 + L(cfg.lambda2) * t2 / div2 + L(cfg.lambda3) * t3 / div3


def rel_err(a, b) -> float:
    return abs(float(a) - float(b)) / max(1.0, abs(float(b)))


# -- finite differences ---------------------------------------------------

def fd_check(batch: BatchTensors, cfg: LossConfig, h: float = 1e-5) -> float:
    """Max relative deviation between analytic and central-difference grads."""
    out = combined_vfc(batch, cfg)
    worst = 0.0

    def probe(arr, grad):
        nonlocal worst
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + h
            up = combined_vfc(batch, cfg).total
            flat[k] = keep - h
            dn = combined_vfc(batch, cfg).total
            flat[k] = keep
            fd = (up - dn) / (2 * h)
            worst = max(worst, abs(fd - gflat[k]) / max(1.0, abs(gflat[k])))

    probe(batch.video, out.grads.video)
    probe(batch.caption, out.grads.caption)
    for i in range(batch.batch_size):
        if batch.hard[i].size:
            probe(batch.hard[i], out.grads.hard[i])
    if batch.verb is not None and out.grads.verb is not None:
        probe(batch.verb, out.grads.verb)
    return worst


# -- tiny corpora ---------------------------------------------------------

def swap_negative(cap: CaptionRecord, phrase: str) -> GeneratedCaption:
    old = cap.verb_phrases[0].surface
    return GeneratedCaption(
        parent_video_id=cap.video_id,
        parent_caption=cap.text,
        text=cap.text.replace(old, phrase),
        kind="hard_negative",
        backend="random_verb",
        verb_phrases=(VerbPhrase(phrase),),
    )


def crossed_manifest(n_contexts=3, verbs=2, cell=1, seed=0,
                     copies=1) -> DatasetManifest:
    """Synthetic corpus plus `copies` swapped negatives per caption/sibling."""
    manifest = make_synthetic_corpus(
        SynthSpec(n_contexts=n_contexts, verbs_per_context=verbs,
                  captions_per_cell=cell, seed=seed))
    phrase_ctx = {}
    for c in range(n_contexts):
        for k in range(verbs):
            phrase_ctx[synth_verb_phrase(c, k)] = (c, k)
    gens = []
    for cap in manifest.captions:
        c, k = phrase_ctx[cap.verb_phrases[0].surface]
        for k2 in range(verbs):
            if k2 == k:
                continue
            for _ in range(copies):
                gens.append(swap_negative(cap, synth_verb_phrase(c, k2)))
    out = DatasetManifest(manifest.videos, manifest.captions, gens)
    out.validate()
    return out


def random_manifest(rng: np.random.Generator) -> DatasetManifest:
    """Randomized manifest for calibration post-condition sweeps.

    Mixes splits, phrase multiplicities, phrase-free and novel-phrase
    generations, paraphrases, and pre-cleared kept flags.
    """
    n_ctx = int(rng.integers(1, 4))
    verbs = int(rng.integers(1, 4))
    videos, captions, gens = [], [], []
    vid_n = 0
    for c in range(n_ctx):
        for k in range(verbs):
            for _ in range(int(rng.integers(1, 3))):
                vid = f"v{vid_n:04d}"
                vid_n += 1
                split = "train" if rng.random() < 0.8 else "val"
                phrase = synth_verb_phrase(c, k)
                text = f"ctx{c:02d} scene {phrase}"
                phrases = (VerbPhrase(phrase),)
                if rng.random() < 0.15:
                    phrases = (VerbPhrase(phrase), VerbPhrase(phrase))
                videos.append(VideoRecord(vid, split))
                captions.append(CaptionRecord(vid, text, phrases))
    for cap in captions:
        for _ in range(int(rng.integers(0, 5))):
            roll = rng.random()
            if roll < 0.1:
                gen = GeneratedCaption(cap.video_id, cap.text,
                                       cap.text + " reversed", "hard_negative",
                                       "random_verb", ())
            elif roll < 0.2:
                gen = GeneratedCaption(cap.video_id, cap.text,
                                       cap.text + " anew", "hard_negative",
                                       "random_verb",
                                       (VerbPhrase(f"nov{int(rng.integers(3)):02d}"),))
            elif roll < 0.3:
                gen = GeneratedCaption(cap.video_id, cap.text,
                                       cap.text + " again", "positive_paraphrase",
                                       "llm_completion", ())
            else:
                c2 = int(rng.integers(n_ctx))
                k2 = int(rng.integers(verbs))
                phrase = synth_verb_phrase(c2, k2)
                gen = GeneratedCaption(cap.video_id, cap.text,
                                       f"ctx{c2:02d} scene {phrase}",
                                       "hard_negative", "random_verb",
                                       (VerbPhrase(phrase),),
                                       kept=bool(rng.random() < 0.9))
            gens.append(gen)
    manifest = DatasetManifest(videos, captions, gens)
    manifest.validate()
    return manifest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
