"""Synthetic corpora: teacher-generated training sets and the bundled toy inputs."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .data import CaptionDataset, CaptionSample, EmbeddingTable, Vocabulary, make_batch, write_image_vectors
from .model import encode_language, init_model


def teacher_dataset(n_train, n_val, d, c, h, vocab_size=12, languages=("en",), seed=0, max_len=4,
                    scale=1.0):
    """Captions whose image vectors are produced by a hidden model.

    Every language sees the same word vectors under a language-specific id
    permutation, and the hidden model uses one encoder for all languages, so
    a student of the same shape can fit every language exactly.
    Returns ``(dataset, teacher)``.
    """
    rng = np.random.default_rng(seed)
    base = rng.standard_normal((vocab_size, d))
    perms = {lang: (np.arange(vocab_size) if i == 0 else rng.permutation(vocab_size))
             for i, lang in enumerate(languages)}
    lookups = {}
    for lang in languages:
        rows = np.empty_like(base)
        rows[perms[lang]] = base
        lookups[lang] = rows
    teacher = init_model(lookups, c, h, seed=seed + 1)
    shared = teacher.encoders[languages[0]].params
    params = dict(teacher.parameters())
    for lang in languages:
        for key, value in shared.items():
            params[f"{lang}.{key}"] = value * scale
    params["align.M"] = params["align.M"] * scale
    teacher = teacher.with_parameters(params)

    samples = []
    for i in range(n_train + n_val):
        length = int(rng.integers(1, max_len + 1))
        ids = rng.integers(0, vocab_size, size=length)
        captions = {lang: tuple(int(perms[lang][t]) for t in ids) for lang in languages}
        samples.append(CaptionSample(f"img{i}", np.zeros(h), captions))
    batch = make_batch(samples, languages)
    images = np.array(encode_language(teacher, batch, languages[0], teacher.parameters()))
    samples = [CaptionSample(s.image_id, images[i], s.captions) for i, s in enumerate(samples)]
    vocabs = {lang: Vocabulary(tuple(f"{lang}{j}" for j in range(vocab_size)), (1,) * vocab_size, vocab_size)
              for lang in languages}
    dataset = CaptionDataset(tuple(languages), samples[:n_train], samples[n_train:], vocabs, h)
    return dataset, teacher


def grounding_corpus(seed=0, d=6, n_fill=6, n_per_word=12, image_dim=8, spread=0.05):
    """Words A and B never share a caption but co-occur with near-identical images; C gets distant images.

    The textual vectors of A, B and C are orthonormal, so textual cosines
    between them are exactly zero.  Returns ``(dataset, table)`` where the
    table holds the full textual vocabulary.
    """
    rng = np.random.default_rng(seed)
    words = ["wa", "wb", "wc"] + [f"f{i}" for i in range(n_fill)]
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    vectors = np.vstack([q[:3], 0.5 * rng.standard_normal((n_fill, d))])
    table = EmbeddingTable(words, vectors, language="en")
    center_ab = rng.standard_normal(image_dim)
    center_ab /= np.linalg.norm(center_ab)
    center_c = -center_ab
    samples = []
    k = 0
    for target, center in (("wa", center_ab), ("wb", center_ab), ("wc", center_c)):
        for _ in range(n_per_word):
            filler = [f"f{int(i)}" for i in rng.integers(0, n_fill, size=int(rng.integers(0, 2)))]
            tokens = filler + [target]
            image = center + spread * rng.standard_normal(image_dim)
            samples.append((tokens, image))
            k += 1
    vocab = Vocabulary(tuple(words), (1,) * len(words), len(words))
    index = {w: i for i, w in enumerate(words)}
    caption_samples = [CaptionSample(f"g{i}", img, {"en": tuple(index[t] for t in toks)})
                       for i, (toks, img) in enumerate(samples)]
    order = rng.permutation(len(caption_samples))
    n_val = len(caption_samples) // 6
    val = [caption_samples[i] for i in sorted(order[:n_val])]
    train = [caption_samples[i] for i in sorted(order[n_val:])]
    return CaptionDataset(("en",), train, val, {"en": vocab}, image_dim), table


TOY_NOUNS = {
    "animal": [("dog", "hund"), ("cat", "katze"), ("horse", "pferd"), ("cow", "kuh"), ("bird", "vogel")],
    "vehicle": [("car", "auto"), ("bus", "bus"), ("truck", "lastwagen"), ("bike", "fahrrad"), ("train", "zug")],
    "food": [("pizza", "pizza"), ("apple", "apfel"), ("cake", "kuchen"), ("bread", "brot"), ("banana", "banane")],
}
TOY_ADJ = [("red", "rote"), ("small", "kleine"), ("big", "große"), ("white", "weiße")]
TOY_VERB = [("sits", "sitzt"), ("stands", "steht"), ("is", "ist")]
TOY_FUNCTION = [("a", "eine"), ("the", "die"), ("on", "auf"), ("near", "neben")]
TOY_ONLY_TEXT = ["automobile", "kitten", "puppy", "vegetable", "unicorn"]


def write_toy_corpus(out_dir, seed=0, d=8, image_dim=8, n_samples=72):
    """Write a small bilingual corpus, benchmarks and a config into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    cats = list(TOY_NOUNS)
    cat_dirs = {cat: rng.standard_normal(d) * 2.0 for cat in cats}
    cat_images = {cat: rng.standard_normal(image_dim) * 2.0 for cat in cats}
    en_vec, de_vec, noun_image = {}, {}, {}
    for cat, pairs in TOY_NOUNS.items():
        for en, de in pairs:
            v = cat_dirs[cat] + rng.standard_normal(d)
            en_vec[en] = v
            de_vec[de] = v + 0.3 * rng.standard_normal(d)
            noun_image[en] = cat_images[cat] + 0.5 * rng.standard_normal(image_dim)
    for group in (TOY_ADJ, TOY_VERB, TOY_FUNCTION):
        for en, de in group:
            v = rng.standard_normal(d)
            en_vec[en] = v
            de_vec[de] = v + 0.3 * rng.standard_normal(d)
    extra = {"automobile": "car", "kitten": "cat", "puppy": "dog", "vegetable": "apple", "unicorn": "horse"}
    for word, near in extra.items():
        en_vec[word] = en_vec[near] + 0.8 * rng.standard_normal(d)
    _write_table(out / "emb_en.txt", en_vec)
    _write_table(out / "emb_de.txt", de_vec)

    de_of = {en: de for group in list(TOY_NOUNS.values()) + [TOY_ADJ, TOY_VERB, TOY_FUNCTION] for en, de in group}
    nouns = [en for pairs in TOY_NOUNS.values() for en, _ in pairs]
    images = {}
    with open(out / "manifest.jsonl", "w", encoding="utf-8") as fh:
        for i in range(n_samples):
            noun = nouns[i % len(nouns)]
            adj = TOY_ADJ[int(rng.integers(len(TOY_ADJ)))][0]
            verb = TOY_VERB[int(rng.integers(len(TOY_VERB)))][0]
            en_caption = f"A {adj} {noun} {verb}."
            de_caption = f"{de_of['a'].capitalize()} {de_of[adj]} {de_of[noun].capitalize()} {de_of[verb]}."
            image_id = f"{i:06d}"
            images[image_id] = noun_image[noun] + 0.2 * rng.standard_normal(image_dim)
            fh.write(json.dumps({"image_id": image_id, "en": en_caption, "de": de_caption},
                                ensure_ascii=False) + "\n")
    write_image_vectors(out / "vectors.txt", images)

    with open(out / "sim_en.tsv", "w", encoding="utf-8") as fh:
        pairs = [("car", "automobile", 9.2), ("cat", "kitten", 8.5), ("dog", "puppy", 8.7),
                 ("car", "truck", 7.0), ("cat", "dog", 6.8), ("pizza", "cake", 6.0),
                 ("apple", "banana", 6.5), ("car", "banana", 0.8), ("horse", "bread", 0.5),
                 ("bus", "train", 6.9), ("bird", "bike", 1.2), ("apple", "vegetable", 5.5),
                 ("cow", "horse", 6.1), ("unicorn", "horse", 5.0), ("truck", "cake", 0.4)]
        for w1, w2, s in pairs:
            fh.write(f"{w1}\t{w2}\t{s}\n")
    with open(out / "cat_en.tsv", "w", encoding="utf-8") as fh:
        for cat, pairs in TOY_NOUNS.items():
            for en, _ in pairs:
                fh.write(f"{en}\t{cat}\n")
    with open(out / "bless_en.tsv", "w", encoding="utf-8") as fh:
        rows = [("dog", "coord", "cat"), ("dog", "coord", "horse"), ("dog", "hyper", "animal"),
                ("dog", "attri", "small"), ("dog", "event", "sits"), ("dog", "random", "bus"),
                ("car", "coord", "truck"), ("car", "coord", "bus"), ("car", "attri", "red"),
                ("car", "event", "stands"), ("car", "random", "apple"), ("car", "mero", "wheel"),
                ("apple", "coord", "banana"), ("apple", "attri", "red"), ("apple", "random", "bike"),
                ("apple", "event", "is")]
        for row in rows:
            fh.write("\t".join(row) + "\n")
    config = {
        "train": {"batch_size": 16, "max_epochs": 8, "patience": 3, "learning_rate": 0.01, "seed": seed,
                  "languages": ["en", "de"], "d": d, "c": 8, "h": image_dim},
        "embeddings": {"en": "emb_en.txt", "de": "emb_de.txt"},
        "manifest": "manifest.jsonl",
        "vectors": "vectors.txt",
        "vocab_limits": {"en": 100, "de": 100},
        "validation_size": 12,
        "standardize_images": True,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return out


def _write_table(path, vectors: dict):
    with open(path, "w", encoding="utf-8") as fh:
        for word, vec in vectors.items():
            fh.write(word + " " + " ".join(f"{x:.6f}" for x in vec) + "\n")


if __name__ == "__main__":
    write_toy_corpus(sys.argv[1] if len(sys.argv) > 1 else "toy")
