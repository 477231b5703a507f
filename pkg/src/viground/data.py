"""Ingestion of embedding tables, caption manifests, image vectors and benchmarks."""

from __future__ import annotations

import json
import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ContractError, FormatError, IngestionError, ShapeError

logger = logging.getLogger(__name__)

# Scripts without letter case; everything else is lowercased by default.
UNCASED_LANGUAGES = frozenset({"ar"})
BLESS_RELATIONS = ("coord", "hyper", "mero", "attri", "event", "random")


def default_lowercase(language: str | None) -> bool:
    return language not in UNCASED_LANGUAGES


def normalize_word(word: str, lowercase: bool = True) -> str:
    word = unicodedata.normalize("NFC", word)
    return word.lower() if lowercase else word


def _strip_punctuation(text: str) -> str:
    return "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)


def tokenize(text: str, language: str = "en", lowercase: bool | None = None) -> list[str]:
    """Split a caption into normalized tokens.

    Unicode punctuation becomes whitespace.  Case folding is skipped for
    uncased scripts (Arabic) unless ``lowercase`` forces it.
    """
    if lowercase is None:
        lowercase = default_lowercase(language)
    text = normalize_word(text, lowercase)
    return _strip_punctuation(text).split()


class EmbeddingTable:
    """Vocabulary plus one dense vector per word.

    ``space`` is ``"textual"`` for pre-trained inputs and ``"grounded"`` for
    tables produced by the alignment layer.
    """

    def __init__(self, words, vectors, space="textual", language=None, duplicates=0):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(words):
            raise ShapeError(f"{len(words)} words but vector block of shape {vectors.shape}")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ContractError("embedding table words must be unique")
        vectors.setflags(write=False)
        self.vectors = vectors
        self.space = space
        self.language = language
        self.duplicates = duplicates

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def __getitem__(self, word) -> np.ndarray:
        return self.vectors[self.index[word]]

    def __repr__(self):
        return f"EmbeddingTable({self.space}, lang={self.language}, n={len(self)}, d={self.dim})"

    def rows(self, words: Iterable[str]) -> np.ndarray:
        return self.vectors[[self.index[w] for w in words]]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for word, vec in zip(self.words, self.vectors):
                fh.write(word + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def load_embeddings(path, expected_dim=None, language=None, lowercase=None, space="textual") -> EmbeddingTable:
    """Read a ``word v1 ... vd`` text file.

    Duplicate words (after normalization) keep the first occurrence; each
    later copy bumps ``table.duplicates``.  A leading word2vec-style
    ``count dim`` header line is skipped.
    """
    if lowercase is None:
        lowercase = default_lowercase(language)
    words, rows = [], []
    seen = set()
    duplicates = 0
    dim = expected_dim
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if not parts or parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and parts[0].isdigit() and parts[1].isdigit():
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim:
                raise FormatError(f"expected {dim} values, found {len(values)}", path, lineno)
            try:
                vec = [float(v) for v in values]
            except ValueError as exc:
                raise FormatError(f"unparsable real: {exc}", path, lineno) from None
            if not all(np.isfinite(vec)):
                raise FormatError("non-finite value", path, lineno)
            word = normalize_word(word, lowercase)
            if word in seen:
                duplicates += 1
                continue
            seen.add(word)
            words.append(word)
            rows.append(vec)
    if not words:
        raise FormatError("no embeddings found", path)
    if duplicates:
        logger.warning("%s: %d duplicate words ignored", path, duplicates)
    return EmbeddingTable(words, np.array(rows, dtype=np.float64).reshape(len(words), dim),
                          space=space, language=language, duplicates=duplicates)


@dataclass(frozen=True)
class Vocabulary:
    """Words ordered by descending corpus count, ties broken lexicographically."""

    words: tuple
    counts: tuple
    limit: int

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def id(self, word) -> int:
        return self._index[word]

    def encode(self, tokens) -> list[int]:
        """Token ids for the in-vocabulary tokens; others are dropped."""
        return [self._index[t] for t in tokens if t in self._index]

    def decode(self, ids) -> list[str]:
        return [self.words[i] for i in ids]


def build_vocabulary(corpus: Iterable[Iterable[str]], limit: int, allowed=None) -> Vocabulary:
    """The ``limit`` most frequent tokens of a tokenized corpus.

    ``allowed`` (any container) restricts candidates, typically to the words
    an embedding table has vectors for.
    """
    if limit < 1:
        raise ContractError("vocabulary limit must be >= 1")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    if allowed is not None:
        counts = Counter({w: c for w, c in counts.items() if w in allowed})
    if not counts:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda wc: (-wc[1], wc[0]))[:limit]
    return Vocabulary(tuple(w for w, _ in ranked), tuple(c for _, c in ranked), limit)


@dataclass(frozen=True)
class CaptionSample:
    image_id: str
    image: np.ndarray
    captions: dict  # language -> tuple of token ids


@dataclass
class CaptionDataset:
    languages: tuple
    train: list
    validation: list
    vocabularies: dict
    image_dim: int
    dropped: int = 0
    oov_tokens: dict = field(default_factory=dict)
    image_mean: np.ndarray | None = None
    image_std: np.ndarray | None = None

    def decode(self, sample: CaptionSample, language: str) -> list[str]:
        return self.vocabularies[language].decode(sample.captions[language])


def load_image_vectors(path) -> tuple[dict, int]:
    """Read a ``#dim N`` headed file of ``image_id v1 ... vN`` lines."""
    vectors = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(" ")
                if key == "dim":
                    try:
                        dim = int(val)
                    except ValueError:
                        raise FormatError(f"bad dim header {line!r}", path, lineno) from None
                continue
            if dim is None:
                raise FormatError("missing '#dim N' header before first vector", path, lineno)
            parts = line.split()
            if len(parts) != dim + 1:
                raise FormatError(f"expected {dim} values, found {len(parts) - 1}", path, lineno)
            try:
                vec = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"unparsable real: {exc}", path, lineno) from None
            if not np.all(np.isfinite(vec)):
                raise FormatError("non-finite value", path, lineno)
            vectors[parts[0]] = vec
    if dim is None:
        raise FormatError("missing '#dim N' header", path)
    return vectors, dim


def write_image_vectors(path, vectors: dict) -> None:
    dim = len(next(iter(vectors.values())))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#dim {dim}\n")
        for image_id, vec in vectors.items():
            fh.write(image_id + " " + " ".join(repr(float(x)) for x in vec) + "\n")


def read_manifest(path, languages) -> list[dict]:
    records = []
    missing = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid record: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict) or "image_id" not in rec:
                raise FormatError("record lacks image_id", path, lineno)
            absent = [lang for lang in languages if not isinstance(rec.get(lang), str)]
            if absent:
                missing.append(f"line {lineno} ({rec['image_id']}): {','.join(absent)}")
            records.append(rec)
    if missing:
        raise IngestionError("languages missing from samples: " + "; ".join(missing[:20]))
    return records


def load_dataset(manifest_path, vectors_path, languages, tables, vocab_limits=None,
                 validation_size=0, train_size=None, seed=0, standardize=True,
                 lowercase=None) -> CaptionDataset:
    """Build aligned (image vector, captions) samples and a seeded train/validation split.

    Vocabularies come from the manifest captions, restricted to words the
    language's embedding table knows.  Out-of-vocabulary tokens are dropped;
    a sample whose caption becomes empty in any language is dropped and
    counted in ``dataset.dropped``.  With ``standardize`` the image vectors
    are shifted and scaled per dimension using training-split statistics.
    """
    languages = tuple(languages)
    if not languages:
        raise ContractError("at least one language is required")
    vocab_limits = vocab_limits or {}
    records = read_manifest(manifest_path, languages)
    images, image_dim = load_image_vectors(vectors_path)
    unknown = sorted({str(r["image_id"]) for r in records} - set(images))
    if unknown:
        raise IngestionError(f"{len(unknown)} image ids missing from vectors file: {', '.join(unknown[:20])}")

    lowercase = lowercase or {}
    tokenized = {lang: [] for lang in languages}
    for rec in records:
        for lang in languages:
            tokenized[lang].append(tokenize(rec[lang], lang, lowercase=lowercase.get(lang)))
    vocabularies = {
        lang: build_vocabulary(tokenized[lang], vocab_limits.get(lang, 10_000), allowed=tables[lang].index)
        for lang in languages
    }

    samples = []
    dropped = 0
    oov = {lang: 0 for lang in languages}
    for i, rec in enumerate(records):
        captions = {}
        for lang in languages:
            toks = tokenized[lang][i]
            ids = vocabularies[lang].encode(toks)
            oov[lang] += len(toks) - len(ids)
            captions[lang] = tuple(ids)
        if any(len(ids) == 0 for ids in captions.values()):
            dropped += 1
            continue
        image = images[str(rec["image_id"])]
        samples.append(CaptionSample(str(rec["image_id"]), image, captions))
    if dropped:
        logger.info("dropped %d samples with empty captions after OOV filtering", dropped)

    if validation_size < 0 or validation_size > len(samples):
        raise ContractError(f"validation size {validation_size} exceeds {len(samples)} usable samples")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    val_idx = order[:validation_size]
    train_idx = order[validation_size:]
    if train_size is not None:
        if train_size > len(train_idx):
            raise ContractError(f"train size {train_size} exceeds {len(train_idx)} remaining samples")
        train_idx = train_idx[:train_size]
    train = [samples[i] for i in sorted(train_idx)]
    validation = [samples[i] for i in sorted(val_idx)]

    mean = std = None
    if standardize and train:
        stack = np.stack([s.image for s in train])
        mean = stack.mean(axis=0)
        std = stack.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        train = [standardize_sample(s, mean, std) for s in train]
        validation = [standardize_sample(s, mean, std) for s in validation]
    return CaptionDataset(languages, train, validation, vocabularies, image_dim,
                          dropped=dropped, oov_tokens=oov, image_mean=mean, image_std=std)


def standardize_sample(sample: CaptionSample, mean, std) -> CaptionSample:
    return CaptionSample(sample.image_id, (sample.image - mean) / std, sample.captions)


@dataclass(frozen=True)
class Batch:
    images: np.ndarray  # B x image_dim
    tokens: dict  # language -> B x T int array, zero padded
    masks: dict  # language -> B x T bool array

    @property
    def size(self) -> int:
        return self.images.shape[0]


def make_batch(samples, languages) -> Batch:
    images = np.stack([s.image for s in samples]).astype(np.float64)
    tokens, masks = {}, {}
    for lang in languages:
        seqs = [s.captions[lang] for s in samples]
        width = max(len(q) for q in seqs)
        ids = np.zeros((len(seqs), width), dtype=np.int64)
        mask = np.zeros((len(seqs), width), dtype=bool)
        for r, q in enumerate(seqs):
            ids[r, : len(q)] = q
            mask[r, : len(q)] = True
        tokens[lang], masks[lang] = ids, mask
    return Batch(images, tokens, masks)


def batches(samples, batch_size: int, seed=None, languages=None) -> Iterator[Batch]:
    """Padded batches in a seeded permutation order; the last short batch is kept.

    ``seed=None`` keeps the input order.  ``seed`` may also be a
    ``numpy.random.Generator``, which is advanced in place.
    """
    if batch_size < 1:
        raise ContractError("batch size must be >= 1")
    if not samples:
        return
    if languages is None:
        languages = tuple(samples[0].captions)
    order = np.arange(len(samples)) if seed is None else np.random.default_rng(seed).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        yield make_batch([samples[i] for i in order[start : start + batch_size]], languages)


@dataclass(frozen=True)
class SimilarityBenchmark:
    name: str
    pairs: tuple  # (word1, word2, score)


@dataclass(frozen=True)
class CategorySet:
    name: str
    items: dict  # word -> category

    @property
    def categories(self):
        return sorted(set(self.items.values()))


@dataclass(frozen=True)
class BlessDataset:
    tuples: tuple  # (concept, relation, relatum)

    @property
    def concepts(self):
        return sorted({c for c, _, _ in self.tuples})


def _fields(line):
    line = line.rstrip("\n")
    return line.split("\t") if "\t" in line else line.split()


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, _fields(line)


def load_similarity(path, name=None, language="en", lowercase=None) -> SimilarityBenchmark:
    """``word1 TAB word2 TAB score`` lines; repeated pairs keep the first score."""
    if lowercase is None:
        lowercase = default_lowercase(language)
    pairs, seen = [], set()
    for lineno, parts in _data_lines(path):
        if len(parts) != 3:
            raise FormatError(f"expected 3 fields, found {len(parts)}", path, lineno)
        try:
            score = float(parts[2])
        except ValueError:
            raise FormatError(f"unparsable score {parts[2]!r}", path, lineno) from None
        if not np.isfinite(score):
            raise FormatError("non-finite score", path, lineno)
        w1, w2 = normalize_word(parts[0].strip(), lowercase), normalize_word(parts[1].strip(), lowercase)
        if (w1, w2) in seen:
            continue
        seen.add((w1, w2))
        pairs.append((w1, w2, score))
    return SimilarityBenchmark(name or Path(path).stem, tuple(pairs))


def load_categories(path, name=None, language="en", lowercase=None) -> CategorySet:
    """``word TAB category`` lines; needs at least two distinct categories."""
    if lowercase is None:
        lowercase = default_lowercase(language)
    items = {}
    for lineno, parts in _data_lines(path):
        if len(parts) != 2:
            raise FormatError(f"expected 2 fields, found {len(parts)}", path, lineno)
        word = normalize_word(parts[0].strip(), lowercase)
        label = parts[1].strip()
        if word in items and items[word] != label:
            raise FormatError(f"word {word!r} assigned to two categories", path, lineno)
        items[word] = label
    if len(set(items.values())) < 2:
        raise ContractError(f"{path}: category set needs at least 2 distinct categories")
    return CategorySet(name or Path(path).stem, items)


def _bless_relation(raw):
    rel = raw.strip().lower()
    # the distributed file splits distractors into random-n / random-j / random-v
    if rel.startswith("random"):
        rel = "random"
    return rel


def _strip_pos(word):
    head, sep, tail = word.rpartition("-")
    return head if sep and tail in {"n", "j", "v"} and head else word


def load_bless(path, lowercase=True) -> BlessDataset:
    """``concept TAB relation TAB relatum`` lines.

    The four-column distribution format (``concept-n class relation
    relatum-pos``) is accepted as well; part-of-speech suffixes are removed.
    """
    tuples = []
    for lineno, parts in _data_lines(path):
        if len(parts) == 3:
            concept, rel, relatum = parts
        elif len(parts) == 4:
            concept, _, rel, relatum = parts
        else:
            raise FormatError(f"expected 3 fields, found {len(parts)}", path, lineno)
        rel = _bless_relation(rel)
        if rel not in BLESS_RELATIONS:
            raise FormatError(f"unknown relation {rel!r}", path, lineno)
        tuples.append((normalize_word(_strip_pos(concept.strip()), lowercase), rel,
                       normalize_word(_strip_pos(relatum.strip()), lowercase)))
    return BlessDataset(tuple(tuples))
