"""Similarity, categorization, BLESS relation profiling and neighbor diffing."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .data import BLESS_RELATIONS, BlessDataset, CategorySet, EmbeddingTable, SimilarityBenchmark
from .errors import ContractError, InsufficientDataError, OOVError, ShapeError


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"cosine: lengths differ ({u.size} vs {v.size})")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ContractError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _usable(table, word):
    return word in table and np.any(table[word])


# ---------------------------------------------------------------- similarity

@dataclass(frozen=True)
class SimilarityResult:
    benchmark: str
    rho: float
    coverage: float
    n_evaluated: int
    n_total: int

    @property
    def score(self):
        """Correlation scaled by 100, as similarity tables are usually reported."""
        return 100.0 * self.rho


def spearman_rho(x, y) -> float:
    """Pearson correlation of average ranks."""
    rx = rankdata(np.asarray(x, dtype=np.float64))
    ry = rankdata(np.asarray(y, dtype=np.float64))
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if denom == 0.0:
        raise InsufficientDataError("rank correlation undefined for constant scores")
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


def spearman(benchmark, table: EmbeddingTable, name=None) -> SimilarityResult:
    """Spearman correlation between model cosines and gold scores.

    ``benchmark`` is a :class:`SimilarityBenchmark` or a list of
    ``(word1, word2, score)``.  Pairs with an uncovered word are skipped.
    """
    if isinstance(benchmark, SimilarityBenchmark):
        name = name or benchmark.name
        pairs = benchmark.pairs
    else:
        pairs = tuple(benchmark)
    model, gold = [], []
    for w1, w2, score in pairs:
        if _usable(table, w1) and _usable(table, w2):
            model.append(cosine(table[w1], table[w2]))
            gold.append(score)
    coverage = len(model) / len(pairs) if pairs else 0.0
    if len(model) < 2:
        raise InsufficientDataError(f"{name or 'benchmark'}: fewer than 2 evaluable pairs", coverage)
    return SimilarityResult(name or "benchmark", spearman_rho(model, gold), coverage, len(model), len(pairs))


# ---------------------------------------------------------------- clustering

@dataclass
class KMeansResult:
    labels: np.ndarray
    wcss: float
    restart_wcss: list
    restart_labels: list = field(repr=False)
    history: list = field(repr=False)  # WCSS after every Lloyd iteration, per restart


def _sq_dists(X, centers):
    out = np.empty((X.shape[0], centers.shape[0]))
    for j, c in enumerate(centers):
        diff = X - c
        out[:, j] = np.einsum("ij,ij->i", diff, diff)
    return out


def _wcss(X, centers, labels):
    diff = X - centers[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _plusplus(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(X, X[idx : idx + 1])[:, 0])
    return X[chosen].copy()


def _lloyd(X, k, rng, max_iter):
    centers = _plusplus(X, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        new_labels = np.argmin(_sq_dists(X, centers), axis=1)
        converged = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                centers[j] = X[labels == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # re-seed empty clusters on the points worst served by their centroid
            far = np.argsort(-_sq_dists(X, centers)[np.arange(len(X)), labels], kind="stable")
            for j, idx in zip(empty, far):
                centers[j] = X[idx]
        w = _wcss(X, centers, labels)
        if history and w > history[-1] * (1 + 1e-12) + 1e-12:
            raise AssertionError(f"k-means WCSS increased: {history[-1]!r} -> {w!r}")
        history.append(w)
        if converged:
            break
    return labels, history[-1], history


def kmeans(vectors, k: int, seed=0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; keeps the restart with the lowest WCSS."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"kmeans expects an n x dim matrix, got {X.shape}")
    if k < 2:
        raise ContractError("k must be at least 2")
    if k > X.shape[0]:
        raise ContractError(f"k={k} exceeds the number of points ({X.shape[0]})")
    if restarts < 1:
        raise ContractError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    runs = [_lloyd(X, k, rng, max_iter) for _ in range(restarts)]
    best = min(range(restarts), key=lambda r: runs[r][1])
    return KMeansResult(runs[best][0], runs[best][1], [r[1] for r in runs], [r[0] for r in runs],
                        [r[2] for r in runs])


def purity(predicted, gold) -> float:
    """Fraction of points that fall in the majority gold class of their cluster."""
    predicted, gold = list(predicted), list(gold)
    if len(predicted) != len(gold):
        raise ContractError(f"label lengths differ ({len(predicted)} vs {len(gold)})")
    if not predicted:
        raise ContractError("purity of an empty labeling is undefined")
    by_cluster = defaultdict(Counter)
    for p, g in zip(predicted, gold):
        by_cluster[p][g] += 1
    return sum(max(c.values()) for c in by_cluster.values()) / len(gold)


@dataclass(frozen=True)
class CategorizationResult:
    benchmark: str
    purity: float
    k: int
    restarts: int
    seed: int
    coverage: float
    n_evaluated: int
    restart_purities: tuple = ()

    @property
    def score(self):
        return 100.0 * self.purity


def categorize(table: EmbeddingTable, categories: CategorySet, seed=0, restarts=10, k=None) -> CategorizationResult:
    """Cluster the covered words into as many groups as there are gold categories."""
    words = [w for w in categories.items if _usable(table, w)]
    gold = [categories.items[w] for w in words]
    coverage = len(words) / len(categories.items) if categories.items else 0.0
    n_gold = len(set(gold))
    if n_gold < 2:
        raise InsufficientDataError(f"{categories.name}: fewer than 2 categories covered", coverage)
    k = n_gold if k is None else k
    if k < 2:
        raise ContractError("k must be at least 2")
    X = table.rows(words)
    X = X / np.linalg.norm(X, axis=1, keepdims=True)
    result = kmeans(X, k, seed=seed, restarts=restarts)
    spread = tuple(purity(lab, gold) for lab in result.restart_labels)
    return CategorizationResult(categories.name, purity(result.labels, gold), k, restarts, seed,
                                coverage, len(words), spread)


# ---------------------------------------------------------------- BLESS

@dataclass
class BlessScoreMatrix:
    """Mean concept-to-relatum cosine per (concept, relation) and its per-concept z-scores.

    Missing cells are NaN.  ``excluded`` maps concept to reason for concepts
    left out of the normalized rows.
    """

    concepts: list
    relations: tuple
    raw: np.ndarray
    normalized: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    excluded: dict

    @property
    def included(self):
        return [c for c in self.concepts if c not in self.excluded]

    def long_table(self):
        """Rows of (concept, relation, raw, z) for included concepts and available cells."""
        rows = []
        for i, concept in enumerate(self.concepts):
            if concept in self.excluded:
                continue
            for r, rel in enumerate(self.relations):
                if not np.isnan(self.raw[i, r]):
                    rows.append((concept, rel, float(self.raw[i, r]), float(self.normalized[i, r])))
        return rows

    def summaries(self, normalized=True) -> dict:
        values = self.normalized if normalized else self.raw
        mask = np.array([c not in self.excluded for c in self.concepts], dtype=bool)
        out = {}
        for r, rel in enumerate(self.relations):
            col = values[mask, r]
            col = col[~np.isnan(col)]
            if col.size:
                out[rel] = box_summary(col)
        return out


def box_summary(values) -> dict:
    """Quartiles, Tukey whiskers (1.5 IQR, clipped to data), mean and population variance."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    q1, median, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    lo = x[x >= q1 - 1.5 * iqr].min()
    hi = x[x <= q3 + 1.5 * iqr].max()
    return {
        "n": int(x.size),
        "q1": float(q1),
        "median": float(median),
        "q3": float(q3),
        "whisker_low": float(lo),
        "whisker_high": float(hi),
        "mean": float(x.mean()),
        "variance": float(x.var()),
    }


def bless_profile(table: EmbeddingTable, bless: BlessDataset, relations=BLESS_RELATIONS) -> BlessScoreMatrix:
    """Per-concept relation profile, standardized with population sigma across relations."""
    relations = tuple(relations)
    grouped = defaultdict(lambda: defaultdict(list))
    for concept, rel, relatum in bless.tuples:
        grouped[concept][rel].append(relatum)
    concepts = sorted(grouped)
    raw = np.full((len(concepts), len(relations)), np.nan)
    normalized = np.full_like(raw, np.nan)
    mu = np.full(len(concepts), np.nan)
    sigma = np.full(len(concepts), np.nan)
    excluded = {}
    for i, concept in enumerate(concepts):
        if not _usable(table, concept):
            excluded[concept] = "concept not covered"
            continue
        cvec = table[concept]
        for r, rel in enumerate(relations):
            sims = [cosine(cvec, table[w]) for w in grouped[concept].get(rel, ()) if _usable(table, w)]
            if sims:
                raw[i, r] = float(np.mean(sims))
        row = raw[i][~np.isnan(raw[i])]
        if row.size < 2:
            excluded[concept] = "fewer than 2 relations scored"
            continue
        mu[i] = row.mean()
        # deviations as mean pairwise differences: antisymmetric in floating point,
        # so a two-relation row standardizes to exactly -1 and +1
        dev = (row[:, None] - row[None, :]).mean(axis=1)
        sigma[i] = np.sqrt(np.mean(dev * dev))
        if sigma[i] == 0.0:
            excluded[concept] = "all relation scores equal"
            continue
        scored = ~np.isnan(raw[i])
        normalized[i, scored] = dev / sigma[i]
    if len(excluded) == len(concepts):
        raise InsufficientDataError("no BLESS concept could be profiled", 0.0)
    return BlessScoreMatrix(concepts, relations, raw, normalized, mu, sigma, excluded)


# ---------------------------------------------------------------- neighbors

@dataclass(frozen=True)
class NeighborDiff:
    query: str
    k: int
    textual: tuple
    grounded: tuple
    only_textual: tuple
    only_grounded: tuple


def nearest_neighbors(word: str, k: int, table: EmbeddingTable):
    """Top-``k`` words by cosine to ``word`` (itself excluded); ties go to the lexicographically smaller word."""
    if word not in table:
        raise OOVError(f"{word!r} not in table")
    if k < 1:
        raise ContractError("k must be >= 1")
    q = table[word]
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ContractError(f"query {word!r} has a zero vector")
    norms = np.linalg.norm(table.vectors, axis=1)
    valid = norms > 0
    valid[table.index[word]] = False
    idx = np.flatnonzero(valid)
    sims = np.clip((table.vectors[idx] @ q) / (norms[idx] * qn), -1.0, 1.0)
    words = np.array([table.words[i] for i in idx], dtype=object)
    order = sorted(range(len(idx)), key=lambda j: (-sims[j], words[j]))[:k]
    return [(str(words[j]), float(sims[j])) for j in order]


def neighbor_diff(word: str, k: int, textual: EmbeddingTable, grounded: EmbeddingTable) -> NeighborDiff:
    t = [w for w, _ in nearest_neighbors(word, k, textual)]
    g = [w for w, _ in nearest_neighbors(word, k, grounded)]
    return NeighborDiff(word, k, tuple(t), tuple(g), tuple(w for w in t if w not in g),
                        tuple(w for w in g if w not in t))


# ---------------------------------------------------------------- reports

def format_comparison(results: dict, benchmarks: list, title=None) -> str:
    """Rows per embedding, one column per benchmark plus the mean, scores x100."""
    header = [""] + list(benchmarks) + ["Mean"]
    lines = []
    rows = []
    for name, by_bench in results.items():
        cells = [name]
        scores = []
        for bench in benchmarks:
            res = by_bench.get(bench)
            if res is None:
                cells.append("-")
            else:
                cells.append(f"{res.score:.1f}")
                scores.append(res.score)
        cells.append(f"{np.mean(scores):.1f}" if scores else "-")
        rows.append(cells)
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    fmt = lambda cells: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                                  for i, (c, w) in enumerate(zip(cells, widths)))
    if title:
        lines.append(title)
    lines.append(fmt(header))
    lines.append("-" * len(lines[-1]))
    lines.extend(fmt(r) for r in rows)
    return "\n".join(lines) + "\n"


def to_record(result, **extra) -> dict:
    rec = asdict(result)
    rec.update(extra)
    if hasattr(result, "score"):
        rec["score"] = result.score
    return rec


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
