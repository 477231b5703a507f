import json
from collections import Counter

import numpy as np
import pytest

from conftest import FIXTURES
from viground.data import (
    CaptionSample,
    EmbeddingTable,
    batches,
    build_vocabulary,
    load_bless,
    load_categories,
    load_dataset,
    load_embeddings,
    load_similarity,
    tokenize,
    write_image_vectors,
)
from viground.errors import ContractError, FormatError, IngestionError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---- embeddings

def test_load_embeddings_basic(tmp_path):
    table = load_embeddings(write(tmp_path / "e.txt", "a 1 0\nb 0 1\n"))
    assert table.dim == 2 and len(table) == 2
    np.testing.assert_array_equal(table["b"], [0.0, 1.0])


def test_duplicate_word_keeps_first(tmp_path):
    table = load_embeddings(write(tmp_path / "e.txt", "a 1 0\na 9 9\n"))
    assert len(table) == 1 and table.duplicates == 1
    np.testing.assert_array_equal(table["a"], [1.0, 0.0])


def test_duplicate_after_case_folding(tmp_path):
    table = load_embeddings(write(tmp_path / "e.txt", "Car 1 0\ncar 2 2\n"), language="en")
    assert table.words == ["car"] and table.duplicates == 1
    cased = load_embeddings(write(tmp_path / "e.txt", "Car 1 0\ncar 2 2\n"), lowercase=False)
    assert len(cased) == 2


def test_embedding_round_trip(tmp_path, rng):
    words = [f"w{i}" for i in range(10)]
    table = EmbeddingTable(words, rng.standard_normal((10, 5)))
    table.save(tmp_path / "t.txt")
    loaded = load_embeddings(tmp_path / "t.txt")
    assert loaded.words == words
    np.testing.assert_allclose(loaded.vectors, table.vectors, rtol=0, atol=1e-9)


def test_inconsistent_dimension_reports_line(tmp_path):
    with pytest.raises(FormatError, match=":3"):
        load_embeddings(write(tmp_path / "e.txt", "a 1 0\nb 0 1\nc 1\n"))


def test_unparsable_real(tmp_path):
    with pytest.raises(FormatError, match=":2"):
        load_embeddings(write(tmp_path / "e.txt", "a 1 0\nb x 1\n"))


def test_expected_dim_enforced(tmp_path):
    with pytest.raises(FormatError):
        load_embeddings(write(tmp_path / "e.txt", "a 1 0\n"), expected_dim=3)


def test_word2vec_header_skipped(tmp_path):
    table = load_embeddings(write(tmp_path / "e.txt", "2 2\na 1 0\nb 0 1\n"))
    assert len(table) == 2


# ---- vocabulary

def test_vocabulary_top_limit():
    assert build_vocabulary([["a", "a", "b"]], 1).words == ("a",)


def test_vocabulary_lexicographic_tie_break():
    assert build_vocabulary([["b", "a"]], 2).words == ("a", "b")


def test_vocabulary_empty_corpus():
    with pytest.raises(ContractError):
        build_vocabulary([], 5)
    with pytest.raises(ContractError):
        build_vocabulary([[]], 5)


def test_vocabulary_matches_counting_oracle(rng):
    words = [f"w{i:03d}" for i in range(400)]
    counts = {w: max(1, int(1000 / (i + 1))) for i, w in enumerate(words)}
    corpus = [w for w, c in counts.items() for _ in range(c)]
    rng.shuffle(corpus)
    lines = [corpus[i : i + 7] for i in range(0, len(corpus), 7)]
    tally = {}
    for line in lines:
        for tok in line:
            tally[tok] = tally.get(tok, 0) + 1
    expected = [w for w, _ in sorted(tally.items(), key=lambda kv: (-kv[1], kv[0]))][:100]
    assert list(build_vocabulary(lines, 100).words) == expected


def test_vocabulary_restricted_to_table():
    vocab = build_vocabulary([["a", "b", "b", "zz"]], 10, allowed={"a", "b"})
    assert vocab.words == ("b", "a")


# ---- tokenization

def test_tokenize_examples():
    assert tokenize("A man, riding.", "en") == ["a", "man", "riding"]
    assert tokenize("", "en") == []


def test_tokenize_arabic_keeps_case_and_strips_arabic_punctuation():
    assert tokenize("Bus، حافلة؟", "ar") == ["Bus", "حافلة"]


def test_tokenize_nfc():
    assert tokenize("Mädchen", "de") == ["mädchen"]


@pytest.mark.parametrize("language", ["en", "de", "ar"])
def test_tokenize_golden(language):
    cases = json.loads((FIXTURES / "tokenize_golden.json").read_text(encoding="utf-8"))[language]
    assert len(cases) == 20
    for text, expected in cases:
        assert tokenize(text, language) == expected, text


# ---- caption dataset

def _corpus(tmp_path, n=10, dim=3, extra=None):
    emb = write(tmp_path / "en.txt", "a 1 0\ndog 0 1\ncat 1 1\nsits 0.5 0.5\n")
    emb_de = write(tmp_path / "de.txt", "ein 1 0\nhund 0 1\nkatze 1 1\nsitzt 0.5 0.5\n")
    rng = np.random.default_rng(0)
    records = []
    images = {}
    for i in range(n):
        animal = ("dog", "hund") if i % 2 else ("cat", "katze")
        records.append({"image_id": f"i{i}", "en": f"A {animal[0]} sits.", "de": f"Ein {animal[1].title()} sitzt."})
        images[f"i{i}"] = rng.standard_normal(dim)
    for rec in extra or []:
        records.append(rec)
        images.setdefault(rec["image_id"], rng.standard_normal(dim))
    manifest = tmp_path / "m.jsonl"
    manifest.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    write_image_vectors(tmp_path / "v.txt", images)
    tables = {"en": load_embeddings(emb, language="en"), "de": load_embeddings(emb_de, language="de")}
    return manifest, tmp_path / "v.txt", tables


def test_split_is_deterministic(tmp_path):
    manifest, vectors, tables = _corpus(tmp_path)
    a = load_dataset(manifest, vectors, ("en", "de"), tables, validation_size=2, seed=7)
    b = load_dataset(manifest, vectors, ("en", "de"), tables, validation_size=2, seed=7)
    assert len(a.train) == 8 and len(a.validation) == 2
    assert [s.image_id for s in a.validation] == [s.image_id for s in b.validation]
    assert [s.image_id for s in a.train] == [s.image_id for s in b.train]
    c = load_dataset(manifest, vectors, ("en", "de"), tables, validation_size=2, seed=8)
    assert {s.image_id for s in a.validation} | {s.image_id for s in a.train} == \
        {s.image_id for s in c.validation} | {s.image_id for s in c.train}


def test_fully_oov_caption_dropped(tmp_path):
    manifest, vectors, tables = _corpus(tmp_path, extra=[{"image_id": "x", "en": "zebra giraffe", "de": "Ein Hund"}])
    ds = load_dataset(manifest, vectors, ("en", "de"), tables, validation_size=0)
    assert ds.dropped == 1
    assert len(ds.train) == 10
    assert ds.oov_tokens["en"] == 2


def test_missing_image_vector_lists_ids(tmp_path):
    manifest, vectors, tables = _corpus(tmp_path)
    with open(manifest, "a", encoding="utf-8") as fh:
        fh.write(json.dumps({"image_id": "ghost", "en": "a dog", "de": "ein hund"}) + "\n")
    with pytest.raises(IngestionError, match="ghost"):
        load_dataset(manifest, vectors, ("en", "de"), tables)


def test_missing_language_is_ingestion_error(tmp_path):
    manifest, vectors, tables = _corpus(tmp_path, extra=[{"image_id": "i0", "en": "a dog"}])
    with pytest.raises(IngestionError, match="de"):
        load_dataset(manifest, vectors, ("en", "de"), tables)


def test_decode_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    vocab = [f"w{i}" for i in range(30)]
    table = EmbeddingTable(vocab[:20], rng.standard_normal((20, 4)), language="en")
    records, images, expected = [], {}, {}
    for i in range(100):
        toks = [vocab[j] for j in rng.integers(0, 30, size=int(rng.integers(1, 6)))]
        if not any(t in table for t in toks):
            toks.append("w0")
        records.append({"image_id": str(i), "en": " ".join(toks)})
        images[str(i)] = rng.standard_normal(2)
        expected[str(i)] = [t for t in toks if t in table]
    (tmp_path / "m.jsonl").write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    write_image_vectors(tmp_path / "v.txt", images)
    ds = load_dataset(tmp_path / "m.jsonl", tmp_path / "v.txt", ("en",), {"en": table}, validation_size=10)
    assert ds.dropped == 0
    for sample in ds.train + ds.validation:
        assert ds.decode(sample, "en") == expected[sample.image_id]


def test_standardization_uses_training_statistics(tmp_path):
    manifest, vectors, tables = _corpus(tmp_path, n=20)
    ds = load_dataset(manifest, vectors, ("en",), tables, validation_size=5, seed=1)
    stack = np.stack([s.image for s in ds.train])
    np.testing.assert_allclose(stack.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(stack.std(axis=0), 1.0, atol=1e-12)
    raw = load_dataset(manifest, vectors, ("en",), tables, validation_size=5, seed=1, standardize=False)
    np.testing.assert_allclose(ds.validation[0].image, (raw.validation[0].image - ds.image_mean) / ds.image_std)


def test_token_ids_index_table_words(tmp_path):
    manifest, vectors, tables = _corpus(tmp_path)
    ds = load_dataset(manifest, vectors, ("en", "de"), tables, validation_size=2)
    for lang in ("en", "de"):
        vocab = ds.vocabularies[lang]
        for batch in batches(ds.train, 3, seed=0, languages=("en", "de")):
            ids = batch.tokens[lang][batch.masks[lang]]
            assert all(vocab.words[i] in tables[lang] for i in ids)


# ---- batching

def _samples(lengths):
    return [CaptionSample(str(i), np.full(2, float(i)), {"en": tuple(range(1, n + 1))}) for i, n in enumerate(lengths)]


def test_batch_sizes_keep_short_tail():
    assert [b.size for b in batches(_samples([1] * 5), 2, seed=0)] == [2, 2, 1]


def test_batch_order_seeded():
    samples = _samples([1] * 12)

    def order(seed):
        return [tuple(b.images[:, 0]) for b in batches(samples, 4, seed=seed)]

    assert order(3) == order(3)
    assert len({tuple(order(s)) for s in range(10)}) > 1


def test_masks_match_lengths():
    rng = np.random.default_rng(2)
    lengths = [int(n) for n in rng.integers(1, 9, size=37)]
    samples = _samples(lengths)
    by_id = {float(i): n for i, n in enumerate(lengths)}
    seen = 0
    for b in batches(samples, 8, seed=1):
        width = b.tokens["en"].shape[1]
        assert width == max(by_id[x] for x in b.images[:, 0])
        for row, key in enumerate(b.images[:, 0]):
            assert b.masks["en"][row].sum() == by_id[key]
            assert not b.masks["en"][row, by_id[key]:].any()
            seen += 1
    assert seen == 37


def test_batch_size_must_be_positive():
    with pytest.raises(ContractError):
        list(batches(_samples([1]), 0))


# ---- benchmarks

def test_similarity_line(tmp_path):
    bench = load_similarity(write(tmp_path / "s.txt", "car automobile 9.2\n"))
    assert bench.pairs == (("car", "automobile", 9.2),)


def test_similarity_tab_separated_and_bad_line(tmp_path):
    bench = load_similarity(write(tmp_path / "s.tsv", "Car\tAutomobile\t9.2\ncar\tautomobile\t1\n"))
    assert bench.pairs == (("car", "automobile", 9.2),)
    with pytest.raises(FormatError, match=":2"):
        load_similarity(write(tmp_path / "b.tsv", "a\tb\t1\na\tb\n"))


def test_category_file_needs_two_categories(tmp_path):
    with pytest.raises(ContractError):
        load_categories(write(tmp_path / "c.tsv", "dog\tanimal\ncat\tanimal\n"))
    cs = load_categories(write(tmp_path / "c2.tsv", "dog\tanimal\ncar\tvehicle\n"))
    assert cs.categories == ["animal", "vehicle"]


def test_bless_line(tmp_path):
    bless = load_bless(write(tmp_path / "b.tsv", "lizard\tattri\tstriped\n"))
    assert bless.tuples == (("lizard", "attri", "striped"),)


def test_bless_distribution_format(tmp_path):
    bless = load_bless(write(tmp_path / "b.txt", "alligator-n\tamphibian_reptile\trandom-j\tblind-j\n"))
    assert bless.tuples == (("alligator", "random", "blind"),)


def test_bless_unknown_relation(tmp_path):
    with pytest.raises(FormatError, match=":1"):
        load_bless(write(tmp_path / "b.tsv", "lizard\tcolour\tgreen\n"))


def test_bundled_toy_files_parse(toy_dir):
    assert len(load_similarity(toy_dir / "sim_en.tsv").pairs) == 15
    assert len(load_categories(toy_dir / "cat_en.tsv").categories) == 3
    assert Counter(r for _, r, _ in load_bless(toy_dir / "bless_en.tsv").tuples)["coord"] == 5
