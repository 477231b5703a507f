"""The grounding network: frozen lookup, shared alignment, one LSTM per language."""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .data import Batch, EmbeddingTable
from .errors import CheckpointError, ContractError, ShapeError

GATES = ("i", "f", "o", "g")
ALIGN = "align.M"


def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass
class AlignmentLayer:
    """Bias-free linear map from the textual space (d) to the grounded space (c)."""

    M: np.ndarray

    @property
    def d(self):
        return self.M.shape[0]

    @property
    def c(self):
        return self.M.shape[1]


@dataclass
class LstmEncoder:
    """Single-layer LSTM; per gate an input matrix W (c x h), recurrent U (h x h), bias b (1 x h)."""

    language: str
    params: dict

    @property
    def input_dim(self):
        return self.params["W_i"].shape[0]

    @property
    def hidden_dim(self):
        return self.params["U_i"].shape[0]

    @classmethod
    def init(cls, language, c, h, rng):
        params = {}
        for gate in GATES:
            params[f"W_{gate}"] = glorot_uniform(rng, c, h)
            params[f"U_{gate}"] = orthogonal(rng, h)
            params[f"b_{gate}"] = np.full((1, h), 1.0 if gate == "f" else 0.0)
        return cls(language, params)


@dataclass
class GroundingModel:
    """Frozen per-language lookup matrices plus the trainable parameters.

    ``lookups[lang]`` has one row per vocabulary id of that language.  The
    trainable registry is the alignment matrix and the encoder parameters,
    named ``align.M`` and ``<lang>.<W|U|b>_<gate>``.
    """

    languages: tuple
    lookups: dict
    alignment: AlignmentLayer
    encoders: dict
    vocabularies: dict = field(default_factory=dict, compare=False)

    @property
    def dims(self):
        enc = self.encoders[self.languages[0]]
        return self.alignment.d, self.alignment.c, enc.hidden_dim

    def parameters(self) -> dict:
        out = {ALIGN: self.alignment.M}
        for lang in self.languages:
            for key, value in self.encoders[lang].params.items():
                out[f"{lang}.{key}"] = value
        return out

    def with_parameters(self, params: dict) -> "GroundingModel":
        """A copy sharing the frozen lookups, with trainable arrays replaced."""
        expected = set(self.parameters())
        if set(params) != expected:
            raise ContractError(f"parameter names differ: {sorted(set(params) ^ expected)}")
        encoders = {
            lang: LstmEncoder(lang, {key: params[f"{lang}.{key}"] for key in self.encoders[lang].params})
            for lang in self.languages
        }
        return GroundingModel(self.languages, self.lookups, AlignmentLayer(params[ALIGN]), encoders,
                              self.vocabularies)


def init_model(lookups: dict, c: int, h: int, seed=0, languages=None, vocabularies=None) -> GroundingModel:
    """Fresh model over the given frozen lookups (language -> V x d array)."""
    languages = tuple(languages or lookups)
    if not languages:
        raise ContractError("at least one language is required")
    dims = {np.asarray(lookups[lang]).shape[1] for lang in languages}
    if len(dims) != 1:
        raise ShapeError(f"embedding dimensions differ across languages: {sorted(dims)}")
    d = dims.pop()
    rng = np.random.default_rng(seed)
    M = glorot_uniform(rng, d, c)
    encoders = {lang: LstmEncoder.init(lang, c, h, rng) for lang in languages}
    frozen = {}
    for lang in languages:
        arr = np.array(lookups[lang], dtype=np.float64)
        arr.setflags(write=False)
        frozen[lang] = arr
    return GroundingModel(languages, frozen, AlignmentLayer(M), encoders, dict(vocabularies or {}))


def lookups_from_dataset(dataset, tables: dict) -> dict:
    """Frozen lookup rows for each language's training vocabulary."""
    return {lang: tables[lang].rows(dataset.vocabularies[lang].words) for lang in dataset.languages}


def ground(word_vectors, M):
    """Grounded vectors ``word_vectors @ M``; accepts an AlignmentLayer or a matrix."""
    if isinstance(M, AlignmentLayer):
        M = M.M
    return nc.matmul(word_vectors, M)


def encode_steps(steps, params, mask):
    """Run the LSTM over a list of B x c step inputs.

    ``mask`` is B x T boolean.  Returns the hidden state at each row's last
    valid position; masked steps carry state through unchanged.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[1] != len(steps) or len(steps) == 0:
        raise ShapeError(f"mask of shape {mask.shape} for {len(steps)} steps")
    if not mask.any(axis=1).all():
        raise ContractError("every sequence needs at least one unmasked position")
    batch, hidden = mask.shape[0], nc.value_of(params["U_i"]).shape[0]
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    for t, x in enumerate(steps):
        pre = {
            gate: nc.add_row(nc.add(nc.matmul(x, params[f"W_{gate}"]), nc.matmul(h, params[f"U_{gate}"])),
                             params[f"b_{gate}"])
            for gate in GATES
        }
        i, f, o = nc.sigmoid(pre["i"]), nc.sigmoid(pre["f"]), nc.sigmoid(pre["o"])
        g = nc.tanh(pre["g"])
        c_new = nc.add(nc.mul(f, c), nc.mul(i, g))
        h_new = nc.mul(o, nc.tanh(c_new))
        valid = mask[:, t]
        if valid.all():
            c, h = c_new, h_new
        else:
            c = nc.select_rows(valid, c_new, c)
            h = nc.select_rows(valid, h_new, h)
    return h


def encode(sequence, encoder, mask=None):
    """Encode one grounded sequence (T x c) into a 1 x h vector."""
    seq = nc.value_of(sequence)
    if seq.ndim != 2 or seq.shape[0] < 1:
        raise ShapeError(f"expected a T x c sequence, got {seq.shape}")
    params = encoder.params if isinstance(encoder, LstmEncoder) else encoder
    if mask is None:
        mask = np.ones((1, seq.shape[0]), dtype=bool)
    mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    steps = [seq[t : t + 1] for t in range(seq.shape[0])]
    return encode_steps(steps, params, mask)


def _track(model, tape):
    values = model.parameters()
    if tape is None:
        return values
    return {name: tape.param(value, name) for name, value in values.items()}


def encode_language(model, batch: Batch, lang: str, params):
    lookup = model.lookups[lang]
    ids, mask = batch.tokens[lang], batch.masks[lang]
    steps = [ground(lookup[ids[:, t]], params[ALIGN]) for t in range(ids.shape[1])]
    enc = {key: params[f"{lang}.{key}"] for key in model.encoders[lang].params}
    return encode_steps(steps, enc, mask)


def joint_loss(model: GroundingModel, batch: Batch, tape=None, languages=None):
    """Summed per-language MSE against the batch image vectors.

    Returns ``(total, {lang: loss})``; values are tape nodes when ``tape`` is
    given, otherwise 1 x 1 arrays.
    """
    languages = tuple(languages or model.languages)
    missing = [lang for lang in languages if lang not in batch.tokens]
    if missing:
        raise ContractError(f"batch lacks captions for {missing}")
    params = _track(model, tape)
    per_lang = {}
    for lang in languages:
        encoded = encode_language(model, batch, lang, params)
        per_lang[lang] = nc.mse_loss(encoded, batch.images)
    total = per_lang[languages[0]]
    for lang in languages[1:]:
        total = nc.add(total, per_lang[lang])
    return total, per_lang


def loss_and_grads(model: GroundingModel, batch: Batch):
    """Scalar losses and the gradient of the total for every trainable parameter."""
    tape = nc.Tape()
    total, per_lang = joint_loss(model, batch, tape)
    grads = nc.backward(tape, total)
    return float(total.value[0, 0]), {k: float(v.value[0, 0]) for k, v in per_lang.items()}, grads


def extract_grounded(table: EmbeddingTable, alignment) -> EmbeddingTable:
    """Ground every word of a textual table, including words never seen in training."""
    M = alignment.M if isinstance(alignment, AlignmentLayer) else np.asarray(alignment)
    if table.dim != M.shape[0]:
        raise ShapeError(f"table dimension {table.dim} does not match alignment input {M.shape[0]}")
    return EmbeddingTable(table.words, table.vectors @ M, space="grounded", language=table.language)


MAGIC = b"VGRDCKPT"
VERSION = 1


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def checkpoint_bytes(model: GroundingModel) -> bytes:
    d, c, h = model.dims
    out = bytearray(MAGIC)
    out += struct.pack("<HIIIH", VERSION, d, c, h, len(model.languages))
    for lang in model.languages:
        out += _pack_str(lang)
    blocks = list(model.parameters().items())
    blocks += [(f"frozen.{lang}", model.lookups[lang]) for lang in model.languages]
    out += struct.pack("<I", len(blocks))
    for name, arr in blocks:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out += _pack_str(name)
        out += struct.pack("<IIQ", arr.shape[0], arr.shape[1], arr.size)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save_model(model: GroundingModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self):
        (n,) = self.unpack("<H")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError("corrupt name in checkpoint") from None


def model_from_bytes(buf: bytes) -> GroundingModel:
    if len(buf) < len(MAGIC) + 4 or buf[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a grounding checkpoint (bad magic)")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt or truncated")
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    version, d, c, h, n_lang = r.unpack("<HIIIH")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    languages = tuple(r.string() for _ in range(n_lang))
    (n_blocks,) = r.unpack("<I")
    blocks = {}
    for _ in range(n_blocks):
        name = r.string()
        rows, cols, count = r.unpack("<IIQ")
        if rows * cols != count:
            raise CheckpointError(f"block {name!r}: length prefix {count} != {rows}x{cols}")
        arr = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(rows, cols)
        arr.setflags(write=False)
        blocks[name] = arr
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after last block")
    try:
        M = blocks[ALIGN]
        encoders = {}
        for lang in languages:
            params = {}
            for gate in GATES:
                for kind in ("W", "U", "b"):
                    params[f"{kind}_{gate}"] = blocks[f"{lang}.{kind}_{gate}"]
            encoders[lang] = LstmEncoder(lang, params)
        lookups = {lang: blocks[f"frozen.{lang}"] for lang in languages}
    except KeyError as exc:
        raise CheckpointError(f"missing block {exc.args[0]!r}") from None
    model = GroundingModel(languages, lookups, AlignmentLayer(M), encoders)
    if model.dims != (d, c, h):
        raise CheckpointError(f"header dims {(d, c, h)} disagree with blocks {model.dims}")
    return model


def load_model(path) -> GroundingModel:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint: {exc}") from None
    return model_from_bytes(buf)
