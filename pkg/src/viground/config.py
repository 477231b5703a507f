"""Run configuration: training hyperparameters plus input paths."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, IngestionError
from .train import TrainConfig

REFERENCE_VOCAB = {"en": 10_000, "de": 30_000, "ar": 30_000}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    embeddings: dict = field(default_factory=dict)  # language -> path
    manifest: str | None = None
    vectors: str | None = None
    vocab_limits: dict = field(default_factory=lambda: dict(REFERENCE_VOCAB))
    validation_size: int = 5000
    train_size: int | None = None
    standardize_images: bool = True
    lowercase: dict = field(default_factory=dict)  # language -> bool, overrides the script default
    out: str | None = None

    @classmethod
    def reference(cls, languages=("en", "de")) -> "RunConfig":
        """The published setting: batch 256, 20 epochs, patience 5, lr 1e-3, 300 -> 1024 -> 2048.

        Runs that include Arabic are capped at 77k training samples, the size
        of the translated subset; otherwise every non-validation sample trains.
        """
        languages = tuple(languages)
        return cls(train=TrainConfig(batch_size=256, max_epochs=20, patience=5, learning_rate=1e-3,
                                     languages=languages, d=300, c=1024, h=2048),
                   validation_size=5000, train_size=77_000 if "ar" in languages else None)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "RunConfig":
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        train_raw = dict(raw.pop("train", {}) or {})
        train_known = {f.name for f in fields(TrainConfig)}
        if set(train_raw) - train_known:
            raise ConfigError(f"unknown train keys: {sorted(set(train_raw) - train_known)}")
        try:
            cfg = cls(train=TrainConfig(**train_raw), **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if base_dir is not None:
            cfg.resolve_paths(Path(base_dir))
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc.msg}") from None
        return cls.from_dict(raw, base_dir=Path(path).parent)

    def resolve_paths(self, base: Path) -> None:
        def fix(p):
            return None if p is None else str((base / p) if not Path(p).is_absolute() else Path(p))

        self.embeddings = {k: fix(v) for k, v in self.embeddings.items()}
        self.manifest = fix(self.manifest)
        self.vectors = fix(self.vectors)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["train"]["languages"] = list(self.train.languages)
        return out

    def validate_for_training(self) -> None:
        """Check every input path before any compute starts."""
        langs = self.train.languages
        missing_tables = [lang for lang in langs if lang not in self.embeddings]
        if missing_tables:
            raise ConfigError(f"no embedding file configured for {missing_tables}")
        if self.manifest is None or self.vectors is None:
            raise ConfigError("manifest and vectors paths are required")
        for label, p in [("manifest", self.manifest), ("vectors", self.vectors)] + [
            (f"embeddings[{lang}]", self.embeddings[lang]) for lang in langs
        ]:
            if not Path(p).is_file():
                raise IngestionError(f"{label} file not found: {p}")
        if self.out is None:
            raise ConfigError("an output directory is required")
