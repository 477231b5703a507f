"""NAdam training with validation early stopping and best-epoch restore."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .data import batches
from .errors import ConfigError, ContractError, DivergenceError
from .model import GroundingModel, joint_loss, loss_and_grads, save_model

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 20
    patience: int | None = 5
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    languages: tuple = ("en",)
    d: int = 300
    c: int = 1024
    h: int = 2048
    clip_norm: float | None = None

    def __post_init__(self):
        self.languages = tuple(self.languages)
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.patience is not None and not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("patience must lie in [1, max_epochs]")
        if not self.languages:
            raise ConfigError("at least one language is required")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_per_language: dict
    val_per_language: dict
    improved: bool
    seconds: float = field(default=0.0, compare=False)

    def to_record(self, timing=False):
        rec = asdict(self)
        if not timing:
            rec.pop("seconds")
        return rec


@dataclass
class TrainingReport:
    """Per-epoch losses; the ``initial_*`` fields are measured before the first update."""

    initial_val_loss: float
    initial_train_loss: float
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_early: bool = False

    @property
    def val_losses(self):
        return [e.val_loss for e in self.epochs]

    @property
    def train_losses(self):
        return [e.train_loss for e in self.epochs]

    def summary(self) -> dict:
        last = self.epochs[-1] if self.epochs else None
        return {
            "summary": True,
            "epochs_run": len(self.epochs),
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "last_val_loss": last.val_loss if last else self.initial_val_loss,
            "initial_val_loss": self.initial_val_loss,
            "initial_train_loss": self.initial_train_loss,
            "stopped_early": self.stopped_early,
        }

    def write_jsonl(self, path, timing=False) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.epochs:
                fh.write(json.dumps(rec.to_record(timing), sort_keys=True) + "\n")
            fh.write(json.dumps(self.summary(), sort_keys=True) + "\n")


class EarlyStopping:
    """Counts epochs without strict improvement of the monitored loss."""

    def __init__(self, patience=None):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch, loss) -> bool:
        """Record ``loss`` for ``epoch``; returns True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
        else:
            self.bad_epochs += 1
        return self.patience is not None and self.bad_epochs >= self.patience


@dataclass(frozen=True)
class LossSummary:
    total: float
    per_language: dict
    n_samples: int


def evaluate_loss(model: GroundingModel, samples, batch_size=256, languages=None) -> LossSummary:
    """Sample-weighted mean of per-batch losses over ``samples`` in their given order."""
    if not samples:
        raise ContractError("cannot evaluate loss on an empty split")
    languages = tuple(languages or model.languages)
    total = 0.0
    per_lang = {lang: 0.0 for lang in languages}
    n = 0
    for batch in batches(samples, batch_size, seed=None, languages=languages):
        loss, parts = joint_loss(model, batch, languages=languages)
        total += float(loss[0, 0]) * batch.size
        for lang in languages:
            per_lang[lang] += float(parts[lang][0, 0]) * batch.size
        n += batch.size
    return LossSummary(total / n, {k: v / n for k, v in per_lang.items()}, n)


def train(model: GroundingModel, dataset, config: TrainConfig, checkpoint_path=None, log_path=None,
          on_step=None, log_timing=False):
    """Train ``model`` on ``dataset.train``, early-stopping on ``dataset.validation``.

    Returns the parameters of the best validation epoch and the report.
    ``on_step(epoch, batch_index, total, per_language)`` is called after each
    batch loss is computed, before the update.
    """
    missing = set(config.languages) - set(dataset.languages)
    if missing:
        raise ContractError(f"dataset lacks languages {sorted(missing)}")
    if not dataset.train:
        raise ContractError("training split is empty")
    val_samples = dataset.validation or dataset.train
    if not dataset.validation:
        logger.warning("validation split empty; monitoring training loss")
    languages = config.languages

    rng = np.random.default_rng(config.seed)
    state = nc.NAdamState(learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2,
                          eps=config.eps)
    init_val = evaluate_loss(model, val_samples, config.batch_size, languages)
    init_train = evaluate_loss(model, dataset.train, config.batch_size, languages)
    report = TrainingReport(initial_val_loss=init_val.total, initial_train_loss=init_train.total)
    stopper = EarlyStopping(config.patience)
    best = model
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            started = time.perf_counter()
            sums = {lang: 0.0 for lang in languages}
            total_sum = 0.0
            n = 0
            for b, batch in enumerate(batches(dataset.train, config.batch_size, rng, languages)):
                try:
                    loss, parts, grads = _step_grads(model, batch, languages)
                except DivergenceError:
                    raise DivergenceError("non-finite value during forward/backward", epoch, b) from None
                if not np.isfinite(loss):
                    raise DivergenceError(f"loss became {loss}", epoch, b)
                if on_step is not None:
                    on_step(epoch, b, loss, parts)
                if config.clip_norm is not None:
                    grads = nc.clip_global_norm(grads, config.clip_norm)
                try:
                    params, state = nc.nadam_step(state, model.parameters(), grads)
                except DivergenceError:
                    raise DivergenceError("non-finite parameter after update", epoch, b) from None
                model = model.with_parameters(params)
                total_sum += loss * batch.size
                for lang in languages:
                    sums[lang] += parts[lang] * batch.size
                n += batch.size
            val = evaluate_loss(model, val_samples, config.batch_size, languages)
            if not np.isfinite(val.total):
                raise DivergenceError("validation loss not finite", epoch, None)
            previous_best = stopper.best
            stop = stopper.update(epoch, val.total)
            improved = val.total < previous_best
            rec = EpochRecord(epoch, total_sum / n, val.total, {k: v / n for k, v in sums.items()},
                              dict(val.per_language), improved, time.perf_counter() - started)
            report.epochs.append(rec)
            if log is not None:
                log.write(json.dumps(rec.to_record(log_timing), sort_keys=True) + "\n")
                log.flush()
            if improved:
                best = model
                if checkpoint_path is not None:
                    save_model(best, checkpoint_path)
            logger.info("epoch %d train %.6g val %.6g%s", epoch, rec.train_loss, rec.val_loss,
                        " *" if improved else "")
            if stop:
                report.stopped_early = epoch < config.max_epochs
                break
        report.best_epoch = stopper.best_epoch
        report.best_val_loss = stopper.best
        if log is not None:
            log.write(json.dumps(report.summary(), sort_keys=True) + "\n")
    finally:
        if log is not None:
            log.close()
    return best, report


def _step_grads(model, batch, languages):
    if tuple(languages) == tuple(model.languages):
        return loss_and_grads(model, batch)
    tape = nc.Tape()
    total, parts = joint_loss(model, batch, tape, languages)
    grads = nc.backward(tape, total)
    return float(total.value[0, 0]), {k: float(v.value[0, 0]) for k, v in parts.items()}, grads


def simulate_early_stopping(val_losses, patience):
    """Reference counting rule: returns (epochs run, best epoch), epochs numbered from 1."""
    best, best_epoch, wait = float("inf"), 0, 0
    for epoch, loss in enumerate(val_losses, 1):
        if loss < best:
            best, best_epoch, wait = loss, epoch, 0
        else:
            wait += 1
            if patience is not None and wait >= patience:
                return epoch, best_epoch
    return len(val_losses), best_epoch


def save_report(report: TrainingReport, path) -> None:
    Path(path).write_text(json.dumps(report.summary(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
