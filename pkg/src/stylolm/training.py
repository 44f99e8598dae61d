"""Training loop with loss-threshold stopping, held-out chunked evaluation,
loss matrices over (author, seed) grids, and argmin attribution."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autograd as ag
from .errors import ConfigError, ShapeError, TextTooShortError, TrainingDivergenceError
from .model import LanguageModel, lm_loss
from .optim import AdamW

log = logging.getLogger(__name__)


@dataclass
class TrainRunConfig:
    batches_per_epoch: int = 40
    batch_size: int = 16
    seq_len: int = 1024
    lr: float = 5e-5
    loss_threshold: float = 3.0
    max_epochs: int = 500
    eval_every: int = 1
    micro_batch: int | None = None  # split each batch for memory; grads accumulate

    @property
    def tokens_per_epoch(self) -> int:
        return self.batches_per_epoch * self.batch_size * self.seq_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRunConfig":
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    heldout_losses: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainResult:
    records: list[EpochRecord]
    converged: bool
    epochs: int

    @property
    def final_train_loss(self) -> float:
        return self.records[-1].train_loss if self.records else float("nan")


@dataclass
class LossMatrix:
    """entries[i, j, s]: loss of author i's held-out text under author j's
    model for seed index s."""
    authors: list[str]
    seeds: list[int]
    entries: np.ndarray

    def mean_over_seeds(self) -> np.ndarray:
        return self.entries.mean(axis=2)


def make_epoch_batches(token_ids: np.ndarray, cfg: TrainRunConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """(batches, batch_size, seq_len) of contiguous windows with starts drawn
    uniformly, with replacement across the epoch."""
    token_ids = np.asarray(token_ids)
    n = token_ids.size
    if n < cfg.seq_len:
        raise ShapeError(f"sequence of {n} tokens is shorter than seq_len {cfg.seq_len}")
    total = cfg.batches_per_epoch * cfg.batch_size
    starts = rng.integers(0, n - cfg.seq_len + 1, size=total)
    windows = token_ids[starts[:, None] + np.arange(cfg.seq_len)[None, :]]
    return windows.reshape(cfg.batches_per_epoch, cfg.batch_size, cfg.seq_len)


def train_until_threshold(model: LanguageModel, token_ids: np.ndarray,
                          cfg: TrainRunConfig, seed: int = 0,
                          eval_hook=None) -> TrainResult:
    """Run epochs until the epoch-mean train loss falls to the threshold or
    max_epochs is hit (flagged as non-converged).

    ``eval_hook(model, epoch)``, when given, returns {label: held-out loss}
    and is called every ``eval_every`` epochs.
    """
    if cfg.max_epochs < 1:
        raise ConfigError("max_epochs must be >= 1; no training performed otherwise")
    opt = AdamW(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    records: list[EpochRecord] = []
    for epoch in range(1, cfg.max_epochs + 1):
        batches = make_epoch_batches(token_ids, cfg, rng)
        losses = []
        for batch in batches:
            losses.append(_train_step(model, opt, batch, cfg))
        mean_loss = float(np.mean(losses))
        if not np.isfinite(mean_loss):
            raise TrainingDivergenceError(f"epoch {epoch}: non-finite mean loss {mean_loss}")
        rec = EpochRecord(epoch=epoch, train_loss=mean_loss)
        if eval_hook is not None and (epoch % cfg.eval_every == 0):
            rec.heldout_losses = eval_hook(model, epoch)
        records.append(rec)
        if mean_loss <= cfg.loss_threshold:
            return TrainResult(records=records, converged=True, epochs=epoch)
    log.warning("did not reach %.3f nats in %d epochs (last %.4f)",
                cfg.loss_threshold, cfg.max_epochs, records[-1].train_loss)
    return TrainResult(records=records, converged=False, epochs=cfg.max_epochs)


def _train_step(model: LanguageModel, opt: AdamW, batch: np.ndarray,
                cfg: TrainRunConfig) -> float:
    if cfg.micro_batch and cfg.micro_batch < batch.shape[0]:
        total = 0.0
        n = batch.shape[0]
        for lo in range(0, n, cfg.micro_batch):
            part = batch[lo:lo + cfg.micro_batch]
            loss = lm_loss(model, part)
            ag.scale(loss, part.shape[0] / n).backward()
            total += loss.item() * part.shape[0]
        opt.step()
        opt.zero_grad()
        return total / n
    loss = lm_loss(model, batch)
    loss.backward()
    opt.step()
    opt.zero_grad()
    return loss.item()


def chunk_heldout(token_ids: np.ndarray, chunk_len: int = 1024) -> np.ndarray:
    """Consecutive non-overlapping chunks from offset 0; the trailing
    remainder is dropped so every chunk weighs its tokens equally."""
    token_ids = np.asarray(token_ids)
    n_chunks = token_ids.size // chunk_len
    if n_chunks == 0:
        raise TextTooShortError(
            f"held-out text of {token_ids.size} tokens is shorter than one {chunk_len}-token chunk")
    return token_ids[:n_chunks * chunk_len].reshape(n_chunks, chunk_len)


def eval_loss(model: LanguageModel, chunks: np.ndarray,
              batch_size: int = 8) -> tuple[np.ndarray, float]:
    """Per-chunk mean cross-entropy and the unweighted mean across chunks.
    Chunks are equal length, so the mean weights every token equally."""
    chunks = np.asarray(chunks)
    per_chunk = np.empty(chunks.shape[0], dtype=np.float64)
    with ag.no_grad():
        for lo in range(0, chunks.shape[0], batch_size):
            part = chunks[lo:lo + batch_size]
            logits = model.forward(part)
            z = logits.data.astype(np.float64)
            m = z.max(axis=-1, keepdims=True)
            lse = m[..., 0] + np.log(np.exp(z - m).sum(axis=-1))
            picked = np.take_along_axis(z[:, :-1], part[:, 1:, None].astype(np.int64),
                                        axis=-1)[..., 0]
            per_chunk[lo:lo + part.shape[0]] = (lse[:, :-1] - picked).mean(axis=1)
    return per_chunk, float(per_chunk.mean())


def build_loss_matrix(models: dict[tuple[str, int], LanguageModel],
                      heldout: dict[tuple[str, int], np.ndarray],
                      authors: list[str], seeds: list[int],
                      chunk_len: int = 1024) -> LossMatrix:
    """L[i, j, s] = mean loss of author i's held-out text (seed s) under
    author j's seed-s model. Cross-author pairs share the seed index."""
    n = len(authors)
    entries = np.full((n, n, len(seeds)), np.nan)
    chunked = {}
    for (author, seed), ids in heldout.items():
        chunked[(author, seed)] = chunk_heldout(ids, chunk_len)
    for si, seed in enumerate(seeds):
        for j, model_author in enumerate(authors):
            key = (model_author, seed)
            if key not in models:
                raise KeyError(f"missing model for {key}")
            model = models[key]
            for i, eval_author in enumerate(authors):
                ek = (eval_author, seed)
                if ek not in chunked:
                    raise KeyError(f"missing held-out text for {ek}")
                _, mean = eval_loss(model, chunked[ek])
                entries[i, j, si] = mean
    return LossMatrix(authors=list(authors), seeds=list(seeds), entries=entries)


@dataclass
class Attribution:
    best: list[str]            # argmin model author(s); >1 entries means a tie
    mean_losses: dict[str, float]
    ambiguous: bool


def attribute(token_ids: np.ndarray, models: dict[str, LanguageModel],
              chunk_len: int = 1024) -> Attribution:
    """Label a text with the model that predicts it best (smallest mean loss).
    Exact ties are surfaced, not silently broken."""
    if len(models) < 2:
        raise ConfigError("attribution needs >= 2 candidate models")
    chunks = chunk_heldout(token_ids, chunk_len)
    means = {author: eval_loss(m, chunks)[1] for author, m in models.items()}
    best_val = min(means.values())
    winners = sorted(a for a, v in means.items() if v == best_val)
    return Attribution(best=winners, mean_losses=means, ambiguous=len(winners) > 1)
