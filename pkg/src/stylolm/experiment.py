"""Manifest-driven orchestration: prepare corpora, train the
(mode, author, seed) grid with a resumable ledger, and evaluate into CSV
reports.

Run directory layout:

    <out>/prepared/<mode>/<author>/book_NNN.npy   token ids per book
    <out>/prepared/<mode>/<author>/plans.json     per-seed sampling plans
    <out>/prepared/checksums.json                 sha256 of every artifact
    <out>/runs/<mode>/<author>/seed_<s>/          checkpoint + epoch records
    <out>/ledger.json                             grid cell states
    <out>/reports/                                CSV + SVG outputs
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import re
import zlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import AblationMode, PTB_TAGS, FUNC_TOKEN, CONTENT_TOKEN, apply_mode, load_stoplist, load_tagger
from .bpe import Vocabulary, byte_vocabulary, load_vocabulary, save_vocabulary, train_bpe
from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import (AuthorCorpus, Book, build_training_sequence, compute_token_budget,
                     corpus_stats, make_sampling_plan, normalize, strip_gutenberg,
                     write_stats_csv, SamplingPlan)
from .distance import mds_embed, normalize_loss, row_corr_dissimilarity, stylometric_distance
from .errors import ConfigError, InsufficientCorpusError, LedgerError
from .model import LanguageModel, ModelConfig, init_model, param_count
from .optim import AdamW
from .stats import one_sample_t, t_curve, welch_t
from .training import (LossMatrix, TrainRunConfig, attribute, build_loss_matrix,
                       chunk_heldout, eval_loss, train_until_threshold)
from .errors import DegenerateSampleError

log = logging.getLogger(__name__)

ALL_SPECIALS = [FUNC_TOKEN, CONTENT_TOKEN] + list(PTB_TAGS)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name).strip("_") or "unnamed"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


@dataclass
class BookSpec:
    title: str
    path: str
    trim_start: int = 0
    trim_end: int = 0


@dataclass
class AuthorSpec:
    author_id: str
    books: list[BookSpec]


@dataclass
class SpecialEval:
    name: str
    path: str
    candidates: list[str]
    true_author: str | None = None


@dataclass
class ExperimentManifest:
    path: Path
    checksum: str
    authors: list[AuthorSpec]
    modes: list[AblationMode]
    seeds: list[int]
    model: dict
    train: dict
    output_dir: Path
    jobs: int = 1
    budget_override: int | None = None
    tokenizer: dict = field(default_factory=lambda: {"kind": "byte"})
    tagger: dict = field(default_factory=lambda: {"kind": "builtin"})
    mds_input: str = "distance"  # or "correlation"
    special_evaluations: list[SpecialEval] = field(default_factory=list)

    @property
    def base_dir(self) -> Path:
        return self.path.parent

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p


def load_manifest(path: str | Path) -> ExperimentManifest:
    path = Path(path).resolve()
    raw = path.read_bytes()
    data = json.loads(raw)
    authors = [AuthorSpec(author_id=a["id"],
                          books=[BookSpec(title=b["title"], path=b["path"],
                                          trim_start=b.get("trim_start", 0),
                                          trim_end=b.get("trim_end", 0))
                                 for b in a["books"]])
               for a in data["authors"]]
    if not authors:
        raise ConfigError("manifest lists no authors")
    modes = [AblationMode.parse(m) for m in data.get("modes", ["intact"])]
    seeds = [int(s) for s in data.get("seeds", list(range(10)))]
    if not seeds or not modes:
        raise ConfigError("manifest needs at least one seed and one mode")
    specials = [SpecialEval(name=s["name"], path=s["path"],
                            candidates=list(s["candidates"]),
                            true_author=s.get("true_author"))
                for s in data.get("special_evaluations", [])]
    m = ExperimentManifest(
        path=path,
        checksum=hashlib.sha256(raw).hexdigest(),
        authors=authors,
        modes=modes,
        seeds=seeds,
        model=data.get("model", {}),
        train=data.get("train", {}),
        output_dir=Path(data.get("output_dir", "out")),
        jobs=int(data.get("jobs", 1)),
        budget_override=data.get("budget_override"),
        tokenizer=data.get("tokenizer", {"kind": "byte"}),
        tagger=data.get("tagger", {"kind": "builtin"}),
        mds_input=data.get("mds_input", "distance"),
        special_evaluations=specials,
    )
    for a in m.authors:
        for b in a.books:
            if not m.resolve(b.path).exists():
                raise ConfigError(f"book file not found: {b.path}")
    for s in m.special_evaluations:
        if not m.resolve(s.path).exists():
            raise ConfigError(f"special evaluation file not found: {s.path}")
    return m


def _out_dir(manifest: ExperimentManifest) -> Path:
    out = manifest.output_dir
    return out if out.is_absolute() else manifest.base_dir / out


def model_config(manifest: ExperimentManifest, vocab_size: int) -> ModelConfig:
    return ModelConfig(vocab_size=vocab_size, **manifest.model)


def train_config(manifest: ExperimentManifest) -> TrainRunConfig:
    return TrainRunConfig(**manifest.train)


# -- prepare ---------------------------------------------------------------


def _load_normalized_books(manifest: ExperimentManifest) -> list[AuthorCorpus]:
    corpora = []
    for spec in manifest.authors:
        books = []
        for bs in spec.books:
            raw = manifest.resolve(bs.path).read_text(encoding="utf-8")
            body = strip_gutenberg(raw)
            if bs.trim_start or bs.trim_end:
                end = len(body) - bs.trim_end if bs.trim_end else len(body)
                body = body[bs.trim_start:end]
            books.append(Book(author_id=spec.author_id, title=bs.title,
                              raw_text=raw, normalized_text=normalize(body)))
        corpora.append(AuthorCorpus(author_id=spec.author_id, books=books))
    return corpora


def build_vocabulary(manifest: ExperimentManifest,
                     corpora: list[AuthorCorpus]) -> Vocabulary:
    """One shared vocabulary: all ablation specials registered regardless of
    the requested modes, so V (and thus ln V) is identical across modes."""
    kind = manifest.tokenizer.get("kind", "byte")
    if kind == "files":
        vocab = load_vocabulary(manifest.resolve(manifest.tokenizer["vocab_file"]),
                                manifest.resolve(manifest.tokenizer["merges_file"]),
                                special_tokens=ALL_SPECIALS)
    elif kind == "trained":
        target = int(manifest.tokenizer.get("target_vocab", 300))
        text = "\n".join(b.normalized_text for c in corpora for b in c.books)
        vocab = train_bpe(text, target, special_tokens=ALL_SPECIALS)
    elif kind == "byte":
        vocab = byte_vocabulary(special_tokens=ALL_SPECIALS)
    else:
        raise ConfigError(f"unknown tokenizer kind {kind!r}")
    return vocab


def held_out_index(author_index: int, seed: int, n_books: int) -> int:
    """Uniform held-out book choice, re-drawn per seed, stable across modes."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11, author_index)))
    return int(rng.integers(0, n_books))


def _make_tagger(manifest: ExperimentManifest):
    kind = manifest.tagger.get("kind", "builtin")
    if kind == "builtin":
        return load_tagger("builtin")
    if kind == "files":
        return load_tagger({k: manifest.resolve(v) for k, v in manifest.tagger["files"].items()})
    raise ConfigError(f"unknown tagger kind {kind!r}")


def cmd_prepare(manifest: ExperimentManifest) -> dict:
    """Normalize, transform, tokenize, compute budgets, and write per-seed
    sampling plans with checksums. Deterministic: reruns are byte-identical."""
    out = _out_dir(manifest)
    prep = out / "prepared"
    prep.mkdir(parents=True, exist_ok=True)
    corpora = _load_normalized_books(manifest)
    vocab = build_vocabulary(manifest, corpora)
    save_vocabulary(vocab, prep / "vocab.json", prep / "merges.txt")

    stoplist = load_stoplist()
    tagger = _make_tagger(manifest)
    artifacts: list[Path] = [prep / "vocab.json", prep / "merges.txt"]
    budgets: dict[str, int] = {}

    for mode in manifest.modes:
        mode_corpora = []
        for corpus in corpora:
            books = []
            for b in corpus.books:
                text = apply_mode(b.normalized_text, mode, stoplist=stoplist,
                                  tagger=tagger, book=b.title)
                ids = np.asarray(vocab.encode(text), dtype=np.int32)
                books.append(Book(author_id=b.author_id, title=b.title,
                                  normalized_text=text, token_ids=ids))
            mode_corpora.append(AuthorCorpus(author_id=corpus.author_id, books=books))

        budget = manifest.budget_override or compute_token_budget(mode_corpora)
        budgets[mode.value] = int(budget)

        for ai, corpus in enumerate(mode_corpora):
            adir = prep / mode.value / _slug(corpus.author_id)
            adir.mkdir(parents=True, exist_ok=True)
            for bi, book in enumerate(corpus.books):
                p = adir / f"book_{bi:03d}.npy"
                np.save(p, book.token_ids)
                artifacts.append(p)
            plans = {}
            for seed in manifest.seeds:
                held = held_out_index(ai, seed, len(corpus.books))
                plan = make_sampling_plan(corpus, held, budget, seed)
                plans[str(seed)] = {"held_out": plan.held_out_book,
                                    "budget": plan.budget,
                                    "per_book": [list(t) for t in plan.per_book]}
            pp = adir / "plans.json"
            _dump_json({"author": corpus.author_id,
                        "titles": [b.title for b in corpus.books],
                        "plans": plans}, pp)
            artifacts.append(pp)

        for sp in manifest.special_evaluations:
            raw = manifest.resolve(sp.path).read_text(encoding="utf-8")
            text = apply_mode(normalize(strip_gutenberg(raw)), mode, stoplist=stoplist,
                              tagger=tagger, book=sp.name)
            ids = np.asarray(vocab.encode(text), dtype=np.int32)
            sdir = prep / mode.value / "_special"
            sdir.mkdir(parents=True, exist_ok=True)
            p = sdir / f"{_slug(sp.name)}.npy"
            np.save(p, ids)
            artifacts.append(p)

    bf = prep / "budget.json"
    _dump_json({"budgets": budgets, "vocab_size": vocab.size,
                "manifest_checksum": manifest.checksum, "version": __version__}, bf)
    artifacts.append(bf)

    checksums = {str(p.relative_to(prep)): sha256_file(p) for p in sorted(set(artifacts))}
    _dump_json({"files": checksums, "manifest_checksum": manifest.checksum,
                "version": __version__}, prep / "checksums.json")
    return {"budgets": budgets, "vocab_size": vocab.size,
            "authors": [c.author_id for c in corpora],
            "checksums": checksums}


def load_prepared_vocab(manifest: ExperimentManifest) -> Vocabulary:
    prep = _out_dir(manifest) / "prepared"
    return load_vocabulary(prep / "vocab.json", prep / "merges.txt",
                           special_tokens=ALL_SPECIALS)


def load_prepared_corpus(manifest: ExperimentManifest, mode: AblationMode,
                         author_id: str) -> tuple[AuthorCorpus, dict]:
    prep = _out_dir(manifest) / "prepared"
    adir = prep / mode.value / _slug(author_id)
    if not adir.exists():
        raise LedgerError(f"prepared corpus missing for {mode.value}/{author_id}; run prepare first")
    meta = json.loads((adir / "plans.json").read_text())
    books = []
    for bi, title in enumerate(meta["titles"]):
        ids = np.load(adir / f"book_{bi:03d}.npy")
        books.append(Book(author_id=author_id, title=title, token_ids=ids))
    return AuthorCorpus(author_id=author_id, books=books), meta["plans"]


def plan_from_json(seed: int, d: dict) -> SamplingPlan:
    return SamplingPlan(seed=seed, held_out_book=d["held_out"], budget=d["budget"],
                        per_book=[tuple(t) for t in d["per_book"]])


# -- ledger ----------------------------------------------------------------


class RunLedger:
    """Forward-only grid state, one JSON file, safe to re-load after a crash."""

    STATES = ("pending", "trained", "evaluated", "failed")

    def __init__(self, path: Path, cells: dict[str, dict]):
        self.path = path
        self.cells = cells

    @staticmethod
    def key(mode: AblationMode, author_id: str, seed: int) -> str:
        return f"{mode.value}/{_slug(author_id)}/{seed}"

    @classmethod
    def open(cls, manifest: ExperimentManifest) -> "RunLedger":
        path = _out_dir(manifest) / "ledger.json"
        if path.exists():
            data = json.loads(path.read_text())
            if data.get("manifest_checksum") not in (None, manifest.checksum):
                log.warning("ledger was created from a different manifest")
            cells = data["cells"]
        else:
            cells = {}
        for mode in manifest.modes:
            for a in manifest.authors:
                for s in manifest.seeds:
                    cells.setdefault(cls.key(mode, a.author_id, s), {"status": "pending"})
        ledger = cls(path, cells)
        ledger.manifest_checksum = manifest.checksum
        return ledger

    def save(self) -> None:
        _dump_json({"cells": self.cells, "manifest_checksum": getattr(self, "manifest_checksum", None),
                    "version": __version__}, self.path)

    def set(self, key: str, status: str, force: bool = False, **info) -> None:
        if status not in self.STATES:
            raise LedgerError(f"unknown status {status!r}")
        cur = self.cells.get(key, {"status": "pending"})
        order = {s: i for i, s in enumerate(self.STATES)}
        if not force and status != "failed" and order[status] < order.get(cur["status"], 0):
            raise LedgerError(f"cell {key}: cannot move {cur['status']} -> {status} without force")
        entry = {"status": status}
        entry.update(info)
        self.cells[key] = entry
        self.save()


def parse_filter(expr: str | None) -> dict:
    """"author=baum,seed=0,mode=intact" -> {"author": "baum", ...}"""
    out: dict[str, str] = {}
    if expr:
        for part in expr.split(","):
            if not part:
                continue
            k, _, v = part.partition("=")
            if k not in ("author", "seed", "mode"):
                raise ConfigError(f"unknown filter key {k!r}")
            out[k] = v
    return out


def _grid(manifest: ExperimentManifest, flt: dict):
    for mode in manifest.modes:
        if "mode" in flt and mode.value != flt["mode"]:
            continue
        for a in manifest.authors:
            if "author" in flt and a.author_id != flt["author"]:
                continue
            for s in manifest.seeds:
                if "seed" in flt and str(s) != flt["seed"]:
                    continue
                yield mode, a.author_id, s


# -- training --------------------------------------------------------------


def _cell_dir(manifest: ExperimentManifest, mode: AblationMode, author_id: str, seed: int) -> Path:
    return _out_dir(manifest) / "runs" / mode.value / _slug(author_id) / f"seed_{seed}"


def _write_epoch_records(path: Path, records, author_ids: list[str]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss"] + [f"loss_vs_{a}" for a in author_ids])
        for rec in records:
            row = [rec.epoch, f"{rec.train_loss:.6f}"]
            for a in author_ids:
                v = rec.heldout_losses.get(a)
                row.append("" if v is None else f"{v:.6f}")
            w.writerow(row)


def train_cell(manifest: ExperimentManifest, mode: AblationMode, author_id: str,
               seed: int) -> dict:
    """Train one grid cell to threshold and persist checkpoint + records."""
    vocab = load_prepared_vocab(manifest)
    corpus, plans = load_prepared_corpus(manifest, mode, author_id)
    plan = plan_from_json(seed, plans[str(seed)])
    seq = build_training_sequence(plan, corpus)

    cfg = train_config(manifest)
    mcfg = model_config(manifest, vocab.size)
    model = init_model(mcfg, seed)

    heldout = {}
    author_ids = [a.author_id for a in manifest.authors]
    for ai, other_id in enumerate(author_ids):
        ocorpus, oplans = load_prepared_corpus(manifest, mode, other_id)
        held = oplans[str(seed)]["held_out"]
        try:
            heldout[other_id] = chunk_heldout(ocorpus.books[held].token_ids,
                                              mcfg.context_window)
        except Exception as e:  # surfaced in records as a missing column
            log.warning("held-out text for %s unusable: %s", other_id, e)

    def eval_hook(m, epoch):
        return {a: eval_loss(m, chunks)[1] for a, chunks in heldout.items()}

    result = train_until_threshold(model, seq.token_ids, cfg, seed=seed, eval_hook=eval_hook)

    cdir = _cell_dir(manifest, mode, author_id, seed)
    cdir.mkdir(parents=True, exist_ok=True)
    opt_state = {}  # final optimizer state is not needed to evaluate; keep checkpoints lean
    arrays = {f"param/{k}": p.data for k, p in model.parameters().items()}
    arrays.update(opt_state)
    meta = {"author": author_id, "mode": mode.value, "seed": seed,
            "model_config": mcfg.to_dict(), "train_config": cfg.to_dict(),
            "epochs": result.epochs, "converged": result.converged,
            "final_train_loss": result.final_train_loss,
            "param_count": param_count(mcfg),
            "held_out_book": plan.held_out_book,
            "blas_threads": os.environ.get("OMP_NUM_THREADS", "unset"),
            "manifest_checksum": manifest.checksum, "version": __version__}
    save_checkpoint(cdir / "checkpoint.bin", arrays, meta=meta)
    _write_epoch_records(cdir / "epoch_records.csv", result.records, author_ids)
    _dump_json(meta, cdir / "meta.json")
    return {"epochs": result.epochs, "converged": result.converged,
            "final_train_loss": result.final_train_loss,
            "checkpoint": str(cdir / "checkpoint.bin")}


def _train_cell_worker(manifest_path: str, mode_value: str, author_id: str, seed: int) -> tuple[str, dict]:
    manifest = load_manifest(manifest_path)
    mode = AblationMode.parse(mode_value)
    info = train_cell(manifest, mode, author_id, seed)
    return RunLedger.key(mode, author_id, seed), info


def cmd_train(manifest: ExperimentManifest, filter_expr: str | None = None,
              jobs: int | None = None, force: bool = False) -> RunLedger:
    """Train every pending cell in the (mode, author, seed) grid; completed
    cells are skipped so interrupted runs resume where they left off."""
    ledger = RunLedger.open(manifest)
    flt = parse_filter(filter_expr)
    todo = []
    for mode, author_id, seed in _grid(manifest, flt):
        key = RunLedger.key(mode, author_id, seed)
        status = ledger.cells[key]["status"]
        if status in ("trained", "evaluated") and not force:
            log.info("skip %s (already %s)", key, status)
            continue
        todo.append((mode, author_id, seed))
    jobs = jobs or manifest.jobs
    if jobs <= 1:
        for mode, author_id, seed in todo:
            key = RunLedger.key(mode, author_id, seed)
            try:
                info = train_cell(manifest, mode, author_id, seed)
                ledger.set(key, "trained", force=force, **info)
            except Exception as e:
                log.exception("cell %s failed", key)
                ledger.set(key, "failed", error=str(e))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = {pool.submit(_train_cell_worker, str(manifest.path), mode.value,
                                author_id, seed): (mode, author_id, seed)
                    for mode, author_id, seed in todo}
            for fut in as_completed(futs):
                mode, author_id, seed = futs[fut]
                key = RunLedger.key(mode, author_id, seed)
                try:
                    _, info = fut.result()
                    ledger.set(key, "trained", force=force, **info)
                except Exception as e:
                    log.exception("cell %s failed", key)
                    ledger.set(key, "failed", error=str(e))
    return ledger


def load_trained_model(manifest: ExperimentManifest, mode: AblationMode,
                       author_id: str, seed: int) -> LanguageModel:
    cdir = _cell_dir(manifest, mode, author_id, seed)
    arrays, meta = load_checkpoint(cdir / "checkpoint.bin")
    mcfg = ModelConfig.from_dict(meta["model_config"])
    model = init_model(mcfg, seed)
    for k, p in model.parameters().items():
        p.data = arrays[f"param/{k}"].astype(p.data.dtype)
    return model


# -- evaluation ------------------------------------------------------------


def _csv_writer(path: Path, manifest: ExperimentManifest, header: list[str]):
    path.parent.mkdir(parents=True, exist_ok=True)
    f = open(path, "w", newline="")
    f.write(f"# manifest_checksum={manifest.checksum} version={__version__}\n")
    w = csv.writer(f)
    w.writerow(header)
    return f, w


def cmd_evaluate(manifest: ExperimentManifest) -> dict:
    """Build per-mode loss matrices and derive every analysis CSV."""
    out = _out_dir(manifest)
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    ledger = RunLedger.open(manifest)
    author_ids = [a.author_id for a in manifest.authors]
    summary: dict = {"modes": {}, "manifest_checksum": manifest.checksum,
                     "version": __version__}

    f_lm, w_lm = _csv_writer(reports / "loss_matrix.csv", manifest,
                             ["mode", "seed", "eval_author", "model_author", "mean_loss", "n_chunks"])
    f_t1, w_t1 = _csv_writer(reports / "table1.csv", manifest,
                             ["mode", "model", "t_stat", "df", "p_value"])
    f_tc, w_tc = _csv_writer(reports / "t_curves.csv", manifest,
                             ["mode", "author", "epoch", "t", "threshold_t"])
    f_d, w_d = _csv_writer(reports / "distances.csv", manifest,
                           ["mode", "author_i", "author_j", "distance"])
    f_m, w_m = _csv_writer(reports / "mds.csv", manifest,
                           ["mode", "author", "x", "y", "z", "stress"])
    f_a, w_a = _csv_writer(reports / "attribution_report.csv", manifest,
                           ["mode", "name", "winner", "ambiguous", "candidate", "mean_loss"])

    try:
        for mode in manifest.modes:
            mode_summary = _evaluate_mode(manifest, mode, ledger, author_ids,
                                          w_lm, w_t1, w_tc, w_d, w_m, w_a)
            summary["modes"][mode.value] = mode_summary
    finally:
        for f in (f_lm, f_t1, f_tc, f_d, f_m, f_a):
            f.close()
    _dump_json(summary, reports / "summary.json")
    return summary


def _evaluate_mode(manifest, mode, ledger, author_ids, w_lm, w_t1, w_tc, w_d, w_m, w_a) -> dict:
    missing = []
    models = {}
    for a in author_ids:
        for s in manifest.seeds:
            key = RunLedger.key(mode, a, s)
            if ledger.cells.get(key, {}).get("status") not in ("trained", "evaluated"):
                missing.append(key)
            else:
                models[(a, s)] = load_trained_model(manifest, mode, a, s)
    if missing:
        log.warning("%s: %d cells untrained; partial outputs with gaps", mode.value, len(missing))
        return {"incomplete": True, "missing_cells": missing}

    mcfg = model_config(manifest, models[(author_ids[0], manifest.seeds[0])].config.vocab_size)
    heldout = {}
    for a in author_ids:
        corpus, plans = load_prepared_corpus(manifest, mode, a)
        for s in manifest.seeds:
            held = plans[str(s)]["held_out"]
            heldout[(a, s)] = corpus.books[held].token_ids

    lm = build_loss_matrix(models, heldout, author_ids, manifest.seeds,
                           chunk_len=mcfg.context_window)
    n_chunks = {(a, s): heldout[(a, s)].size // mcfg.context_window
                for a in author_ids for s in manifest.seeds}
    for si, s in enumerate(manifest.seeds):
        for i, ea in enumerate(author_ids):
            for j, ma in enumerate(author_ids):
                w_lm.writerow([mode.value, s, ea, ma,
                               f"{lm.entries[i, j, si]:.6f}", n_chunks[(ea, s)]])

    # Same-vs-other separation per model (pooled other-author losses).
    for j, ma in enumerate(author_ids):
        same = lm.entries[j, j, :]
        other = np.concatenate([lm.entries[i, j, :] for i in range(len(author_ids)) if i != j])
        try:
            r = welch_t(other, same)
            w_t1.writerow([mode.value, ma, f"{r.t:.4f}", f"{r.df:.4f}", f"{r.p:.4e}"])
        except DegenerateSampleError:
            w_t1.writerow([mode.value, ma, "nan", "nan", "nan"])

    _write_t_curves(manifest, mode, author_ids, w_tc)

    mean_matrix = lm.mean_over_seeds()
    norm = normalize_loss(mean_matrix)
    dist = stylometric_distance(norm)
    for i, ai in enumerate(author_ids):
        for j, aj in enumerate(author_ids):
            w_d.writerow([mode.value, ai, aj, f"{dist[i, j]:.6f}"])

    if manifest.mds_input == "correlation" and len(author_ids) >= 4:
        mds_in = row_corr_dissimilarity(mean_matrix)
    else:
        mds_in = dist
    emb = mds_embed(np.maximum(mds_in, 0.0), dim=3)
    for i, a in enumerate(author_ids):
        x, y, z = (list(emb.coords[i]) + [0.0, 0.0, 0.0])[:3]
        w_m.writerow([mode.value, a, f"{x:.6f}", f"{y:.6f}", f"{z:.6f}", f"{emb.stress:.6e}"])

    correct = ambiguous = 0
    for si in range(len(manifest.seeds)):
        for i in range(len(author_ids)):
            row = lm.entries[i, :, si]
            winners = np.flatnonzero(row == row.min())
            if winners.size > 1:
                ambiguous += 1
            elif winners[0] == i:
                correct += 1
    total = len(manifest.seeds) * len(author_ids)
    accuracy = correct / total

    attribution = _run_special_evaluations(manifest, mode, models, author_ids, mcfg, w_a)

    # Final-epoch aggregate: per-seed mean (over models) of other-minus-same
    # loss gaps, tested against zero.
    gaps = []
    for si in range(len(manifest.seeds)):
        per_model = []
        for j in range(len(author_ids)):
            others = [lm.entries[i, j, si] for i in range(len(author_ids)) if i != j]
            per_model.append(float(np.mean(others) - lm.entries[j, j, si]))
        gaps.append(float(np.mean(per_model)))
    agg = None
    if len(gaps) >= 2:
        try:
            r = one_sample_t(gaps, 0.0)
            agg = {"t": r.t, "df": r.df, "p": r.p}
        except DegenerateSampleError:
            agg = None

    for a in author_ids:
        for s in manifest.seeds:
            ledger.set(RunLedger.key(mode, a, s), "evaluated",
                       **{k: v for k, v in ledger.cells[RunLedger.key(mode, a, s)].items()
                          if k != "status"})
    return {"accuracy": accuracy, "ambiguous": ambiguous, "n_cases": total,
            "aggregate_gap_test": agg, "attribution": attribution,
            "incomplete": False}


def _write_t_curves(manifest, mode, author_ids, w_tc) -> None:
    """Per-epoch Welch t of same vs other held-out losses, from epoch records."""
    per_run: dict[tuple[str, int], dict[int, dict[str, float]]] = {}
    for a in author_ids:
        for s in manifest.seeds:
            path = _cell_dir(manifest, mode, a, s) / "epoch_records.csv"
            if not path.exists():
                continue
            rows = {}
            with open(path) as f:
                reader = csv.DictReader(f)
                for row in reader:
                    losses = {}
                    for col, v in row.items():
                        if col.startswith("loss_vs_") and v:
                            losses[col[len("loss_vs_"):]] = float(v)
                    if losses:
                        rows[int(row["epoch"])] = losses
            per_run[(a, s)] = rows
    if not per_run:
        return
    max_epoch = max((max(r) for r in per_run.values() if r), default=0)
    for model_author in author_ids:
        same_by_epoch, other_by_epoch = [], []
        for e in range(1, max_epoch + 1):
            same, other = [], []
            for s in manifest.seeds:
                rec = per_run.get((model_author, s), {}).get(e)
                if not rec:
                    continue
                for a, v in rec.items():
                    (same if a == model_author else other).append(v)
            same_by_epoch.append(same)
            other_by_epoch.append(other)
        curve = t_curve(same_by_epoch, other_by_epoch)
        for e, t, th in zip(curve.epochs, curve.t_values, curve.thresholds):
            if not np.isnan(t):
                w_tc.writerow([mode.value, model_author, e + 1, f"{t:.4f}", f"{th:.4f}"])


def _run_special_evaluations(manifest, mode, models, author_ids, mcfg, w_a) -> list[dict]:
    results = []
    prep = _out_dir(manifest) / "prepared" / mode.value / "_special"
    for sp in manifest.special_evaluations:
        ids = np.load(prep / f"{_slug(sp.name)}.npy")
        chunks = chunk_heldout(ids, mcfg.context_window)
        means = {}
        for cand in sp.candidates:
            if cand not in author_ids:
                raise ConfigError(f"special evaluation {sp.name!r}: unknown candidate {cand!r}")
            per_seed = [eval_loss(models[(cand, s)], chunks)[1] for s in manifest.seeds]
            means[cand] = float(np.mean(per_seed))
        best = min(means.values())
        winners = sorted(c for c, v in means.items() if v == best)
        for cand in sp.candidates:
            w_a.writerow([mode.value, sp.name, "|".join(winners),
                          int(len(winners) > 1), cand, f"{means[cand]:.6f}"])
        results.append({"name": sp.name, "winners": winners, "means": means,
                        "true_author": sp.true_author})
    return results
