"""Experiment steps behind the CLI verbs.

Every step reads an :class:`ExperimentConfig` and writes its artifacts into
an output directory; none of them keeps state between calls.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


from .admission_model import (
    READMISSION,
    AdmissionModel,
    Featurizer,
    embedding_table,
    evaluate_admission_model,
    export_representations,
    make_samples,
    train_admission_model,
)
from .codes import CodeSystem, CodeVocabulary, MappingTable, build_vocabulary, RolledCode
from .codes import icd9_diagnosis_universe, icd9_procedure_universe, rollup_all
from .config import SEQUENCE, ExperimentConfig, synth_spec
from .errors import ConfigError, DataIntegrityError
from .folds import (
    FoldPlan,
    SplitSpec,
    build_windows,
    expand_and_shuffle,
    load_windows,
    save_windows,
    split_admissions,
    stratified_patient_folds,
    subsample_negatives,
)
from .ingest import (
    CodeSpace,
    PatientRecord,
    TemporalScaler,
    build_records,
    label_future_diagnoses,
    load_records,
    load_source_tables,
    read_chunk_manifest,
    save_records,
)
from .metrics import MetricsReport, write_reports
from .nn import load_checkpoint, save_checkpoint
from .sequence_model import (
    MULTI_HOT,
    WINDOW_SIZES,
    EncoderInputs,
    MultiHotInputs,
    RepresentationInputs,
    evaluate_sequence_model,
    train_sequence_model,
)
from .stores import ChunkEmbeddingStore, RepresentationStore, VectorStore

log = logging.getLogger(__name__)

CODE_KINDS = ("diag", "proc", "med")
REPORTS_FILE = "reports.jsonl"
HISTORY_FILE = "history.tsv"


# --------------------------------------------------------------------------
# prepare

def code_space(cfg: ExperimentConfig) -> CodeSpace:
    def table(key, src, tgt):
        p = cfg.path(key, required=False)
        return MappingTable.load(p, src, tgt) if p is not None else None

    return CodeSpace(
        diag=cfg.diag_space,
        proc=cfg.proc_space,
        diag_ccs=table("diag_ccs", CodeSystem.ICD9_DIAG, CodeSystem.CCS_DIAG),
        proc_ccs=table("proc_ccs", CodeSystem.ICD9_PROC, CodeSystem.CCS_PROC),
        ndc_cui=table("ndc_cui", CodeSystem.NDC, CodeSystem.CUI),
    )


def build_vocabularies(records, space: CodeSpace, mode: str = "data") -> dict:
    systems = {"diag": space.diag_system(), "proc": space.proc_system(), "med": space.med_system()}
    vocabs = {}
    for kind, system in systems.items():
        if mode == "universe" and system is CodeSystem.ICD9_PARENT:
            raw = icd9_diagnosis_universe() if kind == "diag" else icd9_procedure_universe()
            src = CodeSystem.ICD9_DIAG if kind == "diag" else CodeSystem.ICD9_PROC
            codes = rollup_all(raw, src)
        else:
            codes = [RolledCode(system, c) for r in records for a in r.admissions
                     for c in getattr(a, f"{kind}_codes")]
        vocabs[kind] = build_vocabulary(codes, system)
    return vocabs


def prepare(cfg: ExperimentConfig, out_dir) -> dict:
    """Ingest source tables, label, build vocabularies, folds and windows."""
    cfg.validate(required_paths=("admissions",))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = code_space(cfg)
    adm, diag, proc, rx = load_source_tables(
        cfg.path("admissions"), cfg.path("diagnoses", False), cfg.path("procedures", False),
        cfg.path("prescriptions", False))
    manifest_path = cfg.path("chunk_manifest", required=False)
    chunk_path = cfg.path("chunk_embeddings", required=False)
    manifest = read_chunk_manifest(manifest_path) if manifest_path else None
    chunk_store = ChunkEmbeddingStore.load(chunk_path) if chunk_path else None
    records, stats = build_records(adm, diag, proc, rx, space, manifest, chunk_store)

    mode = cfg.get("codes", "vocabulary")
    if mode not in ("data", "universe"):
        raise ConfigError("[codes] vocabulary must be 'data' or 'universe'")
    vocabs = build_vocabularies(records, space, mode)
    records = [label_future_diagnoses(r, vocabs["diag"]) for r in records]

    plan = stratified_patient_folds(records, lambda r: r.is_positive, cfg.n_folds, cfg.fold_seed)
    save_records(out / "dataset.jsonl", records)
    for kind, vocab in vocabs.items():
        vocab.save(out / f"vocab_{kind}.txt")
    plan.save(out / "folds.tsv")
    window_sizes = sorted(set(WINDOW_SIZES) | {cfg.sequence_config(1).window_k})
    for k in window_sizes:
        save_windows(out / f"windows_k{k}.jsonl", [w for r in records for w in build_windows(r, k)])
    summary = {
        "patients": stats.patients,
        "admissions": stats.admissions,
        "positive_patients": sum(r.is_positive for r in records),
        "dropped_codes": dict(sorted(stats.dropped.items())),
        "vocab_systems": {k: v.system.value for k, v in vocabs.items()},
        "vocab_sizes": {k: v.n_codes for k, v in vocabs.items()},
        "window_sizes": window_sizes,
        "fold_seed": cfg.fold_seed,
        "n_folds": cfg.n_folds,
    }
    (out / "prepare.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


@dataclass
class PreparedData:
    root: Path
    records: list[PatientRecord]
    vocabs: dict
    plan: FoldPlan
    meta: dict

    def windows(self, k: int):
        path = self.root / f"windows_k{k}.jsonl"
        if path.exists():
            return load_windows(path, self.records)
        return [w for r in self.records for w in build_windows(r, k)]


def load_prepared(cfg: ExperimentConfig) -> PreparedData:
    root = cfg.path("dataset")
    meta_path = root / "prepare.json"
    if not meta_path.exists():
        raise ConfigError(f"{root} is not a prepared dataset (run `prepare` first)")
    meta = json.loads(meta_path.read_text())
    vocabs = {k: CodeVocabulary.load(root / f"vocab_{k}.txt", meta["vocab_systems"][k])
              for k in CODE_KINDS}
    plan = FoldPlan.load(root / "folds.tsv")
    if plan.n_folds != cfg.n_folds:
        raise ConfigError(f"dataset has {plan.n_folds} folds, config asks for {cfg.n_folds}")
    return PreparedData(root, load_records(root / "dataset.jsonl"), vocabs, plan, meta)


# --------------------------------------------------------------------------
# shared helpers

def n_classes_for(task: str, vocabs: dict) -> int:
    return 1 if task == READMISSION else vocabs["diag"].n_codes


def code_tables(cfg: ExperimentConfig, feature_config, vocabs) -> dict:
    tables = {}
    for kind in CODE_KINDS:
        if getattr(feature_config, kind):
            store = VectorStore.load(cfg.path(f"{kind}_embeddings"))
            tables[kind] = embedding_table(vocabs[kind], store)
    return tables


def chunk_store_for(cfg: ExperimentConfig, feature_config) -> Optional[ChunkEmbeddingStore]:
    if not feature_config.text:
        return None
    return ChunkEmbeddingStore.load(cfg.path("chunk_embeddings"))


def _fold_folds(cfg, data: PreparedData):
    if cfg.leaky_admission_folds:
        from .folds import stratified_admission_folds

        adms = [a for r in data.records for a in r.admissions]
        return stratified_admission_folds(adms, cfg.n_folds, cfg.fold_seed)
    return expand_and_shuffle(data.plan, data.records, cfg.fold_seed)


def _write_history(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("fold\tepoch\ttrain_loss\tval_loss\n")
        for fold, epoch, tr, va in rows:
            fh.write(f"{fold}\t{epoch}\t{tr:.6f}\t{va:.6f}\n")


# --------------------------------------------------------------------------
# train (admission model)

def train(cfg: ExperimentConfig, out_dir) -> list[MetricsReport]:
    """Fold-rotation training; per-fold checkpoints and reports go to ``out_dir``."""
    cfg.validate(required_paths=("dataset",))
    if cfg.architecture == SEQUENCE:
        return sequence(cfg, out_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_prepared(cfg)
    fcfg = cfg.feature_config()
    hp = cfg.admission_hparams()
    n_classes = n_classes_for(cfg.task, data.vocabs)
    tables = code_tables(cfg, fcfg, data.vocabs)
    chunks = chunk_store_for(cfg, fcfg)
    folds = _fold_folds(cfg, data)
    fingerprint = cfg.fingerprint()
    reports, history = [], []
    for it in cfg.folds_to_run():
        split = SplitSpec.rotation(it, cfg.n_folds)
        train_adm, val_adm, test_adm = split_admissions(folds, split)
        if cfg.subsample():
            train_adm = subsample_negatives(train_adm, seed=cfg.seed + it)
            val_adm = subsample_negatives(val_adm, seed=cfg.seed + it + 1000)
            test_adm = subsample_negatives(test_adm, seed=cfg.seed + it + 2000)
        scaler = TemporalScaler().fit(train_adm)
        featurizer = Featurizer(fcfg, scaler, data.vocabs, chunks)
        samples = [make_samples(s, fcfg, cfg.task) for s in (train_adm, val_adm, test_adm)]
        log.info("fold %d: %d train / %d val / %d test samples", it, *map(len, samples))
        model, result = train_admission_model(samples[0], samples[1], featurizer, n_classes,
                                              tables, hp)
        report = evaluate_admission_model(model, featurizer, samples[2], cfg.task, it, fingerprint)
        report.loss = result.best_val_loss
        report.extra.update(epochs_run=result.epochs_run, steps=result.steps,
                            stopped_early=result.stopped_early)
        reports.append(report)
        history.extend((it, *row) for row in result.history)
        save_checkpoint(out / f"admission_fold{it}.npz",
                        {k: p.value for k, p in model.trainable_parameters().items()},
                        fingerprint, extra={"fold": it, "scaler": scaler.to_dict(),
                                            "n_classes": n_classes, "task": cfg.task})
    write_reports(out / REPORTS_FILE, reports)
    _write_history(out / HISTORY_FILE, history)
    cfg.write(out / "config.ini")
    return reports


def load_admission_model(cfg: ExperimentConfig, checkpoint, data: PreparedData):
    """Rebuild an admission model and featurizer from a checkpoint under ``cfg``."""
    params, _, meta = load_checkpoint(checkpoint, expected_fingerprint=cfg.fingerprint())
    fcfg = cfg.feature_config()
    extra = meta["extra"]
    model = AdmissionModel(fcfg, extra["n_classes"], code_tables(cfg, fcfg, data.vocabs),
                           dropout=cfg.admission_hparams().dropout)
    trainable = model.trainable_parameters()
    if set(trainable) != set(params):
        raise DataIntegrityError(f"{checkpoint}: parameter names do not match the model")
    for name, p in trainable.items():
        if p.value.shape != params[name].shape:
            raise DataIntegrityError(f"{checkpoint}: shape mismatch for {name}")
        p.value[...] = params[name]
    featurizer = Featurizer(fcfg, TemporalScaler.from_dict(extra["scaler"]), data.vocabs,
                            chunk_store_for(cfg, fcfg))
    return model, featurizer


def export_reprs(cfg: ExperimentConfig, checkpoint, out_path) -> RepresentationStore:
    """Representations of every admission in the prepared dataset."""
    cfg.validate(required_paths=("dataset",))
    data = load_prepared(cfg)
    model, featurizer = load_admission_model(cfg, checkpoint, data)
    admissions = [a for r in data.records for a in r.admissions]
    store = export_representations(model, featurizer, admissions)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    store.save(out_path)
    return store


# --------------------------------------------------------------------------
# sequence

def sequence(cfg: ExperimentConfig, out_dir, representations=None) -> list[MetricsReport]:
    cfg.validate(required_paths=("dataset",))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_prepared(cfg)
    n_classes = n_classes_for(cfg.task, data.vocabs)
    scfg = cfg.sequence_config(n_classes)
    hp = cfg.sequence_hparams()
    fingerprint = cfg.fingerprint()
    windows = data.windows(scfg.window_k)
    if cfg.task != READMISSION:
        windows = [w for w in windows if w.last.next_diag_multihot is not None]
    by_fold = [[] for _ in range(cfg.n_folds)]
    for w in windows:
        by_fold[data.plan.fold_of(w.patient_id)].append(w)

    encoder = None
    if scfg.input_mode == MULTI_HOT:
        inputs = MultiHotInputs(data.vocabs["diag"], cfg.task)
    elif scfg.trainable_encoder:
        model, featurizer = load_admission_model(cfg, cfg.path("admission_checkpoint"), data)
        encoder = model.encoder
        inputs = EncoderInputs(featurizer, cfg.task)
    else:
        path = Path(representations) if representations else cfg.path("representations")
        inputs = RepresentationInputs(RepresentationStore.load(path), cfg.task)
    if scfg.input_mode != MULTI_HOT and len(cfg.folds_to_run()) > 1:
        # one encoder serves every rotation, so its own training folds overlap some test folds
        log.warning("admission representations come from a single encoder; test folds it was "
                    "trained on are not held out")

    reports, history = [], []
    for it in cfg.folds_to_run():
        split = SplitSpec.rotation(it, cfg.n_folds)
        train_w = [w for f in split.train_folds for w in by_fold[f]]
        val_w, test_w = by_fold[split.val_fold], by_fold[split.test_fold]
        if not train_w or not test_w:
            raise DataIntegrityError(f"fold {it}: no windows to train or test on")
        model, result = train_sequence_model(train_w, val_w, inputs, scfg, hp, encoder=encoder)
        report = evaluate_sequence_model(model, inputs, test_w, cfg.task, it, fingerprint)
        report.loss = result.best_val_loss
        report.extra.update(epochs_run=result.epochs_run, steps=result.steps,
                            stopped_early=result.stopped_early, window_k=scfg.window_k,
                            input_mode=scfg.input_mode)
        reports.append(report)
        history.extend((it, *row) for row in result.history)
        save_checkpoint(out / f"sequence_fold{it}.npz",
                        {k: p.value for k, p in model.trainable_parameters().items()},
                        fingerprint, extra={"fold": it, "n_classes": n_classes, "task": cfg.task})
    write_reports(out / REPORTS_FILE, reports)
    _write_history(out / HISTORY_FILE, history)
    cfg.write(out / "config.ini")
    return reports


# --------------------------------------------------------------------------
# synth

def synth(cfg: ExperimentConfig, out_dir) -> dict:
    """Generate a synthetic cohort and a ready-to-use experiment config next to it."""
    cfg.validate()
    from .synth import generate_cohort

    out = Path(out_dir)
    cohort = generate_cohort(synth_spec(cfg))
    paths = cohort.write(out)
    exp = ExperimentConfig({s: dict(v) for s, v in cfg.sections.items()}, out)
    exp.sections["paths"] = {k: v.name for k, v in paths.items()}
    exp.sections["paths"]["dataset"] = "prepared"
    exp.write(out / "experiment.ini")
    log.info("synthetic cohort: %d admissions written to %s", len(cohort.admissions), out)
    return {k: str(v) for k, v in paths.items()}
