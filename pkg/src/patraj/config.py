"""Experiment configuration: INI files with one section per module.

Defaults reproduce the reference hyperparameters; everything in a
file or passed as an override replaces them.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .admission_model import DIAGNOSIS_CCS, DIAGNOSIS_ICD9, READMISSION, TASKS, FeatureConfig
from .errors import ConfigError
from .sequence_model import DENSE, HIDDEN_SIZES, WINDOW_SIZES, SequenceModelConfig
from .training import TrainHyperparams

ADMISSION = "admission"
SEQUENCE = "sequence"

DEFAULTS = {
    "experiment": {
        "task": READMISSION,
        "architecture": ADMISSION,
        "seed": "0",
        "fold_seed": "0",
        "n_folds": "10",
        # comma-separated fold iterations to run, or "all"
        "folds_to_run": "all",
        "leaky_admission_folds": "false",
    },
    "paths": {},
    "codes": {
        "diag_space": "ccs",
        "proc_space": "ccs",
        # "data" builds vocabularies from observed codes, "universe" from the full ICD-9 list
        "vocabulary": "data",
    },
    "features": {
        "text": "false",
        "duration": "false",
        "days_since_prior": "false",
        "diag": "true",
        "proc": "false",
        "med": "false",
        "temporal_hidden": "50",
    },
    "admission_train": {
        "batch_size": "64",
        "epochs": "100",
        "learning_rate": "0.001",
        "dropout": "0.1",
        "early_stop": "true",
        "patience_steps": "200",
        "lookahead": "false",
        "subsample": "auto",
    },
    "sequence": {
        "input_mode": DENSE,
        "cell_type": "GRU",
        "hidden_size": "255",
        "num_layers": "1",
        "bidirectional": "false",
        "window_k": "3",
        "trainable_encoder": "false",
    },
    "sequence_train": {
        "batch_size": "64",
        "epochs": "200",
        "learning_rate": "0.001",
        "dropout": "0.2",
        "early_stop": "true",
        "patience_steps": "200",
        "lookahead": "false",
    },
    "synth": {
        # "custom" uses the keys below; "mimic_shaped" keeps the MIMIC-III patient ratio
        "preset": "custom",
        "n_patients": "2000",
        "p_single_visit": "0.815",
        "n_diag_codes": "255",
        "persistence_prob": "0.0",
        "zipf_exponent": "0.5",
        "readmission_rate": "0.31",
        "embedding_noise": "0.5",
        "notes": "true",
        # "a:b:c:prob" entries separated by commas (concept indices)
        "progression_rules": "",
    },
}

PATH_KEYS = (
    "admissions", "diagnoses", "procedures", "prescriptions", "chunk_manifest", "chunk_embeddings",
    "diag_ccs", "proc_ccs", "ndc_cui", "diag_embeddings", "proc_embeddings", "med_embeddings",
    "dataset", "representations", "admission_checkpoint",
)

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _bool(value: str, key: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None


def _float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


@dataclass
class ExperimentConfig:
    sections: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def get(self, section, key) -> str:
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"missing config value [{section}] {key}") from None

    # -- typed views ---------------------------------------------------------

    @property
    def task(self) -> str:
        return self.get("experiment", "task")

    @property
    def architecture(self) -> str:
        return self.get("experiment", "architecture")

    @property
    def seed(self) -> int:
        return _int(self.get("experiment", "seed"), "seed")

    @property
    def fold_seed(self) -> int:
        return _int(self.get("experiment", "fold_seed"), "fold_seed")

    @property
    def n_folds(self) -> int:
        return _int(self.get("experiment", "n_folds"), "n_folds")

    @property
    def leaky_admission_folds(self) -> bool:
        return _bool(self.get("experiment", "leaky_admission_folds"), "leaky_admission_folds")

    def folds_to_run(self) -> list[int]:
        raw = self.get("experiment", "folds_to_run").strip().lower()
        if raw == "all":
            return list(range(self.n_folds))
        folds = [_int(x, "folds_to_run") for x in raw.split(",") if x.strip()]
        if any(not 0 <= f < self.n_folds for f in folds):
            raise ConfigError(f"folds_to_run entries must be in [0, {self.n_folds})")
        return folds

    @property
    def diag_space(self) -> str:
        return self.get("codes", "diag_space")

    @property
    def proc_space(self) -> str:
        return self.get("codes", "proc_space")

    def feature_config(self) -> FeatureConfig:
        s = self.sections["features"]
        flags = {k: _bool(s[k], k) for k in ("text", "duration", "days_since_prior", "diag",
                                              "proc", "med")}
        return FeatureConfig(**flags, code_space=self.diag_space,
                             temporal_hidden=_int(s["temporal_hidden"], "temporal_hidden"))

    def _hparams(self, section, seed) -> TrainHyperparams:
        s = self.sections[section]
        return TrainHyperparams(
            batch_size=_int(s["batch_size"], "batch_size"),
            epochs=_int(s["epochs"], "epochs"),
            learning_rate=_float(s["learning_rate"], "learning_rate"),
            dropout=_float(s["dropout"], "dropout"),
            early_stop=_bool(s["early_stop"], "early_stop"),
            patience_steps=_int(s["patience_steps"], "patience_steps"),
            lookahead=_bool(s["lookahead"], "lookahead"),
            seed=seed,
        )

    def admission_hparams(self) -> TrainHyperparams:
        return self._hparams("admission_train", self.seed)

    def sequence_hparams(self) -> TrainHyperparams:
        return self._hparams("sequence_train", self.seed)

    def subsample(self) -> bool:
        raw = self.sections["admission_train"]["subsample"].strip().lower()
        if raw == "auto":
            return self.task == READMISSION
        return _bool(raw, "subsample")

    def sequence_config(self, n_classes: int) -> SequenceModelConfig:
        s = self.sections["sequence"]
        return SequenceModelConfig(
            input_mode=s["input_mode"],
            cell_type=s["cell_type"].upper(),
            hidden_size=_int(s["hidden_size"], "hidden_size"),
            num_layers=_int(s["num_layers"], "num_layers"),
            bidirectional=_bool(s["bidirectional"], "bidirectional"),
            window_k=_int(s["window_k"], "window_k"),
            dropout=_float(self.sections["sequence_train"]["dropout"], "dropout"),
            n_classes=n_classes,
            trainable_encoder=_bool(s["trainable_encoder"], "trainable_encoder"),
        )

    def path(self, key, required=True) -> Optional[Path]:
        raw = self.sections["paths"].get(key)
        if not raw:
            if required:
                raise ConfigError(f"missing path [paths] {key}")
            return None
        p = Path(raw)
        return p if p.is_absolute() else self.base_dir / p

    # -- validation / identity -----------------------------------------------

    def validate(self, required_paths=()) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.architecture not in (ADMISSION, SEQUENCE):
            raise ConfigError("architecture must be 'admission' or 'sequence'")
        for space_key in ("diag_space", "proc_space"):
            if self.get("codes", space_key) not in ("icd9_parent", "ccs"):
                raise ConfigError(f"[codes] {space_key} must be 'icd9_parent' or 'ccs'")
        if self.task == DIAGNOSIS_ICD9 and self.diag_space != "icd9_parent":
            raise ConfigError("diagnosis_icd9 needs [codes] diag_space = icd9_parent")
        if self.task == DIAGNOSIS_CCS and self.diag_space != "ccs":
            raise ConfigError("diagnosis_ccs needs [codes] diag_space = ccs")
        self.feature_config()
        self.admission_hparams()
        self.sequence_hparams()
        seq = self.sequence_config(1)
        if seq.window_k < 1:
            raise ConfigError("window_k must be positive")
        self.folds_to_run()
        for key in required_paths:
            p = self.path(key)
            if not p.exists():
                raise ConfigError(f"[paths] {key}: {p} does not exist")
        return self

    def canonical(self) -> dict:
        """Config content that identifies a model; paths are excluded."""
        return {s: dict(sorted(v.items())) for s, v in sorted(self.sections.items()) if s != "paths"}

    def fingerprint(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def write(self, path) -> None:
        parser = configparser.ConfigParser()
        for section, values in self.sections.items():
            parser[section] = values
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)


def default_config(base_dir=None) -> ExperimentConfig:
    return ExperimentConfig({s: dict(v) for s, v in DEFAULTS.items()},
                            Path(base_dir) if base_dir else Path.cwd())


def load_config(path=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Read an INI config on top of the defaults.

    ``overrides`` maps ``"section.key"`` to a value and is applied last.
    """
    cfg = default_config(Path(path).resolve().parent if path else None)
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser[section].items():
                if section == "paths":
                    if key not in PATH_KEYS:
                        raise ConfigError(f"unknown path key {key!r}")
                elif key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                cfg.sections[section][key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in cfg.sections:
            raise ConfigError(f"unknown config section {section!r}")
        cfg.sections[section][key] = str(value)
    return cfg


def synth_spec(cfg: ExperimentConfig):
    from .synth import ProgressionRule, SyntheticCohortSpec

    s = cfg.sections["synth"]
    rules = []
    for item in s["progression_rules"].split(","):
        if item.strip():
            parts = item.strip().split(":")
            if len(parts) != 4:
                raise ConfigError(f"progression rule {item!r} must be a:b:c:prob")
            a, b, c = (_int(x, "progression_rules") for x in parts[:3])
            rules.append(ProgressionRule(a, b, c, _float(parts[3], "progression_rules")))
    kw = dict(
        persistence_prob=_float(s["persistence_prob"], "persistence_prob"),
        n_diag_codes=_int(s["n_diag_codes"], "n_diag_codes"),
        zipf_exponent=_float(s["zipf_exponent"], "zipf_exponent"),
        embedding_noise=_float(s["embedding_noise"], "embedding_noise"),
        progression_rules=tuple(rules),
        seed=cfg.seed,
    )
    if not _bool(s["notes"], "notes"):
        kw["chunks_per_admission"] = (0, 0)
    n = _int(s["n_patients"], "n_patients")
    preset = s["preset"].strip().lower()
    if preset == "mimic_shaped":
        return SyntheticCohortSpec.mimic_shaped(n, **kw)
    if preset != "custom":
        raise ConfigError("[synth] preset must be 'custom' or 'mimic_shaped'")
    return SyntheticCohortSpec(n_patients=n, p_single_visit=_float(s["p_single_visit"], "p_single_visit"),
                               readmission_rate=_float(s["readmission_rate"], "readmission_rate"), **kw)


def reference_defaults_snapshot() -> dict:
    """Reference hyperparameter values the defaults must match."""
    return {
        "admission": {"batch_size": 64, "epochs": 100, "learning_rate": 0.001, "dropout": 0.1,
                      "temporal_hidden": 50, "patience_steps": 200, "early_stop": True,
                      "text_dim": 768, "code_dim": 768, "activation": "mish",
                      "subsample": {READMISSION: True, DIAGNOSIS_CCS: False}},
        "sequence": {"batch_size": 64, "epochs": 200, "learning_rate": 0.001, "dropout": 0.2,
                     "patience_steps": 200, "early_stop": True, "window_sizes": WINDOW_SIZES,
                     "hidden_sizes": HIDDEN_SIZES, "num_layers": (1, 2, 3),
                     "cell_types": ("GRU", "LSTM")},
    }
