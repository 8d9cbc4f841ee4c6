"""Clinical code handling: ICD-9 parent rollup, crosswalk mapping, vocabularies."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

from .errors import CodeParseError, DataIntegrityError, MappingMiss

log = logging.getLogger(__name__)

PAD = "<PAD>"
PAD_INDEX = 0
DIAG_PREFIX = "D_"
PROC_PREFIX = "P_"


class CodeSystem(str, Enum):
    ICD9_DIAG = "ICD9_DIAG"
    ICD9_PROC = "ICD9_PROC"
    NDC = "NDC"
    ICD9_PARENT = "ICD9_PARENT"
    CCS_DIAG = "CCS_DIAG"
    CCS_PROC = "CCS_PROC"
    CUI = "CUI"


@dataclass(frozen=True)
class RawCode:
    system: CodeSystem
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise CodeParseError(self.text, "empty code")


@dataclass(frozen=True)
class RolledCode:
    system: CodeSystem
    text: str

    def __post_init__(self):
        if not self.text:
            raise CodeParseError(self.text, "empty code")


def _normalise(text: str) -> str:
    return text.strip().replace(".", "").upper()


def rollup_icd9(code: RawCode) -> RolledCode:
    """Reduce a full ICD-9 code to its parent category.

    Diagnoses keep the three-digit, E+3 or V+2 root; procedures keep their
    first two digits.  The result is prefixed with ``D_`` or ``P_``.
    """
    text = _normalise(code.text)
    if code.system is CodeSystem.ICD9_DIAG:
        return RolledCode(CodeSystem.ICD9_PARENT, DIAG_PREFIX + _diag_root(code.text, text))
    if code.system is CodeSystem.ICD9_PROC:
        if len(text) < 2:
            raise CodeParseError(code.text, "procedure code shorter than 2 digits")
        if not text.isdigit():
            raise CodeParseError(code.text, "procedure code must be all digits")
        return RolledCode(CodeSystem.ICD9_PARENT, PROC_PREFIX + text[:2])
    raise ValueError(f"rollup_icd9 needs an ICD-9 code, got system {code.system.value}")


def _diag_root(original: str, text: str) -> str:
    if not text:
        raise CodeParseError(original, "empty code")
    lead = text[0]
    if lead == "E":
        width = 3
    elif lead == "V":
        width = 2
    elif lead.isdigit():
        if len(text) < 3:
            raise CodeParseError(original, "diagnosis code shorter than 3 digits")
        if not text.isdigit():
            raise CodeParseError(original, "non-digit character in diagnosis code")
        return text[:3]
    else:
        raise CodeParseError(original, f"unexpected leading character {lead!r}")
    rest = text[1:]
    if len(rest) < width:
        raise CodeParseError(original, f"{lead} code needs at least {width} digits after {lead}")
    if not rest.isdigit():
        raise CodeParseError(original, "non-digit character in diagnosis code")
    return lead + rest[:width]


def strip_prefix(text: str) -> str:
    for prefix in (DIAG_PREFIX, PROC_PREFIX):
        if text.startswith(prefix):
            return text[len(prefix):]
    return text


@dataclass(frozen=True)
class MappingTable:
    """Many-to-one crosswalk from one code system to another."""

    source_system: CodeSystem
    target_system: CodeSystem
    rows: Mapping[str, str]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rows", MappingProxyType(dict(self.rows)))

    def __len__(self):
        return len(self.rows)

    def __contains__(self, text):
        return text in self.rows

    @classmethod
    def load(cls, path, source_system=None, target_system=None) -> "MappingTable":
        """Read a ``source<TAB>target`` crosswalk.

        A leading ``# source_system=... target_system=...`` comment, as written
        by :meth:`save`, supplies the systems when they are not given.
        """
        path = Path(path)
        rows: dict[str, str] = {}
        header: dict[str, str] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n").rstrip("\r")
                if not line.strip():
                    continue
                if line.startswith("#"):
                    for token in line[1:].split():
                        if "=" in token:
                            key, value = token.split("=", 1)
                            header[key] = value
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise DataIntegrityError(f"{path}:{lineno}: expected 'source<TAB>target'")
                src, dst = parts
                if src in rows and rows[src] != dst:
                    raise DataIntegrityError(
                        f"{path}:{lineno}: {src!r} mapped to both {rows[src]!r} and {dst!r}"
                    )
                rows[src] = dst
        source_system = source_system or header.get("source_system")
        target_system = target_system or header.get("target_system")
        if source_system is None or target_system is None:
            raise DataIntegrityError(f"{path}: code systems not given and no header found")
        return cls(CodeSystem(source_system), CodeSystem(target_system), rows, name=path.name)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                f"# source_system={self.source_system.value} "
                f"target_system={self.target_system.value}\n"
            )
            for src in sorted(self.rows):
                fh.write(f"{src}\t{self.rows[src]}\n")


def map_code(code: RawCode | RolledCode, table: MappingTable) -> RolledCode:
    if code.system is not table.source_system:
        raise ValueError(
            f"table maps {table.source_system.value}, code is {code.system.value}"
        )
    key = code.text if isinstance(code, RolledCode) else code.text.strip()
    try:
        return RolledCode(table.target_system, table.rows[key])
    except KeyError:
        raise MappingMiss(code.text, table.name) from None


@dataclass(frozen=True)
class CodeVocabulary:
    """Sorted closed code set; index 0 is reserved for padding."""

    system: CodeSystem
    entries: tuple[str, ...]
    index_of: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        if len(set(entries)) != len(entries):
            raise DataIntegrityError("duplicate codes in vocabulary")
        if PAD in entries:
            raise DataIntegrityError(f"{PAD} is not a valid code")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(
            self, "index_of", MappingProxyType({c: i + 1 for i, c in enumerate(entries)})
        )

    pad_index = PAD_INDEX

    def __len__(self):
        # includes the padding slot
        return len(self.entries) + 1

    @property
    def n_codes(self) -> int:
        return len(self.entries)

    def __contains__(self, text):
        return text in self.index_of

    def index(self, text: str) -> int:
        try:
            return self.index_of[text]
        except KeyError:
            raise MappingMiss(text, f"{self.system.value} vocabulary") from None

    def code_at(self, index: int) -> str:
        if index == PAD_INDEX:
            return PAD
        return self.entries[index - 1]

    def indices(self, texts: Iterable[str]) -> tuple[list[int], int]:
        """Indices of known codes plus the number of unknown ones dropped."""
        out, missed = [], 0
        for text in texts:
            idx = self.index_of.get(text)
            if idx is None:
                missed += 1
            else:
                out.append(idx)
        return out, missed

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(PAD + "\n")
            for code in self.entries:
                fh.write(code + "\n")

    @classmethod
    def load(cls, path, system) -> "CodeVocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = [line.rstrip("\n") for line in fh]
        if not lines or lines[0] != PAD:
            raise DataIntegrityError(f"{path}: first line must be {PAD}")
        return cls(CodeSystem(system), tuple(lines[1:]))


def build_vocabulary(codes: Iterable[RolledCode], system: CodeSystem) -> CodeVocabulary:
    system = CodeSystem(system)
    seen: set[str] = set()
    for code in codes:
        if code.system is not system:
            raise ValueError(
                f"vocabulary for {system.value} got a {code.system.value} code ({code.text})"
            )
        seen.add(code.text)
    vocab = CodeVocabulary(system, tuple(sorted(seen)))
    log.debug("built %s vocabulary with %d codes", system.value, vocab.n_codes)
    return vocab


def code_frequencies(codes: Iterable[RolledCode]) -> Counter:
    return Counter(c.text for c in codes)


def _read_code_list(name: str) -> list[str]:
    text = resources.files("patraj.data").joinpath(name).read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]


def icd9_diagnosis_universe() -> list[str]:
    """All ICD-9-CM (v32) diagnosis codes."""
    return _read_code_list("icd9cm_v32_dx.txt")


def icd9_procedure_universe() -> list[str]:
    """All ICD-9-CM (v32) procedure codes."""
    return _read_code_list("icd9cm_v32_sg.txt")


def rollup_all(texts: Sequence[str], system: CodeSystem) -> list[RolledCode]:
    return [rollup_icd9(RawCode(system, t)) for t in texts]
