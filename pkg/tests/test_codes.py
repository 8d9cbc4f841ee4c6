import pytest

from patraj.codes import (
    PAD,
    CodeSystem,
    CodeVocabulary,
    MappingTable,
    RawCode,
    RolledCode,
    build_vocabulary,
    icd9_diagnosis_universe,
    icd9_procedure_universe,
    map_code,
    rollup_all,
    rollup_icd9,
    strip_prefix,
)
from patraj.errors import CodeParseError, DataIntegrityError, MappingMiss

DX, SG = CodeSystem.ICD9_DIAG, CodeSystem.ICD9_PROC


@pytest.mark.parametrize("raw, parent", [
    ("4019", "D_401"),
    ("401.9", "D_401"),
    ("25000", "D_250"),
    ("E8798", "D_E879"),
    ("e879.8", "D_E879"),
    ("V4581", "D_V45"),
    ("V10", "D_V10"),
    ("038", "D_038"),
])
def test_diagnosis_rollup(raw, parent):
    out = rollup_icd9(RawCode(DX, raw))
    assert out == RolledCode(CodeSystem.ICD9_PARENT, parent)


@pytest.mark.parametrize("raw, parent", [("3961", "P_39"), ("96.71", "P_96"), ("00", "P_00")])
def test_procedure_rollup(raw, parent):
    assert rollup_icd9(RawCode(SG, raw)).text == parent


@pytest.mark.parametrize("system, raw", [
    (DX, "40"), (DX, "E87"), (DX, "V4"), (DX, "X123"), (DX, "40A1"), (SG, "9"), (SG, "9a1"),
])
def test_malformed_codes_raise(system, raw):
    with pytest.raises(CodeParseError):
        rollup_icd9(RawCode(system, raw))


def test_empty_code_rejected():
    with pytest.raises(CodeParseError):
        RawCode(DX, "  ")


def test_rollup_rejects_non_icd_system():
    with pytest.raises(ValueError):
        rollup_icd9(RawCode(CodeSystem.NDC, "00002143380"))


def test_strip_prefix():
    assert strip_prefix("D_401") == "401"
    assert strip_prefix("P_39") == "39"
    assert strip_prefix("CCS_1") == "CCS_1"


def test_universe_parent_counts():
    dx = {c.text for c in rollup_all(icd9_diagnosis_universe(), DX)}
    sg = {c.text for c in rollup_all(icd9_procedure_universe(), SG)}
    assert len(dx) == 1234
    assert len(sg) == 100


def test_mapping_table_roundtrip(tmp_path):
    table = MappingTable(DX, CodeSystem.CCS_DIAG, {"4019": "CCS_98", "25000": "CCS_49"}, "t")
    path = tmp_path / "xw.tsv"
    table.save(path)
    loaded = MappingTable.load(path)
    assert dict(loaded.rows) == dict(table.rows)
    assert loaded.source_system is DX and loaded.target_system is CodeSystem.CCS_DIAG
    assert map_code(RawCode(DX, "4019"), loaded).text == "CCS_98"


def test_mapping_miss_and_system_mismatch():
    table = MappingTable(DX, CodeSystem.CCS_DIAG, {"4019": "CCS_98"}, "dx-ccs")
    with pytest.raises(MappingMiss) as err:
        map_code(RawCode(DX, "9999"), table)
    assert "dx-ccs" in str(err.value)
    with pytest.raises(ValueError):
        map_code(RawCode(SG, "4019"), table)


def test_conflicting_crosswalk_rows(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("# source_system=ICD9_DIAG target_system=CCS_DIAG\n4019\tCCS_98\n4019\tCCS_99\n")
    with pytest.raises(DataIntegrityError):
        MappingTable.load(path)


def test_bundled_ccs_sample():
    from importlib import resources

    path = resources.files("patraj.data").joinpath("crosswalk_icd9_ccs_sample.tsv")
    table = MappingTable.load(path)
    assert map_code(RawCode(DX, "4280"), table).text == "CCS_108"


def test_vocabulary_order_and_padding(tmp_path):
    codes = [RolledCode(CodeSystem.CCS_DIAG, t) for t in ("CCS_9", "CCS_10", "CCS_9", "CCS_1")]
    vocab = build_vocabulary(codes, CodeSystem.CCS_DIAG)
    assert vocab.entries == ("CCS_1", "CCS_10", "CCS_9")
    assert len(vocab) == 4 and vocab.n_codes == 3
    assert vocab.index("CCS_1") == 1
    assert vocab.code_at(0) == PAD
    assert vocab.indices(["CCS_9", "nope"]) == ([3], 1)
    with pytest.raises(MappingMiss):
        vocab.index("nope")
    path = tmp_path / "v.txt"
    vocab.save(path)
    assert path.read_text().splitlines()[0] == PAD
    assert CodeVocabulary.load(path, "CCS_DIAG") == vocab


def test_vocabulary_rejects_mixed_systems():
    codes = [RolledCode(CodeSystem.CCS_DIAG, "CCS_1"), RolledCode(CodeSystem.ICD9_PARENT, "D_401")]
    with pytest.raises(ValueError):
        build_vocabulary(codes, CodeSystem.CCS_DIAG)


def test_vocabulary_rejects_pad_and_duplicates():
    with pytest.raises(DataIntegrityError):
        CodeVocabulary(CodeSystem.CUI, (PAD,))
    with pytest.raises(DataIntegrityError):
        CodeVocabulary(CodeSystem.CUI, ("C1", "C1"))
