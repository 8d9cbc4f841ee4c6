import warnings

import numpy as np
import pandas as pd
import pytest

from conftest import admission, record
from patraj.codes import CodeSystem, CodeVocabulary, MappingTable
from patraj.errors import DataIntegrityError
from patraj.ingest import (
    CodeSpace,
    TemporalScaler,
    attach_note_chunks,
    build_records,
    compute_temporal_features,
    label_future_diagnoses,
    load_records,
    make_record,
    multihot,
    read_chunk_manifest,
    rescale_temporal,
    save_records,
    write_chunk_manifest,
)
from patraj.stores import ChunkEmbeddingStore


def test_readmission_threshold_is_strict():
    # discharge day 2, next admits at 2 + 29.99 / 2 + 30 / 2 + 30.01 days
    for gap, expected in ((29.99, True), (30.0, False), (30.01, False)):
        rec = record("p", [0.0, 2.0 + gap])
        assert rec.admissions[0].readmitted_30d is expected
        assert rec.admissions[1].readmitted_30d is False


def test_temporal_features_and_first_admission():
    rec = record("p", [0.0, 10.0, 11.0], length_days=2.0)
    a0, a1, a2 = rec.admissions
    assert a0.duration_days == pytest.approx(2.0)
    assert a0.days_since_prior is None and a0.is_first
    assert a1.days_since_prior == pytest.approx(8.0)
    # admitted before the previous discharge: clamped to zero
    assert a2.days_since_prior == 0.0
    assert rec.is_positive


def test_record_integrity_checks():
    a = admission("p", "a", 0)
    with pytest.raises(DataIntegrityError):
        make_record("q", [a])
    bad = admission("p", "b", 5, length_days=-1)
    with pytest.raises(DataIntegrityError):
        compute_temporal_features(make_record("p", [bad]))


def test_future_diagnosis_labels():
    vocab = CodeVocabulary(CodeSystem.CCS_DIAG, ("C1", "C2", "C3"))
    adms = [admission("p", "a", 0, diag=["C1"]), admission("p", "b", 40, diag=["C3", "C9"])]
    rec = label_future_diagnoses(record_from(adms), vocab)
    np.testing.assert_array_equal(rec.admissions[0].next_diag_multihot, [0, 0, 1])
    assert rec.admissions[1].next_diag_multihot is None


def record_from(adms):
    return compute_temporal_features(make_record(adms[0].patient_id, adms))


def test_multihot_ignores_padding():
    vocab = CodeVocabulary(CodeSystem.CCS_DIAG, ("C1", "C2"))
    np.testing.assert_array_equal(multihot([0, 2], vocab), [0, 1])


def test_scaler_fits_train_only_and_clamps():
    train = [admission("p", str(i), 0, length_days=d) for i, d in enumerate((1.0, 3.0))]
    train = list(compute_temporal_features(make_record("p", train[:1])).admissions) + \
        list(compute_temporal_features(make_record("p", train[1:])).admissions)
    scaler = TemporalScaler().fit(train)
    assert scaler.scale("duration", 2.0) == pytest.approx(0.5)
    assert scaler.scale("duration", 10.0) == 1.0
    assert scaler.scale("duration", 0.0) == 0.0
    assert scaler.scale("days_since_prior", None) == 0.0
    again = TemporalScaler.from_dict(scaler.to_dict())
    assert again.bounds == scaler.bounds


def test_degenerate_feature_warns():
    with pytest.warns(RuntimeWarning):
        out = rescale_temporal([2.0, 2.0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(out, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        np.testing.assert_allclose(rescale_temporal([0.0, 4.0], [1.0, 8.0]), [0.25, 1.0])


def test_note_chunks(tmp_path):
    store = ChunkEmbeddingStore(["a_c0"], np.zeros((1, 768), np.float32))
    adm = admission("p", "a", 0)
    assert attach_note_chunks(adm, {"a": ["a_c0"]}, store).note_chunk_ids == ("a_c0",)
    with pytest.raises(DataIntegrityError):
        attach_note_chunks(adm, {"a": ["a_c0", "a_c1"]}, store)
    path = tmp_path / "m.tsv"
    write_chunk_manifest(path, {"a": ["a_c0", "a_c1"], "b": ["b_c0"]})
    assert read_chunk_manifest(path) == {"a": ["a_c0", "a_c1"], "b": ["b_c0"]}


def _tables():
    adm = pd.DataFrame({
        "patient_id": ["1", "1", "2"],
        "admission_id": ["10", "11", "20"],
        "admit_time": ["2150-01-01 00:00", "2150-01-20 00:00", "2150-02-01"],
        "discharge_time": ["2150-01-05 00:00", "2150-01-22 00:00", "2150-02-03"],
    })
    diag = pd.DataFrame({
        "admission_id": ["10", "10", "10", "11", "20", "20"],
        "seq_num": ["2", "1", "3", "1", "1", "2"],
        "icd9_code": ["4280", "4019", "4019", "E8798", "V4581", "XX1"],
    })
    proc = pd.DataFrame({"admission_id": ["10"], "seq_num": ["1"], "icd9_code": ["3961"]})
    rx = pd.DataFrame({"admission_id": ["10", "10"],
                       "start_date": ["2150-01-03", "2150-01-02"], "ndc": ["N2", "N1"]})
    return adm, diag, proc, rx


def test_build_records_icd9_parent():
    adm, diag, proc, rx = _tables()
    records, stats = build_records(adm, diag, proc, rx)
    assert [r.patient_id for r in records] == ["1", "2"]
    a10, a11 = records[0].admissions
    # seq order kept, duplicates removed
    assert a10.diag_codes == ("D_401", "D_428")
    assert a10.proc_codes == ("P_39",)
    assert a10.med_codes == ("N1", "N2")
    assert a11.diag_codes == ("D_E879",)
    assert a10.readmitted_30d
    assert records[1].admissions[0].diag_codes == ("D_V45",)
    assert stats.dropped["malformed_ICD9_DIAG"] == 1
    assert stats.admissions == 3 and stats.patients == 2


def test_build_records_ccs_drops_unmapped():
    adm, diag, proc, rx = _tables()
    table = MappingTable(CodeSystem.ICD9_DIAG, CodeSystem.CCS_DIAG, {"4019": "CCS_98", "4280": "CCS_108"})
    space = CodeSpace(diag="ccs", proc="icd9_parent", diag_ccs=table)
    records, stats = build_records(adm, diag, None, None, space)
    assert records[0].admissions[0].diag_codes == ("CCS_98", "CCS_108")
    assert stats.dropped["unmapped_ICD9_DIAG"] == 3


def test_duplicate_admission_id():
    adm, *_ = _tables()
    adm = pd.concat([adm, adm.iloc[:1]])
    with pytest.raises(DataIntegrityError):
        build_records(adm)


def test_records_roundtrip(tmp_path, small_cohort):
    records = small_cohort.records()
    vocab = CodeVocabulary(CodeSystem.CCS_DIAG, tuple(sorted({c for r in records for a in r.admissions
                                                               for c in a.diag_codes})))
    records = [label_future_diagnoses(r, vocab) for r in records]
    path = tmp_path / "d.jsonl"
    save_records(path, records)
    back = load_records(path)
    assert back == records
    for r1, r2 in zip(records, back):
        for a1, a2 in zip(r1.admissions, r2.admissions):
            if a1.next_diag_multihot is None:
                assert a2.next_diag_multihot is None
            else:
                np.testing.assert_array_equal(a1.next_diag_multihot, a2.next_diag_multihot)


def test_synthetic_cohort_passes_ingest(small_cohort, tmp_path):
    records = small_cohort.records("icd9_parent", "icd9_parent")
    assert sum(len(r) for r in records) == len(small_cohort.admissions)
    assert all(c.startswith("D_") for r in records for a in r.admissions for c in a.diag_codes)
    paths = small_cohort.write(tmp_path)
    assert all(p.exists() for p in paths.values())


def test_synthetic_generation_is_deterministic():
    from patraj.synth import SyntheticCohortSpec, generate_cohort

    spec = SyntheticCohortSpec(n_patients=30, seed=5)
    a, b = generate_cohort(spec), generate_cohort(spec)
    pd.testing.assert_frame_equal(a.diagnoses, b.diagnoses)
    pd.testing.assert_frame_equal(a.admissions, b.admissions)
    np.testing.assert_array_equal(a.chunk_store.vectors, b.chunk_store.vectors)
