from collections import Counter

import pytest

from conftest import record
from patraj.folds import (
    FoldPlan,
    SplitSpec,
    build_windows,
    expand_and_shuffle,
    load_windows,
    save_windows,
    split_admissions,
    stratified_admission_folds,
    stratified_patient_folds,
    subsample_negatives,
)


def _records(n_pos, n_neg):
    pos = [record(f"P{i}", [0.0, 10.0]) for i in range(n_pos)]
    neg = [record(f"N{i}", [0.0, 100.0]) for i in range(n_neg)]
    return pos + neg


def test_rotation_scheme():
    for i in range(10):
        s = SplitSpec.rotation(i)
        assert s.test_fold == i and s.val_fold == (i + 1) % 10
        assert sorted(s.train_folds + (s.val_fold, s.test_fold)) == list(range(10))
    assert sorted(SplitSpec.rotation(i).test_fold for i in range(10)) == list(range(10))
    with pytest.raises(ValueError):
        SplitSpec((0, 1), 1, 2)


def test_patient_folds_balanced_and_disjoint():
    recs = _records(23, 77)
    plan = stratified_patient_folds(recs, lambda r: r.is_positive, 10, seed=3)
    pos_counts = Counter(plan.fold_of(r.patient_id) for r in recs if r.is_positive)
    totals = Counter(plan.assignment.values())
    assert max(pos_counts.values()) - min(pos_counts[f] for f in range(10)) <= 1
    assert max(totals.values()) - min(totals.values()) <= 1
    folds = expand_and_shuffle(plan, recs, seed=3)
    tr, va, te = split_admissions(folds, SplitSpec.rotation(4))
    ids = [{a.patient_id for a in part} for part in (tr, va, te)]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
    assert len(tr) + len(va) + len(te) == sum(len(r) for r in recs)


def test_patient_folds_seeded():
    recs = _records(5, 40)
    a = stratified_patient_folds(recs, lambda r: r.is_positive, 10, seed=1)
    b = stratified_patient_folds(recs, lambda r: r.is_positive, 10, seed=1)
    c = stratified_patient_folds(recs, lambda r: r.is_positive, 10, seed=2)
    assert a == b and a != c


def test_too_few_patients():
    with pytest.raises(ValueError):
        stratified_patient_folds(_records(1, 2), lambda r: r.is_positive, 10)


def test_fold_plan_roundtrip(tmp_path):
    plan = stratified_patient_folds(_records(4, 16), lambda r: r.is_positive, 10, seed=9)
    plan.save(tmp_path / "f.tsv")
    assert FoldPlan.load(tmp_path / "f.tsv") == plan


def test_admission_folds_warn_about_leakage():
    adms = [a for r in _records(5, 20) for a in r.admissions]
    with pytest.warns(UserWarning, match="leak"):
        folds = stratified_admission_folds(adms, 5, seed=0)
    assert sum(map(len, folds)) == len(adms)


def test_subsample_negatives():
    adms = [a for r in _records(6, 30) for a in r.admissions]
    out = subsample_negatives(adms, seed=0)
    pos = sum(a.readmitted_30d for a in out)
    assert pos == 6 and len(out) == 12
    # selected items keep their order
    assert [adms.index(a) for a in out] == sorted(adms.index(a) for a in out)
    assert subsample_negatives(adms, seed=0) == out


def test_subsample_edge_cases():
    neg_only = [a for r in _records(0, 4) for a in r.admissions]
    with pytest.raises(ValueError):
        subsample_negatives(neg_only)
    few_neg = [r.admissions[0] for r in _records(5, 0)] + [_records(0, 1)[0].admissions[0]]
    with pytest.warns(RuntimeWarning):
        assert len(subsample_negatives(few_neg)) == len(few_neg)


def test_windows_example():
    rec = record("p", [0, 50, 100, 150])
    a, b, c, d = rec.admissions
    ws = build_windows(rec, 2)
    assert [w.window for w in ws] == [(None, a), (a, b), (b, c)]
    assert [w.label_source for w in ws] == [b, c, d]
    assert ws[0].real_count == 1 and list(ws[0].mask) == [0.0, 1.0]
    assert build_windows(record("q", [0]), 3) == []
    with pytest.raises(ValueError):
        build_windows(rec, 0)


def test_windows_roundtrip(tmp_path):
    recs = [record("p", [0, 50, 100, 150]), record("q", [0, 10])]
    ws = [w for r in recs for w in build_windows(r, 3)]
    save_windows(tmp_path / "w.jsonl", ws)
    assert load_windows(tmp_path / "w.jsonl", recs) == ws
