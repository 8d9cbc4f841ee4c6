from datetime import datetime, timedelta

import numpy as np
import pytest

from patraj.ingest import Admission, compute_temporal_features, label_readmission, make_record
from patraj.synth import SyntheticCohortSpec, generate_cohort

T0 = datetime(2150, 3, 1)


def admission(pid, aid, start_day, length_days=2.0, diag=(), proc=(), med=(), chunks=()):
    admit = T0 + timedelta(days=start_day)
    return Admission(pid, aid, admit, admit + timedelta(days=length_days), diag_codes=tuple(diag),
                     proc_codes=tuple(proc), med_codes=tuple(med), note_chunk_ids=tuple(chunks))


def record(pid, starts, **kw):
    adms = [admission(pid, f"{pid}-{i}", s, **kw) for i, s in enumerate(starts)]
    return label_readmission(compute_temporal_features(make_record(pid, adms)))


@pytest.fixture(scope="session")
def small_cohort():
    spec = SyntheticCohortSpec(n_patients=120, p_single_visit=0.3, persistence_prob=0.5,
                               n_diag_codes=40, n_proc_codes=12, n_med_codes=15, seed=11)
    return generate_cohort(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
