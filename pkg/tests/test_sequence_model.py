import numpy as np
import pytest

from conftest import record
from patraj.admission_model import DIAGNOSIS_CCS, READMISSION, AdmissionModel, FeatureConfig, Featurizer
from patraj.admission_model import embedding_table
from patraj.codes import CodeSystem, CodeVocabulary
from patraj.errors import ConfigError
from patraj.folds import build_windows
from patraj.ingest import label_future_diagnoses
from patraj.sequence_model import (
    DENSE,
    MULTI_HOT,
    EncoderInputs,
    MultiHotInputs,
    RepresentationInputs,
    SequenceModel,
    SequenceModelConfig,
    build_multihot_inputs,
    evaluate_sequence_model,
    train_sequence_model,
)
from patraj.stores import RepresentationStore, VectorStore
from patraj.training import TrainHyperparams

CODES = ("C1", "C2", "C3")


def _windows(k=3):
    vocab = CodeVocabulary(CodeSystem.CCS_DIAG, CODES)
    recs = [label_future_diagnoses(record(f"p{i}", [0, 20, 90, 200][: 2 + i % 3],
                                          diag=CODES[i % 3:]), vocab) for i in range(10)]
    return vocab, recs, [w for r in recs for w in build_windows(r, k)]


def test_config_validation():
    with pytest.raises(ConfigError):
        SequenceModelConfig(input_mode="bogus")
    with pytest.raises(ConfigError):
        SequenceModelConfig(input_mode=MULTI_HOT, trainable_encoder=True)
    with pytest.raises(ConfigError):
        SequenceModel(SequenceModelConfig(trainable_encoder=True), 4)


def test_multihot_inputs():
    vocab, recs, windows = _windows()
    x, mask = build_multihot_inputs(windows[0].window, vocab)
    assert x.shape == (3, 3)
    np.testing.assert_array_equal(mask, [0, 0, 1])
    np.testing.assert_array_equal(x[:2], 0)


@pytest.mark.parametrize("cell", ["GRU", "LSTM"])
@pytest.mark.parametrize("task", [READMISSION, DIAGNOSIS_CCS])
def test_train_multihot(cell, task):
    vocab, _, windows = _windows()
    inputs = MultiHotInputs(vocab, task)
    n = 1 if task == READMISSION else vocab.n_codes
    cfg = SequenceModelConfig(MULTI_HOT, cell, hidden_size=8, num_layers=2, bidirectional=True,
                              n_classes=n)
    model, result = train_sequence_model(windows, windows, inputs, cfg, TrainHyperparams(epochs=2))
    rep = evaluate_sequence_model(model, inputs, windows, task, fold=0)
    assert rep.n_samples == len(windows)


def test_dense_representation_inputs(rng):
    vocab, recs, windows = _windows()
    ids = [a.admission_id for r in recs for a in r.admissions]
    store = RepresentationStore(ids, rng.normal(size=(len(ids), 6)).astype(np.float32))
    inputs = RepresentationInputs(store, READMISSION)
    batch = inputs.batch(windows[:4])
    assert batch.x.shape == (4, 3, 6)
    np.testing.assert_array_equal(batch.x[0, :2], 0)
    model = SequenceModel(SequenceModelConfig(DENSE, hidden_size=5), inputs.dim)
    assert model.predict(batch).shape == (4, 1)


def test_end_to_end_encoder(rng):
    vocab, _, windows = _windows()
    table = embedding_table(vocab, VectorStore(list(CODES), rng.normal(size=(3, 768))))
    fcfg = FeatureConfig(diag=True)
    encoder = AdmissionModel(fcfg, 1, {"diag": table}).encoder
    inputs = EncoderInputs(Featurizer(fcfg, None, {"diag": vocab}), READMISSION)
    cfg = SequenceModelConfig(DENSE, hidden_size=4, trainable_encoder=True)
    before = encoder.diag_bottleneck.dense.linear.weight.value.copy()
    model, _ = train_sequence_model(windows, windows, inputs, cfg, TrainHyperparams(epochs=1),
                                    encoder=encoder)
    assert not np.array_equal(before, model.encoder.diag_bottleneck.dense.linear.weight.value)


def test_padding_invariance():
    vocab, recs, _ = _windows()
    cfg = SequenceModelConfig(MULTI_HOT, "GRU", hidden_size=6, bidirectional=True)
    model = SequenceModel(cfg, vocab.n_codes, seed=2)
    inputs = MultiHotInputs(vocab, READMISSION)
    rec = recs[2]
    short = build_windows(rec, 3)[-1]
    long = build_windows(rec, 6)[-1]
    a = model.predict(inputs.batch([short]))
    b = model.predict(inputs.batch([long]))
    np.testing.assert_allclose(a, b, atol=1e-6)
