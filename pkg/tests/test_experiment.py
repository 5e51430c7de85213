import numpy as np
import pytest

from conftest import small_config
from flforensics import experiment
from flforensics.checkpoints import CheckpointStore
from flforensics.experiment import (
    NO_TARGET,
    OK,
    ProbeVerdict,
    build_scenario,
    classify_probes,
    compute_asr,
    compute_detection_metrics,
    forensics,
    recover_retrain,
    report_records,
    run_experiment,
    summarize,
    train,
)
from flforensics.detect import ProbeClass
from flforensics.model import Dataset, ModelKind, ModelSpec
from flforensics.report import encode_record


def test_metrics_worked_example():
    m = compute_detection_metrics(list(range(18)) + [50], range(20), range(100))
    assert (m.tp, m.fp, m.tn, m.fn) == (18, 1, 79, 2)
    assert m.dacc == pytest.approx(0.97)
    assert m.fpr == pytest.approx(0.0125)
    assert m.fnr == pytest.approx(0.10)


def test_metrics_nothing_flagged_and_perfect():
    m = compute_detection_metrics([], range(20), range(100))
    assert (m.dacc, m.fpr, m.fnr) == (0.8, 0.0, 1.0)
    m = compute_detection_metrics(range(20), range(20), range(100))
    assert (m.dacc, m.fpr, m.fnr) == (1.0, 0.0, 0.0)
    m = compute_detection_metrics([], [], range(5))
    assert (m.dacc, m.fpr, m.fnr) == (1.0, 0.0, 0.0)


def test_metrics_reject_unknown_clients():
    with pytest.raises(ValueError):
        compute_detection_metrics([7], [], range(5))
    with pytest.raises(ValueError):
        compute_detection_metrics([], [], [])


def test_asr_examples():
    spec = ModelSpec(ModelKind.LINEAR_SOFTMAX, 1, 2)
    w = np.array([-1.0, 1.0, 0.0, 0.0])  # class 1 iff x > 0
    X = np.array([[1.0], [2.0], [-1.0], [3.0]])
    assert compute_asr(w, X, 1, spec) == 0.75
    assert compute_asr(w, Dataset(X, [0, 0, 0, 0]), 0, spec) == 0.25
    with pytest.raises(ValueError):
        compute_asr(w, np.empty((0, 1)), 1, spec)


@pytest.fixture(scope="module")
def result():
    return run_experiment(small_config(0))


def test_small_run_detects_attackers(result):
    assert result.outcome == OK
    assert result.asr >= 0.6
    assert result.metrics.tp >= 4
    assert len(result.pairs) == 30
    assert all(p.rounds_counted == 6 for p in result.pairs)


def test_report_shape(result):
    recs = report_records(result)
    assert recs[0]["record"] == "config"
    assert [r["client"] for r in recs[1:-1]] == list(range(30))
    assert set(recs[1]) >= {"client", "s", "s_prime", "rounds_counted"}
    summary = recs[-1]
    assert summary["record"] == "summary"
    assert summary["dacc"] == result.metrics.dacc


def test_rerun_is_byte_identical(result):
    again = run_experiment(small_config(0))
    a = "\n".join(encode_record(r) for r in report_records(result))
    b = "\n".join(encode_record(r) for r in report_records(again))
    assert a == b


def test_seeds_change_the_run(result):
    other = run_experiment(small_config(1))
    assert [p.s for p in other.pairs] != [p.s for p in result.pairs]


def test_summarize(result):
    out = summarize([result, result])
    assert out["dacc_mean"] == result.metrics.dacc
    assert out["dacc_std"] == 0.0
    assert out["effective_seeds"] == [0, 0]


def test_no_misclassified_target(tmp_path):
    scn = build_scenario(small_config(0))
    store = CheckpointStore(tmp_path / "cp.bin")
    w = np.zeros(scn.spec.num_params)  # predicts class 0 everywhere; y is 2
    assert forensics(scn, w, store) == (None, [], None)


def test_no_target_outcome_is_reported(monkeypatch):
    monkeypatch.setattr(experiment, "pick_target", lambda w, scn: None)
    res = run_experiment(small_config(0))
    assert res.outcome == NO_TARGET and not res.effective
    assert res.detection is None and res.pairs == []
    assert summarize([res])["dacc_mean"] is None
    assert report_records(res)[-1]["outcome"] == NO_TARGET


def test_empty_exclusion_reproduces_training():
    scn = build_scenario(small_config(0))
    assert np.array_equal(train(scn), train(scn, excluded=()))


def test_recovery_removes_backdoor():
    cfg = small_config(0)
    _, rec = recover_retrain(cfg, cfg.malicious)
    assert rec.asr_before >= 0.6
    assert rec.asr_after <= 0.5 * rec.asr_before
    assert rec.accuracy_after >= rec.accuracy_before - 0.05


def test_excluding_benign_clients_keeps_backdoor():
    cfg = small_config(0)
    _, rec = recover_retrain(cfg, range(24, 30))
    assert rec.asr_after >= 0.6


def test_recovery_validates_ids():
    cfg = small_config(0)
    with pytest.raises(ValueError):
        recover_retrain(cfg, [99])
    with pytest.raises(ValueError):
        recover_retrain(cfg, range(30))


def test_classify_probes(tmp_path):
    scn = build_scenario(small_config(0))
    store = CheckpointStore(tmp_path / "cp.bin")
    w = train(scn, store)
    verdicts = classify_probes(scn, w, store, 3, 3)
    kinds = [v.kind for v in verdicts]
    assert kinds.count("target") == 3
    assert kinds.count("nontarget") <= 3
    assert all(isinstance(v.predicted, ProbeClass) for v in verdicts)


def test_probe_verdict_correctness():
    assert ProbeVerdict("target", 0, ProbeClass.TARGET, {}).correct
    assert not ProbeVerdict("nontarget", 0, ProbeClass.TARGET, {}).correct
