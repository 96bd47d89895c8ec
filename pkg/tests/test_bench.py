import numpy as np
import pytest

from lear.bench import (BenchConfig, CostRecord, analytic_op_count, build_pipeline, fit_complexity, measure,
                        quadratic_ratio, records_csv, relative_costs, run_sweep)
from lear.errors import ConfigError

SMALL = BenchConfig(d_model=16, n_layers=1, n_heads=2, n=12, m=4, texts=2)


def with_(cfg, **kw):
    return BenchConfig(**{**cfg.__dict__, **kw})


def test_qa_runs_one_encoder_pass_per_category():
    _, events = measure("qa", 5, "inference", SMALL)
    assert events["encode_text"] == 5 * SMALL.texts
    assert "encode_labels" not in events


def test_lear_encodes_no_labels_after_warmup():
    _, events = measure("lear", 5, "inference", SMALL)
    assert events["encode_text"] == SMALL.texts
    assert "encode_labels" not in events


def test_lear_training_recomputes_label_encodings():
    _, events = measure("lear", 3, "train-epoch", SMALL)
    assert events["encode_labels"] == 3 * SMALL.texts


def test_traditional_ignores_annotation_length():
    a, _ = measure("traditional", 3, "inference", SMALL)
    b, _ = measure("traditional", 3, "inference", with_(SMALL, m=9))
    assert a.op_count == b.op_count


@pytest.mark.parametrize("paradigm", ["traditional", "qa", "lear"])
def test_counts_are_deterministic_and_match_the_analytic_model(paradigm):
    a, _ = measure(paradigm, 3, "inference", SMALL)
    b, _ = measure(paradigm, 3, "inference", SMALL)
    assert a.op_count == b.op_count
    assert a.op_count == SMALL.texts * analytic_op_count(paradigm, 3, SMALL.n, SMALL.m, SMALL)


def test_fit_over_n_and_m_recovers_quadratic_terms():
    records = []
    for n, m, c in [(8, 2, 1), (12, 4, 2), (16, 3, 3), (20, 6, 2), (10, 5, 4), (14, 2, 5)]:
        cfg = with_(SMALL, n=n, m=m, texts=1)
        for p in ("traditional", "qa", "lear"):
            records.append(measure(p, c, "inference", cfg)[0])
    fits = {f.paradigm: f for f in fit_complexity(records)}
    d, L = SMALL.d_model, SMALL.n_layers
    assert fits["traditional"].coefficients[0] == pytest.approx(2 * L * d, rel=1e-9)
    assert fits["qa"].coefficients[0] == pytest.approx(2 * L * d, rel=1e-9)
    assert fits["lear"].coefficients[2] == pytest.approx(2 * d, rel=1e-9)
    assert all(f.max_relative_residual < 1e-9 and f.full_rank for f in fits.values())
    only_c = [measure(p, c, "inference", SMALL)[0] for c in (2, 3, 4) for p in ("traditional",)]
    assert not fit_complexity(only_c, texts=SMALL.texts)[0].full_rank


def test_qa_grows_linearly_in_categories_and_lear_sublinearly():
    recs = run_sweep(categories=(2, 4), cfg=SMALL)
    rel = relative_costs(recs)
    assert rel[("qa", "inference", 4)] > 1.8 * rel[("qa", "inference", 2)]
    assert rel[("lear", "inference", 2)] < rel[("qa", "inference", 2)]
    assert rel[("traditional", "inference", 2)] == 1.0


def test_records_csv_header():
    rec = CostRecord("qa", 3, 12, 4, "inference", 0.1, 99)
    lines = records_csv([rec]).splitlines()
    assert lines[0] == "paradigm,num_categories,n,m,phase,wall_seconds,op_count"
    assert lines[1].startswith("qa,3,12,4,inference,")


def test_quadratic_ratio():
    assert quadratic_ratio(3, 64, 16) == pytest.approx(3 * 80**2 / 64**2)


def test_unknown_paradigm_and_phase():
    with pytest.raises(ConfigError):
        build_pipeline("crf")
    with pytest.raises(ConfigError):
        measure("qa", 3, "deploy", SMALL)
    with pytest.raises(ConfigError):
        run_sweep(paradigms=("qa", "crf"), cfg=SMALL)


def test_train_epoch_counts_backward_work():
    inf, _ = measure("traditional", 3, "inference", SMALL)
    tr, _ = measure("traditional", 3, "train-epoch", SMALL)
    assert tr.op_count > 2 * inf.op_count
    assert np.isfinite(tr.wall_seconds)
