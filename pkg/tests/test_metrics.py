from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from leaderboard import EXACT, N_FAKE, N_REAL, ROWS
from specfas.metrics import (ConfusionCounts, EmptyClassError, acer_report, confusion, evaluate_scores,
                             format_csv, format_table, rates_report, read_labels, read_scores,
                             threshold_sweep, write_scores)

FIX = Path(__file__).parent / "fixtures"


def _split(fake_scores, real_scores):
    scores, labels = {}, {}
    for i, s in enumerate(fake_scores):
        scores[f"f{i}"], labels[f"f{i}"] = s, "fake"
    for i, s in enumerate(real_scores):
        scores[f"r{i}"], labels[f"r{i}"] = s, "real"
    return scores, labels


def test_perfect_separation():
    c = confusion(*_split([1.0] * 100, [0.0] * 100), 0.5)
    assert c == ConfusionCounts(100, 0, 0, 100)
    assert acer_report(c).acer == 0.0


def test_brute_force_counts_and_rates():
    c = confusion(*_split([0.9] * 99 + [0.1], [0.1] * 198 + [0.9] * 2), 0.5)
    assert c == ConfusionCounts(99, 1, 2, 198)
    r = acer_report(c, 0.5)
    assert (r.apcer, r.bpcer, r.acer) == (1.0, 1.0, 1.0)


def test_threshold_zero_everything_fake():
    c = confusion(*_split([0.2, 0.7], [0.0, 0.4]), 0.0)
    assert c.fn == 0 and c.tn == 0


def test_all_predicted_real():
    r = evaluate_scores(*_split([0.1] * 5, [0.1] * 5), 0.5)
    assert (r.apcer, r.bpcer) == (100.0, 0.0)


def test_tie_is_fake():
    c = confusion(*_split([0.5], [0.5]), 0.5)
    assert (c.tp, c.fp) == (1, 1)


def test_key_mismatch_lists_ids():
    with pytest.raises(KeyError) as err:
        confusion({"a": 0.1, "b": 0.2}, {"a": "real", "c": "fake"}, 0.5)
    assert "'b'" in str(err.value) and "'c'" in str(err.value)


def test_empty_class_signalled():
    with pytest.raises(EmptyClassError):
        evaluate_scores({"a": 0.9}, {"a": "fake"})
    with pytest.raises(ZeroDivisionError):
        acer_report(ConfusionCounts(0, 0, 1, 1))


def test_leaderboard_rows_recompute():
    for team, acer, apcer, bpcer in ROWS:
        got = rates_report(apcer, bpcer).acer
        assert abs(got - acer) <= 5e-5, team
        if team in EXACT:
            assert f"{got:.4f}" == f"{acer:.4f}", team


def test_leaderboard_rates_from_counts():
    # each printed rate is a rounded count ratio over the implied test-set sizes
    for team, acer, apcer, bpcer in ROWS:
        fn = round(apcer / 100 * N_FAKE)
        fp = round(bpcer / 100 * N_REAL)
        r = acer_report(ConfusionCounts(N_FAKE - fn, fn, fp, N_REAL - fp))
        assert f"{r.apcer:.4f}" == f"{apcer:.4f}" and f"{r.bpcer:.4f}" == f"{bpcer:.4f}", team
        assert abs(r.acer - acer) <= 5e-5, team


def test_ricardozzf_fixture():
    scores = read_scores(FIX / "ricardozzf_scores.csv")
    labels = read_labels(FIX / "ricardozzf_labels.csv")
    r = evaluate_scores(scores, labels, 0.5)
    assert r.counts == ConfusionCounts(1610, 2, 1, 311)
    assert r.row()["acer"] == "0.2223"
    assert r.row()["apcer"] == "0.1241" and r.row()["bpcer"] == "0.3205"


def test_sweep():
    s, l = _split([0.2, 0.8, 1.0], [0.0, 0.3, 0.9])
    reps = threshold_sweep(s, l, [0.0, 0.5, 1.0])
    assert reps[0].apcer == 0.0 and reps[0].bpcer == 100.0
    # the boundary 1.0 still counts a score of exactly 1.0 as fake
    assert reps[2].counts.tp == 1
    assert threshold_sweep(s, l, [0.5]) == [evaluate_scores(s, l, 0.5)]
    with pytest.raises(ValueError):
        threshold_sweep(s, l, [])
    with pytest.raises(ValueError):
        threshold_sweep(s, l, [0.5, 0.1])


def test_score_file_roundtrip(tmp_path):
    scores = {"a": 0.1, "b": 0.123456789012345, "c": 1.0}
    write_scores(tmp_path / "s.csv", scores)
    assert read_scores(tmp_path / "s.csv") == scores
    (tmp_path / "bad.csv").write_text("a,1.5\n")
    with pytest.raises(ValueError):
        read_scores(tmp_path / "bad.csv")


def test_read_labels_from_manifest(tmp_path):
    (tmp_path / "m.tsv").write_text("a\tx/a.spfs\tfake\tid1\nb\tx/b.spfs\treal\tid2\n")
    assert read_labels(tmp_path / "m.tsv") == {"a": "fake", "b": "real"}
    (tmp_path / "bad.csv").write_text("a,maybe\n")
    with pytest.raises(ValueError):
        read_labels(tmp_path / "bad.csv")


def test_formatting():
    r = acer_report(ConfusionCounts(99, 1, 2, 198), 0.5)
    table = format_table([r])
    assert "ACER(%)" in table and "1.0000" in table
    csv_text = format_csv([r])
    assert csv_text.splitlines()[0] == "threshold,apcer,bpcer,acer,tp,fn,fp,tn"
    assert csv_text.splitlines()[1] == "0.5,1.0,1.0,1.0,99,1,2,198"



@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=60), st.floats(0, 1))
def test_confusion_properties(rows, thr):
    scores = {str(i): s for i, (s, _) in enumerate(rows)}
    labels = {str(i): "fake" if f else "real" for i, (_, f) in enumerate(rows)}
    c = confusion(scores, labels, thr)
    assert c.tp + c.fn == sum(f for _, f in rows)
    assert c.fp + c.tn == sum(not f for _, f in rows)
    if c.n_fake and c.n_real:
        r = acer_report(c)
        assert 0.0 <= r.apcer <= 100.0 and 0.0 <= r.bpcer <= 100.0
        assert r.acer == (r.apcer + r.bpcer) / 2
