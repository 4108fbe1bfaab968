import random
from fractions import Fraction

import pytest

from senta.corpus import Instance
from senta.errors import (
    DuplicatePredictionError,
    EmptySubsetError,
    MissingPredictionError,
)
from senta.evalharness import (
    CaseTable,
    PredictionRecord,
    case_table,
    display_accuracy,
    evaluate,
    evaluate_revnon,
    parse_report,
    read_predictions,
    render_report,
    with_case_table,
    write_predictions,
)


def make_split(name, n_correct, n_total, model="m", start=0, source="original"):
    """Instances + predictions with an exact (correct, total) pair."""
    instances, predictions = [], []
    for k in range(n_total):
        iid = f"{name}-{start + k}"
        gold = "positive" if k % 2 == 0 else "negative"
        predicted = gold if k < n_correct else ("negative" if gold == "positive" else "positive")
        instances.append(
            Instance(id=iid, sentence="the pizza is good .", aspect="pizza",
                     polarity=gold, source=source)
        )
        predictions.append(PredictionRecord(iid, gold, predicted, model))
    return instances, predictions


class TestDisplayAccuracy:
    @pytest.mark.parametrize(
        "correct,total,expected",
        [
            (7507, 10000, "75.07"),
            (6371, 10000, "63.71"),
            (479, 638, "75.08"),
            (478, 638, "74.92"),
            (1, 1, "100.00"),
            (0, 7, "0.00"),
            (1, 3, "33.33"),
            (2, 3, "66.67"),
            (401, 800, "50.13"),  # exact .125 rounds half-up
        ],
    )
    def test_pinned_rounding(self, correct, total, expected):
        assert str(display_accuracy(correct, total)) == expected

    def test_zero_total_rejected(self):
        with pytest.raises(ZeroDivisionError):
            display_accuracy(0, 0)


class TestEvaluate:
    def test_table_drop_arithmetic(self):
        ori_i, ori_p = make_split("ori", 7507, 10000)
        chg_i, chg_p = make_split("chg", 6371, 10000)
        report = evaluate(
            ori_p + chg_p,
            ori_i + chg_i,
            splits={"ori": [i.id for i in ori_i], "change": [i.id for i in chg_i]},
            drop_pairs=[("ori", "change")],
        )
        assert str(report.result("m", "ori").accuracy_display()) == "75.07"
        assert str(report.result("m", "change").accuracy_display()) == "63.71"
        assert str(report.drop_display("m", "ori", "change")) == "11.36"
        text = render_report(report, "text").decode()
        assert "75.07" in text and "63.71" in text and "11.36" in text

    def test_all_correct(self):
        a_i, a_p = make_split("a", 5, 5)
        b_i, b_p = make_split("b", 5, 5)
        report = evaluate(
            a_p + b_p, a_i + b_i,
            splits={"a": [i.id for i in a_i], "b": [i.id for i in b_i]},
            drop_pairs=[("a", "b")],
        )
        assert str(report.result("m", "a").accuracy_display()) == "100.00"
        assert str(report.drop_display("m", "a", "b")) == "0.00"

    def test_permutation_invariant(self):
        a_i, a_p = make_split("a", 420, 638)
        report1 = evaluate(a_p, a_i, splits={"a": [i.id for i in a_i]})
        shuffled = a_p[:]
        random.Random(3).shuffle(shuffled)
        report2 = evaluate(shuffled, a_i, splits={"a": [i.id for i in a_i]})
        assert report1 == report2

    def test_union_accuracy_is_weighted_mean(self):
        a_i, a_p = make_split("a", 31, 57)
        b_i, b_p = make_split("b", 11, 43)
        both = evaluate(
            a_p + b_p, a_i + b_i,
            splits={
                "a": [i.id for i in a_i],
                "b": [i.id for i in b_i],
                "union": [i.id for i in a_i + b_i],
            },
        )
        fa = both.result("m", "a")
        fb = both.result("m", "b")
        fu = both.result("m", "union")
        weighted = (
            fa.accuracy_fraction() * fa.total + fb.accuracy_fraction() * fb.total
        ) / (fa.total + fb.total)
        assert fu.accuracy_fraction() == weighted

    def test_drop_antisymmetric_on_unrounded_internals(self):
        a_i, a_p = make_split("a", 31, 57)
        b_i, b_p = make_split("b", 11, 43)
        report = evaluate(
            a_p + b_p, a_i + b_i,
            splits={"a": [i.id for i in a_i], "b": [i.id for i in b_i]},
        )
        fa = report.result("m", "a").accuracy_fraction()
        fb = report.result("m", "b").accuracy_fraction()
        assert fa - fb == -(fb - fa)
        assert isinstance(fa, Fraction)

    def test_missing_prediction(self):
        a_i, a_p = make_split("a", 3, 4)
        with pytest.raises(MissingPredictionError) as err:
            evaluate(a_p[:-1], a_i, splits={"a": [i.id for i in a_i]})
        assert "a-3" in str(err.value)

    def test_duplicate_prediction(self):
        a_i, a_p = make_split("a", 3, 4)
        with pytest.raises(DuplicatePredictionError):
            evaluate(a_p + [a_p[0]], a_i, splits={"a": [i.id for i in a_i]})

    def test_unknown_instance_in_split(self):
        a_i, a_p = make_split("a", 3, 4)
        with pytest.raises(MissingPredictionError):
            evaluate(a_p, a_i, splits={"a": ["ghost"]})

    def test_gold_mismatch_detected(self):
        a_i, a_p = make_split("a", 3, 4)
        m2 = [PredictionRecord(p.instance_id, p.gold, p.predicted, "m2") for p in a_p]
        m2[0] = PredictionRecord(m2[0].instance_id, "neutral", "neutral", "m2")
        with pytest.raises(ValueError, match="gold"):
            evaluate(a_p + m2, a_i, splits={"a": [i.id for i in a_i]},
                     models=["m", "m2"])

    def test_per_class_breakdown_sums(self):
        a_i, a_p = make_split("a", 420, 638)
        res = evaluate(a_p, a_i, splits={"a": [i.id for i in a_i]}).result("m", "a")
        assert sum(t for _, _, t in res.per_class) == res.total
        assert sum(c for _, c, _ in res.per_class) == res.correct


class TestEvaluateRevnon:
    def test_subset_accuracy(self):
        rn_i, rn_p = make_split("rn", 293, 444, source="revnon")
        other_i, other_p = make_split("x", 4, 4)
        report = evaluate_revnon(rn_p + other_p, rn_i + other_i)
        res = report.result("m", "revnon")
        assert (res.correct, res.total) == (293, 444)
        assert str(res.accuracy_display()) == "65.99"

    def test_all_correct(self):
        rn_i, rn_p = make_split("rn", 10, 10, source="synthetic-revnon")
        report = evaluate_revnon(rn_p, rn_i)
        assert str(report.result("m", "revnon").accuracy_display()) == "100.00"

    def test_empty_subset(self):
        a_i, a_p = make_split("a", 3, 4)
        with pytest.raises(EmptySubsetError):
            evaluate_revnon(a_p, a_i)


class TestCaseTable:
    def _cases(self):
        ids = ["1053:13_0", "1053:13_1", "1053:13_2"]
        instances = [
            Instance(id=i, sentence="the slot is loose .", aspect="slot",
                     polarity="negative", source="revnon")
            for i in ids
        ]
        good = [PredictionRecord(i, "negative", "negative", "senta") for i in ids]
        bad = [
            PredictionRecord(ids[0], "negative", "positive", "base"),
            PredictionRecord(ids[1], "negative", "positive", "base"),
            PredictionRecord(ids[2], "negative", "negative", "base"),
        ]
        return ids, instances, good, bad

    def test_mark_patterns(self):
        ids, instances, good, bad = self._cases()
        table = case_table(good + bad, ids, instances, models=["base", "senta"])
        assert table.marks == ((False, False, True), (True, True, True))

    def test_rendered_marks(self):
        ids, instances, good, bad = self._cases()
        table = case_table(good + bad, ids, instances, models=["base", "senta"])
        rn_i, rn_p = make_split("rn", 1, 2, model="base", source="revnon")
        report = evaluate(rn_p, rn_i, splits={"revnon": [i.id for i in rn_i]},
                          models=["base"])
        text = render_report(with_case_table(report, table), "text").decode()
        rows = {
            line.split()[0]: "".join(c for c in line if c in "✓✗")
            for line in text.splitlines()
            if line.startswith(("base", "senta"))
        }
        assert rows == {"base": "✗✗✓", "senta": "✓✓✓"}

    def test_empty_case_ids(self):
        _, _, good, _ = self._cases()
        table = case_table(good, [], models=["senta"])
        assert table.case_ids == ()
        assert table.marks == ((),)

    def test_missing_case_prediction(self):
        ids, instances, good, _ = self._cases()
        with pytest.raises(MissingPredictionError):
            case_table(good, ids + ["other"], instances, models=["senta"])


class TestRendering:
    def _report(self):
        a_i, a_p = make_split("a", 479, 638)
        b_i, b_p = make_split("b", 301, 638)
        a_i2, a_p2 = make_split("a", 400, 638, model="m2", start=0)
        b_i2, b_p2 = make_split("b", 399, 638, model="m2", start=0)
        return evaluate(
            a_p + b_p + a_p2 + b_p2,
            a_i + b_i,
            splits={"ori": [i.id for i in a_i], "change": [i.id for i in b_i]},
            drop_pairs=[("ori", "change")],
            models=["m", "m2"],
        )

    def test_text_has_one_row_per_model(self):
        text = render_report(self._report(), "text").decode()
        lines = [l for l in text.splitlines() if l.startswith(("m ", "m2"))]
        assert len(lines) == 2
        assert "75.08" in lines[0]

    def test_structured_round_trip(self):
        report = self._report()
        again = parse_report(render_report(report, "structured"))
        assert again == report

    def test_round_trip_with_case_table(self):
        table = CaseTable(models=("m",), case_ids=("c1", "c2"), marks=((True, False),))
        report = with_case_table(self._report(), table)
        assert parse_report(render_report(report, "structured")) == report

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            render_report(self._report(), "yaml")

    def test_golden_text_rendering(self):
        # Reviewed once by hand and frozen; guards layout drift.
        a_i, a_p = make_split("ori", 3, 4)
        b_i, b_p = make_split("chg", 2, 4)
        report = evaluate(
            a_p + b_p, a_i + b_i,
            splits={"ori": [i.id for i in a_i], "chg": [i.id for i in b_i]},
            drop_pairs=[("ori", "chg")],
        )
        expected = (
            "model  ori    chg\n"
            "-----  -----  --------------\n"
            "m      75.00  50.00 (↓25.00)\n"
            "\n"
            "per-class accuracy (correct/total)\n"
            "  m / ori: positive: 2/2, negative: 1/2, neutral: 0/0\n"
            "  m / chg: positive: 1/2, negative: 1/2, neutral: 0/0\n"
        )
        assert render_report(report, "text").decode() == expected


class TestPredictionFiles:
    def test_round_trip(self, tmp_path):
        _, preds = make_split("a", 3, 5)
        path = tmp_path / "preds.jsonl"
        write_predictions(preds, path)
        assert read_predictions(path) == preds
        first = path.read_text().splitlines()[0]
        assert set(("instanceId", "gold", "predicted", "modelName")) <= set(
            __import__("json").loads(first)
        )
