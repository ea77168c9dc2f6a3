import csv
import random

import numpy as np
import pytest

from sgool.embedder import JointEncoder, embed_condition, embed_image
from sgool.evalmetrics import (
    REPORT_COLUMNS,
    RunRecord,
    alignment_score,
    compare_methods,
    parts_alignment_score,
)


class FixedEncoder:
    """Encoder stand-in whose image embedding is a fixed vector."""

    def __init__(self, cond, image):
        self.cond = np.asarray(cond, float)
        self.image = np.asarray(image, float)


@pytest.fixture
def fixed(monkeypatch):
    import sgool.evalmetrics as em
    from sgool.ndtensor import Tensor

    monkeypatch.setattr(em, "embed_condition", lambda enc, c: Tensor(enc.cond))
    monkeypatch.setattr(em, "embed_image", lambda enc, img: Tensor(enc.image))
    return FixedEncoder


def test_score_bounds(fixed):
    assert alignment_score(fixed([1, 0], [1, 0]), None, 0) == 100.0
    assert alignment_score(fixed([1, 0], [0, 1]), None, 0) == 0.0
    assert alignment_score(fixed([1, 0], [-1, 0]), None, 0) == -100.0


def test_rotation_invariance(fixed, rng):
    a, b = rng.standard_normal(6), rng.standard_normal(6)
    a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
    q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    s0 = alignment_score(fixed(a, b), None, 0)
    s1 = alignment_score(fixed(q @ a, q @ b), None, 0)
    assert s0 == pytest.approx(s1, abs=1e-12)


def test_score_is_cosine(rng):
    enc = JointEncoder.init((1, 16, 16), 8, seed=2)
    img = rng.standard_normal((1, 16, 16))
    expected = 100 * float(embed_condition(enc, 3).data @ embed_image(enc, img).data)
    assert alignment_score(enc, img, 3) == pytest.approx(expected, rel=1e-14)
    assert -100 <= parts_alignment_score(enc, img, 3) <= 100


def test_parts_score_without_salient_region():
    enc = JointEncoder.init((1, 16, 16), 8, seed=2)
    flat = np.full((1, 16, 16), -1.0)
    assert parts_alignment_score(enc, flat, 1) == alignment_score(enc, flat, 1)


def test_trained_scores_prefer_true_class(stack):
    enc = stack.encoder
    own, other = [], []
    for img, c in zip(stack.heldout.images[:64], stack.heldout.labels[:64]):
        scores = [alignment_score(enc, img, k) for k in range(8)]
        own.append(scores[c])
        other.append(np.mean([s for k, s in enumerate(scores) if k != c]))
    assert np.mean(own) > np.mean(other)


def records(method, values, parts=None, seeds=None):
    seeds = range(len(values)) if seeds is None else seeds
    parts = values if parts is None else parts
    return [RunRecord(method, 0, s, float(g), float(p)) for s, g, p in zip(seeds, values, parts)]


def test_identical_methods_zero_difference(rng):
    vals = rng.uniform(-50, 50, 8)
    report = compare_methods(records("global-only", vals) + records("sgool", vals))
    (pair,) = report.pairs
    assert pair.global_median_diff == 0.0 and pair.parts_median_diff == 0.0


def test_dominating_method(rng):
    base = rng.uniform(-50, 50, 10)
    report = compare_methods(records("unoptimized", base) + records("sgool", base + rng.uniform(1, 5, 10)))
    (pair,) = report.pairs
    assert (pair.method, pair.versus) == ("sgool", "unoptimized")
    assert pair.global_median_diff > 0 and pair.parts_median_diff > 0
    assert report.ordering_checks() == {"global: sgool >= unoptimized": True}


def test_full_ordering_checks():
    recs = (records("unoptimized", [1, 2, 3, 4, 5], [1, 1, 1, 1, 1])
            + records("global-only", [5, 6, 7, 8, 9], [0, 0, 0, 0, 0])
            + records("sgool", [4, 5, 6, 7, 8], [3, 3, 3, 3, 3]))
    checks = compare_methods(recs).ordering_checks()
    assert checks == {
        "global: sgool >= unoptimized": True,
        "global: global-only >= unoptimized": True,
        "parts: sgool >= global-only": True,
    }


def test_summary_statistics():
    report = compare_methods(records("sgool", [1, 2, 3, 4, 10]) + records("unoptimized", [0] * 5))
    s = report.methods["sgool"]
    assert s.n == 5
    assert s.global_stats == (4.0, 3.0, 2.0, 4.0)


def test_permutation_invariance(rng):
    recs = (records("unoptimized", rng.normal(size=7), rng.normal(size=7))
            + records("sgool", rng.normal(size=7), rng.normal(size=7)))
    shuffled = recs[:]
    random.Random(0).shuffle(shuffled)
    assert compare_methods(recs).rows() == compare_methods(shuffled).rows()


def test_warnings_for_small_or_unbalanced_sets():
    with pytest.warns(UserWarning, match="only 1 method"):
        report = compare_methods(records("sgool", [1, 2, 3, 4, 5]))
    assert len(report.methods) == 1 and not report.pairs
    with pytest.warns(UserWarning, match="different seeds"):
        report = compare_methods(records("sgool", [1] * 6) + records("unoptimized", [0] * 5))
    assert report.pairs[0].n == 5
    with pytest.warns(UserWarning, match="fewer than 5"):
        compare_methods(records("sgool", [1, 2]) + records("unoptimized", [0, 0]))


def test_csv_and_text(tmp_path, rng):
    recs = records("unoptimized", rng.normal(size=5)) + records("sgool", rng.normal(size=5))
    report = compare_methods(recs)
    report.write_csv(tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == REPORT_COLUMNS
    assert [r[0] for r in rows[1:]] == ["method", "method", "pairwise"]
    text = report.to_text()
    assert "sgool" in text and "ordering global: sgool >= unoptimized" in text
