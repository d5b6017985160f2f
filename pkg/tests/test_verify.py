import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from trigmark.verify import (
    PhaseResult,
    VerificationThresholds,
    calibrate_thresholds,
    decide,
    evaluate_phases,
    phase1,
    phase2,
    verify_trigger,
    verify_triggers,
    xor_bit,
)


def pr(res):
    return PhaseResult(res, 0.0, 100.0, 0.0, "c")


STRICT = {(False, True): 1, (True, True): 0, (False, False): 0, (True, False): 0}


@pytest.mark.parametrize("r1,r2", list(itertools.product([False, True], repeat=2)))
def test_decision_table(r1, r2):
    assert verify_trigger(pr(r1), pr(r2)) == STRICT[(r1, r2)]
    assert xor_bit(pr(r1), pr(r2)) == int(r1 != r2)


def test_decide_examples():
    assert decide([1] * 16) is True
    assert decide([0] * 16) is False
    assert decide([1] * 7 + [0] * 9, 0.5) is False
    assert decide([1] * 8 + [0] * 8, 0.5) is True
    with pytest.raises(ValueError):
        decide([])
    with pytest.raises(ValueError):
        decide([1], 0.0)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=64), st.floats(0.01, 1.0))
def test_decide_matches_fraction(bits, thr):
    assert decide(bits, thr) == (sum(bits) / len(bits) >= thr)


def test_thresholds_validation():
    with pytest.raises(ValueError):
        VerificationThresholds(0.1, 0.2)
    with pytest.raises(ValueError):
        VerificationThresholds(0.3, 0.1, "other")


def test_calibration(small_encoder, owner_module, owner_set, small_corpus):
    clean = small_corpus[::10]
    th = calibrate_thresholds(small_encoder, owner_module, clean, owner_set)
    assert th.sigma > th.tau > 0
    doubled = calibrate_thresholds(small_encoder, owner_module, small_corpus[::5], owner_set)
    assert abs(doubled.sigma - th.sigma) <= 0.1 * th.sigma
    with pytest.raises(ValueError):
        calibrate_thresholds(small_encoder, owner_module, clean[:5], owner_set)
    # triggers as "clean" pairs force the two distributions to overlap
    fake = [(r.adversarial_image, r.text) for r in owner_set.accepted] * 2
    with pytest.raises(ValueError, match="overlap"):
        calibrate_thresholds(small_encoder, owner_module, fake, owner_set)


def test_phase_examples(small_encoder, owner_module, owner_set, small_corpus, gallery):
    th = calibrate_thresholds(small_encoder, owner_module, small_corpus[::10], owner_set)
    for rec in owner_set.accepted:
        assert phase1(small_encoder, rec, gallery, th).res is False
        assert phase2(small_encoder, owner_module, rec, gallery, th).res is True
    with pytest.raises(ValueError):
        phase1(small_encoder, owner_set.accepted[0], [], th)


def test_modes_agree_on_owner_set(small_encoder, owner_module, owner_set, small_corpus, gallery):
    th = calibrate_thresholds(small_encoder, owner_module, small_corpus[::10], owner_set)
    recs = owner_set.accepted
    images = [r.adversarial_image for r in recs] + [r.basic_image for r in recs]
    truth = [r.text.id for r in recs] * 2
    b1, b2 = evaluate_phases(small_encoder, owner_module, images, truth, gallery, th)
    dist = VerificationThresholds(th.sigma, th.tau, "distance")
    d1, d2 = evaluate_phases(small_encoder, owner_module, images, truth, gallery, dist)
    agree = [a.res == c.res for a, c in zip(b1 + b2, d1 + d2)]
    assert sum(agree) / len(agree) >= 0.9


def test_report(small_encoder, owner_module, owner_set, small_corpus, gallery):
    th = calibrate_thresholds(small_encoder, owner_module, small_corpus[::10], owner_set)
    rep = verify_triggers(small_encoder, owner_module, owner_set, gallery, th)
    assert rep.verdict and rep.fraction == 1.0
    assert len(rep.trigger_rows) == len(rep.basic_rows) == len(owner_set.accepted)
    s = rep.summary()
    assert s["benign_preserved"] >= 0.95
    doc = json.loads(rep.to_machine())
    assert doc["summary"]["verdict"] is True
    table = rep.to_table()
    assert table.splitlines()[0].startswith("type\t") and "verdict" in table.splitlines()[-1]
    with pytest.raises(ValueError):
        verify_triggers(small_encoder, owner_module, owner_set, gallery[:1], th)
