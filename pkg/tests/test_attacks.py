from types import SimpleNamespace

import pytest

from trigmark.attacks import AttackScenario, default_scenarios, forgery_failure_rate


def fake(kind, rate):
    return SimpleNamespace(scenario=AttackScenario(kind, None if kind != "wrong_noise" else "gaussian"), success_rate=rate)


def test_forgery_failure_rate_examples():
    reports = [fake("benchmark", 1.0), fake("cross_model", 0.25), fake("cross_module", 0.0)]
    assert forgery_failure_rate(reports) == pytest.approx(0.875)
    assert forgery_failure_rate([fake("wrong_noise", 0.0)]) == 1.0
    with pytest.raises(ValueError):
        forgery_failure_rate([fake("benchmark", 1.0)])


def test_default_scenarios_cover_every_variant():
    labels = [s.label for s in default_scenarios(2, 5)]
    assert len(labels) == len(set(labels)) == 11
    kinds = {s.kind for s in default_scenarios()}
    assert kinds == {"benchmark", "wrong_dataset", "wrong_noise", "wrong_shape", "wrong_position",
                     "cross_model", "cross_module"}


def test_scenario_validation():
    with pytest.raises(ValueError):
        AttackScenario("teleport")
    a = AttackScenario("wrong_shape", "circle", 3, 4)
    assert a.trial_seed(0) != a.trial_seed(1)
