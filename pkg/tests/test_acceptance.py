"""End-to-end checks on the seeded synthetic scenarios. Run with `pytest -m slow`."""

import pytest

from src.acceptance import (
    build_condition,
    indistinguishable_classes,
    posture_transfer,
    separable_fingers,
)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def fingers():
    return separable_fingers(jobs=2)


class TestSeparableFingers:
    def test_best_subset_accuracy(self, fingers):
        assert fingers.best.accuracy >= 0.95

    def test_notch_ablation_costs_accuracy(self, fingers):
        assert fingers.ablation_drop >= 0.10

    def test_frontier_plateaus_after_informative_channels(self, fingers):
        assert sorted(fingers.frontier.best) == [4, 5, 6]
        assert fingers.plateau_spread(4) <= 0.03

    def test_optimal_k(self, fingers):
        assert fingers.frontier.optimal_k(0.03) == 4


def test_adding_informative_channel_does_not_hurt():
    condition = build_condition("fingers4", trials_per_class=30, jobs=2)
    flat = condition.evaluate((0, 5)).accuracy
    assert condition.evaluate((0, 3, 5)).accuracy >= flat - 0.05


def test_identical_gain_rows_are_at_chance():
    assert 0.35 <= indistinguishable_classes(jobs=2).accuracy <= 0.65


def test_accuracy_falls_with_posture_distance():
    acc = posture_transfer(jobs=2)
    assert acc[0] >= acc[90] >= acc[180]


def test_reports_do_not_depend_on_jobs(tmp_path):
    separable_fingers(trials_per_class=12, jobs=1, out_dir=tmp_path / "serial")
    separable_fingers(trials_per_class=12, jobs=3, out_dir=tmp_path / "parallel")
    for name in ("fingers4-results.csv", "fingers4-frontier.csv", "fingers4-ablation.csv"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()
