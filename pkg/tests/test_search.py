from dataclasses import replace

import numpy as np
import pytest

from src.core import SplitSpec, derive_seed, filter_classes, select_channels
from src.dsp import FilterSpec, RmsParams
from src.errors import ChannelError, ConfigError, DataContractError, NoUsableNormalizer
from src.features import build_design_matrix, extract_profiles
from src.search import (
    Frontier,
    SearchConfig,
    SubsetResult,
    build_frontier,
    check_compatible,
    cross_condition_eval,
    cross_condition_matrix,
    derived_seeds,
    enumerate_subsets,
    evaluate_subset,
    format_summary,
    rank_channels,
    search_all,
    write_frontier_csv,
    write_results_csv,
)
from src.svm import accuracy, train_multiclass
from src.synth import generate_dataset, load_preset

from .conftest import make_profile, quiet_config, short_config

CFG = SearchConfig(repeats=3, split=SplitSpec(0.75, seed=1))


@pytest.fixture(scope="module")
def two_channel_profiles(two_channel_dataset):
    return extract_profiles(two_channel_dataset, FilterSpec(), RmsParams())


def result(subset, accuracy_value, normalizer=None):
    return SubsetResult(tuple(subset), subset[0] if normalizer is None else normalizer, accuracy_value)


class TestEnumerate:
    def test_six_choose_two(self):
        subsets = enumerate_subsets(6, 2)
        assert len(subsets) == 15
        assert subsets[0] == (0, 1)
        assert subsets[-1] == (4, 5)

    def test_singletons(self):
        assert enumerate_subsets(4, 1) == [(0,), (1,), (2,), (3,)]

    def test_full_set(self):
        assert enumerate_subsets(6, 6) == [(0, 1, 2, 3, 4, 5)]

    def test_strictly_increasing(self):
        assert all(list(s) == sorted(set(s)) for s in enumerate_subsets(7, 3))

    @pytest.mark.parametrize("k", [0, 7])
    def test_size_out_of_range(self, k):
        with pytest.raises(ConfigError):
            enumerate_subsets(6, k)


class TestEvaluateSubset:
    def test_informative_pair(self, two_channel_dataset, two_channel_profiles):
        r = evaluate_subset(two_channel_dataset, [2, 3], CFG, two_channel_profiles)
        assert r.accuracy >= 0.95
        assert r.normalizer in (2, 3)
        assert set(r.per_normalizer) == {2, 3}

    def test_flat_pair_is_near_chance(self, two_channel_dataset, two_channel_profiles):
        r = evaluate_subset(two_channel_dataset, [0, 1], CFG, two_channel_profiles)
        assert r.accuracy <= 0.45

    def test_singleton_reports_its_channel(self, two_channel_dataset, two_channel_profiles):
        r = evaluate_subset(two_channel_dataset, [3], CFG, two_channel_profiles)
        assert r.normalizer == 3
        assert r.k == 1

    def test_repeats_recorded(self, two_channel_dataset, two_channel_profiles):
        r = evaluate_subset(two_channel_dataset, [1, 2], CFG, two_channel_profiles)
        assert r.repeats == 3
        assert r.accuracy_sd >= 0

    def test_no_usable_normalizer(self):
        profile = make_profile([[0, 0, 50], [0, 0, 30]])
        ds = generate_dataset(quiet_config(), profile, trials_per_class=3, seed=2)
        with pytest.raises(NoUsableNormalizer):
            evaluate_subset(ds, [0, 1], CFG)

    def test_invalid_subset(self, two_channel_dataset, two_channel_profiles):
        with pytest.raises(ChannelError):
            evaluate_subset(two_channel_dataset, [3, 1], CFG, two_channel_profiles)


class TestSearchAll:
    @pytest.fixture(scope="class")
    def searched(self, two_channel_dataset, two_channel_profiles):
        cfg = replace(CFG, max_k=2, repeats=2)
        return search_all(two_channel_dataset, cfg, profiles=two_channel_profiles)

    def test_result_count_and_order(self, searched):
        results, _ = searched
        assert len(results) == 4 + 6
        assert [r.subset for r in results][:5] == [(0,), (1,), (2,), (3,), (0, 1)]

    def test_frontier_is_best_per_k(self, searched):
        results, frontier = searched
        assert sorted(frontier.best) == [1, 2]
        for k in (1, 2):
            assert frontier.accuracy(k) == max(r.accuracy for r in results if r.k == k)

    def test_frontier_picks_ratio_pair(self, searched):
        _, frontier = searched
        assert frontier.best[2].subset == (2, 3)

    def test_independent_of_jobs(self, two_channel_dataset, two_channel_profiles, searched):
        cfg = replace(CFG, max_k=2, repeats=2)
        parallel, _ = search_all(two_channel_dataset, cfg, jobs=2, profiles=two_channel_profiles)
        serial, _ = searched
        assert [(r.subset, r.normalizer, r.accuracy, r.accuracy_sd) for r in parallel] == [
            (r.subset, r.normalizer, r.accuracy, r.accuracy_sd) for r in serial
        ]

    def test_whitelist(self, two_channel_dataset, two_channel_profiles):
        cfg = replace(CFG, subsets=((2, 3), (0,)), repeats=1)
        results, _ = search_all(two_channel_dataset, cfg, profiles=two_channel_profiles)
        assert [r.subset for r in results] == [(0,), (2, 3)]

    def test_max_k_beyond_channels(self, two_channel_dataset, two_channel_profiles):
        with pytest.raises(ConfigError):
            search_all(two_channel_dataset, replace(CFG, max_k=5), profiles=two_channel_profiles)

    def test_max_k_zero_rejected(self):
        with pytest.raises(ConfigError):
            SearchConfig(max_k=0)

    def test_whitelist_emptied_by_max_k(self, two_channel_dataset, two_channel_profiles):
        cfg = replace(CFG, subsets=((2, 3), (0, 1, 2)), max_k=1)
        with pytest.raises(ConfigError, match="no candidate subsets"):
            search_all(two_channel_dataset, cfg, profiles=two_channel_profiles)

    def test_derived_seeds_cover_every_repeat(self, searched):
        results, _ = searched
        cfg = replace(CFG, max_k=2, repeats=2)
        seeds = derived_seeds(results, cfg)
        assert len(seeds) == (4 + 6 * 2) * 2
        assert seeds["2,3;3;1"] == {
            "split": derive_seed(1, "split", 2, 3, 3, 1),
            "svm": derive_seed(1, "svm", 2, 3, 3, 1),
        }


class TestFrontier:
    def test_global_best_prefers_smaller_k_on_ties(self):
        frontier = build_frontier([result([0], 0.5), result([0, 1], 0.9), result([0, 1, 2], 0.9)])
        assert frontier.global_best().k == 2

    def test_optimal_k_within_tolerance(self):
        frontier = build_frontier([result([0], 0.6), result([0, 1], 0.88), result([0, 1, 2], 0.9)])
        assert frontier.optimal_k(0.03) == 2
        assert frontier.optimal_k(0.0) == 3

    def test_first_result_wins_equal_accuracy(self):
        frontier = build_frontier([result([0, 1], 0.8), result([0, 2], 0.8)])
        assert frontier.best[2].subset == (0, 1)

    def test_rank_channels(self):
        results = [result([0], 0.4), result([1], 0.7), result([2], 0.6), result([1, 2], 0.9), result([0, 1], 0.5)]
        frontier = build_frontier(results)
        # channel 1 sits in both frontier subsets
        assert rank_channels(results, frontier)[0] == 1
        assert rank_channels(results, frontier) == [1, 2, 0]


class TestCrossCondition:
    def test_same_condition_equals_training_accuracy(self, two_channel_dataset, two_channel_profiles):
        ds = two_channel_dataset
        got = cross_condition_eval(ds, ds, [2, 3], CFG, 2, two_channel_profiles, two_channel_profiles)
        design = build_design_matrix(ds, [2, 3], 2, profiles=two_channel_profiles)
        model = train_multiclass(design.X, design.y, replace(CFG.svm, seed=derive_seed(CFG.seed, "cross", 2, 3, 2)))
        assert got == accuracy(model, design.X, design.y)
        assert got >= 0.95

    def test_normalizer_defaults_to_first_channel(self, two_channel_dataset, two_channel_profiles):
        ds = two_channel_dataset
        a = cross_condition_eval(ds, ds, [2, 3], CFG, None, two_channel_profiles, two_channel_profiles)
        b = cross_condition_eval(ds, ds, [2, 3], CFG, 2, two_channel_profiles, two_channel_profiles)
        assert a == b

    def test_channel_mismatch(self, two_channel_dataset):
        with pytest.raises(ChannelError):
            check_compatible(two_channel_dataset, select_channels(two_channel_dataset, [0, 1, 2]))

    def test_class_mismatch(self, two_channel_dataset):
        fewer = filter_classes(two_channel_dataset, two_channel_dataset.classes[:3])
        with pytest.raises(DataContractError):
            check_compatible(two_channel_dataset, fewer)

    def test_postures_match_by_action(self):
        preset = load_preset("fingers5-posture")
        a = generate_dataset(short_config(), preset.at_posture(0), trials_per_class=2, seed=1)
        b = generate_dataset(short_config(), preset.at_posture(90), trials_per_class=2, seed=2)
        assert a.classes != b.classes
        check_compatible(a, b)

    def test_matrix(self, two_channel_dataset):
        other = generate_dataset(short_config(), make_profile(
            [[30, 30, 15, 75], [30, 30, 30, 60], [30, 30, 60, 30], [30, 30, 75, 15]]
        ), trials_per_class=8, seed=99)
        names, matrix = cross_condition_matrix({"a": two_channel_dataset, "b": other}, [2, 3], CFG, 2)
        assert names == ["a", "b"]
        assert matrix.shape == (2, 2)
        np.testing.assert_array_equal(np.diag(matrix), matrix.max(axis=1))
        assert matrix.min() >= 0.75


class TestReports:
    results = [
        SubsetResult((2,), 2, 0.5, 0.1, 3),
        SubsetResult((2, 3), 3, 0.97, 0.02, 3),
    ]

    def test_results_csv(self, tmp_path):
        lines = write_results_csv(tmp_path / "results.csv", self.results).read_text().splitlines()
        assert lines[0] == "subset,normalizer,k,accuracy_mean,accuracy_sd,repeats"
        assert lines[2] == "2;3,3,2,0.970000,0.020000,3"

    def test_frontier_csv(self, tmp_path):
        path = write_frontier_csv(tmp_path / "frontier.csv", build_frontier(self.results))
        assert path.read_text().splitlines() == [
            "k,best_subset,best_normalizer,accuracy",
            "1,2,2,0.500000",
            "2,2;3,3,0.970000",
        ]

    def test_summary_names_placements(self):
        placements = ["a", "b", "forearm-#3", "forearm-#4"]
        text = format_summary(self.results, build_frontier(self.results), placements)
        assert "Global best: k=2 accuracy 0.970" in text
        assert "3 (forearm-#4)" in text


def test_frontier_accuracy_lookup():
    frontier = Frontier(best={1: result([4], 0.25)})
    assert frontier.accuracy(1) == 0.25
