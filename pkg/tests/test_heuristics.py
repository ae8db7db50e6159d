import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import garmseg as g
from garmseg.body import encode_body
from garmseg.errors import ValidationError
from garmseg.heuristics import (body_part_filter, default_rules, load_rules,
                                majority_vote, relabel, save_rules)
from garmseg.toybody import PART_NAMES, build_toy_body

TAX = g.DEFAULT_TAXONOMY
N_CLASSES = TAX.num_classes


@pytest.fixture(scope="module")
def rules():
    model, parts = build_toy_body()
    return default_rules(parts, PART_NAMES)


@pytest.fixture(scope="module")
def scan_setup():
    scan = g.generate(g.SynthConfig(
        seed=21, n_points=500, garments=("T-shirt", "Pants", "Shoes", "Hair")))
    model, parts = build_toy_body()
    feats = encode_body(scan, model)
    graph = g.build_knn_graph(scan.points, 8)
    return scan, feats, graph


class TestBodyPartFilter:
    def test_clean_labels_unchanged(self, scan_setup, rules):
        scan, feats, graph = scan_setup
        cleaned, changed = body_part_filter(scan.labels, feats, rules, graph)
        assert changed == 0
        assert np.array_equal(cleaned, scan.labels)

    def test_tshirt_on_feet_removed(self, scan_setup, rules):
        scan, feats, graph = scan_setup
        foot_region = np.asarray(rules["regions"]["feet"])
        on_feet = np.isin(feats.vertex_indices, foot_region)
        corrupted = scan.labels.copy()
        victims = np.flatnonzero(on_feet)[:5]
        corrupted[victims] = TAX.index("T-shirt")
        cleaned, changed = body_part_filter(corrupted, feats, rules, graph)
        assert changed == len(victims)
        assert all(TAX.classes[cleaned[v]] not in
                   rules["forbidden"]["feet"] for v in victims)

    def test_injected_violations_all_removed(self, scan_setup, rules):
        scan, feats, graph = scan_setup
        rng = np.random.default_rng(3)
        corrupted = scan.labels.copy()
        # corrupt interior points (all neighbors share their label) so the
        # nearest allowed label is unambiguously the original one
        interior = np.flatnonzero(
            (scan.labels[graph.neighbors] ==
             scan.labels[:, None]).all(axis=1))
        foot_region = np.asarray(rules["regions"]["feet"])
        on_feet = interior[np.isin(feats.vertex_indices[interior],
                                   foot_region)]
        head_region = np.asarray(rules["regions"]["head"])
        on_head = interior[np.isin(feats.vertex_indices[interior],
                                   head_region)]
        corrupted[rng.choice(on_feet, 6, replace=False)] = TAX.index("Coat")
        corrupted[rng.choice(on_head, 4, replace=False)] = TAX.index("Shoes")
        cleaned, changed = body_part_filter(corrupted, feats, rules, graph)
        assert changed == 10
        _, miou = g.iou(cleaned, scan.labels, N_CLASSES)
        assert miou == 1.0  # clean scan fully restored

    def test_idempotent(self, scan_setup, rules):
        scan, feats, graph = scan_setup
        rng = np.random.default_rng(4)
        corrupted = scan.labels.copy()
        corrupted[rng.choice(scan.num_points, 30, replace=False)] = \
            TAX.index("Hat")
        once, _ = body_part_filter(corrupted, feats, rules, graph)
        twice, changed = body_part_filter(once, feats, rules, graph)
        assert changed == 0
        assert np.array_equal(once, twice)

    def test_unknown_region_rejected(self, scan_setup):
        scan, feats, graph = scan_setup
        bad = {"schema": 1, "regions": {"feet": [0]},
               "forbidden": {"wings": ["Hat"]}}
        with pytest.raises(ValidationError, match="wings"):
            body_part_filter(scan.labels, feats, bad, graph)

    def test_never_produces_out_of_range(self, scan_setup, rules):
        scan, feats, graph = scan_setup
        rng = np.random.default_rng(5)
        corrupted = scan.labels.copy()
        corrupted[rng.choice(scan.num_points, 50, replace=False)] = \
            TAX.index("Skirts")
        cleaned, _ = body_part_filter(corrupted, feats, rules, graph)
        assert cleaned.min() >= 0 and cleaned.max() < N_CLASSES


class TestMajorityVote:
    def test_modal_class_wins(self):
        labels = np.array([7, 7, 7, 16, 16], dtype=np.int64)
        voted = majority_vote(labels, np.arange(5), N_CLASSES)
        assert np.all(voted == 7)

    def test_tie_breaks_to_lowest_id(self):
        labels = np.array([7, 17, 7, 17], dtype=np.int64)
        voted = majority_vote(labels, np.arange(4), N_CLASSES)
        assert np.all(voted == 7)

    def test_untouched_outside_selection(self):
        labels = np.array([1, 2, 3, 4, 5], dtype=np.int64)
        voted = majority_vote(labels, np.array([0, 1]), N_CLASSES)
        assert np.array_equal(voted[2:], labels[2:])

    def test_empty_selection_rejected(self):
        with pytest.raises(ValidationError):
            majority_vote(np.array([1, 2]), np.array([], dtype=np.int64))

    @settings(max_examples=30, deadline=None)
    @given(st.data())
    def test_matches_histogram_oracle(self, data):
        n = data.draw(st.integers(5, 60))
        labels = np.array(data.draw(st.lists(
            st.integers(0, N_CLASSES - 1), min_size=n, max_size=n)))
        sel_size = data.draw(st.integers(1, n))
        selection = np.array(sorted(data.draw(st.sets(
            st.integers(0, n - 1), min_size=sel_size, max_size=sel_size))))
        voted = majority_vote(labels, selection, N_CLASSES)
        counts = np.bincount(labels[selection], minlength=N_CLASSES)
        expected = min(np.flatnonzero(counts == counts.max()))
        assert np.all(voted[selection] == expected)


class TestRelabel:
    def test_exact_assignment(self):
        labels = np.zeros(10, dtype=np.int64)
        out = relabel(labels, np.array([2, 5]), 9, N_CLASSES)
        assert out[2] == 9 and out[5] == 9
        assert np.array_equal(np.delete(out, [2, 5]),
                              np.delete(labels, [2, 5]))

    def test_full_scan_selection(self):
        labels = np.arange(10) % 3
        out = relabel(labels, np.arange(10), 16, N_CLASSES)
        assert np.all(out == 16)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, N_CLASSES, size=40)
        sel = rng.choice(40, size=10, replace=False)
        once = relabel(labels, sel, 4, N_CLASSES)
        twice = relabel(once, sel, 4, N_CLASSES)
        assert np.array_equal(once, twice)

    def test_invalid_class_rejected(self):
        with pytest.raises(ValidationError):
            relabel(np.zeros(3, dtype=np.int64), np.array([0]), 18, N_CLASSES)

    def test_input_never_mutated(self):
        labels = np.zeros(5, dtype=np.int64)
        relabel(labels, np.array([1]), 3, N_CLASSES)
        assert np.all(labels == 0)


def test_rules_file_roundtrip(tmp_path, rules):
    save_rules(rules, tmp_path / "rules.json")
    back = load_rules(tmp_path / "rules.json")
    assert back == rules


def test_rules_reject_bad_schema(tmp_path, rules):
    bad = dict(rules)
    bad["schema"] = 7
    save_rules(bad, tmp_path / "rules.json")
    with pytest.raises(ValidationError):
        load_rules(tmp_path / "rules.json")
