"""Acceptance criteria A1..A10, one test each.

Every test prints a single "A<k> PASS|FAIL (seconds) key=value ..." line,
shown even under output capture, and then asserts the criterion together
with its runtime budget.
"""
import pytest

from reslim.acceptance import run_criterion

BUDGET_SECONDS = {"A1": 30, "A2": 60, "A3": 30, "A4": 120, "A5": 120, "A6": 10, "A7": 300,
                  "A8": 10, "A9": 900, "A10": 300}


def run_and_report(cid, capsys):
    res = run_criterion(cid)
    with capsys.disabled():
        print("\n" + res.line())
    return res


def test_a1_occupation_density_formula(capsys):
    res = run_and_report("A1", capsys)
    assert res.summary["max_error"] < 1e-9
    assert res.passed and res.seconds < BUDGET_SECONDS["A1"]


def test_a2_potential_identities(capsys):
    res = run_and_report("A2", capsys)
    s = res.summary
    assert s["u1_error"] <= 1e-12
    assert abs(s["laplace_mc"] - s["laplace_exact"]) <= 3 * s["laplace_se"]
    assert s["commute_max_rel_error"] < 1e-8
    assert res.passed and res.seconds < BUDGET_SECONDS["A2"]


def test_a3_potential_inequality_and_quarter_power(capsys):
    res = run_and_report("A3", capsys)
    assert res.summary["violations"] == 0 and res.summary["networks"] == 200
    assert res.passed and res.seconds < BUDGET_SECONDS["A3"]


def test_a4_covering_numbers(capsys):
    res = run_and_report("A4", capsys)
    s = res.summary
    assert s["cover_mismatches"] == 0 and s["lemma_violations"] == 0
    assert s["sequence_two_point"] and s["sequence_collapsing"] and s["sequence_triangle"]
    assert res.passed and res.seconds < BUDGET_SECONDS["A4"]


def test_a5_ghp_tree_bounds(capsys):
    res = run_and_report("A5", capsys)
    assert res.summary["failures"] == 0
    assert res.summary["trees"] == 100 and res.summary["excursion_pairs"] == 50
    assert res.passed and res.seconds < BUDGET_SECONDS["A5"]


def test_a6_gw_sampler_exactness(capsys):
    res = run_and_report("A6", capsys)
    assert res.summary["p_value"] > 0.01 and res.summary["sizes_ok"]
    assert res.summary["path"] + res.summary["cherry"] == 10_000
    assert res.passed and res.seconds < BUDGET_SECONDS["A6"]


def test_a7_equicontinuity_bounds(capsys):
    res = run_and_report("A7", capsys)
    assert res.summary["replicas"] == 10_000 and res.summary["all_hold"]
    assert res.passed and res.seconds < BUDGET_SECONDS["A7"]


def test_a8_skorokhod_metric(capsys):
    res = run_and_report("A8", capsys)
    s = res.summary
    assert s["self_distance"] == 0
    assert s["constant_paths"] == pytest.approx(0.2, abs=1e-9)
    assert s["lemma_cases"] > 0 and s["lemma_failures"] == 0
    assert res.passed and res.seconds < BUDGET_SECONDS["A8"]


def test_a9_flagship_convergence_trend(capsys):
    res = run_and_report("A9", capsys)
    medians = list(res.summary["medians"].values())
    assert all(a > b for a, b in zip(medians, medians[1:]))
    assert res.summary["tail_nonincreasing"]
    assert res.passed and res.seconds < BUDGET_SECONDS["A9"]


def test_a10_wilson_ust(capsys):
    res = run_and_report("A10", capsys)
    assert res.summary["p_value"] > 0.01 and res.summary["invariants_ok"]
    assert sum(res.summary["triangle_counts"]) == 30_000
    assert res.passed and res.seconds < BUDGET_SECONDS["A10"]
