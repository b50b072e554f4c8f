import warnings

import pytest

from riskplan.bench import (PLAN_BUDGET_MS, SCALING_LIMIT, STACK_BUDGET_MS, BenchRow, Timing, bench, budget_warnings,
                            format_table, scaling_ratio, synthetic_objects)

ITER = 50


@pytest.fixture(scope="module")
def default_rows():
    return bench(grids=[(240, 80)], objects=[10], workers=[1, 4], iterations=ITER)


def test_default_config_equal_across_workers(default_rows):
    assert [r.workers for r in default_rows] == [1, 4]
    for r in default_rows:
        assert r.equal
        assert r.stack.n == ITER and r.plan.n == ITER
        assert 0 < r.stack.median <= r.stack.p95


def test_budgets_are_soft(default_rows):
    # the latency budget is reported, never gated
    for w in budget_warnings(default_rows):
        warnings.warn(w)
    r = default_rows[0]
    print(f"stack median {r.stack.median:.1f} ms (budget {STACK_BUDGET_MS:.0f}), "
          f"plan median {r.plan.median:.1f} ms (budget {PLAN_BUDGET_MS:.0f})")


def test_tiny_grid_floor(default_rows):
    (tiny,) = bench(grids=[(1, 1)], objects=[10], workers=[1], iterations=ITER)
    assert tiny.equal
    assert tiny.stack.median <= 0.25 * default_rows[0].stack.median


def test_doubling_cells_scales_sublinearly_enough():
    assert scaling_ratio(240, 80, 10, ITER) <= SCALING_LIMIT


def test_budget_warnings_only_for_default_config():
    slow = Timing(500.0, 600.0, 50)
    fast = Timing(1.0, 2.0, 50)
    rows = [BenchRow(240, 80, 10, 1, slow, slow, True), BenchRow(480, 80, 10, 1, slow, slow, True),
            BenchRow(240, 80, 10, 2, fast, fast, True)]
    out = budget_warnings(rows)
    assert len(out) == 2
    assert all("1 workers" in w for w in out)


def test_table_format():
    t = Timing(1.0, 2.0, 3)
    text = format_table([BenchRow(240, 80, 10, 1, t, t, True), BenchRow(1, 1, 5, 2, t, t, False)])
    lines = text.splitlines()
    assert len(lines) == 3
    assert lines[1].split()[0] == "240x80" and lines[1].endswith("yes")
    assert lines[2].endswith("NO")


def test_synthetic_objects_deterministic():
    assert synthetic_objects(10) == synthetic_objects(10)
    assert len({o.id for o in synthetic_objects(25)}) == 25


def test_bench_rejects_zero_iterations():
    with pytest.raises(ValueError):
        bench(iterations=0)
