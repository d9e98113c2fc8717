"""Acceptance criteria 1-10, one test each, at the stated tolerances and budgets."""

import pytest

from dispersal.acceptance import run_acceptance

LINES: list[str] = []


@pytest.fixture(scope="module")
def acceptance_run():
    run = run_acceptance(seed=0, fast=False)
    LINES[:] = run.lines()
    return {r.number: r for r in run.results}


@pytest.mark.slow
@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(acceptance_run, number):
    result = acceptance_run[number]
    print(result.line())
    failed = [name for name, ok in result.checks.items() if not ok]
    assert not failed, f"criterion {number} failed checks: {failed}; numbers: {result.numbers}"
    if result.budget is not None:
        assert result.elapsed < result.budget
