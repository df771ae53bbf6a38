import threading
import time

import pytest

from utils import Budget, format_interval, run_ordered


class TestBudget:
    def test_zero_is_expired_immediately(self):
        assert Budget(0).expired()
        assert Budget(0).remaining() == 0.0

    def test_unbounded(self):
        budget = Budget()
        assert not budget.expired()
        assert budget.remaining() is None

    def test_short_budget_runs_out(self):
        budget = Budget(0.01)
        time.sleep(0.02)
        assert budget.expired()
        assert budget.elapsed() >= 0.01


class TestRunOrdered:
    @pytest.mark.parametrize("workers", [1, 4])
    def test_results_follow_submission_order(self, workers):
        def slow_square(n):
            time.sleep(0.001 * (10 - n))
            return n * n

        assert run_ordered(slow_square, list(range(10)), workers) == [n * n for n in range(10)]

    @pytest.mark.parametrize("workers", [1, 3])
    def test_stop_drops_later_results(self, workers):
        assert run_ordered(lambda n: n, list(range(10)), workers, stop=lambda r: r == 4) == [0, 1, 2, 3, 4]

    def test_pool_uses_threads(self):
        seen = set()

        def record(n):
            seen.add(threading.get_ident())
            time.sleep(0.01)
            return n

        run_ordered(record, list(range(6)), workers=3)
        assert len(seen) > 1

    def test_empty_input(self):
        assert run_ordered(lambda n: n, [], workers=4) == []


class TestFormatInterval:
    def test_rounding(self):
        assert format_interval(-0.5, 0.25) == "[-0.5, 0.25]"
        assert format_interval(1 / 3, 2 / 3, digits=2) == "[0.33, 0.67]"
