import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on path so we can import tfdmnet
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from tfdmnet.verify import (  # noqa: E402
    CheckResult,
    check_bn_correspondence,
    check_conv_oracle,
    check_cross_correlation,
    check_dft_oracle,
    check_dropout_statistics,
    check_eml_interior,
    check_fixation,
    check_gradients,
    check_parseval,
    check_round_trip,
    run_suite,
)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.mark.parametrize("check", [
    check_cross_correlation,
    check_eml_interior,
    check_conv_oracle,
    check_parseval,
    check_bn_correspondence,
    check_dft_oracle,
    check_round_trip,
])
def test_oracle_checks_pass(rng, check):
    result = check(rng)
    assert result.passed, result.line()


@pytest.mark.parametrize("k", [1, 3, 5])
def test_eml_interior_for_several_filter_sizes(rng, k):
    assert check_eml_interior(rng, size=9, k=k).passed


def test_gradients_and_fixation_checks_pass(rng):
    assert check_gradients(rng, seed=0, full=False).passed
    result = check_fixation(rng, seed=0, full=False)
    assert result.passed, result.line()


def test_dropout_statistics(rng):
    results = check_dropout_statistics(rng, draws=200_000)
    assert [r.name for r in results] == ["dropout_mean", "dropout_std", "dropout_mass_0.5_1.5"]
    assert all(r.passed for r in results), [r.line() for r in results]


def test_cross_correlation_rejects_a_product_without_conjugate(rng):
    def plain_product(a, b):
        return a.to_complex() * b.to_complex()

    result = check_cross_correlation(rng, pairs=5, max_size=8, product=plain_product)
    assert not result.passed
    assert result.line().startswith("FAIL cross_correlation")


def test_check_result_line_and_non_finite():
    ok = CheckResult("x", 1e-6, 1e-4, "detail")
    assert ok.line() == "PASS x measured=1.000e-06 tolerance=1e-04 detail"
    assert not CheckResult("y", float("nan"), 1.0).passed


def test_run_suite_fast_reports_progress():
    seen = []
    results = run_suite("fast", seed=1, progress=seen.append)
    assert seen == results
    assert len(results) == 12
    assert all(r.passed for r in results), [r.line() for r in results if not r.passed]


def test_run_suite_unknown_level():
    with pytest.raises(ValueError, match="unknown level"):
        run_suite("exhaustive")
