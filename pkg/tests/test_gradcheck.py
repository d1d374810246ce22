"""The finite-difference checker itself: primitive targets, the degenerate
layer-norm case, and the full head + loss configuration."""

import time

import numpy as np
import pytest

from framepool.errors import ParameterError
from framepool.gradcheck import (
    grad_check_dropout,
    grad_check_full,
    grad_check_layer_norm,
    grad_check_linear,
    grad_check_softmax,
    run_grad_check,
)


def test_linear_passes_tight_tolerance():
    report = grad_check_linear(tolerance=1e-6)
    assert report.passed
    assert all(e.status == "pass" for e in report.entries)


def test_layer_norm_passes():
    report = grad_check_layer_norm()
    assert report.passed


def test_layer_norm_zero_variance_row_flagged_skipped():
    x = np.array([
        [0.4, -1.0, 2.0, 0.1],
        [5.0, 5.0, 5.0, 5.0],  # zero variance: non-differentiable point
        [1.0, 0.0, -1.0, 0.5],
    ])
    report = grad_check_layer_norm(x=x)
    statuses = {e.tensor: e.status for e in report.entries}
    assert statuses["x[degenerate rows]"] == "skipped"
    assert statuses["x[nondegenerate rows]"] == "pass"
    assert report.passed


def test_layer_norm_all_rows_degenerate():
    x = np.full((2, 4), 3.0)
    report = grad_check_layer_norm(x=x)
    statuses = {e.tensor: e.status for e in report.entries}
    assert statuses["x"] == "skipped"


def test_softmax_and_dropout_pass():
    assert grad_check_softmax().passed
    assert grad_check_dropout().passed


def test_full_head_and_loss_passes_at_1e4_under_10s():
    start = time.perf_counter()
    report = grad_check_full(d=8, d_p=8, f=5, b=4, tolerance=1e-4)
    elapsed = time.perf_counter() - start
    assert report.passed, [e.line() for e in report.entries if e.status == "fail"]
    checked = [e.tensor for e in report.entries]
    assert "log_lambda" in checked
    assert len(checked) == 19  # 10 weight/bias tensors + 8 LN tensors + lambda
    assert elapsed < 10.0


def test_run_grad_check_dispatch():
    assert run_grad_check("softmax").passed
    with pytest.raises(ParameterError):
        run_grad_check("nonsense")


def test_report_lines_format():
    report = grad_check_linear()
    lines = list(report.lines())
    assert lines[0].startswith("gradient check [linear]")
    assert lines[-1] == "result: PASS"
