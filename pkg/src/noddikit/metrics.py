"""Evaluation metrics: mean absolute difference and the paired t-test.

Estimators are compared voxel-wise against a gold standard by the mean
absolute difference (MAD) per quantity, and against each other by a
paired Student t-test on the per-voxel absolute errors.  The two-sided
p-value is computed from the regularized incomplete beta function, so
no lookup tables or plotting stacks are involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import special

QUANTITIES = ("v_ic", "v_iso", "od")


class MetricsError(ValueError):
    """Raised for invalid metric inputs."""


class TTestResult(NamedTuple):
    """Paired t-test outcome.

    ``degenerate`` marks zero-variance differences, where the t
    statistic is conventional: p = 1 for identical samples, p = 0 for
    a constant nonzero shift.
    """

    t: float
    p: float
    degenerate: bool = False


@dataclass(frozen=True)
class EvalReport:
    """Per-quantity MADs and, optionally, the comparison against a
    second estimator on the same voxels."""

    mad: dict
    n: int
    comparator_mad: dict | None = None
    t_stats: dict | None = None
    p_values: dict | None = None
    degenerate: dict | None = None

    def __post_init__(self):
        if self.n < 1:
            raise MetricsError("report needs at least one sample")
        if any(v < 0 for v in self.mad.values()):
            raise MetricsError("MAD must be nonnegative")


def paired_t_test(errors_a, errors_b) -> TTestResult:
    """Two-sided paired Student t-test on matched scalar samples.

    t = mean(d) / (sd(d) / sqrt(n)) on the differences d = a - b with
    the sample (ddof = 1) standard deviation; p comes from the t
    distribution with n - 1 degrees of freedom via the regularized
    incomplete beta function.
    """
    a = np.asarray(errors_a, dtype=float)
    b = np.asarray(errors_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise MetricsError("paired samples must be equal-length vectors")
    n = a.size
    if n < 2:
        raise MetricsError("paired t-test needs n >= 2")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, degenerate=True)
        return TTestResult(t=float(np.sign(mean)) * np.inf, p=0.0,
                           degenerate=True)
    t = mean / (sd / np.sqrt(n))
    nu = n - 1
    # two-sided p = I_x(nu/2, 1/2) at x = nu / (nu + t^2)
    p = float(special.betainc(nu / 2.0, 0.5, nu / (nu + t * t)))
    return TTestResult(t=float(t), p=p, degenerate=False)


def _quantity_arrays(batch) -> dict:
    return {q: np.array([getattr(m, q) for m in batch]) for q in QUANTITIES}


def evaluate(pred, gold, comparator=None) -> EvalReport:
    """MAD of ``pred`` against ``gold``, per quantity.

    With a ``comparator`` (a second prediction list on the same
    voxels), the report also carries the comparator's MADs and a
    paired t-test on the per-voxel absolute errors of the two
    estimators.
    """
    if len(pred) == 0 or len(pred) != len(gold):
        raise MetricsError("prediction and gold lists must be nonempty "
                           "and equal length")
    p_arr = _quantity_arrays(pred)
    g_arr = _quantity_arrays(gold)
    err = {q: np.abs(p_arr[q] - g_arr[q]) for q in QUANTITIES}
    mad = {q: float(err[q].mean()) for q in QUANTITIES}
    if comparator is None:
        return EvalReport(mad=mad, n=len(pred))
    if len(comparator) != len(gold):
        raise MetricsError("comparator length must match gold")
    c_arr = _quantity_arrays(comparator)
    c_err = {q: np.abs(c_arr[q] - g_arr[q]) for q in QUANTITIES}
    tests = {q: paired_t_test(err[q], c_err[q]) for q in QUANTITIES}
    return EvalReport(
        mad=mad, n=len(pred),
        comparator_mad={q: float(c_err[q].mean()) for q in QUANTITIES},
        t_stats={q: tests[q].t for q in QUANTITIES},
        p_values={q: tests[q].p for q in QUANTITIES},
        degenerate={q: tests[q].degenerate for q in QUANTITIES})


def format_report(report: EvalReport) -> str:
    """Flat key=value text rendering, one statistic per line."""
    lines = [f"n={report.n}"]
    for q in QUANTITIES:
        lines.append(f"mad_{q}={report.mad[q]:.17g}")
    if report.comparator_mad is not None:
        for q in QUANTITIES:
            lines.append(f"comparator_mad_{q}={report.comparator_mad[q]:.17g}")
        for q in QUANTITIES:
            lines.append(f"t_{q}={report.t_stats[q]:.17g}")
        for q in QUANTITIES:
            lines.append(f"p_{q}={report.p_values[q]:.17g}")
        for q in QUANTITIES:
            lines.append(f"degenerate_{q}={int(report.degenerate[q])}")
    return "\n".join(lines) + "\n"


def write_report_csv(report: EvalReport, path) -> None:
    """One CSV row per quantity with every available statistic."""
    has_cmp = report.comparator_mad is not None
    with open(path, "w") as fh:
        cols = ["quantity", "mad"]
        if has_cmp:
            cols += ["comparator_mad", "t", "p", "degenerate"]
        fh.write(",".join(cols) + "\n")
        for q in QUANTITIES:
            row = [q, f"{report.mad[q]:.17g}"]
            if has_cmp:
                row += [f"{report.comparator_mad[q]:.17g}",
                        f"{report.t_stats[q]:.17g}",
                        f"{report.p_values[q]:.17g}",
                        str(int(report.degenerate[q]))]
            fh.write(",".join(row) + "\n")
