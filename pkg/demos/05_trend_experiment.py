"""
Desk-scale trend experiment
===========================

Three methods, five seeds each, on the full synthetic dataset.  Results are
cached in results/trend_reports.json and only recomputed when the setup or
the computational code changes (about two hours on one core).
"""

import logging
import os
import sys

from flabench.evaluation import comparison_csv, histogram_csv
from flabench.experiment import TrendSetup, judge_trend, load_or_run_trend

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
cache = os.path.join(root, "results", "trend_reports.json")
reports = load_or_run_trend(cache, TrendSetup())

print(comparison_csv(reports))
print(histogram_csv(reports, "translate_x"))

v = judge_trend(reports)
print(f"FLA trade-off margin over baseline: {v.fla_tradeoff_margin:+.3f}")
print(f"FLA accuracy gap: {v.fla_accuracy_gap:+.2f} points")
print(f"mFRs reduced by BlurPool: {v.blurpool_mfr_reductions} of 3")
print("trend holds" if v.passed else "trend does not hold")
sys.exit(0 if v.passed else 1)
