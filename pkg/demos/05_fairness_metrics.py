"""
Group fairness metrics and two-decimal reporting
================================================

A model's verification accuracy is reported per demographic group, then
summarized by the mean, the sample standard deviation across groups, and
the skewed error ratio SER = (100 - min) / (100 - max): the worst group's
error over the best group's. Published tables print two decimals with
half-up rounding, and round2 reproduces that convention exactly, which is
what lets the bundled reference rows be checked digit for digit.
"""

import csv
from importlib import resources

from fairkd.evaluation import build_report, fairness_std, render_table, round2, ser

# Hand-checkable example: equal errors mean SER 1.0 however large they are.
even = (95.0, 95.0, 95.0, 95.0)
skewed = (99.0, 97.0, 96.0, 92.0)
for accs in (even, skewed):
    print(accs, "-> std", round2(fairness_std(accs)), " ser", round2(ser(accs)))

# SER degenerates when the best group is perfect: the denominator is zero
# error. The report keeps the math honest with an infinity plus an explicit
# flag (serialized as null in JSON) instead of picking an arbitrary cap.
perfect_best = build_report((100.0, 97.5), {"model": "toy", "data": "real",
                                            "distilled": "no", "loss": "arcface"})
print("\nbest group perfect: ser =", perfect_best.ser,
      " degenerate flag =", perfect_best.ser_degenerate)

# Banker's rounding would print 2.5 % error spreads wrong; round2 is
# decimal half-up, matching how the reference tables were typeset.
print("\nround2(0.125) =", round2(0.125), " round2(0.135) =", round2(0.135))

# The packaged reference rows pin the implementation to published numbers:
# every row's average / std / SER recomputes exactly at two decimals.
path = resources.files("fairkd") / "data" / "reference_rows.csv"
with path.open(newline="") as fh:
    rows = list(csv.reader(fh))[1:]
print(f"\n{len(rows)} reference rows; first three recomputed:")
reports = []
for label, *vals in rows[:3]:
    accs = tuple(float(v) for v in vals[:4])
    reports.append(build_report(accs, {"model": label, "data": "-",
                                       "distilled": "-", "loss": "-"}))
    printed = vals[4:]
    recomputed = (round2(reports[-1].average), round2(reports[-1].std),
                  round2(reports[-1].ser))
    print(f"  {label:40s} printed {printed} recomputed {list(recomputed)}")

print()
print(render_table(reports, fmt="csv"))
