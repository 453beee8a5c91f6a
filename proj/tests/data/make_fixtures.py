"""Regenerates the frozen trace and metrics fixtures in this directory."""
import csv
import json
import os

import numpy as np
from scipy.stats import false_discovery_control, wilcoxon

HERE = os.path.dirname(os.path.abspath(__file__))


def write_format_error_logs(variant, counts):
    os.makedirs(os.path.join(HERE, "format_errors", variant), exist_ok=True)
    for i, n in enumerate(counts):
        cid = f"case-{i:03d}"
        sid = f"{cid}-{variant}"
        lines = []
        idx = 1
        for _ in range(n):
            lines.append(dict(session_id=sid, case_id=cid, round=1, index=idx, attempt=1, format_error=True,
                              rationale="", raw_output="objectives: [", error="no structured block found"))
            lines.append(dict(session_id=sid, case_id=cid, round=1, index=idx, attempt=2, format_error=False,
                              rationale="Next, the ring objective gets a lower dose ceiling.", raw_output="", error=""))
            idx += 1
        lines.append(dict(session_id=sid, case_id=cid, round=1, index=idx, attempt=1, format_error=False,
                          rationale="First, I will raise the PTV priority to recover coverage.", raw_output="", error=""))
        with open(os.path.join(HERE, "format_errors", variant, f"{sid}.jsonl"), "w") as f:
            for line in lines:
                f.write(json.dumps(line) + "\n")


PRIMARY = ["coverage_pct", "dmax_gy", "ci", "gi"]
SECONDARY = ["brainstem_dmax_gy", "optic_chiasm_dmax_gy", "v12_cc", "optic_nerve_l_dmax_gy",
             "optic_nerve_r_dmax_gy", "cochlea_l_dmax_gy", "cochlea_r_dmax_gy"]
BASE = {"coverage_pct": (97.0, 1.5), "dmax_gy": (21.0, 0.4), "ci": (0.80, 0.05), "gi": (3.0, 0.3),
        "brainstem_dmax_gy": (6.0, 2.0), "optic_chiasm_dmax_gy": (3.0, 1.0), "v12_cc": (5.0, 2.0),
        "optic_nerve_l_dmax_gy": (2.5, 1.0), "optic_nerve_r_dmax_gy": (2.5, 1.0),
        "cochlea_l_dmax_gy": (3.0, 1.2), "cochlea_r_dmax_gy": (3.0, 1.2)}
SHIFTED = "cochlea_r_dmax_gy"


def write_metrics(n=41, seed=20260412):
    rng = np.random.default_rng(seed)
    a, b = {}, {}
    for m, (mu, sd) in BASE.items():
        base = rng.normal(mu, sd, n)
        noise = rng.normal(0.0, sd * 0.3, n)
        if m == SHIFTED:
            noise = noise - 1.0
        a[m] = base
        b[m] = base + noise
    a["coverage_pct"] = np.minimum(a["coverage_pct"], 100.0)
    b["coverage_pct"] = np.minimum(b["coverage_pct"], 100.0)
    for name, table, variant in (("metrics_a.csv", a, "reasoning"), ("metrics_b.csv", b, "clinical")):
        with open(os.path.join(HERE, name), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["patient", "variant", "metric", "value"])
            for i in range(n):
                for m in PRIMARY + SECONDARY:
                    v = table[m][i]
                    # one undefined GI to exercise pair dropping
                    cell = "" if (m == "gi" and i == 7 and variant == "reasoning") else repr(round(float(v), 6))
                    w.writerow([f"P{i + 1:02d}", variant, m, cell])
    # reference check with an independent implementation
    for family in (PRIMARY, SECONDARY):
        ps = []
        for m in family:
            x = np.round(a[m], 6) - np.round(b[m], 6)
            if m == "gi":
                x = np.delete(x, 7)
            ps.append(wilcoxon(x).pvalue)
        qs = false_discovery_control(ps)
        for m, p, q in zip(family, ps, qs):
            print(f"{m:24s} p={p:.4g} q={q:.4g}{' *' if q < 0.05 else ''}")


if __name__ == "__main__":
    write_format_error_logs("a", [0, 0, 1])
    write_format_error_logs("b", [3, 3, 4])
    write_metrics()
