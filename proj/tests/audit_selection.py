#!/usr/bin/env python3
"""Re-derives model-selection bookkeeping from an emitted report directory.

Checks, independently of the C++ code:
  - every generated dataset of a selection study is either selected on or
    appears in the failure ledger;
  - the selected label is the lower WAIC, ties going to the smaller label;
  - correctness flags match the generating model implied by the dataset id;
  - the per-model WAIC difference rows agree with the selection rows.

Usage: audit_selection.py REPORT_DIR
"""
import csv
import math
import sys
from pathlib import Path

LABELS = ("poisson_iid", "bym")


def read(d, stem):
    with open(d / f"{stem}.csv", newline="") as f:
        return list(csv.DictReader(f))


def flag(s):
    if s not in ("true", "false"):
        raise ValueError(f"not a boolean: {s!r}")
    return s == "true"


def pick(wa, wb):
    if wa < wb:
        return LABELS[0], False
    if wb < wa:
        return LABELS[1], False
    return min(LABELS), True


def audit(d):
    errors = []
    selection = read(d, "selection")
    differences = read(d, "waic_differences")
    datasets = read(d, "datasets")
    failures = read(d, "failures")

    studies = {r["study"] for r in selection}
    for study in sorted(studies):
        generated = [r["dataset"] for r in datasets if r["study"] == study]
        failed = {r["dataset"] for r in failures if r["study"] == study}
        selected = [r["dataset"] for r in selection if r["study"] == study]
        if len(selected) != len(set(selected)):
            errors.append(f"{study}: duplicate selection rows")
        missing = [g for g in generated if g not in failed and g not in selected]
        if missing:
            errors.append(f"{study}: unaccounted datasets {missing[:5]}")
        extra = [s for s in selected if s not in generated]
        if extra:
            errors.append(f"{study}: rows for unknown datasets {extra[:5]}")
        overlap = [s for s in selected if s in failed]
        if overlap:
            errors.append(f"{study}: datasets both failed and selected {overlap[:5]}")
        if len(selected) != len(generated) - len(failed & set(generated)):
            errors.append(f"{study}: row count {len(selected)} != generated {len(generated)} - failed {len(failed)}")

    for r in selection:
        key = f"{r['study']}/{r['dataset']}"
        truth = r["dataset"].rsplit("-", 1)[0]
        if truth not in LABELS or r["generating_model"] != truth:
            errors.append(f"{key}: generating model {r['generating_model']!r} vs id")
        for engine in ("laplace", "mcmc"):
            wa = float(r[f"waic_{engine}_{LABELS[0]}"])
            wb = float(r[f"waic_{engine}_{LABELS[1]}"])
            if not (math.isfinite(wa) and math.isfinite(wb)):
                errors.append(f"{key}: non-finite {engine} WAIC")
                continue
            label, tie = pick(wa, wb)
            if r[f"selected_{engine}"] != label:
                errors.append(f"{key}: {engine} selected {r[f'selected_{engine}']} expected {label}")
            if flag(r[f"tie_{engine}"]) != tie:
                errors.append(f"{key}: {engine} tie flag")
            if flag(r[f"correct_{engine}"]) != (label == truth):
                errors.append(f"{key}: {engine} correctness flag")
        rows = [w for w in differences if w["study"] == r["study"] and w["dataset"] == r["dataset"]]
        if sorted(w["model"] for w in rows) != sorted(LABELS):
            errors.append(f"{key}: waic difference rows {[w['model'] for w in rows]}")
        for w in rows:
            m = w["model"]
            wl, wm = float(w["waic_laplace"]), float(w["waic_mcmc"])
            if wl != float(r[f"waic_laplace_{m}"]) or wm != float(r[f"waic_mcmc_{m}"]):
                errors.append(f"{key}/{m}: difference row WAIC disagrees with selection row")
            if abs((wl - wm) - float(w["difference"])) > 1e-9 * max(1.0, abs(wl)):
                errors.append(f"{key}/{m}: difference column")
            if flag(w["correct_laplace"]) != flag(r["correct_laplace"]) or flag(w["correct_mcmc"]) != flag(r["correct_mcmc"]):
                errors.append(f"{key}/{m}: correctness flags disagree")
    return selection, errors


def main():
    if len(sys.argv) != 2:
        print(__doc__.strip().splitlines()[-1], file=sys.stderr)
        return 2
    d = Path(sys.argv[1])
    selection, errors = audit(d)
    for e in errors:
        print("  " + e)
    if not selection:
        errors.append("no selection rows")
    ok = not errors
    print(f"selection audit: {len(selection)} rows, {len(errors)} problems: {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
