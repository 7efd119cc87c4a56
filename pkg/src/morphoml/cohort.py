"""Case manifests, diagnosis labels, label groupings, and stratified splits.

The manifest is a UTF-8 CSV with header ``case_id,diagnosis,core_ids`` plus
zero or more stain columns. ``core_ids`` is ``;``-separated. Stain values are
``pos``, ``neg``, ``ci``, or empty (missing).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ValidationError

LABELS = ("DLBCL", "CHL", "AggBCL", "FL", "MCL", "MZL", "NKTCL", "TCL")
LABEL_TO_CODE = {name: code for code, name in enumerate(LABELS)}

MAX_STAINS = 46

# ordinal IHC encoding fed to the trainer as a categorical column
IHC_NEGATIVE = 0
IHC_POSITIVE = 1
IHC_CANNOT_INTERPRET = 2
IHC_MISSING = 3
IHC_VALUE_CODES = {
    "neg": IHC_NEGATIVE,
    "pos": IHC_POSITIVE,
    "ci": IHC_CANNOT_INTERPRET,
    "": IHC_MISSING,
}

SPLIT_NAMES = ("train", "val", "test")

GROUPING_CLASSES = {
    "EightWay": LABELS,
    "FiveWay": ("BCell", "CHL", "FLMZL", "MCL", "TCell"),
    "DlbclBinary": ("DLBCL", "NonDLBCL"),
}

_FIVEWAY_MAP = {
    "DLBCL": "BCell",
    "AggBCL": "BCell",
    "CHL": "CHL",
    "FL": "FLMZL",
    "MZL": "FLMZL",
    "MCL": "MCL",
    "NKTCL": "TCell",
    "TCL": "TCell",
}


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    diagnosis: str  # one of LABELS
    core_ids: tuple
    ihc_scores: dict = field(default_factory=dict)  # stain name -> code


@dataclass(frozen=True)
class Cohort:
    cases: tuple
    stains: tuple = ()  # stain names registered by the manifest header

    def __len__(self):
        return len(self.cases)

    def case(self, case_id: str) -> CaseRecord:
        for rec in self.cases:
            if rec.case_id == case_id:
                return rec
        raise DataError(f"unknown case_id {case_id!r}")

    def by_class(self) -> dict:
        out = {}
        for rec in self.cases:
            out.setdefault(rec.diagnosis, []).append(rec)
        return out


@dataclass(frozen=True)
class SplitAssignment:
    assignment: dict  # case_id -> split name
    seed: int
    fractions: tuple

    def cases_in(self, split: str) -> list:
        return sorted(c for c, s in self.assignment.items() if s == split)


def load_manifest(path) -> Cohort:
    """Parse a manifest CSV into a Cohort.

    Raises DataError naming the offending row for malformed rows, unknown
    diagnosis strings, duplicate case ids, and bad stain values.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if header[:3] != ["case_id", "diagnosis", "core_ids"]:
            raise DataError(
                f"{path}: header must start with case_id,diagnosis,core_ids "
                f"(got {header[:3]})"
            )
        stains = tuple(header[3:])
        if len(stains) > MAX_STAINS:
            raise DataError(f"{path}: {len(stains)} stain columns exceeds {MAX_STAINS}")
        if len(set(stains)) != len(stains):
            raise DataError(f"{path}: duplicate stain columns")

        cases = []
        seen = set()
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3 + len(stains):
                raise DataError(f"{path} row {row_no}: expected {3 + len(stains)} fields, got {len(row)}")
            case_id, diagnosis, core_field = row[0], row[1], row[2]
            if not case_id:
                raise DataError(f"{path} row {row_no}: empty case_id")
            if case_id in seen:
                raise DataError(f"{path} row {row_no}: duplicate case_id {case_id!r}")
            seen.add(case_id)
            if diagnosis not in LABEL_TO_CODE:
                raise DataError(f"{path} row {row_no}: unknown diagnosis {diagnosis!r}")
            core_ids = tuple(c for c in core_field.split(";") if c)
            if not core_ids:
                raise DataError(f"{path} row {row_no}: case has no core_ids")
            if len(set(core_ids)) != len(core_ids):
                raise DataError(f"{path} row {row_no}: duplicate core_ids")
            scores = {}
            for stain, value in zip(stains, row[3:]):
                value = value.strip()
                if value not in IHC_VALUE_CODES:
                    raise DataError(
                        f"{path} row {row_no}: stain {stain} has value {value!r}, "
                        f"expected one of pos/neg/ci/empty"
                    )
                scores[stain] = IHC_VALUE_CODES[value]
            cases.append(CaseRecord(case_id, diagnosis, core_ids, scores))
    return Cohort(tuple(cases), stains)


def stratified_split(cohort: Cohort, fractions, seed: int) -> SplitAssignment:
    """Assign cases to train/val/test, stratified by diagnosis.

    Within each class the quota of every split is floor(n * fraction); the
    remainder goes to train. All cores of a case share its split. The
    shuffle is seeded per class so the result is independent of manifest
    row order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValidationError("fractions must be a (train, val, test) triple")
    if any(f < 0 for f in fractions):
        raise ValidationError(f"negative split fraction in {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError(f"fractions {fractions} do not sum to 1.0")
    if len(cohort) == 0:
        raise ValidationError("cannot split an empty cohort")

    assignment = {}
    for diagnosis in LABELS:
        ids = sorted(r.case_id for r in cohort.cases if r.diagnosis == diagnosis)
        if not ids:
            continue
        rng = np.random.default_rng([int(seed), LABEL_TO_CODE[diagnosis]])
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        n = len(shuffled)
        n_val = int(np.floor(n * fractions[1]))
        n_test = int(np.floor(n * fractions[2]))
        n_train = n - n_val - n_test  # floor(train quota) plus the remainder
        for case_id in shuffled[:n_train]:
            assignment[case_id] = "train"
        for case_id in shuffled[n_train:n_train + n_val]:
            assignment[case_id] = "val"
        for case_id in shuffled[n_train + n_val:]:
            assignment[case_id] = "test"
    return SplitAssignment(assignment, int(seed), fractions)


def group_labels(label: str, scheme: str) -> str:
    """Map an 8-way diagnosis label into the given grouping scheme."""
    if scheme not in GROUPING_CLASSES:
        raise ValidationError(f"unknown grouping scheme {scheme!r}")
    if label not in LABEL_TO_CODE:
        raise ValidationError(f"unknown label {label!r}")
    if scheme == "EightWay":
        return label
    if scheme == "FiveWay":
        return _FIVEWAY_MAP[label]
    return "DLBCL" if label == "DLBCL" else "NonDLBCL"


def save_split(split: SplitAssignment, path) -> None:
    """Write `case_id,split` CSV, sorted by case_id (byte-stable)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("case_id,split\n")
        for case_id in sorted(split.assignment):
            fh.write(f"{case_id},{split.assignment[case_id]}\n")


def load_split(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["case_id", "split"]:
            raise DataError(f"{path}: expected header case_id,split")
        for row_no, row in enumerate(reader, start=2):
            name = row["split"]
            if name not in SPLIT_NAMES:
                raise DataError(f"{path} row {row_no}: unknown split {name!r}")
            out[row["case_id"]] = name
    return out
