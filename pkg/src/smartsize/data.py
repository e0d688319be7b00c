"""Trial datasets and the long-format CSV exchange format."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import SmartDesign, SubjectRecord, check_record, unobserved_sequences

CSV_HEADER = ("subject", "a1", "r", "a2", "t", "y")


class DataFormatError(ValueError):
    """Malformed dataset input; message carries the offending line number."""


@dataclass
class TrialDataset:
    """Complete-data records from a SMART, stored column-wise.

    ``y`` has shape (n, T) with columns ordered as ``timepoints``.
    """

    a1: np.ndarray
    r: np.ndarray
    a2: np.ndarray
    y: np.ndarray
    timepoints: tuple
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.a1 = np.asarray(self.a1, dtype=int)
        self.r = np.asarray(self.r, dtype=int)
        self.a2 = np.asarray(self.a2, dtype=int)
        self.timepoints = tuple(float(t) for t in self.timepoints)
        self.y = np.asarray(self.y, dtype=float).reshape(len(self.a1), len(self.timepoints))
        if not (len(self.a1) == len(self.r) == len(self.a2)):
            raise ValueError("a1, r, a2 must have equal length")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("outcomes must be complete and finite")

    @property
    def n(self) -> int:
        return len(self.a1)

    @property
    def records(self) -> list[SubjectRecord]:
        return [SubjectRecord(int(a), int(b), int(c), tuple(row))
                for a, b, c, row in zip(self.a1, self.r, self.a2, self.y)]

    @classmethod
    def from_records(cls, records, timepoints, **kw) -> "TrialDataset":
        records = list(records)
        T = len(timepoints)
        if not records:
            return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, T)), timepoints, **kw)
        a1, r, a2, y = zip(*records)
        return cls(np.array(a1), np.array(r), np.array(a2), np.array(y, dtype=float), timepoints, **kw)

    def validate(self, design: SmartDesign) -> None:
        for rec in self.records:
            check_record(design, rec)

    def unobserved_sequences(self, design: SmartDesign):
        return unobserved_sequences(design, self.a1, self.r, self.a2)

    def subset(self, idx) -> "TrialDataset":
        return TrialDataset(self.a1[idx], self.r[idx], self.a2[idx], self.y[idx], self.timepoints)

    def to_csv(self, path_or_buf=None) -> str | None:
        """Write long format (one row per subject and timepoint)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(self.n):
            for j, t in enumerate(self.timepoints):
                w.writerow([i + 1, self.a1[i], self.r[i], self.a2[i], f"{t:g}", repr(float(self.y[i, j]))])
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            Path(path_or_buf).write_text(text)
        return None

    @classmethod
    def from_csv(cls, path_or_buf) -> "TrialDataset":
        if hasattr(path_or_buf, "read"):
            text = path_or_buf.read()
        else:
            text = Path(path_or_buf).read_text()
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(h.strip() for h in rows[0]) != CSV_HEADER:
            raise DataFormatError(f"line 1: expected header {','.join(CSV_HEADER)}")
        subjects: dict[str, dict] = {}
        times = set()
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise DataFormatError(f"line {lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
            sid = row[0].strip()
            try:
                a1, r, a2 = int(row[1]), int(row[2]), int(row[3])
                t, y = float(row[4]), float(row[5])
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
            if not np.isfinite(y):
                raise DataFormatError(f"line {lineno}: outcome is not finite")
            s = subjects.setdefault(sid, {"tx": (a1, r, a2), "y": {}, "line": lineno})
            if s["tx"] != (a1, r, a2):
                raise DataFormatError(f"line {lineno}: treatment codes for subject {sid} change between rows")
            if t in s["y"]:
                raise DataFormatError(f"line {lineno}: duplicate time {t:g} for subject {sid}")
            s["y"][t] = y
            times.add(t)
        timepoints = tuple(sorted(times))
        recs = []
        for sid, s in subjects.items():
            if set(s["y"]) != times:
                missing = sorted(times - set(s["y"]))
                raise DataFormatError(f"line {s['line']}: subject {sid} is missing times {missing}")
            recs.append(SubjectRecord(*s["tx"], tuple(s["y"][t] for t in timepoints)))
        return cls.from_records(recs, timepoints)
