"""Evaluation rows and report emission (CSV, schema-validated JSON, and
long-format plot data tables)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import jsonschema

from ..errors import ArgumentError

#: extra keys holding wall-clock measurements; excluded from stable fingerprints
TIMING_SUFFIX = "_seconds"


@dataclass(frozen=True)
class EvalRow:
    defense_id: str
    attack_id: str
    error_rate: float
    mean_dissimilarity: float
    extra: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ArgumentError(f"error rate {self.error_rate} outside [0, 1]")
        if self.mean_dissimilarity < 0.0 or not math.isfinite(self.mean_dissimilarity):
            raise ArgumentError("mean dissimilarity must be finite and >= 0")
        object.__setattr__(self, "extra", dict(self.extra))

    def to_dict(self) -> dict:
        return {
            "defense_id": self.defense_id,
            "attack_id": self.attack_id,
            "error_rate": self.error_rate,
            "mean_dissimilarity": self.mean_dissimilarity,
            "extra": dict(self.extra),
        }


def row_from_dict(d: Mapping) -> EvalRow:
    return EvalRow(defense_id=d["defense_id"], attack_id=d["attack_id"],
                   error_rate=float(d["error_rate"]),
                   mean_dissimilarity=float(d["mean_dissimilarity"]),
                   extra=d.get("extra", {}))


def _extra_columns(rows: Sequence[EvalRow]) -> list[str]:
    keys = set()
    for row in rows:
        keys.update(row.extra)
    return sorted(keys)


def stable_digest_text(rows: Sequence[EvalRow]) -> str:
    """Canonical JSON of all numeric report fields except wall-clock timings.

    Two runs of the same manifest must produce byte-identical digests.
    """
    payload = []
    for row in rows:
        extra = {k: v for k, v in sorted(row.extra.items())
                 if not k.endswith(TIMING_SUFFIX)}
        payload.append({
            "defense_id": row.defense_id,
            "attack_id": row.attack_id,
            "error_rate": row.error_rate,
            "mean_dissimilarity": row.mean_dissimilarity,
            "extra": extra,
        })
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _plot_family(attack_id: str) -> str:
    return attack_id.split("@", 1)[0]


def _plot_x(row: EvalRow) -> float:
    for key in ("strength", "budget", "max_dissimilarity", "known_fraction", "size"):
        if key in row.extra:
            return float(row.extra[key])
    if "@" in row.attack_id:
        try:
            return float(row.attack_id.split("@", 1)[1])
        except ValueError:
            pass
    return 0.0


def emit_report(rows: Sequence[EvalRow], fmt: str, out_dir: str | Path,
                name: str = "report") -> list[Path]:
    """Write evaluation rows in one of three formats.

    csv:      one flat table, stable column order.
    json:     {"rows": [...]}, validated against the shipped schema.
    plotdata: one long-format TSV per attack family with columns
              (series, x, error_rate, mean_dissimilarity).
    """
    if not rows:
        raise ArgumentError("no rows to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if fmt == "csv":
        path = out_dir / f"{name}.csv"
        extras = _extra_columns(rows)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["defense_id", "attack_id", "error_rate",
                             "mean_dissimilarity", *extras])
            for row in rows:
                writer.writerow([
                    row.defense_id, row.attack_id, repr(row.error_rate),
                    repr(row.mean_dissimilarity),
                    *[("" if k not in row.extra else
                       repr(row.extra[k]) if isinstance(row.extra[k], float)
                       else str(row.extra[k])) for k in extras],
                ])
        written.append(path)
    elif fmt == "json":
        path = out_dir / f"{name}.json"
        document = {"rows": [row.to_dict() for row in rows]}
        validate_report_document(document)
        path.write_text(json.dumps(document, indent=2, sort_keys=True,
                                   default=float))
        written.append(path)
    elif fmt == "plotdata":
        families: dict[str, list[EvalRow]] = {}
        for row in rows:
            families.setdefault(_plot_family(row.attack_id), []).append(row)
        for family, family_rows in sorted(families.items()):
            path = out_dir / f"{name}.{family}.tsv"
            with open(path, "w") as f:
                f.write("series\tx\terror_rate\tmean_dissimilarity\n")
                ordered = sorted(family_rows,
                                 key=lambda r: (r.defense_id, _plot_x(r)))
                for row in ordered:
                    f.write(f"{row.defense_id}\t{_plot_x(row)!r}\t"
                            f"{row.error_rate!r}\t{row.mean_dissimilarity!r}\n")
            written.append(path)
    else:
        raise ArgumentError(f"unknown report format {fmt!r}")
    return written


def load_report_schema() -> dict:
    text = resources.files("athena.evaluation").joinpath(
        "schemas/eval_rows.schema.json").read_text()
    return json.loads(text)


def validate_report_document(document: Mapping) -> None:
    jsonschema.validate(document, load_report_schema())


def read_csv_report(path: str | Path) -> list[EvalRow]:
    """Reader fixture: parses a CSV report back into rows."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        base = {"defense_id", "attack_id", "error_rate", "mean_dissimilarity"}
        for record in reader:
            extra = {}
            for key, value in record.items():
                if key in base or value == "":
                    continue
                try:
                    extra[key] = float(value)
                except ValueError:
                    extra[key] = value
            rows.append(EvalRow(
                defense_id=record["defense_id"], attack_id=record["attack_id"],
                error_rate=float(record["error_rate"]),
                mean_dissimilarity=float(record["mean_dissimilarity"]),
                extra=extra))
    return rows
