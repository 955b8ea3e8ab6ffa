"""File formats: strict numeric CSV, gram artifacts, results, manifests.

All floats are written with 17 significant digits so a read-back equals
the in-memory value bitwise. Output files are written atomically
(temp file then rename). Timestamps come from ``PRIVSHIFT_CREATED_UTC``
or ``SOURCE_DATE_EPOCH`` when set, so identical invocations can produce
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .core_model import GramMatrix, Provenance
from .errors import ConfigError
from .simulation import ResultRow, StudyResults

ARTIFACT_SCHEMA_VERSION = 1

RESULT_COLUMNS = (
    "study",
    "p",
    "estimator",
    "transform",
    "mse",
    "bias2",
    "variance",
    "coverage",
    "var_tau",
    "re_dm",
    "re_reg",
    "failures",
)

_METHOD_TO_PROVENANCE = {
    "gram": Provenance.EXACT,
    "en": Provenance.ENTRY_NOISE,
    "dp": Provenance.DP,
    "synth-derived": Provenance.SYNTHETIC_DERIVED,
}
_PROVENANCE_TO_METHOD = {v: k for k, v in _METHOD_TO_PROVENANCE.items()}


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def created_utc() -> str:
    """Creation timestamp, overridable for reproducible outputs."""
    override = os.environ.get("PRIVSHIFT_CREATED_UTC")
    if override:
        return override
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        stamp = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        stamp = datetime.now(tz=timezone.utc)
    return stamp.strftime("%Y-%m-%dT%H:%M:%SZ")


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".privshift-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Numeric tables (CSV)
# ---------------------------------------------------------------------------


def read_table(path: str) -> tuple[list[str], np.ndarray]:
    """Read a strict numeric CSV: header row, no missing cells, finite values."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file")
        rows = list(reader)
    if not header or any(not name.strip() for name in header):
        raise ConfigError(f"{path}: invalid header row")
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ConfigError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            if cell.strip() == "":
                raise ConfigError(f"{path}: missing value at row {i + 2}, column {header[j]!r}")
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ConfigError(f"{path}: non-numeric value {cell!r} at row {i + 2}")
    if not np.all(np.isfinite(data)):
        raise ConfigError(f"{path}: non-finite values are not allowed")
    return [name.strip() for name in header], data


def table_text(columns: list[str], data: np.ndarray) -> str:
    lines = [",".join(columns)]
    for row in np.asarray(data, dtype=float):
        lines.append(",".join(format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def write_table(path: str, columns: list[str], data: np.ndarray) -> None:
    atomic_write_text(path, table_text(columns, data))


# ---------------------------------------------------------------------------
# Gram artifacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GramArtifact:
    """Serializable released gram summary plus release metadata."""

    gram: GramMatrix
    outcome_index: int
    transform: dict
    seed: int
    created: str

    def to_json_dict(self) -> dict:
        size = self.gram.entries.shape[0]
        return {
            "schema_version": ARTIFACT_SCHEMA_VERSION,
            "m": self.gram.m,
            "p": size - 2,
            "column_names": list(self.gram.column_names),
            "outcome_index": self.outcome_index,
            "matrix": [float(v) for v in self.gram.entries.reshape(-1)],
            "transform": self.transform,
            "seed": self.seed,
            "created_utc": self.created,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "GramArtifact":
        try:
            version = payload["schema_version"]
            if version != ARTIFACT_SCHEMA_VERSION:
                raise ConfigError(f"unsupported artifact schema version {version}")
            p = int(payload["p"])
            size = p + 2
            matrix = np.asarray(payload["matrix"], dtype=float)
            if matrix.shape[0] != size * size:
                raise ConfigError(
                    f"matrix length {matrix.shape[0]} does not match (p + 2)^2 = {size * size}"
                )
            entries = matrix.reshape(size, size)
            if not np.array_equal(entries, entries.T):
                raise ConfigError("artifact matrix is not exactly symmetric")
            method = payload["transform"]["method"]
            provenance = _METHOD_TO_PROVENANCE.get(method)
            if provenance is None:
                raise ConfigError(f"unknown transform method {method!r}")
            gram = GramMatrix(
                entries,
                m=int(payload["m"]),
                provenance=provenance,
                column_names=tuple(payload["column_names"]),
            )
            return cls(
                gram=gram,
                outcome_index=int(payload["outcome_index"]),
                transform=dict(payload["transform"]),
                seed=int(payload["seed"]),
                created=str(payload["created_utc"]),
            )
        except KeyError as exc:
            raise ConfigError(f"artifact missing field {exc.args[0]!r}")

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "GramArtifact":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid artifact JSON: {exc}")
        return cls.from_json_dict(payload)


def method_for_provenance(provenance: Provenance) -> str:
    return _PROVENANCE_TO_METHOD[provenance]


def save_artifact(artifact: GramArtifact, path: str) -> None:
    atomic_write_text(path, artifact.to_json())


def load_artifact(path: str) -> GramArtifact:
    with open(path, "r", encoding="utf-8") as handle:
        return GramArtifact.from_json(handle.read())


# ---------------------------------------------------------------------------
# Study results
# ---------------------------------------------------------------------------


def results_csv_text(results: StudyResults) -> str:
    lines = [",".join(RESULT_COLUMNS)]
    for row in results.rows:
        cells = []
        for col in RESULT_COLUMNS:
            value = getattr(row, col)
            if value is None:
                cells.append("")
            elif isinstance(value, float):
                cells.append(format_float(value))
            else:
                cells.append(str(value))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_results_csv(results: StudyResults, path: str) -> None:
    atomic_write_text(path, results_csv_text(results))


def read_results_csv(path: str) -> list[dict]:
    """Read a study-results CSV back into row dicts (empty cells -> None)."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ConfigError(f"{path}: empty results file")
        missing = set(RESULT_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for record in reader:
            row = {}
            for col in RESULT_COLUMNS:
                cell = record[col]
                if col in ("study", "estimator", "transform"):
                    row[col] = cell
                elif cell is None or cell == "":
                    row[col] = None
                elif col in ("p", "failures"):
                    row[col] = int(cell)
                else:
                    row[col] = float(cell)
            rows.append(row)
    if not rows:
        raise ConfigError(f"{path}: no result rows")
    return rows


def result_rows_from_dicts(rows: list[dict]) -> list[ResultRow]:
    return [ResultRow(**row) for row in rows]


# ---------------------------------------------------------------------------
# Run manifests
# ---------------------------------------------------------------------------


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def build_manifest(command: str, resolved_args: dict, seed: int, outputs: list[str]) -> dict:
    from . import __version__

    return {
        "tool": "privshift",
        "version": __version__,
        "command": command,
        "args": resolved_args,
        "seed": seed,
        "created_utc": created_utc(),
        "outputs": [{"path": path, "sha256": sha256_file(path)} for path in outputs],
    }


def manifest_path_for(output_path: str) -> str:
    return output_path + ".manifest.json"


def write_manifest(manifest: dict, path: str) -> None:
    atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")
