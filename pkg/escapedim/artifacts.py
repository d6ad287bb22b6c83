"""
JSON and CSV artifacts.

Every file is written to a temporary sibling and moved into place with os.replace,
so readers never see a partial artifact. JSON uses sorted keys and Python's shortest
round-trip float repr; CSV floats use 17 significant digits. Nothing time-dependent
is written, so identical runs give byte-identical files.
"""

import csv
import io
import json
import math
import os
import tempfile
from collections.abc import Iterable, Sequence
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import ArtifactError
from .escape_dimension import DimensionEstimate, GrowthCurve
from .logging_config import get_logger
from .speiser_constructions import PoleAtlas

logger = get_logger(__name__)

CONSTRUCTION_FILE = "construction.json"
COMB_FILE = "comb.json"
ATLAS_FILE = "atlas.json"
ATLAS_CSV = "atlas.csv"
DIMENSION_FILE = "dimension.json"
BLOCKS_CSV = "dimension_blocks.csv"
COMPARISON_CSV = "comparison.csv"
GROWTH_FILE = "growth.json"
GROWTH_CSV = "growth.csv"
REPORT_FILE = "verify_report.json"


def to_jsonable(value: Any) -> Any:
    """Plain JSON types: complex -> [re, im], numpy -> Python, non-finite floats -> null."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(float(value.real)), to_jsonable(float(value.imag))]
    if isinstance(value, (float, np.floating)):
        number = float(value)
        return number if math.isfinite(number) else None
    if value is None or isinstance(value, str):
        return value
    return repr(value)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except OSError as e:
        Path(tmp_name).unlink(missing_ok=True)
        raise ArtifactError(f"Could not write artifact: {e}", path=str(path)) from e
    logger.debug(f"Wrote {path}")


def write_json(path: Path, payload: Any) -> None:
    text = json.dumps(to_jsonable(payload), sort_keys=True, indent=2, allow_nan=False)
    _atomic_write(path, text + "\n")


def read_json(path: Path) -> Any:
    if not path.exists():
        raise ArtifactError("Artifact not found", path=str(path))
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"Malformed JSON: {e}", path=str(path)) from e


def _csv_cell(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_cell(v) for v in row])
    _atomic_write(path, buffer.getvalue())


class PoleEntry(BaseModel):
    """One pole of atlas.json: location a, coefficient b and multiplicity."""

    model_config = ConfigDict(extra="forbid")

    re: float
    im: float
    mult: int
    b_re: float
    b_im: float


class AtlasFile(BaseModel):
    """Shape of atlas.json; every pole carries the atlas multiplicity M."""

    model_config = ConfigDict(extra="forbid")

    provenance: str
    M: int
    radius: float
    sector_filter: tuple[float, float] | None = None
    poles: list[PoleEntry]
    metadata: dict[str, Any] = {}

    @field_validator("M")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("M must be positive")
        return value

    @model_validator(mode="after")
    def _common_multiplicity(self) -> "AtlasFile":
        if any(p.mult != self.M for p in self.poles):
            raise ValueError("pole multiplicity differs from M")
        return self


class DimensionFile(BaseModel):
    model_config = ConfigDict(extra="ignore")

    t_star: float
    t_low: float
    t_high: float
    theoretical: float | None
    M: int
    rho: float | None
    blocks: list[tuple[int, float]]
    method: str


def _validated(model: type[BaseModel], data: Any, path: Path) -> Any:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ArtifactError(f"Malformed artifact: {e.error_count()} problems", path=str(path)) from e


def save_atlas(atlas: PoleAtlas, out_dir: Path) -> Path:
    """Write atlas.json and atlas.csv; returns the JSON path."""
    poles = [
        {
            "re": float(a.real),
            "im": float(a.imag),
            "mult": atlas.M,
            "b_re": float(b.real),
            "b_im": float(b.imag),
        }
        for a, b in zip(atlas.locations, atlas.coefficients, strict=True)
    ]
    path = out_dir / ATLAS_FILE
    write_json(
        path,
        {
            "provenance": atlas.provenance,
            "M": atlas.M,
            "radius": atlas.radius,
            "sector_filter": atlas.sector_filter,
            "poles": poles,
            "metadata": atlas.metadata,
        },
    )
    write_csv(
        out_dir / ATLAS_CSV,
        ["abs_a", "arg_a", "abs_b", "mult"],
        (
            [float(abs(a)), float(np.angle(a)), float(abs(b)), atlas.M]
            for a, b in zip(atlas.locations, atlas.coefficients, strict=True)
        ),
    )
    logger.info(f"Saved {len(atlas)} poles to {path}")
    return path


def load_atlas(path: Path) -> PoleAtlas:
    """Read atlas.json back into a PoleAtlas.

    Raises:
        ArtifactError: the file is missing or malformed
    """
    data = _validated(AtlasFile, read_json(path), path)
    poles = np.array(
        [(p.re, p.im, p.b_re, p.b_im) for p in data.poles], dtype=np.float64
    ).reshape(-1, 4)
    return PoleAtlas(
        locations=poles[:, 0] + 1j * poles[:, 1],
        coefficients=poles[:, 2] + 1j * poles[:, 3],
        M=data.M,
        radius=data.radius,
        provenance=data.provenance,
        sector_filter=data.sector_filter,
        metadata=dict(data.metadata),
    )


def save_dimension(estimate: DimensionEstimate, out_dir: Path) -> Path:
    """Write dimension.json, the block table and the one-row comparison table."""
    path = out_dir / DIMENSION_FILE
    write_json(path, estimate.to_dict())
    write_csv(out_dir / BLOCKS_CSV, ["l", "S_l"], ([l, s] for l, s in estimate.block_sums))
    write_csv(
        out_dir / COMPARISON_CSV,
        ["M", "rho", "t_star", "t_low", "t_high", "theoretical", "gap"],
        [
            [
                estimate.M,
                estimate.rho,
                estimate.t_star,
                estimate.t_bracket[0],
                estimate.t_bracket[1],
                estimate.theoretical,
                estimate.gap,
            ]
        ],
    )
    return path


def load_dimension(path: Path) -> DimensionFile:
    result: DimensionFile = _validated(DimensionFile, read_json(path), path)
    return result


def save_growth(curve: GrowthCurve, out_dir: Path) -> Path:
    path = out_dir / GROWTH_FILE
    write_json(path, curve.to_dict())
    write_csv(
        out_dir / GROWTH_CSV,
        ["r", "n", "N", "T", "logM"],
        ([s.r, s.n_r, s.N_r, s.T_r, s.logM_r] for s in curve.samples),
    )
    return path


def save_construction(payload: dict[str, Any], out_dir: Path) -> Path:
    """Write construction.json and, when a comb is involved, comb.json."""
    path = out_dir / CONSTRUCTION_FILE
    write_json(path, payload)
    if payload.get("comb") is not None:
        write_json(out_dir / COMB_FILE, payload["comb"])
    return path


def load_construction(out_dir: Path) -> dict[str, Any]:
    data = read_json(out_dir / CONSTRUCTION_FILE)
    if not isinstance(data, dict) or "kind" not in data:
        raise ArtifactError("construction.json has no kind", path=str(out_dir / CONSTRUCTION_FILE))
    return data
