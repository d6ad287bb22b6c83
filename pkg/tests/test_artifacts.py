"""Tests for JSON and CSV artifacts."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from escapedim.acceptance import power_law_atlas
from escapedim.artifacts import (
    ATLAS_CSV,
    BLOCKS_CSV,
    COMB_FILE,
    COMPARISON_CSV,
    load_atlas,
    load_construction,
    load_dimension,
    read_json,
    save_atlas,
    save_construction,
    save_dimension,
    to_jsonable,
    write_json,
)
from escapedim.config import DimensionOptions
from escapedim.errors import ArtifactError
from escapedim.escape_dimension import DimensionMethod, critical_exponent
from escapedim.speiser_constructions import DELTA_SECTOR, PoleAtlas, restrict_to_sector


class TestToJsonable:
    def test_conversions(self) -> None:
        data = to_jsonable(
            {
                "z": 1.0 - 2.0j,
                "array": np.array([1, 2]),
                "nan": math.nan,
                "inf": np.float64(math.inf),
                "flag": np.bool_(True),
                "method": DimensionMethod.BLOCK_DECAY_FIT,
                "path": Path("out"),
                3: (0.5,),
            }
        )
        assert data == {
            "z": [1.0, -2.0],
            "array": [1, 2],
            "nan": None,
            "inf": None,
            "flag": True,
            "method": "block_decay_fit",
            "path": "out",
            "3": [0.5],
        }

    def test_floats_round_trip(self, temp_dir: Path) -> None:
        value = 0.1 + 0.2
        write_json(temp_dir / "x.json", {"v": value})
        assert read_json(temp_dir / "x.json")["v"] == value


class TestAtlasFiles:
    def test_round_trip(self, temp_dir: Path) -> None:
        atlas = restrict_to_sector(power_law_atlas(256, 0.5, M=2))
        load = load_atlas(save_atlas(atlas, temp_dir))
        np.testing.assert_array_equal(load.locations, atlas.locations)
        np.testing.assert_array_equal(load.coefficients, atlas.coefficients)
        assert (load.M, load.radius, load.provenance) == (2, 256.0, atlas.provenance)
        assert load.sector_filter == DELTA_SECTOR

    def test_pole_objects(self, temp_dir: Path) -> None:
        atlas = PoleAtlas.from_arrays(
            np.array([1.0 + 1.0j]), np.array([2.0 + 0.0j]), M=2, radius=2.0, provenance="one"
        )
        data = read_json(save_atlas(atlas, temp_dir))
        assert data["poles"] == [{"re": 1.0, "im": 1.0, "mult": 2, "b_re": 2.0, "b_im": 0.0}]
        row = (temp_dir / ATLAS_CSV).read_text().splitlines()[1].split(",")
        assert float(row[0]) == pytest.approx(math.sqrt(2.0))
        assert float(row[1]) == pytest.approx(math.pi / 4)
        assert (float(row[2]), row[3]) == (2.0, "2")

    def test_csv(self, temp_dir: Path) -> None:
        save_atlas(power_law_atlas(8, 0.0), temp_dir)
        lines = (temp_dir / ATLAS_CSV).read_text().splitlines()
        assert lines[0] == "abs_a,arg_a,abs_b,mult"
        assert len(lines) == 9
        assert float(lines[1].split(",")[0]) == pytest.approx(1.0)
        assert lines[1].split(",")[3] == "1"

    def test_deterministic(self, temp_dir: Path) -> None:
        atlas = power_law_atlas(512, 1.0)
        first = save_atlas(atlas, temp_dir / "a").read_bytes()
        second = save_atlas(atlas, temp_dir / "b").read_bytes()
        assert first == second
        assert not list((temp_dir / "a").glob(".*.tmp"))

    def test_missing(self, temp_dir: Path) -> None:
        with pytest.raises(ArtifactError, match="not found"):
            load_atlas(temp_dir / "atlas.json")

    def test_malformed_json(self, temp_dir: Path) -> None:
        path = temp_dir / "atlas.json"
        path.write_text("{not json")
        with pytest.raises(ArtifactError, match="Malformed JSON"):
            load_atlas(path)

    @pytest.mark.parametrize(
        "payload",
        [
            {"provenance": "x", "M": 0, "radius": 1.0, "poles": []},
            {"provenance": "x", "M": 1, "radius": 1.0, "poles": [[1.0, 2.0, 3.0, 4.0]]},
            {"provenance": "x", "M": 1, "radius": 1.0, "poles": [{"re": 1.0, "im": 0.0}]},
            {
                "provenance": "x",
                "M": 1,
                "radius": 1.0,
                "poles": [{"re": 1.0, "im": 0.0, "mult": 2, "b_re": 1.0, "b_im": 0.0}],
            },
            {"provenance": "x", "M": 1, "radius": 1.0, "poles": [], "extra": 1},
        ],
    )
    def test_invalid_shape(self, temp_dir: Path, payload: dict[str, object]) -> None:
        path = temp_dir / "atlas.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ArtifactError, match="Malformed artifact"):
            load_atlas(path)


class TestDimensionFiles:
    def test_round_trip(self, temp_dir: Path) -> None:
        estimate = critical_exponent(power_law_atlas(1 << 12, 0.0), DimensionOptions(rho=1.0))
        path = save_dimension(estimate, temp_dir)
        loaded = load_dimension(path)
        assert loaded.t_star == estimate.t_star
        assert loaded.theoretical == pytest.approx(2.0 / 3.0)
        assert len(loaded.blocks) == len(estimate.block_sums)
        assert (temp_dir / BLOCKS_CSV).exists()
        rows = (temp_dir / COMPARISON_CSV).read_text().splitlines()
        assert rows[0] == "M,rho,t_star,t_low,t_high,theoretical,gap"
        assert len(rows) == 2


class TestConstructionFiles:
    def test_comb_written_separately(self, temp_dir: Path) -> None:
        save_construction({"kind": "composed_f", "comb": {"alpha": 0.5}}, temp_dir)
        assert read_json(temp_dir / COMB_FILE) == {"alpha": 0.5}
        assert load_construction(temp_dir)["kind"] == "composed_f"

    def test_no_comb(self, temp_dir: Path) -> None:
        save_construction({"kind": "F_arcsin", "comb": None}, temp_dir)
        assert not (temp_dir / COMB_FILE).exists()

    def test_requires_kind(self, temp_dir: Path) -> None:
        write_json(temp_dir / "construction.json", {"M": 1})
        with pytest.raises(ArtifactError, match="no kind"):
            load_construction(temp_dir)
