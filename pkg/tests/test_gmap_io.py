import json
import logging
import struct

import numpy as np
import pytest

from gridgauss.app.config.settings import settings
from gridgauss.app.core.conditioning import PixelMask
from gridgauss.app.core.grid import GridShape, SampleBundle
from gridgauss.app.core.synth import random_structured_gaussian
from gridgauss.app.exceptions import CapacityError, GridFormatError, InvalidArgumentError
from gridgauss.app.utils.gmap_io import (
    HEADER,
    load_bundle,
    load_mask,
    load_model,
    model_paths,
    read_csv,
    read_gmap,
    read_grid,
    read_map,
    save_bundle,
    save_mask,
    save_model,
    write_csv,
    write_gmap,
    write_grid,
)
from gridgauss.app.utils.pgm import read_pgm, to_gray, write_pgm, write_signed_pgm, write_split_pgm

# Setup logging
logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger(__name__)


@pytest.fixture(scope="function")
def values():
    return np.random.default_rng(0).normal(size=(3, 4, 5))


def test_gmap_header_and_channel_major_layout(tmp_path):
    values = np.arange(12.0).reshape(2, 2, 3)
    path = write_gmap(tmp_path / "grid.gmap", values)
    data = path.read_bytes()
    assert HEADER.unpack_from(data) == (b"GMAP", 1, 2, 2, 3, 2)
    assert HEADER.size == 20
    payload = struct.unpack("<12d", data[HEADER.size :])
    assert payload == tuple(range(12))


def test_gmap_f64_is_exact(tmp_path, values):
    write_gmap(tmp_path / "grid.gmap", values)
    np.testing.assert_array_equal(read_gmap(tmp_path / "grid.gmap"), values)


def test_gmap_f32_rounds_to_single_precision(tmp_path, values):
    write_gmap(tmp_path / "grid.gmap", values, precision="f32")
    result = read_gmap(tmp_path / "grid.gmap")
    assert result.dtype == np.float64
    np.testing.assert_array_equal(result, values.astype(np.float32).astype(np.float64))


def test_single_map_gains_a_channel_axis(tmp_path):
    write_gmap(tmp_path / "map.gmap", np.ones((2, 2)))
    assert read_gmap(tmp_path / "map.gmap").shape == (1, 2, 2)
    np.testing.assert_array_equal(read_map(tmp_path / "map.gmap"), np.ones((2, 2)))


def test_gmap_rejects_bad_input(tmp_path):
    with pytest.raises(InvalidArgumentError):
        write_gmap(tmp_path / "x.gmap", np.ones((2, 2)), precision="f16")
    with pytest.raises(InvalidArgumentError):
        write_gmap(tmp_path / "x.gmap", np.full((2, 2), np.nan))
    with pytest.raises(InvalidArgumentError):
        write_gmap(tmp_path / "x.gmap", np.ones(3))


@pytest.mark.parametrize(
    "mutate, reason",
    [
        (lambda data: b"XMAP" + data[4:], "bad magic"),
        (lambda data: data[:10], "truncated header"),
        (lambda data: data[:-1], "payload has"),
        (lambda data: data[:4] + struct.pack("<H", 9) + data[6:], "unsupported version"),
        (lambda data: data[:6] + struct.pack("<H", 7) + data[8:], "unknown dtype tag"),
    ],
)
def test_gmap_reader_reports_malformed_files(tmp_path, mutate, reason):
    path = write_gmap(tmp_path / "grid.gmap", np.ones((2, 2)))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(GridFormatError) as exc:
        read_gmap(path)
    assert reason in exc.value.details["reason"]


def test_gmap_reader_rejects_missing_and_non_finite(tmp_path):
    with pytest.raises(GridFormatError):
        read_gmap(tmp_path / "missing.gmap")
    path = tmp_path / "nan.gmap"
    path.write_bytes(HEADER.pack(b"GMAP", 1, 2, 1, 1, 1) + struct.pack("<d", float("nan")))
    with pytest.raises(GridFormatError):
        read_gmap(path)


def test_csv_round_trip_is_exact(tmp_path, values):
    write_csv(tmp_path / "map.csv", values[0])
    np.testing.assert_array_equal(read_csv(tmp_path / "map.csv")[0], values[0])
    np.testing.assert_array_equal(read_grid(tmp_path / "map.csv")[0], values[0])
    lines = (tmp_path / "map.csv").read_text().strip().splitlines()
    assert len(lines) == 4
    assert len(lines[0].split(",")) == 5


def test_csv_limits(tmp_path, mocker, values):
    with pytest.raises(InvalidArgumentError):
        write_csv(tmp_path / "many.csv", values)
    mocker.patch.object(settings, "csv_max_pixels", 10)
    with pytest.raises(CapacityError):
        write_csv(tmp_path / "big.csv", values[0])
    (tmp_path / "big.csv").write_text("\n".join(",".join(["1"] * 5) for _ in range(4)))
    with pytest.raises(CapacityError):
        read_csv(tmp_path / "big.csv")
    (tmp_path / "bad.csv").write_text("1,x\n")
    with pytest.raises(GridFormatError):
        read_csv(tmp_path / "bad.csv")


def test_write_grid_dispatch(tmp_path):
    assert write_grid(tmp_path / "a.csv", np.ones((2, 2)), fmt="csv").suffix == ".csv"
    assert write_grid(tmp_path / "a.gmap", np.ones((2, 2))).suffix == ".gmap"
    with pytest.raises(InvalidArgumentError):
        write_grid(tmp_path / "a.pgm", np.ones((2, 2)), fmt="pgm")


def test_bundle_round_trip(tmp_path, values):
    bundle = SampleBundle.from_array(values)
    save_bundle(tmp_path / "bundle.gmap", bundle)
    loaded = load_bundle(tmp_path / "bundle.gmap")
    assert loaded.shape == GridShape(4, 5)
    np.testing.assert_array_equal(loaded.values, values)


def test_mask_round_trip(tmp_path):
    mask = PixelMask.random(GridShape(4, 4), 5, seed=1)
    path = save_mask(tmp_path / "mask.gmap", mask)
    assert HEADER.unpack_from(path.read_bytes())[2] == 3
    np.testing.assert_array_equal(load_mask(path).known, mask.known)


@pytest.mark.parametrize("scaled", [False, True])
def test_model_round_trip(tmp_path, scaled):
    g = random_structured_gaussian(GridShape(4, 6), 2, seed=3, scaled=scaled)
    paths = save_model(tmp_path / "model", g)
    assert paths == model_paths(tmp_path / "model")
    assert [path.name for path in paths] == ["model.mean.gmap", "model.chol.gmap", "model.json"]

    loaded = load_model(tmp_path / "model")
    np.testing.assert_array_equal(loaded.mean, g.mean)
    np.testing.assert_array_equal(loaded.chol.log_diag, g.chol.log_diag)
    np.testing.assert_array_equal(loaded.chol.off_diag, g.chol.off_diag)
    np.testing.assert_array_equal(loaded.chol.off_diag_scale_c, g.chol.off_diag_scale_c)
    assert loaded.chol.diag_scale_b == g.chol.diag_scale_b
    assert loaded.chol.scaled is scaled

    sidecar = json.loads(paths[2].read_text())
    assert sidecar["schema_version"] == 1
    assert (sidecar["diag_scale_b"] is None) is not scaled


def test_model_loader_reports_broken_files(tmp_path):
    with pytest.raises(GridFormatError):
        load_model(tmp_path / "absent")

    g = random_structured_gaussian(GridShape(3, 3), 1, seed=4)
    mean_path, chol_path, sidecar_path = save_model(tmp_path / "model", g)
    sidecar_path.write_text("{not json")
    with pytest.raises(GridFormatError):
        load_model(tmp_path / "model")

    save_model(tmp_path / "model", g)
    write_gmap(chol_path, np.zeros((2, 3, 3)))
    with pytest.raises(GridFormatError) as exc:
        load_model(tmp_path / "model")
    assert "channels" in exc.value.details["reason"]


def test_to_gray_mapping():
    gray = to_gray(np.array([[-1.0, 0.0, 0.5, 1.0, 2.0]]), 0.0, 1.0)
    np.testing.assert_array_equal(gray, [[0, 0, 128, 255, 255]])
    with pytest.raises(InvalidArgumentError):
        to_gray(np.zeros((2, 2)), 1.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        to_gray(np.zeros(3), 0.0, 1.0)


def test_pgm_files(tmp_path):
    values = np.array([[0.0, 0.05], [-0.05, 0.025]])
    path = write_signed_pgm(tmp_path / "row.pgm", values, clip=0.05)
    assert path.read_bytes().startswith(b"P5\n2 2\n255\n")
    np.testing.assert_array_equal(read_pgm(path), [[128, 255], [0, 191]])

    positive, negative = write_split_pgm(tmp_path / "row", values, clip=0.05)
    assert positive.name == "row.pos.pgm" and negative.name == "row.neg.pgm"
    np.testing.assert_array_equal(read_pgm(positive), [[0, 255], [0, 128]])
    np.testing.assert_array_equal(read_pgm(negative), [[0, 0], [255, 0]])

    (tmp_path / "text.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(InvalidArgumentError):
        read_pgm(tmp_path / "text.pgm")
    assert write_pgm(tmp_path / "flat.pgm", np.ones((1, 1)), 0.0, 2.0).exists()
