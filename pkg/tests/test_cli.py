import json
import logging
import math
import time

import numpy as np
import pytest

from gridgauss.app.commands.bench import per_doubling_ratio
from gridgauss.app.core.distribution import sample
from gridgauss.app.core.grid import GridShape
from gridgauss.app.core.synth import random_structured_gaussian
from gridgauss.app.error_handlers import EXIT_FAILURE, EXIT_OK, EXIT_USAGE
from gridgauss.app.main import build_parser, run
from gridgauss.app.schemas.report import SCHEMA_VERSION
from gridgauss.app.utils.gmap_io import load_bundle, load_mask, load_model, read_gmap, read_map, write_gmap
from gridgauss.app.utils.pgm import read_pgm

# Setup logging
logging.basicConfig(level=logging.DEBUG)
logger = logging.getLogger(__name__)

pytestmark = pytest.mark.cli


def _last_json(text):
    return json.loads(text.strip().splitlines()[-1])


@pytest.fixture(scope="function")
def invoke(capsys):
    """Run the CLI and return (exit code, stdout summary or None, stderr)."""

    def _invoke(*argv):
        code = run([str(arg) for arg in argv])
        captured = capsys.readouterr()
        lines = captured.out.strip().splitlines()
        summary = json.loads(lines[-1]) if lines and lines[-1].startswith("{") else None
        return code, summary, captured.err

    return _invoke


@pytest.fixture(scope="function")
def workspace(tmp_path, invoke):
    """A ground-truth ensemble and its generating model."""
    code, _, _ = invoke(
        "synth",
        "--kind", "ground_truth_gmrf",
        "--size", "4x4",
        "--count", "20",
        "--seed", "3",
        "--out", tmp_path / "bundle.gmap",
        "--model-out", tmp_path / "truth",
    )
    assert code == EXIT_OK
    return tmp_path


def test_parser_lists_every_command():
    parser = build_parser()
    choices = parser._subparsers._group_actions[0].choices
    assert list(choices) == [
        "fit", "sample", "condition", "logprob", "introspect", "synth", "eval", "oracle-check", "bench"
    ]


def test_help_and_usage_errors(invoke):
    assert invoke("--help")[0] == EXIT_OK
    assert invoke()[0] == EXIT_USAGE
    assert invoke("fit", "--no-such-flag")[0] == EXIT_USAGE
    assert invoke("sample", "--model", "x", "--count", "many")[0] == EXIT_USAGE


def test_synth_writes_bundle_and_model(workspace):
    bundle = load_bundle(workspace / "bundle.gmap")
    assert bundle.count == 20
    assert load_model(workspace / "truth").shape == bundle.shape


def test_fit_then_logprob_round_trip(workspace, invoke):
    code, fitted, _ = invoke(
        "fit",
        "--samples", workspace / "bundle.gmap",
        "--out", workspace / "model",
        "--report", workspace / "fit.json",
        "--max-iters", "100",
        "--seed", "1",
    )
    assert code == EXIT_OK
    report = json.loads((workspace / "fit.json").read_text())
    assert report["schema_version"] == 1
    assert report["final_nll"] == report["trace"][-1] == fitted["final_nll"]
    assert report["iterations"] == fitted["iterations"] <= 100

    code, scored, _ = invoke(
        "logprob", "--model", workspace / "model", "--samples", workspace / "bundle.gmap",
        "--out", workspace / "lp.json",
    )
    assert code == EXIT_OK
    assert abs(scored["nll"] - report["final_nll"]) <= 1e-9 * abs(report["final_nll"])
    scored_report = json.loads((workspace / "lp.json").read_text())
    assert len(scored_report["log_density"]) == 20
    assert scored_report["schema_version"] == report["schema_version"] == SCHEMA_VERSION


def test_fit_diagonal_scaled_and_fixed_mean(workspace, invoke):
    write_gmap(workspace / "zero.gmap", np.zeros((4, 4)))
    code, _, _ = invoke(
        "fit",
        "--samples", workspace / "bundle.gmap",
        "--out", workspace / "diag",
        "--diagonal-only",
        "--scaled",
        "--fixed-mean", workspace / "zero.gmap",
        "--max-iters", "20",
        "--init", "identity",
        "--seed", "2",
    )
    assert code == EXIT_OK
    model = load_model(workspace / "diag")
    np.testing.assert_array_equal(model.mean, 0.0)
    np.testing.assert_array_equal(model.chol.off_diag, 0.0)
    assert model.chol.scaled


def test_fit_reports_bad_hyperparameters(workspace, invoke):
    code, _, err = invoke(
        "fit", "--samples", workspace / "bundle.gmap", "--out", workspace / "m", "--learning-rate", "-1"
    )
    assert code == EXIT_USAGE
    assert _last_json(err)["error"]["code"] == "INVALID_ARGUMENT"


def test_sample_is_reproducible(workspace, invoke):
    for name in ("a.gmap", "b.gmap"):
        code, summary, _ = invoke(
            "sample", "--model", workspace / "truth", "--count", "3", "--seed", "7", "--out", workspace / name
        )
        assert code == EXIT_OK
        assert summary["count"] == 3
    assert (workspace / "a.gmap").read_bytes() == (workspace / "b.gmap").read_bytes()


def test_sample_csv_and_pgm_outputs(workspace, invoke):
    code, summary, _ = invoke(
        "sample", "--model", workspace / "truth", "--count", "2", "--seed", "1", "--exact",
        "--format", "csv", "--out", workspace / "draw.csv",
    )
    assert code == EXIT_OK
    assert [path.split("/")[-1] for path in summary["outputs"]] == ["draw.0000.csv", "draw.0001.csv"]

    code, summary, _ = invoke(
        "sample", "--model", workspace / "truth", "--seed", "1", "--jacobi-iters", "5",
        "--format", "pgm", "--out", workspace / "draw.pgm",
    )
    assert code == EXIT_OK
    assert read_pgm(workspace / "draw.pgm").shape == (4, 4)


def test_sample_with_f32_precision(workspace, invoke):
    code, _, _ = invoke(
        "sample", "--model", workspace / "truth", "--seed", "1", "--precision", "f32", "--out", workspace / "s.gmap"
    )
    assert code == EXIT_OK
    assert (workspace / "s.gmap").stat().st_size == 20 + 16 * 4


def test_missing_model_is_a_format_error(workspace, invoke):
    code, _, err = invoke("sample", "--model", workspace / "nope", "--out", workspace / "x.gmap")
    assert code == EXIT_FAILURE
    assert _last_json(err)["error"]["code"] == "GRID_FORMAT_ERROR"


def test_condition_with_random_known_pixels(workspace, invoke):
    code, summary, _ = invoke(
        "condition",
        "--model", workspace / "truth",
        "--random-known", "5",
        "--count", "4",
        "--seed", "11",
        "--out", workspace / "cond.gmap",
        "--mean-out", workspace / "cond_mean.gmap",
    )
    assert code == EXIT_OK
    assert summary["known_pixels"] == 5
    mask = load_mask(workspace / "cond.gmap.mask.gmap")
    draws = load_bundle(workspace / "cond.gmap")
    mean = read_map(workspace / "cond_mean.gmap")
    assert mask.known_count == 5
    for draw in draws.values:
        np.testing.assert_array_equal(draw[mask.known], mean[mask.known])


def test_condition_with_mask_and_values(workspace, invoke):
    known = np.zeros((4, 4))
    known[0, 0] = known[3, 3] = 1
    write_gmap(workspace / "mask.gmap", known.astype(np.uint8), "u8")
    write_gmap(workspace / "values.gmap", np.full((4, 4), 2.0))
    code, _, _ = invoke(
        "condition",
        "--model", workspace / "truth",
        "--mask", workspace / "mask.gmap",
        "--values", workspace / "values.gmap",
        "--count", "2",
        "--seed", "1",
        "--out", workspace / "c.gmap",
    )
    assert code == EXIT_OK
    draws = read_gmap(workspace / "c.gmap")
    np.testing.assert_array_equal(draws[:, 0, 0], 2.0)
    np.testing.assert_array_equal(draws[:, 3, 3], 2.0)


@pytest.mark.parametrize(
    "extra",
    [
        [],
        ["--random-known", "3", "--mask", "m.gmap"],
        ["--mask", "m.gmap"],
    ],
)
def test_condition_argument_errors(workspace, invoke, extra):
    code, _, err = invoke("condition", "--model", workspace / "truth", "--out", workspace / "c.gmap", *extra)
    assert code == EXIT_USAGE
    assert _last_json(err)["error"]["code"] == "INVALID_ARGUMENT"


def test_condition_all_known_is_degenerate_free(workspace, invoke):
    code, _, _ = invoke(
        "condition", "--model", workspace / "truth", "--random-known", "16", "--seed", "2",
        "--out", workspace / "all.gmap",
    )
    assert code == EXIT_OK


def test_introspect_outputs(workspace, invoke):
    code, summary, _ = invoke(
        "introspect", "--model", workspace / "truth", "--pixel", "1,2", "--out", workspace / "row.gmap",
        "--variance-out", workspace / "var.gmap",
    )
    assert code == EXIT_OK
    assert summary["pixel"] == 6
    row = read_map(workspace / "row.gmap")
    variance = read_map(workspace / "var.gmap")
    assert row[1, 2] == pytest.approx(variance[1, 2])
    assert summary["variance"] == pytest.approx(variance[1, 2])

    code, _, _ = invoke(
        "introspect", "--model", workspace / "truth", "--pixel", "0,0", "--render", "pgm",
        "--out", workspace / "row.pgm",
    )
    assert code == EXIT_OK
    assert (workspace / "row.pgm").read_bytes().startswith(b"P5\n4 4\n255\n")

    code, summary, _ = invoke(
        "introspect", "--model", workspace / "truth", "--pixel", "0,0", "--format", "pgm", "--split",
        "--method", "jacobi", "--jacobi-iters", "16", "--out", workspace / "split",
    )
    assert code == EXIT_OK
    assert read_pgm(workspace / "split.pos.pgm").shape == (4, 4)
    assert read_pgm(workspace / "split.neg.pgm").shape == (4, 4)


def test_introspect_rejects_pixel_outside_grid(workspace, invoke):
    code, _, _ = invoke("introspect", "--model", workspace / "truth", "--pixel", "4,0", "--out", workspace / "r.gmap")
    assert code == EXIT_USAGE
    code, _, _ = invoke("introspect", "--model", workspace / "truth", "--pixel", "a,b", "--out", workspace / "r.gmap")
    assert code == EXIT_USAGE


def test_synth_other_kinds(tmp_path, invoke):
    code, summary, _ = invoke(
        "synth", "--kind", "smooth_field", "--size", "8x8", "--count", "4", "--seed", "1", "--out", tmp_path / "s.gmap"
    )
    assert code == EXIT_OK
    assert summary["lag1_autocorrelation"] > 0.2

    write_gmap(tmp_path / "std.gmap", np.full((3, 3), 0.5))
    code, summary, _ = invoke(
        "synth", "--kind", "diagonal_noise", "--size", "3x3", "--count", "2", "--std-map", tmp_path / "std.gmap",
        "--mean", "4", "--seed", "1", "--out", tmp_path / "d.gmap", "--model-out", tmp_path / "dm",
    )
    assert code == EXIT_OK
    np.testing.assert_allclose(np.exp(-load_model(tmp_path / "dm").chol.log_diag), 0.5)

    code, _, _ = invoke(
        "synth", "--kind", "diagonal_noise", "--count", "2", "--std", "-1", "--out", tmp_path / "x.gmap"
    )
    assert code == EXIT_USAGE
    code, _, _ = invoke("synth", "--kind", "smooth_field", "--count", "2")
    assert code == EXIT_USAGE


def test_eval_with_uncertainty_and_samples(tmp_path, invoke):
    rng = np.random.default_rng(0)
    truth = rng.uniform(1.0, 5.0, size=(2, 6, 6))
    prediction = truth + rng.normal(0.0, 0.2, size=truth.shape)
    write_gmap(tmp_path / "gt.gmap", truth)
    write_gmap(tmp_path / "pred.gmap", prediction)
    write_gmap(tmp_path / "unc.gmap", np.abs(prediction - truth))

    code, summary, _ = invoke(
        "eval", "--pred", tmp_path / "pred.gmap", "--gt", tmp_path / "gt.gmap", "--uncertainty", tmp_path / "unc.gmap",
        "--steps", "20", "--report", tmp_path / "rows.jsonl", "--out", tmp_path / "summary.json",
    )
    assert code == EXIT_OK
    assert summary["pairs"] == 2
    assert summary["summary"]["ause"] == pytest.approx(0.0, abs=1e-12)
    rows = [json.loads(line) for line in (tmp_path / "rows.jsonl").read_text().splitlines()]
    assert [row["name"] for row in rows] == ["pair-000", "pair-001"]
    assert (tmp_path / "rows.csv").read_text().startswith("metric,mean")
    assert json.loads((tmp_path / "summary.json").read_text())["schema_version"] == 1

    write_gmap(tmp_path / "ens.gmap", truth[0] + rng.normal(0.0, 0.1, size=(8, 6, 6)))
    write_gmap(tmp_path / "gt0.gmap", truth[0])
    code, summary, _ = invoke(
        "eval", "--samples", tmp_path / "ens.gmap", "--gt", tmp_path / "gt0.gmap", "--metric", "a1"
    )
    assert code == EXIT_OK
    assert summary["pairs"] == 1

    code, _, _ = invoke("eval", "--gt", tmp_path / "gt.gmap")
    assert code == EXIT_USAGE


def test_oracle_check_command(tmp_path, invoke):
    code, summary, _ = invoke("oracle-check", "--seeds", "3", "--max-size", "5x5", "--report", tmp_path / "oracle.json")
    assert code == EXIT_OK
    assert summary == {"passed": True, "cases": 3, "failures": 0}
    assert json.loads((tmp_path / "oracle.json").read_text())["passed"] is True

    code, summary, _ = invoke("oracle-check", "--seeds", "1", "--max-size", "4x4", "--tolerance", "1e-300")
    assert code == EXIT_FAILURE
    assert summary["failures"] == 1


def test_bench_command(tmp_path, invoke):
    code, summary, _ = invoke(
        "bench", "--sizes", "4x4,8x8", "--jacobi-iters", "5", "--seed", "0", "--report", tmp_path / "bench.json"
    )
    assert code == EXIT_OK
    report = json.loads((tmp_path / "bench.json").read_text())
    assert [entry["pixels"] for entry in report["entries"]] == [16, 64]
    assert len(report["ratios"]) == 1
    assert len(summary["ratios_per_pixel_doubling"]) == 1
    assert invoke("bench", "--sizes", "4by4")[0] == EXIT_USAGE


def test_per_doubling_ratio():
    assert per_doubling_ratio(4.0, 4.0) == pytest.approx(2.0)
    assert per_doubling_ratio(2.0, 2.0) == pytest.approx(2.0)
    assert math.isnan(per_doubling_ratio(1.3, 1.0))


@pytest.mark.slow
def test_jacobi_sampling_cost_grows_linearly_with_pixels():
    timings = []
    for side in (64, 128, 256):
        model = random_structured_gaussian(GridShape(side, side), 1, seed=0)
        best = math.inf
        for _ in range(5):
            started = time.perf_counter()
            sample(model, 1, seed=1, iterations=100)
            best = min(best, time.perf_counter() - started)
        timings.append(best)
    for previous, current in zip(timings, timings[1:]):
        assert per_doubling_ratio(current / previous, 4.0) <= 2.5


def test_log_json_flag_emits_json_logs(tmp_path, invoke):
    code, _, err = invoke(
        "--log-json", "--log-level", "INFO", "synth", "--kind", "diagonal_noise", "--size", "2x2", "--count", "2",
        "--seed", "1", "--out", tmp_path / "x.gmap",
    )
    assert code == EXIT_OK
    lines = [json.loads(line) for line in err.strip().splitlines() if line.startswith("{")]
    assert any(line.get("kind") == "diagonal_noise" for line in lines)
