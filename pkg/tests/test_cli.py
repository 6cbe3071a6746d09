import numpy as np
import pandas as pd
import pytest

from wam_runtime.cli import cli_main
from wam_runtime.config import load_config, parse_config
from wam_runtime.records import read_chunk, write_chunk
from wam_runtime.signal_pipeline import ActionChunk
from wam_runtime.trace import read_trace

SIM_ARGS = ["sim", "--seed", "7", "--duration", "1.0"]


def test_sim_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert cli_main(SIM_ARGS + ["--trace", str(a), "--metrics", str(tmp_path / "m.csv")]) == 0
    assert cli_main(SIM_ARGS + ["--trace", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()

    trace = read_trace(a)
    assert trace.header.seed == 7
    assert len(trace.ticks()) == 50
    assert pd.read_csv(tmp_path / "m.csv").shape[0] == 1


def test_sim_replay(tmp_path, capsys):
    trace = tmp_path / "live.txt"
    assert cli_main(SIM_ARGS + ["--trace", str(trace)]) == 0
    assert cli_main(SIM_ARGS + ["--replay", str(trace)]) == 0
    assert "swap_count" in capsys.readouterr().out


def test_sim_no_fusion(tmp_path):
    trace = tmp_path / "t.txt"
    assert cli_main(SIM_ARGS + ["--no-fusion", "--trace", str(trace)]) == 0
    fusions = read_trace(trace).fusions()
    assert fusions and all(w == 0.0 for e in fusions for w in e.weights)


def test_print_config(capsys):
    assert cli_main(["sim", "--print-config", "--seed", "3"]) == 0
    printed = parse_config(capsys.readouterr().out)
    assert printed == load_config().model_copy(update={"seed": 3})


def test_bench(tmp_path, capsys):
    csv = tmp_path / "t3.csv"
    xlsx = tmp_path / "t3.xlsx"
    assert cli_main(["bench", "--presets", "table3", "--csv", str(csv), "--xlsx", str(xlsx)]) == 0
    out = capsys.readouterr().out
    assert "54.38x" in out
    assert len(pd.read_csv(csv)) == 6
    assert xlsx.exists()


def test_mask_export_matches_golden(tmp_path, golden_dir, capsys):
    out = tmp_path / "m.txt"
    assert cli_main(["mask", "--kind", "v2a", "--layout", "small", "--export", str(out)]) == 0
    assert out.read_bytes() == (golden_dir / "mask_v2a_small.txt").read_bytes()

    assert cli_main(["mask", "--kind", "v2a", "--check", str(golden_dir / "mask_v2a_small.txt")]) == 0
    assert cli_main(["mask", "--kind", "ar", "--check", str(golden_dir / "mask_v2a_small.txt")]) == 1
    assert "does not match" in capsys.readouterr().err


def test_mask_summary_and_show(capsys):
    assert cli_main(["mask", "--kind", "ar", "--layout", "default", "--summary", "--show"]) == 0
    out = capsys.readouterr().out
    assert "clean_video" in out
    assert "#" in out


def test_fuse_and_smooth(tmp_path, capsys):
    old, fresh, fused = tmp_path / "old.txt", tmp_path / "fresh.txt", tmp_path / "fused.txt"
    write_chunk(ActionChunk(np.ones((16, 10)), 10.0), old)
    write_chunk(ActionChunk(np.zeros((16, 10)), 10.0), fresh)

    assert cli_main(["fuse", "--old", str(old), "--fresh", str(fresh), "--executed", "4",
                     "--delay", "0.15", "--out", str(fused)]) == 0
    assert "d=2" in capsys.readouterr().out
    result = read_chunk(fused)
    np.testing.assert_array_equal(result.actions[:2], 1.0)
    np.testing.assert_array_equal(result.actions[12:], 0.0)

    smoothed = tmp_path / "smoothed.txt"
    assert cli_main(["smooth", "--chunk", str(fused), "--control-hz", "50", "--out", str(smoothed)]) == 0
    assert read_chunk(smoothed).horizon == 80


def test_quant_round_trip(tmp_path, capsys):
    weights = tmp_path / "w.npy"
    blob = tmp_path / "w.fp8"
    np.save(weights, np.random.default_rng(0).standard_normal((16, 32)))

    assert cli_main(["quant", "--weights", str(weights), "--out", str(blob)]) == 0
    assert blob.stat().st_size == 16 + 16 * 32
    assert cli_main(["quant", "--inspect", str(blob)]) == 0
    assert "(16, 32)" in capsys.readouterr().out

    odd = tmp_path / "odd.npy"
    np.save(odd, np.ones((3, 5)))
    assert cli_main(["quant", "--weights", str(odd)]) == 0
    assert "full precision" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["sim", "--frobnicate"],
    ["mask", "--kind", "diagonal"],
    ["quant"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert cli_main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, capsys):
    assert cli_main(["sim", "--config", str(tmp_path / "missing.ini")]) == 1
    assert cli_main(["quant", "--inspect", str(tmp_path / "missing.fp8")]) == 1
    err = capsys.readouterr().err
    assert err.count("error:") == 2


def test_version(capsys):
    assert cli_main(["--version"]) == 0
    assert "wam-runtime" in capsys.readouterr().out
