"""
End-to-end runs of the sdtm command line on a tiny synthetic corpus.
"""
import numpy as np
import pytest

from sdtm import codec
from sdtm.commands.cost import parameter_costs
from sdtm.commands.sweep import parse_grid
from sdtm.commands.train import FINAL_CHECKPOINT, METRICS_LOG
from sdtm.config import load_run_config
from sdtm.errors import ConfigError
from sdtm.main import main
from sdtm.schemas import parse_line

TINY_FLAGS = [
    "--iters", "4",
    "--batch-size", "2",
    "--image-size", "16",
    "--width", "4",
    "--structd-width", "4",
    "--fred-width", "4",
    "--synthetic-categories", "4",
    "--synthetic-images", "6",
    "--checkpoint-interval", "0",
    "--eval-episodes", "2",
]


def train(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["train", *TINY_FLAGS, "--output-dir", str(out), *extra])
    return code, out


def log_lines(out):
    return [parse_line(line) for line in (out / METRICS_LOG).read_text().splitlines()]


@pytest.fixture
def trained_run(tmp_path):
    code, out = train(tmp_path, "base", "--seed", "1")
    assert code == 0
    return out


def test_train_writes_logs_and_checkpoint(trained_run):
    """A short run logs every step and always writes the final checkpoint."""
    rows = log_lines(trained_run)
    assert [int(r["iteration"]) for r in rows] == [1, 2, 3, 4]
    assert (trained_run / FINAL_CHECKPOINT).is_file()
    for row in rows:
        assert all(np.isfinite(float(row[key])) for key in ("loss_d", "loss_g", "adv_d", "cls_d", "structd_d", "fred_d"))


def test_train_is_byte_deterministic(tmp_path):
    """Two runs with the same flags and seed produce identical logs and checkpoints."""
    _, a = train(tmp_path, "a", "--seed", "3")
    _, b = train(tmp_path, "b", "--seed", "3")
    assert (a / METRICS_LOG).read_bytes() == (b / METRICS_LOG).read_bytes()


def test_no_structd_drops_columns(tmp_path):
    code, out = train(tmp_path, "ablate", "--no-structd")
    assert code == 0
    for row in log_lines(out):
        assert "structd_d" not in row and "structd_g" not in row
        parts = float(row["adv_d"]) + float(row["cls_d"]) + float(row["fred_d"])
        assert float(row["loss_d"]) == pytest.approx(parts, rel=1e-5)


def test_seed_from_environment(tmp_path, monkeypatch):
    _, flagged = train(tmp_path, "flag", "--seed", "5")
    monkeypatch.setenv("SDTM_SEED", "5")
    _, from_env = train(tmp_path, "env")
    assert (flagged / METRICS_LOG).read_bytes() == (from_env / METRICS_LOG).read_bytes()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("lambda_fre=0\nseed=2\n")
    code, out = train(tmp_path, "cfg", "--config", str(cfg), "--seed", "4")
    assert code == 0
    assert all("fred_d" not in row for row in log_lines(out))
    _, flags_only = train(tmp_path, "flags", "--lambda-fre", "0", "--seed", "4")
    assert (out / METRICS_LOG).read_bytes() == (flags_only / METRICS_LOG).read_bytes()


def test_resume_continues_schedule(tmp_path):
    """A run resumed from its mid-point checkpoint logs the same steps as the uninterrupted run."""
    code, out = train(tmp_path, "resume", "--checkpoint-interval", "2")
    assert code == 0
    full = (out / METRICS_LOG).read_text()
    mid = out / "checkpoints" / "iter_0000002.sdtm"
    assert mid.is_file()

    (out / METRICS_LOG).write_text("".join(full.splitlines(keepends=True)[:2]))
    assert main(["train", "--resume", str(mid)]) == 0
    assert (out / METRICS_LOG).read_text() == full
    assert [float(r["lr"]) for r in log_lines(out)][2:] == [1e-4 * 2 / 2, 1e-4 * 1 / 2]


def test_usage_errors(tmp_path, capsys):
    assert main(["train", *TINY_FLAGS, "--output-dir", str(tmp_path / "x"), "--k", "0"]) == 2
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_missing_data_root(tmp_path, capsys):
    code, _ = train(tmp_path, "x", "--data-root", str(tmp_path / "nowhere"))
    assert code == 2
    assert "nowhere" in capsys.readouterr().err


def test_generate(tmp_path, trained_run, synthetic_index, capsys):
    inputs = [str(p) for p in synthetic_index.files[synthetic_index.unseen[0]][:3]]
    out = tmp_path / "gen"
    args = ["generate", "--checkpoint", str(trained_run / FINAL_CHECKPOINT), *inputs, "-n", "4", "--out", str(out)]
    assert main(args + ["--seed", "9"]) == 0
    written = capsys.readouterr().out.split()
    assert len(written) == 4
    first = [codec.decode(p).data for p in written]
    assert all(image.shape == (3, 16, 16) for image in first)

    assert main(args + ["--seed", "9"]) == 0
    again = [codec.decode(p).data for p in capsys.readouterr().out.split()]
    assert all(np.array_equal(a, b) for a, b in zip(first, again))


def test_generate_one_shot(tmp_path, trained_run, synthetic_index, capsys):
    source = synthetic_index.files[synthetic_index.seen[0]][0]
    args = ["generate", "--checkpoint", str(trained_run / FINAL_CHECKPOINT), str(source), "-n", "2", "--out", str(tmp_path / "one")]
    assert main(args) == 0
    assert len(capsys.readouterr().out.split()) == 2


def test_generate_rejects_mismatched_inputs(tmp_path, trained_run, synthetic_index, capsys):
    small = tmp_path / "small.ppm"
    small.write_bytes(codec.encode_pnm(np.zeros((3, 8, 8), dtype=np.uint8)))
    source = synthetic_index.files[synthetic_index.seen[0]][0]
    args = ["generate", "--checkpoint", str(trained_run / FINAL_CHECKPOINT), str(source), str(small), "--out", str(tmp_path / "g")]
    assert main(args) == 2
    assert "small.ppm" in capsys.readouterr().err


def test_eval_report(trained_run, capsys):
    args = ["eval", "--checkpoint", str(trained_run / FINAL_CHECKPOINT), "--episodes", "2", "--samples", "2"]
    assert main(args) == 0
    fields = parse_line(capsys.readouterr().out.strip().splitlines()[-1])
    assert fields["split"] == "unseen" and fields["iteration"] == "4"
    assert float(fields["proxy_frechet"]) >= 0.0


def test_eval_bad_checkpoint(tmp_path, capsys):
    bogus = tmp_path / "bogus.sdtm"
    bogus.write_bytes(b"NOPE 1 0\n")
    assert main(["eval", "--checkpoint", str(bogus)]) == 2
    assert "magic" in capsys.readouterr().err


def test_sweep(tmp_path, capsys):
    out = tmp_path / "sweep"
    args = ["sweep", *TINY_FLAGS[2:], "--iters", "2", "--grid", "0,1", "--output-dir", str(out)]
    assert main(args) == 0
    rows = [parse_line(line) for line in (out / "summary.txt").read_text().splitlines()]
    assert [(float(r["lambda_str"]), float(r["lambda_fre"])) for r in rows] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert all(r["iters"] == "2" for r in rows)
    assert (out / "str_1_fre_0" / FINAL_CHECKPOINT).is_file()


def test_parse_grid():
    assert parse_grid("0,0.1,1,10,100") == [0.0, 0.1, 1.0, 10.0, 100.0]
    with pytest.raises(ConfigError):
        parse_grid("1,-1")
    with pytest.raises(ConfigError):
        parse_grid("a,b")


def test_cost(capsys):
    assert main(["cost"]) == 0
    rows = {r["component"]: r for r in map(parse_line, capsys.readouterr().out.splitlines())}
    assert set(rows) == {"generator", "discriminator", "baseline", "texmod", "structd", "fred"}
    assert float(rows["structd"]["overhead_pct"]) < 5.0


def test_parameter_costs_add_up():
    rows = {r.component: r for r in parameter_costs(load_run_config(), n_classes=3)}
    assert rows["baseline"].parameters == rows["generator"].parameters + rows["discriminator"].parameters
    assert rows["structd"].parameters == 19457


def test_inspect_laplacian(tmp_path, capsys):
    image = tmp_path / "flat.ppm"
    image.write_bytes(codec.encode_pnm(np.full((3, 8, 8), 77, dtype=np.uint8)))
    out = tmp_path / "lap.ppm"
    assert main(["inspect-laplacian", str(image), "--out", str(out)]) == 0
    fields = parse_line(capsys.readouterr().out)
    assert float(fields["laplacian_energy"]) == 0.0
    assert np.all(codec.decode(out).data == codec.pixels_to_unit(np.array([128], dtype=np.uint8))[0])


def test_inspect_wavelet(tmp_path, capsys):
    rng = np.random.default_rng(0)
    image = tmp_path / "noise.ppm"
    image.write_bytes(codec.encode_pnm(rng.integers(0, 256, size=(3, 8, 8), dtype=np.uint8)))
    out_dir = tmp_path / "bands"
    assert main(["inspect-wavelet", str(image), "--out-dir", str(out_dir)]) == 0
    fields = parse_line(capsys.readouterr().out)
    band_total = sum(float(fields[f"{b}_energy"]) for b in ("ll", "lh", "hl", "hh"))
    assert band_total == pytest.approx(float(fields["image_energy"]), rel=1e-5)
    assert sorted(p.name for p in out_dir.iterdir()) == ["hh.ppm", "hl.ppm", "lh.ppm", "ll.ppm"]


def test_invalid_tap_layer_aborts_before_writing(tmp_path, capsys):
    code, out = train(tmp_path, "tap", "--tap-layer", "2")
    assert code == 2
    assert "tap_layer" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.slow
def test_eval_improves_with_training(tmp_path, capsys):
    """eval scores the final checkpoint closer to the data than the iteration-50 one."""
    improved = 0
    for seed in range(3):
        out = tmp_path / f"seed{seed}"
        flags = ["--iters", "500", "--width", "16", "--structd-width", "16", "--fred-width", "16", "--checkpoint-interval", "50"]
        assert main(["train", *flags, "--seed", str(seed), "--output-dir", str(out)]) == 0
        frechet = []
        for checkpoint in (out / "checkpoints" / "iter_0000050.sdtm", out / FINAL_CHECKPOINT):
            capsys.readouterr()
            assert main(["eval", "--checkpoint", str(checkpoint), "--split", "seen", "--episodes", "8", "--seed", "7"]) == 0
            frechet.append(float(parse_line(capsys.readouterr().out.strip().splitlines()[-1])["proxy_frechet"]))
        improved += frechet[1] < frechet[0]
    assert improved >= 2


def test_invalid_synthetic_corpus_is_a_usage_error(tmp_path, capsys):
    out = tmp_path / "corpus"
    code = main(["train", *TINY_FLAGS, "--synthetic-categories", "2", "--seen-fraction", "0.2", "--output-dir", str(out)])
    assert code == 2
    assert "no seen category" in capsys.readouterr().err
    assert not (out / "synthetic").exists()


def test_sweep_iterations_follow_config_file(tmp_path):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text("total_iters=1\n")
    out = tmp_path / "sweep"
    assert main(["sweep", *TINY_FLAGS[2:], "--config", str(cfg), "--grid", "1", "--output-dir", str(out)]) == 0
    (row,) = [parse_line(line) for line in (out / "summary.txt").read_text().splitlines()]
    assert row["iters"] == "1"
