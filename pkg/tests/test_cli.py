import csv
import json

import numpy as np
import pytest

from diffmi import cli
from diffmi import tasks as tk

TINY = {
    "tasks": ["bivariate-1x1", "mn-2x2-dense"],
    "methods": ["minde_c", "minde_c_sigma", "dv", "ksg"],
    "seeds": [0, 1],
    "n_train": 600,
    "n_test": 256,
    "sigma": [1.0, 2.0],
    "train": {"iterations": 20, "batch_size": 64, "eval_every": 10},
    "arch": {"width": 8, "n_blocks": 1, "time_embed": 4},
    "critic": {"width": 8, "max_iterations": 20, "eval_every": 10, "batch_size": 32},
    "mc": {"n_runs": 2},
}


def write_config(path, **over):
    path.write_text(json.dumps({**TINY, **over}))
    return path


@pytest.fixture
def tiny_run(tmp_path):
    cfg_path = write_config(tmp_path / "cfg.json", output_dir=str(tmp_path / "out"))
    assert cli.main(["run", str(cfg_path)]) == 0
    return cfg_path, tmp_path / "out"


def test_one_record_per_cell(tiny_run):
    _, out = tiny_run
    recs = cli.read_records(out / "results.csv")
    # per task and seed: minde_c, two sigma cells, dv, ksg
    assert len(recs) == 2 * 2 * 5
    keys = {(r["task_id"], r["method"], r["seed"], r["sigma"]) for r in recs}
    assert len(keys) == len(recs)
    assert len({r["config_hash"] for r in recs}) == len(recs)
    assert all(r["gt"] == pytest.approx(tk.TABLE_GT[r["task_id"]]) for r in recs)
    with open(out / "results.csv") as fh:
        assert next(csv.reader(fh)) == list(cli.RESULT_FIELDS)
    assert (out / "timings.csv").exists() and (out / "table.txt").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["failures"] == [] and summary["n_records"] == 20


def test_rerun_is_idempotent(tiny_run, monkeypatch):
    cfg_path, out = tiny_run
    before = (out / "results.csv").read_bytes()

    def boom(*a, **k):
        raise AssertionError("nothing should be retrained")

    monkeypatch.setattr(cli, "run_job", boom)
    assert cli.main(["run", str(cfg_path)]) == 0
    assert (out / "results.csv").read_bytes() == before
    assert json.loads((out / "summary.json").read_text())["n_jobs_run"] == 0


def test_identical_configs_give_identical_csv(tmp_path):
    outs = []
    for name in ("a", "b"):
        cfg = write_config(tmp_path / f"{name}.json", output_dir=str(tmp_path / name),
                           methods=["minde_j_sigma", "nwj", "ksg"], seeds=[3])
        assert cli.main(["run", str(cfg)]) == 0
        outs.append((tmp_path / name / "results.csv").read_bytes())
    assert outs[0] == outs[1]


def test_adding_a_seed_only_runs_new_cells(tiny_run, monkeypatch):
    cfg_path, out = tiny_run
    calls = []
    real = cli.run_job

    def spy(task_id, group, methods, seed, eff):
        calls.append((task_id, group, seed))
        return real(task_id, group, methods, seed, eff)

    monkeypatch.setattr(cli, "run_job", spy)
    assert cli.main(["run", str(cfg_path), "--seeds", "0,1,2"]) == 0
    assert {c[2] for c in calls} == {2}
    assert len(cli.read_records(out / "results.csv")) == 30


def test_seed_streams_are_independent_per_group():
    a = cli.cell_streams(0, "bivariate-1x1", "minde_c", "minde_c")
    b = cli.cell_streams(0, "bivariate-1x1", "dv", "dv")
    # same data stream, different training stream
    assert a[0].standard_normal() == b[0].standard_normal()
    assert a[1].standard_normal() != b[1].standard_normal()
    c = cli.cell_streams(1, "bivariate-1x1", "minde_c", "minde_c")
    assert a[0].standard_normal() != c[0].standard_normal()


def test_failures_are_recorded_and_exit_code_is_two(tmp_path, monkeypatch):
    cfg_path = write_config(tmp_path / "cfg.json", output_dir=str(tmp_path / "out"), seeds=[0])
    real = cli.run_job

    def flaky(task_id, group, methods, seed, eff):
        if group == "dv":
            raise RuntimeError("critic exploded")
        return real(task_id, group, methods, seed, eff)

    monkeypatch.setattr(cli, "run_job", flaky)
    assert cli.main(["run", str(cfg_path)]) == 2
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert len(summary["failures"]) == 2
    assert all("critic exploded" in f["error"] for f in summary["failures"])
    recs = cli.read_records(tmp_path / "out" / "results.csv")
    assert recs and all(r["method"] != "dv" for r in recs)


def test_output_root_environment_variable(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    cfg_path = write_config(tmp_path / "cfg.json", output_dir="rel", methods=["ksg"],
                            seeds=[0], tasks=["bivariate-1x1"])
    assert cli.main(["run", str(cfg_path)]) == 0
    assert (tmp_path / "root" / "rel" / "results.csv").exists()


def test_config_errors(tmp_path):
    with pytest.raises(ValueError):
        cli.RunConfig(tasks=["no-such-task"])
    with pytest.raises(ValueError):
        cli.RunConfig(tasks=["bivariate-1x1"], methods=["minde_x"])
    with pytest.raises(ValueError):
        cli.RunConfig(tasks=["bivariate-1x1"], seeds=[1, 1])
    with pytest.raises(ValueError):
        cli.RunConfig(tasks=["bivariate-1x1"], sigma=[0.0])
    with pytest.raises(ValueError):
        cli.RunConfig.from_dict({"tasks": ["bivariate-1x1"], "lr": 1.0})
    with pytest.raises(TypeError):
        cli.RunConfig(tasks=["bivariate-1x1"], train={"learning_rate": 1.0})
    cfg = write_config(tmp_path / "cfg.json")
    with pytest.raises(ValueError):
        cli.main(["run", str(cfg), "--seeds", "4,4"])


def test_config_hash_sensitive_to_settings():
    base = cli.RunConfig(tasks=["bivariate-1x1"]).effective()
    other = cli.RunConfig(tasks=["bivariate-1x1"], train={"lr": 2e-4}).effective()
    assert cli.config_hash(base) != cli.config_hash(other)
    assert cli.config_hash(base) == cli.config_hash(cli.RunConfig(tasks=["bivariate-1x1"]).effective())
    spec = tk.get_task("bivariate-1x1")
    h_c = cli.cell_hash(base, spec, "minde_c", 0, None)
    assert h_c == cli.cell_hash({**base, "critic": {}}, spec, "minde_c", 0, None)
    assert h_c != cli.cell_hash(other, spec, "minde_c", 0, None)


def test_desk_scale():
    cfg = cli.RunConfig(tasks=["bivariate-1x1", "mn-25x25-dense"], train={"iterations": 200_000})
    cfg = cli.apply_desk_scale(cfg)
    assert cfg.tasks == ["bivariate-1x1"]
    assert cfg.train["iterations"] == cli.DESK_MAX_ITERATIONS
    assert cfg.critic["max_iterations"] == min(20_000, cli.DESK_MAX_ITERATIONS)
    with pytest.raises(ValueError):
        cli.apply_desk_scale(cli.RunConfig(tasks=["mn-50x50-dense"]))


@pytest.mark.parametrize("value,gt,cell", [
    (0.97, 1.0, "1.0"), (0.84, 1.0, "0.8 (−)"), (1.26, 1.0, "1.3 (+)"), (0.05, 0.0, "0.1 (+)"),
    (0.04, 0.0, "0.0"), (0.25, 0.3, "0.3"), (-0.04, 0.0, "0.0"),
])
def test_render_cell(value, gt, cell):
    assert cli.render_cell(value, gt) == cell


def test_render_table(tiny_run):
    _, out = tiny_run
    text, table_csv = cli.render_table(out)
    lines = text.splitlines()
    assert lines[0].split()[:3] == ["method", "bivariate-1x1", "mn-2x2-dense"]
    assert lines[2].split() == ["GT", "0.4", "0.3"]
    rows = [l.split()[0] for l in lines[3:]]
    assert rows == ["minde_c", "minde_c_sigma(s=1)", "minde_c_sigma(s=2)", "dv", "ksg"]
    body = list(csv.DictReader(table_csv.splitlines()))
    assert len(body) == 10 and all(r["n_seeds"] == "2" for r in body)
    assert cli.main(["table", str(out)]) == 0
    with pytest.raises(ValueError):
        cli.render_table(out / "missing")


def test_sweep_task_zero_target_is_independent():
    spec = cli.sweep_task(0.0, 3, 2, None)
    assert spec.params["lam"] == 0.0 and tk.ground_truth(spec).mi == 0.0
    spec = cli.sweep_task(2.0, 3, 2, "spiral")
    assert tk.ground_truth(spec).mi == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ValueError):
        cli.SweepConfig(transform="wiggly")


def test_sweep_writes_outputs(tmp_path):
    cfg = {k: v for k, v in TINY.items() if k not in ("tasks", "seeds")}
    cfg.update(targets=[0.0, 1.0], methods=["minde_j", "ksg"], output_dir=str(tmp_path / "sw"))
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["sweep", str(path)]) == 0
    rows = list(csv.DictReader((tmp_path / "sw" / "sweep.csv").read_text().splitlines()))
    assert len(rows) == 4
    plot = json.loads((tmp_path / "sw" / "plot_data.json").read_text())
    assert set(plot) == {"minde_j", "ksg"} and plot["ksg"]["gt"][0] == 0.0


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") == 15


def test_quantize_is_stable_at_half_steps():
    assert cli.quantize(0.25) == 0.3 and cli.quantize(0.35) == 0.4
    assert cli.quantize(-0.25) == -0.3
    assert np.isfinite(cli.quantize(1e9))
