import io

import numpy as np
import pytest

from kinlab.dynamics import EventLog
from kinlab.harness import study
from kinlab.harness.cli import main
from kinlab.harness.config import DOCUMENTED_KEYS, ConfigError, ExperimentConfig
from kinlab.harness.ensemble import RunManifest, load_logs, run_ensemble, verify_manifest
from kinlab.harness.svgplot import line_plot

SMALL = ExperimentConfig(eps=0.05, members=4, n_boot=10, t_end=1.0, time_samples=(0.5, 1.0), v_n=8,
                         grid_n=(12,), windows=(0.0, 0.2, 0.0, 1.0))


def write_config(tmp_path, cfg=SMALL, name="small.cfg"):
    path = tmp_path / name
    path.write_text(cfg.to_text())
    return path


def cli(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


# ---------------------------------------------------------------- config
def test_config_text_roundtrip():
    cfg = SMALL.replace(seed=2 ** 63 + 5, dt_max=0.25)
    back = ExperimentConfig.from_text(cfg.to_text())
    assert back == cfg
    assert set(DOCUMENTED_KEYS) == set(cfg.to_dict())


@pytest.mark.parametrize("text,needle", [
    ("eps = 0.1\nwhat = 3\n", "line 2: unknown key"),
    ("eps = 0.1\neps = 0.2\n", "line 2: duplicate key"),
    ("members = many\n", "line 1: bad value"),
    ("just words\n", "line 1: expected"),
    ("eps = -1\n", "eps"),
    ("time_samples = 3\nt_end = 2\n", "time_samples"),
])
def test_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        ExperimentConfig.from_text(text)


def test_misaligned_binning_fails_before_solving(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL.replace(bin_x_lo=(-0.5,), bin_x_hi=(0.5,), bin_x_cells=(4,)))
    code, _ = cli("boltzmann", "--config", cfg, "--out", tmp_path)
    err = capsys.readouterr().err
    assert code == 1 and "align" in err


def test_config_comments_and_overrides():
    cfg = ExperimentConfig.from_text("# header\neps = 0.02  # dilute\n\n", members=3)
    assert cfg.eps == 0.02 and cfg.members == 3
    assert cfg.model_params().mu == pytest.approx(50)


# ---------------------------------------------------------------- ensembles
def test_same_seed_gives_identical_manifests(tmp_path):
    a = run_ensemble(SMALL, tmp_path / "a", workers=1)
    b = run_ensemble(SMALL, tmp_path / "b", workers=1)
    assert a.ok and a.without_timing() == b.without_timing()
    assert len(set(a.checksums.values())) == SMALL.members


def test_forced_equal_streams_give_identical_logs(tmp_path):
    man = run_ensemble(SMALL.replace(members=2), tmp_path, streams=[9, 9], workers=1)
    assert len(set(man.checksums.values())) == 1


def test_parallel_run_matches_serial(tmp_path):
    a = run_ensemble(SMALL, tmp_path / "serial", workers=1)
    b = run_ensemble(SMALL, tmp_path / "pool", workers=2)
    assert a.without_timing() == b.without_timing()


def test_manifest_regenerates_logs(tmp_path):
    man = run_ensemble(SMALL, tmp_path, workers=1)
    assert verify_manifest(tmp_path) == []
    back = RunManifest.load(tmp_path)
    assert back.experiment() == SMALL and back.mean_free_time == pytest.approx(SMALL.mean_free_time())
    # tamper with one member
    victim = tmp_path / man.members[1].path
    log = EventLog.load(victim)
    log.meta["stream"] = 99
    log.save(victim)
    with pytest.raises(ConfigError, match="checksum"):
        load_logs(tmp_path)
    _, logs = load_logs(tmp_path, check=False)
    assert len(logs) == SMALL.members


def test_member_failures_are_recorded(tmp_path):
    # a box too small for its expected particle number cannot be sampled
    bad = SMALL.replace(kind="uniform-box-x-maxwellian-v", lo=(0.0,), hi=(0.01,), eps=0.001)
    man = run_ensemble(bad.replace(members=1), tmp_path, workers=1)
    assert not man.ok and "SamplingError" in man.failures[0].error


# ---------------------------------------------------------------- study stages
@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    run_ensemble(SMALL, root / "run", workers=1)
    est = study.estimate(SMALL, root / "run", root / "estimate")
    summaries = study.graphs(SMALL, root / "run", root / "graphs")
    study.boltzmann(SMALL, root / "boltzmann")
    rows = study.compare(root / "estimate", root / "boltzmann", root / "compare", SMALL.n_boot, SMALL.seed)
    return root, est, summaries, rows


def test_pipeline_outputs(pipeline):
    root, est, summaries, rows = pipeline
    norm, floor = est["e2"]
    assert norm >= 0 and floor > 0
    assert [r[0] for r in rows] == [0.5, 1.0]
    assert all(d > 0 and noise > 0 for _, d, noise in rows)
    assert [(s["t0_mft"], s["t1_mft"]) for s in summaries] == [(0.0, 0.2), (0.0, 1.0)]
    for name in ("estimate/f1_t0.5.csv", "estimate/cumulants.csv", "graphs/clusters_summary.csv",
                 "boltzmann/boltzmann_summary.csv", "compare/distance_vs_time.csv",
                 "compare/fig_distance_vs_time.svg", "compare/fig_distance_vs_time.csv"):
        assert (root / name).exists(), name
    counts = study.load_counts(root / "estimate" / "counts_t0.5.bin")
    assert counts.M == SMALL.members and counts.spec == SMALL.binning()


def test_compare_rejects_mismatched_grids(pipeline, tmp_path):
    root = pipeline[0]
    other = SMALL.replace(bin_x_cells=(3,))
    study.boltzmann(other, tmp_path / "boltzmann")
    code, _ = cli("compare", "--estimate-dir", root / "estimate", "--boltzmann-dir", tmp_path / "boltzmann",
                  "--out", tmp_path)
    assert code == 1


def test_compare_shape_diagnostic(pipeline, tmp_path, capsys):
    root = pipeline[0]
    study.boltzmann(SMALL.replace(bin_v_cells=(3,)), tmp_path / "b")
    code, _ = cli("compare", "--estimate-dir", root / "estimate", "--boltzmann-dir", tmp_path / "b", "--out", tmp_path)
    err = capsys.readouterr().err
    assert code == 1 and "status=1" in err and "shape" in err


def test_study_report_rules():
    rep = study.StudyReport(eps=[1e-2, 3e-3, 1e-3], mu=[100, 333, 1000], times=[1.0],
                            distances={1.0: [(0.15, 0.08), (0.2, 0.05), (0.05, 0.03)]}, e2=[], e2_floor=[],
                            chaos_slope=np.nan, chaos_intercept=np.nan, clusters={}, wall_clock={})
    assert rep.distance_monotone(1.0)  # the rise 0.05 stays within twice the noise
    assert not rep.distance_monotone(1.0, factor=0.5)
    assert rep.distance_ratio(1.0) == pytest.approx(1 / 3)


def test_eps_list_validation():
    assert study.validate_eps_list([1e-2, 3e-3, 1e-3]) == [1e-2, 3e-3, 1e-3]
    for bad in ([1e-2, 1e-3], [1e-2, 1e-2, 1e-3], [1e-3, 3e-3, 1e-2], [1e-2, 0.0, -1.0]):
        with pytest.raises(ConfigError):
            study.validate_eps_list(bad)


# ---------------------------------------------------------------- CLI
def test_cli_simulate_single_particle(tmp_path):
    cfg = write_config(tmp_path, SMALL.replace(members=1, n_fixed=1))
    code, text = cli("simulate", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0 and "1 members, 0 events" in text
    _, logs = load_logs(tmp_path / "o" / "run")
    assert logs[0].initial.n == 1 and logs[0].n_events == 0


def test_cli_seed_and_time_overrides(tmp_path):
    cfg = write_config(tmp_path, SMALL.replace(members=1))
    code, _ = cli("simulate", "--config", cfg, "--seed", 11, "--time-samples", "0.5,2", "--out", tmp_path)
    assert code == 0
    man = RunManifest.load(tmp_path / "run")
    exp = man.experiment()
    assert exp.seed == 11 and exp.time_samples == (0.5, 2.0) and exp.t_end == 2.0


def test_cli_degenerate_eps_list(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, _ = cli("sweep", "--config", cfg, "--eps-list", "1e-2,1e-2,1e-3", "--out", tmp_path)
    assert code == 1 and "status=1" in capsys.readouterr().err


def test_cli_penrose_output():
    code, text = cli("penrose", "--max-n", 5)
    lines = text.strip().splitlines()
    assert code == 0 and len(lines) == 5
    assert lines[-1] == "all 2^10 overlap matrices (n=5) satisfy |phi| <= tree count"
    assert cli("penrose", "--max-n", 9)[0] == 1


def test_cli_usage_errors(tmp_path, capsys):
    assert cli("frobnicate")[0] == 1
    assert "kind=usage" in capsys.readouterr().err
    assert cli("simulate", "--seed", -3)[0] == 1
    assert cli("simulate", "--config", tmp_path / "missing.cfg")[0] == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("eps = 0.1\nnope = 1\n")
    assert cli("simulate", "--config", bad)[0] == 1
    assert "line 2" in capsys.readouterr().err


def test_cli_missing_run_is_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code, _ = cli("estimate", "--config", cfg, "--out", tmp_path)
    assert code == 1 and "manifest" in capsys.readouterr().err


# ---------------------------------------------------------------- plots
def test_line_plot_writes_svg_and_csv(tmp_path):
    paths = line_plot({"a": ([1, 10, 100], [1.0, 0.5, 0.25]), "b": ([1, 10], [2.0, 1.0])}, tmp_path / "p.svg",
                    xlabel="mu", ylabel="E2", title="decay", logx=True, logy=True,
                    errors={"a": [0.1, 0.05, 0.02]})
    text = (tmp_path / "p.svg").read_text()
    assert text.startswith("<svg") or text.startswith("<?xml")
    assert "decay" in text and "1e2" in text
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "series,mu,E2,error" and len(rows) == 6
    assert [p.name for p in paths] == ["p.svg", "p.csv"]
