import io
import json

import numpy as np
import pytest

from privalloc.cli import main
from privalloc.core import load_market
from privalloc.errors import ParameterError, UsageError
from privalloc.experiments import (
    SUMMARY_COLUMNS,
    ExperimentConfig,
    generate_instance,
    run_config,
    sweep,
    write_rows_csv,
)


def test_generate_instance_determinism_and_ranges():
    a = generate_instance("uniform", 5, 3, 2, seed=7)
    b = generate_instance("uniform", 5, 3, 2, seed=7)
    np.testing.assert_array_equal(a.v, b.v)
    assert not np.array_equal(a.v, generate_instance("uniform", 5, 3, 2, seed=8).v)
    assert set(np.unique(generate_instance("unweighted", 50, 4, 2, seed=1).v)) <= {0.0, 1.0}
    corr = generate_instance("correlated", 50, 4, 2, seed=1).v
    assert corr.min() >= 0 and corr.max() <= 1
    mean = generate_instance("uniform", 1000, 5, 2, seed=3).v.mean()
    assert 0.48 <= mean <= 0.52
    gadget = generate_instance("gadget", 6, 1, 1, seed=2)
    assert gadget.k == 2 and gadget.s == 6


def test_generate_instance_errors():
    with pytest.raises(UsageError):
        generate_instance("zipf", 3, 3, 1)
    with pytest.raises(ParameterError):
        generate_instance("uniform", 0, 3, 1)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(mode="palloc", instance={"kind": "correlated", "n": 4, "k": 2, "s": 6},
                           params={"alpha": 0.3, "rho": 0.3, "epsilon": 2.0, "b": 2, "noise": "off"},
                           trials=3, seed=99, output="x.csv")
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg
    with pytest.raises(UsageError):
        ExperimentConfig.from_dict({"mode": "pmatch", "bogus": 1})


def test_config_validation():
    with pytest.raises(UsageError):
        ExperimentConfig(mode="nope").validate()
    with pytest.raises(ParameterError):
        ExperimentConfig(params={"alpha": 2.0, "rho": 0.1, "epsilon": 1.0}).validate()
    with pytest.raises(UsageError):
        ExperimentConfig().with_axis("beta", 1)


def test_empty_sweep_writes_header_only():
    buf = io.StringIO()
    write_rows_csv(buf, sweep(ExperimentConfig(), "s", []), SUMMARY_COLUMNS)
    assert buf.getvalue().splitlines() == [",".join(SUMMARY_COLUMNS)]


def test_s_sweep_gap_trend():
    cfg = ExperimentConfig(mode="pmatch", instance={"kind": "uniform", "n": 30, "k": 3, "s": 2},
                           params={"alpha": 0.2, "rho": 0.2, "epsilon": 1.0, "noise": "off", "E": 0, "m": 1},
                           trials=20, seed=5)
    values = [2, 4, 8, 16]
    rows = sweep(cfg, "s", values)
    assert [(r["value"], r["trial"]) for r in rows] == [(v, t) for v in values for t in range(20)]
    gaps = [np.mean([r["gap"] for r in rows if r["value"] == v]) for v in values]
    assert all(x >= y - 1e-9 for x, y in zip(gaps, gaps[1:]))


def test_epsilon_sweep_counter_error_trend():
    cfg = ExperimentConfig(mode="counter-bench", instance={}, params={"horizon": 256}, trials=30, seed=1)
    values = [0.25, 1.0, 4.0]
    rows = sweep(cfg, "epsilon", values)
    err = [np.mean([r["max_counter_error"] for r in rows if r["value"] == v]) for v in values]
    assert err[0] > err[1] > err[2]


def test_parallel_sweep_matches_serial():
    cfg = ExperimentConfig(instance={"kind": "uniform", "n": 8, "k": 2, "s": 6},
                           params={"alpha": 0.2, "rho": 0.2, "epsilon": 5.0, "T": 6, "E": 1, "m": 3},
                           trials=3, seed=2)
    strip = lambda rows: [{k: v for k, v in r.items() if k != "runtime"} for r in rows]
    assert strip(sweep(cfg, "alpha", [0.1, 0.3], workers=2)) == strip(sweep(cfg, "alpha", [0.1, 0.3]))


def test_other_modes_run():
    inst = {"kind": "unweighted", "n": 6, "k": 2, "s": 4}
    for mode, params in [
        ("multiplicative", {"alpha": 0.1, "lam": 1.0, "epsilon": 1.0, "noise": "off", "E": 0, "m": 1}),
        ("kelso", {"alpha": 0.1}),
        ("palloc", {"alpha": 0.2, "rho": 0.2, "epsilon": 1.0, "noise": "off", "E": 0, "m": 1}),
    ]:
        rows = run_config(ExperimentConfig(mode=mode, instance=inst, params=params, trials=2))
        assert len(rows) == 2 and all(r["welfare"] <= r["opt"] + 1e-9 for r in rows)
    attack = run_config(ExperimentConfig(mode="attack", instance={}, trials=2,
                                         params={"variant": "allocation", "bits": 8}))
    assert [r["reconstructed_fraction"] for r in attack] == [1.0, 1.0]


def _cli(args):
    return main([str(a) for a in args])


def test_cli_gen_run_verify(tmp_path, capsys):
    inst, out = tmp_path / "m.json", tmp_path / "o.json"
    assert _cli(["gen", "--kind", "uniform", "--n", 6, "--k", 2, "--s", 4, "--seed", 3, "--out", inst]) == 0
    assert load_market(inst).n == 6
    assert _cli(["run", "--mode", "pmatch", "--instance", inst, "--noise", "off", "--override-E", 0,
                 "--override-m", 1, "--outcome", out, "--billboard", tmp_path / "b.csv",
                 "--out", tmp_path / "r.csv"]) == 0
    assert json.loads(out.read_text())["assignment"]
    assert (tmp_path / "b.csv").read_text().startswith("round,")
    capsys.readouterr()
    assert _cli(["verify", "--instance", inst, "--outcome", out, "--alpha", 0.2,
                 "--out", tmp_path / "v.csv"]) == 0
    assert (tmp_path / "v.csv").read_text().splitlines()[0].startswith("instance_id,measured_alpha")


def test_cli_config_file(tmp_path):
    cfg = ExperimentConfig(instance={"kind": "uniform", "n": 5, "k": 2, "s": 4},
                           params={"alpha": 0.2, "rho": 0.2, "epsilon": 1.0, "noise": "off", "E": 0, "m": 1},
                           trials=2, seed=4)
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert _cli(["run", "--config", tmp_path / "c.json", "--trials", 3, "--out", tmp_path / "r.csv"]) == 0
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 4


def test_cli_exit_codes(tmp_path, capsys):
    assert _cli(["bogus"]) == 2
    assert _cli(["sweep", "--axis", "s", "--values", "x"]) == 2
    assert _cli(["run", "--mode", "pmatch", "--kind", "uniform", "--n", 3, "--k", 1, "--s", 1,
                 "--noise", "off", "--override-E", 0, "--override-m", 1]) == 3
    assert _cli(["run", "--alpha", 1.5]) == 3
    assert _cli(["run", "--mode", "kelso", "--n", 10, "--k", 1, "--s", 2, "--override-T", 1]) == 4
    assert _cli(["gen", "--kind", "uniform", "--n", 2, "--k", 2, "--s", 1, "--out", tmp_path / "g.json"]) == 0


@pytest.mark.parametrize("argv", [
    ["sweep", "--mode", "pmatch", "--kind", "uniform", "--n", 10, "--k", 2, "--s", 6,
     "--override-T", 6, "--override-E", 1, "--override-m", 3,
     "--axis", "epsilon", "--values", "1,4", "--trials", 2, "--seed", 7],
    ["attack", "--variant", "joint", "--mechanism", "pmatch", "--bits", 4, "--s", 4,
     "--epsilon", 5, "--override-E", 1, "--override-m", 3, "--trials", 2, "--seed", 3],
])
def test_cli_determinism(tmp_path, argv):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert _cli(argv + ["--no-runtime", "--out", a]) == 0
    assert _cli(argv + ["--no-runtime", "--out", b]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert "runtime" not in a.read_text().splitlines()[0]
