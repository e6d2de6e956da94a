import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdiversity import diffmodel as dm
from qdiversity.datasets import Dataset, GeneratorSpec
from qdiversity.dro import TrainConfig
from qdiversity.harness import (
    ConfigError,
    ExperimentSpec,
    MetricsRow,
    UnsupportedArchitectureError,
    emit_config,
    emit_report,
    margin_probe,
    parse_config,
    parse_config_text,
    rows_from_csv,
    rows_from_json,
    rows_to_csv,
    rows_to_json,
    run_experiment,
    summarize,
    write_experiment,
)
from qdiversity.harness.cli import load_params, main, save_params

TINY = """
[experiment]
tag = table1
seeds = 0, 1
methods = erm, qdiv
test_per_class = 100

[generator]
n_per_class = 100
d_core = 10
core_strength = 0.1
noise = 0.3

[train]
epochs = 4
batch_size = 64
"""


def test_minimal_config_fills_defaults():
    spec = parse_config_text("[experiment]\ntag = table1\n")
    assert spec.generator == GeneratorSpec()
    assert spec.train == TrainConfig()
    assert spec.seeds == (0, 1, 2, 3, 4)


def test_config_values_and_types():
    spec = parse_config_text(TINY + "alpha = 7\nassigner_interaction = false\n")
    assert spec.seeds == (0, 1) and spec.methods == ("erm", "qdiv")
    assert spec.generator.n_per_class == 100 and spec.train.epochs == 4
    assert spec.train.mix.alpha == 7.0 and spec.train.assigner_interaction is False


def test_mix_fraction_range_error():
    with pytest.raises(ConfigError, match=r"train\.mix_fraction"):
        parse_config_text("[experiment]\ntag = table1\n[train]\nmix_fraction = 1.5\n")


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match=r":4: unknown key train\.learning_rate"):
        parse_config_text("[experiment]\ntag = table1\n[train]\nlearning_rate = 0.1\n")


def test_unknown_section():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[experiment]\ntag = table1\n[model]\nx = 1\n")


def test_missing_tag():
    with pytest.raises(ConfigError, match="experiment.tag"):
        parse_config_text("[train]\nepochs = 3\n")


def test_type_mismatch_names_key():
    with pytest.raises(ConfigError, match=r":4: train\.epochs: expected int"):
        parse_config_text("[experiment]\ntag = table1\n[train]\nepochs = many\n")


def test_bad_bool():
    with pytest.raises(ConfigError, match="expected bool"):
        parse_config_text("[experiment]\ntag = table1\n[train]\nassigner_interaction = yes\n")


def test_generator_range_error():
    with pytest.raises(ConfigError, match="bias_rate"):
        parse_config_text("[experiment]\ntag = table1\n[generator]\nbias_rate = 2\n")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.cfg")


def test_round_trip_fixed():
    spec = parse_config_text(TINY)
    assert parse_config_text(emit_config(spec)) == spec


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["table1", "alpha_sweep", "mix_ablation", "noise_sweep", "shift_eval"]),
       st.lists(st.integers(0, 99), min_size=1, max_size=4),
       st.floats(0.01, 20, allow_nan=False), st.floats(0.0, 1.0), st.floats(0.5, 1.0),
       st.integers(1, 500), st.booleans())
def test_round_trip_property(tag, seeds, alpha, frac, bias, epochs, inter):
    from qdiversity.mixing import MixSpec
    spec = ExperimentSpec(tag=tag, seeds=tuple(seeds),
                          generator=GeneratorSpec(bias_rate=bias),
                          train=TrainConfig(epochs=epochs, assigner_interaction=inter,
                                            mix=MixSpec(alpha=alpha, mix_fraction=frac)))
    assert parse_config_text(emit_config(spec)) == spec


def test_plans_per_experiment():
    base = ExperimentSpec(tag="table1", seeds=(0, 1))
    assert len(base.plans()) == 5 * 2
    sweep = replace(base, tag="alpha_sweep")
    assert [n for n, _ in sweep.configs] == ["qdiv_a1", "qdiv_a3", "qdiv_a5", "qdiv_a7", "qdiv_a9",
                                              "qdiv_a11", "qdiv_a13"]
    abl = dict(replace(base, tag="mix_ablation").configs)
    assert abl["qdiv_nomix"].mix.mix_fraction == 0.0 and abl["qdiv"].mix.mix_fraction == 0.5
    noise = replace(base, tag="noise_sweep", methods=("jtt", "qdiv"), noise_rates=(0.0, 0.2))
    assert {(p.tag, p.noise) for p in noise.plans()} == {("noise=0", 0.0), ("noise=0.2", 0.2)}
    assert all(p.cfg.seed == p.seed for p in noise.plans())


def test_spec_validation():
    with pytest.raises(ConfigError):
        ExperimentSpec(tag="table9")
    with pytest.raises(ConfigError):
        ExperimentSpec(tag="table1", seeds=())
    with pytest.raises(ConfigError):
        ExperimentSpec(tag="table1", methods=("lff",))


# -- reports -----------------------------------------------------------------


def _rows():
    return [
        MetricsRow("erm", 0, "iid", 0.95, 0.0, (0.0, 1.0, 1.0, 0.1), 1.5),
        MetricsRow("erm", 1, "iid", 0.93, 0.1, (0.1, 1.0, 1.0, 0.2), 1.25),
        MetricsRow("qdiv", 0, "iid", 0.9, 0.8, (0.8, 0.95, 0.9, 0.85), 9.0),
        MetricsRow("qdiv", 1, "iid", math.nan, math.nan, (), 0.5, "TrainingError: boom"),
    ]


def test_single_row_csv(tmp_path):
    rows = _rows()[:1]
    p = emit_report(rows, "csv", tmp_path / "r.csv")
    lines = p.read_text().splitlines()
    assert len(lines) == 2
    assert lines[0] == "method,seed,tag,avg,robust,group_0,group_1,group_2,group_3,secs,error"
    assert rows_from_csv(p.read_text()) == rows


def test_csv_json_csv_round_trip():
    rows = _rows()
    csv1 = rows_to_csv(rows)
    back = rows_from_json(rows_to_json(rows_from_csv(csv1)))
    assert rows_to_csv(back) == csv1


def test_summary_one_line_per_method_and_excludes_failures():
    summary = summarize(_rows())
    assert [(s.method, s.n_ok, s.n_total) for s in summary] == [("erm", 2, 2), ("qdiv", 1, 2)]
    erm = summary[0]
    assert erm.robust_median == pytest.approx(0.05) and erm.robust_max == 0.1


def test_markdown_report(tmp_path):
    text = emit_report(_rows(), "markdown", tmp_path / "r.md").read_text()
    assert "| erm | iid | 94.0 (93.0-95.0) | 5.0 (0.0-10.0) | 2/2 |" in text
    assert "TrainingError: boom" in text


def test_json_mirrors_row_fields(tmp_path):
    data = json.loads(emit_report(_rows(), "json", tmp_path / "r.json").read_text())
    assert set(data["rows"][0]) == {"method", "seed", "tag", "avg", "robust", "groups", "secs", "error"}


def test_report_errors(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], "csv", tmp_path / "x.csv")
    with pytest.raises(ValueError):
        emit_report(_rows(), "xml", tmp_path / "x.xml")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="cannot write"):
        emit_report(_rows(), "csv", blocker / "sub" / "x.csv")


# -- running -----------------------------------------------------------------


def test_run_experiment_tiny(tmp_path):
    spec = parse_config_text(TINY)
    result = run_experiment(spec)
    assert result.all_ok and len(result.rows) == 4
    # the worst group cannot beat the example-weighted average
    assert all(0 <= r.robust <= r.avg <= 1 for r in result.rows)
    paths = write_experiment(result, tmp_path / "out")
    again = write_experiment(run_experiment(spec), tmp_path / "again")
    assert paths["rows"].read_bytes() == again["rows"].read_bytes()


def test_failed_run_is_recorded():
    spec = parse_config_text(TINY.replace("methods = erm, qdiv", "methods = jtt"))
    # jtt_epochs defaults to 5 >= epochs, so every run fails
    result = run_experiment(spec)
    assert not result.all_ok
    assert all("jtt_epochs" in r.error for r in result.rows)
    assert summarize(result.rows)[0].n_ok == 0


def test_shift_eval_rows():
    spec = parse_config_text(TINY.replace("tag = table1", "tag = shift_eval").replace("seeds = 0, 1", "seeds = 0"))
    tags = [r.tag for r in run_experiment(spec).rows if r.method == "erm"]
    assert tags == ["iid", "shift=attr_flip", "shift=attr_balance", "shift=core_only"]


# -- margin probe ------------------------------------------------------------


def test_symmetric_margins():
    X = np.array([[-1.0, 0.0], [1.0, 0.0]])
    data = Dataset(X, np.array([0, 1]), 2, np.array([0, 1]), group_count=2)
    theta = dm.ModelParams(((np.array([[-1.0, 0.0], [1.0, 0.0]]), np.zeros(2)),))
    from qdiversity.assigner import GroupAssignment
    maj, mino = margin_probe(theta, data, GroupAssignment.from_probs(np.array([0.0, 1.0])))
    assert maj == mino == pytest.approx(1.0)


def test_margin_is_signed_distance():
    rng = np.random.default_rng(0)
    X, y = rng.standard_normal((20, 3)), rng.integers(0, 2, 20)
    theta = dm.init_params(3, 2, rng, init_scale=1.0)
    from qdiversity.harness.probe import signed_margins
    (W, b), = theta.layers
    w, c = W[1] - W[0], b[1] - b[0]
    want = np.where(y == 1, 1, -1) * (X @ w + c) / np.linalg.norm(w)
    assert np.allclose(signed_margins(theta, X, y), want, atol=1e-12)


def test_probe_rejects_hidden_layer(rng):
    theta = dm.init_params(3, 2, rng, arch="one-hidden", hidden=4)
    data = Dataset(np.zeros((2, 3)), np.array([0, 1]), 2, np.array([0, 3]), group_count=4)
    with pytest.raises(UnsupportedArchitectureError):
        margin_probe(theta, data)


# -- cli ---------------------------------------------------------------------


def test_cli_pipeline(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "train.csv")]) == 0
    assert main(["generate", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / "test.csv")]) == 0
    assert main(["train", "--config", str(cfg), "--method", "erm", "--data", str(tmp_path / "train.csv"),
                 "--out", str(tmp_path / "m.npz")]) == 0
    assert main(["evaluate", "--model", str(tmp_path / "m.npz"), "--data", str(tmp_path / "test.csv"),
                 "--out", str(tmp_path / "eval.json")]) == 0
    assert set(json.loads((tmp_path / "eval.json").read_text())) == {"avg", "robust", "groups"}
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "exp")]) == 0
    assert main(["report", "--rows", str(tmp_path / "exp" / "rows.csv"), "--format", "json",
                 "--out", str(tmp_path / "r.json")]) == 0
    assert "| erm | iid |" in capsys.readouterr().out


def test_cli_failures_exit_nonzero(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(TINY.replace("methods = erm, qdiv", "methods = jtt"))
    assert main(["experiment", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    cfg.write_text("[experiment]\ntag = table1\n[train]\nmix_fraction = 1.5\n")
    assert main(["experiment", "--config", str(cfg)]) == 2


def test_params_round_trip(tmp_path, rng):
    theta = dm.init_params(4, 3, rng, arch="one-hidden", hidden=5)
    save_params(theta, tmp_path / "p.npz")
    back = load_params(tmp_path / "p.npz")
    assert back.arch == "one-hidden" and np.array_equal(back.to_vector(), theta.to_vector())
