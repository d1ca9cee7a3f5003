import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sts_robust import constants as C
from sts_robust import io
from sts_robust.cli import load_gain_schedule, load_gains, main
from sts_robust.config import ConfigError, ExperimentConfig
from sts_robust.errors import (
    AllInfinite,
    DegenerateExtrapolation,
    Infeasible,
    NonFiniteState,
    OutOfDomain,
    RiccatiBlowup,
    SingularConfiguration,
    ZeroBaselineTerm,
)

SMOKE = Path(__file__).resolve().parents[1] / "configs" / "smoke.json"


def _config(tmp_path, **sections):
    data = json.loads(SMOKE.read_text())
    for key, value in sections.items():
        data.setdefault(key, {}).update(value)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


# -- serialization ----------------------------------------------------------------

@settings(max_examples=200)
@given(x=st.floats(allow_nan=False))
def test_float_format_roundtrips(x):
    assert float(io.format_float(x)) == x


def test_csv_roundtrip_is_bitwise(tmp_path, rng):
    data = rng.normal(size=(20, 3)) * 10.0 ** rng.integers(-12, 12, size=(20, 3))
    data[0, 0] = math.inf
    path = io.write_csv(tmp_path / "a.csv", ["a", "b", "c"], data)
    cols, back = io.read_csv(path)
    assert cols == ["a", "b", "c"] and np.array_equal(back, data)
    with pytest.raises(ValueError):
        io.write_csv(tmp_path / "b.csv", ["a"], [[1.0, 2.0]])


def test_json_encoding(tmp_path):
    text = io.dumps_json({"x": 0.1, "inf": math.inf, "n": np.int64(3), "v": np.array([1.5, 2.0]), "b": True})
    data = json.loads(text)
    assert data == {"x": 0.1, "inf": None, "n": 3, "v": [1.5, 2.0], "b": True}
    assert "0.10000000000000001" in text
    assert io.dumps_json({"a": 1}) == io.dumps_json({"a": 1})
    with pytest.raises(TypeError):
        io.dumps_json({"a": object()})


# -- configuration ----------------------------------------------------------------

def test_presets():
    paper, desk = ExperimentConfig.preset_config("paper"), ExperimentConfig.preset_config("desk")
    assert paper.lqr.pool_size == 300 and paper.reach.n_samples == 500 and paper.dfo.iterations == 10_000
    assert desk.lqr.pool_size == 10 and desk.reach.n_samples == 50 and desk.dfo.iterations == 200
    assert np.allclose(paper.to_plan_spec().x_start, C.X0, atol=1e-15)
    with pytest.raises(ConfigError):
        ExperimentConfig.preset_config("cluster")


def test_from_dict_overlays_and_rejects_unknown_keys():
    cfg = ExperimentConfig.from_dict({"preset": "desk", "ilc": {"n_iterations": 3}, "seed": 7})
    assert cfg.preset == "desk" and cfg.ilc.n_iterations == 3 and cfg.seed == 7 and cfg.reach.n_samples == 50
    for bad in ({"bogus": 1}, {"ilc": {"bogus": 1}}, {"ilc": 3}, {"ilc": {"recall": "maybe"}},
                {"lqr": {"q": [1, 2]}}, {"dfo": {"B": 1, "B_t": 2}}, {"seed": -1}):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(bad)


def test_config_dict_roundtrip():
    cfg = ExperimentConfig.preset_config("desk")
    again = ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg


def test_exit_codes_are_distinct():
    codes = [e.exit_code for e in (ConfigError, Infeasible, SingularConfiguration, RiccatiBlowup,
                                   AllInfinite, NonFiniteState, OutOfDomain, ZeroBaselineTerm,
                                   DegenerateExtrapolation)]
    assert len(set(codes)) == len(codes) and 0 not in codes and 1 not in codes


def test_gain_loading(tmp_path):
    assert np.all(load_gains("zero").K == 0)
    path = io.write_json(tmp_path / "g.json", load_gains("paper").as_dict())
    assert np.array_equal(load_gains(str(path)).L, load_gains("paper").L)
    with pytest.raises(ConfigError):
        load_gains(str(tmp_path / "missing.json"))


# -- command line -----------------------------------------------------------------

def test_cli_config_errors(tmp_path):
    assert main(["plan", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"bogus": 1}')
    assert main(["plan", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["plan", "--workers", "0", "--out", str(tmp_path)]) == 2


def test_cli_infeasible_plan(tmp_path):
    cfg = _config(tmp_path, plan={"u_lower": [-1, -1, -1, 0], "u_upper": [1, 1, 1, 1]})
    assert main(["plan", "--config", cfg, "--out", str(tmp_path / "o")]) == Infeasible.exit_code


def test_cli_singular_plan(tmp_path):
    cfg = _config(tmp_path, plan={"x_start_deg": [90, 0, 0, 0, 0, 0]})
    assert main(["plan", "--config", cfg, "--out", str(tmp_path / "o")]) == SingularConfiguration.exit_code


def test_cli_plan(tmp_path):
    out = tmp_path / "plan"
    assert main(["plan", "--preset", "desk", "--out", str(out)]) == 0
    cols, data = io.read_csv(out / "reference.csv")
    assert data.shape == (876, 1 + 6 + 4 + 4) and cols[0] == "t"
    summary = io.read_json(out / "plan_summary.json")
    assert summary["F_y_nonnegative"] and summary["inputs_within_bounds"]
    manifest = io.read_json(out / "manifest.json")
    assert manifest["command"] == "plan" and set(manifest["outputs"]) == {"reference.csv", "plan_summary.json"}
    assert manifest["outputs"]["reference.csv"] == io.sha256_file(out / "reference.csv")


def test_cli_synthesize_zero_weights_and_reload(tmp_path):
    cfg = _config(tmp_path, lqr={"q": [0] * 6, "s": [0] * 6})
    out = tmp_path / "syn"
    assert main(["synthesize", "--config", cfg, "--out", str(out)]) == 0
    gains = load_gain_schedule(out, C.STEP)
    assert np.all(gains.K.values == 0) and gains.K.values.shape == (876, 4, 6)


def test_gain_schedule_reload_is_bitwise(tmp_path, star_gains):
    from sts_robust.cli import write_gain_schedule

    write_gain_schedule(tmp_path, star_gains)
    back = load_gain_schedule(tmp_path, C.STEP)
    assert np.array_equal(back.K.values, star_gains.K.values)
    assert np.array_equal(back.P.values, star_gains.P.values)
    assert np.array_equal(back.K.grid.nodes, star_gains.K.grid.nodes)


@pytest.mark.slow
@pytest.mark.parametrize("command", ["plan", "synthesize", "reach", "ilc", "tune"])
def test_cli_reruns_are_bitwise_identical(tmp_path, command):
    cfg = str(SMOKE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([command, "--config", cfg, "--seed", "11", "--out", str(a)]) == 0
    assert main([command, "--config", cfg, "--seed", "11", "--out", str(b)]) == 0
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir()) and "manifest.json" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
