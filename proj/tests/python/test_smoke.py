import math

import pytest

import fbsde_lab


def test_kp_closed_form():
    assert fbsde_lab.compute_kp(2.0, bdg_upper=1.0, bdg_lower=1.0) == 20.0 / 3.0
    assert fbsde_lab.compute_kp(2.0) > fbsde_lab.compute_kp(2.0, bdg_upper=1.0)


def test_gates_and_growth():
    g = fbsde_lab.smallness_gates(2.0, 0.5, 1.0)
    assert g["h51_product"] == 1.0
    assert g["h51"] is False
    assert g["theorem51"] is None
    assert fbsde_lab.audit_constant_growth(1.0, 2.0, 2) == (6.0, False)


def test_canonical_config_fills_defaults():
    c = fbsde_lab.canonical_config({"kind": "kp-gate", "seed": 1, "kp": {"p": 2, "L_sigma": 0.1, "K": 1}})
    assert c["kind"] == "kp-gate"
    assert c["monte_carlo"]["n_paths"] == 1000


def test_config_errors_map_to_python():
    with pytest.raises(fbsde_lab.ConfigError, match="sigma_z"):
        fbsde_lab.canonical_config({"kind": "kp-gate", "seed": 1, "kp": {"p": 2, "L_sigma": 0, "K": 0, "sigma_z": 1}})
    assert issubclass(fbsde_lab.PicardDivergence, fbsde_lab.NumericalError)


def test_oracle_run_and_table(tmp_path):
    report = fbsde_lab.run_experiment(
        {
            "kind": "oracle",
            "seed": 3,
            "problem": {"family": "gaussian-linear", "slope": 1},
            "grid": {"n_steps": 16},
            "monte_carlo": {"n_paths": 200},
        },
        output_dir=tmp_path,
    )
    assert report["artifact_version"] == fbsde_lab.ARTIFACT_VERSION
    assert "oracle_table.csv" in report["files"]
    table = fbsde_lab.read_table(tmp_path / "oracle_table.csv")
    assert set(table["seed"]) == {3.0}
    assert all(math.isfinite(v) for col in table.values() for v in col)
