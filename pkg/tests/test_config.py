import json

import numpy as np
import pytest

from awfl.config import (
    DEFAULTS,
    ConfigError,
    bounds_p,
    build_cell,
    build_profiles,
    load_config,
    resolve,
    solve_gains,
)


def test_defaults_resolve_to_themselves():
    cfg = resolve({})
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS


def test_partial_override_keeps_siblings():
    cfg = resolve({"cell": {"total_bandwidth_hz": 1e6}})
    assert cfg["cell"]["total_bandwidth_hz"] == 1e6
    assert cfg["cell"]["cell_radius_m"] == DEFAULTS["cell"]["cell_radius_m"]


@pytest.mark.parametrize("raw, field", [
    ({"cell": {"total_bandwidth_hz": -1}}, "cell.total_bandwidth_hz"),
    ({"cell": {"bandwidth": 1}}, "cell.bandwidth"),
    ({"clients": {"K": 0}}, "clients.K"),
    ({"scheme": {"rho": 1.0}}, "scheme.rho"),
    ({"scheme": {"names": ["fedavg"]}}, "scheme.names.0"),
    ({"rounds": -3}, "rounds"),
    ({"solver": {"nonsense": 1}}, "solver.nonsense"),
    ({"clients": {"K": 3, "scenario": 1, "n_extreme": 4}}, "clients.n_extreme"),
    ({"engine": {"force_cap": [2, 3]}, "clients": {"K": 3}}, "engine.force_cap"),
    ({"solve": {"gains": [[1.0], [1.0]]}, "clients": {"K": 3}}, "solve.gains"),
    ({"clients": {"profiles": [{"id": 2, "distance_km": 0.1, "tx_power_w": 0.2}]}},
     "clients.profiles"),
    ({"typo": 1}, "typo"),
])
def test_errors_name_the_field(raw, field):
    with pytest.raises(ConfigError) as info:
        resolve(raw)
    assert info.value.field == field


def test_load_from_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"rounds": 3}))
    assert load_config(path)["rounds"] == 3
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_explicit_profiles_set_K():
    prof = [{"id": i, "distance_km": 0.1 * i, "tx_power_w": 0.2} for i in (1, 2, 3)]
    cfg = resolve({"clients": {"profiles": prof}})
    assert cfg["clients"]["K"] == 3
    cell = build_cell(cfg)
    assert [p.distance_km for p in build_profiles(cfg, cell, 0)] == [0.1, 0.2, 0.30000000000000004]
    far = [{"id": 1, "distance_km": 5.0, "tx_power_w": 0.2}]
    with pytest.raises(ConfigError):
        build_profiles(resolve({"clients": {"profiles": far}}), cell, 0)


def test_cell_needs_a_model_size():
    cfg = resolve({"cell": {"model_size_bits": None}})
    with pytest.raises(ConfigError):
        build_cell(cfg)
    assert build_cell(cfg, 1000.0).model_size_bits == 1000.0


def test_placement_seed_overrides_run_seed():
    cfg = resolve({"clients": {"K": 4}, "placement_seed": 9})
    cell = build_cell(cfg)
    assert build_profiles(cfg, cell, 0) == build_profiles(cfg, cell, 1)


def test_solve_gains_shapes():
    cfg = resolve({"clients": {"K": 3}, "solve": {"T": 4}})
    cell = build_cell(cfg)
    prof = build_profiles(cfg, cell, 0)
    assert solve_gains(cfg, prof, 0).shape == (3, 4)
    online = resolve({"clients": {"K": 3}, "solve": {"mode": "online", "T": 4}})
    assert solve_gains(online, prof, 0).shape == (3, 1)


def test_bounds_p_forms():
    base = {"L": 1, "G_max": 1, "sigma_sq": 1, "f_max": 1, "eta": 0.01, "T": 3}
    cfg = resolve({"clients": {"K": 2}, "bounds": base})
    np.testing.assert_array_equal(bounds_p(cfg), np.ones((2, 3)))
    cfg = resolve({"clients": {"K": 2}, "bounds": {**base, "p": [0.5, 0.25]}})
    np.testing.assert_array_equal(bounds_p(cfg)[:, 2], [0.5, 0.25])
    cfg = resolve({"clients": {"K": 2}, "bounds": {**base, "p": [0.5, 0.25, 0.1]}})
    with pytest.raises(ConfigError):
        bounds_p(cfg)
