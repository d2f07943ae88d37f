import math

import numpy as np
import pytest

from csi_djscc.errors import ConfigError
from csi_djscc.quantization import (IdealSchemeSpec, QuantizerSpec, capacity,
                                    capacity_ergodic, compand, dequantize,
                                    envelope, expand, ideal_curve,
                                    ideal_dimension, level_centers, load_table,
                                    quantize, save_table, sscc_ideal_nmse)


def test_worked_example_frozen():
    # x = 0.5, B = 4, mu = 255: derived by direct mu-law arithmetic
    spec = QuantizerSpec(bits=4)
    idx = quantize(np.array([0.5]), spec)
    assert idx[0] == 13
    xhat = dequantize(idx, spec)
    assert abs(xhat[0] - 0.45071619225796067) < 1e-12


def test_compand_expand_inverse_and_sign_symmetry():
    spec = QuantizerSpec(bits=5)
    x = np.linspace(-1, 1, 1001)
    assert np.max(np.abs(expand(compand(x, spec), spec) - x)) < 1e-14
    assert np.max(np.abs(compand(-x, spec) + compand(x, spec))) < 1e-15
    assert compand(np.array([0.0]), spec)[0] == 0.0


def test_quantize_is_nearest_level_in_companded_domain():
    rng = np.random.default_rng(5)
    for bits in (2, 3, 5, 8):
        spec = QuantizerSpec(bits=bits)
        x = np.clip(rng.uniform(-1.2, 1.2, 4000), -1.0, 1.0)
        idx = quantize(x, spec)
        y = compand(x, spec)
        grid = np.arange(spec.n_levels) * spec.step - 1.0
        chosen = np.abs(grid[idx] - y)
        best = np.min(np.abs(grid[None, :] - y[:, None]), axis=1)
        assert np.max(chosen - best) < 1e-12


def test_level_centers_are_fixed_points_and_odd_count():
    for bits in range(2, 9):
        spec = QuantizerSpec(bits=bits)
        centers = level_centers(spec)
        assert centers.size == 2 ** bits - 1
        assert abs(centers[(centers.size - 1) // 2]) < 1e-15  # midtread zero
        assert np.array_equal(quantize(centers, spec), np.arange(spec.n_levels))
        assert np.all(np.diff(centers) > 0)


def cell_bound(spec):
    """Per-cell worst-case round-trip error from the companded cell edges."""
    centers_y = np.arange(spec.n_levels) * spec.step - 1.0
    lo = np.maximum(centers_y - spec.step / 2, -1.0)
    hi = np.minimum(centers_y + spec.step / 2, 1.0)
    c = expand(centers_y, spec)
    return np.maximum(c - expand(lo, spec), expand(hi, spec) - c)


def test_roundtrip_error_within_per_cell_bound_coarse_grid():
    # fine 1e-4 grid over every B runs in the acceptance suite
    x = np.arange(-1.0, 1.0 + 1e-9, 1e-3)
    for bits in (2, 4, 6):
        spec = QuantizerSpec(bits=bits)
        idx = quantize(x, spec)
        err = np.abs(dequantize(idx, spec) - x)
        assert np.all(err <= cell_bound(spec)[idx] + 1e-12)


def test_out_of_range_inputs_clip_and_bad_indices_raise():
    spec = QuantizerSpec(bits=3)
    assert quantize(np.array([5.0]), spec)[0] == spec.n_levels - 1
    assert quantize(np.array([-5.0]), spec)[0] == 0
    with pytest.raises(ConfigError):
        dequantize(np.array([spec.n_levels]), spec)
    with pytest.raises(ConfigError):
        dequantize(np.array([-1]), spec)
    with pytest.raises(ConfigError):
        QuantizerSpec(bits=1)
    with pytest.raises(ConfigError):
        QuantizerSpec(bits=9)
    with pytest.raises(ConfigError):
        QuantizerSpec(companding_mu=0.0)


def test_capacity_and_dimension_values():
    assert abs(capacity(0.0) - 1.0) < 1e-12
    assert abs(capacity(10.0) - math.log2(11.0)) < 1e-12
    assert ideal_dimension(32, 0.0) == 7
    assert ideal_dimension(32, 10.0) == 23
    assert ideal_dimension(16, 0.0) == 4
    assert ideal_dimension(16, 10.0) == 12
    # constant unit gains make the ergodic capacity collapse to the mean one
    assert abs(capacity_ergodic(7.0, np.ones(100)) - capacity(7.0)) < 1e-12
    with pytest.raises(ConfigError):
        capacity_ergodic(0.0, np.array([]))
    with pytest.raises(ConfigError):
        ideal_dimension(0, 0.0)


def test_threshold_curve_and_missing_entry():
    scheme = IdealSchemeSpec(design_snr_db=10.0, k=16)
    assert scheme.m == 12
    table = {12: -9.0}
    assert sscc_ideal_nmse(scheme, 9.99, table) == 0.0
    assert sscc_ideal_nmse(scheme, 10.0, table) == -9.0
    assert sscc_ideal_nmse(scheme, 20.0, table) == -9.0
    assert ideal_curve(scheme, [0.0, 10.0, 15.0], table) == [0.0, -9.0, -9.0]
    with pytest.raises(ConfigError):
        sscc_ideal_nmse(scheme, 10.0, {7: -9.0})


def test_envelope_matches_pointwise_min_oracle():
    rng = np.random.default_rng(9)
    grid = list(np.arange(-10.0, 11.0, 2.0))
    curves = [(grid, list(rng.uniform(-20, 2, len(grid)))) for _ in range(5)]
    env = envelope(curves)
    for j in range(len(grid)):
        assert env[j] == min(c[1][j] for c in curves)
    with pytest.raises(ConfigError):
        envelope([])
    with pytest.raises(ConfigError):
        envelope([(grid, curves[0][1]), (grid[:-1], curves[1][1][:-1])])


def test_table_save_load_roundtrip(tmp_path):
    table = {4: -3.25, 12: -9.5}
    path = str(tmp_path / "table.json")
    save_table(table, {"note": "unit"}, path)
    back, prov = load_table(path)
    assert back == table
    assert prov["note"] == "unit"
