import numpy as np
import pytest

from pinnkit.network import (
    CheckpointError, MlpConfig, init_params, forward, leaf_params,
    load_checkpoint, param_count, save_checkpoint,
)
from pinnkit.rng import Rng
from pinnkit.tape import Tape, grad, nth_derivative

from _expr import central_diff


def test_param_count_closed_form():
    # hidden=2, neurons=20, input=1: per-layer fan_in*fan_out + fan_out
    cfg = MlpConfig(input_dim=1, hidden_layers=2, neurons_per_layer=20)
    expected = (1 * 20 + 20) + (20 * 20 + 20) + (20 * 1 + 1)
    assert expected == 481
    assert param_count(cfg) == expected
    assert init_params(cfg).param_count == expected


def test_param_count_random_configs():
    rng = Rng(3)
    for _ in range(25):
        d = 1 + int(rng.uniform() * 2)
        h = 1 + int(rng.uniform() * 5)
        n = 1 + int(rng.uniform() * 40)
        cfg = MlpConfig(input_dim=d, hidden_layers=h, neurons_per_layer=n)
        expected = d * n + n + (h - 1) * (n * n + n) + n + 1
        assert param_count(cfg) == expected


def test_total_layer_convention():
    cfg = MlpConfig.from_total_layers(3, 20)  # paper row "3 layers, 20 neurons"
    assert cfg.hidden_layers == 2
    assert cfg.total_layers == 3


def test_init_deterministic_and_biases_zero():
    cfg = MlpConfig(input_dim=2, hidden_layers=3, neurons_per_layer=12, seed=99)
    p1, p2 = init_params(cfg), init_params(cfg)
    assert np.array_equal(p1.values, p2.values)
    for e in p1.layout:
        if e.kind == "bias":
            assert not p1.tensor(e.layer, "bias").any()
    p3 = init_params(cfg.with_seed(100))
    assert not np.array_equal(p1.values, p3.values)


def test_init_scale_matches_xavier_variance():
    cfg = MlpConfig(input_dim=1, hidden_layers=3, neurons_per_layer=40, seed=1)
    params = init_params(cfg)
    for e in params.layout:
        if e.kind != "weight":
            continue
        fan_out, fan_in = e.shape
        if fan_in * fan_out < 400:
            continue
        target = 2.0 / (fan_in + fan_out)
        sample = params.tensor(e.layer, "weight").var(ddof=1)
        assert abs(sample - target) < 0.2 * target


def test_zero_weight_network_outputs_zero():
    cfg = MlpConfig(input_dim=1, hidden_layers=2, neurons_per_layer=5)
    params = init_params(cfg)
    params.values[:] = 0.0
    t = Tape()
    for xv in (-1.0, 0.0, 2.5):
        assert forward(t, params, [t.input(xv)]).value == 0.0


def test_forward_deterministic():
    cfg = MlpConfig(input_dim=2, hidden_layers=2, neurons_per_layer=7, seed=5)
    params = init_params(cfg)
    t = Tape()
    ins = [t.input(0.3), t.input(0.8)]
    assert forward(t, params, ins).value == forward(t, params, ins).value


def test_forward_dim_mismatch():
    cfg = MlpConfig(input_dim=2, hidden_layers=1, neurons_per_layer=3)
    params = init_params(cfg)
    t = Tape()
    with pytest.raises(ValueError):
        forward(t, params, [t.input(1.0)])


def test_input_gradient_matches_finite_difference():
    cfg = MlpConfig(input_dim=1, hidden_layers=2, neurons_per_layer=8, seed=11)
    params = init_params(cfg)

    def f(xs):
        t = Tape()
        return forward(t, params, [t.input(xs[0])]).value

    t = Tape()
    x = t.input(0.37)
    g = grad(forward(t, params, [x]), [x])[0].value
    fd = central_diff(f, [0.37], 0)
    assert g == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_param_gradient_matches_finite_difference():
    cfg = MlpConfig(input_dim=1, hidden_layers=2, neurons_per_layer=4, seed=2)
    params = init_params(cfg)
    t = Tape()
    pvars = leaf_params(t, params)
    x = t.input(0.6)
    y = forward(t, params, [x], param_vars=pvars)
    gs = grad(y, pvars)
    rng = Rng(8)
    base = params.values
    for _ in range(40):
        j = int(rng.uniform() * len(base))
        h = 1e-4 * max(1.0, abs(base[j]))

        def f_at(vj):
            shifted = params.copy()
            shifted.values[j] = vj
            t2 = Tape()
            return forward(t2, shifted, [t2.input(0.6)]).value

        fd = (f_at(base[j] + h) - f_at(base[j] - h)) / (2 * h)
        assert gs[j].value == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_output_smooth_to_fourth_order():
    cfg = MlpConfig(input_dim=1, hidden_layers=2, neurons_per_layer=6, seed=4)
    params = init_params(cfg)
    t = Tape()
    x = t.input(0.25)
    d4 = nth_derivative(lambda v: forward(t, params, [v]), x, 4)
    assert np.isfinite(d4.value)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    cfg = MlpConfig(input_dim=2, hidden_layers=3, neurons_per_layer=9, seed=21)
    params = init_params(cfg)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params, extras={"D": 0.0999})
    loaded, cfg2, extras = load_checkpoint(path)
    assert cfg2 == cfg
    assert extras == {"D": 0.0999}
    assert np.array_equal(loaded.values, params.values)
    # forward outputs identical bit-for-bit
    t1, t2 = Tape(), Tape()
    y1 = forward(t1, params, [t1.input(0.3), t1.input(0.9)])
    y2 = forward(t2, loaded, [t2.input(0.3), t2.input(0.9)])
    assert y1.value == y2.value


def test_checkpoint_truncated_file_errors(tmp_path):
    cfg = MlpConfig(input_dim=1, hidden_layers=1, neurons_per_layer=4)
    params = init_params(cfg)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params)
    text = path.read_text().splitlines()
    truncated = tmp_path / "cut.ckpt"
    truncated.write_text("\n".join(text[:-3]) + "\n")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(truncated)


def test_checkpoint_corrupt_value_errors(tmp_path):
    cfg = MlpConfig(input_dim=1, hidden_layers=1, neurons_per_layer=2)
    params = init_params(cfg)
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params)
    lines = path.read_text().splitlines()
    lines[10] = "zzz-not-hex"
    bad = tmp_path / "bad.ckpt"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(CheckpointError, match=":11"):
        load_checkpoint(bad)
