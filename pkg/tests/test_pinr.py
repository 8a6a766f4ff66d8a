import math

import numpy as np
import pytest

from tilenet.diffcore import Tensor
from tilenet.mrnet import init_mrnet, table1_configs
from tilenet.modelio import BadMagicError, TruncatedError, VersionError, load_model, save_model
from tilenet.pinr import (
    ConfigError,
    FrequencySet,
    PeriodicInr,
    band_size,
    enumerate_band,
    forward,
    init_periodic,
    init_siren,
    param_count,
    spatial_jacobian,
)


def single_harmonic(k=(1, 0), period=(2.0, 2.0), phase=0.0, amplitude=1.0):
    """f(x) = amplitude * sin(omega . x + phase), no hidden layers, one channel."""
    freq = FrequencySet([k], period)
    return PeriodicInr(
        omega=freq.omega,
        period=freq.period,
        phi=Tensor([[phase]], requires_grad=True),
        hidden=[],
        C=Tensor([[amplitude]], requires_grad=True),
        c0=Tensor([[0.0]], requires_grad=True),
        freq=freq,
    )


def closed_form_trainable(n, widths, channels):
    total, fan_in = n, n
    for m in widths:
        total += fan_in * m + m
        fan_in = m
    return total + fan_in * channels + channels


# -- frequency band -------------------------------------------------------------


def test_enumerate_band_table1_stage0():
    assert len(enumerate_band(3, 3)) == 24


def test_enumerate_band_empty():
    assert enumerate_band(0, 0) == []


def test_enumerate_band_unit():
    assert set(enumerate_band(1, 1)) == {(0, 1), (1, -1), (1, 0), (1, 1)}


@pytest.mark.parametrize("b1,b2", [(0, 3), (2, 0), (4, 7), (6, 6), (9, 2)])
def test_enumerate_band_count_and_soundness(b1, b2):
    K = enumerate_band(b1, b2)
    brute = {
        (k1, k2)
        for k1 in range(-b1, b1 + 1)
        for k2 in range(-b2, b2 + 1)
        if (k1, k2) != (0, 0)
    }
    # Exactly one of each sign pair from the full box.
    assert len(K) == len(brute) // 2 == band_size(b1, b2)
    assert FrequencySet(K, (1.0, 1.0)).is_sound()
    assert {(-a, -b) for a, b in K} | set(K) == brute


def test_enumerate_band_rejects_negative():
    with pytest.raises(ConfigError):
        enumerate_band(-1, 2)


def test_frequency_set_soundness_detects_pairs():
    assert not FrequencySet([(1, 0), (-1, 0)], (2, 2)).is_sound()
    assert not FrequencySet([(0, 0)], (2, 2)).is_sound()
    assert not FrequencySet([(1, 2), (1, 2)], (2, 2)).is_sound()


def test_omega_from_period():
    fs = FrequencySet([(1, 2), (3, -1)], (2.0, 0.5))
    expected = np.array([[1 * math.pi, 2 * 4 * math.pi], [3 * math.pi, -1 * 4 * math.pi]])
    np.testing.assert_allclose(fs.omega, expected, rtol=1e-15)


# -- initialization -------------------------------------------------------------


def test_init_uses_whole_stage0_band():
    net = init_periodic(24, (3, 3), seed=5)
    assert net.freq.as_set() == set(enumerate_band(3, 3))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_init_unit_band_any_seed(seed):
    net = init_periodic(4, (1, 1), seed=seed)
    assert net.freq.as_set() == set(enumerate_band(1, 1))


@pytest.mark.parametrize("seed", [0, 7, 99])
def test_init_48_of_60_lowest_norms(seed):
    excluded = enumerate_band(3, 3)
    remaining = [k for k in enumerate_band(6, 6) if k not in set(excluded)]
    assert len(remaining) == 60
    norms = sorted(a * a + b * b for a, b in remaining)
    cutoff = norms[47]
    net = init_periodic(48, (6, 6), exclude=excluded, seed=seed)
    chosen = net.freq.as_set()
    assert len(chosen) == 48
    assert chosen <= set(remaining)
    # Everything strictly below the cutoff norm must be chosen; ties fill the rest.
    assert {k for k in remaining if k[0] ** 2 + k[1] ** 2 < cutoff} <= chosen
    assert all(a * a + b * b <= cutoff for a, b in chosen)
    got = sorted(a * a + b * b for a, b in chosen)
    assert got == norms[:48]


def test_init_tie_break_depends_on_seed():
    # (0, 1) and (1, 0) share the smallest norm; picking one of them is a seeded tie.
    picks = {init_periodic(1, (2, 2), seed=s).freq.as_set().pop() for s in range(16)}
    assert picks == {(0, 1), (1, 0)}


def test_init_shortfall_names_counts():
    with pytest.raises(ConfigError, match="short by 1"):
        init_periodic(5, (1, 1))


def test_init_distributions():
    net = init_periodic(60, (6, 6), hidden_widths=[50, 40], channels=3, seed=3)
    assert np.all(np.abs(net.phi.data) <= math.pi)
    fan_in = 60
    for W, b in net.hidden:
        assert np.all(np.abs(W.data) <= math.sqrt(6.0 / fan_in))
        assert np.array_equal(b.data, np.zeros_like(b.data))
        fan_in = W.shape[0]
    assert np.all(np.abs(net.C.data) <= math.sqrt(6.0 / fan_in))
    assert np.array_equal(net.c0.data, np.zeros((1, 3)))
    assert not net.omega.flags.writeable


def test_init_is_seeded():
    a = init_periodic(24, (3, 3), hidden_widths=[8], seed=11)
    b = init_periodic(24, (3, 3), hidden_widths=[8], seed=11)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p.data, q.data)


def test_layers_must_chain():
    net = init_periodic(4, (1, 1), hidden_widths=[3])
    with pytest.raises(ConfigError):
        PeriodicInr(net.omega, net.period, net.phi, [(Tensor(np.zeros((3, 5))), Tensor(np.zeros((1, 3))))], net.C, net.c0)


def test_siren_comparison_architecture():
    net = init_siren(256, omega0=30.0, hidden_widths=[256, 256, 256], seed=0)
    assert net.n_freq == 256 and net.hidden_widths == [256, 256, 256]
    assert not net.periodic
    assert np.all(np.abs(net.omega) <= 15.0)
    # Continuous draws are generically not integer multiples of 2*pi/P.
    k = net.omega / math.pi
    assert np.all(np.abs(k - np.round(k)) > 0) and np.any(np.abs(k - np.round(k)) > 0.1)


def test_siren_zero_omega_is_constant():
    net = init_siren(16, omega0=0.0, hidden_widths=[8], seed=1)
    x = np.random.default_rng(0).uniform(-5, 5, (50, 2))
    y = forward(net, x)
    assert np.max(np.abs(y - y[0])) == 0.0


def test_siren_residual_dwarfs_periodic():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (100, 2))
    shift = np.array([2.0, 2.0])
    siren = init_siren(64, 30.0, [32], seed=4)
    periodic = init_periodic(64, (8, 8), hidden_widths=[32], seed=4)
    r_s = np.max(np.abs(forward(siren, x + shift) - forward(siren, x)))
    r_p = np.max(np.abs(forward(periodic, x + shift) - forward(periodic, x)))
    assert r_s >= 1e3 * max(r_p, 1e-16)


# -- evaluation -----------------------------------------------------------------


def test_zero_weights_give_bias_constant():
    net = init_periodic(24, (3, 3), hidden_widths=[16], seed=0)
    W, b = net.hidden[0]
    W.data[:] = 0.0
    net.c0.data[:] = 0.5
    x = np.random.default_rng(1).uniform(-3, 3, (40, 2))
    assert np.array_equal(forward(net, x), np.full((40, 3), 0.5))
    assert np.array_equal(spatial_jacobian(net, x), np.zeros((40, 3, 2)))


def test_single_harmonic_value_and_jacobian():
    net = single_harmonic()
    ys = np.linspace(-1, 1, 7)
    x = np.stack([np.full_like(ys, 0.5), ys], axis=1)
    np.testing.assert_allclose(forward(net, x), 1.0, atol=1e-15)
    J = spatial_jacobian(net, np.zeros((1, 2)))
    np.testing.assert_allclose(J[0, 0], [math.pi, 0.0], atol=1e-15)


def test_forward_matches_numpy_reference():
    net = init_periodic(40, (4, 4), hidden_widths=[12, 7], seed=9)
    x = np.random.default_rng(3).uniform(-1, 1, (30, 2))
    h = np.sin(x @ net.omega.T + net.phi.data)
    for W, b in net.hidden:
        h = np.sin(h @ W.data.T + b.data)
    ref = h @ net.C.data.T + net.c0.data
    np.testing.assert_allclose(forward(net, x), ref, rtol=0, atol=1e-13)


@pytest.mark.parametrize("hidden", [[], [10], [12, 9, 6]])
def test_periodicity(hidden):
    net = init_periodic(60, (6, 6), hidden_widths=hidden, period=(2.0, 1.5), seed=2)
    x = np.random.default_rng(5).uniform(-10, 10, (1000, 2))
    f = forward(net, x)
    for shift in ((2.0, 1.5), (2.0, 0.0), (0.0, 1.5), (-4.0, 3.0)):
        assert np.max(np.abs(forward(net, x + np.array(shift)) - f)) <= 1e-9
    J = spatial_jacobian(net, x)
    assert np.max(np.abs(spatial_jacobian(net, x + np.array([2.0, 1.5])) - J)) <= 1e-9


def test_jacobian_matches_finite_differences():
    net = init_periodic(40, (4, 4), hidden_widths=[16, 8], seed=6)
    x = np.random.default_rng(7).uniform(-1, 1, (500, 2))
    J = spatial_jacobian(net, x)
    h = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (forward(net, x + e) - forward(net, x - e)) / (2 * h)
        err = np.abs(J[:, :, d] - fd)
        assert np.all((err <= 1e-6 * np.abs(fd)) | (err <= 1e-7))


# -- parameter counts -----------------------------------------------------------


def test_param_count_small_stage():
    net = init_periodic(24, (3, 3), hidden_widths=[32], channels=3)
    pc = param_count(net)
    assert pc.trainable == 24 + (24 * 32 + 32) + (32 * 3 + 3) == 923
    assert pc.frozen == 48


def test_param_count_minimal():
    assert param_count(single_harmonic()).trainable == 3


def test_param_count_table1_closed_form():
    configs = table1_configs()
    net = init_mrnet(configs, seed=0)
    expected = sum(closed_form_trainable(c.freq_count, c.hidden_widths, 3) for c in configs)
    pc = param_count(net)
    assert pc.trainable == expected
    assert pc.frozen == 2 * sum(c.freq_count for c in configs)
    assert pc.trainable == sum(p.data.size for p in net.parameters())


# -- model files ----------------------------------------------------------------


def _assert_same(a, b):
    pa, pb = a.parameters(), b.parameters()
    assert len(pa) == len(pb)
    for p, q in zip(pa, pb):
        assert p.data.tobytes() == q.data.tobytes()


def test_round_trip_stage(tmp_path):
    net = init_periodic(40, (4, 4), hidden_widths=[9, 5], period=(2.0, 1.0), seed=1)
    net.phi.data += 1e-3 * np.arange(40)
    save_model(net, tmp_path / "m.pinr")
    back = load_model(tmp_path / "m.pinr")
    _assert_same(net, back)
    assert np.array_equal(back.freq.K, net.freq.K)
    assert back.period == (2.0, 1.0)
    assert (tmp_path / "m.pinr").read_bytes()[:4] == b"PINR"


def test_round_trip_mrnet_and_siren(tmp_path):
    net = init_mrnet(table1_configs()[:3], seed=2)
    save_model(net, tmp_path / "a.pinr")
    back = load_model(tmp_path / "a.pinr")
    assert back.N == 3
    for s, t in zip(net.stages, back.stages):
        _assert_same(s, t)

    siren = init_siren(16, 30.0, [8], seed=3)
    save_model(siren, tmp_path / "s.pinr")
    sback = load_model(tmp_path / "s.pinr")
    assert sback.omega.tobytes() == siren.omega.tobytes()
    assert not sback.periodic


def test_header_layout(tmp_path):
    net = init_periodic(4, (1, 1), hidden_widths=[3], channels=2, period=(2.0, 2.0))
    save_model(net, tmp_path / "m.pinr")
    raw = (tmp_path / "m.pinr").read_bytes()
    u32 = np.frombuffer(raw[4:28], dtype="<u4")
    # version, n_stages, n_freq, n_hidden, width, channels
    assert u32.tolist() == [1, 1, 4, 1, 3, 2]
    assert np.frombuffer(raw[28:44], dtype="<f8").tolist() == [2.0, 2.0]
    assert np.frombuffer(raw[44:76], dtype="<i4").reshape(4, 2).tolist() == net.freq.K.tolist()


def test_bad_magic(tmp_path):
    net = init_periodic(4, (1, 1))
    save_model(net, tmp_path / "m.pinr")
    raw = bytearray((tmp_path / "m.pinr").read_bytes())
    raw[:4] = b"XXXX"
    (tmp_path / "m.pinr").write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_model(tmp_path / "m.pinr")


def test_bad_version(tmp_path):
    net = init_periodic(4, (1, 1))
    save_model(net, tmp_path / "m.pinr")
    raw = bytearray((tmp_path / "m.pinr").read_bytes())
    raw[4:8] = (7).to_bytes(4, "little")
    (tmp_path / "m.pinr").write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        load_model(tmp_path / "m.pinr")


def test_truncation_names_stage_and_field(tmp_path):
    net = init_mrnet(table1_configs()[:2], seed=0)
    save_model(net, tmp_path / "m.pinr")
    raw = (tmp_path / "m.pinr").read_bytes()
    s0 = net.stages[0]
    # Stage 0 ends after its header, K, phi, W0, b0, C, c0.
    stage0_bytes = 4 * 4 + 16 + 8 * s0.n_freq + 8 * sum(p.data.size for p in s0.parameters())
    # Cut stage 1 inside its phase vector.
    s1 = net.stages[1]
    cut = 12 + stage0_bytes + 4 * 4 + 16 + 8 * s1.n_freq + 8 * 10
    (tmp_path / "t.pinr").write_bytes(raw[:cut])
    with pytest.raises(TruncatedError) as info:
        load_model(tmp_path / "t.pinr")
    assert info.value.stage == 1 and info.value.field == "phi"
    assert "stage 1" in str(info.value) and "phi" in str(info.value)
