import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from gprodom.datagen import Scatterer, Scene, simulate_ascan
from gprodom.preprocess import (
    AScan, BScan, PreprocessConfig, assemble_bscan, butterworth_bandpass, butterworth_sos,
    dewow, dewow_array, load_bscans, normalize_bscan, preprocess_chain, read_trace_csv,
    resample_columns, resample_rows, save_bscans, sec_gain, sec_gain_curve, wavelet_denoise,
    write_trace_csv,
)

DT = 0.25e-9  # 4 GHz sampling, Nyquist 2 GHz


def tone(f, n=4096, dt=DT, amp=1.0):
    return amp * np.sin(2 * np.pi * f * dt * np.arange(n))


# ------------------------------------------------------------------ bandpass

def test_bandpass_preserves_band_center_sine():
    cfg = PreprocessConfig()
    lo, hi = cfg.band(DT)
    x = tone(0.5 * (lo + hi))
    y = butterworth_bandpass(AScan(x, DT), cfg).samples
    trim = slice(400, -400)
    ratio = np.abs(y[trim]).max() / np.abs(x[trim]).max()
    assert abs(ratio - 1.0) < 0.05
    assert y.size == x.size


def test_bandpass_kills_dc():
    y = butterworth_bandpass(AScan(np.full(2048, 3.0), DT), PreprocessConfig()).samples
    assert np.abs(y).max() < 1e-3 * 3.0


@pytest.mark.parametrize("edge", [0, 1])
def test_single_pass_response_is_minus_3db_at_cutoffs(edge):
    cfg = PreprocessConfig()
    band = cfg.band(DT)
    n = 20000  # both cutoffs fall on FFT bins: fs/20 and 0.4 fs
    impulse = np.zeros(n)
    impulse[0] = 1.0
    h = signal.sosfilt(butterworth_sos(cfg, DT), impulse)
    freqs = np.fft.rfftfreq(n, DT)
    spec = np.abs(np.fft.rfft(h))
    k = int(np.argmin(np.abs(freqs - band[edge])))
    assert freqs[k] == pytest.approx(band[edge], rel=1e-12)
    db = 20 * np.log10(spec[k])
    assert abs(db + 3.0103) <= 0.2


def test_bandpass_rejects_band_beyond_nyquist():
    with pytest.raises(ValueError, match="Nyquist"):
        butterworth_bandpass(AScan(np.zeros(64), DT), PreprocessConfig(f_lo=1e8, f_hi=3e9))


def test_config_collects_all_errors():
    with pytest.raises(ValueError) as exc:
        PreprocessConfig(filter_order=0, dewow_window=4, levels=0)
    msg = str(exc.value)
    assert "filter_order" in msg and "dewow_window" in msg and "levels" in msg


# ------------------------------------------------------------------ SEC gain

def test_sec_neutral_is_identity(rng):
    x = rng.normal(size=256)
    y = sec_gain(AScan(x, DT), PreprocessConfig(sec_alpha=0.0, sec_power=0.0)).samples
    np.testing.assert_array_equal(y, x)


def test_sec_impulse_gets_pointwise_gain():
    cfg = PreprocessConfig(sec_alpha=2e8, sec_power=1.0)
    k = 37
    x = np.zeros(128)
    x[k] = 1.0
    y = sec_gain(AScan(x, DT), cfg).samples
    t_k = k * DT
    expected = (t_k / DT) * np.exp(2e8 * t_k)
    assert y[k] == pytest.approx(expected, rel=1e-14)
    assert np.count_nonzero(y) == 1


def test_sec_two_echo_ratio_is_two():
    k = 40
    x = np.zeros(128)
    x[k] = x[2 * k] = 0.7
    y = sec_gain(AScan(x, DT), PreprocessConfig(sec_alpha=0.0, sec_power=1.0)).samples
    assert y[2 * k] / y[k] == 2.0


def test_sec_gain_is_monotone_and_default_alpha_reaches_20db():
    cfg = PreprocessConfig()
    n = 200
    t_max = DT * (n - 1)
    g = sec_gain_curve(n, DT, 0.0, cfg.alpha(t_max), 0.0)
    assert np.all(np.diff(g) >= 0)
    assert 20 * np.log10(g[-1]) == pytest.approx(20.0, rel=1e-12)


def test_sec_rejects_negative_parameters():
    with pytest.raises(ValueError):
        sec_gain_curve(16, DT, 0.0, -1.0, 1.0)
    with pytest.raises(ValueError):
        PreprocessConfig(sec_power=-0.5)


# ------------------------------------------------------------------ dewow

def test_dewow_constant_to_zero():
    y = dewow(AScan(np.full(100, -4.2), DT), 15).samples
    assert np.abs(y).max() < 1e-12


def test_dewow_full_length_window_removes_global_mean(rng):
    x = rng.normal(size=101) + 3.0
    y = dewow_array(x, 101)
    np.testing.assert_allclose(y, x - x.mean(), atol=1e-12)


def test_dewow_separates_ramp_from_fast_sine():
    n = 600
    k = np.arange(n)
    sine = np.sin(2 * np.pi * k / 5)
    ramp = 0.02 * k
    y = dewow_array(ramp + sine, 15)
    assert np.corrcoef(y, sine)[0, 1] > 0.95


def test_dewow_mean_is_negligible_over_constant_stretches(rng):
    levels = rng.normal(size=6) * 5
    x = np.repeat(levels, 40)
    y = dewow_array(x, 15)
    rms = np.sqrt(np.mean(x ** 2))
    for b in range(6):
        lo, hi = b * 40, (b + 1) * 40
        interior = y[lo + 7:hi - 7]  # windows fully inside the plateau
        for c in range(interior.size - 14):
            assert abs(interior[c:c + 15].mean()) <= 1e-9 * rms


@pytest.mark.parametrize("window", [2, 1, 14, 201])
def test_dewow_rejects_bad_windows(window):
    with pytest.raises(ValueError):
        dewow_array(np.zeros(100), window)


# ------------------------------------------------------------------ wavelet

def test_wavelet_zero_threshold_reconstructs(rng):
    x = rng.normal(size=500)
    y = wavelet_denoise(AScan(x, DT), PreprocessConfig(threshold=0.0)).samples
    assert np.linalg.norm(y - x) / np.linalg.norm(x) <= 1e-8


def test_wavelet_zero_in_zero_out():
    y = wavelet_denoise(AScan(np.zeros(256), DT), PreprocessConfig()).samples
    np.testing.assert_array_equal(y, 0.0)


def test_wavelet_improves_snr_of_noisy_sine(rng):
    n = 2048
    clean = np.sin(2 * np.pi * np.arange(n) / 128)
    noise_power = np.mean(clean ** 2) / 10 ** 0.5  # 5 dB
    noisy = clean + rng.normal(scale=np.sqrt(noise_power), size=n)
    out = wavelet_denoise(AScan(noisy, DT), PreprocessConfig()).samples

    def snr(x):
        return 10 * np.log10(np.mean(clean ** 2) / np.mean((x - clean) ** 2))

    assert snr(out) - snr(noisy) >= 3.0


def test_wavelet_needs_enough_samples():
    cfg = PreprocessConfig(levels=5)
    with pytest.raises(ValueError, match="32"):
        wavelet_denoise(AScan(np.zeros(20), DT), cfg)


# ------------------------------------------------------------------ chain

def test_chain_with_neutral_steps_is_near_identity():
    nyq = 0.5 / DT
    cfg = PreprocessConfig(f_lo=1e-4 * nyq, f_hi=0.999 * nyq, filter_order=1, sec_alpha=0.0,
                           sec_power=0.0, threshold=0.0, dewow_window=15)
    x = tone(nyq / 7.5, n=1500)  # 15 samples hold exactly two periods
    y = preprocess_chain(AScan(x, DT), cfg).samples
    trim = slice(150, -150)
    assert np.abs(y[trim] - x[trim]).max() < 0.02


def test_chain_equals_manual_composition(rng):
    cfg = PreprocessConfig()
    tr = AScan(rng.normal(size=256), DT, t0=1e-9)
    manual = wavelet_denoise(dewow(sec_gain(butterworth_bandpass(tr, cfg), cfg), cfg.dewow_window), cfg)
    np.testing.assert_array_equal(preprocess_chain(tr, cfg).samples, manual.samples)


@pytest.mark.parametrize("seed", range(5))
def test_chain_sharpens_deep_scatterer_echo(seed):
    # SEC gain favours late arrivals; a shallow echo under the same gain can lose to the
    # amplified late noise, so the oracle uses a deep reflector
    depth = 1.2
    scene = Scene([Scatterer(0.0, depth, 1.0)], noise=0.01)
    tr = simulate_ascan(scene, 0.0, DT, 256, seed=seed)
    out = preprocess_chain(tr, PreprocessConfig())
    k0 = int(round(2 * depth / scene.velocity / DT))
    dist = np.abs(np.arange(256) - k0)
    echo = dist <= 8
    background = (dist > 16) & (dist < 64)

    def pbr(x):
        return np.abs(x[echo]).max() / np.sqrt(np.mean(x[background] ** 2))

    assert pbr(out.samples) > pbr(tr.samples)


@settings(max_examples=25, deadline=None)
@given(st.integers(32, 300), st.integers(0, 2 ** 31 - 1))
def test_every_step_preserves_length_and_dt(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    tr = AScan(x, DT)
    cfg = PreprocessConfig(dewow_window=min(15, n - 1 + n % 2))
    for out in (butterworth_bandpass(tr, cfg), sec_gain(tr, cfg), dewow(tr, cfg.dewow_window),
                wavelet_denoise(tr, cfg)):
        assert out.samples.shape == (n,) and out.dt == DT
    a, b = preprocess_chain(tr, cfg), preprocess_chain(AScan(x.copy(), DT), cfg)
    assert a.samples.tobytes() == b.samples.tobytes()


# ------------------------------------------------------------------ assembly

def traces_at(positions, rng, n=32):
    return [AScan(rng.normal(size=n), DT, position=float(p)) for p in positions]


def test_assemble_on_grid_keeps_columns(rng):
    cfg = PreprocessConfig(L=8, trace_spacing=0.02, stride=4)
    pos = 1.0 + 0.02 * np.arange(20)
    trs = traces_at(pos, rng)
    scans = assemble_bscan(trs, cfg)
    first = scans[0]
    np.testing.assert_array_equal(first.traces, np.stack([t.samples for t in trs[:8]], axis=1))
    assert first.width == 8 and first.trace_spacing == 0.02


def test_assemble_midpoint_is_average(rng):
    cfg = PreprocessConfig(L=2, trace_spacing=0.5, stride=1)
    trs = traces_at([0.0, 1.0], rng)
    scans = assemble_bscan(trs, cfg)
    mid = scans[0].traces[:, 1]
    np.testing.assert_allclose(mid, 0.5 * (trs[0].samples + trs[1].samples), rtol=0, atol=1e-15)


def test_assemble_matches_rowwise_interp_oracle(rng):
    pos = np.cumsum(rng.uniform(0.005, 0.04, size=80))
    trs = traces_at(pos, rng)
    cfg = PreprocessConfig(L=16, trace_spacing=0.02, stride=16)
    scans = assemble_bscan(trs, cfg)
    matrix = np.stack([t.samples for t in trs], axis=1)
    for b in scans:
        grid = b.positions
        oracle = np.stack([np.interp(grid, pos, row) for row in matrix])
        np.testing.assert_allclose(b.traces, oracle, rtol=0, atol=1e-12)


def test_consecutive_windows_overlap_by_l_minus_stride(rng):
    cfg = PreprocessConfig(L=10, trace_spacing=0.02, stride=3)
    pos = np.cumsum(rng.uniform(0.01, 0.03, size=60))
    scans = assemble_bscan(traces_at(pos, rng), cfg)
    assert len(scans) >= 3
    for a, b in zip(scans, scans[1:]):
        np.testing.assert_array_equal(a.traces[:, 3:], b.traces[:, :7])
        assert b.origin - a.origin == pytest.approx(3 * 0.02, abs=1e-12)
        np.testing.assert_allclose(np.diff(b.positions), 0.02, rtol=0, atol=1e-12)


def test_assemble_rejects_bad_positions(rng):
    cfg = PreprocessConfig(L=4, trace_spacing=0.1)
    with pytest.raises(ValueError, match="increasing; first violation at index 2"):
        assemble_bscan(traces_at([0.0, 0.5, 0.5, 1.0], rng), cfg)
    with pytest.raises(ValueError, match="shorter"):
        assemble_bscan(traces_at([0.0, 0.1, 0.2], rng), cfg)


def test_resample_helpers():
    m = np.arange(12.0).reshape(4, 3)
    np.testing.assert_array_equal(resample_rows(m, 2), [[1.5, 2.5, 3.5], [7.5, 8.5, 9.5]])
    np.testing.assert_array_equal(resample_columns(m, np.array([0.0, 1.0, 2.0]), np.array([0.5])),
                                  m[:, :2].mean(axis=1, keepdims=True))
    z = normalize_bscan(m)
    assert abs(z.mean()) < 1e-15 and z.std() == pytest.approx(1.0)
    np.testing.assert_array_equal(normalize_bscan(np.ones((3, 3))), 0.0)


def test_trace_csv_and_bscan_store_round_trip(tmp_path, rng):
    trs = traces_at(np.linspace(0, 1, 5), rng, n=20)
    write_trace_csv(tmp_path / "traces.csv", trs, tmp_path / "positions.csv")
    back = read_trace_csv(tmp_path / "traces.csv", tmp_path / "positions.csv")
    assert len(back) == 5
    for a, b in zip(trs, back):
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.position == b.position
        assert b.dt == pytest.approx(DT, rel=1e-9)
    scans = [BScan(rng.normal(size=(6, 4)), 0.02, origin=0.1 * i) for i in range(3)]
    save_bscans(tmp_path / "b.bin", scans)
    for a, b in zip(scans, load_bscans(tmp_path / "b.bin")):
        np.testing.assert_array_equal(a.traces, b.traces)
        assert a.origin == b.origin


def test_ascan_invariants():
    with pytest.raises(ValueError):
        AScan(np.zeros(15), DT)
    with pytest.raises(ValueError):
        AScan(np.zeros(32), 0.0)
