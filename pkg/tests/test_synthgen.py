import numpy as np
import pytest
from scipy import signal, stats

from jetgen.synthgen import (MAGIC, BurstSpec, ClassBalancedSampler, ClassSpec, CorpusSpec, DatasetFormatError,
                             EnvelopeSpec, Geometry, PeakSpec, build_corpus, decode_dataset, encode_dataset,
                             gen_class_segment, gen_colored_noise, generate_corpus, manifest_path, read_dataset,
                             sampler_next, write_dataset)


def periodogram_slope(x, fs):
    """Least-squares log-log slope of the periodogram over [1 Hz, 0.9 Nyquist]."""
    f, p = signal.periodogram(x, fs=fs, detrend=False)
    keep = (f >= 1.0) & (f <= 0.45 * fs)
    return np.polyfit(np.log10(f[keep]), np.log10(p[keep]), 1)[0]


def test_colored_noise_is_standardized():
    x = gen_colored_noise(1.0, 512, 100.0, np.random.default_rng(0))
    assert abs(x.mean()) < 1e-12 and abs(x.var() - 1.0) < 1e-6


def test_white_noise_slope():
    rng = np.random.default_rng(1)
    slopes = [periodogram_slope(gen_colored_noise(0.0, 4096, 100.0, rng), 100.0) for _ in range(20)]
    assert abs(np.mean(slopes)) < 0.15


def test_colored_noise_slope_oracle():
    rng = np.random.default_rng(2)
    slopes = [periodogram_slope(gen_colored_noise(1.5, 4096, 100.0, rng), 100.0) for _ in range(50)]
    assert abs(np.mean(slopes) + 1.5) < 0.1


@pytest.mark.parametrize("chi", [0.5, 2.0, 3.0])
def test_colored_noise_slope_tracks_chi(chi):
    rng = np.random.default_rng(3)
    slopes = [periodogram_slope(gen_colored_noise(chi, 2048, 100.0, rng), 100.0) for _ in range(30)]
    assert abs(np.mean(slopes) + chi) < 0.15


def test_colored_noise_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gen_colored_noise(4.5, 256, 100.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        gen_colored_noise(1.0, 8, 100.0, np.random.default_rng(0))


def test_class_spec_validation_names_field():
    with pytest.raises(ValueError, match="chi"):
        ClassSpec("x", chi=0.2).validate(100.0)
    with pytest.raises(ValueError, match="peak.center"):
        ClassSpec("x", chi=1.0, peak=PeakSpec(60.0, 1.0, 1.0)).validate(100.0)
    with pytest.raises(ValueError, match="bursts"):
        ClassSpec("x", chi=1.0, bursts=BurstSpec(-1.0, 1.0)).validate(100.0)


GEO = Geometry(channels=4, samples=400, fs=100.0)


def _segments(spec, n, geo=GEO, seed=0):
    rng = np.random.default_rng(seed)
    return np.stack([gen_class_segment(spec, 0, geo, rng).segment.data for _ in range(n)])


def test_alpha_peak_shows_in_welch_psd():
    spec = ClassSpec("alpha", chi=1.0, peak=PeakSpec(10.0, 1.0, 1.0))
    x = _segments(spec, 20)
    f, p = signal.welch(x, fs=100.0, nperseg=200, axis=-1)
    p = p.mean(axis=(0, 1))
    band = (f >= 8) & (f <= 13)
    k = np.flatnonzero(band)[np.argmax(p[band])]
    assert 8 < f[k] < 13 and p[k] > p[k - 1] and p[k] > p[k + 1]


def test_plain_colored_noise_has_gaussian_tails():
    x = _segments(ClassSpec("plain", chi=1.0), 100)
    kurt = np.mean([stats.kurtosis(seg.ravel()) for seg in x])
    assert abs(kurt) < 0.3


def test_heavy_bursts_raise_kurtosis():
    spec = ClassSpec("bursty", chi=1.5, bursts=BurstSpec(1.0, 6.0, 0.05))
    x = _segments(spec, 100)
    assert np.mean([stats.kurtosis(seg.ravel()) for seg in x]) > 1.0


def _windowed_rms_var(x, win=50):
    frames = x[..., : x.shape[-1] // win * win].reshape(*x.shape[:-1], -1, win)
    rms = np.sqrt((frames ** 2).mean(-1))
    return (rms / rms.mean(-1, keepdims=True)).var(-1).mean()


def test_default_background_class_properties():
    bg = CorpusSpec().classes[0]
    geo = Geometry(4, 4000, 100.0)
    x = _segments(bg, 30, geo)
    f, p = signal.welch(x, fs=100.0, nperseg=400, axis=-1, detrend=False)
    keep = (f >= 1) & (f <= 45)
    slope = np.polyfit(np.log10(f[keep]), np.log10(p.mean(axis=(0, 1))[keep]), 1)[0]
    assert -bg.chi - 0.2 <= slope <= -bg.chi + 0.2
    white = np.random.default_rng(9).normal(size=x.shape)
    assert _windowed_rms_var(x) > _windowed_rms_var(white)


def test_default_classes_with_bursts_are_heavy_tailed():
    for spec in CorpusSpec().classes[1:]:
        x = _segments(spec, 100)
        assert np.mean([stats.kurtosis(seg.ravel()) for seg in x]) > 1.0, spec.name


def test_bursts_are_shared_across_channels():
    spec = ClassSpec("b", chi=1.0, bursts=BurstSpec(2.0, 20.0, 0.05))
    seg = gen_class_segment(spec, 0, GEO, np.random.default_rng(4))
    assert seg.events
    for onset in seg.events:
        assert np.all(np.abs(seg.segment.data[:, onset]) > 0.5 * np.abs(seg.segment.data).std())


def test_corpus_determinism_and_manifest(tmp_path):
    spec = CorpusSpec(classes=CorpusSpec().classes[:2], counts=(90, 10), samples=200, seed=5)
    a, ma = build_corpus(spec, tmp_path / "a.jetd")
    b, mb = build_corpus(spec, tmp_path / "b.jetd")
    assert a.read_bytes() == b.read_bytes()
    assert ma.read_bytes() == mb.read_bytes()
    import json
    manifest = json.loads(ma.read_text())
    assert manifest["counts"] == [90, 10] and manifest["seed"] == 5 and manifest["format_version"] == 1
    assert CorpusSpec.from_dict(manifest["spec"]) == spec


def test_default_corpus_round_trip(tmp_path):
    path, _ = build_corpus(CorpusSpec(seed=3), tmp_path / "c.jetd")
    ds = read_dataset(path)
    assert ds.data.shape == (600, 4, 400) and ds.data.dtype == np.float32
    assert ds.class_counts() == [430, 128, 42]
    assert np.isfinite(ds.data).all() and len(ds.events) == 600
    write_dataset(tmp_path / "d.jetd", ds)
    assert (tmp_path / "d.jetd").read_bytes() == path.read_bytes()


def test_file_layout(tmp_path):
    ds = generate_corpus(CorpusSpec(counts=(2, 1, 1), samples=32, seed=1))
    raw = encode_dataset(ds)
    assert raw[:8] == MAGIC
    hlen = int.from_bytes(raw[8:12], "little")
    body = raw[12 + hlen:]
    assert len(body) == 4 * (4 + 4 * 4 * 32)
    assert int.from_bytes(body[:4], "little") == ds.labels[0]
    first = np.frombuffer(body[4:4 + 4 * 128], dtype="<f4").reshape(4, 32)
    np.testing.assert_array_equal(first, ds.data[0])


def test_corruption_is_rejected():
    raw = encode_dataset(generate_corpus(CorpusSpec(counts=(2, 1, 1), samples=32)))
    with pytest.raises(DatasetFormatError, match="magic"):
        decode_dataset(b"XXXX" + raw[4:])
    with pytest.raises(DatasetFormatError, match="bytes"):
        decode_dataset(raw[:-3])
    with pytest.raises(DatasetFormatError):
        decode_dataset(raw[:10])


def test_corpus_spec_validation():
    with pytest.raises(ValueError, match="at least 2"):
        CorpusSpec(classes=CorpusSpec().classes[:1], counts=(5,)).validate()
    with pytest.raises(ValueError, match=">= 1"):
        CorpusSpec(counts=(5, 0, 1)).validate()


@pytest.mark.parametrize("alpha,expected", [(1.0, 0.5), (0.0, 0.9), (0.5, np.sqrt(90) / (np.sqrt(90) + np.sqrt(10)))])
def test_sampler_class_mass_law(alpha, expected):
    labels = np.repeat([0, 1], [90, 10])
    sampler = ClassBalancedSampler(labels, alpha, np.random.default_rng(11))
    assert abs(sampler.cumulative[-1] - sampler.weights.sum()) < 1e-12
    assert sampler.class_mass()[0] == pytest.approx(expected, abs=1e-12)
    draws = sampler.draw(100_000)
    assert abs(np.mean(labels[draws] == 0) - expected) < 0.02


def test_sampler_next_matches_law_and_rejects_bad_alpha():
    labels = np.repeat([0, 1, 2], [60, 30, 10])
    sampler = ClassBalancedSampler(labels, 1.0, np.random.default_rng(12))
    picks = labels[[sampler_next(sampler) for _ in range(30_000)]]
    np.testing.assert_allclose(np.bincount(picks) / picks.size, 1 / 3, atol=0.02)
    with pytest.raises(ValueError):
        ClassBalancedSampler(labels, 1.5, np.random.default_rng(0))


def test_manifest_path_is_sidecar(tmp_path):
    assert manifest_path(tmp_path / "x.jetd").name == "x.jetd.manifest.json"
