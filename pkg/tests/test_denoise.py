import sys
import textwrap

import numpy as np
import pytest

from noisemorph.denoise import (
    DctDenoiser,
    DenoiserError,
    ExternalDenoiser,
    RefineConfig,
    random_replacement_refine,
    register_external_denoiser,
)
from noisemorph.image import RngState
from noisemorph.metrics import psnr


def cosine_matrix(n=8):
    # Orthonormal DCT-II basis written out from its definition.
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    m[0] /= np.sqrt(2.0)
    return m


def reference_dct_denoise(x, sigma):
    """Slow loop version: every window, every coefficient."""
    c = cosine_matrix()
    _, h, w = x.shape
    starts = lambda n: sorted(set(list(range(0, n - 8 + 1, 4)) + [n - 8]))
    acc = np.zeros_like(x)
    hits = np.zeros((h, w))
    for ch in range(x.shape[0]):
        for y0 in starts(h):
            for x0 in starts(w):
                coef = c @ x[ch, y0 : y0 + 8, x0 : x0 + 8] @ c.T
                for u in range(8):
                    for v in range(8):
                        if (u, v) != (0, 0) and not abs(coef[u, v]) > 2.7 * sigma:
                            coef[u, v] = 0.0
                acc[ch, y0 : y0 + 8, x0 : x0 + 8] += c.T @ coef @ c
                if ch == 0:
                    hits[y0 : y0 + 8, x0 : x0 + 8] += 1
    return acc / hits


@pytest.mark.parametrize("shape", [(1, 8, 8), (3, 16, 20), (1, 13, 9)])
def test_dct_matches_loop_oracle(shape):
    x = np.random.default_rng(sum(shape)).random(shape)
    np.testing.assert_allclose(DctDenoiser().denoise_fixed(x, 0.05), reference_dct_denoise(x, 0.05), atol=1e-12)


def test_sigma_zero_is_identity_and_constant_is_fixed():
    den = DctDenoiser()
    x = np.random.default_rng(0).random((3, 16, 16))
    np.testing.assert_array_equal(den.denoise_fixed(x, 0.0), x)
    const = np.full((3, 16, 16), 0.4)
    np.testing.assert_allclose(den.denoise_fixed(const, 0.1), const, atol=1e-14)
    with pytest.raises(ValueError):
        den.denoise_fixed(x, -1.0)


def test_dct_removes_gaussian_noise(bundled):
    clean = bundled("astronaut")
    sigma = 25 / 255
    noisy = clean + np.random.default_rng(1).normal(0, sigma, clean.shape)
    out = DctDenoiser().denoise_fixed(noisy, sigma)
    assert psnr(out, clean) >= psnr(noisy, clean) + 4.0


def test_flexible_constant_map_equals_fixed():
    x = np.random.default_rng(2).random((3, 24, 24))
    den = DctDenoiser()
    np.testing.assert_array_equal(den.denoise_flexible(x, np.full(x.shape, 0.07)), den.denoise_fixed(x, 0.07))
    np.testing.assert_array_equal(den.denoise_flexible(x, np.zeros(x.shape)), x)


def test_flexible_zero_half_is_untouched():
    x = np.random.default_rng(3).random((1, 24, 32))
    smap = np.zeros_like(x)
    smap[..., 16:] = 0.1
    out = DctDenoiser().denoise_flexible(x, smap)
    np.testing.assert_allclose(out[..., :16], x[..., :16], atol=1e-12)
    assert np.abs(out[..., 20:] - x[..., 20:]).max() > 1e-3


def test_flexible_map_must_match_shape():
    with pytest.raises(ValueError):
        DctDenoiser().denoise_flexible(np.zeros((1, 8, 8)), np.zeros((1, 8, 9)))


class Identity:
    def denoise_fixed(self, img, sigma):
        return np.asarray(img, dtype=np.float64).copy()


def test_refine_properties():
    rng = np.random.default_rng(4)
    d, t = rng.random((2, 3, 16, 16))
    cfg = RefineConfig(rng=RngState(5))
    np.testing.assert_array_equal(random_replacement_refine(d, t, Identity(), 0.1, RefineConfig(rounds=0)), d)
    np.testing.assert_array_equal(random_replacement_refine(d, t, Identity(), 0.1, RefineConfig(probability=0.0)), d)
    np.testing.assert_allclose(random_replacement_refine(d, t, Identity(), 0.1, RefineConfig(probability=1.0)), t)
    # identity denoiser: result is a per-pixel convex mix of d and t, equal across channels
    out = random_replacement_refine(d, t, Identity(), 0.1, cfg)
    frac = (out - d) / (t - d)
    np.testing.assert_allclose(frac[0], frac[1])
    assert set(np.round(np.unique(frac) * 4, 9)) <= {0, 1, 2, 3, 4}
    assert 0.15 < frac.mean() < 0.45
    np.testing.assert_array_equal(out, random_replacement_refine(d, t, Identity(), 0.1, cfg))
    with pytest.raises(ValueError):
        RefineConfig(probability=1.5)


ECHO = textwrap.dedent(
    """
    import os, struct, sys
    data = sys.stdin.buffer.read()
    mode = os.environ.get("ECHO_MODE", "echo")
    assert sys.argv[1] in ("--sigma", "--sigma-map"), sys.argv
    if sys.argv[1] == "--sigma-map":
        assert open(sys.argv[2], "rb").read(4) == b"NTF1"
    if mode == "fail":
        sys.stderr.write("boom"); sys.exit(3)
    if mode == "truncate":
        data = data[:-4]
    if mode == "shape":
        h, w, c = struct.unpack("<III", data[4:16])
        data = b"NTF1" + struct.pack("<III", h, w - 1, c) + data[16 : 16 + 4 * h * (w - 1) * c]
    sys.stdout.buffer.write(data)
    """
)


@pytest.fixture
def echo_cmd(tmp_path):
    script = tmp_path / "echo_denoiser.py"
    script.write_text(ECHO)
    return f"{sys.executable} {script}"


def test_external_echo_round_trip(echo_cmd):
    x = np.random.default_rng(6).random((3, 9, 11)).astype(np.float32).astype(np.float64)
    den = register_external_denoiser("exec:" + echo_cmd)
    np.testing.assert_array_equal(den.denoise_fixed(x, 0.1), x)
    np.testing.assert_array_equal(den.denoise_flexible(x, np.full(x.shape, 0.1)), x)


@pytest.mark.parametrize("mode,message", [("truncate", "protocol"), ("shape", "shape"), ("fail", "status 3")])
def test_external_failures(echo_cmd, monkeypatch, mode, message):
    monkeypatch.setenv("ECHO_MODE", mode)
    with pytest.raises(DenoiserError, match=message):
        ExternalDenoiser(echo_cmd).denoise_fixed(np.zeros((1, 8, 8)), 0.1)


def test_external_missing_program_and_bad_spec():
    with pytest.raises(DenoiserError, match="not found"):
        ExternalDenoiser("/nonexistent/denoiser --x")
    with pytest.raises(ValueError):
        register_external_denoiser("bogus")
    assert isinstance(register_external_denoiser("builtin"), DctDenoiser)
