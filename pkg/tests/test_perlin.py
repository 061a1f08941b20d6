import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plr.perlin import OctaveParams, build_table, fade, noise2, octave_noise, render_noise_image


class TestTable:
    def test_deterministic(self):
        a = build_table(0)
        b = build_table(0)
        assert np.array_equal(a.perm, b.perm)

    def test_distinct_seeds_differ(self):
        assert not np.array_equal(build_table(0).perm, build_table(1).perm)

    def test_permutation_structure(self):
        t = build_table(7)
        assert sorted(t.perm[:256].tolist()) == list(range(256))
        assert np.array_equal(t.perm[:256], t.perm[256:])

    def test_gradient_norms(self):
        t = build_table(3)
        norms = np.linalg.norm(t.grads, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-12


class TestFade:
    def test_boundaries(self):
        assert fade(0.0) == 0.0
        assert fade(1.0) == 1.0
        assert fade(0.5) == 0.5

    @given(st.floats(min_value=0.0, max_value=1.0))
    @settings(max_examples=100, deadline=None)
    def test_symmetry(self, t):
        assert fade(t) + fade(1.0 - t) == pytest.approx(1.0, abs=1e-12)

    def test_endpoint_derivatives_vanish(self):
        # central stencils; the polynomial is defined on all reals. h for the
        # second derivative is larger because the 1/h^2 division amplifies
        # rounding of values near fade(1) = 1.
        h1, h2 = 1e-5, 1e-4
        for x in (0.0, 1.0):
            d1 = (fade(x + h1) - fade(x - h1)) / (2 * h1)
            d2 = (fade(x + h2) - 2 * fade(x) + fade(x - h2)) / (h2 * h2)
            assert abs(d1) < 1e-6
            assert abs(d2) < 1e-6


class TestNoise2:
    def test_zero_at_lattice_points(self):
        t = build_table(5)
        assert noise2(t, 3.0, 7.0) == 0.0
        rng = np.random.default_rng(0)
        xs = rng.integers(-1000, 1000, 1000).astype(float)
        ys = rng.integers(-1000, 1000, 1000).astype(float)
        assert (noise2(t, xs, ys) == 0.0).all()

    def test_continuity(self):
        t = build_table(5)
        rng = np.random.default_rng(1)
        xs = rng.uniform(-50, 50, 1000)
        ys = rng.uniform(-50, 50, 1000)
        delta = np.abs(noise2(t, xs, ys) - noise2(t, xs + 1e-6, ys))
        assert delta.max() < 1e-4

    def test_bounded_by_one(self):
        t = build_table(9)
        rng = np.random.default_rng(2)
        vals = noise2(t, rng.uniform(-100, 100, 10 ** 6), rng.uniform(-100, 100, 10 ** 6))
        assert np.abs(vals).max() <= 1.0


class TestOctaveNoise:
    def test_single_octave_equals_noise2(self):
        t = build_table(4)
        params = OctaveParams(octaves=1, base_frequency=0.05)
        rng = np.random.default_rng(3)
        xs = rng.uniform(0, 100, 50)
        ys = rng.uniform(0, 100, 50)
        assert np.allclose(octave_noise(t, xs, ys, params),
                           noise2(t, xs * 0.05, ys * 0.05), atol=0)

    def test_zero_at_shared_lattice_point(self):
        t = build_table(4)
        params = OctaveParams(octaves=2, base_frequency=1.0, persistence=1.0,
                              lacunarity=2.0)
        assert octave_noise(t, 5.0, 3.0, params) == 0.0

    def test_normalization_with_stub(self):
        t = build_table(4)
        params = OctaveParams(octaves=4, persistence=0.7)
        out = octave_noise(t, 12.3, 4.5, params, _noise=lambda *_: 1.0)
        assert out == pytest.approx(1.0, abs=1e-12)

    def test_bounded(self):
        t = build_table(11)
        params = OctaveParams()
        rng = np.random.default_rng(5)
        vals = octave_noise(t, rng.uniform(0, 512, 20000), rng.uniform(0, 512, 20000), params)
        assert np.abs(vals).max() <= 1.0


class TestRender:
    def test_deterministic(self):
        a = render_noise_image(3, 64)
        b = render_noise_image(3, 64)
        assert np.array_equal(a, b)

    def test_mean_intensity_band(self):
        means = [render_noise_image(s, 512).mean() for s in range(10)]
        assert all(96 <= m <= 160 for m in means)

    def test_degenerate_size(self):
        img = render_noise_image(0, 1)
        assert img.shape == (1, 1)

    def test_rejects_bad_size(self):
        with pytest.raises(ValueError):
            render_noise_image(0, 0)

    def test_param_validation(self):
        with pytest.raises(ValueError):
            OctaveParams(octaves=0)
        with pytest.raises(ValueError):
            OctaveParams(persistence=0.0)
        with pytest.raises(ValueError):
            OctaveParams(lacunarity=1.0)
