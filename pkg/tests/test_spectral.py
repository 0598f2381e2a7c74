import io

import numpy as np
import pytest

from kwlab.errors import NonHermitianInputError, ResourceLimitError, UnknownFormatVersionError
from kwlab.spectral import (
    GridSpec,
    RealField,
    SpectralField,
    dispersion_symbol,
    forward_transform,
    frequencies,
    grid_points,
    hermitian_defect,
    inverse_transform,
    load_snapshot,
    read_snapshot,
    retained_mask,
    save_snapshot,
    scale_field,
    semigroup_apply,
    sobolev_norm,
    write_snapshot,
)

from conftest import hermitian_random_field
from oracles import slow_dft_coeffs, slow_l2_norm_squared


class TestGridSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(5, 1.0)
        with pytest.raises(ValueError):
            GridSpec(2, 1.0)
        with pytest.raises(ValueError):
            GridSpec(16, -1.0)
        with pytest.raises(ValueError):
            GridSpec(16, 1.0, lam=0.5)
        with pytest.raises(ValueError):
            GridSpec(16, 1.0, beta=2)

    def test_frequencies(self):
        g = GridSpec(8, 2.0 * np.pi)
        assert np.allclose(frequencies(g), [0, 1, 2, 3, -4, -3, -2, -1])

    def test_retained_mask_excludes_mean_and_half_mode(self):
        g = GridSpec(8, 1.0)
        k = np.fft.fftfreq(8, 1 / 8).astype(int)
        mask = retained_mask(g)
        assert not mask[k == 0][0]
        assert not mask[k == -4][0]
        assert mask.sum() == 6


class TestTransforms:
    def test_zero_field(self, unit_grid):
        u = forward_transform(RealField(np.zeros(64)), unit_grid)
        assert np.all(u.coeffs == 0)

    def test_cosine_coefficients(self):
        g = GridSpec(16, 2.0 * np.pi)
        u = forward_transform(RealField(np.cos(grid_points(g))), g)
        assert abs(u.coeffs[1] - 0.5) < 1e-14
        assert abs(u.coeffs[-1] - 0.5) < 1e-14
        others = np.delete(u.coeffs, [1, 15])
        assert np.max(np.abs(others)) < 1e-14

    def test_parseval_against_slow_dft(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1.0, seed=11)
        samples = inverse_transform(u).samples
        slow = slow_dft_coeffs(samples, unit_grid.length)
        assert np.max(np.abs(slow - u.coeffs)) < 1e-12
        spatial = slow_l2_norm_squared(samples, unit_grid.length)
        spectral = unit_grid.length * np.sum(np.abs(u.coeffs) ** 2)
        assert abs(spatial - spectral) < 1e-12 * max(1.0, spatial)

    def test_round_trip(self, unit_grid):
        u = hermitian_random_field(unit_grid, 6.0, 2.0, seed=3)
        v = forward_transform(inverse_transform(u), unit_grid)
        assert np.max(np.abs(v.coeffs - u.coeffs)) < 1e-12 * np.max(np.abs(u.coeffs))

    def test_inverse_of_half_coefficients_is_cosine(self):
        g = GridSpec(16, 2.0 * np.pi)
        c = np.zeros(16, dtype=complex)
        c[1] = c[-1] = 0.5
        samples = inverse_transform(SpectralField(c, g)).samples
        assert np.max(np.abs(samples - np.cos(grid_points(g)))) < 1e-14

    def test_length_mismatch(self, unit_grid):
        with pytest.raises(ValueError):
            forward_transform(RealField(np.zeros(32)), unit_grid)

    def test_non_hermitian_rejected(self, unit_grid):
        c = np.zeros(64, dtype=complex)
        c[3] = 1.0  # no conjugate partner
        with pytest.raises(NonHermitianInputError):
            inverse_transform(SpectralField(c, unit_grid))


class TestDispersion:
    def test_values(self):
        assert dispersion_symbol(2.0, 1.0, 1) == 40.0
        assert dispersion_symbol(0.0, 3.0, -1) == 0.0
        assert abs(dispersion_symbol(1.0, 2.0, -1) - 0.75) < 1e-15

    def test_semigroup_identity_and_single_mode(self):
        g = GridSpec(16, 2.0 * np.pi, beta=0)
        c = np.zeros(16, dtype=complex)
        c[1] = c[-1] = 0.5
        u = SpectralField(c, g)
        assert np.array_equal(semigroup_apply(u, 0.0).coeffs, u.coeffs)
        v = semigroup_apply(u, np.pi)
        assert abs(v.coeffs[1] + 0.5) < 1e-12  # multiplied by exp(i pi) = -1

    def test_semigroup_transports_cosine(self):
        g = GridSpec(32, 2.0 * np.pi, beta=0)
        u = forward_transform(RealField(np.cos(grid_points(g))), g)
        for t in (0.25, 1.0, 3.7):
            w = inverse_transform(semigroup_apply(u, t)).samples
            assert np.max(np.abs(w - np.cos(grid_points(g) + t))) < 1e-12

    def test_semigroup_law_and_isometry(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1.0, seed=5)
        a = semigroup_apply(u, 0.3 + 0.4)
        b = semigroup_apply(semigroup_apply(u, 0.3), 0.4)
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-12
        for s in (-1.5, 0.0, 2.0):
            assert abs(sobolev_norm(a, s) - sobolev_norm(u, s)) < 1e-12 * sobolev_norm(u, s)


class TestSobolevNorm:
    def test_zero(self, unit_grid):
        assert sobolev_norm(SpectralField(np.zeros(64, complex), unit_grid), 1.0) == 0.0

    def test_cosine_l2(self):
        g = GridSpec(32, 2.0 * np.pi)
        u = forward_transform(RealField(np.cos(grid_points(g))), g)
        assert abs(sobolev_norm(u, 0.0) - np.sqrt(np.pi)) < 1e-12

    def test_hermitian_pair_two_term_sum(self):
        # amplitude a on each member of the pair at +-xi0
        g = GridSpec(32, 2.0 * np.pi)
        a, k0 = 0.7, 3
        c = np.zeros(32, dtype=complex)
        c[k0] = c[-k0] = a
        for s in (-2.0, 0.0, 1.5):
            expected = (1.0 + k0**2) ** (s / 2.0) * a * np.sqrt(2.0 * g.length)
            assert abs(sobolev_norm(SpectralField(c, g), s) - expected) < 1e-12


class TestScaling:
    def test_identity(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1.0, seed=2)
        v = scale_field(u, 1.0)
        assert np.array_equal(v.coeffs, u.coeffs)

    def test_cosine_doubling(self):
        g = GridSpec(16, 2.0 * np.pi)
        u = forward_transform(RealField(np.cos(grid_points(g))), g)
        v = scale_field(u, 2.0)
        assert v.grid.num_modes == 32
        assert abs(v.grid.length - 4.0 * np.pi) < 1e-14
        samples = inverse_transform(v).samples
        x = grid_points(v.grid)
        assert np.max(np.abs(samples - 2.0**-4 * np.cos(x / 2.0))) < 1e-14
        ratio = sobolev_norm(v, 0.0) / sobolev_norm(u, 0.0)
        assert abs(ratio - 2.0**-3.5) < 1e-12

    @pytest.mark.parametrize("s", [-0.5, -2.0])
    @pytest.mark.parametrize("lam", [2.0, 4.0])
    def test_negative_order_norm_inequality(self, unit_grid, s, lam):
        for seed in range(5):
            u = hermitian_random_field(unit_grid, 10.0, 1.3, seed=seed)
            v = scale_field(u, lam)
            ratio = sobolev_norm(v, s) / sobolev_norm(u, s)
            assert ratio <= lam ** (-s - 3.5) * (1.0 + 1e-12)

    def test_resource_limit(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1.0, seed=2)
        with pytest.raises(ResourceLimitError):
            scale_field(u, 3.0, max_modes=100)


class TestSnapshotFormat:
    def test_round_trip(self, tmp_path, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1.0, seed=9).copy_with(time_tag=1.25)
        path = tmp_path / "field.kwsf"
        save_snapshot(u, path)
        v = load_snapshot(path)
        assert v.grid == u.grid
        assert v.time_tag == 1.25
        assert np.array_equal(v.coeffs, u.coeffs)

    def test_header_layout(self, unit_grid):
        u = SpectralField(np.zeros(64, complex), unit_grid)
        buf = io.BytesIO()
        write_snapshot(u, buf)
        raw = buf.getvalue()
        assert raw[:4] == b"KWSF"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:16], "little") == 64
        assert len(raw) == 41 + 16 * 64

    def test_unknown_version_rejected(self, unit_grid):
        u = SpectralField(np.zeros(64, complex), unit_grid)
        buf = io.BytesIO()
        write_snapshot(u, buf)
        raw = bytearray(buf.getvalue())
        raw[4] = 99
        with pytest.raises(UnknownFormatVersionError):
            read_snapshot(io.BytesIO(bytes(raw)))

    def test_hermitian_defect_detects(self, unit_grid):
        u = hermitian_random_field(unit_grid, 8.0, 1.0, seed=1)
        assert hermitian_defect(u) < 1e-14
        c = u.coeffs.copy()
        c[2] += 0.1
        assert hermitian_defect(SpectralField(c, unit_grid)) > 0.05
