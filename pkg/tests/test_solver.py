import numpy as np
import pytest

from cloakgan.errors import ConfigurationError
from cloakgan.geometry import DomainSpec, PermittivityMap, annulus_mask, mirror_expand, random_shell, rasterize
from cloakgan.solver import (
    ETA0,
    SourceSpec,
    analytic_pec_field,
    analytic_pec_reference,
    baseline_psi,
    compute_psi,
    pec_series_coefficients,
    read_field_map,
    solve_scattered,
    write_field_map,
)

SPEC = DomainSpec()
SRC = SourceSpec()
EMPTY = np.zeros((128, 128), np.uint8)


@pytest.fixture(scope="module")
def bare20():
    return solve_scattered(rasterize(EMPTY, SPEC, 20.0), SRC)


@pytest.fixture(scope="module")
def bare40():
    return solve_scattered(rasterize(EMPTY, SPEC, 40.0), SRC)


@pytest.fixture(scope="module")
def shell10():
    q = random_shell(SPEC, 42, curve_count=7, curve_scale=1.0)
    return solve_scattered(rasterize(mirror_expand(q), SPEC, 10.0), SRC)


class TestAnalyticReference:
    def test_series_is_converged(self):
        a = analytic_pec_reference(SPEC, SRC, n_terms=40)
        b = analytic_pec_reference(SPEC, SRC, n_terms=80)
        assert abs(a - b) / b < 1e-12

    def test_too_few_terms_rejected(self):
        with pytest.raises(ConfigurationError):
            analytic_pec_reference(SPEC, SRC, n_terms=3)

    def test_weak_scattering_limit(self):
        tiny = DomainSpec(r_object=0.01 * SPEC.wavelength / (2 * np.pi))
        psi = analytic_pec_reference(tiny, SRC)
        assert 0 < psi < analytic_pec_reference(SPEC, SRC)

    def test_coefficients_match_their_definition(self):
        from scipy.special import h1vp, jvp

        x = 2 * np.pi / SPEC.wavelength * SPEC.r_object
        a = pec_series_coefficients(x, 12)
        for n in range(12):
            assert a[n] == pytest.approx(-jvp(n, x) / h1vp(n, x), rel=1e-13)

    def test_quadratic_in_amplitude(self):
        one = analytic_pec_reference(SPEC, SRC)
        three = analytic_pec_reference(SPEC, SourceSpec(amplitude=3.0))
        assert three == pytest.approx(9 * one, rel=1e-13)


class TestSolveScattered:
    def test_free_space_scatters_nothing(self):
        pm = rasterize(EMPTY, SPEC, 10.0)
        free = PermittivityMap(
            eps=np.ones_like(pm.eps),
            cell_size=pm.cell_size,
            pec_mask=np.zeros_like(pm.pec_mask),
            spec=SPEC,
        )
        sol = solve_scattered(free, SRC)
        assert np.abs(sol.hz_scattered).max() < 1e-8 * np.abs(sol.hz_background).max()

    def test_background_is_the_physical_plane_wave(self, bare20):
        x, _ = bare20.pmap.cell_centers()
        k0 = 2 * np.pi / SPEC.wavelength
        expected = SRC.amplitude / ETA0 * np.exp(1j * k0 * x)
        np.testing.assert_allclose(bare20.hz_background, expected, rtol=1e-12)

    def test_fields_are_finite(self, bare20, shell10):
        assert np.isfinite(bare20.hz_scattered).all()
        assert np.isfinite(shell10.hz_scattered).all()

    def test_residual_contract(self, bare20, bare40, shell10):
        for sol in (bare20, bare40, shell10):
            assert sol.residual <= 1e-8

    def test_total_field_vanishes_on_the_conductor(self, bare20):
        tot = bare20.hz_total
        assert np.abs(tot[bare20.pmap.pec_mask]).max() == 0.0

    def test_resolution_floor_enforced(self):
        pm = rasterize(EMPTY, SPEC, 10.0)
        pm.cell_size = SPEC.wavelength / 8.0  # below the supported range
        with pytest.raises(ConfigurationError):
            solve_scattered(pm, SRC)

    def test_field_magnitude_matches_series(self, bare20):
        # verified against the independent series solution; the comparison is
        # on |Hz| because the second-order grid accumulates a common phase
        # drift of order (k0 h)^2 k0 r that carries no power
        x, y = bare20.pmap.cell_centers()
        r = np.hypot(x, y)
        band = (r > 1.2) & (r < 8.0)
        ana = analytic_pec_field(SPEC, SRC, x, y)
        err = np.linalg.norm(
            (np.abs(bare20.hz_scattered) - np.abs(ana))[band]
        ) / np.linalg.norm(np.abs(ana)[band])
        assert err < 0.02

    def test_complex_field_error_is_second_order(self, bare20, bare40):
        def complex_err(sol):
            x, y = sol.pmap.cell_centers()
            r = np.hypot(x, y)
            band = (r > 1.2) & (r < 8.0)
            ana = analytic_pec_field(SPEC, SRC, x, y)
            return np.linalg.norm((sol.hz_scattered - ana)[band]) / np.linalg.norm(ana[band])

        e20 = complex_err(bare20)
        e40 = complex_err(bare40)
        assert e20 < 0.12
        # halving h must cut the error roughly fourfold
        assert e40 / e20 < 0.35

    def test_analytic_field_zero_inside_conductor(self):
        v = analytic_pec_field(SPEC, SRC, np.array([0.2, 5.0]), np.array([0.1, 0.0]))
        assert v[0] == 0.0
        assert v[1] != 0.0


class TestComputePsi:
    def test_bare_cylinder_matches_series_at_20(self, bare20):
        ref = analytic_pec_reference(SPEC, SRC)
        psi = compute_psi(bare20, 10.0).psi
        assert abs(psi - ref) / ref < 0.05

    def test_bare_cylinder_matches_series_at_40(self, bare40):
        ref = analytic_pec_reference(SPEC, SRC)
        psi = compute_psi(bare40, 10.0).psi
        assert abs(psi - ref) / ref < 0.02

    def test_grid_refinement_convergence(self, bare20, bare40):
        p20 = compute_psi(bare20, 10.0).psi
        p40 = compute_psi(bare40, 10.0).psi
        assert abs(p20 - p40) / p40 < 0.02

    def test_flux_surface_independence(self, bare20, shell10):
        for sol in (bare20, shell10):
            a = compute_psi(sol, 8.0).psi
            b = compute_psi(sol, 10.0).psi
            assert abs(a - b) / b < 1e-6

    def test_psi_nonnegative_and_converged(self, shell10):
        res = compute_psi(shell10, 10.0)
        assert res.psi >= 0
        assert res.converged
        assert res.grid_resolution == pytest.approx(10.0)

    def test_power_scales_quadratically_with_amplitude(self):
        pm = rasterize(EMPTY, SPEC, 10.0)
        p1 = compute_psi(solve_scattered(pm, SourceSpec(amplitude=1.0)), 10.0).psi
        p2 = compute_psi(solve_scattered(pm, SourceSpec(amplitude=2.0)), 10.0).psi
        assert p2 == pytest.approx(4 * p1, rel=1e-12)

    def test_zero_field_gives_zero_psi(self, bare20):
        quiet = solve_scattered(
            PermittivityMap(
                eps=np.ones_like(bare20.pmap.eps),
                cell_size=bare20.pmap.cell_size,
                pec_mask=np.zeros_like(bare20.pmap.pec_mask),
                spec=SPEC,
            ),
            SRC,
        )
        assert compute_psi(quiet, 10.0).psi == 0.0

    def test_radius_range_enforced(self, bare20):
        with pytest.raises(ConfigurationError):
            compute_psi(bare20, SPEC.r_shell)  # must be strictly outside the shell
        with pytest.raises(ConfigurationError):
            compute_psi(bare20, SPEC.r_domain + 0.5)
        compute_psi(bare20, SPEC.r_domain)  # boundary itself is allowed


class TestBaseline:
    def test_matches_series_within_tolerance(self):
        ref = analytic_pec_reference(SPEC, SRC)
        base = baseline_psi(SPEC, SRC, grid_resolution=20.0).psi
        assert abs(base - ref) / ref < 0.05

    def test_cached_value_is_stable(self):
        a = baseline_psi(SPEC, SRC, grid_resolution=10.0)
        b = baseline_psi(SPEC, SRC, grid_resolution=10.0)
        assert a.psi == b.psi

    def test_empty_shell_has_unit_cloaking_ratio(self):
        base = baseline_psi(SPEC, SRC, grid_resolution=10.0).psi
        pm = rasterize(EMPTY, SPEC, 10.0)
        psi = compute_psi(solve_scattered(pm, SRC), 10.0).psi
        assert psi / base == pytest.approx(1.0, rel=1e-12)


class TestFieldMapIO:
    def test_round_trip(self, tmp_path, shell10):
        path = tmp_path / "fields.bin"
        write_field_map(path, shell10)
        sc, bg, meta = read_field_map(path)
        assert int(meta["n"]) == shell10.pmap.n
        assert meta["cell_size"] == pytest.approx(shell10.pmap.cell_size)
        assert meta["wavelength"] == pytest.approx(SPEC.wavelength)
        np.testing.assert_allclose(sc, shell10.hz_scattered.astype(np.complex64))
        np.testing.assert_allclose(bg, shell10.hz_background.astype(np.complex64))
