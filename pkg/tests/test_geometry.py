import numpy as np
import pytest

from cloakgan.errors import ConfigurationError, ContractError
from cloakgan.geometry import (
    DomainSpec,
    annulus_mask,
    is_mirror_symmetric,
    mirror_expand,
    quadrant_pixel_centers,
    random_shell,
    rasterize,
    restrict_quadrant,
    validate_quadrant,
)

SPEC = DomainSpec()


class TestDomainSpec:
    def test_defaults(self):
        assert SPEC.r_object == 1.0
        assert SPEC.r_shell == 3.0
        assert SPEC.r_domain == 12.0
        assert SPEC.wavelength == pytest.approx(SPEC.r_shell / 2.5)
        assert SPEC.eps_shell == 2.0
        assert SPEC.image_size == 64

    def test_radius_ordering_enforced(self):
        with pytest.raises(ConfigurationError):
            DomainSpec(r_object=3.0, r_shell=1.0)
        with pytest.raises(ConfigurationError):
            DomainSpec(r_domain=2.0)

    def test_permittivity_bounds(self):
        with pytest.raises(ConfigurationError):
            DomainSpec(eps_shell=0.5)
        with pytest.raises(ConfigurationError):
            DomainSpec(eps_background=0.0)

    def test_image_size_must_be_even_and_reasonable(self):
        with pytest.raises(ConfigurationError):
            DomainSpec(image_size=6)
        with pytest.raises(ConfigurationError):
            DomainSpec(image_size=63)


class TestAnnulusMask:
    def test_mask_matches_pixel_center_radii(self):
        x, y = quadrant_pixel_centers(SPEC)
        r = np.hypot(x, y)
        expected = ((r > SPEC.r_object) & (r < SPEC.r_shell)).astype(np.uint8)
        np.testing.assert_array_equal(annulus_mask(SPEC), expected)

    def test_mask_is_binary(self):
        assert set(np.unique(annulus_mask(SPEC))) <= {0, 1}


class TestRandomShell:
    def test_deterministic_for_fixed_seed(self):
        a = random_shell(SPEC, 123, curve_count=6, curve_scale=1.0)
        b = random_shell(SPEC, 123, curve_count=6, curve_scale=1.0)
        np.testing.assert_array_equal(a, b)

    def test_zero_curves_gives_empty_image(self):
        q = random_shell(SPEC, 0, curve_count=0, curve_scale=1.0)
        assert not q.any()

    def test_negative_curve_count_rejected(self):
        with pytest.raises(ContractError):
            random_shell(SPEC, 0, curve_count=-1, curve_scale=1.0)

    def test_annulus_invariant_over_many_seeds(self):
        # brute-force per-pixel radius check, repeated over a wide seed sweep
        x, y = quadrant_pixel_centers(SPEC)
        r = np.hypot(x, y)
        outside = (r <= SPEC.r_object) | (r >= SPEC.r_shell)
        rng = np.random.default_rng(0)
        for seed in range(1000):
            count = int(rng.integers(0, 12))
            scale = float(rng.uniform(0.2, 1.6))
            q = random_shell(SPEC, seed, curve_count=count, curve_scale=scale)
            assert q.dtype == np.uint8
            assert not q[outside].any()
            validate_quadrant(q, SPEC)

    def test_different_seeds_differ(self):
        a = random_shell(SPEC, 1, curve_count=6, curve_scale=1.0)
        b = random_shell(SPEC, 2, curve_count=6, curve_scale=1.0)
        assert (a != b).any()


class TestMirrorExpand:
    def test_first_quadrant_round_trip(self):
        q = random_shell(SPEC, 5, curve_count=7, curve_scale=0.8)
        full = mirror_expand(q)
        np.testing.assert_array_equal(restrict_quadrant(full), q)

    def test_output_symmetric_under_both_reflections(self):
        full = mirror_expand(random_shell(SPEC, 9, curve_count=5, curve_scale=1.2))
        np.testing.assert_array_equal(full, full[::-1, :])
        np.testing.assert_array_equal(full, full[:, ::-1])
        assert is_mirror_symmetric(full)

    def test_all_ones_quadrant_gives_full_annulus(self):
        q = annulus_mask(SPEC)
        full = mirror_expand(q)
        s = SPEC.image_size
        pitch = SPEC.r_shell / s
        c = -SPEC.r_shell + (np.arange(2 * s) + 0.5) * pitch
        x, y = np.meshgrid(c, c, indexing="xy")
        r = np.hypot(x, y)
        expected = ((r > SPEC.r_object) & (r < SPEC.r_shell)).astype(np.uint8)
        np.testing.assert_array_equal(full, expected)

    def test_all_zero_quadrant_gives_all_zero(self):
        assert not mirror_expand(np.zeros((64, 64), np.uint8)).any()

    def test_single_pixel_maps_to_four_mirror_positions(self):
        q = np.zeros((64, 64), np.uint8)
        q[10, 20] = 1
        full = mirror_expand(q)
        assert full.sum() == 4
        s = SPEC.image_size
        set_at = {tuple(p) for p in np.argwhere(full)}
        assert set_at == {
            (s + 10, s + 20),
            (s - 1 - 10, s + 20),
            (s + 10, s - 1 - 20),
            (s - 1 - 10, s - 1 - 20),
        }


class TestValidateQuadrant:
    def test_accepts_valid_image(self):
        validate_quadrant(random_shell(SPEC, 3, curve_count=4, curve_scale=1.0), SPEC)

    def test_rejects_wrong_shape(self):
        with pytest.raises(ContractError):
            validate_quadrant(np.zeros((32, 32), np.uint8), SPEC)

    def test_rejects_non_binary_values(self):
        q = np.zeros((64, 64), np.uint8)
        q[30, 30] = 2
        with pytest.raises(ContractError):
            validate_quadrant(q, SPEC)

    def test_rejects_material_outside_annulus(self):
        q = np.zeros((64, 64), np.uint8)
        q[0, 0] = 1  # center radius is far below r_object
        with pytest.raises(ContractError):
            validate_quadrant(q, SPEC)


class TestRasterize:
    def test_resolution_floor_enforced(self):
        full = np.zeros((128, 128), np.uint8)
        with pytest.raises(ConfigurationError):
            rasterize(full, SPEC, 9.5)

    def test_grid_size_stable_at_exact_multiples(self):
        # r_domain / cell size lands on a whole number here; representation
        # noise must not bump the grid by one cell
        pm = rasterize(np.zeros((128, 128), np.uint8), SPEC, 10.0)
        assert pm.n == 200
        assert pm.cell_size == pytest.approx(0.12)

    def test_empty_image_is_background_outside_pec(self):
        pm = rasterize(np.zeros((128, 128), np.uint8), SPEC, 10.0)
        assert (pm.eps[~pm.pec_mask] == SPEC.eps_background).all()

    def test_pec_mask_is_centered_disk_independent_of_image(self):
        a = rasterize(np.zeros((128, 128), np.uint8), SPEC, 10.0)
        b = rasterize(mirror_expand(annulus_mask(SPEC)), SPEC, 10.0)
        np.testing.assert_array_equal(a.pec_mask, b.pec_mask)
        x, y = a.cell_centers()
        np.testing.assert_array_equal(a.pec_mask, np.hypot(x, y) < SPEC.r_object)

    def test_full_annulus_image_fills_exactly_the_covered_cells(self):
        full = mirror_expand(annulus_mask(SPEC))
        pm = rasterize(full, SPEC, 10.0)
        # a cell is shell material exactly when the pixel containing its
        # center is a 1-pixel of the image
        x, y = pm.cell_centers()
        pitch = SPEC.r_shell / SPEC.image_size
        jj = np.floor((x + SPEC.r_shell) / pitch).astype(int)
        ii = np.floor((y + SPEC.r_shell) / pitch).astype(int)
        ok = (jj >= 0) & (jj < 128) & (ii >= 0) & (ii < 128)
        expect = np.zeros_like(pm.pec_mask)
        expect[ok] = full[ii[ok], jj[ok]] == 1
        expect &= ~pm.pec_mask
        np.testing.assert_array_equal(pm.eps == SPEC.eps_shell, expect)

    def test_monotone_in_added_pixels(self):
        rng = np.random.default_rng(4)
        q = random_shell(SPEC, 11, curve_count=4, curve_scale=0.8)
        mask = annulus_mask(SPEC)
        before = rasterize(mirror_expand(q), SPEC, 10.0).eps
        free = np.argwhere((q == 0) & (mask == 1))
        for k in rng.choice(len(free), size=10, replace=False):
            q2 = q.copy()
            q2[tuple(free[k])] = 1
            after = rasterize(mirror_expand(q2), SPEC, 10.0).eps
            assert not ((before == SPEC.eps_shell) & (after == SPEC.eps_background)).any()

    def test_shared_pixel_convention_with_quadrant(self):
        # one quadrant pixel set; the rasterized shell cells must all sit in
        # the matching physical box and its three mirror images
        q = np.zeros((64, 64), np.uint8)
        i, j = 30, 40  # radius ~ 2.2, inside the annulus
        q[i, j] = 1
        pm = rasterize(mirror_expand(q), SPEC, 20.0)
        x, y = pm.cell_centers()
        hit = pm.eps == SPEC.eps_shell
        pitch = SPEC.r_shell / 64
        in_box = (np.abs(x) >= j * pitch) & (np.abs(x) <= (j + 1) * pitch)
        in_box &= (np.abs(y) >= i * pitch) & (np.abs(y) <= (i + 1) * pitch)
        assert hit.any()
        assert not hit[~in_box].any()
