import csv
import io
import math
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conebeam.geometry import make_circular
from conebeam.phantoms import (
    analytic_ellipsoid_sinogram, analytic_sphere_sinogram, perturbed_shepp_logan,
    perturbed_shepp_logan_table, shepp_logan_3d, shepp_logan_sinogram, shepp_logan_table,
    sphere_phantom,
)


def _table_rows():
    text = resources.files("conebeam.data").joinpath("shepp_logan_kak_slaney.csv").read_text()
    return list(csv.DictReader(l for l in io.StringIO(text) if not l.startswith("#")))


def _inside(row, x, y, z):
    """Point membership straight from a CSV row, independent of the Ellipsoid class."""
    phi = math.radians(float(row["euler_z_deg"]))
    dx, dy, dz = x - float(row["center_x"]), y - float(row["center_y"]), z - float(row["center_z"])
    lx = math.cos(phi) * dx + math.sin(phi) * dy
    ly = -math.sin(phi) * dx + math.cos(phi) * dy
    return (lx / float(row["axis_x"])) ** 2 + (ly / float(row["axis_y"])) ** 2 \
        + (dz / float(row["axis_z"])) ** 2 <= 1.0


def test_table_has_ten_ellipsoids():
    table = shepp_logan_table()
    assert len(table) == 10
    assert table[0].density == 2.0 and table[1].density == -0.98


def test_centre_voxel_is_sum_of_containing_densities():
    rows = _table_rows()
    expected = sum(float(r["density"]) for r in rows if _inside(r, 0.0, 0.0, 0.0))
    assert expected == pytest.approx(1.02)
    vol = shepp_logan_3d(33, 33, 33, dtype=np.float64)
    assert vol.data[16, 16, 16] == pytest.approx(expected, abs=1e-12)


def test_random_voxels_match_membership_oracle(rng):
    n = 24
    vol = shepp_logan_3d(n, n, n, dtype=np.float64).data
    rows = _table_rows()
    for _ in range(200):
        i, j, k = rng.integers(n, size=3)
        x, y, z = ((np.array([k, j, i]) - (n - 1) / 2) / (n / 2)).tolist()
        expected = max(0.0, sum(float(r["density"]) for r in rows if _inside(r, x, y, z)))
        assert vol[i, j, k] == pytest.approx(expected, abs=1e-12)


def test_corner_voxel_is_zero():
    assert shepp_logan_3d(16, 16, 16).data[0, 0, 0] == 0.0


def test_x_mirror_changes_only_asymmetric_support():
    n = 32
    vol = shepp_logan_3d(n, n, n, dtype=np.float64).data
    flipped = vol[:, :, ::-1]
    rows = _table_rows()
    asymmetric = [r for r in rows if float(r["center_x"]) != 0 or float(r["euler_z_deg"]) % 180 != 0]
    assert {r["label"] for r in asymmetric} == {"c", "d", "g", "h", "i"}
    coords = (np.arange(n) - (n - 1) / 2) / (n / 2)
    for i, j, k in zip(*np.nonzero(vol != flipped)):
        x, y, z = coords[k], coords[j], coords[i]
        assert any(_inside(r, x, y, z) or _inside(r, -x, y, z) for r in asymmetric)
    assert (vol != flipped).any()


def test_small_dims_rejected():
    with pytest.raises(ValueError, match=">= 8"):
        shepp_logan_3d(7, 16, 16)


def test_phantom_values_finite_nonnegative():
    vol = shepp_logan_3d(20, 18, 16).data
    assert np.isfinite(vol).all() and (vol >= 0).all()


def test_sphere_covering_domain_is_uniform():
    vol = sphere_phantom((0, 0, 0), 2.0, 3.5, 8, 8, 8)
    assert (vol.data == 3.5).all()


def test_sphere_value_zero_is_empty():
    assert not sphere_phantom((0.1, 0, 0), 0.5, 0.0, 8, 8, 8).data.any()


def test_sphere_volume_ratio():
    vol = sphere_phantom((0, 0, 0), 0.25, 1.0, 64, 64, 64).data
    expected = (4.0 / 3.0 * math.pi * 0.25**3) / 8.0
    assert np.count_nonzero(vol) / vol.size == pytest.approx(expected, rel=0.05)


@pytest.mark.parametrize("center, radius", [((1.2, 0, 0), 0.1), ((0, 0, 0), 0.0), ((0, 0), 0.5)])
def test_sphere_rejects_bad_input(center, radius):
    with pytest.raises(ValueError):
        sphere_phantom(center, radius, 1.0, 8, 8, 8)


@pytest.fixture(scope="module")
def axis_ray_geom():
    # odd detector: the central pixel ray of view 0 runs along the x axis through the origin
    return make_circular(sod=200.0, sdd=400.0, nu=9, nv=9, du=1.0, dv=1.0, num_views=4,
                         nx=32, ny=32, nz=32, voxel_size=1.0)


def _central(sino):
    return sino.data[0, 4, 4]


def test_chord_through_centre(axis_ray_geom):
    r = 0.5  # normalised; 16 mm per unit here
    assert _central(analytic_sphere_sinogram(axis_ray_geom, (0, 0, 0), r, 1.5)) \
        == pytest.approx(2 * r * 16 * 1.5, rel=1e-12)


def test_chord_at_r_over_root_two(axis_ray_geom):
    r = 0.5
    value = _central(analytic_sphere_sinogram(axis_ray_geom, (0, r / math.sqrt(2), 0), r, 2.0))
    assert value == pytest.approx(math.sqrt(2) * r * 16 * 2.0, rel=1e-12)


def test_chord_misses(axis_ray_geom):
    assert _central(analytic_sphere_sinogram(axis_ray_geom, (0, 0, 0.51), 0.5, 1.0)) == 0.0


def test_ellipsoid_sinogram_reduces_to_sphere(axis_ray_geom):
    from conebeam.phantoms import Ellipsoid
    ball = Ellipsoid((0.1, -0.2, 0.05), (0.4, 0.4, 0.4), 0.7, 1.3)
    np.testing.assert_allclose(
        analytic_ellipsoid_sinogram(axis_ray_geom, [ball]).data,
        analytic_sphere_sinogram(axis_ray_geom, ball.center, 0.4, 1.3).data, atol=1e-9)


def test_shepp_logan_sinogram_is_nonnegative(axis_ray_geom):
    sino = shepp_logan_sinogram(axis_ray_geom).data
    assert (sino >= -1e-9).all() and sino.max() > 0


def test_perturbed_with_zero_jitter_is_the_standard_phantom():
    np.testing.assert_array_equal(perturbed_shepp_logan(16, 16, 16, seed=5, jitter=0.0).data,
                                  shepp_logan_3d(16, 16, 16).data)


@given(st.integers(0, 10**6))
def test_perturbed_tables_are_seeded(seed):
    a = perturbed_shepp_logan_table(seed)
    assert a == perturbed_shepp_logan_table(seed)
    assert a != perturbed_shepp_logan_table(seed + 1)
    assert all(min(e.semi_axes) > 0 for e in a)


def test_perturbed_jitter_range():
    with pytest.raises(ValueError, match="jitter"):
        perturbed_shepp_logan_table(0, 0.2)
