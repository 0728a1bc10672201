"""Tests for the spherical-harmonic band-energy descriptor."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from scipy.special import sph_harm_y

from conftest import make_box, make_icosphere
from fragsearch.mesh import TriangleMesh
from fragsearch.spharm import (
    BAND_COUNT,
    DESCRIPTOR_LENGTH,
    GRID_SIZE,
    PHI_NODES,
    SHELL_COUNT,
    THETA_NODES,
    sh_shape_descriptor,
    shell_band_energies,
    voxelize_surface,
)


def angular_grid():
    """The documented quadrature grid, derived independently.

    Gauss-Legendre nodes in cos(theta) crossed with uniformly spaced
    azimuths, as the shell_band_energies contract states.
    """
    x, _ = np.polynomial.legendre.leggauss(THETA_NODES)
    theta = np.arccos(x)
    phi = np.arange(PHI_NODES) * (2.0 * np.pi / PHI_NODES)
    return theta, phi


class TestShellBandEnergies:
    def test_constant_field_all_energy_in_band_zero(self):
        # f = 1: c_00 = sqrt(4 pi), so E_0 = 4 pi and nothing else
        f = np.ones((THETA_NODES, PHI_NODES))
        e = shell_band_energies(f)
        assert e.shape == (BAND_COUNT,)
        assert e[0] == pytest.approx(4.0 * np.pi, abs=1e-10)
        assert np.all(e[1:] < 1e-12)

    def test_y00_field_has_unit_energy(self):
        f = np.full((THETA_NODES, PHI_NODES), 1.0 / np.sqrt(4.0 * np.pi))
        e = shell_band_energies(f)
        assert e[0] == pytest.approx(1.0, abs=1e-12)

    def test_y32_field_all_energy_in_band_three(self):
        # Re(Y_3^2) = (Y_3^2 + Y_3^-2) / 2 puts |c|^2 = 1/4 at m = +-2,
        # so the band energy is exactly 1/2 and every other band empty.
        theta, phi = angular_grid()
        f = sph_harm_y(3, 2, theta[:, None], phi[None, :]).real
        e = shell_band_energies(f)
        assert e[3] == pytest.approx(0.5, abs=1e-9)
        others = np.delete(e, 3)
        assert np.all(others < 1e-6)

    def test_superposition(self):
        theta, phi = angular_grid()
        f = 2.0 + sph_harm_y(3, 2, theta[:, None], phi[None, :]).real
        e = shell_band_energies(f)
        assert e[0] == pytest.approx(16.0 * np.pi, rel=1e-10)
        assert e[3] == pytest.approx(0.5, abs=1e-9)
        assert np.all(np.delete(e, [0, 3]) < 1e-6)

    def test_multi_shell_rows_independent(self):
        theta, phi = angular_grid()
        y32 = sph_harm_y(3, 2, theta[:, None], phi[None, :]).real
        stack = np.stack([np.ones((THETA_NODES, PHI_NODES)),
                          y32,
                          np.zeros((THETA_NODES, PHI_NODES))])
        e = shell_band_energies(stack)
        assert e.shape == (3, BAND_COUNT)
        np.testing.assert_allclose(
            e[0], shell_band_energies(stack[0]), rtol=0, atol=0)
        np.testing.assert_allclose(
            e[1], shell_band_energies(stack[1]), rtol=0, atol=0)
        assert np.all(e[2] == 0.0)


class TestVoxelizeSurface:
    def test_frame_and_mass(self):
        center_true = np.array([3.0, -2.0, 5.0])
        mesh = make_icosphere(radius=10.0, subdivisions=3,
                              center=center_true)
        grid, center, half = voxelize_surface(
            mesh, np.random.default_rng(0))
        assert grid.shape == (GRID_SIZE, GRID_SIZE, GRID_SIZE)
        np.testing.assert_allclose(center, center_true, atol=0.05)
        # every vertex sits at radius 10, so the scale term is ~10
        assert half == pytest.approx(20.0, rel=1e-3)
        # the sphere sits well inside the grid: splatted mass survives
        # the blur and sums to ~1 (density is normalized by count)
        assert grid.sum() == pytest.approx(1.0, rel=1e-6)
        assert grid.min() >= 0.0

    def test_density_concentrated_at_surface(self):
        mesh = make_icosphere(radius=10.0, subdivisions=3)
        grid, center, half = voxelize_surface(
            mesh, np.random.default_rng(0))
        cell = 2.0 * half / GRID_SIZE
        idx = np.indices(grid.shape).reshape(3, -1).T
        pos = (idx + 0.5) * cell + (center - half)
        dist = np.linalg.norm(pos - center, axis=1)
        # the separable blur kernel reaches 4 sigma = 8 cells per axis
        # (a cube, so up to sqrt(3) * 8 diagonally), but those tails
        # are vanishing — far cells carry only numerical dust
        far = np.abs(dist - 10.0) > 12.0 * cell
        assert np.all(grid.reshape(-1)[far] <= 1e-6 * grid.max())
        near = np.abs(dist - 10.0) < 0.5 * cell
        assert grid.reshape(-1)[near].min() > 0.0

    def test_degenerate_mesh_rejected(self):
        v = np.zeros((3, 3))
        mesh = TriangleMesh(vertices=v, faces=np.array([[0, 1, 2]]))
        with pytest.raises(ValueError):
            voxelize_surface(mesh, np.random.default_rng(0))


class TestShapeDescriptor:
    def test_length_and_nonnegativity(self):
        mesh = make_icosphere(radius=10.0, subdivisions=3)
        d = sh_shape_descriptor(mesh, np.random.default_rng(1))
        assert d.shape == (DESCRIPTOR_LENGTH,)
        assert np.all(np.isfinite(d))
        assert np.all(d >= 0.0)
        assert d.sum() > 0.0

    def test_deterministic_given_seed(self):
        mesh = make_box((30.0, 18.0, 8.0))
        d1 = sh_shape_descriptor(mesh, np.random.default_rng(7))
        d2 = sh_shape_descriptor(mesh, np.random.default_rng(7))
        assert np.array_equal(d1, d2)

    def test_sphere_energy_is_degree_zero(self):
        # rotational symmetry: every shell that carries appreciable
        # energy must be dominated by the degree-0 band
        mesh = make_icosphere(radius=10.0, subdivisions=3)
        d = sh_shape_descriptor(mesh, np.random.default_rng(2))
        bands = d.reshape(SHELL_COUNT, BAND_COUNT)
        totals = bands.sum(axis=1)
        floor = 1e-6 * totals.max()
        carrying = totals > floor
        assert carrying.any()
        fractions = bands[carrying, 0] / totals[carrying]
        assert fractions.min() > 0.99
        # the excluded shells hold only smoothing-tail dust
        assert np.all(totals[~carrying] <= floor)

    def test_sphere_inner_shells_empty(self):
        # shells well inside the surface see only the underflow tails
        # of the blur (the surface sits at half the grid half-extent)
        mesh = make_icosphere(radius=10.0, subdivisions=3)
        d = sh_shape_descriptor(mesh, np.random.default_rng(2))
        bands = d.reshape(SHELL_COUNT, BAND_COUNT)
        assert bands[:4].sum() <= 1e-12 * d.sum()

    def test_rotation_invariance_within_two_percent(self):
        mesh = make_box((30.0, 18.0, 8.0))
        d0 = sh_shape_descriptor(mesh, np.random.default_rng(7))
        norm = np.abs(d0).sum()
        for rot in Rotation.from_euler("zyx", [[0.3, 0.7, 1.1],
                                               [2.1, -0.4, 0.9]]):
            rotated = TriangleMesh(
                vertices=mesh.vertices @ rot.as_matrix().T,
                faces=mesh.faces)
            dr = sh_shape_descriptor(rotated, np.random.default_rng(7))
            assert np.abs(d0 - dr).sum() <= 0.02 * norm

    def test_rotation_noise_below_shape_signal(self):
        # a rotated copy must stay far closer than a different shape
        mesh = make_box((30.0, 18.0, 8.0))
        rot = Rotation.from_euler("zyx", [0.3, 0.7, 1.1]).as_matrix()
        rotated = TriangleMesh(vertices=mesh.vertices @ rot.T,
                               faces=mesh.faces)
        other = make_box((24.0, 24.0, 8.0))
        d0 = sh_shape_descriptor(mesh, np.random.default_rng(7))
        dr = sh_shape_descriptor(rotated, np.random.default_rng(7))
        do = sh_shape_descriptor(other, np.random.default_rng(7))
        rot_dist = np.abs(d0 - dr).sum()
        shape_dist = np.abs(d0 - do).sum()
        assert rot_dist < 0.1 * shape_dist

    def test_exact_scale_invariance_power_of_two(self):
        # doubling every coordinate scales the normalization frame by
        # exactly 2 in floating point, so the descriptor is bitwise
        # identical — a strong check that scale truly cancels
        small = make_icosphere(radius=10.0, subdivisions=3)
        big = TriangleMesh(vertices=small.vertices * 2.0,
                           faces=small.faces)
        d1 = sh_shape_descriptor(small, np.random.default_rng(5))
        d2 = sh_shape_descriptor(big, np.random.default_rng(5))
        assert np.array_equal(d1, d2)

    def test_translation_invariance(self):
        mesh = make_box((30.0, 18.0, 8.0))
        moved = TriangleMesh(vertices=mesh.vertices + (40.0, -7.0, 3.0),
                             faces=mesh.faces)
        d0 = sh_shape_descriptor(mesh, np.random.default_rng(7))
        dm = sh_shape_descriptor(moved, np.random.default_rng(7))
        # translation shifts the voxel frame with the mesh; only float
        # round-off in the frame arithmetic differs
        assert np.abs(d0 - dm).sum() <= 0.02 * np.abs(d0).sum()
