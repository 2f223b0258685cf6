import numpy as np
import torch

from glossplat.cubemap import (all_texel_dirs, cube_to_equirect,
                               dir_to_face_ab_torch, dir_to_spherical,
                               equirect_dirs, equirect_to_cube,
                               face_ab_to_dir, face_texel_dirs,
                               rotate_cubemap_90, sample_cubemap,
                               sample_equirect, spherical_to_dir)


def rand_unit_dirs(n, seed=0):
    g = torch.Generator().manual_seed(seed)
    d = torch.randn(n, 3, generator=g, dtype=torch.float64)
    return d / d.norm(dim=-1, keepdim=True)


class TestFaceGeometry:
    def test_face_centers(self):
        a = np.zeros(6)
        d = face_ab_to_dir(np.arange(6), a, a)
        expected = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                             [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)
        assert np.allclose(d, expected)

    def test_texel_dirs_unit(self):
        d = all_texel_dirs(8)
        assert d.shape == (6, 8, 8, 3)
        assert np.allclose(np.linalg.norm(d, axis=-1), 1.0)

    def test_face_major_axis(self):
        # every texel of a face keeps that face's axis dominant
        for f, (axis, sign) in enumerate([(0, 1), (0, -1), (1, 1),
                                          (1, -1), (2, 1), (2, -1)]):
            d = face_texel_dirs(f, 6)
            comp = d[..., axis] * sign
            assert (comp >= np.abs(d).max(axis=-1) - 1e-12).all()

    def test_dir_face_roundtrip(self):
        d = rand_unit_dirs(500)
        face, a, b = dir_to_face_ab_torch(d)
        back = face_ab_to_dir(face.numpy(), a.numpy(), b.numpy())
        back /= np.linalg.norm(back, axis=-1, keepdims=True)
        assert np.allclose(back, d.numpy(), atol=1e-12)


class TestSampleCubemap:
    def test_texel_center_exact(self):
        g = torch.Generator().manual_seed(1)
        faces = torch.rand(6, 4, 4, 3, generator=g, dtype=torch.float64)
        dirs = torch.from_numpy(all_texel_dirs(4)).reshape(-1, 3)
        got = sample_cubemap(faces, dirs).reshape(6, 4, 4, 3)
        assert torch.allclose(got, faces, atol=1e-12)

    def test_constant_map(self):
        faces = torch.full((6, 8, 8, 2), 0.7, dtype=torch.float64)
        got = sample_cubemap(faces, rand_unit_dirs(100))
        assert torch.allclose(got, torch.full((100, 2), 0.7, dtype=torch.float64))

    def test_res_one(self):
        faces = torch.arange(6, dtype=torch.float64).reshape(6, 1, 1, 1)
        d = torch.tensor([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0]], dtype=torch.float64)
        got = sample_cubemap(faces, d)
        assert got[0, 0] == 4.0 and got[1, 0] == 1.0

    def test_grad_flows_to_faces(self):
        faces = torch.rand(6, 4, 4, 1, dtype=torch.float64, requires_grad=True)
        out = sample_cubemap(faces, rand_unit_dirs(20)).sum()
        out.backward()
        assert faces.grad is not None and faces.grad.abs().sum() > 0
        # bilinear weights of each sample sum to 1: d/dfaces of the sum
        # distributes a total mass of one per sample
        assert abs(faces.grad.sum().item() - 20.0) < 1e-9

    def test_unnormalized_dirs_equal(self):
        faces = torch.rand(6, 8, 8, 3, dtype=torch.float64)
        d = rand_unit_dirs(50, seed=3)
        assert torch.allclose(sample_cubemap(faces, d),
                              sample_cubemap(faces, 2.5 * d))


class TestSpherical:
    def test_examples(self):
        theta, phi = dir_to_spherical(np.array([0.0, 0.0, 1.0]))
        assert abs(theta) < 1e-12
        theta, phi = dir_to_spherical(np.array([1.0, 0.0, 0.0]))
        assert abs(theta - np.pi / 2) < 1e-12 and abs(phi) < 1e-12
        theta, phi = dir_to_spherical(np.array([0.0, -1.0, 0.0]))
        assert abs(theta - np.pi / 2) < 1e-12 and abs(phi + np.pi / 2) < 1e-12

    def test_roundtrip(self):
        d = rand_unit_dirs(200, seed=2).numpy()
        theta, phi = dir_to_spherical(d)
        assert np.allclose(spherical_to_dir(theta, phi), d, atol=1e-12)

    def test_torch_matches_numpy(self):
        d = rand_unit_dirs(50, seed=4)
        tt, tp = dir_to_spherical(d)
        nt, np_ = dir_to_spherical(d.numpy())
        assert np.allclose(tt.numpy(), nt) and np.allclose(tp.numpy(), np_)


class TestEquirect:
    def test_dirs_unit(self):
        d = equirect_dirs(16, 32)
        assert d.shape == (16, 32, 3)
        assert np.allclose(np.linalg.norm(d, axis=-1), 1.0)

    def test_sample_pixel_centers_exact(self):
        g = torch.Generator().manual_seed(5)
        grid = torch.rand(8, 16, 3, generator=g, dtype=torch.float64)
        d = equirect_dirs(8, 16)
        theta, phi = dir_to_spherical(torch.from_numpy(d))
        got = sample_equirect(grid, theta, phi)
        assert torch.allclose(got, grid, atol=1e-12)

    def test_phi_wraps(self):
        grid = torch.rand(8, 16, 1, dtype=torch.float64)
        phi = torch.tensor([3.0], dtype=torch.float64)
        theta = torch.tensor([1.0], dtype=torch.float64)
        a = sample_equirect(grid, theta, phi)
        b = sample_equirect(grid, theta, phi - 2.0 * np.pi)
        assert torch.allclose(a, b, atol=1e-9)

    def test_constant_roundtrip(self):
        eq = torch.full((16, 32, 3), 1.3, dtype=torch.float64)
        cube = equirect_to_cube(eq, 8)
        assert torch.allclose(cube, torch.full((6, 8, 8, 3), 1.3,
                                               dtype=torch.float64))
        back = cube_to_equirect(cube, 16, 32)
        assert torch.allclose(back, eq)

    def test_smooth_roundtrip(self):
        # a smooth directional function survives cube->equirect->cube resampling
        dirs = all_texel_dirs(16)
        cube = torch.from_numpy(0.5 + 0.4 * dirs[..., 2:] + 0.2 * dirs[..., :1])
        eq = cube_to_equirect(cube, 64, 128)
        back = equirect_to_cube(eq, 16)
        assert (back - cube).abs().max() < 1e-2


ROT_Z = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


class TestRotate:
    def test_identity(self):
        faces = torch.rand(6, 8, 8, 3, dtype=torch.float64)
        assert torch.equal(rotate_cubemap_90(faces, np.eye(3)), faces)

    def test_four_turns_identity(self):
        faces = torch.rand(6, 8, 8, 3, dtype=torch.float64)
        out = faces
        for _ in range(4):
            out = rotate_cubemap_90(out, ROT_Z)
        assert torch.equal(out, faces)

    def test_rotated_lookup(self):
        # output at direction R d equals input at direction d, exactly at texels
        faces = torch.rand(6, 8, 8, 3, dtype=torch.float64)
        rot = rotate_cubemap_90(faces, ROT_Z)
        dirs = all_texel_dirs(8).reshape(-1, 3)
        src = sample_cubemap(faces, torch.from_numpy(dirs))
        dst = sample_cubemap(rot, torch.from_numpy(dirs @ ROT_Z.T))
        assert torch.allclose(dst, src, atol=1e-12)

    def test_permutation_preserves_values(self):
        faces = torch.arange(6 * 4 * 4, dtype=torch.float64).reshape(6, 4, 4, 1)
        rot = rotate_cubemap_90(faces, ROT_Z)
        assert torch.equal(torch.sort(rot.flatten()).values, faces.flatten())
