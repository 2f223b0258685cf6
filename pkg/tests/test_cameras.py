import math

import numpy as np
import pytest
import torch

from glossplat.cameras import Camera

from conftest import lookat_c2w


def simple_cam(w=8, h=8, fov=0.8, dist=4.0):
    return Camera.from_fov_x(fov, w, h, lookat_c2w((0.0, 0.0, dist)))


class TestIntrinsics:
    def test_fov_formula(self):
        cam = Camera.from_fov_x(0.6, 100, 80, np.eye(4))
        assert cam.fx == pytest.approx(100.0 / (2.0 * math.tan(0.3)))
        assert cam.fx == cam.fy
        assert cam.cx == 50.0 and cam.cy == 40.0

    def test_validation(self):
        bad = np.eye(4)
        bad[:3, :3] *= 2.0  # not a rotation
        with pytest.raises(ValueError):
            Camera(fx=10, fy=10, cx=4, cy=4, width=8, height=8, c2w=bad)
        with pytest.raises(ValueError):
            Camera(fx=-1, fy=10, cx=4, cy=4, width=8, height=8, c2w=np.eye(4))


class TestRays:
    def test_center_ray_looks_forward(self):
        cam = simple_cam(w=9, h=9)
        origin, dirs = cam.rays()
        assert torch.allclose(origin,
                              torch.tensor([0.0, 0.0, 4.0],
                                           dtype=torch.float64))
        # pixel (4,4) center sits at (cx, cy) = (4.5, 4.5): the optical axis
        center = dirs[4, 4]
        assert torch.allclose(center,
                              torch.tensor([0.0, 0.0, -1.0],
                                           dtype=torch.float64), atol=1e-12)

    def test_unit_directions(self):
        _, dirs = simple_cam().rays()
        assert torch.allclose(dirs.norm(dim=-1),
                              torch.ones(8, 8, dtype=torch.float64),
                              atol=1e-12)

    def test_project_roundtrip(self):
        cam = simple_cam(w=16, h=16)
        origin, dirs = cam.rays()
        pts = (origin + 3.0 * dirs.reshape(-1, 3)).numpy()
        px = cam.project(pts).reshape(16, 16, 2)
        ii, jj = np.meshgrid(np.arange(16), np.arange(16), indexing="xy")
        expect = np.stack([ii + 0.5, jj + 0.5], axis=-1)
        assert np.allclose(px, expect, atol=1e-9)

    def test_view_depths(self):
        cam = simple_cam(dist=5.0)
        pts = torch.tensor([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]],
                           dtype=torch.float64)
        d = cam.view_depths(pts)
        assert d[0].item() == pytest.approx(5.0)
        assert d[1].item() == pytest.approx(3.0)


class TestRotated:
    def test_rotated_camera_rays(self):
        cam = simple_cam()
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        cam2 = cam.rotated(rot)
        o1, d1 = cam.rays()
        o2, d2 = cam2.rays()
        R = torch.from_numpy(rot)
        assert torch.allclose(o2, o1 @ R.T, atol=1e-12)
        assert torch.allclose(d2, d1 @ R.T, atol=1e-12)
