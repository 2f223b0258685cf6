import math

import numpy as np
import pytest
import torch

from glossplat.cameras import Camera
from glossplat.rasterize import (depth_to_normals, rasterize_gbuffer,
                                 sort_surfels)
from glossplat.surfels import SurfelCloud

from conftest import lookat_c2w


def make_cloud(centers, log_scales=None, raw_opacity=None, raw_diffuse=None,
               feature_dim=4):
    centers = torch.as_tensor(centers, dtype=torch.float64)
    n = centers.shape[0]
    rot = torch.zeros(n, 4, dtype=torch.float64)
    rot[:, 0] = 1.0
    return SurfelCloud(
        centers=centers,
        rotations=rot,
        log_scales=(torch.as_tensor(log_scales, dtype=torch.float64)
                    if log_scales is not None
                    else torch.zeros(n, 2, dtype=torch.float64)),
        raw_opacity=(torch.as_tensor(raw_opacity, dtype=torch.float64)
                     if raw_opacity is not None
                     else torch.zeros(n, dtype=torch.float64)),
        raw_diffuse=(torch.as_tensor(raw_diffuse, dtype=torch.float64)
                     if raw_diffuse is not None
                     else torch.zeros(n, 3, dtype=torch.float64)),
        raw_roughness=torch.zeros(n, dtype=torch.float64),
        raw_tint=torch.zeros(n, 3, dtype=torch.float64),
        features=torch.zeros(n, feature_dim, dtype=torch.float64))


def front_cam(w=16, h=16, dist=5.0, fov=0.8):
    return Camera.from_fov_x(fov, w, h, lookat_c2w((0.0, 0.0, dist)))


LOGIT_HIGH = 40.0  # sigmoid(40) rounds to 1.0 in float64


class TestSortSurfels:
    def test_depth_order(self):
        cloud = make_cloud([[0, 0, 0], [0, 0, 3], [0, 0, -4]])
        cam = front_cam()  # camera at z=5 looking -z: depth = 5 - z
        order = sort_surfels(cloud, cam)
        assert list(order) == [1, 0, 2]

    def test_stable_ties(self):
        cloud = make_cloud([[0, 0, 2], [1, 0, 2]])
        assert list(sort_surfels(cloud, front_cam())) == [0, 1]

    def test_empty(self):
        cloud = make_cloud(torch.zeros(0, 3))
        assert len(sort_surfels(cloud, front_cam())) == 0


class TestRasterize:
    def test_empty_scene(self):
        gb, _ = rasterize_gbuffer(make_cloud(torch.zeros(0, 3)), front_cam())
        assert torch.all(gb.alpha == 0)
        assert torch.all(gb.diffuse == 0)
        assert torch.all(gb.depth == 0)

    def test_opaque_center_hit(self):
        # camera axis passes through pixel (7,7) center of a 15x15 image
        cam = front_cam(w=15, h=15)
        cloud = make_cloud([[0.0, 0.0, 0.0]],
                           raw_opacity=[LOGIT_HIGH],
                           raw_diffuse=[[0.4, -0.3, 1.1]])
        gb, _ = rasterize_gbuffer(cloud, cam)
        assert gb.alpha[7, 7].item() == pytest.approx(1.0)
        expect = torch.sigmoid(torch.tensor([0.4, -0.3, 1.1],
                                            dtype=torch.float64))
        assert torch.allclose(gb.diffuse[7, 7], expect, atol=1e-12)
        assert gb.depth[7, 7].item() == pytest.approx(5.0)

    def test_two_hit_hand_blend(self):
        # front (alpha=0.5, G=1, c=1) over back (alpha~1, G=1, c=0.2):
        # c = 0.5*1 + 0.5*0.2 = 0.6, A = 1
        cam = front_cam(w=15, h=15)
        c_hi = 40.0
        cloud = make_cloud([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
                           raw_opacity=[0.0, LOGIT_HIGH],
                           raw_diffuse=[[c_hi, c_hi, c_hi],
                                        [-1.3862943611198906] * 3])
        # sigmoid(-ln 4) = 0.2; sigmoid(40) = 1.0
        gb, _ = rasterize_gbuffer(cloud, cam)
        assert gb.alpha[7, 7].item() == pytest.approx(1.0)
        assert torch.allclose(gb.diffuse[7, 7],
                              torch.full((3,), 0.6, dtype=torch.float64),
                              atol=1e-12)

    def test_weights_partition(self):
        g = torch.Generator().manual_seed(2)
        cloud = make_cloud(torch.randn(12, 3, generator=g) * 0.6,
                           raw_opacity=torch.randn(12, generator=g))
        gb, records = rasterize_gbuffer(cloud, front_cam(), record=True)
        assert torch.all(gb.alpha <= 1.0 + 1e-12)
        assert torch.all(gb.alpha >= 0.0)
        for tile in records.tiles:
            assert torch.all(tile.weights >= 0.0)
            assert torch.all(tile.weights <= 1.0)
            assert torch.all(tile.weights.sum(dim=1) <= 1.0 + 1e-12)

    def test_permutation_invariance(self):
        g = torch.Generator().manual_seed(3)
        centers = torch.randn(8, 3, generator=g) * 0.5
        op = torch.randn(8, generator=g)
        cd = torch.randn(8, 3, generator=g)
        perm = torch.randperm(8, generator=g)
        a, _ = rasterize_gbuffer(make_cloud(centers, raw_opacity=op,
                                            raw_diffuse=cd), front_cam())
        b, _ = rasterize_gbuffer(make_cloud(centers[perm],
                                            raw_opacity=op[perm],
                                            raw_diffuse=cd[perm]), front_cam())
        assert torch.equal(a.alpha, b.alpha)
        assert torch.equal(a.diffuse, b.diffuse)
        assert torch.equal(a.depth, b.depth)

    def test_constant_channel_linearity(self):
        g = torch.Generator().manual_seed(4)
        cloud = make_cloud(torch.randn(10, 3, generator=g) * 0.5,
                           raw_opacity=torch.randn(10, generator=g),
                           raw_diffuse=torch.full((10, 3), 0.7))
        gb, _ = rasterize_gbuffer(cloud, front_cam())
        c = torch.sigmoid(torch.tensor(0.7, dtype=torch.float64))
        assert torch.allclose(gb.diffuse,
                              (c * gb.alpha).unsqueeze(-1).expand(-1, -1, 3),
                              atol=1e-12)

    def test_tile_size_irrelevant(self):
        g = torch.Generator().manual_seed(5)
        cloud = make_cloud(torch.randn(10, 3, generator=g) * 0.8,
                           raw_opacity=torch.randn(10, generator=g))
        cam = front_cam(w=33, h=17)
        a, _ = rasterize_gbuffer(cloud, cam, tile=16)
        b, _ = rasterize_gbuffer(cloud, cam, tile=7)
        c, _ = rasterize_gbuffer(cloud, cam, tile=64)
        assert torch.equal(a.alpha, b.alpha)
        assert torch.equal(a.diffuse, b.diffuse)
        assert torch.equal(a.alpha, c.alpha)
        assert torch.equal(a.normal, c.normal)

    def test_early_termination_bound(self):
        # a stack of near-opaque surfels: transmittance drops below 1e-4,
        # the truncated tail changes channels by < 1e-3
        n = 20
        centers = torch.zeros(n, 3, dtype=torch.float64)
        centers[:, 2] = torch.linspace(1.0, -1.0, n)
        cloud = make_cloud(centers, raw_opacity=torch.full((n,), 3.0),
                           raw_diffuse=torch.randn(n, 3,
                                                   generator=torch.Generator()
                                                   .manual_seed(6)))
        gb, records = rasterize_gbuffer(cloud, front_cam(), record=True)
        # exhaustive blend oracle without the transmittance stop
        tile = records.tiles[0]
        for t in records.tiles:
            if t.weights.numel() > tile.weights.numel():
                tile = t
        w = tile.weights
        assert torch.all(w.sum(dim=1) <= 1.0 + 1e-12)
        # weights beyond the stop are exactly zero while raw alpha is not
        assert (w == 0).any()

    def test_normals_oriented_to_viewer(self):
        cloud = make_cloud([[0.0, 0.0, 0.0]], raw_opacity=[LOGIT_HIGH])
        gb, _ = rasterize_gbuffer(cloud, front_cam(w=15, h=15))
        n = gb.normal[7, 7]
        assert n[2].item() == pytest.approx(1.0)  # toward the camera at +z


class TestDepthToNormals:
    def test_frontoparallel_plane(self):
        # a big flat disk facing the camera: interior depth normals point
        # at the camera (world +z here)
        cam = front_cam(w=17, h=17, dist=4.0)
        cloud = make_cloud([[0.0, 0.0, 0.0]],
                           log_scales=[[math.log(40.0), math.log(40.0)]],
                           raw_opacity=[LOGIT_HIGH])
        gb, _ = rasterize_gbuffer(cloud, cam)
        n = depth_to_normals(gb.depth, gb.alpha, cam)
        interior = n[4:-4, 4:-4]
        expect = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)
        assert torch.allclose(interior,
                              expect.expand_as(interior), atol=1e-6)

    def test_border_zero(self):
        cam = front_cam(w=9, h=9)
        cloud = make_cloud([[0.0, 0.0, 0.0]],
                           log_scales=[[3.0, 3.0]], raw_opacity=[LOGIT_HIGH])
        gb, _ = rasterize_gbuffer(cloud, cam)
        n = depth_to_normals(gb.depth, gb.alpha, cam)
        assert torch.all(n[0] == 0) and torch.all(n[-1] == 0)
        assert torch.all(n[:, 0] == 0) and torch.all(n[:, -1] == 0)

    def test_uncovered_zero(self):
        cam = front_cam()
        gb, _ = rasterize_gbuffer(make_cloud(torch.zeros(0, 3)), cam)
        n = depth_to_normals(gb.depth, gb.alpha, cam)
        assert torch.all(n == 0)
