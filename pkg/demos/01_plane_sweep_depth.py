"""Plane-sweep depth estimation, end to end on a synthetic scene.

Two cameras observe a textured plane. We sweep depth hypotheses, warp the
neighbor view onto each, correlate, and read depth back with a softmax
over planes.

Texture frequency matters: gratings much finer than the inter-plane
parallax discriminate hypotheses sharply but decorrelate even the two
hypotheses bracketing an off-grid depth, while coarser gratings let the
softmax interpolate between planes. The demo shows both regimes.
"""

import numpy as np

from sparsesplat import (CameraView, FeatureMap, Intrinsics, LocalGroup, Pose,
                         build_cost_volume, depth_from_volume, depth_planes,
                         look_at)

SIZE = 64
intr = Intrinsics(fx=120.0, fy=120.0, cx=(SIZE - 1) / 2, cy=(SIZE - 1) / 2,
                  width=SIZE, height=SIZE)
planes = depth_planes(1.0, 100.0, 32)
spacing = float(planes.values[1] - planes.values[0])
print(f"sweeping {planes.count} planes over [{planes.near}, {planes.far}], "
      f"spacing {spacing:.2f}")


def grating_features(camera, plane_z, wavelength_scale):
    """Project sin/cos gratings living on the plane z = plane_z."""
    k = camera.intrinsics
    ys, xs = np.meshgrid(np.arange(k.height, dtype=float),
                         np.arange(k.width, dtype=float), indexing="ij")
    origin = camera.pose.camera_center
    dirs = np.stack([(xs - k.cx) / k.fx, (ys - k.cy) / k.fy,
                     np.ones_like(xs)], axis=-1) @ camera.pose.rotation
    t = (plane_z - origin[2]) / dirs[..., 2]
    px = origin[0] + t * dirs[..., 0]
    py = origin[1] + t * dirs[..., 1]
    channels = []
    for kx, ky in [(12.6, 0.0), (0.0, 15.3), (8.9, 8.9), (6.9, -9.1)]:
        phase = (kx * px + ky * py) / wavelength_scale
        channels += [np.sin(phase), np.cos(phase)]
    return FeatureMap(data=3.0 * np.stack(channels), view_index=camera.index)


def recover(plane_z, wavelength_scale):
    cam_ref = CameraView(intrinsics=intr, pose=Pose.identity(), index=0)
    cam_nbr = CameraView(intrinsics=intr,
                         pose=look_at([0.6, 0.3, 0.0], [0.0, 0.0, plane_z]),
                         index=1)
    feats = [grating_features(cam_ref, plane_z, wavelength_scale),
             grating_features(cam_nbr, plane_z, wavelength_scale)]
    group = LocalGroup(neighbors=((1,), (0,)), k=1)
    volume = build_cost_volume(0, feats, group, planes, [cam_ref, cam_nbr])
    depth_map = depth_from_volume(volume)
    # Score where the warp at the true depth lands inside the neighbor.
    nearest = int(np.argmin(np.abs(planes.values - plane_z)))
    overlap = volume.validity[nearest] > 0
    overlap[:4], overlap[-4:], overlap[:, :4], overlap[:, -4:] = 0, 0, 0, 0
    err = np.abs(depth_map.depth - plane_z)[overlap]
    frac = float(np.mean(err < 0.5 * spacing))
    print(f"  truth z={plane_z:6.2f}, wavelengths x{wavelength_scale:.0f}: "
          f"median error {np.median(err):5.3f}, "
          f"{100 * frac:5.1f}% of pixels within half a plane spacing")


print("truth exactly on a depth hypothesis (fine texture discriminates):")
recover(float(planes.values[2]), wavelength_scale=1.0)
recover(float(planes.values[4]), wavelength_scale=1.0)

print("truth between hypotheses (coarse texture lets softmax interpolate):")
recover(float(0.5 * (planes.values[1] + planes.values[2])), wavelength_scale=3.0)
