"""Lifting six camera feature maps onto the occupancy grid by averaging over hit views.

python3 demos/04_average_lift.py
"""
import numpy as np

from densocc.geometry import CameraModel, GridSpec, RigidTransform
from densocc.projection import FeatureMap, average_lift, hit_views

# camera axes: x right, y down, z forward. Forward = ego +x.
forward = np.array([[0.0, -1, 0], [0, 0, -1], [1, 0, 0]])
cams = []
for yaw in np.deg2rad(np.arange(0, 360, 60)):
    r = forward @ RigidTransform.from_yaw(yaw).rotation.T
    cams.append(CameraModel(400, 400, 400, 225, 800, 450, RigidTransform(r, (0, 0, -1.5))))

# feature of camera i is a constant i + 1 plus a horizontal ramp, 8x downsampled
fms = []
for i in range(6):
    ramp = np.linspace(0, 1, 100)[None, :, None]
    fms.append(FeatureMap(np.broadcast_to(i + 1 + ramp, (57, 100, 1)).copy(), stride=8))

grid = GridSpec((-20, -20, -2), 1.0, (40, 40, 6))
vol = average_lift(grid, fms, cams, RigidTransform())
n_hits = np.array([len(hit_views(p, cams, RigidTransform())) for p in grid.centers()])
print("voxels seen by 0/1/2 cameras:", np.bincount(n_hits, minlength=3)[:3])
print("lifted feature range", vol.values.min().round(3), vol.values.max().round(3))

# slice through the camera height: which camera dominates each column
mid = vol.values[:, :, 3, 0]
for row in mid[::5, ::3]:
    print(" ".join(f"{v:3.1f}" for v in row))
