"""Tri-state occupancy labels (frustum and voxel space) from LiDAR scans, plus the
loss, gating and sampling math used to supervise occupancy heads."""

from .errors import CalibrationError, ConfigError, FormatError, OccugridError, UnsupportedSpaceError
from .frustum_labels import IndexMap, build_index_map, frustum_labels_from_points, generate_frustum_labels
from .geometry import (Calibration, Discretization, FrustumGridSpec, PointCloud, VoxelGridSpec, bin_to_depth,
                       clip_segment_to_grid, continuous_bin, depth_to_bin, lidar_to_camera, parse_kitti_calib,
                       project_to_image, voxel_index_of, voxel_indices)
from .io_formats import export_ply, read_lidar_bin, read_occ3, write_lidar_bin, write_occ3
from .labels import FREE, OCCUPIED, UNKNOWN, OccupancyLabelGrid, Space
from .occupancy_math import (LossConfig, focal_loss_masked, gate_features, gate_features_backward,
                             sigmoid_field, total_loss)
from .sampler import sample_frustum_to_voxel, voxel_to_frustum_coords
from .voxel_labels import carve_free_space, generate_voxel_labels, traverse_ray, voxelize_points

__version__ = "0.1.0"
