"""Geometric analysis: hulls, bounding boxes, curvature, thickness, color."""

from .color import lab_to_srgb, srgb_to_lab
from .curvature import CurvatureField, mixed_voronoi_areas, principal_curvatures
from .hull import BoundingBox, convex_hull, minimal_bounding_box
from .measures import (
    compactness,
    mesh_volume,
    orientation_consistent,
    sample_surface_points,
)
from .sdf import TriangleBVH, shape_diameter

__all__ = [
    "BoundingBox",
    "CurvatureField",
    "TriangleBVH",
    "compactness",
    "convex_hull",
    "lab_to_srgb",
    "mesh_volume",
    "minimal_bounding_box",
    "mixed_voronoi_areas",
    "orientation_consistent",
    "principal_curvatures",
    "sample_surface_points",
    "shape_diameter",
    "srgb_to_lab",
]
