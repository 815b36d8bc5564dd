"""
twinmap: OpenStreetMap and LiDAR to OpenDRIVE road networks and meshes.

This package provides tools for:
- OSM ingestion and road graph construction
- DEM / point cloud handling and ground extraction
- ICP fine-tuning of road geometry against LiDAR
- OpenDRIVE 1.4 modelling, conversion and validation
- Parallel road and terrain mesh generation with OBJ export
"""

__version__ = "0.1.0"

from .geo_ingest import build_road_graph, parse_osm, project, unproject
from .terrain import load_dem, load_xyz, rasterize_ground, sample_height
from .registration import RigidTransform2D, fine_tune_graph, icp_align, solve_rigid_2d
from .odr_model import deserialize, serialize, validate
from .converter import ConversionConfig, convert
from .meshgen import TessellationParams, export_obj, generate_all

__all__ = [
    "parse_osm",
    "project",
    "unproject",
    "build_road_graph",
    "load_dem",
    "load_xyz",
    "rasterize_ground",
    "sample_height",
    "RigidTransform2D",
    "solve_rigid_2d",
    "icp_align",
    "fine_tune_graph",
    "serialize",
    "deserialize",
    "validate",
    "ConversionConfig",
    "convert",
    "TessellationParams",
    "generate_all",
    "export_obj",
]
