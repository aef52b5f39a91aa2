"""
Utils Package
Shared camera geometry and report/CSV helpers for EdgeNav
"""

from .geometry import Box, Camera, box_iou, cuboid_corners, project_cuboid, wrap_angle
from .helpers import (
    # Report utilities
    create_csv_content,
    create_progress_bar,
    format_float,
    format_table,
    read_csv_rows,
    # Safe conversion utilities
    safe_str,
    # File utilities
    require_file,
    write_bytes_atomic,
    write_text_atomic,
)

__version__ = "1.0.0"

__all__ = [
    # From geometry
    "Box",
    "Camera",
    "box_iou",
    "cuboid_corners",
    "project_cuboid",
    "wrap_angle",
    # From helpers
    "create_csv_content",
    "create_progress_bar",
    "format_float",
    "format_table",
    "read_csv_rows",
    "require_file",
    "safe_str",
    "write_bytes_atomic",
    "write_text_atomic",
]
