"""Synthetic low-orbit scene simulation and dataset generation."""

from .orbit import MU_EARTH_KM3_S2, R_EARTH_KM, OrbitConfig, orbital_period, propagate
from .camera import CameraModel, project
from .render import Annotation, SatelliteState, annotate, render_frame
from .dataset import GenConfig, generate_dataset, load_labels, read_ppm, write_ppm

__all__ = [
    "MU_EARTH_KM3_S2", "R_EARTH_KM", "OrbitConfig", "orbital_period", "propagate",
    "CameraModel", "project",
    "Annotation", "SatelliteState", "annotate", "render_frame",
    "GenConfig", "generate_dataset", "load_labels", "read_ppm", "write_ppm",
]
