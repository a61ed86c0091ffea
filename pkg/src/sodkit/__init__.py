"""Desk-scale space-object-detection toolkit.

Detection models (conv trunk with optional transformer branch and
squeeze-excite recalibration) on a minimal autograd engine, a synthetic
low-orbit dataset generator, detection metrics, a training loop, and an
inference benchmark harness.
"""

from .tensor import Tensor, finite_diff_check
from .models import Model, ModelSpec, build

__version__ = "0.1.0"

__all__ = ["Tensor", "finite_diff_check", "Model", "ModelSpec", "build", "__version__"]
