"""Saliency-guided synthetic-data curation workbench.

Renders a built-in benchmark from editable meshes, trains a small seeded
detector on real+synthetic mixes, explains class confusions with KernelSHAP
saliency aggregation, and applies reinforcing/disruptive mesh-material edits
through a persistent six-step operator loop.
"""

from .benchmark import BenchmarkSpec, ConfusableFeature, make_benchmark
from .dataset import DatasetManifest, OrientationRanges, Sample, build_split, crop_and_resize, mix
from .detector import (
    DetectorConfig,
    Detection,
    TinyVehicleDetector,
    evaluate,
    iou,
    load_checkpoint,
    save_checkpoint,
    train_detector,
)
from .errors import (
    NotFoundError,
    ParseError,
    StateError,
    SynthloopError,
    TrainingDivergedError,
    ValidationError,
)
from .modification import ModificationSpec, VersionStore, project_saliency
from .pipeline import Workspace, WorkbenchConfig
from .renderer import Frame, airy_kernel, convolve, quantize, rasterize, render_frame
from .scene import Material, MeshModel, SceneConfig, load_mesh, place_vehicle, save_mesh
from .session import Session
from .toy import ToyLinearClassifier, toy_optimal_weights, train_toy
from .xai import (
    AggregatedSaliencyMap,
    AttributionMap,
    aggregate,
    bbox_focus,
    correlate_maps,
    kernel_shap,
    make_grid,
    mask_image,
    overlay_mask,
)

__version__ = "0.1.0"
