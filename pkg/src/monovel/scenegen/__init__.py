from .dataset import (AnnotationRecord, export_dataset, load_clip, load_dataset,
                      load_tusimple_format)
from .generator import (FramePairSample, SceneConfig, VehicleSpec, default_intrinsics,
                        generate_dataset, generate_scene, project_box, render_pair,
                        sample_vehicles)
from .render import render_frame

__all__ = [
    "AnnotationRecord", "FramePairSample", "SceneConfig", "VehicleSpec", "default_intrinsics",
    "export_dataset", "generate_dataset", "generate_scene", "load_clip", "load_dataset",
    "load_tusimple_format", "project_box", "render_frame", "render_pair", "sample_vehicles",
]
