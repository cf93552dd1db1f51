"""Fused depth-from-motion colour stacks and segmentation scoring."""

try:
    from ._core import *  # noqa: F401,F403  (installed layout)
    from ._core import __doc__ as _core_doc
except ImportError:  # in-tree builds put the extension next to the package
    from _core import *  # noqa: F401,F403
    from _core import __doc__ as _core_doc

__all__ = [
    "FieldstackError",
    "load_image",
    "save_png",
    "detect_features",
    "match_features",
    "compute_disparity",
    "depth_from_triple",
    "write_stack",
    "read_stack",
    "exposure_report",
    "evaluate",
    "run_pipeline",
    "default_config",
]
