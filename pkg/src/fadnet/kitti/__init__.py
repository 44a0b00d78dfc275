"""KITTI formats, training targets, synthetic scenes and splits."""

from .labels import (
    CATEGORIES,
    DONTCARE,
    KittiFrame,
    ObjectLabel,
    format_calib,
    format_label,
    parse_calib,
    parse_label_file,
    parse_result_file,
    write_label_file,
)
from .split import bundled_split, split_3dop
from .synthetic import (
    SyntheticConfig,
    SyntheticScene,
    channel_stats,
    generate_synthetic,
    read_frames,
    render,
    standardize,
    write_scenes,
)
from .targets import (
    DEFAULT_TEMPLATE,
    TargetBatch,
    TargetConfig,
    TrainingTargets,
    build_targets,
    collate,
    dimension_templates,
    draw_gaussian,
    gaussian_radius,
    hint_bin_index,
    hint_targets,
)
