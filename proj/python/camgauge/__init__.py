"""Attribution-map evaluation toolkit: synthetic shapes, a small CNN, CAM methods and metrics."""

from ._camgauge import (
    GenerationError,
    InvalidInput,
    IoError,
    LookupError,
    Model,
    UndefinedMetric,
    adcc,
    arcc,
    attribution,
    average_drop,
    class_names,
    coherency_from_maps,
    complexity,
    correlate,
    cosine_similarity,
    evaluate,
    generate_dataset,
    main,
    noisy_linear_imputation,
    normalize_map,
    rank_pixels,
    rasterize_shape,
    refine_cam,
    resize_bilinear,
    road,
    train,
)

__all__ = [
    "GenerationError",
    "InvalidInput",
    "IoError",
    "LookupError",
    "Model",
    "UndefinedMetric",
    "adcc",
    "arcc",
    "attribution",
    "average_drop",
    "class_names",
    "coherency_from_maps",
    "complexity",
    "correlate",
    "cosine_similarity",
    "evaluate",
    "generate_dataset",
    "main",
    "noisy_linear_imputation",
    "normalize_map",
    "rank_pixels",
    "rasterize_shape",
    "refine_cam",
    "resize_bilinear",
    "road",
    "train",
]
