"""Edge enhancing diffusion toolkit."""

from ._eedkit import (
    DiffusionParams,
    IoError,
    NotFoundError,
    NumericalError,
    ParameterError,
    acc_rel,
    class_iou,
    decode_image,
    dirichlet_energy,
    eed_run,
    encode_png,
    load_image,
    preset,
    preset_names,
    segment_scores,
    segments,
)

__all__ = [
    "DiffusionParams",
    "IoError",
    "NotFoundError",
    "NumericalError",
    "ParameterError",
    "acc_rel",
    "class_iou",
    "decode_image",
    "dirichlet_energy",
    "eed_run",
    "encode_png",
    "load_image",
    "preset",
    "preset_names",
    "segment_scores",
    "segments",
]
