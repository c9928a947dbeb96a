"""Bimanual action recognition from 3D scene graphs."""

from ._core import (
    ACTIONS,
    OBJECTS,
    RELATIONS,
    dynamic_relations,
    frame_graphs,
    generate_dataset,
    gradcheck,
    mirror,
    predict,
    score,
    static_relations,
    temporal_concat,
)

__all__ = [
    "ACTIONS",
    "OBJECTS",
    "RELATIONS",
    "dynamic_relations",
    "frame_graphs",
    "generate_dataset",
    "gradcheck",
    "mirror",
    "predict",
    "score",
    "static_relations",
    "temporal_concat",
]
