"""
Schema module initialization.
"""
from .config import (
    DataConfigSchema,
    EvalConfigSchema,
    FeatureMapSidecarSchema,
    ModelSpecSchema,
    SynthConfigSchema,
    TrainConfigSchema,
    load_model_spec,
    load_section
)

__all__ = [
    'DataConfigSchema', 'EvalConfigSchema', 'FeatureMapSidecarSchema', 'ModelSpecSchema',
    'SynthConfigSchema', 'TrainConfigSchema', 'load_model_spec', 'load_section'
]
