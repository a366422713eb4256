"""
Feature-graph construction, batching, augmentation, file formats and synthesis.
"""
from .feature_graph import (
    ALL_POLICIES,
    AugmentPolicy,
    FeatureGraph,
    ScoreHistogram,
    augment,
    augment_all,
    build_feature_graph,
    edge_count,
    flip_columns,
    resize_map
)
from .batching import GraphBatch, batch, unbatch
from .afg import afg_read, afg_write
from .synth import SynthConfig, synth_generate

__all__ = [
    'ALL_POLICIES', 'AugmentPolicy', 'FeatureGraph', 'ScoreHistogram', 'augment',
    'augment_all', 'build_feature_graph', 'edge_count', 'flip_columns', 'resize_map',
    'GraphBatch', 'batch', 'unbatch', 'afg_read', 'afg_write', 'SynthConfig', 'synth_generate'
]
