"""
Graph network layers built on gatiaa.autodiff.
"""
from .layers import (
    EVAL,
    TRAIN,
    BatchNorm,
    Dropout,
    GATLayer,
    GATPool,
    GCNLayer,
    Layer,
    LinearLayer,
    batch_norm,
    dropout,
    gat_attention,
    gatp_readout,
    gcn_forward,
    global_mean_pool,
    graph_size_norm,
    linear_forward
)

__all__ = [
    'EVAL', 'TRAIN', 'BatchNorm', 'Dropout', 'GATLayer', 'GATPool', 'GCNLayer', 'Layer',
    'LinearLayer', 'batch_norm', 'dropout', 'gat_attention', 'gatp_readout', 'gcn_forward',
    'global_mean_pool', 'graph_size_norm', 'linear_forward'
]
