"""
Graph attention image aesthetics toolkit.

Feature graphs built from convolutional feature maps, a numpy reverse-mode
autodiff engine, GAT encoders with attention-pooled readouts, training,
evaluation and ablation services.
"""
__version__ = '1.0.0'
