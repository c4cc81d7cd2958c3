"""Hierarchical multilabel text classification with contrastive pretraining.

A desk-scale, numpy-only stack: a label taxonomy, a multi-field text corpus,
a tape-based autodiff engine, a compact attention encoder, a global/local
classifier with path regularization and focal loss, per-level contrastive
pretraining with three negative-sampling strategies, and the evaluation
metrics to judge all of it.
"""

__version__ = "0.1.0"
