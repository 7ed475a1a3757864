"""Fair GNN training across automatically inferred sensitive groups.

The package trains a graph neural network once and makes its predictions
fair with respect to several sensitive attributes at the same time, without
reading those attributes during training.  It does this in two stages: an
unsupervised partition stage that infers worst-case demographic groupings
by maximizing an invariant-risk penalty against a frozen reference model,
and an invariant training stage that minimizes the variance of per-group
classification losses plus their mean.

Everything is built on dense float64 numpy kernels with hand-derived
backward passes, so every gradient in the pipeline can be (and is) verified
against central finite differences.
"""

__version__ = "0.1.0"
