"""Variational graph contrastive learning on citation graphs.

Submodules: graphio (datasets, normalization, splits), ndiff (autodiff core),
augment (stochastic views), model (GCN encoder + projection head), objective
(InfoNCE / KL / hyperpriors), train, evaluate (linear probe), uncertainty
(CMDS and baselines, retention curves), config and cli.
"""

__version__ = "0.1.0"
