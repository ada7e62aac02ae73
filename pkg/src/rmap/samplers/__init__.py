"""Posterior samplers built on the randomized MAP problem and MCMC baselines."""

from rmap.samplers.chain import Chain
from rmap.samplers.metropolize import (
    JacobianInfo,
    importance_weights,
    jacobian_info,
    metropolize_rmap,
)
from rmap.samplers.rmap import rmap_chain, scalar_rmap_samples

__all__ = [
    "Chain",
    "JacobianInfo",
    "importance_weights",
    "jacobian_info",
    "metropolize_rmap",
    "rmap_chain",
    "scalar_rmap_samples",
]
