"""Differentially private synthetic data from an ensemble of teacher discriminators."""

from dpgen.accountant import DpGuarantee, PrivacyLedger, RdpCurve
from dpgen.aggregator import BinGrid, dp_grad_agg
from dpgen.projection import ProjectionPair, make_projection
from dpgen.training import TrainConfig, generate, train

__version__ = "0.1.0"

__all__ = [
    "BinGrid",
    "DpGuarantee",
    "PrivacyLedger",
    "ProjectionPair",
    "RdpCurve",
    "TrainConfig",
    "dp_grad_agg",
    "generate",
    "make_projection",
    "train",
]
