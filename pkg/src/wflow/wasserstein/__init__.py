from .distance import (FDResult, TransportPlan, aggregate, metric_derivative, metric_derivative_fd,
                       transport, w2_1d_quantile, w2_distance)
from .ground import GroundMetric, ground_distance
from .simplex import TransportError, network_simplex
from .sinkhorn import sinkhorn_divergence

__all__ = [
    "FDResult", "GroundMetric", "TransportError", "TransportPlan", "aggregate", "ground_distance",
    "metric_derivative", "metric_derivative_fd", "network_simplex", "sinkhorn_divergence",
    "transport", "w2_1d_quantile", "w2_distance",
]
