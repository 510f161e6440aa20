from .broker import (Broker, BrokerError, CausalityError, DeliveryEvent, DropEvent, EventQueue,
                     OversizedPayload, RateLimiter, RateViolation, Subscription, UnknownClient,
                     enforce_frequency)
from .latency import LINK_NAMES, LatencyKind, LinkLatencyModel, default_links
from .pipeline import (SERVER_NODE, Dispatch, PipelineMode, ProcessingNode, StateTable, Topology,
                       edge_step, server_step)

__all__ = [
    "Broker", "BrokerError", "CausalityError", "DeliveryEvent", "DropEvent", "EventQueue",
    "OversizedPayload", "RateLimiter", "RateViolation", "Subscription", "UnknownClient",
    "enforce_frequency", "LINK_NAMES", "LatencyKind", "LinkLatencyModel", "default_links",
    "SERVER_NODE", "Dispatch", "PipelineMode", "ProcessingNode", "StateTable", "Topology",
    "edge_step", "server_step",
]
