from __future__ import annotations

import math
import random
from dataclasses import dataclass
from enum import Enum
from typing import Optional

# link names used by the pipeline routes
CLIENT_TO_EDGE = "client->edge"
EDGE_TO_CLIENT = "edge->client"
EDGE_TO_SERVER = "edge->server"
SERVER_TO_EDGE = "server->edge"
EDGE_TO_EDGE = "edge->edge"
DIRECT = "direct"

LINK_NAMES = (CLIENT_TO_EDGE, EDGE_TO_SERVER, SERVER_TO_EDGE, EDGE_TO_CLIENT, EDGE_TO_EDGE, DIRECT)

MIN_STOCHASTIC_MS = 1e-3


class LatencyKind(str, Enum):
    FIXED = "fixed"
    UNIFORM_JITTER = "uniform_jitter"
    LOG_NORMAL = "log_normal"


@dataclass(frozen=True, slots=True)
class LinkLatencyModel:
    """One-way latency of a link.

    ``Fixed`` returns ``base_ms``. ``UniformJitter`` draws from
    ``base_ms + U[0, jitter_ms]``. ``LogNormal`` draws a log-normal whose
    median is ``base_ms`` and whose log-space deviation is ``sigma``.
    """

    kind: LatencyKind = LatencyKind.FIXED
    base_ms: float = 50.0
    jitter_ms: float = 0.0
    sigma: float = 0.0
    drop_probability: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LatencyKind(self.kind))
        if self.base_ms < 0 or self.jitter_ms < 0 or self.sigma < 0:
            raise ValueError("latency parameters must be >= 0")
        if self.kind is not LatencyKind.FIXED and self.base_ms <= 0:
            raise ValueError("stochastic latency models need base_ms > 0")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError("drop_probability must be in [0, 1)")

    @classmethod
    def fixed(cls, base_ms: float, drop_probability: float = 0.0) -> "LinkLatencyModel":
        return cls(LatencyKind.FIXED, base_ms, drop_probability=drop_probability)

    @property
    def deterministic(self) -> bool:
        return self.kind is LatencyKind.FIXED and self.drop_probability == 0.0

    def sample(self, rng: random.Random) -> Optional[float]:
        """Latency in ms, or None when the hop drops the message."""
        if self.drop_probability and rng.random() < self.drop_probability:
            return None
        if self.kind is LatencyKind.FIXED:
            return float(self.base_ms)
        if self.kind is LatencyKind.UNIFORM_JITTER:
            return max(MIN_STOCHASTIC_MS, self.base_ms + rng.random() * self.jitter_ms)
        return max(MIN_STOCHASTIC_MS, self.base_ms * math.exp(self.sigma * rng.gauss(0.0, 1.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "base_ms": self.base_ms, "jitter_ms": self.jitter_ms,
                "sigma": self.sigma, "drop_probability": self.drop_probability}


def default_links() -> dict[str, LinkLatencyModel]:
    access = LinkLatencyModel.fixed(50.0)
    backbone = LinkLatencyModel.fixed(20.0)
    return {
        CLIENT_TO_EDGE: access,
        EDGE_TO_CLIENT: access,
        EDGE_TO_SERVER: backbone,
        SERVER_TO_EDGE: backbone,
        EDGE_TO_EDGE: backbone,
        DIRECT: LinkLatencyModel.fixed(5.0),
    }
