"""Delay-aware packet scheduling with streaming network coding over lossy links."""
from .analysis import BoundReport
from .codec import BlockDecoder, Decoder, Encoder
from .multipath import MultipathConfig, replicate_multipath, run_multipath
from .policies import make_policy
from .sim import Estimate, RunMetrics, SimConfig, replicate, run

__version__ = "0.1.0"

__all__ = [
    "BlockDecoder", "BoundReport", "Decoder", "Encoder", "Estimate", "MultipathConfig",
    "RunMetrics", "SimConfig", "make_policy", "replicate", "replicate_multipath", "run",
    "run_multipath",
]
