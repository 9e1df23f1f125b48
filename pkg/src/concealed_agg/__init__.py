"""Concealed hop-by-hop aggregation for sensor networks.

End-to-end concealed readings, exact SUM/MEAN recovery at the base station,
constant-time integrity verdicts, and tree-walking attestation that pins
misbehaving aggregators, together with a deterministic simulator for
experimenting with adversarial scenarios.
"""

from .basestation import (
    AttestationReport,
    BaseStation,
    IpetVerdict,
    QueryResult,
    format_report_line,
)
from .crypto import FixedPointCodec, SecureChannel, SeedState, diffuse, undiffuse
from .errors import (
    AuthFailure,
    DisconnectedGraph,
    ProtocolError,
    ReadingOutOfRange,
    ReplayDetected,
    ScenarioInvalid,
)
from .node import SensorNode
from .adversary import AttackPlan, CompromiseSpec
from .simulator import Metrics, ScalingRow, Scenario, World, measure_scaling, run
from .topology import Tree, build_tree, load_topology, provision

__version__ = "0.1.0"

__all__ = [
    "AttackPlan",
    "AttestationReport",
    "AuthFailure",
    "BaseStation",
    "CompromiseSpec",
    "DisconnectedGraph",
    "FixedPointCodec",
    "IpetVerdict",
    "Metrics",
    "ProtocolError",
    "QueryResult",
    "ReadingOutOfRange",
    "ReplayDetected",
    "ScalingRow",
    "Scenario",
    "ScenarioInvalid",
    "SecureChannel",
    "SeedState",
    "SensorNode",
    "Tree",
    "World",
    "build_tree",
    "diffuse",
    "format_report_line",
    "load_topology",
    "measure_scaling",
    "provision",
    "run",
    "undiffuse",
    "__version__",
]
