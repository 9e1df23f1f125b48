"""Protocol error hierarchy.

Every error that crosses a module boundary derives from ProtocolError so
callers can distinguish protocol violations from programming mistakes.
"""

from __future__ import annotations


class ProtocolError(Exception):
    """Base class for all protocol-level failures."""


class ReplayDetected(ProtocolError):
    """Channel counter did not strictly increase."""


class AuthFailure(ProtocolError):
    """Sealed payload failed authentication."""


class StaleRound(ProtocolError):
    """Query round replayed or decreasing."""


class AlreadyEmitted(ProtocolError):
    """A node tried to emit twice in one round."""


class NoSuchRound(ProtocolError):
    """Attestation probe for a round the node never ran."""


class UnknownChild(ProtocolError):
    """Packet from a sender that is not a pending child."""


class DisconnectedGraph(ProtocolError):
    """Spanning-tree construction found unreachable nodes."""


class DuplicateParticipant(ProtocolError):
    """The same node id appeared in two sibling participant lists."""


class UnknownParticipant(ProtocolError):
    """A participant id has no registry record."""


class EmptyParticipants(ProtocolError):
    """Mean requested over an empty participant set."""


class ExclusionNotResolvable(ProtocolError):
    """An excluded interior descendant's subtree cannot be separated."""


class ProbeTimeout(ProtocolError):
    """A probed node stayed silent."""


class ReadingOutOfRange(ProtocolError):
    """A (possibly forged) reading falls outside the sensor domain."""


class ScenarioInvalid(ProtocolError):
    """A scenario file or scenario object failed validation."""
