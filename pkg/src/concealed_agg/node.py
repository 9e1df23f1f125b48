"""The sensor/aggregator state machine.

Per round a node: receives the query exactly once, relays it to its children,
senses one reading and diffuses it under both seed chains, folds each child's
packet into its running dual sum (component-wise, mod M), unions participant
lists, XOR-folds child tags, and emits exactly one packet upward.  The
emitted tag is its own MAC over the final aggregated pair XORed with all
child tags, so the tag of any subtree equals the XOR of the own-MACs of every
node inside it.

The node also answers attestation probes (resending what it committed to on
a direct logical channel to the base station) and re-aggregates on request
with a set of nodes excluded.  Compromised behavior is injected through an
optional behavior object consulted at sensing, emission, and probe time.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import crypto, wire
from .errors import (
    AlreadyEmitted,
    AuthFailure,
    ExclusionNotResolvable,
    NoSuchRound,
    ReplayDetected,
    StaleRound,
    UnknownChild,
)

log = logging.getLogger(__name__)

Send = tuple[int, bytes]  # (destination node id, fabric payload)


@dataclass
class RoundState:
    round: int
    function: str
    own_reading: int
    own_d: int
    own_dp: int
    own_mac: bytes
    pending: set[int]
    child_packets: dict[int, wire.AggPacket] = field(default_factory=dict)
    unresponsive: set[int] = field(default_factory=set)
    acc_d: int = 0
    acc_dp: int = 0
    child_tag_xor: bytes = crypto.ZERO_TAG
    participants: set[int] = field(default_factory=set)
    emitted: wire.AggPacket | None = None


class SensorNode:
    def __init__(
        self,
        node_id: int,
        parent_id: int,
        children: tuple[int, ...],
        depth: int,
        key: bytes,
        key_prime: bytes,
        edge_key: bytes,
        child_edge_keys: dict[int, bytes],
        origin: int,
        sense_key: bytes,
        codec: crypto.FixedPointCodec,
        behavior=None,
    ):
        self.node_id = node_id
        self.parent_id = parent_id
        self.children = tuple(sorted(children))
        self.depth = depth
        self.key = key
        self.key_prime = key_prime
        self.codec = codec
        self.sense_key = sense_key
        self.behavior = behavior
        self.chain = crypto.SeedState.from_origin(origin)
        self.chain_prime = crypto.SeedState.from_origin(origin)
        self.up_channel = crypto.SecureChannel(edge_key)
        self.child_channels = {cid: crypto.SecureChannel(k) for cid, k in child_edge_keys.items()}
        self.bs_channel = crypto.SecureChannel(crypto.derive_bs_channel_key(key, node_id))
        self.state: RoundState | None = None
        self._last_round = 0

    # === Round handling =====================================================

    def sense_raw(self, round_no: int) -> int:
        """Synthetic reading for the round; a compromised node may forge it
        (consistently under both chains), but it must still encode in-range."""
        raw = crypto.sense_raw(self.sense_key, round_no, self.codec.max_raw)
        if self.behavior is not None:
            raw = self.behavior.forge_reading(raw, round_no, self.codec)
        return raw

    def sense_and_diffuse(self, round_no: int) -> tuple[int, int, bytes]:
        """Diffuse one reading under both chains plus the MAC over the pair."""
        if self.chain.round != round_no or self.chain_prime.round != round_no:
            raise ValueError("seed chains not advanced to this round")
        m = self.sense_raw(round_no)
        d = crypto.diffuse(self.chain.seed, m)
        dp = crypto.diffuse(self.chain_prime.seed, m)
        return d, dp, crypto.mac_pair(self.key, d, dp)

    def handle_query(self, round_no: int, function: str) -> list[Send]:
        if round_no <= self._last_round:
            raise StaleRound(f"node {self.node_id}: round {round_no} <= {self._last_round}")
        self._last_round = round_no
        self.chain.advance_to(self.key, round_no)
        self.chain_prime.advance_to(self.key_prime, round_no)
        d, dp, own_mac = self.sense_and_diffuse(round_no)
        m = crypto.undiffuse(d, self.chain.seed)  # the (possibly forged) raw actually diffused
        self.state = RoundState(
            round=round_no,
            function=function,
            own_reading=m,
            own_d=d,
            own_dp=dp,
            own_mac=own_mac,
            pending=set(self.children),
            acc_d=d,
            acc_dp=dp,
            participants={self.node_id},
        )
        query = wire.encode_query(round_no, function)
        return [(cid, query) for cid in self.children]

    def aggregate_child(self, body: bytes) -> None:
        """Fold one child packet into the round state.

        Raises UnknownChild / ReplayDetected / AuthFailure; on channel errors
        the child is marked unresponsive and excluded from this round.
        """
        state = self._require_state()
        sender = wire.decode_agg_body(body)[0]
        if sender not in self.child_channels or sender not in state.pending:
            raise UnknownChild(f"node {self.node_id}: unexpected packet from {sender}")
        if self.behavior is not None and self.behavior.drops_child(sender, state.round):
            state.pending.discard(sender)
            state.unresponsive.add(sender)
            return
        try:
            pkt = wire.open_packet(self.child_channels[sender], body)
        except (ReplayDetected, AuthFailure) as exc:
            state.pending.discard(sender)
            state.unresponsive.add(sender)
            log.info("node %d: rejected packet from child %d: %s", self.node_id, sender, exc)
            raise
        state.pending.discard(sender)
        state.child_packets[sender] = pkt
        state.acc_d = crypto.add_mod(state.acc_d, pkt.dsum)
        state.acc_dp = crypto.add_mod(state.acc_dp, pkt.dsum_prime)
        state.child_tag_xor = crypto.xor_tags(state.child_tag_xor, pkt.tag)
        state.participants.update(pkt.participants)

    def ready_to_emit(self) -> bool:
        return self.state is not None and not self.state.pending and self.state.emitted is None

    def expire_pending(self) -> None:
        """Child timeout: give up on silent children and report without them."""
        state = self._require_state()
        state.unresponsive |= state.pending
        state.pending.clear()

    def emit(self) -> Send:
        """Build, seal, and retain this round's single upward packet."""
        state = self._require_state()
        if state.emitted is not None:
            raise AlreadyEmitted(f"node {self.node_id}: round {state.round}")
        dsum, dsum_prime = state.acc_d, state.acc_dp
        if self.behavior is not None:
            dsum, dsum_prime = self.behavior.forge_pair(dsum, dsum_prime, state.round)
        tag = crypto.combine_macs(crypto.mac_pair(self.key, dsum, dsum_prime), [state.child_tag_xor])
        participants = tuple(sorted(state.participants))
        pkt, body = wire.seal_packet(self.up_channel, self.node_id, participants, dsum, dsum_prime, tag)
        state.emitted = pkt
        payload = wire.frame(wire.AGG, body)
        if self.behavior is not None:
            payload = self.behavior.emit_payload(state.round, payload)
        return self.parent_id, payload

    # === Attestation ========================================================

    def respond_attestation(self, round_no: int) -> bytes | None:
        """Resend the committed packet on the direct base-station channel."""
        state = self.state
        if state is None or state.round != round_no or state.emitted is None:
            raise NoSuchRound(f"node {self.node_id}: no emitted packet for round {round_no}")
        if self.behavior is not None and self.behavior.is_silent(round_no):
            return None
        pkt = state.emitted
        dsum, dsum_prime = pkt.dsum, pkt.dsum_prime
        if self.behavior is not None:
            dsum, dsum_prime = self.behavior.probe_pair(dsum, dsum_prime, round_no)
        counter, sealed = self.bs_channel.seal_next(crypto.pair_bytes(dsum, dsum_prime))
        body = wire.encode_agg_body(self.node_id, counter, pkt.participants, sealed, pkt.tag)
        child_tags = {cid: p.tag for cid, p in state.child_packets.items()}
        return wire.encode_probe_resp(round_no, body, child_tags)

    def reaggregate_excluding(self, exclusions: frozenset[int], round_no: int, ask_child=None, to_bs: bool = False) -> bytes:
        """Recompute the dual sums with the excluded nodes' data removed.

        An excluded direct child costs one ring subtraction (its whole subtree
        contribution is dropped); an excluded deeper descendant is resolved by
        asking the child on its path to re-aggregate, which recurses down the
        tree.  Raises ExclusionNotResolvable when that delegation fails.
        """
        state = self.state
        if state is None or state.round != round_no or state.emitted is None:
            raise NoSuchRound(f"node {self.node_id}: no round {round_no} to re-aggregate")
        dsum, dsum_prime = state.own_d, state.own_dp
        participants = {self.node_id}
        child_tags = []
        for cid in sorted(state.child_packets):
            pkt = state.child_packets[cid]
            if cid in exclusions:
                continue
            if exclusions.intersection(pkt.participants):
                fresh = self._delegate_reaggregation(cid, exclusions, round_no, ask_child)
                dsum = crypto.add_mod(dsum, fresh.dsum)
                dsum_prime = crypto.add_mod(dsum_prime, fresh.dsum_prime)
                participants.update(fresh.participants)
                child_tags.append(fresh.tag)
            else:
                dsum = crypto.add_mod(dsum, pkt.dsum)
                dsum_prime = crypto.add_mod(dsum_prime, pkt.dsum_prime)
                participants.update(pkt.participants)
                child_tags.append(pkt.tag)
        if self.behavior is not None:
            dsum, dsum_prime = self.behavior.forge_pair(dsum, dsum_prime, round_no)
        tag = crypto.combine_macs(crypto.mac_pair(self.key, dsum, dsum_prime), child_tags)
        channel = self.bs_channel if to_bs else self.up_channel
        _, body = wire.seal_packet(channel, self.node_id, tuple(sorted(participants)), dsum, dsum_prime, tag)
        return wire.encode_reagg_resp(round_no, True, body)

    def _delegate_reaggregation(self, cid: int, exclusions: frozenset[int], round_no: int, ask_child) -> wire.AggPacket:
        if ask_child is None:
            raise ExclusionNotResolvable(f"node {self.node_id}: cannot reach below child {cid}")
        reply = ask_child(cid, wire.encode_reagg(round_no, tuple(sorted(exclusions))))
        if reply is None:
            raise ExclusionNotResolvable(f"node {self.node_id}: child {cid} silent")
        msg_type, resp_body = wire.parse_frame(reply)
        if msg_type != wire.REAGG_RESP:
            raise ExclusionNotResolvable(f"node {self.node_id}: child {cid} sent type {msg_type}")
        _, ok, agg_body = wire.decode_reagg_resp(resp_body)
        if not ok:
            raise ExclusionNotResolvable(f"node {self.node_id}: child {cid} could not re-aggregate")
        try:
            return wire.open_packet(self.child_channels[cid], agg_body)
        except (ReplayDetected, AuthFailure) as exc:
            raise ExclusionNotResolvable(f"node {self.node_id}: child {cid}: {exc}") from exc

    # === Fabric dispatch ====================================================

    def handle_message(self, payload: bytes) -> list[Send]:
        """Process one fabric message; returns messages to send."""
        msg_type, body = wire.parse_frame(payload)
        if msg_type == wire.QUERY:
            round_no, function = wire.decode_query(body)
            out = self.handle_query(round_no, function)
            if self.ready_to_emit():
                out.append(self.emit())
            return out
        if msg_type == wire.AGG:
            try:
                self.aggregate_child(body)
            except (UnknownChild, ReplayDetected, AuthFailure):
                pass  # logged; sender already excluded from the round
            if self.ready_to_emit():
                return [self.emit()]
            return []
        if msg_type == wire.TIMEOUT:
            state = self.state
            round_no = int.from_bytes(body, "big")
            if state is not None and state.round == round_no and state.emitted is None:
                self.expire_pending()
                return [self.emit()]
            return []
        raise ValueError(f"node {self.node_id}: unhandled message type {msg_type}")

    def handle_reagg_request(self, body: bytes, ask_child=None, to_bs: bool = False) -> bytes:
        """Request/response entry for re-aggregation; never raises."""
        round_no, exclusions = wire.decode_reagg(body)
        try:
            return self.reaggregate_excluding(frozenset(exclusions), round_no, ask_child, to_bs=to_bs)
        except (NoSuchRound, ExclusionNotResolvable) as exc:
            log.info("node %d: re-aggregation failed: %s", self.node_id, exc)
            return wire.encode_reagg_resp(round_no, False)

    def _require_state(self) -> RoundState:
        if self.state is None:
            raise NoSuchRound(f"node {self.node_id}: no active round")
        return self.state
