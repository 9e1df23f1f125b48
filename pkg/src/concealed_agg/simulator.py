"""Deterministic in-process network simulator.

The fabric is a binary min-heap of (tick, src, dst, seq) events; every link
hop costs one tick and seq breaks remaining ties in submission order, so a
scenario replays identically for a given seed.  Data rounds run through the
event loop.  Attestation traffic (probes and re-aggregation requests) is a
synchronous request/response exchange on top of the same tree: it happens
strictly after the round's data traffic has drained, and its cost is charged
as one message per tree hop in each direction.

Timeouts: a node that received the query at depth d gives up on silent
children after TIMEOUT_BUDGET * (height - d + 1) ticks.  Deadlines shrink
with depth, so a late subtree report still beats its ancestors' alarms and a
single silent node costs only its own subtree, never the whole branch.
"""

from __future__ import annotations

import heapq
import random
import statistics
import time
from dataclasses import dataclass, field

from . import crypto, wire
from .adversary import AttackPlan, CompromiseSpec, apply_plan
from .basestation import BaseStation, QueryResult, format_report_line
from .errors import DisconnectedGraph, DuplicateParticipant, ScenarioInvalid, StaleRound
from .node import SensorNode
from .topology import (
    BS_ID,
    Tree,
    adjacency_from_edges,
    build_tree,
    path_graph,
    provision,
    random_geometric_graph,
    random_recursive_tree,
    star_graph,
)

TIMEOUT_BUDGET = 10  # ticks granted per remaining tree level

GENERATORS = ("recursive", "geometric", "path", "star")


def _sub_seed(master: int, label: str) -> int:
    """Independent stream seeds derived from the scenario seed."""
    import hashlib

    digest = hashlib.blake2b(
        master.to_bytes(8, "big", signed=False), digest_size=8, person=label.encode()
    ).digest()
    return int.from_bytes(digest, "big")


# === Metrics ================================================================


@dataclass
class RoundMetrics:
    round: int
    messages: int = 0
    bytes: int = 0
    seed_regens: int = 0
    probes: int = 0
    verify_ops: int = 0
    wall_ms: float = 0.0


CSV_COLUMNS = ("round", "messages", "bytes", "seed_regens", "probes")


@dataclass
class Metrics:
    rounds: list[RoundMetrics] = field(default_factory=list)

    def totals(self) -> dict[str, int]:
        return {
            col: sum(getattr(rm, col) for rm in self.rounds)
            for col in CSV_COLUMNS
            if col != "round"
        }

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for rm in self.rounds:
            lines.append(",".join(str(getattr(rm, col)) for col in CSV_COLUMNS))
        totals = self.totals()
        lines.append("total," + ",".join(str(totals[col]) for col in CSV_COLUMNS[1:]))
        return "\n".join(lines) + "\n"


# === Scenarios ==============================================================


@dataclass(frozen=True)
class Scenario:
    """One reproducible experiment: topology, domain, rounds, attack plan."""

    seed: int = 0
    rounds: int = 1
    function: str = "sum"
    n: int | None = None
    generator: str | None = None
    edges: tuple[tuple[int, int], ...] | None = None
    domain: tuple[float, float, int] = (0.0, 1000.0, 100)
    compromises: tuple[CompromiseSpec, ...] = ()
    trigger_round: int = 1
    force_attest: bool = False
    audit_prob: float = 0.0
    absent_threshold: int = 3
    source: str = "<scenario>"

    def validate(self) -> None:
        if self.rounds < 1:
            raise ScenarioInvalid(f"{self.source}: rounds must be >= 1")
        if self.function not in wire.FUNC_CODES:
            raise ScenarioInvalid(f"{self.source}: unknown function {self.function!r}")
        if not 0.0 <= self.audit_prob <= 1.0:
            raise ScenarioInvalid(f"{self.source}: audit probability outside [0, 1]")
        low, high, scale = self.domain
        if not (low < high and scale > 0):
            raise ScenarioInvalid(f"{self.source}: bad sensor domain {self.domain}")
        if self.edges is None:
            if self.generator is None or self.n is None:
                raise ScenarioInvalid(f"{self.source}: need explicit edges or a generator with n")
            if self.generator not in GENERATORS:
                raise ScenarioInvalid(f"{self.source}: unknown generator {self.generator!r}")
            if self.n < 1:
                raise ScenarioInvalid(f"{self.source}: need at least one sensor")
        if self.trigger_round < 1:
            raise ScenarioInvalid(f"{self.source}: trigger round must be >= 1")
        for spec in self.compromises:
            if spec.kind == "replay" and self.trigger_round < 2:
                raise ScenarioInvalid(f"{self.source}: replay needs a round to capture first")


# === The world ==============================================================


class World:
    """A provisioned network plus base station, ready to run rounds."""

    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.scenario = scenario
        rng_topo = random.Random(_sub_seed(scenario.seed, "topology"))
        try:
            if scenario.edges is not None:
                adjacency = adjacency_from_edges(scenario.edges)
            elif scenario.generator == "recursive":
                adjacency = random_recursive_tree(scenario.n, rng_topo)
            elif scenario.generator == "geometric":
                adjacency = random_geometric_graph(scenario.n, rng_topo)
            elif scenario.generator == "path":
                adjacency = path_graph(scenario.n)
            else:
                adjacency = star_graph(scenario.n)
            self.tree: Tree = build_tree(adjacency)
        except (DisconnectedGraph, ValueError) as exc:
            raise ScenarioInvalid(f"{scenario.source}: {exc}") from exc
        if scenario.edges is not None and scenario.n is not None:
            if self.tree.n_sensors != scenario.n:
                raise ScenarioInvalid(
                    f"{scenario.source}: {self.tree.n_sensors} sensors in edges, header says {scenario.n}"
                )
        self.codec = crypto.FixedPointCodec(*scenario.domain)
        self.prov = prov = provision(self.tree, _sub_seed(scenario.seed, "provision"), self.codec)
        self.nodes: dict[int, SensorNode] = {}
        for nid in self.tree.sensor_ids:
            key, key_prime = prov.node_keys[nid]
            children = self.tree.children[nid]
            self.nodes[nid] = SensorNode(
                node_id=nid,
                parent_id=self.tree.parent[nid],
                children=children,
                depth=self.tree.depth[nid],
                key=key,
                key_prime=key_prime,
                edge_key=prov.edge_keys[nid],
                child_edge_keys={cid: prov.edge_keys[cid] for cid in children},
                origin=prov.origins[nid],
                sense_key=prov.sense_keys[nid],
                codec=self.codec,
            )
        self.bs = BaseStation(self.tree, prov, self.codec, scenario.absent_threshold)
        try:
            apply_plan(self.nodes, AttackPlan(scenario.compromises, scenario.trigger_round))
        except ScenarioInvalid as exc:
            raise ScenarioInvalid(f"{scenario.source}: {exc}") from exc
        self._audit_rng = random.Random(_sub_seed(scenario.seed, "audit"))
        self.metrics = Metrics()
        self.results: list[QueryResult] = []
        self._rm: RoundMetrics | None = None
        self._seq = 0

    # --- fabric -------------------------------------------------------------

    def _run_data_phase(self, round_no: int) -> None:
        rm = self._rm
        heap: list[tuple[int, int, int, int, bytes]] = []

        def push(tick: int, src: int, dst: int, payload: bytes) -> None:
            heapq.heappush(heap, (tick, src, dst, self._seq, payload))
            self._seq += 1

        for dst, payload in self.bs.disseminate(round_no, self.scenario.function):
            push(1, BS_ID, dst, payload)
        height = max(self.tree.height, 1)
        while heap:
            tick, src, dst, _, payload = heapq.heappop(heap)
            if src != dst:
                rm.messages += 1
                rm.bytes += len(payload)
            if dst == BS_ID:
                msg_type, body = wire.parse_frame(payload)
                if msg_type == wire.AGG:
                    self.bs.receive_packet(body)
                continue
            node = self.nodes[dst]
            if payload[0] == wire.QUERY:
                expiry = TIMEOUT_BUDGET * (height - self.tree.depth[dst] + 1)
                push(tick + expiry, dst, dst, wire.frame(wire.TIMEOUT, round_no.to_bytes(8, "big")))
            try:
                outs = node.handle_message(payload)
            except StaleRound:
                continue
            for ndst, npayload in outs:
                push(tick + 1, dst, ndst, npayload)

    def _exchange(self, nid: int, payload: bytes) -> bytes | None:
        """Synchronous attestation-phase request/response, charged per hop."""
        rm = self._rm
        hops = self.tree.depth[nid]
        rm.messages += hops
        rm.bytes += len(payload) * hops
        node = self.nodes[nid]
        msg_type, body = wire.parse_frame(payload)
        if msg_type == wire.PROBE:
            try:
                resp = node.respond_attestation(wire.decode_probe(body))
            except Exception:
                resp = None
        elif msg_type == wire.REAGG:
            resp = node.handle_reagg_request(body, ask_child=self._make_ask(nid), to_bs=True)
        else:
            resp = None
        if resp is None:
            return None
        rm.messages += hops
        rm.bytes += len(resp) * hops
        return resp

    def _make_ask(self, parent: int):
        def ask(cid: int, payload: bytes) -> bytes | None:
            rm = self._rm
            rm.messages += 1
            rm.bytes += len(payload)
            _, body = wire.parse_frame(payload)
            resp = self.nodes[cid].handle_reagg_request(body, ask_child=self._make_ask(cid), to_bs=False)
            rm.messages += 1
            rm.bytes += len(resp)
            return resp

        return ask

    # --- rounds --------------------------------------------------------------

    def run_round(self, round_no: int) -> QueryResult:
        t0 = time.perf_counter()
        rm = RoundMetrics(round=round_no)
        self.metrics.rounds.append(rm)
        self._rm = rm
        self.bs.counters["seed_regens"] = 0
        self.bs.counters["verify_ops"] = 0
        self._run_data_phase(round_no)

        duplicate = False
        try:
            dsum, dsum_prime, participants = self.bs.finalize(round_no)
        except DuplicateParticipant:
            # Fold leniently so attestation has a pair to chase.
            duplicate = True
            dsum = dsum_prime = 0
            seen: set[int] = set()
            for pkt in self.bs.packets().values():
                dsum = crypto.add_mod(dsum, pkt.dsum)
                dsum_prime = crypto.add_mod(dsum_prime, pkt.dsum_prime)
                seen.update(pkt.participants)
            participants = frozenset(seen)

        result: QueryResult
        if not participants:
            result = QueryResult(round_no, self.scenario.function, None, participants, "rejected")
        else:
            verdict = self.bs.ipet_check((dsum, dsum_prime), participants, round_no)
            audited = self.scenario.force_attest or (
                self.scenario.audit_prob > 0 and self._audit_rng.random() < self.scenario.audit_prob
            )
            if verdict.equal and not duplicate:
                value = self.bs.decode_value(self.scenario.function, verdict.sum_raw, participants)
                report = self.bs.com_att(round_no, self._exchange) if audited else None
                result = QueryResult(
                    round_no, self.scenario.function, value, participants,
                    "passed", report, verdict.sum_raw,
                )
            else:
                report = self.bs.com_att(round_no, self._exchange)
                pair, kept = self.bs.reaggregate_final(round_no, report.outliers, self._exchange)
                result = QueryResult(round_no, self.scenario.function, None, kept, "rejected", report)
                if kept:
                    fresh = self.bs.ipet_check(pair, kept, round_no, count_ops=False)
                    if fresh.equal:
                        value = self.bs.decode_value(self.scenario.function, fresh.sum_raw, kept)
                        result = QueryResult(
                            round_no, self.scenario.function, value, kept,
                            "attested", report, fresh.sum_raw,
                        )
        self.bs.monitor(participants)
        rm.seed_regens = self.bs.counters["seed_regens"]
        rm.verify_ops = self.bs.counters["verify_ops"]
        rm.probes = result.report.probes if result.report is not None else 0
        rm.wall_ms = (time.perf_counter() - t0) * 1000.0
        self.results.append(result)
        return result

    def run(self) -> list[QueryResult]:
        for round_no in range(1, self.scenario.rounds + 1):
            self.run_round(round_no)
        return self.results

    def report_text(self) -> str:
        return "".join(format_report_line(r) + "\n" for r in self.results)


def run(scenario: Scenario) -> tuple[list[QueryResult], Metrics]:
    world = World(scenario)
    world.run()
    return world.results, world.metrics


# === Scaling experiments =====================================================


@dataclass(frozen=True)
class ScalingRow:
    n: int
    trials: int
    mean_probes: float
    max_probes: int
    mean_depth: float
    mean_messages: float


def measure_scaling(
    sizes: tuple[int, ...], trials: int, seed: int = 0, generator: str = "recursive"
) -> list[ScalingRow]:
    """Attestation cost versus network size.

    Each trial: one random tree, one uniformly chosen forging node, one round,
    one audit walk.  The probe count grows with the forger's depth, which is
    logarithmic in n for random recursive trees.
    """
    rows = []
    for n in sizes:
        probe_counts: list[int] = []
        depths: list[float] = []
        messages: list[int] = []
        for trial in range(trials):
            trial_seed = _sub_seed(seed, f"scale.{n}.{trial}")
            rng = random.Random(trial_seed)
            victim = rng.randint(1, n)
            delta = rng.getrandbits(64) | 1
            scenario = Scenario(
                seed=trial_seed,
                rounds=1,
                n=n,
                generator=generator,
                compromises=(CompromiseSpec(victim, "forge_children", (delta,)),),
            )
            world = World(scenario)
            result = world.run()[0]
            probe_counts.append(world.metrics.rounds[0].probes)
            depths.append(
                statistics.fmean(world.tree.depth[v] for v in world.tree.sensor_ids)
            )
            messages.append(world.metrics.rounds[0].messages)
        rows.append(
            ScalingRow(
                n=n,
                trials=trials,
                mean_probes=statistics.fmean(probe_counts),
                max_probes=max(probe_counts),
                mean_depth=statistics.fmean(depths),
                mean_messages=statistics.fmean(messages),
            )
        )
    return rows
