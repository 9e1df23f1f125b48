"""Adversarial behaviors: forgery variants, non-commitment, replay, drops,
the influence bound, and what a passive eavesdropper actually learns."""

import dataclasses

import pytest
from conftest import plaintext_sum, seed_of, sensed_raw

from concealed_agg import crypto, wire
from concealed_agg.adversary import CompromiseSpec, open_captured
from concealed_agg.errors import AuthFailure, ReadingOutOfRange, ScenarioInvalid
from concealed_agg.simulator import Scenario, World

M = crypto.MODULUS


def run_one(scenario):
    world = World(scenario)
    return world, world.run_round(1)


# === forge_children =========================================================


def test_forge_zero_delta_indistinguishable():
    honest = World(Scenario(seed=70, n=6, generator="recursive"))
    forged = World(Scenario(seed=70, n=6, generator="recursive",
                            compromises=(CompromiseSpec(3, "forge_children", (0,)),)))
    assert honest.run_round(1) == forged.run_round(1)


def test_forge_nonzero_delta_lands_in_outlier_list():
    for delta in (1, 99999, M - 1):
        world, result = run_one(Scenario(seed=71, n=8, generator="recursive",
                                         compromises=(CompromiseSpec(4, "forge_children", (delta,)),)))
        assert result.integrity in ("attested", "rejected")
        assert 4 in result.report.outliers


def test_sibling_forgers_with_cancelling_deltas_pass_unseen():
    # Exact ring cancellation: the two first-chain deltas sum to 0 mod M, so
    # the final pair is arithmetically indistinguishable from honest and the
    # net influence on the sum is zero.  Frozen from the ring oracle.
    delta = 987654321
    world, result = run_one(Scenario(
        seed=72, n=5, generator="star",
        compromises=(CompromiseSpec(1, "forge_children", (delta,)),
                     CompromiseSpec(2, "forge_children", (M - delta,))),
    ))
    assert result.integrity == "passed"
    assert result.raw_sum == plaintext_sum(world, 1)


def test_sibling_forgers_with_noncancelling_deltas_detected():
    world, result = run_one(Scenario(
        seed=73, n=5, generator="star",
        compromises=(CompromiseSpec(1, "forge_children", (10,)),
                     CompromiseSpec(2, "forge_children", (M - 11,))),
    ))
    assert result.integrity == "attested"
    assert result.report.outliers == frozenset({1, 2})


def test_dual_consistent_forge_needs_granted_power_and_passes():
    world, result = run_one(Scenario(
        seed=74, n=6, generator="recursive",
        compromises=(CompromiseSpec(2, "forge_children", (4242, True)),),
    ))
    assert result.integrity == "passed"
    assert result.raw_sum == (plaintext_sum(world, 1) + 4242) % M


def test_trigger_round_delays_activation():
    scenario = Scenario(seed=75, n=6, generator="recursive", rounds=3, trigger_round=3,
                        compromises=(CompromiseSpec(3, "forge_children", (5,)),))
    world = World(scenario)
    results = world.run()
    assert [r.integrity for r in results] == ["passed", "passed", "attested"]


# === forge_own ==============================================================


def test_forge_own_passes_with_exact_deviation():
    base = Scenario(seed=76, n=10, generator="recursive")
    honest_world, honest = run_one(base)
    delta = 500  # raw units; readings here never sit that close to the cap
    forged_world, forged = run_one(dataclasses.replace(
        base, compromises=(CompromiseSpec(6, "forge_own", (delta,)),)))
    assert forged.integrity == "passed"
    assert forged.report is None
    assert (forged.raw_sum - honest.raw_sum) % M == delta


def test_forge_own_out_of_range_rejected_at_encoding():
    world = World(Scenario(seed=77, n=4, generator="star",
                           compromises=(CompromiseSpec(1, "forge_own", (10**9,)),)))
    node = world.nodes[1]
    with pytest.raises(ReadingOutOfRange):
        node.sense_raw(1)


def test_forge_own_zero_is_honest():
    base = Scenario(seed=78, n=5, generator="star")
    a = run_one(base)[1]
    b = run_one(dataclasses.replace(base, compromises=(CompromiseSpec(2, "forge_own", (0,)),)))[1]
    assert a == b


# === noncommit ==============================================================


def test_noncommit_fails_commitment_and_gets_no_second_chance():
    world, result = run_one(Scenario(seed=79, n=7, generator="recursive",
                                     compromises=(CompromiseSpec(2, "noncommit", (555,)),)))
    transcript = {nid: (c, ok) for nid, c, ok in result.report.transcript}
    assert transcript[2][0] is False
    assert 2 in result.report.non_committed
    assert 2 in result.report.outliers
    assert world.bs.registry[2].status == "outlier"


def test_honest_probe_commitment_holds():
    world, result = run_one(Scenario(seed=80, n=6, generator="recursive", force_attest=True))
    assert all(committed and ok for _, committed, ok in result.report.transcript)


# === replay =================================================================


def test_replayed_packet_rejected_by_parent_channel():
    # Replayer re-sends its round-1 wire bytes from round 2 on; the parent's
    # counter check drops them and the subtree vanishes from the round.
    scenario = Scenario(seed=81, n=4, generator="path", rounds=3, trigger_round=2,
                        compromises=(CompromiseSpec(3, "replay", (1,)),))
    world = World(scenario)
    r1, r2, r3 = world.run()
    assert r1.participants == frozenset({1, 2, 3, 4})
    assert r2.participants == frozenset({1, 2})  # 3 replayed, its subtree lost
    assert r2.integrity == "passed"
    assert r3.participants == frozenset({1, 2})
    assert world.nodes[2].state.unresponsive == {3}


def test_replay_at_station_channel_rejected_the_same_way():
    scenario = Scenario(seed=82, n=3, generator="star", rounds=2, trigger_round=2,
                        compromises=(CompromiseSpec(2, "replay", (1,)),))
    world = World(scenario)
    _, r2 = world.run()
    assert r2.participants == frozenset({1, 3})
    assert r2.integrity == "passed"


def test_stale_payload_under_fresh_counter_fails_auth():
    w1, w2 = World(Scenario(seed=83, n=2, generator="path")), World(Scenario(seed=83, n=2, generator="path"))
    for w in (w1, w2):
        w.nodes[1].handle_query(1, "sum")
        w.nodes[2].handle_query(1, "sum")
    _, payload = w2.nodes[2].emit()
    sender, counter, parts, sealed, tag = wire.decode_agg_body(wire.parse_frame(payload)[1])
    crafted = wire.encode_agg_body(sender, counter + 5, parts, sealed, tag)
    with pytest.raises(AuthFailure):
        w1.nodes[1].aggregate_child(crafted)
    assert 2 in w1.nodes[1].state.unresponsive


# === drop_child =============================================================


def test_drop_child_excludes_subtree_and_round_still_passes():
    world, result = run_one(Scenario(seed=84, n=5, generator="path",
                                     compromises=(CompromiseSpec(2, "drop_child", (3,)),)))
    assert result.integrity == "passed"
    assert result.participants == frozenset({1, 2})


def test_drop_child_requires_actual_child():
    with pytest.raises(ScenarioInvalid):
        World(Scenario(seed=85, n=5, generator="star",
                       compromises=(CompromiseSpec(2, "drop_child", (3,)),)))


def test_plan_validation():
    with pytest.raises(ScenarioInvalid):
        World(Scenario(seed=86, n=3, generator="star",
                       compromises=(CompromiseSpec(9, "forge_children", (1,)),)))
    with pytest.raises(ScenarioInvalid):
        World(Scenario(seed=87, n=3, generator="star",
                       compromises=(CompromiseSpec(1, "mystery", ()),)))
    with pytest.raises(ScenarioInvalid):
        World(Scenario(seed=88, n=3, generator="star", trigger_round=1,
                       compromises=(CompromiseSpec(1, "replay", (1,)),)))


# === Influence bound ========================================================


def test_undetected_deviation_attributable_to_forge_own_only():
    """Sweep mixed attack plans; any deviation that survives undetected must
    equal the sum of in-range own-reading shifts of the compromised set."""
    plans = [
        (CompromiseSpec(2, "forge_own", (100,)),),
        (CompromiseSpec(2, "forge_own", (100,)), CompromiseSpec(5, "forge_own", (250,))),
        (CompromiseSpec(2, "forge_own", (100,)), CompromiseSpec(5, "forge_children", (10**6,))),
        (CompromiseSpec(3, "forge_children", (77,)),),
    ]
    for plan in plans:
        base = Scenario(seed=89, n=8, generator="recursive")
        honest_world, honest = run_one(base)
        world, result = run_one(dataclasses.replace(base, compromises=plan))
        own_shift = sum(s.args[0] for s in plan if s.kind == "forge_own")
        if result.integrity == "passed":
            assert (result.raw_sum - honest.raw_sum) % M == own_shift % M
        else:
            # detected: the attested value covers survivors only, and it must
            # match their plaintext readings plus surviving own-shifts
            kept = result.participants
            kept_shift = sum(s.args[0] for s in plan if s.kind == "forge_own" and s.node_id in kept)
            assert result.raw_sum == (plaintext_sum(world, 1, kept) + kept_shift) % M


# === Eavesdropping ==========================================================


def test_edge_key_holder_sees_only_diffused_values():
    world = World(Scenario(seed=90, n=2, generator="path"))
    world.nodes[1].handle_query(1, "sum")
    world.nodes[2].handle_query(1, "sum")
    _, payload = world.nodes[2].emit()
    body = wire.parse_frame(payload)[1]
    d, dp = open_captured(world.prov.edge_keys[2], body)
    m = sensed_raw(world, 2, 1)
    assert d == crypto.diffuse(seed_of(world, 2, 1), m)
    assert d != m and dp != m  # concealed: seed offsets mask the reading
    assert crypto.undiffuse(d, seed_of(world, 2, 1)) == m  # only the key holder reverts


def test_same_reading_different_rounds_looks_unrelated():
    # Seeds evolve per round, so equal readings diffuse to different values.
    key = bytes(range(16))
    origin = 12345
    m = 777
    d1 = crypto.diffuse(crypto.seed_at(key, origin, 1), m)
    d2 = crypto.diffuse(crypto.seed_at(key, origin, 2), m)
    assert d1 != d2
