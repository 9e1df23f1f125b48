"""Shared oracles for the test suite.

The oracles deliberately avoid the aggregation pipeline: readings are
recomputed per node from provisioning material, seeds are replayed with a
plain loop, and sums are taken in plaintext.  Tests then compare the protocol
output against these independent routes.
"""

from __future__ import annotations

import random

from concealed_agg import crypto
from concealed_agg.simulator import Scenario, World


def sensed_raw(world: World, nid: int, round_no: int) -> int:
    """The raw reading node nid senses in round_no (honest sensing path)."""
    return crypto.sense_raw(world.prov.sense_keys[nid], round_no, world.codec.max_raw)


def plaintext_sum(world: World, round_no: int, participants=None) -> int:
    """Plain mod-M sum of raw readings, bypassing diffusion entirely."""
    ids = world.tree.sensor_ids if participants is None else sorted(participants)
    return sum(sensed_raw(world, nid, round_no) for nid in ids) & crypto.MASK


def seed_of(world: World, nid: int, round_no: int, prime: bool = False) -> int:
    key, key_prime = world.prov.node_keys[nid]
    return crypto.seed_at(key_prime if prime else key, world.prov.origins[nid], round_no)


def honest_world(n: int = 6, seed: int = 1, rounds: int = 1, generator: str = "recursive", **kw) -> World:
    return World(Scenario(seed=seed, rounds=rounds, n=n, generator=generator, **kw))


def rng(seed: int = 0) -> random.Random:
    return random.Random(seed)
