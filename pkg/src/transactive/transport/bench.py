"""Confirmation-delay and throughput measurement on the simulated chain.

Both measurements run on the virtual clock, so results are exact
functions of the configuration and seed rather than of host load. A
transaction counts as confirmed when the client replica has seen a
majority of validator acks for the block containing it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..chain.core import ChainConfig, Genesis, make_noop_tx
from ..chain.keys import deterministic_keypair
from ..chain.node import NORMAL, VALIDATOR, Node, join_sim_network
from .bus import LatencyModel, SimNetwork


@dataclass(frozen=True)
class TcdReport:
    committee_size: int
    block_interval_ms: int
    samples_ms: tuple[float, ...]
    censored: int

    @property
    def mean_ms(self) -> float:
        return sum(self.samples_ms) / len(self.samples_ms) if self.samples_ms else float("nan")

    @property
    def max_ms(self) -> float:
        return max(self.samples_ms) if self.samples_ms else float("nan")


@dataclass(frozen=True)
class TpsPoint:
    offered_tps: float
    confirmed_tps: float


@dataclass(frozen=True)
class TpsReport:
    committee_size: int
    block_interval_ms: int
    max_block_txs: int
    points: tuple[TpsPoint, ...]

    @property
    def capacity_tps(self) -> float:
        return self.max_block_txs / (self.block_interval_ms / 1000.0)

    @property
    def plateau_tps(self) -> float:
        return max(p.confirmed_tps for p in self.points) if self.points else 0.0


def _launch_bench_net(
    committee_size: int,
    block_interval_ms: int,
    max_block_txs: int,
    seed: int,
):
    vkeys = [deterministic_keypair(f"bench-validator-{i}") for i in range(committee_size)]
    client_key = deterministic_keypair("bench-client")
    genesis = Genesis(
        chain_id=f"bench-{committee_size}v-{block_interval_ms}ms",
        committee=tuple(k.account for k in vkeys),
        participants=(client_key.account,),
        horizon=4,
        config=ChainConfig(
            block_interval_ms=block_interval_ms, max_block_txs=max_block_txs
        ),
    )
    net = SimNetwork(
        latency=LatencyModel(base_ms=2.0, jitter_ms=1.0, seed=seed), tick_ms=5.0
    )
    validators = [Node(k, genesis, role=VALIDATOR) for k in vkeys]
    client = Node(deterministic_keypair("bench-observer"), genesis, role=NORMAL)
    for node in validators + [client]:
        join_sim_network(node, net)
    return net, client, client_key


def measure_tcd(
    committee_size: int = 5,
    num_samples: int = 20,
    block_interval_ms: int = 100,
    seed: int = 0,
    timeout_intervals: int = 20,
) -> TcdReport:
    """Submit txs one at a time to an idle chain and time finality."""
    net, client, key = _launch_bench_net(
        committee_size, block_interval_ms, max_block_txs=256, seed=seed
    )
    rng = random.Random(seed ^ 0x5EED)
    samples: list[float] = []
    censored = 0
    net.run_for(2 * block_interval_ms)  # let the chain start producing
    for nonce in range(num_samples):
        net.run_for(rng.random() * block_interval_ms)  # random phase
        tx = make_noop_tx(key, nonce=nonce, tag=nonce)
        sent_at = net.now
        ok, reason = client.submit_tx(tx)
        if not ok:
            raise RuntimeError(f"bench tx rejected: {reason}")
        done = net.run_until(
            lambda: tx.tx_id in client.finalized_at,
            timeout_intervals * block_interval_ms,
        )
        if done:
            samples.append(client.finalized_at[tx.tx_id] - sent_at)
        else:
            censored += 1
    return TcdReport(
        committee_size=committee_size,
        block_interval_ms=block_interval_ms,
        samples_ms=tuple(samples),
        censored=censored,
    )


def measure_tps(
    offered_rates_tps: list[float],
    committee_size: int = 5,
    block_interval_ms: int = 200,
    max_block_txs: int = 32,
    duration_s: float = 5.0,
    warmup_s: float = 1.0,
    seed: int = 0,
) -> TpsReport:
    """Drive each offered rate on a fresh chain and count confirmations.

    Confirmed throughput is measured over the post-warmup window, with a
    drain margin afterwards so in-flight blocks still count.
    """
    points = []
    for rate in offered_rates_tps:
        net, client, key = _launch_bench_net(
            committee_size, block_interval_ms, max_block_txs, seed
        )
        total = int(rate * (warmup_s + duration_s))
        period_ms = 1000.0 / rate
        state = {"next": 0}

        def loadgen(now: float) -> None:
            while state["next"] < total and state["next"] * period_ms <= now:
                nonce = state["next"]
                client.submit_tx(make_noop_tx(key, nonce=nonce, tag=nonce))
                state["next"] += 1

        net.join("loadgen", lambda msg, now: None, loadgen)
        horizon_ms = (warmup_s + duration_s) * 1000.0
        net.run_for(horizon_ms + 10 * block_interval_ms)  # drain margin
        window_start = warmup_s * 1000.0
        window_end = window_start + duration_s * 1000.0
        confirmed = sum(
            1 for t in client.finalized_at.values() if window_start < t <= window_end
        )
        points.append(
            TpsPoint(offered_tps=rate, confirmed_tps=confirmed / duration_s)
        )
    return TpsReport(
        committee_size=committee_size,
        block_interval_ms=block_interval_ms,
        max_block_txs=max_block_txs,
        points=tuple(points),
    )
