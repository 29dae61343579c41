"""Trading client that drives the ADMM loop through the ledger.

Each prosumer's trade row becomes a signed func_b transaction; dual
state is read back from a local replica node. The engine cannot tell
this coordinator from the in-process one: both quantize rows the same
way and both talk to the same contract code, so a chain-backed run
commits the exact integers an in-process run would.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..admm.coordinator import (
    CoordinatorStatus,
    CoordinatorTimeout,
    CoordinatorView,
    _rows_to_floats,
    quantize_trade_row,
)
from ..fixedpoint import SCALE
from .core import ChainConfig, Genesis, make_func_b_tx
from .keys import KeyPair, deterministic_keypair
from .node import NORMAL, VALIDATOR, Node, join_sim_network

Pump = Callable[[Callable[[], bool], float], bool]


class ChainCoordinator:
    """CoordinatorPort backed by a replica node and prosumer keys.

    pump(cond, max_ms) must advance the underlying network until cond()
    holds or the budget runs out; the sim network's run_until fits
    directly and a socket deployment can poll wall clock.
    """

    def __init__(self, node: Node, prosumer_keys: list[KeyPair], pump: Pump):
        self.node = node
        self.keys = list(prosumer_keys)
        self.pump = pump
        participants = node.state.contract.participants
        if tuple(k.account for k in self.keys) != tuple(participants):
            raise ValueError("prosumer keys do not match registered participants")
        self._nonces = {
            k.account: node.state.nonces.get(k.account, 0) for k in self.keys
        }
        self._submitted: set[int] = set()
        interval = node.genesis.config.block_interval_ms
        # a round must land within the contract's own straggler window
        self._barrier_budget_ms = (node.genesis.round_timeout + 5) * interval

    @property
    def contract(self):
        return self.node.state.contract

    def read_duals(self, u: int) -> CoordinatorView:
        view = self.contract.func_c(self.keys[u].account)
        return CoordinatorView(
            p_aux_row=_rows_to_floats(view.p_aux_row),
            lam_row=_rows_to_floats(view.lam_row),
            iteration=view.iteration,
            converged=view.converged,
        )

    def submit_trades(self, u: int, k: int, p_row: np.ndarray) -> None:
        key = self.keys[u]
        rows = quantize_trade_row(p_row, u)
        tx = make_func_b_tx(key, self._nonces[key.account], k, rows)
        ok, reason = self.node.submit_tx(tx)
        if not ok:
            raise CoordinatorTimeout(f"tx rejected for prosumer {u}: {reason}")
        self._nonces[key.account] += 1
        self._submitted.add(u)
        if len(self._submitted) == len(self.keys):
            self._submitted.clear()
            if not self.pump(lambda: self.contract.k > k, self._barrier_budget_ms):
                raise CoordinatorTimeout(
                    f"round {k} did not commit within {self._barrier_budget_ms} ms"
                )

    def status(self) -> CoordinatorStatus:
        res = self.contract.residual_m
        return CoordinatorStatus(
            iteration=self.contract.k,
            converged=self.contract.converged,
            residual=None if res is None else res / SCALE,
        )


def launch_sim_trading_network(
    num_prosumers: int,
    num_validators: int = 3,
    rho: float = 0.5,
    epsilon: float = 1e-6,
    horizon: int = 24,
    block_interval_ms: int = 50,
    seed: int = 0,
    record_log: bool = False,
):
    """Validators plus one replica client on a SimNetwork.

    Returns (network, validator nodes, client node, coordinator).
    """
    from ..transport import LatencyModel, SimNetwork

    vkeys = [deterministic_keypair(f"sim-validator-{i}") for i in range(num_validators)]
    pkeys = [deterministic_keypair(f"sim-prosumer-{u}") for u in range(num_prosumers)]
    genesis = Genesis(
        chain_id=f"sim-trading-{num_prosumers}p-{num_validators}v",
        committee=tuple(k.account for k in vkeys),
        participants=tuple(k.account for k in pkeys),
        rho=rho,
        epsilon=epsilon,
        horizon=horizon,
        config=ChainConfig(block_interval_ms=block_interval_ms),
    )
    net = SimNetwork(
        latency=LatencyModel(base_ms=2.0, jitter_ms=1.0, seed=seed), tick_ms=5.0
    )
    validators = [
        Node(k, genesis, role=VALIDATOR, record_log=record_log and i == 0)
        for i, k in enumerate(vkeys)
    ]
    client = Node(deterministic_keypair("sim-client"), genesis, role=NORMAL)
    for node in validators + [client]:
        join_sim_network(node, net)
    coordinator = ChainCoordinator(client, pkeys, pump=net.run_until)
    return net, validators, client, coordinator
