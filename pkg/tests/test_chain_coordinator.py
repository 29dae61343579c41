"""Chain-backed ADMM runs against the in-process reference."""

import numpy as np
import pytest

from transactive.admm import AdmmConfig, InProcessCoordinator, run_admm
from transactive.chain.client import ChainCoordinator, launch_sim_trading_network
from transactive.chain.keys import deterministic_keypair
from transactive.model import BatterySpec, ProsumerProfile, Tariff

T = 24


def flat(x):
    return np.full(T, float(x))


def bell(total, center, width=6.0):
    t = np.arange(T)
    shape = np.exp(-0.5 * ((t - center) / width) ** 2)
    return total * shape / shape.sum()


def pair_profiles():
    return [
        ProsumerProfile(id=0, inflexible=flat(0.6), preferred_flexible=flat(1.0),
                        renewable_avail=bell(30.0, center=9.0), battery=BatterySpec()),
        ProsumerProfile(id=1, inflexible=flat(0.8), preferred_flexible=flat(1.2),
                        renewable_avail=bell(18.0, center=16.0), battery=BatterySpec()),
    ]


def make_tariff():
    return Tariff(alpha=0.3, beta=0.12, pi_p2p=0.14, pi_as=flat(0.02), wear_price=0.8)


def test_chain_run_matches_in_process_exactly():
    profiles = pair_profiles()
    tariff = make_tariff()
    config = AdmmConfig()

    local = run_admm(profiles, tariff, config, InProcessCoordinator(2, config.rho, config.epsilon))
    net, validators, client, coord = launch_sim_trading_network(
        num_prosumers=2, num_validators=3, rho=config.rho, epsilon=config.epsilon
    )
    chained = run_admm(profiles, tariff, config, coord)

    assert local.converged and chained.converged
    assert not chained.aborted
    assert chained.iterations == local.iterations
    assert np.array_equal(chained.trades, local.trades)
    assert np.array_equal(chained.local_trades, local.local_trades)
    for a, b in zip(local.history, chained.history):
        assert a.residual == b.residual
    # the ledger really ran it: every round barrier happened in a block
    assert client.state.height > 0
    assert client.state.contract.k == local.iterations
    net.run_for(500)  # let the final block reach every validator
    assert all(v.state.contract.converged for v in validators)


def test_chain_coordinator_timeout_aborts_run():
    profiles = pair_profiles()[:1]
    tariff = make_tariff()
    net, validators, client, coord = launch_sim_trading_network(
        num_prosumers=1, num_validators=3
    )
    for v in validators:
        net.set_down(v.account, True)
    result = run_admm(profiles, tariff, AdmmConfig(max_iterations=5), coord)
    assert result.aborted and not result.converged
    assert result.history == []


def test_chain_coordinator_requires_matching_keys():
    net, validators, client, coord = launch_sim_trading_network(
        num_prosumers=2, num_validators=3
    )
    wrong = [deterministic_keypair("sim-prosumer-1"), deterministic_keypair("sim-prosumer-0")]
    with pytest.raises(ValueError, match="participants"):
        ChainCoordinator(client, wrong, pump=net.run_until)


def test_solo_prosumer_converges_on_chain():
    profiles = pair_profiles()[:1]
    tariff = make_tariff()
    net, validators, client, coord = launch_sim_trading_network(
        num_prosumers=1, num_validators=3
    )
    result = run_admm(profiles, tariff, AdmmConfig(), coord)
    assert result.converged and result.iterations == 1
    assert np.all(result.trades == 0.0)
