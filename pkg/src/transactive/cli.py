"""Command-line entry point.

solve, validate, and bench go through the HTTP service layer: an
in-process ASGI client by default, or a remote server with --url.
node runs the long-lived chain process directly over TCP sockets.
"""

from __future__ import annotations

import json
import signal
import sys
import time
from pathlib import Path

import click
import httpx
import numpy as np
import yaml

from .chain import Genesis, KeyPair, deterministic_keypair, keypair_from_seed, private_seed
from .chain.core import ChainConfig
from .chain.node import NORMAL, VALIDATOR, Node
from .fixtures import DATA_DIR, bundled_names, bundled_path
from .model import Schedule
from .scenario import ScenarioConfig, ScenarioError, load_scenario, write_results
from .service.schemas import (
    AdmmBody,
    BatteryBody,
    BenchRequest,
    ChainBody,
    ProsumerBody,
    SolveRequest,
    TariffBody,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NOT_CONVERGED = 2


def make_client(url: str | None) -> httpx.Client:
    if url:
        return httpx.Client(base_url=url, timeout=600.0)
    # same request/response path as a remote server, minus the socket
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def resolve_scenario(name_or_path: str) -> Path:
    path = Path(name_or_path)
    if path.exists():
        return path if path.is_dir() else path.parent
    try:
        return bundled_path(name_or_path)
    except FileNotFoundError:
        raise click.ClickException(
            f"no scenario at {name_or_path!r} and no bundled scenario of that name; "
            f"bundled: {', '.join(bundled_names())}"
        ) from None


def scenario_to_request(cfg: ScenarioConfig, mode: str) -> SolveRequest:
    return SolveRequest(
        mode=mode,
        prosumers=[
            ProsumerBody(
                id=p.id,
                inflexible=p.inflexible.tolist(),
                preferred_flexible=p.preferred_flexible.tolist(),
                renewable=p.renewable_avail.tolist(),
                battery=BatteryBody(
                    capacity=p.battery.capacity,
                    charge_limit=p.battery.charge_limit,
                    discharge_limit=p.battery.discharge_limit,
                    efficiency=p.battery.efficiency,
                    initial_soc=p.battery.initial_soc,
                ),
            )
            for p in cfg.profiles
        ],
        tariff=TariffBody(
            alpha=cfg.tariff.alpha,
            beta=cfg.tariff.beta,
            pi_p2p=cfg.tariff.pi_p2p,
            pi_as=[float(x) for x in cfg.tariff.pi_as],
            wear_price=cfg.tariff.wear_price,
        ),
        admm=AdmmBody(
            rho=cfg.admm.rho,
            epsilon=cfg.admm.epsilon,
            max_iterations=cfg.admm.max_iterations,
            trade_limit=cfg.admm.trade_limit,
        ),
        chain=ChainBody(
            validators=cfg.chain.validators,
            block_interval_ms=cfg.chain.block_interval_ms,
            seed=cfg.chain.seed,
        ),
    )


class _HistoryRow:
    def __init__(self, body: dict):
        self.k = body["k"]
        self.residual = body["residual"]
        self.total_cost = body["total_cost"]
        self.converged = body["converged"]


class _ResponseResult:
    """Adapts a /solve response body to the result-file writer."""

    def __init__(self, body: dict, id_order: list[int]):
        index = {pid: i for i, pid in enumerate(id_order)}
        self.schedules = []
        for sched in sorted(body["schedules"], key=lambda s: index[s["prosumer"]]):
            self.schedules.append(
                Schedule(
                    g=np.array(sched["g"]),
                    r=np.array(sched["r"]),
                    l_fl=np.array(sched["l_fl"]),
                    c=np.array(sched["c"]),
                    d=np.array(sched["d"]),
                    e_as=np.array(sched["e_as"]),
                )
            )
        num = len(id_order)
        self.trades = np.zeros((num, num, len(self.schedules[0].g)))
        for row in body["trades"]:
            self.trades[index[row["buyer"]], index[row["seller"]]] = row["energy"]
        self.history = [_HistoryRow(r) for r in body["history"]]
        self.converged = body["converged"]
        self.aborted = body["aborted"]
        self.total_cost = body["total_cost"]


@click.group()
def main() -> None:
    """Peer-to-peer energy scheduling on a proof-of-authority ledger."""


@main.command()
@click.argument("scenario")
@click.option("--mode", type=click.Choice(["centralized", "admm", "chain"]), default="admm")
@click.option("--rho", type=float, default=None, help="Override the scenario's penalty weight.")
@click.option("--epsilon", type=float, default=None, help="Override the stop threshold.")
@click.option("--max-iter", type=int, default=None, help="Override the iteration cap.")
@click.option("--out", type=click.Path(), default=None, help="Results directory (default results/<name>).")
@click.option("--url", default=None, help="Remote service URL; default solves in-process.")
def solve(scenario, mode, rho, epsilon, max_iter, out, url) -> None:
    """Schedule a scenario and write result files.

    Exits 0 on convergence, 2 on an iteration-cap stop, 1 on invalid input.
    """
    try:
        cfg = load_scenario(resolve_scenario(scenario))
    except ScenarioError as exc:
        click.echo(f"invalid scenario: {exc}", err=True)
        sys.exit(EXIT_INVALID)
    req = scenario_to_request(cfg, mode)
    if rho is not None:
        req.admm.rho = rho
    if epsilon is not None:
        req.admm.epsilon = epsilon
    if max_iter is not None:
        req.admm.max_iterations = max_iter

    with make_client(url) as client:
        resp = client.post("/solve", json=req.model_dump())
    if resp.status_code != 200:
        detail = resp.json().get("detail", resp.text)
        click.echo(f"solve failed: {detail}", err=True)
        sys.exit(EXIT_INVALID)
    body = resp.json()

    result = _ResponseResult(body, [p.id for p in cfg.profiles])
    out_dir = Path(out) if out else Path("results") / cfg.name
    write_results(out_dir, cfg.profiles, result)

    click.echo(f"mode        {body['mode']}")
    click.echo(f"iterations  {body['iterations']}")
    click.echo(f"total cost  {body['total_cost']:.6f}")
    click.echo(f"results in  {out_dir}")
    if body["aborted"]:
        click.echo("run aborted before convergence", err=True)
        sys.exit(EXIT_INVALID)
    if mode != "centralized" and not body["converged"]:
        click.echo("stopped at the iteration cap without converging", err=True)
        sys.exit(EXIT_NOT_CONVERGED)
    sys.exit(EXIT_OK)


@main.command()
@click.argument("scenario")
@click.option("--url", default=None, help="Remote service URL; default validates in-process.")
def validate(scenario, url) -> None:
    """Check a scenario directory against the schema; exit 0 if valid."""
    root = resolve_scenario(scenario)
    yaml_path = root / "scenario.yaml"
    if not yaml_path.exists():
        click.echo(f"invalid: {root} has no scenario.yaml", err=True)
        sys.exit(EXIT_INVALID)
    doc = yaml.safe_load(yaml_path.read_text()) or {}
    profiles_rel = doc.get("profiles_file", "profiles.tsv")
    profiles_path = root / profiles_rel
    payload = {
        "scenario_yaml": yaml_path.read_text(),
        "profiles_tsv": profiles_path.read_text() if profiles_path.exists() else "",
    }
    with make_client(url) as client:
        resp = client.post("/validate", json=payload)
    body = resp.json()
    if resp.status_code != 200 or not body["ok"]:
        click.echo(f"invalid: {body.get('error', resp.text)}", err=True)
        sys.exit(EXIT_INVALID)
    click.echo(f"ok: {body['name']} ({body['prosumers']} prosumers)")
    sys.exit(EXIT_OK)


@main.command()
def scenarios() -> None:
    """List the bundled scenarios."""
    for name in bundled_names():
        cfg = load_scenario(bundled_path(name))
        click.echo(f"{name:28s} {cfg.num_prosumers:2d} prosumers  {cfg.description}")


@main.command()
@click.option("--validators", default="5,10,20", help="Comma-separated committee sizes.")
@click.option("--rate", "rates", type=float, multiple=True, help="Offered tx rates; repeatable.")
@click.option("--duration", type=float, default=3.0, help="Seconds of simulated load per rate.")
@click.option("--interval", type=int, default=100, help="Block interval for the delay runs (ms).")
@click.option("--out", type=click.Path(), default="results/bench", help="Report directory.")
@click.option("--url", default=None, help="Remote service URL; default runs in-process.")
def bench(validators, rates, duration, interval, out, url) -> None:
    """Measure confirmation delay and throughput; write table files."""
    sizes = [int(s) for s in validators.split(",") if s]
    req = BenchRequest(
        committee_sizes=sizes,
        block_interval_ms=interval,
        rates=list(rates) or None,
        duration_s=duration,
    )
    with make_client(url) as client:
        resp = client.post("/bench", json=req.model_dump())
    if resp.status_code != 200:
        click.echo(f"bench failed: {resp.text}", err=True)
        sys.exit(EXIT_INVALID)
    body = resp.json()

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    click.echo("confirmation delay (ms)")
    click.echo(f"{'committee':>9}  {'mean':>8}  {'max':>8}")
    for row in body["tcd"]:
        with (out_dir / f"tcd_{row['committee_size']}.tsv").open("w") as fh:
            fh.write("# sample_ms\n")
            for sample in row["samples_ms"]:
                fh.write(f"{sample!r}\n")
        click.echo(f"{row['committee_size']:>9}  {row['mean_ms']:>8.2f}  {row['max_ms']:>8.2f}")
    click.echo("throughput (tx/s)")
    click.echo(f"{'committee':>9}  {'offered':>8}  {'confirmed':>9}")
    for row in body["tps"]:
        with (out_dir / f"tps_{row['committee_size']}.tsv").open("w") as fh:
            fh.write("# offered_tps\tconfirmed_tps\n")
            for offered, confirmed in zip(row["offered"], row["confirmed"]):
                fh.write(f"{offered!r}\t{confirmed!r}\n")
        for offered, confirmed in zip(row["offered"], row["confirmed"]):
            click.echo(f"{row['committee_size']:>9}  {offered:>8.1f}  {confirmed:>9.1f}")
        click.echo(
            f"{row['committee_size']:>9}  plateau {row['plateau_tps']:.1f}"
            f" of capacity {row['capacity_tps']:.1f}"
        )
    click.echo(f"reports in {out_dir}")


@main.command()
@click.option("--label", default=None, help="Derive deterministically from a label (demos only).")
@click.option("--out", type=click.Path(), required=True, help="Key file to write.")
def keygen(label, out) -> None:
    """Create an Ed25519 identity and write it as YAML."""
    keypair = deterministic_keypair(label) if label else KeyPair.generate()
    doc = {"account": keypair.account, "private_seed": private_seed(keypair).hex()}
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    click.echo(keypair.account)


@main.command()
@click.option("--chain-id", default="transactive-local")
@click.option("--committee", required=True, help="Comma-separated validator accounts or key files.")
@click.option("--participant", "participants", multiple=True, help="Trading account; repeatable.")
@click.option("--rho", type=float, default=0.5)
@click.option("--epsilon", type=float, default=1e-6)
@click.option("--round-timeout", type=int, default=30)
@click.option("--block-interval", type=int, default=1000, help="Milliseconds between blocks.")
@click.option("--max-block-txs", type=int, default=256)
@click.option("--out", type=click.Path(), required=True, help="Genesis file to write.")
def genesis(chain_id, committee, participants, rho, epsilon, round_timeout,
            block_interval, max_block_txs, out) -> None:
    """Write the founding document all nodes must share."""

    def to_account(token: str) -> str:
        if Path(token).exists():
            return yaml.safe_load(Path(token).read_text())["account"]
        return token

    if not participants:
        raise click.ClickException(
            "at least one --participant account is required; the trading "
            "contract is part of the founding state"
        )
    doc = Genesis(
        chain_id=chain_id,
        committee=tuple(to_account(t.strip()) for t in committee.split(",") if t.strip()),
        participants=tuple(to_account(p) for p in participants),
        rho=rho,
        epsilon=epsilon,
        round_timeout=round_timeout,
        config=ChainConfig(max_block_txs=max_block_txs, block_interval_ms=block_interval),
    )
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(doc.to_dict(), sort_keys=False))
    click.echo(f"genesis digest {doc.digest().hex()}")


@main.command()
@click.option("--role", type=click.Choice(["validator", "normal"]), default="normal")
@click.option("--keys", "keys_file", type=click.Path(exists=True), required=True)
@click.option("--genesis", "genesis_file", type=click.Path(exists=True), required=True)
@click.option("--listen", default="127.0.0.1:0", help="host:port to accept peers on.")
@click.option("--peers", default="", help="Comma-separated host:port list to dial.")
def node(role, keys_file, genesis_file, listen, peers) -> None:
    """Run a chain node until interrupted; one status line per block."""
    from .transport.socket import SocketTransport, mesh_ready

    def emit(doc: dict) -> None:
        # one JSON object per line, pushed out immediately for log followers
        click.echo(json.dumps(doc))
        sys.stdout.flush()

    key_doc = yaml.safe_load(Path(keys_file).read_text())
    keypair = keypair_from_seed(bytes.fromhex(key_doc["private_seed"]))
    gen = Genesis.from_dict(yaml.safe_load(Path(genesis_file).read_text()))
    node_role = VALIDATOR if role == "validator" else NORMAL
    if node_role is VALIDATOR and keypair.account not in gen.committee:
        raise click.ClickException("this account is not in the genesis committee")

    host, port = listen.rsplit(":", 1)
    transport = SocketTransport(keypair.account, gen.digest(), host=host, port=int(port))
    chain_node = Node(keypair, gen, role=node_role)
    chain_node.set_broadcast(transport.broadcast)
    chain_node.set_unicast(lambda dest, msg: transport.send(dest, msg))
    emit({"event": "listening", "addr": f"{transport.host}:{transport.port}",
          "account": keypair.account})
    for peer in (p.strip() for p in peers.split(",") if p.strip()):
        peer_host, peer_port = peer.rsplit(":", 1)
        try:
            account = transport.connect(peer_host, int(peer_port))
        except Exception as exc:
            emit({"event": "peer-failed", "peer": peer, "error": str(exc)})
            continue
        emit({"event": "peered", "peer": peer, "account": account})

    stop = {"flag": False}

    def on_signal(_sig, _frame):
        stop["flag"] = True

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)

    tick_s = min(0.01, gen.config.block_interval_ms / 1000.0 / 4)
    last_height = 0
    ready = False
    try:
        while not stop["flag"]:
            for msg, at_ms in transport.poll(tick_s):
                chain_node.handle_message(msg, at_ms)
            if not ready:
                peer_list = transport.peer_accounts
                if mesh_ready(chain_node, peer_list):
                    ready = True
                    chain_node.probe_sync(peer_list)
                    emit({"event": "ready"})
            if ready:
                chain_node.on_tick(time.monotonic() * 1000.0)
            if chain_node.state.height > last_height:
                last_height = chain_node.state.height
                emit(
                    {
                        "event": "block",
                        "height": last_height,
                        "finalized": chain_node.finalized_height,
                        "round": chain_node.state.contract.k,
                    }
                )
    finally:
        transport.close()


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8734)
def serve(host, port) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
