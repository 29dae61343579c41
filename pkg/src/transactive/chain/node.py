"""Single-threaded node: mempool, proposal schedule, acks, finality.

The node core never touches a socket or a clock of its own. A transport
feeds handle_message and a driver calls on_tick with the current time;
everything else is deterministic chain-state bookkeeping. A block is
final once more than half the committee has acknowledged it. A node that
receives a block from beyond its own tip asks the sender for the missing
range, so late joiners catch up instead of rejecting everything.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

from .core import (
    Block,
    BlockLog,
    ChainState,
    Genesis,
    InvalidBlockError,
    Mempool,
    Tx,
    apply_block,
    build_block,
)
from .encoding import (
    CALL_VOTE,
    MsgKind,
    WireMessage,
    decode_ack,
    decode_block,
    decode_block_request,
    decode_call,
    decode_tx,
    encode_ack,
    encode_block,
    encode_block_request,
    encode_tx,
    DecodeError,
)
from .keys import KeyPair

VALIDATOR = "validator"
NORMAL = "normal"

# at most this many blocks go out per sync request
SYNC_BATCH = 64
# blocks from beyond the tip kept while the gap is backfilled
FUTURE_CAP = 16

Broadcast = Callable[[WireMessage], object]
Unicast = Callable[[str, WireMessage], object]


@dataclass
class NodeStats:
    blocks_applied: int = 0
    blocks_rejected: int = 0
    txs_seen: int = 0
    txs_rejected: int = 0


class Node:
    def __init__(
        self,
        keypair: KeyPair,
        genesis: Genesis,
        role: str = VALIDATOR,
        record_log: bool = False,
    ):
        if role not in (VALIDATOR, NORMAL):
            raise ValueError(f"unknown role {role!r}")
        self.keypair = keypair
        self.account = keypair.account
        self.role = role
        self.genesis = genesis
        self.state = ChainState(genesis)
        self.mempool = Mempool()
        self.stats = NodeStats()
        self.block_log: BlockLog | None = BlockLog(genesis) if record_log else None
        self._broadcast: Broadcast = lambda msg: None
        self._unicast: Unicast | None = None

        self._window_start: float | None = None  # set on the first tick
        self.attempt = 0
        self._proposed: tuple[int, int] | None = None
        self._acks: dict[tuple[int, bytes], set[str]] = {}
        self._applied: dict[tuple[int, bytes], Block] = {}
        self._by_height: dict[int, Block] = {}
        self._future: dict[int, Block] = {}
        self._next_sync_at = float("-inf")
        self._stashed: list[Block] = []
        self._final_keys: set[tuple[int, bytes]] = set()
        self.finalized_height = 0
        self.finalized_at: dict[str, float] = {}

    # -- wiring ----------------------------------------------------------

    def set_broadcast(self, fn: Broadcast) -> None:
        self._broadcast = fn

    def set_unicast(self, fn: Unicast) -> None:
        self._unicast = fn

    def _send(self, dest: str, msg: WireMessage) -> None:
        # without a unicast path the reply just goes to everyone; peers
        # that already hold the blocks drop them as stale
        if self._unicast is not None:
            self._unicast(dest, msg)
        else:
            self._broadcast(msg)

    # -- inbound ---------------------------------------------------------

    def handle_message(self, msg: WireMessage, now: float) -> None:
        if msg.kind in (MsgKind.TX_BROADCAST, MsgKind.VOTE_BROADCAST):
            try:
                tx = decode_tx(msg.payload)
            except DecodeError:
                self.stats.txs_rejected += 1
                return
            self.stats.txs_seen += 1
            ok, _ = self.mempool.submit(self.state, tx)
            if not ok:
                self.stats.txs_rejected += 1
        elif msg.kind == MsgKind.BLOCK_BROADCAST:
            try:
                block = decode_block(msg.payload)
            except DecodeError:
                self.stats.blocks_rejected += 1
                return
            self._receive_block(block, now, sender=msg.sender)
        elif msg.kind == MsgKind.ACK:
            try:
                height, block_hash = decode_ack(msg.payload)
            except DecodeError:
                return
            self._record_ack(msg.sender, height, block_hash, now)
        elif msg.kind == MsgKind.BLOCK_REQUEST:
            try:
                from_height, to_height = decode_block_request(msg.payload)
            except DecodeError:
                return
            self._serve_blocks(msg.sender, from_height, to_height)
        elif msg.kind == MsgKind.BLOCK_RESPONSE:
            try:
                block = decode_block(msg.payload)
            except DecodeError:
                self.stats.blocks_rejected += 1
                return
            self._receive_block(block, now, sender=msg.sender, synced=True)

    def submit_tx(self, tx: Tx) -> tuple[bool, str]:
        """Local client entry: pool the tx and gossip it to peers."""
        ok, reason = self.mempool.submit(self.state, tx)
        if ok:
            kind = MsgKind.TX_BROADCAST
            try:
                if decode_call(tx.call)[0] == CALL_VOTE:
                    kind = MsgKind.VOTE_BROADCAST
            except DecodeError:
                pass
            self._broadcast(
                WireMessage(kind=kind, sender=self.account, payload=encode_tx(tx))
            )
        return ok, reason

    # -- block flow ------------------------------------------------------

    def _receive_block(
        self,
        block: Block,
        now: float,
        sender: str | None = None,
        synced: bool = False,
    ) -> None:
        if block.height > self.state.height + 1:
            # we are behind; hold the block and ask its sender to backfill
            if block.height in self._future or len(self._future) < FUTURE_CAP:
                self._future[block.height] = block
            if sender is not None:
                self._request_backfill(sender, block.height - 1, now)
            return
        if block.height != self.state.height + 1:
            return  # stale duplicate
        if synced:
            # backfilled history: our local skip counter says nothing about
            # which attempt was live back then, so any committee member passes
            allowed_attempts = len(self.state.validators) - 1
            allowed = set(self.state.validators)
        else:
            allowed_attempts = self.attempt
            allowed = {
                self.state.proposer_for(block.height, a)
                for a in range(self.attempt + 1)
            }
        if block.proposer not in allowed:
            # rejected now; kept briefly in case our own skip timeout is
            # about to legitimize the same proposer
            self.stats.blocks_rejected += 1
            if block.proposer in self.state.validators and len(self._stashed) < 4:
                self._stashed.append(block)
            return
        try:
            apply_block(self.state, block, allowed_attempts=allowed_attempts)
        except InvalidBlockError:
            self.stats.blocks_rejected += 1
            return
        self._committed(block, now)

    def _request_backfill(self, source: str, to_height: int, now: float) -> None:
        if now < self._next_sync_at:
            return
        self._next_sync_at = now + 2 * self.genesis.config.block_interval_ms
        self._send(
            source,
            WireMessage(
                kind=MsgKind.BLOCK_REQUEST,
                sender=self.account,
                payload=encode_block_request(self.state.height + 1, to_height),
            ),
        )

    def probe_sync(self, accounts: Iterable[str]) -> None:
        """Ask peers for anything past our tip; silence means we are current.

        Drivers call this once connectivity is established, before the
        first tick, so a joining node learns the chain head instead of
        proposing from a stale height.
        """
        payload = encode_block_request(
            self.state.height + 1, self.state.height + SYNC_BATCH
        )
        for account in accounts:
            if account != self.account:
                self._send(
                    account,
                    WireMessage(
                        kind=MsgKind.BLOCK_REQUEST,
                        sender=self.account,
                        payload=payload,
                    ),
                )

    def _serve_blocks(self, requester: str, from_height: int, to_height: int) -> None:
        to_height = min(to_height, self.state.height, from_height + SYNC_BATCH - 1)
        for height in range(max(from_height, 1), to_height + 1):
            block = self._by_height.get(height)
            if block is None:
                return
            self._send(
                requester,
                WireMessage(
                    kind=MsgKind.BLOCK_RESPONSE,
                    sender=self.account,
                    payload=encode_block(block),
                ),
            )

    def _committed(self, block: Block, now: float) -> None:
        self.stats.blocks_applied += 1
        self.mempool.drop_committed(block)
        if self.block_log is not None:
            self.block_log.append(block)
        self.attempt = 0
        self._window_start = now
        self._proposed = None
        self._stashed = [b for b in self._stashed if b.height > block.height]
        key = (block.height, block.block_hash)
        self._applied[key] = block
        self._by_height[block.height] = block
        if self.role == VALIDATOR:
            self._acks.setdefault(key, set()).add(self.account)
            self._broadcast(
                WireMessage(
                    kind=MsgKind.ACK,
                    sender=self.account,
                    payload=encode_ack(block.height, block.block_hash),
                )
            )
        self._check_finality(key, now)
        if self._future:
            self._future = {h: b for h, b in self._future.items() if h > block.height}
        held = self._future.pop(block.height + 1, None)
        if held is not None:
            self._receive_block(held, now, synced=True)

    def _record_ack(self, sender: str, height: int, block_hash: bytes, now: float) -> None:
        if sender not in self.state.validators:
            return
        key = (height, block_hash)
        self._acks.setdefault(key, set()).add(sender)
        self._check_finality(key, now)
        if height > self.state.height and sender != self.account:
            # someone acked a block past our tip, so we are behind
            self._request_backfill(sender, height, now)

    def _check_finality(self, key: tuple[int, bytes], now: float) -> None:
        block = self._applied.get(key)
        if block is None or key in self._final_keys:
            return
        votes = len(self._acks.get(key, ()))
        if 2 * votes > len(self.state.validators):
            self._final_keys.add(key)
            self.finalized_height = max(self.finalized_height, block.height)
            for tx in block.tx_list:
                self.finalized_at[tx.tx_id] = now

    # -- clock -----------------------------------------------------------

    def on_tick(self, now: float) -> None:
        interval = self.genesis.config.block_interval_ms
        timeout = self.genesis.config.effective_proposer_timeout_ms
        if self._window_start is None:
            self._window_start = now
        if now - self._window_start > timeout:
            # in-turn proposer silent for too long; move to the next one
            self.attempt += 1
            self._window_start = now - interval  # next proposer may act now
            stashed, self._stashed = self._stashed, []
            for block in stashed:
                self._receive_block(block, now)
        if self.role != VALIDATOR:
            return
        height = self.state.height + 1
        if self.state.proposer_for(height, self.attempt) != self.account:
            return
        if self._proposed == (height, self.attempt):
            return
        if now - self._window_start < interval:
            return
        txs = self.mempool.take_for_block(
            self.state, self.genesis.config.max_block_txs
        )
        block = build_block(self.state, self.account, txs, timestamp_ms=int(now))
        self._proposed = (height, self.attempt)
        apply_block(self.state, block, allowed_attempts=self.attempt)
        self._broadcast(
            WireMessage(
                kind=MsgKind.BLOCK_BROADCAST,
                sender=self.account,
                payload=encode_block(block),
            )
        )
        self._committed(block, now)


def join_sim_network(node: Node, net) -> None:
    """Bind a node to a SimNetwork under its account id."""
    net.join(node.account, node.handle_message, node.on_tick)
    node.set_broadcast(lambda msg: net.broadcast(node.account, msg))
    node.set_unicast(lambda dest, msg: net.send(node.account, dest, msg))
