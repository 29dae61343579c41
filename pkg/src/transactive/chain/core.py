"""Ledger state machine: txs, blocks, committee votes, deterministic replay.

A block is applied in three steps: consume each transaction (signature
and nonce checked, call effects rolled back individually on failure),
age the trading round by one tick, then hash the full replicated state.
The state root therefore depends only on the genesis document and the
ordered block list, never on wall clocks or delivery order.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

from ..contract import ContractError, TradingContract
from .encoding import (
    CALL_FUNC_B,
    CALL_NOOP,
    CALL_VOTE,
    VOTE_ADD,
    VOTE_REMOVE,
    DecodeError,
    decode_block,
    decode_call,
    encode_block,
    encode_func_b_call,
    encode_noop_call,
    encode_tx,
    encode_vote_call,
    tx_signing_bytes,
)
from .keys import KeyPair, sign, verify


class ChainError(RuntimeError):
    pass


class InvalidTxError(ChainError):
    pass


class InvalidBlockError(ChainError):
    pass


@dataclass(frozen=True)
class Tx:
    sender: str
    nonce: int
    call: bytes
    signature: bytes

    @property
    def tx_id(self) -> str:
        return hashlib.sha256(encode_tx(self)).hexdigest()

    def signing_bytes(self) -> bytes:
        return tx_signing_bytes(self.sender, self.nonce, self.call)


@dataclass(frozen=True)
class Block:
    height: int
    proposer: str
    parent_hash: bytes
    tx_list: tuple[Tx, ...]
    state_root: bytes
    timestamp_ms: int

    @property
    def block_hash(self) -> bytes:
        return hashlib.sha256(encode_block(self)).digest()


@dataclass(frozen=True)
class Committee:
    """Read-only view of the validator set and the votes in flight."""

    validators: tuple[str, ...]
    pending_votes: dict[tuple[str, int], frozenset[str]]


@dataclass(frozen=True)
class ChainConfig:
    max_block_txs: int = 256
    block_interval_ms: int = 1000
    proposer_timeout_ms: int = 0  # 0 means 2 * block_interval_ms

    def __post_init__(self) -> None:
        if self.max_block_txs < 1:
            raise ValueError("max_block_txs must be >= 1")
        if self.block_interval_ms < 1:
            raise ValueError("block_interval_ms must be >= 1 ms")
        if self.proposer_timeout_ms < 0:
            raise ValueError("proposer_timeout_ms must be >= 0")

    @property
    def effective_proposer_timeout_ms(self) -> int:
        return self.proposer_timeout_ms or 2 * self.block_interval_ms


@dataclass(frozen=True)
class Genesis:
    """Shared founding document; its digest anchors peering and replay."""

    chain_id: str
    committee: tuple[str, ...]
    participants: tuple[str, ...]
    rho: float = 0.5
    epsilon: float = 1e-6
    horizon: int = 24
    round_timeout: int = 30
    config: ChainConfig = field(default_factory=ChainConfig)

    def __post_init__(self) -> None:
        if not self.committee:
            raise ValueError("committee must not be empty")
        if len(set(self.committee)) != len(self.committee):
            raise ValueError("duplicate committee member")

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "committee": list(self.committee),
            "participants": list(self.participants),
            "rho": self.rho,
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "round_timeout": self.round_timeout,
            "max_block_txs": self.config.max_block_txs,
            "block_interval_ms": self.config.block_interval_ms,
            "proposer_timeout_ms": self.config.proposer_timeout_ms,
        }

    @staticmethod
    def from_dict(data: dict) -> "Genesis":
        return Genesis(
            chain_id=data["chain_id"],
            committee=tuple(data["committee"]),
            participants=tuple(data["participants"]),
            rho=data["rho"],
            epsilon=data["epsilon"],
            horizon=data["horizon"],
            round_timeout=data["round_timeout"],
            config=ChainConfig(
                max_block_txs=data["max_block_txs"],
                block_interval_ms=data["block_interval_ms"],
                proposer_timeout_ms=data.get("proposer_timeout_ms", 0),
            ),
        )

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).digest()


def sign_tx(keypair: KeyPair, nonce: int, call: bytes) -> Tx:
    sig = sign(keypair, tx_signing_bytes(keypair.account, nonce, call))
    return Tx(sender=keypair.account, nonce=nonce, call=call, signature=sig)


def make_noop_tx(keypair: KeyPair, nonce: int, tag: int = 0) -> Tx:
    return sign_tx(keypair, nonce, encode_noop_call(tag))


def make_func_b_tx(keypair: KeyPair, nonce: int, k: int, rows: list[list[int]]) -> Tx:
    return sign_tx(keypair, nonce, encode_func_b_call(k, rows))


def make_vote_tx(keypair: KeyPair, nonce: int, action: int, candidate: str) -> Tx:
    return sign_tx(keypair, nonce, encode_vote_call(action, candidate))


class Mempool:
    """Pending txs in arrival order, keyed by (sender, nonce)."""

    def __init__(self, max_size: int = 10_000):
        self.max_size = max_size
        self._txs: dict[tuple[str, int], Tx] = {}

    def __len__(self) -> int:
        return len(self._txs)

    def submit(self, state: "ChainState", tx: Tx) -> tuple[bool, str]:
        key = (tx.sender, tx.nonce)
        if key in self._txs:
            return False, "duplicate (sender, nonce)"
        if len(self._txs) >= self.max_size:
            return False, "mempool full"
        if not verify(tx.sender, tx.signature, tx.signing_bytes()):
            return False, "bad signature"
        expected = state.nonces.get(tx.sender, 0)
        if tx.nonce < expected:
            return False, f"stale nonce {tx.nonce} < {expected}"
        self._txs[key] = tx
        return True, ""

    def take_for_block(self, state: "ChainState", limit: int) -> list[Tx]:
        """Applicable txs in arrival order; gapped nonces stay pooled."""
        picked: list[Tx] = []
        next_nonce = dict(state.nonces)
        progress = True
        while progress and len(picked) < limit:
            progress = False
            for key, tx in list(self._txs.items()):
                if len(picked) >= limit:
                    break
                if tx.nonce == next_nonce.get(tx.sender, 0) and tx not in picked:
                    picked.append(tx)
                    next_nonce[tx.sender] = tx.nonce + 1
                    del self._txs[key]
                    progress = True
        return picked

    def drop_committed(self, block: Block) -> None:
        for tx in block.tx_list:
            self._txs.pop((tx.sender, tx.nonce), None)
        # committed nonces also invalidate anything now stale
        latest: dict[str, int] = {}
        for tx in block.tx_list:
            latest[tx.sender] = max(latest.get(tx.sender, -1), tx.nonce)
        for key in list(self._txs):
            sender, nonce = key
            if nonce <= latest.get(sender, -1):
                del self._txs[key]


class ChainState:
    """Everything a node replicates: contract, committee, votes, nonces."""

    def __init__(self, genesis: Genesis):
        self.genesis = genesis
        self.contract = TradingContract(
            genesis.participants,
            rho=genesis.rho,
            epsilon=genesis.epsilon,
            horizon=genesis.horizon,
            round_timeout=genesis.round_timeout,
        )
        self.validators: list[str] = list(genesis.committee)
        self.pending_votes: dict[tuple[str, int], set[str]] = {}
        self.nonces: dict[str, int] = {}
        self.height = 0
        self.parent_hash = genesis.digest()

    def proposer_for(self, height: int, attempt: int = 0) -> str:
        return self.validators[(height + attempt) % len(self.validators)]

    def committee_view(self) -> Committee:
        return Committee(
            validators=tuple(self.validators),
            pending_votes={k: frozenset(v) for k, v in self.pending_votes.items()},
        )

    def state_root(self) -> bytes:
        votes = {
            f"{action}:{candidate}": sorted(voters)
            for (candidate, action), voters in sorted(self.pending_votes.items())
        }
        # height stays out of the root so an empty block leaves it unchanged
        doc = {
            "contract": self.contract.to_state_dict(),
            "validators": self.validators,
            "votes": votes,
            "nonces": dict(sorted(self.nonces.items())),
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).digest()

    def snapshot(self) -> dict:
        return {
            "contract": self.contract.snapshot(),
            "validators": list(self.validators),
            "votes": {k: set(v) for k, v in self.pending_votes.items()},
            "nonces": dict(self.nonces),
            "height": self.height,
            "parent_hash": self.parent_hash,
        }

    def restore(self, snap: dict) -> None:
        self.contract.restore(snap["contract"])
        self.validators = list(snap["validators"])
        self.pending_votes = {k: set(v) for k, v in snap["votes"].items()}
        self.nonces = dict(snap["nonces"])
        self.height = snap["height"]
        self.parent_hash = snap["parent_hash"]


def _execute_vote(state: ChainState, sender: str, fields: dict) -> None:
    if sender not in state.validators:
        raise InvalidTxError(f"voter {sender[:8]} is not a validator")
    candidate = fields["candidate"]
    action = fields["action"]
    if action == VOTE_ADD and candidate in state.validators:
        raise InvalidTxError("candidate already on the committee")
    if action == VOTE_REMOVE and candidate not in state.validators:
        raise InvalidTxError("candidate is not on the committee")
    if action == VOTE_REMOVE and len(state.validators) == 1:
        raise InvalidTxError("cannot empty the committee")
    voters = state.pending_votes.setdefault((candidate, action), set())
    voters.add(sender)  # a repeated vote lands here idempotently
    if len(voters) * 2 > len(state.validators):
        if action == VOTE_ADD:
            state.validators.append(candidate)
        else:
            state.validators.remove(candidate)
            # a departed validator's open votes no longer count
            for key in list(state.pending_votes):
                state.pending_votes[key].discard(candidate)
                if not state.pending_votes[key] or key[0] == candidate:
                    del state.pending_votes[key]
        state.pending_votes.pop((candidate, action), None)


def execute_call(state: ChainState, sender: str, call: bytes) -> None:
    """Run one contract call; raises on failure without partial effects."""
    try:
        selector, fields = decode_call(call)
    except DecodeError as exc:
        raise InvalidTxError(f"malformed call: {exc}") from exc
    if selector == CALL_NOOP:
        return
    if selector == CALL_FUNC_B:
        try:
            state.contract.func_b(sender, fields["k"], fields["rows"])
        except ContractError as exc:
            raise InvalidTxError(str(exc)) from exc
        return
    if selector == CALL_VOTE:
        _execute_vote(state, sender, fields)
        return
    raise InvalidTxError(f"unhandled selector {selector}")


@dataclass(frozen=True)
class TxReceipt:
    tx_id: str
    ok: bool
    error: str = ""


def _apply_txs(state: ChainState, txs: tuple[Tx, ...]) -> list[TxReceipt]:
    receipts = []
    for tx in txs:
        if not verify(tx.sender, tx.signature, tx.signing_bytes()):
            raise InvalidBlockError(f"tx {tx.tx_id[:8]} signature invalid")
        expected = state.nonces.get(tx.sender, 0)
        if tx.nonce != expected:
            raise InvalidBlockError(
                f"tx {tx.tx_id[:8]} nonce {tx.nonce}, expected {expected}"
            )
        state.nonces[tx.sender] = expected + 1
        # the call is sandboxed: a failure burns the nonce, nothing else
        snap_contract = state.contract.snapshot()
        snap_validators = list(state.validators)
        snap_votes = {k: set(v) for k, v in state.pending_votes.items()}
        try:
            execute_call(state, tx.sender, tx.call)
            receipts.append(TxReceipt(tx_id=tx.tx_id, ok=True))
        except InvalidTxError as exc:
            state.contract.restore(snap_contract)
            state.validators = snap_validators
            state.pending_votes = snap_votes
            receipts.append(TxReceipt(tx_id=tx.tx_id, ok=False, error=str(exc)))
    return receipts


def build_block(
    state: ChainState, proposer: str, txs: list[Tx], timestamp_ms: int
) -> Block:
    """Assemble a block whose root reflects applying txs to this state.

    The state is left untouched; the proposer commits its own block
    through apply_block like every other node.
    """
    if len(txs) > state.genesis.config.max_block_txs:
        raise ChainError("too many txs for one block")
    snap = state.snapshot()
    try:
        state.height += 1
        _apply_txs(state, tuple(txs))
        state.contract.tick()
        root = state.state_root()
    finally:
        state.restore(snap)
    return Block(
        height=state.height + 1,
        proposer=proposer,
        parent_hash=state.parent_hash,
        tx_list=tuple(txs),
        state_root=root,
        timestamp_ms=timestamp_ms,
    )


def apply_block(
    state: ChainState, block: Block, allowed_attempts: int = 0
) -> list[TxReceipt]:
    """Validate and commit a block, or raise leaving the state unchanged.

    allowed_attempts widens the acceptable proposer set to the next
    attempt+1 validators in round-robin order, for skip-on-timeout.
    """
    if block.height != state.height + 1:
        raise InvalidBlockError(
            f"height {block.height}, expected {state.height + 1}"
        )
    if block.parent_hash != state.parent_hash:
        raise InvalidBlockError("parent hash mismatch")
    allowed = {
        state.proposer_for(block.height, a) for a in range(allowed_attempts + 1)
    }
    if block.proposer not in allowed:
        raise InvalidBlockError(
            f"out-of-turn proposer {block.proposer[:8]} at height {block.height}"
        )
    if len(block.tx_list) > state.genesis.config.max_block_txs:
        raise InvalidBlockError("block exceeds max_block_txs")

    snap = state.snapshot()
    try:
        state.height = block.height
        receipts = _apply_txs(state, block.tx_list)
        state.contract.tick()
        root = state.state_root()
        if root != block.state_root:
            raise InvalidBlockError("state root mismatch")
    except Exception:
        state.restore(snap)
        raise
    state.parent_hash = block.block_hash
    return receipts


@dataclass
class BlockLog:
    """Genesis plus the committed blocks, for record and replay."""

    genesis: Genesis
    blocks: list[Block] = field(default_factory=list)

    def append(self, block: Block) -> None:
        self.blocks.append(block)

    def to_bytes(self) -> bytes:
        header = json.dumps(self.genesis.to_dict(), sort_keys=True).encode()
        out = [len(header).to_bytes(4, "big"), header]
        for block in self.blocks:
            raw = encode_block(block)
            out.append(len(raw).to_bytes(4, "big"))
            out.append(raw)
        return b"".join(out)

    @staticmethod
    def from_bytes(data: bytes) -> "BlockLog":
        pos = 0

        def chunk() -> bytes:
            nonlocal pos
            if pos + 4 > len(data):
                raise ChainError("truncated block log")
            size = int.from_bytes(data[pos : pos + 4], "big")
            pos += 4
            if pos + size > len(data):
                raise ChainError("truncated block log")
            out = data[pos : pos + size]
            pos += size
            return out

        genesis = Genesis.from_dict(json.loads(chunk()))
        blocks = []
        while pos < len(data):
            blocks.append(decode_block(chunk()))
        return BlockLog(genesis=genesis, blocks=blocks)


def replay(log: BlockLog) -> ChainState:
    """Rebuild state from scratch; raises if any block fails validation."""
    state = ChainState(log.genesis)
    for block in log.blocks:
        # a recorded log may contain skip-on-timeout blocks
        apply_block(state, block, allowed_attempts=len(state.validators) - 1)
    return state
