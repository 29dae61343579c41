"""Canonical binary wire encoding for txs, blocks, calls, and envelopes.

All integers are big-endian. Variable-length fields carry a u32 length
prefix. Decoders consume the buffer exactly, so each message has one
valid byte form. Layouts:

  call NOOP    = u8 selector(0) . u64 tag
  call FUNC_B  = u8 selector(1) . u64 round . u32 rows . u32 horizon
                 . rows*horizon i64 trade mantissas, row-major
  call VOTE    = u8 selector(2) . u8 action(0 add, 1 remove)
                 . str candidate
  tx           = str sender . u64 nonce . bytes call . bytes signature
                 (signature covers everything before it)
  block        = u64 height . str proposer . 32-byte parent hash
                 . u32 tx count . txs . 32-byte state root . u64 ms
  wire message = u8 kind . str sender . bytes payload

str is utf-8 wrapped in the bytes form. Payloads are capped at 1 MiB.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .core import Block, Tx

MAX_PAYLOAD = 1 << 20

CALL_NOOP = 0
CALL_FUNC_B = 1
CALL_VOTE = 2

VOTE_ADD = 0
VOTE_REMOVE = 1

_I64_MIN = -(1 << 63)
_I64_MAX = (1 << 63) - 1


class DecodeError(ValueError):
    pass


class MsgKind(IntEnum):
    TX_BROADCAST = 1
    BLOCK_BROADCAST = 2
    VOTE_BROADCAST = 3
    ACK = 4
    BLOCK_REQUEST = 5
    BLOCK_RESPONSE = 6


@dataclass(frozen=True)
class WireMessage:
    kind: MsgKind
    sender: str
    payload: bytes


def _u8(value: int) -> bytes:
    if not 0 <= value <= 0xFF:
        raise ValueError(f"u8 out of range: {value}")
    return value.to_bytes(1, "big")


def _u32(value: int) -> bytes:
    if not 0 <= value <= 0xFFFFFFFF:
        raise ValueError(f"u32 out of range: {value}")
    return value.to_bytes(4, "big")


def _u64(value: int) -> bytes:
    if not 0 <= value <= 0xFFFFFFFFFFFFFFFF:
        raise ValueError(f"u64 out of range: {value}")
    return value.to_bytes(8, "big")


def _i64(value: int) -> bytes:
    if not _I64_MIN <= value <= _I64_MAX:
        raise ValueError(f"i64 out of range: {value}")
    return value.to_bytes(8, "big", signed=True)


def _bytes(value: bytes) -> bytes:
    return _u32(len(value)) + value


def _str(value: str) -> bytes:
    return _bytes(value.encode("utf-8"))


def _fixed32(value: bytes) -> bytes:
    if len(value) != 32:
        raise ValueError(f"expected 32-byte digest, got {len(value)}")
    return value


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError("truncated message")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def i64(self) -> int:
        return int.from_bytes(self.take(8), "big", signed=True)

    def bytes_(self) -> bytes:
        return self.take(self.u32())

    def str_(self) -> str:
        raw = self.bytes_()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8 string") from exc

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")


def encode_noop_call(tag: int = 0) -> bytes:
    return _u8(CALL_NOOP) + _u64(tag)


def encode_func_b_call(k: int, rows: list[list[int]]) -> bytes:
    if not rows or not rows[0]:
        raise ValueError("func_b call requires at least one row entry")
    horizon = len(rows[0])
    out = [_u8(CALL_FUNC_B), _u64(k), _u32(len(rows)), _u32(horizon)]
    for row in rows:
        if len(row) != horizon:
            raise ValueError("ragged trade rows")
        for m in row:
            out.append(_i64(m))
    return b"".join(out)


def encode_vote_call(action: int, candidate: str) -> bytes:
    if action not in (VOTE_ADD, VOTE_REMOVE):
        raise ValueError(f"unknown vote action {action}")
    return _u8(CALL_VOTE) + _u8(action) + _str(candidate)


def decode_call(data: bytes) -> tuple[int, dict]:
    """Returns (selector, fields). Unknown selectors raise DecodeError."""
    r = _Reader(data)
    selector = r.u8()
    if selector == CALL_NOOP:
        out = {"tag": r.u64()}
    elif selector == CALL_FUNC_B:
        k = r.u64()
        num_rows = r.u32()
        horizon = r.u32()
        if num_rows == 0 or horizon == 0 or num_rows * horizon > MAX_PAYLOAD // 8:
            raise DecodeError("func_b dimensions out of range")
        rows = [[r.i64() for _ in range(horizon)] for _ in range(num_rows)]
        out = {"k": k, "rows": rows}
    elif selector == CALL_VOTE:
        action = r.u8()
        if action not in (VOTE_ADD, VOTE_REMOVE):
            raise DecodeError(f"unknown vote action {action}")
        out = {"action": action, "candidate": r.str_()}
    else:
        raise DecodeError(f"unknown call selector {selector}")
    r.done()
    return selector, out


def tx_signing_bytes(sender: str, nonce: int, call: bytes) -> bytes:
    return _str(sender) + _u64(nonce) + _bytes(call)


def encode_tx(tx: "Tx") -> bytes:
    return tx_signing_bytes(tx.sender, tx.nonce, tx.call) + _bytes(tx.signature)


def decode_tx(data: bytes) -> "Tx":
    r = _Reader(data)
    tx = _read_tx(r)
    r.done()
    return tx


def _read_tx(r: _Reader) -> "Tx":
    from .core import Tx

    sender = r.str_()
    nonce = r.u64()
    call = r.bytes_()
    signature = r.bytes_()
    return Tx(sender=sender, nonce=nonce, call=call, signature=signature)


def encode_block(block: "Block") -> bytes:
    out = [
        _u64(block.height),
        _str(block.proposer),
        _fixed32(block.parent_hash),
        _u32(len(block.tx_list)),
    ]
    for tx in block.tx_list:
        out.append(encode_tx(tx))
    out.append(_fixed32(block.state_root))
    out.append(_u64(block.timestamp_ms))
    return b"".join(out)


def decode_block(data: bytes) -> "Block":
    from .core import Block

    r = _Reader(data)
    height = r.u64()
    proposer = r.str_()
    parent_hash = r.take(32)
    count = r.u32()
    if count > MAX_PAYLOAD // 8:
        raise DecodeError("tx count out of range")
    txs = tuple(_read_tx(r) for _ in range(count))
    state_root = r.take(32)
    timestamp_ms = r.u64()
    r.done()
    return Block(
        height=height,
        proposer=proposer,
        parent_hash=parent_hash,
        tx_list=txs,
        state_root=state_root,
        timestamp_ms=timestamp_ms,
    )


def encode_ack(height: int, block_hash: bytes) -> bytes:
    return _u64(height) + _fixed32(block_hash)


def decode_ack(data: bytes) -> tuple[int, bytes]:
    r = _Reader(data)
    height = r.u64()
    block_hash = r.take(32)
    r.done()
    return height, block_hash


def encode_block_request(from_height: int, to_height: int) -> bytes:
    return _u64(from_height) + _u64(to_height)


def decode_block_request(data: bytes) -> tuple[int, int]:
    r = _Reader(data)
    from_height = r.u64()
    to_height = r.u64()
    r.done()
    if from_height > to_height:
        raise DecodeError(f"empty block range {from_height}..{to_height}")
    return from_height, to_height


def encode_wire_message(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise ValueError(f"payload {len(msg.payload)} exceeds {MAX_PAYLOAD} bytes")
    return _u8(int(msg.kind)) + _str(msg.sender) + _bytes(msg.payload)


def decode_wire_message(data: bytes) -> WireMessage:
    r = _Reader(data)
    kind_raw = r.u8()
    try:
        kind = MsgKind(kind_raw)
    except ValueError as exc:
        raise DecodeError(f"unknown message kind {kind_raw}") from exc
    sender = r.str_()
    payload = r.bytes_()
    if len(payload) > MAX_PAYLOAD:
        raise DecodeError("payload exceeds cap")
    r.done()
    return WireMessage(kind=kind, sender=sender, payload=payload)
