"""Proof-of-authority ledger: keys, wire encoding, state machine, nodes."""

from .core import (
    Block,
    BlockLog,
    ChainConfig,
    ChainError,
    ChainState,
    Committee,
    Genesis,
    InvalidBlockError,
    InvalidTxError,
    Mempool,
    Tx,
    apply_block,
    build_block,
    make_func_b_tx,
    make_noop_tx,
    make_vote_tx,
    replay,
    sign_tx,
)
from .encoding import (
    CALL_FUNC_B,
    CALL_NOOP,
    CALL_VOTE,
    MAX_PAYLOAD,
    DecodeError,
    MsgKind,
    WireMessage,
    decode_block,
    decode_call,
    decode_tx,
    decode_wire_message,
    encode_block,
    encode_func_b_call,
    encode_noop_call,
    encode_tx,
    encode_vote_call,
    encode_wire_message,
)
from .keys import (
    KeyPair,
    account_id,
    deterministic_keypair,
    keypair_from_seed,
    private_seed,
    sign,
    verify,
)

__all__ = [
    "Block",
    "BlockLog",
    "CALL_FUNC_B",
    "CALL_NOOP",
    "CALL_VOTE",
    "ChainConfig",
    "ChainError",
    "ChainState",
    "Committee",
    "DecodeError",
    "Genesis",
    "InvalidBlockError",
    "InvalidTxError",
    "KeyPair",
    "MAX_PAYLOAD",
    "Mempool",
    "MsgKind",
    "Tx",
    "WireMessage",
    "account_id",
    "apply_block",
    "build_block",
    "decode_block",
    "decode_call",
    "decode_tx",
    "decode_wire_message",
    "deterministic_keypair",
    "keypair_from_seed",
    "private_seed",
    "encode_block",
    "encode_func_b_call",
    "encode_noop_call",
    "encode_tx",
    "encode_vote_call",
    "encode_wire_message",
    "make_func_b_tx",
    "make_noop_tx",
    "make_vote_tx",
    "replay",
    "sign",
    "sign_tx",
    "verify",
]
