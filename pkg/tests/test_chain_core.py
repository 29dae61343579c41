"""State machine checks: txs, blocks, votes, determinism, replay."""

import pytest

from transactive.chain import (
    BlockLog,
    ChainConfig,
    ChainState,
    Genesis,
    InvalidBlockError,
    Mempool,
    Tx,
    apply_block,
    build_block,
    decode_block,
    decode_tx,
    decode_wire_message,
    deterministic_keypair,
    encode_block,
    encode_func_b_call,
    encode_noop_call,
    encode_tx,
    encode_vote_call,
    encode_wire_message,
    make_func_b_tx,
    make_noop_tx,
    make_vote_tx,
    replay,
    sign,
    verify,
)
from transactive.chain.encoding import (
    VOTE_ADD,
    VOTE_REMOVE,
    DecodeError,
    MsgKind,
    WireMessage,
    decode_block_request,
    decode_call,
    encode_block_request,
)

VKEYS = [deterministic_keypair(f"validator-{i}") for i in range(5)]
PKEYS = [deterministic_keypair(f"prosumer-{i}") for i in range(3)]
HORIZON = 4  # short rounds keep these tests quick


def make_genesis(num_validators=3, num_participants=2, **config_kw):
    return Genesis(
        chain_id="testnet",
        committee=tuple(k.account for k in VKEYS[:num_validators]),
        participants=tuple(k.account for k in PKEYS[:num_participants]),
        horizon=HORIZON,
        config=ChainConfig(**config_kw) if config_kw else ChainConfig(),
    )


def trade_rows(num, mine, value_m):
    rows = [[0] * HORIZON for _ in range(num)]
    for v in range(num):
        if v != mine:
            rows[v] = [value_m] * HORIZON
    return rows


def commit(state, txs, height=None, attempt=0, log=None):
    height = state.height + 1 if height is None else height
    proposer = state.proposer_for(height, attempt)
    block = build_block(state, proposer, txs, timestamp_ms=height * 1000)
    receipts = apply_block(state, block, allowed_attempts=attempt)
    if log is not None:
        log.append(block)
    return block, receipts


def test_deterministic_keys_are_stable():
    a = deterministic_keypair("validator-0")
    b = deterministic_keypair("validator-0")
    assert a.account == b.account == VKEYS[0].account
    assert len(bytes.fromhex(a.account)) == 32


def test_sign_verify_roundtrip():
    msg = b"schedule for tomorrow"
    sig = sign(VKEYS[0], msg)
    assert verify(VKEYS[0].account, sig, msg)
    assert not verify(VKEYS[1].account, sig, msg)
    assert not verify(VKEYS[0].account, sig, msg + b"!")
    assert not verify("zz", sig, msg)


def test_call_encodings_roundtrip():
    for call in (
        encode_noop_call(7),
        encode_func_b_call(3, [[1, -2, 3, 4], [0, 0, 0, 0]]),
        encode_vote_call(VOTE_ADD, VKEYS[3].account),
    ):
        selector, fields = decode_call(call)
        assert isinstance(fields, dict)
    sel, fields = decode_call(encode_func_b_call(9, [[5, -5, 0, 2]]))
    assert fields["k"] == 9
    assert fields["rows"] == [[5, -5, 0, 2]]


def test_decode_rejects_trailing_and_unknown():
    good = encode_noop_call(1)
    with pytest.raises(DecodeError):
        decode_call(good + b"\x00")
    with pytest.raises(DecodeError):
        decode_call(b"\x99" + good[1:])
    with pytest.raises(DecodeError):
        decode_call(good[:-2])


def test_block_request_roundtrip_and_bad_range():
    assert decode_block_request(encode_block_request(3, 7)) == (3, 7)
    assert decode_block_request(encode_block_request(5, 5)) == (5, 5)
    with pytest.raises(DecodeError):
        decode_block_request(encode_block_request(8, 2))
    with pytest.raises(DecodeError):
        decode_block_request(encode_block_request(1, 4) + b"\x00")


def test_tx_encoding_roundtrip_and_vectors():
    tx = make_noop_tx(PKEYS[0], nonce=0, tag=42)
    raw = encode_tx(tx)
    back = decode_tx(raw)
    assert back == tx
    # ed25519 is deterministic, so the byte form is frozen
    assert raw.hex() == (
        "00000040"
        + PKEYS[0].account.encode().hex()
        + "0000000000000000"
        + "00000009"
        + "00" + "000000000000002a"
        + "00000040"
        + tx.signature.hex()
    )


def test_wire_message_roundtrip_and_cap():
    msg = WireMessage(kind=MsgKind.TX_BROADCAST, sender="node-1", payload=b"abc")
    assert decode_wire_message(encode_wire_message(msg)) == msg
    with pytest.raises(ValueError):
        encode_wire_message(
            WireMessage(kind=MsgKind.ACK, sender="x", payload=b"0" * ((1 << 20) + 1))
        )


def test_submit_tx_accept_duplicate_tamper():
    state = ChainState(make_genesis())
    pool = Mempool()
    tx = make_noop_tx(PKEYS[0], nonce=0)
    ok, _ = pool.submit(state, tx)
    assert ok
    ok, reason = pool.submit(state, tx)
    assert not ok and "duplicate" in reason

    tampered = Tx(
        sender=tx.sender,
        nonce=1,
        call=encode_noop_call(999),
        signature=tx.signature,
    )
    ok, reason = pool.submit(state, tampered)
    assert not ok and "signature" in reason


def test_submit_tx_stale_nonce():
    state = ChainState(make_genesis())
    pool = Mempool()
    commit(state, [make_noop_tx(PKEYS[0], nonce=0)])
    ok, reason = pool.submit(state, make_noop_tx(PKEYS[0], nonce=0))
    assert not ok and "stale" in reason


def test_mempool_holds_gapped_nonce():
    state = ChainState(make_genesis())
    pool = Mempool()
    later = make_noop_tx(PKEYS[0], nonce=1)
    first = make_noop_tx(PKEYS[0], nonce=0)
    assert pool.submit(state, later)[0]
    assert pool.take_for_block(state, 10) == []
    assert pool.submit(state, first)[0]
    picked = pool.take_for_block(state, 10)
    assert [t.nonce for t in picked] == [0, 1]


def test_proposers_cycle_round_robin():
    state = ChainState(make_genesis(num_validators=3))
    seen = []
    for _ in range(6):
        block, _ = commit(state, [])
        seen.append(block.proposer)
    expect = [state.proposer_for(h) for h in range(1, 7)]
    assert seen == expect
    assert seen[:3] == seen[3:6]
    assert len(set(seen[:3])) == 3


def test_empty_block_keeps_state_root():
    state = ChainState(make_genesis())
    root0 = state.state_root()
    block, receipts = commit(state, [])
    assert receipts == []
    assert block.state_root == root0 == state.state_root()


def test_out_of_turn_block_rejected():
    state = ChainState(make_genesis(num_validators=3))
    wrong = state.proposer_for(1, attempt=1)
    block = build_block(state, wrong, [], timestamp_ms=1000)
    with pytest.raises(InvalidBlockError, match="out-of-turn"):
        apply_block(state, block)
    assert state.height == 0
    # the same block is fine once a skip is witnessed
    apply_block(state, block, allowed_attempts=1)
    assert state.height == 1


def test_block_height_and_parent_checked():
    state = ChainState(make_genesis())
    block, _ = commit(state, [])
    with pytest.raises(InvalidBlockError):
        apply_block(state, block)  # height replay
    fresh = ChainState(make_genesis())
    block2 = build_block(fresh, fresh.proposer_for(1), [], timestamp_ms=1)
    object.__setattr__(block2, "parent_hash", b"\x00" * 32)
    with pytest.raises(InvalidBlockError, match="parent"):
        apply_block(fresh, block2)


def test_failing_call_is_isolated():
    state = ChainState(make_genesis(num_participants=2))
    num = 2
    bad = make_func_b_tx(PKEYS[0], nonce=0, k=7, rows=trade_rows(num, 0, 5))
    good = make_noop_tx(PKEYS[1], nonce=0, tag=1)
    pre_contract = state.contract.to_state_dict()
    block, receipts = commit(state, [bad, good])
    assert [r.ok for r in receipts] == [False, True]
    assert "round" in receipts[0].error
    # the failed call left the contract untouched but burned the nonce
    assert state.contract.to_state_dict() == pre_contract
    assert state.nonces[PKEYS[0].account] == 1
    assert state.nonces[PKEYS[1].account] == 1


def test_state_root_mismatch_rejected():
    state = ChainState(make_genesis())
    block = build_block(state, state.proposer_for(1), [], timestamp_ms=1)
    object.__setattr__(block, "state_root", b"\x11" * 32)
    with pytest.raises(InvalidBlockError, match="root"):
        apply_block(state, block)
    assert state.height == 0


def test_contract_round_commits_through_blocks():
    state = ChainState(make_genesis(num_participants=2))
    txs = [
        make_func_b_tx(PKEYS[0], nonce=0, k=0, rows=trade_rows(2, 0, 4_000_000_000)),
        make_func_b_tx(PKEYS[1], nonce=0, k=0, rows=trade_rows(2, 1, -4_000_000_000)),
    ]
    _, receipts = commit(state, txs)
    assert all(r.ok for r in receipts)
    assert state.contract.k == 1
    # perfectly reciprocal submissions converge immediately
    assert state.contract.converged


def test_vote_majority_changes_committee_next_block():
    state = ChainState(make_genesis(num_validators=3))
    candidate = VKEYS[3].account
    _, receipts = commit(
        state, [make_vote_tx(VKEYS[0], nonce=0, action=VOTE_ADD, candidate=candidate)]
    )
    assert receipts[0].ok
    assert len(state.validators) == 3  # 1 of 3 is below majority
    _, receipts = commit(
        state, [make_vote_tx(VKEYS[1], nonce=0, action=VOTE_ADD, candidate=candidate)]
    )
    assert receipts[0].ok
    assert state.validators == [k.account for k in VKEYS[:4]]
    heights = range(state.height + 1, state.height + 9)
    expect = [state.validators[h % 4] for h in heights]
    seen = [commit(state, [])[0].proposer for _ in heights]
    assert seen == expect


def test_duplicate_vote_is_idempotent():
    state = ChainState(make_genesis(num_validators=3))
    candidate = VKEYS[3].account
    commit(state, [make_vote_tx(VKEYS[0], nonce=0, action=VOTE_ADD, candidate=candidate)])
    _, receipts = commit(
        state, [make_vote_tx(VKEYS[0], nonce=1, action=VOTE_ADD, candidate=candidate)]
    )
    assert receipts[0].ok
    assert len(state.validators) == 3


def test_non_validator_vote_rejected():
    state = ChainState(make_genesis(num_validators=3))
    _, receipts = commit(
        state,
        [make_vote_tx(PKEYS[0], nonce=0, action=VOTE_ADD, candidate=VKEYS[3].account)],
    )
    assert not receipts[0].ok and "not a validator" in receipts[0].error


def test_remove_validator_reshapes_schedule():
    state = ChainState(make_genesis(num_validators=3))
    target = VKEYS[2].account
    commit(state, [make_vote_tx(VKEYS[0], nonce=0, action=VOTE_REMOVE, candidate=target)])
    commit(state, [make_vote_tx(VKEYS[1], nonce=0, action=VOTE_REMOVE, candidate=target)])
    assert state.validators == [k.account for k in VKEYS[:2]]
    for _ in range(4):
        block, _ = commit(state, [])
        assert block.proposer != target


def test_block_respects_tx_cap():
    state = ChainState(make_genesis(max_block_txs=2))
    txs = [make_noop_tx(PKEYS[0], nonce=i) for i in range(3)]
    with pytest.raises(Exception, match="too many"):
        build_block(state, state.proposer_for(1), txs, timestamp_ms=1)
    pool = Mempool()
    for tx in txs:
        pool.submit(state, tx)
    assert len(pool.take_for_block(state, state.genesis.config.max_block_txs)) == 2


def test_replay_reproduces_root_over_100_blocks():
    genesis = make_genesis(num_validators=3, num_participants=2)
    state = ChainState(genesis)
    log = BlockLog(genesis=genesis)
    nonces = {k.account: 0 for k in PKEYS + VKEYS}

    def next_nonce(key):
        n = nonces[key.account]
        nonces[key.account] += 1
        return n

    for i in range(100):
        txs = []
        if i % 3 == 0:
            mag = (i + 1) * 1_000_000
            k = state.contract.k
            txs = [
                make_func_b_tx(PKEYS[0], next_nonce(PKEYS[0]), k, trade_rows(2, 0, mag)),
                make_func_b_tx(PKEYS[1], next_nonce(PKEYS[1]), k, trade_rows(2, 1, -mag + 7)),
            ]
        elif i == 40:
            txs = [
                make_vote_tx(VKEYS[0], next_nonce(VKEYS[0]), VOTE_ADD, VKEYS[3].account),
                make_vote_tx(VKEYS[1], next_nonce(VKEYS[1]), VOTE_ADD, VKEYS[3].account),
            ]
        elif i % 7 == 0:
            txs = [make_noop_tx(PKEYS[0], next_nonce(PKEYS[0]), tag=i)]
        commit(state, txs, log=log)

    assert state.height == 100
    raw = log.to_bytes()
    fresh = replay(BlockLog.from_bytes(raw))
    assert fresh.state_root() == state.state_root()
    assert fresh.parent_hash == state.parent_hash
    assert fresh.contract.k == state.contract.k


def test_block_encoding_roundtrip():
    state = ChainState(make_genesis())
    tx = make_noop_tx(PKEYS[0], nonce=0)
    block = build_block(state, state.proposer_for(1), [tx], timestamp_ms=77)
    assert decode_block(encode_block(block)) == block


def test_snapshot_restore_roundtrip():
    state = ChainState(make_genesis(num_participants=2))
    snap = state.snapshot()
    root = state.state_root()
    commit(state, [make_noop_tx(PKEYS[0], nonce=0)])
    assert state.state_root() != root
    state.restore(snap)
    assert state.state_root() == root
    assert state.height == 0


def test_genesis_digest_covers_fields():
    a = make_genesis()
    b = Genesis(
        chain_id="testnet-2",
        committee=a.committee,
        participants=a.participants,
        horizon=HORIZON,
    )
    assert a.digest() != b.digest()
    assert Genesis.from_dict(a.to_dict()).digest() == a.digest()
