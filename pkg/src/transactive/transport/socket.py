"""TCP transport: length-prefixed frames with a genesis handshake.

Each connection starts with a hello frame carrying the genesis digest;
peers on a different genesis are refused. Reader threads feed a single
queue that the node's event loop drains, keeping the node core
single-threaded. Frames are 4-byte big-endian length plus payload.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass

from ..chain.encoding import MAX_PAYLOAD, DecodeError, WireMessage, decode_wire_message, encode_wire_message
from ..chain.node import VALIDATOR

HELLO_MAGIC = b"TEHS"
FRAME_CAP = MAX_PAYLOAD + 4096


class SocketTransportError(RuntimeError):
    pass


def _send_frame(conn: socket.socket, payload: bytes) -> None:
    conn.sendall(struct.pack(">I", len(payload)) + payload)


def _recv_exact(conn: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed")
        buf += chunk
    return buf


def _recv_frame(conn: socket.socket) -> bytes:
    (size,) = struct.unpack(">I", _recv_exact(conn, 4))
    if size > FRAME_CAP:
        raise SocketTransportError(f"frame of {size} bytes exceeds cap")
    return _recv_exact(conn, size)


@dataclass
class _Peer:
    account: str
    conn: socket.socket
    lock: threading.Lock


class SocketTransport:
    def __init__(
        self,
        account: str,
        genesis_digest: bytes,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.account = account
        self.genesis_digest = genesis_digest
        self._server = socket.create_server((host, port))
        self.host, self.port = self._server.getsockname()[:2]
        self._inbox: queue.Queue[tuple[WireMessage, float]] = queue.Queue()
        self._peers: dict[str, _Peer] = {}
        self._plock = threading.Lock()
        self._stop = threading.Event()
        self.refused = 0
        self._accepter = threading.Thread(target=self._accept_loop, daemon=True)
        self._accepter.start()

    # -- handshake -------------------------------------------------------

    def _hello(self) -> bytes:
        return HELLO_MAGIC + self.genesis_digest + self.account.encode()

    def _check_hello(self, frame: bytes) -> str:
        if frame[:4] != HELLO_MAGIC or len(frame) < 4 + 32 + 1:
            raise SocketTransportError("malformed hello")
        if frame[4:36] != self.genesis_digest:
            raise SocketTransportError("genesis mismatch")
        return frame[36:].decode()

    def _register(self, account: str, conn: socket.socket) -> None:
        peer = _Peer(account=account, conn=conn, lock=threading.Lock())
        with self._plock:
            self._peers[account] = peer
        reader = threading.Thread(target=self._read_loop, args=(peer,), daemon=True)
        reader.start()

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            try:
                frame = _recv_frame(conn)
                # answer before validating so a refused dialer can see why
                _send_frame(conn, self._hello())
                account = self._check_hello(frame)
            except (SocketTransportError, ConnectionError, OSError):
                self.refused += 1
                conn.close()
                continue
            self._register(account, conn)

    def connect(self, host: str, port: int, timeout_s: float = 5.0) -> str:
        """Dial a peer; returns its account id. Raises on genesis mismatch."""
        conn = socket.create_connection((host, port), timeout=timeout_s)
        conn.settimeout(timeout_s)
        _send_frame(conn, self._hello())
        try:
            account = self._check_hello(_recv_frame(conn))
        except (ConnectionError, SocketTransportError) as exc:
            conn.close()
            raise SocketTransportError(f"handshake with {host}:{port} failed: {exc}")
        conn.settimeout(None)
        self._register(account, conn)
        return account

    # -- IO --------------------------------------------------------------

    def _read_loop(self, peer: _Peer) -> None:
        try:
            while not self._stop.is_set():
                frame = _recv_frame(peer.conn)
                try:
                    msg = decode_wire_message(frame)
                except DecodeError:
                    continue
                self._inbox.put((msg, time.monotonic() * 1000.0))
        except (ConnectionError, OSError, SocketTransportError):
            pass
        finally:
            with self._plock:
                if self._peers.get(peer.account) is peer:
                    del self._peers[peer.account]

    def broadcast(self, msg: WireMessage) -> dict[str, bool]:
        """Send to every connected peer; one retry per peer, then report."""
        frame = encode_wire_message(msg)
        results: dict[str, bool] = {}
        with self._plock:
            peers = list(self._peers.values())
        for peer in peers:
            results[peer.account] = self._send_to(peer, frame)
        return results

    def send(self, account: str, msg: WireMessage) -> bool:
        """Send to one peer by account id; False if unknown or unreachable."""
        with self._plock:
            peer = self._peers.get(account)
        if peer is None:
            return False
        return self._send_to(peer, encode_wire_message(msg))

    @staticmethod
    def _send_to(peer: _Peer, frame: bytes) -> bool:
        for _ in range(2):
            try:
                with peer.lock:
                    _send_frame(peer.conn, frame)
                return True
            except (OSError, ConnectionError):
                continue
        return False

    def poll(self, timeout_s: float) -> list[tuple[WireMessage, float]]:
        out = []
        try:
            out.append(self._inbox.get(timeout=timeout_s))
            while True:
                out.append(self._inbox.get_nowait())
        except queue.Empty:
            pass
        return out

    @property
    def peer_accounts(self) -> list[str]:
        with self._plock:
            return list(self._peers)

    def close(self) -> None:
        self._stop.set()
        try:
            self._server.close()
        except OSError:
            pass
        with self._plock:
            for peer in self._peers.values():
                try:
                    peer.conn.close()
                except OSError:
                    pass
            self._peers.clear()


def mesh_ready(node, peer_accounts: list[str]) -> bool:
    """Whether the node is connected well enough to take part.

    A validator that starts proposing into an empty mesh builds a private
    fork that nothing reconciles, so its clock stays gated until a
    majority of the committee is reachable (counting itself). A normal
    node just needs one peer to sync from.
    """
    if node.role != VALIDATOR:
        return bool(peer_accounts)
    committee = set(node.state.validators)
    linked = committee.intersection(peer_accounts)
    linked.update(committee.intersection((node.account,)))
    return 2 * len(linked) > len(committee)


def run_node_over_sockets(node, transport: SocketTransport, should_stop) -> None:
    """Drive a node's event loop from a socket transport until told to stop."""
    node.set_broadcast(transport.broadcast)
    node.set_unicast(lambda dest, msg: transport.send(dest, msg))
    ready = False
    tick_s = min(0.01, node.genesis.config.block_interval_ms / 1000.0 / 4)
    while not should_stop():
        for msg, at_ms in transport.poll(tick_s):
            node.handle_message(msg, at_ms)
        if not ready:
            peers = transport.peer_accounts
            if mesh_ready(node, peers):
                ready = True
                node.probe_sync(peers)
        if ready:
            node.on_tick(time.monotonic() * 1000.0)
