"""Live transport: UDP multicast for advertisements, TCP for unicast request/response.

Unicast frames are a 4-byte big-endian length prefix followed by the payload.
One request and one reply per connection.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
import time
from typing import Callable, Optional

from ..errors import EndpointInUse, PayloadTooLarge, TransportError, UnknownNode
from .base import MAX_PAYLOAD, Datagram, DatagramHandler, Endpoint, Reply, RequestHandler

log = logging.getLogger(__name__)

DEFAULT_GROUP = Endpoint("udp", "239.255.70.70", 7070)
_LEN = struct.Struct(">I")


def encode_frame(payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return _LEN.pack(len(payload)) + payload


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    (length,) = _LEN.unpack(_recv_exact(sock, _LEN.size))
    if length > MAX_PAYLOAD:
        raise PayloadTooLarge(f"peer announced {length} bytes")
    return _recv_exact(sock, length)


class _FrameServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class _Binding:
    def __init__(self, endpoint: Endpoint, on_datagram, on_request) -> None:
        self.endpoint = endpoint
        self.on_datagram: Optional[DatagramHandler] = on_datagram
        self.on_request: Optional[RequestHandler] = on_request
        self.server: Optional[_FrameServer] = None
        # providers serve one request at a time
        self.serve_lock = threading.Lock()


class UdpTransport:
    """Real-network counterpart of `SimNet`. Endpoints use the tcp:// scheme."""

    fetch_latency_ms = 0.0

    def __init__(self, *, interface: str = "0.0.0.0", multicast_ttl: int = 1) -> None:
        self._interface = interface
        self._mcast_ttl = multicast_ttl
        self._lock = threading.Lock()
        self._bindings: dict[Endpoint, _Binding] = {}
        self._listeners: dict[tuple[Endpoint, Endpoint], tuple[socket.socket, threading.Thread]] = {}
        self._send_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
        self._send_sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL, multicast_ttl)
        self._send_sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_LOOP, 1)

    def now(self) -> float:
        return time.monotonic() * 1000.0

    def bind(self, endpoint: Endpoint, *, on_datagram=None, on_request=None) -> Endpoint:
        """Bind `endpoint`; port 0 is not allowed by Endpoint, so callers pick ports."""
        with self._lock:
            if endpoint in self._bindings:
                raise EndpointInUse(str(endpoint))
            binding = _Binding(endpoint, on_datagram, on_request)
            if on_request is not None:
                binding.server = self._serve(binding)
            self._bindings[endpoint] = binding
        return endpoint

    def _serve(self, binding: _Binding) -> _FrameServer:
        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                try:
                    payload = read_frame(self.request)
                except (TransportError, PayloadTooLarge, OSError) as exc:
                    log.warning("bad frame on %s: %s", binding.endpoint, exc)
                    return
                peer = Endpoint("tcp", self.client_address[0], self.client_address[1])
                with binding.serve_lock:
                    answer = binding.on_request(payload, peer) if binding.on_request else None
                if answer is None:
                    return
                reply = answer if isinstance(answer, Reply) else Reply(answer)
                try:
                    self.request.sendall(encode_frame(reply.payload))
                except OSError as exc:
                    log.warning("reply to %s failed: %s", peer, exc)

        try:
            server = _FrameServer((binding.endpoint.host, binding.endpoint.port), Handler)
        except OSError as exc:
            raise EndpointInUse(f"{binding.endpoint}: {exc}") from exc
        threading.Thread(target=server.serve_forever, name=f"serve-{binding.endpoint}", daemon=True).start()
        return server

    def unbind(self, endpoint: Endpoint) -> None:
        with self._lock:
            binding = self._bindings.pop(endpoint, None)
            stale = [key for key in self._listeners if key[1] == endpoint]
        for key in stale:
            self.leave(*key)
        if binding is not None and binding.server is not None:
            binding.server.shutdown()
            binding.server.server_close()

    def join(self, group: Endpoint, member: Endpoint) -> None:
        with self._lock:
            binding = self._bindings.get(member)
            if binding is None:
                raise UnknownNode(str(member))
            if (group, member) in self._listeners:
                return
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_UDP)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        if hasattr(socket, "SO_REUSEPORT"):
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEPORT, 1)
        sock.bind(("", group.port))
        mreq = socket.inet_aton(group.host) + socket.inet_aton(self._interface)
        sock.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, mreq)
        sock.settimeout(0.2)

        def receive() -> None:
            while (group, member) in self._listeners:
                try:
                    data, addr = sock.recvfrom(MAX_PAYLOAD + 1)
                except socket.timeout:
                    continue
                except OSError:
                    return
                if not data or len(data) > MAX_PAYLOAD:
                    continue
                handler = binding.on_datagram
                if handler is not None:
                    handler(Datagram(data, Endpoint("udp", addr[0], addr[1]), self.now()))

        thread = threading.Thread(target=receive, name=f"mcast-{member}", daemon=True)
        with self._lock:
            self._listeners[(group, member)] = (sock, thread)
        thread.start()

    def leave(self, group: Endpoint, member: Endpoint) -> None:
        with self._lock:
            entry = self._listeners.pop((group, member), None)
        if entry is not None:
            sock, thread = entry
            thread.join(timeout=1.0)
            sock.close()

    def send(self, source: Endpoint, to: Endpoint, payload: bytes) -> None:
        if not payload:
            raise ValueError("payload must be non-empty")
        if len(payload) > MAX_PAYLOAD:
            raise PayloadTooLarge(f"{len(payload)} bytes exceeds {MAX_PAYLOAD}")
        with self._lock:
            self._send_sock.sendto(payload, (to.host, to.port))

    def request(self, source: Endpoint, to: Endpoint, payload: bytes, timeout_ms: float = 2000.0) -> bytes:
        frame = encode_frame(payload)
        try:
            with socket.create_connection((to.host, to.port), timeout=timeout_ms / 1000.0) as sock:
                sock.sendall(frame)
                return read_frame(sock)
        except (OSError, socket.timeout) as exc:
            raise TransportError(f"request to {to} failed: {exc}") from exc

    def call_later(self, delay_ms: float, callback: Callable[[], None], *, daemon: bool = False) -> threading.Timer:
        timer = threading.Timer(delay_ms / 1000.0, callback)
        timer.daemon = daemon
        timer.start()
        return timer

    def close(self) -> None:
        for endpoint in list(self._bindings):
            self.unbind(endpoint)
        self._send_sock.close()
