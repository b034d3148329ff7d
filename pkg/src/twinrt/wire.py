"""Newline-delimited message framing shared by assets, gateways, and the CLI.

One message per line: a single UTF-8 JSON object, canonically encoded
(sorted keys, compact separators) and terminated by ``\\n``. Requests carry
an ``id`` and are answered by exactly one response with the same ``id``;
messages without an ``id`` are unsolicited pushes. The full grammar lives in
docs/protocol.md alongside byte-exact golden transcripts.
"""

from __future__ import annotations

import json
import socket
from typing import Any, Callable

from .errors import Disconnected, ProtocolError
from .values import canonical_json

MAX_LINE_BYTES = 1 << 20  # one message may not exceed 1 MiB


def _reject_constant(name: str) -> float:
    raise ProtocolError(f"non-finite number {name!r} on the wire")


def encode_message(msg: dict[str, Any]) -> bytes:
    """Serialize a message to its canonical wire form (one terminated line)."""
    try:
        return (canonical_json(msg) + "\n").encode("utf-8")
    except ValueError as exc:
        raise ProtocolError(f"unencodable message: {exc}") from exc


def decode_message(line: bytes) -> dict[str, Any]:
    """Parse one wire line into a message object, rejecting non-finite numbers."""
    try:
        msg = json.loads(line.decode("utf-8"), parse_constant=_reject_constant)
    except ProtocolError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed message: {exc}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("message is not an object")
    if not isinstance(msg.get("op"), str):
        raise ProtocolError("message lacks an op field")
    return msg


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    """Split a ``tcp://host:port`` address into (host, port)."""
    if not endpoint.startswith("tcp://"):
        raise ProtocolError(f"unsupported endpoint {endpoint!r}; expected tcp://host:port")
    rest = endpoint[len("tcp://"):]
    host, sep, port = rest.rpartition(":")
    if not sep or not host:
        raise ProtocolError(f"endpoint {endpoint!r} lacks a port")
    try:
        return host, int(port)
    except ValueError as exc:
        raise ProtocolError(f"bad port in endpoint {endpoint!r}") from exc


def format_endpoint(host: str, port: int) -> str:
    return f"tcp://{host}:{port}"


class Transcript:
    """Records raw wire lines for golden-file comparison.

    Lines are tagged with the direction seen from the recording side:
    ``C`` for client-sent bytes, ``S`` for server-sent bytes.
    """

    def __init__(self) -> None:
        self.lines: list[tuple[str, bytes]] = []

    def record(self, direction: str, raw: bytes) -> None:
        self.lines.append((direction, raw))

    def render(self) -> str:
        out = []
        for direction, raw in self.lines:
            out.append(f"{direction}: {raw.decode('utf-8').rstrip()}")
        return "\n".join(out) + "\n" if out else ""


class LineChannel:
    """Blocking line-oriented channel over a TCP socket.

    Sends are serialized by the caller; receives read one complete line at a
    time. EOF or transport errors surface as Disconnected.
    """

    def __init__(self, sock: socket.socket, transcript: Transcript | None = None,
                 transcript_side: str = "C"):
        self._sock = sock
        self._buf = b""
        self._transcript = transcript
        # direction labels depend on which side is recording
        self._send_dir = transcript_side
        self._recv_dir = "S" if transcript_side == "C" else "C"

    def send(self, msg: dict[str, Any]) -> None:
        self.send_raw(encode_message(msg))

    def send_raw(self, raw: bytes) -> None:
        if self._transcript is not None:
            self._transcript.record(self._send_dir, raw)
        try:
            self._sock.sendall(raw)
        except OSError as exc:
            raise Disconnected(f"send failed: {exc}") from exc

    def recv(self) -> dict[str, Any]:
        line = self._recv_line()
        msg = decode_message(line)
        if self._transcript is not None:
            self._transcript.record(self._recv_dir, line)
        return msg

    def _recv_line(self) -> bytes:
        while b"\n" not in self._buf:
            if len(self._buf) > MAX_LINE_BYTES:
                raise ProtocolError("wire line exceeds maximum length")
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                raise Disconnected(f"recv failed: {exc}") from exc
            if not chunk:
                raise Disconnected("peer closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line + b"\n"

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect_channel(endpoint: str, timeout: float = 5.0,
                    transcript: Transcript | None = None) -> LineChannel:
    """Open a client LineChannel to ``endpoint`` (tcp://host:port)."""
    host, port = parse_endpoint(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectionError(f"cannot connect to {endpoint}: {exc}") from exc
    sock.settimeout(timeout)
    return LineChannel(sock, transcript=transcript, transcript_side="C")


class LineServer:
    """Minimal accept-loop TCP server dispatching one thread per connection.

    ``handler(channel)`` runs on its own thread and owns the channel until it
    returns or the peer disconnects.
    """

    def __init__(self, listen: str, handler: Callable[[LineChannel], None]):
        import threading

        host, port = parse_endpoint(listen)
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self._handler = handler
        self._threads: list[threading.Thread] = []
        self._closing = False
        self.endpoint = format_endpoint(host, self._listener.getsockname()[1])
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        import threading

        while True:
            try:
                conn, _addr = self._listener.accept()
            except OSError:
                return  # listener closed
            channel = LineChannel(conn, transcript_side="S")
            thread = threading.Thread(target=self._run_handler, args=(channel,), daemon=True)
            self._threads.append(thread)
            thread.start()

    def _run_handler(self, channel: LineChannel) -> None:
        try:
            self._handler(channel)
        except (Disconnected, ProtocolError):
            pass
        finally:
            channel.close()

    def close(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
