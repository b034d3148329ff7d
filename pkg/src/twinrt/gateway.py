"""Gateway: the runtime's interface to one actual system.

A gateway exposes the asset's features of interest as named elements of
three kinds: properties (state that can be read, written, observed),
events (asset-raised notifications), and functions (invocable commands).
Connecting performs a handshake that must confirm the declared element
catalog exactly; afterwards the handle serializes requests and routes
asset-pushed samples and events into per-element streams.
"""

from __future__ import annotations

import itertools
import queue
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import (
    AssetFault,
    CatalogMismatch,
    ConnectFailed,
    Disconnected,
    NoSuchElement,
    ProtocolError,
    ReadOnlyViolation,
    SchemaViolation,
    TwinError,
    WrongKind,
)
from .values import Value, check_value
from .wire import LineChannel, Transcript, connect_channel


class ElementKind(str, Enum):
    PROPERTY = "property"
    EVENT = "event"
    FUNCTION = "function"


class PropertyAccess(str, Enum):
    READ_ONLY = "ro"
    READ_WRITE = "rw"


@dataclass(frozen=True)
class GatewayElementDecl:
    """Declaration of one gateway element.

    The populated schema fields depend on the kind: properties carry
    ``value_type`` and ``access``; events carry ``payload_type``; functions
    carry ``arg_types`` and ``result_type``.
    """

    name: str
    kind: ElementKind
    value_type: str | None = None
    access: PropertyAccess | None = None
    payload_type: str | None = None
    arg_types: tuple[str, ...] | None = None
    result_type: str | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("element name must be non-empty")
        if self.kind is ElementKind.PROPERTY:
            ok = (self.value_type is not None and self.access is not None
                  and self.payload_type is None and self.arg_types is None
                  and self.result_type is None)
        elif self.kind is ElementKind.EVENT:
            ok = (self.payload_type is not None and self.value_type is None
                  and self.access is None and self.arg_types is None
                  and self.result_type is None)
        else:
            ok = (self.arg_types is not None and self.result_type is not None
                  and self.value_type is None and self.access is None
                  and self.payload_type is None)
        if not ok:
            raise ValueError(f"element {self.name!r}: schema fields do not match kind {self.kind.value}")

    def to_wire(self) -> dict[str, Any]:
        if self.kind is ElementKind.PROPERTY:
            schema: dict[str, Any] = {"type": self.value_type}
            return {"name": self.name, "kind": self.kind.value,
                    "value_schema": schema, "access": self.access.value}
        if self.kind is ElementKind.EVENT:
            return {"name": self.name, "kind": self.kind.value,
                    "value_schema": {"payload": self.payload_type}}
        return {"name": self.name, "kind": self.kind.value,
                "value_schema": {"args": list(self.arg_types), "result": self.result_type}}

    @classmethod
    def from_wire(cls, obj: dict[str, Any]) -> "GatewayElementDecl":
        try:
            kind = ElementKind(obj["kind"])
            schema = obj["value_schema"]
            if kind is ElementKind.PROPERTY:
                return cls(name=obj["name"], kind=kind, value_type=schema["type"],
                           access=PropertyAccess(obj["access"]))
            if kind is ElementKind.EVENT:
                return cls(name=obj["name"], kind=kind, payload_type=schema["payload"])
            return cls(name=obj["name"], kind=kind,
                       arg_types=tuple(schema["args"]), result_type=schema["result"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed catalog entry: {exc}") from exc


def property_decl(name: str, value_type: str,
                  access: PropertyAccess = PropertyAccess.READ_ONLY) -> GatewayElementDecl:
    return GatewayElementDecl(name=name, kind=ElementKind.PROPERTY,
                              value_type=value_type, access=access)


def event_decl(name: str, payload_type: str) -> GatewayElementDecl:
    return GatewayElementDecl(name=name, kind=ElementKind.EVENT, payload_type=payload_type)


def function_decl(name: str, arg_types: tuple[str, ...] | list[str],
                  result_type: str) -> GatewayElementDecl:
    return GatewayElementDecl(name=name, kind=ElementKind.FUNCTION,
                              arg_types=tuple(arg_types), result_type=result_type)


@dataclass(frozen=True)
class GatewayDescriptor:
    gateway_id: str
    endpoint: str
    elements: tuple[GatewayElementDecl, ...] = ()

    def __post_init__(self):
        if not self.gateway_id:
            raise ValueError("gateway_id must be non-empty")
        names = [e.name for e in self.elements]
        if len(names) != len(set(names)):
            raise ValueError(f"gateway {self.gateway_id}: duplicate element names")
        if not isinstance(self.elements, tuple):
            object.__setattr__(self, "elements", tuple(self.elements))

    def element(self, name: str) -> GatewayElementDecl | None:
        for decl in self.elements:
            if decl.name == name:
                return decl
        return None


@dataclass(frozen=True)
class ValueSample:
    element_name: str
    value: Value
    asset_timestamp: int
    sequence_no: int


@dataclass(frozen=True)
class EventOccurrence:
    name: str
    payload: Value
    asset_timestamp: int


@dataclass(frozen=True)
class Acknowledgement:
    asset_timestamp: int


class Stream:
    """Ordered stream of samples or event occurrences pushed by the asset.

    ``get`` blocks up to a timeout; ``drain`` returns whatever is queued right
    now. When the connection dies the stream terminates and ``end_cause``
    distinguishes why (e.g. "disconnected", "protocol-error", "closed").
    """

    def __init__(self, element: str):
        self.element = element
        self._q: queue.Queue = queue.Queue()
        self._end_cause: str | None = None
        self._lock = threading.Lock()

    def _put(self, item) -> None:
        self._q.put(item)

    def _end(self, cause: str) -> None:
        with self._lock:
            if self._end_cause is None:
                self._end_cause = cause
                self._q.put(None)  # wake blocked consumers

    @property
    def end_cause(self) -> str | None:
        return self._end_cause

    @property
    def ended(self) -> bool:
        return self._end_cause is not None and self._q.empty()

    def get(self, timeout: float | None = None):
        """Next item, or None if the stream ended or the timeout elapsed."""
        try:
            item = self._q.get(timeout=timeout)
        except queue.Empty:
            return None
        if item is None:
            self._q.put(None)  # keep the sentinel for other consumers
            return None
        return item

    def drain(self) -> list:
        """All currently queued items, non-blocking."""
        items = []
        while True:
            try:
                item = self._q.get_nowait()
            except queue.Empty:
                return items
            if item is None:
                self._q.put(None)
                return items
            items.append(item)

    def __iter__(self):
        while True:
            item = self.get()
            if item is None and self._end_cause is not None:
                return
            if item is not None:
                yield item


_ERROR_MAP: dict[str, type[TwinError]] = {
    "NO_SUCH_ELEMENT": NoSuchElement,
    "WRONG_KIND": WrongKind,
    "READ_ONLY": ReadOnlyViolation,
    "SCHEMA": SchemaViolation,
    "ASSET_FAULT": AssetFault,
    "PROTOCOL": ProtocolError,
}


class GatewayHandle:
    """Live connection to one asset. One outstanding request at a time.

    Streams may be consumed from other threads; per-element delivery order is
    preserved. Once disconnected the handle is dead and must be re-created.
    """

    def __init__(self, descriptor: GatewayDescriptor, channel: LineChannel,
                 catalog: list[GatewayElementDecl]):
        self.descriptor = descriptor
        self.gateway_id = descriptor.gateway_id
        self._channel = channel
        self._catalog = catalog
        self._ids = itertools.count(1)
        self._request_lock = threading.Lock()
        self._pending: queue.Queue | None = None
        self._pending_lock = threading.Lock()
        self._sample_streams: dict[str, Stream] = {}
        self._event_streams: dict[str, Stream] = {}
        self._dead: TwinError | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # --- connection lifecycle ---

    @property
    def is_alive(self) -> bool:
        return self._dead is None

    def close(self) -> None:
        self._fail(Disconnected("handle closed"), cause="closed")
        self._channel.close()

    def _fail(self, error: TwinError, cause: str) -> None:
        with self._pending_lock:
            if self._dead is not None:
                return
            self._dead = error
            if self._pending is not None:
                self._pending.put(error)
            for stream in self._sample_streams.values():
                stream._end(cause)
            for stream in self._event_streams.values():
                stream._end(cause)

    def _read_loop(self) -> None:
        while True:
            try:
                msg = self._channel.recv()
            except Disconnected as exc:
                self._fail(exc, cause="disconnected")
                return
            except ProtocolError as exc:
                # cannot attribute or trust anything further on this connection
                self._fail(exc, cause="protocol-error")
                self._channel.close()
                return
            self._route(msg)

    def _route(self, msg: dict[str, Any]) -> None:
        if "id" in msg:
            with self._pending_lock:
                if self._pending is not None:
                    self._pending.put(msg)
            return
        op = msg.get("op")
        try:
            if op == "update":
                stream = self._sample_streams.get(msg["element"])
                if stream is not None:
                    stream._put(ValueSample(element_name=msg["element"], value=msg["value"],
                                            asset_timestamp=msg["ts"], sequence_no=msg["seq"]))
            elif op == "event":
                stream = self._event_streams.get(msg["element"])
                if stream is not None:
                    stream._put(EventOccurrence(name=msg["element"], payload=msg["payload"],
                                                asset_timestamp=msg["ts"]))
            else:
                raise ProtocolError(f"unexpected push op {op!r}")
        except (KeyError, ProtocolError) as exc:
            err = exc if isinstance(exc, ProtocolError) else ProtocolError(f"malformed push: {exc}")
            self._fail(err, cause="protocol-error")
            self._channel.close()

    def _request(self, msg: dict[str, Any], timeout: float = 10.0) -> dict[str, Any]:
        with self._request_lock:
            if self._dead is not None:
                raise Disconnected(str(self._dead)) from self._dead
            rid = next(self._ids)
            msg = dict(msg, id=rid)
            slot: queue.Queue = queue.Queue()
            with self._pending_lock:
                self._pending = slot
            try:
                self._channel.send(msg)
                try:
                    reply = slot.get(timeout=timeout)
                except queue.Empty:
                    raise Disconnected("request timed out") from None
            finally:
                with self._pending_lock:
                    self._pending = None
            if isinstance(reply, TwinError):
                raise reply
            if reply.get("id") != rid:
                raise ProtocolError(f"response id {reply.get('id')} does not match request {rid}")
            if reply.get("op") == "error":
                exc_type = _ERROR_MAP.get(reply.get("code", ""), ProtocolError)
                raise exc_type(reply.get("message", "asset error"))
            return reply

    # --- element lookups ---

    def _decl(self, name: str, kind: ElementKind) -> GatewayElementDecl:
        decl = self.descriptor.element(name)
        if decl is None:
            raise NoSuchElement(f"{self.gateway_id}: no element {name!r}")
        if decl.kind is not kind:
            raise WrongKind(f"{self.gateway_id}: {name!r} is a {decl.kind.value}, not a {kind.value}")
        return decl

    def catalog(self) -> list[GatewayElementDecl]:
        """Re-list the asset's element catalog over the wire."""
        reply = self._expect(self._request({"op": "list"}), "catalog")
        return [GatewayElementDecl.from_wire(e) for e in reply["catalog"]]

    @staticmethod
    def _expect(reply: dict[str, Any], op: str) -> dict[str, Any]:
        if reply.get("op") != op:
            raise ProtocolError(f"expected {op!r} response, got {reply.get('op')!r}")
        return reply

    # --- operations ---

    def read_property(self, name: str) -> ValueSample:
        self._decl(name, ElementKind.PROPERTY)
        reply = self._expect(self._request({"op": "read", "element": name}), "value")
        try:
            return ValueSample(element_name=name, value=reply["value"],
                               asset_timestamp=reply["ts"], sequence_no=reply["seq"])
        except KeyError as exc:
            raise ProtocolError(f"value response missing field {exc}") from exc

    def write_property(self, name: str, value: Value) -> Acknowledgement:
        decl = self._decl(name, ElementKind.PROPERTY)
        if decl.access is not PropertyAccess.READ_WRITE:
            raise ReadOnlyViolation(f"{self.gateway_id}: property {name!r} is read-only")
        check_value(value, decl.value_type)
        reply = self._expect(self._request({"op": "write", "element": name, "value": value}), "ack")
        return Acknowledgement(asset_timestamp=reply.get("ts", 0))

    def observe_property(self, name: str) -> Stream:
        self._decl(name, ElementKind.PROPERTY)
        if self._dead is not None:
            raise Disconnected(str(self._dead))
        stream = self._sample_streams.get(name)
        if stream is None or stream.end_cause is not None:
            stream = Stream(name)
            # register before the request so no early push can be dropped
            self._sample_streams[name] = stream
        try:
            self._expect(self._request({"op": "observe", "element": name}), "ack")
        except TwinError:
            self._sample_streams.pop(name, None)
            raise
        return stream

    def subscribe_event(self, name: str) -> Stream:
        self._decl(name, ElementKind.EVENT)
        if self._dead is not None:
            raise Disconnected(str(self._dead))
        stream = self._event_streams.get(name)
        if stream is None or stream.end_cause is not None:
            stream = Stream(name)
            self._event_streams[name] = stream
        try:
            self._expect(self._request({"op": "subscribe", "element": name}), "ack")
        except TwinError:
            self._event_streams.pop(name, None)
            raise
        return stream

    def invoke_function(self, name: str, args: list[Value]) -> Value:
        decl = self._decl(name, ElementKind.FUNCTION)
        if len(args) != len(decl.arg_types):
            raise SchemaViolation(f"{name!r} takes {len(decl.arg_types)} argument(s), got {len(args)}")
        for arg, arg_type in zip(args, decl.arg_types):
            check_value(arg, arg_type)
        reply = self._expect(self._request({"op": "invoke", "element": name, "args": args}), "result")
        result = reply.get("value")
        check_value(result, decl.result_type)
        return result

    def ping(self) -> None:
        """Round-trip barrier: all pushes sent before the pong are now routed."""
        self._expect(self._request({"op": "ping"}), "pong")


def connect(descriptor: GatewayDescriptor, timeout: float = 5.0,
            transcript: Transcript | None = None) -> GatewayHandle:
    """Connect to the asset behind ``descriptor`` and verify its catalog.

    The handshake exchanges the element catalog; any difference in names,
    kinds, schemas, or access fails the connect with CatalogMismatch.
    """
    try:
        channel = connect_channel(descriptor.endpoint, timeout=timeout, transcript=transcript)
    except ConnectionError as exc:
        raise ConnectFailed(str(exc)) from exc
    try:
        channel.send({"op": "hello", "id": 0, "proto": "twin/1"})
        reply = channel.recv()
    except Disconnected as exc:
        channel.close()
        raise ConnectFailed(f"handshake failed: {exc}") from exc
    except ProtocolError:
        channel.close()
        raise
    if reply.get("op") == "error":
        channel.close()
        raise ProtocolError(reply.get("message", "handshake rejected"))
    if reply.get("op") != "hello-ack" or reply.get("id") != 0:
        channel.close()
        raise ProtocolError(f"unexpected handshake response {reply.get('op')!r}")
    try:
        advertised = [GatewayElementDecl.from_wire(e) for e in reply.get("catalog", [])]
    except ProtocolError:
        channel.close()
        raise
    differences = _catalog_diff(descriptor.elements, advertised)
    if differences:
        channel.close()
        raise CatalogMismatch(
            f"{descriptor.gateway_id}: catalog differs from descriptor "
            f"({'; '.join(differences)})", differences)
    return GatewayHandle(descriptor, channel, advertised)


def _catalog_diff(declared, advertised) -> list[str]:
    declared_by_name = {d.name: d for d in declared}
    advertised_by_name = {d.name: d for d in advertised}
    diffs = []
    for name in sorted(set(declared_by_name) - set(advertised_by_name)):
        diffs.append(f"asset does not advertise {name!r}")
    for name in sorted(set(advertised_by_name) - set(declared_by_name)):
        diffs.append(f"asset advertises undeclared {name!r}")
    for name in sorted(set(declared_by_name) & set(advertised_by_name)):
        if declared_by_name[name] != advertised_by_name[name]:
            diffs.append(f"element {name!r} differs: declared {declared_by_name[name].to_wire()}, "
                         f"advertised {advertised_by_name[name].to_wire()}")
    return diffs
