"""Binary record/replay of bus traffic.

File layout (little-endian): magic ``HBAG``, u16 format version, then per
record u32 topic length, topic bytes, f64 stamp, u32 payload length, payload.
Records are stored sorted by stamp, ties broken by write order.
"""
from __future__ import annotations

import fnmatch
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .bus import (Bus, DuplicateNodeError, PublisherHandle, QosProfile,
                  QualifiedName, Reliability, SubscriptionHandle)

MAGIC = b"HBAG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sH")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")

RECORDER_QOS = QosProfile(reliability=Reliability.RELIABLE, history_depth=1_000_000)


class BagError(Exception):
    pass


class BagFormatError(BagError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class BagRecord:
    topic: str  # full form, e.g. "/spot/gps/fix"
    stamp: float
    payload: bytes


@dataclass(frozen=True)
class BagInfo:
    record_count: int
    topics: dict[str, int]  # topic -> record count
    start_stamp: float | None
    end_stamp: float | None


class BagWriter:
    """Collects records and writes them stamp-sorted (stable) on close.

    The sink is opened immediately so an unwritable path fails fast.
    """

    def __init__(self, path) -> None:
        self.path = Path(path)
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION))
        self._records: list[BagRecord] = []
        self._closed = False

    def write(self, record: BagRecord) -> None:
        if self._closed:
            raise BagError(f"bag writer for {self.path} is closed")
        self._records.append(record)

    def append(self, topic: str, stamp: float, payload: bytes) -> None:
        self.write(BagRecord(topic, stamp, bytes(payload)))

    def close(self) -> None:
        if self._closed:
            return
        self._records.sort(key=lambda r: r.stamp)  # stable: ties keep write order
        for r in self._records:
            topic = r.topic.encode()
            self._fh.write(_U32.pack(len(topic)))
            self._fh.write(topic)
            self._fh.write(_F64.pack(r.stamp))
            self._fh.write(_U32.pack(len(r.payload)))
            self._fh.write(r.payload)
        self._fh.close()
        self._closed = True

    def __enter__(self) -> "BagWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_bag(path) -> list[BagRecord]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise BagFormatError("file too short for bag header", 0)
    magic, version = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BagFormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise BagFormatError(f"unsupported format version {version}", 4)
    records = []
    off = _HEADER.size
    total = len(data)
    while off < total:
        start = off
        if off + 4 > total:
            raise BagFormatError("truncated topic length", start)
        (topic_len,) = _U32.unpack_from(data, off)
        off += 4
        if off + topic_len + 12 > total:
            raise BagFormatError("truncated record", start)
        try:
            topic = data[off:off + topic_len].decode()
        except UnicodeDecodeError:
            raise BagFormatError("topic is not valid UTF-8", off) from None
        off += topic_len
        (stamp,) = _F64.unpack_from(data, off)
        off += 8
        (payload_len,) = _U32.unpack_from(data, off)
        off += 4
        if off + payload_len > total:
            raise BagFormatError("truncated payload", start)
        payload = data[off:off + payload_len]
        off += payload_len
        records.append(BagRecord(topic, stamp, payload))
    return records


def bag_info(path) -> BagInfo:
    records = read_bag(path)
    topics: dict[str, int] = {}
    for r in records:
        topics[r.topic] = topics.get(r.topic, 0) + 1
    stamps = [r.stamp for r in records]
    return BagInfo(len(records), topics,
                   min(stamps) if stamps else None,
                   max(stamps) if stamps else None)


class Recorder:
    """Subscribes losslessly to every topic matching the filter patterns and
    appends matching messages to the sink bag.

    Recording uses its own reliable, deep-queue QoS so the bag reproduces the
    run regardless of the live profiles. Topics advertised after start are
    picked up automatically.
    """

    def __init__(self, bus: Bus, patterns: Sequence[str], sink) -> None:
        if not patterns:
            raise ValueError("recorder needs at least one topic filter pattern")
        self._bus = bus
        self._patterns = list(patterns)
        self._writer = BagWriter(sink)
        self._node = bus.create_node("hmas_bag", self._unique_local_name(bus))
        self._subs: dict[str, SubscriptionHandle] = {}
        self._pending: list[tuple[int, BagRecord]] = []
        self._stopped = False
        for topic in bus.discover().publishers:
            self._maybe_subscribe(topic)
        bus.add_advertise_hook(self._on_advertise)

    @staticmethod
    def _unique_local_name(bus: Bus) -> str:
        nodes = bus.discover().nodes
        i = 0
        while True:
            local = "recorder" if i == 0 else f"recorder_{i}"
            if f"/hmas_bag/{local}" not in nodes:
                return local
            i += 1

    @property
    def path(self) -> Path:
        return self._writer.path

    def matches(self, topic: str) -> bool:
        return any(fnmatch.fnmatchcase(topic, pat) for pat in self._patterns)

    def _on_advertise(self, pub: PublisherHandle) -> None:
        self._maybe_subscribe(pub.topic.full)

    def _maybe_subscribe(self, topic: str) -> None:
        if self._stopped or topic in self._subs or not self.matches(topic):
            return
        self._subs[topic] = self._bus.subscribe(self._node, topic, RECORDER_QOS)

    def drain(self) -> int:
        """Move queued messages into the writer; returns how many."""
        n = 0
        for sub in self._subs.values():
            while True:
                item = self._bus.take_with_seq(sub)
                if item is None:
                    break
                seq, msg = item
                self._pending.append((seq, BagRecord(msg.topic.full, msg.stamp, msg.payload)))
                n += 1
        return n

    def stop(self) -> Path:
        """Drain, write the bag, and detach from the bus."""
        if self._stopped:
            return self._writer.path
        self.drain()
        self._bus.remove_advertise_hook(self._on_advertise)
        self._node.close()
        self._stopped = True
        self._pending.sort(key=lambda item: item[0])  # bus enqueue order
        for _, record in self._pending:
            self._writer.write(record)
        self._writer.close()
        return self._writer.path

    def __enter__(self) -> "Recorder":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def record(bus: Bus, patterns: Sequence[str], sink) -> Recorder:
    """Start recording every topic matching the glob patterns into ``sink``."""
    return Recorder(bus, patterns, sink)


@dataclass(frozen=True)
class ReplayStats:
    records: int
    topics: dict[str, int]


def replay(path, bus: Bus, rate: float | None = None, fast: bool = False) -> ReplayStats:
    """Republish a bag onto ``bus`` on the original topics.

    With ``rate`` r > 0 the inter-record gaps are scaled by 1/r against the
    wall clock; with ``fast`` (or an empty rate) gaps collapse and only order
    is preserved. Publishers are created under each original namespace as
    ``/<ns>/replay`` so the relative-advertise rule stays intact.
    """
    if fast and rate is not None:
        raise ValueError("pass either a realtime rate or fast, not both")
    if rate is not None and rate <= 0.0:
        raise ValueError(f"realtime rate must be positive, got {rate}")
    if rate is None:
        fast = True
    records = read_bag(path)
    nodes = {}
    pubs: dict[str, PublisherHandle] = {}
    counts: dict[str, int] = {}
    replay_qos = QosProfile(reliability=Reliability.RELIABLE, history_depth=1)
    try:
        start_wall = time.monotonic()
        first_stamp = records[0].stamp if records else 0.0
        for r in records:
            if r.topic not in pubs:
                name = QualifiedName.parse(r.topic)
                if name.namespace not in nodes:
                    nodes[name.namespace] = _replay_node(bus, name.namespace)
                pubs[r.topic] = bus.advertise(nodes[name.namespace], name.local, replay_qos)
            if not fast:
                target = start_wall + (r.stamp - first_stamp) / rate
                delay = target - time.monotonic()
                if delay > 0.0:
                    time.sleep(delay)
            pubs[r.topic].publish(r.stamp, r.payload)
            counts[r.topic] = counts.get(r.topic, 0) + 1
    finally:
        for node in nodes.values():
            node.close()
    return ReplayStats(len(records), counts)


def _replay_node(bus: Bus, namespace: str):
    i = 0
    while True:
        local = "replay" if i == 0 else f"replay_{i}"
        try:
            return bus.create_node(namespace, local)
        except DuplicateNodeError:
            i += 1
