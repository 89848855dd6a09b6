"""Namespaced in-process publish/subscribe bus with masterless discovery.

Every node lives in the namespace of the agent that owns it; topics are
advertised with relative names and resolve to ``/<namespace>/<topic>``.
Delivery is pull-based (``take``) with keep-last history queues, so a slow
consumer can never block a publisher.
"""
from __future__ import annotations

import random
import re
import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol


class BusError(Exception):
    pass


class InvalidNameError(BusError):
    pass


class DuplicateNodeError(BusError):
    pass


class ClosedHandleError(BusError):
    pass


class StampOrderError(BusError):
    """Stamps on one topic from one publisher must be non-decreasing."""


_SEGMENT_RE = re.compile(r"^[a-z][a-z0-9_]*$")


def _check_segments(text: str, what: str) -> None:
    if not text or text.startswith("/") or text.endswith("/"):
        raise InvalidNameError(f"invalid {what} {text!r}")
    for seg in text.split("/"):
        if not _SEGMENT_RE.match(seg):
            raise InvalidNameError(f"invalid {what} segment {seg!r} in {text!r}")


@dataclass(frozen=True)
class QualifiedName:
    """Namespace-qualified name; full form is ``/<namespace>/<local>``."""

    namespace: str
    local: str

    def __post_init__(self) -> None:
        _check_segments(self.namespace, "namespace")
        if "/" in self.namespace:
            raise InvalidNameError(f"namespace must be a single segment: {self.namespace!r}")
        _check_segments(self.local, "local name")

    @property
    def full(self) -> str:
        return f"/{self.namespace}/{self.local}"

    @classmethod
    def parse(cls, full: str) -> "QualifiedName":
        if not full.startswith("/"):
            raise InvalidNameError(f"full name must start with '/': {full!r}")
        namespace, _, local = full[1:].partition("/")
        if not local:
            raise InvalidNameError(f"full name needs a namespace and a local part: {full!r}")
        return cls(namespace, local)

    def __str__(self) -> str:
        return self.full


class Reliability(Enum):
    BEST_EFFORT = "best_effort"
    RELIABLE = "reliable"


class Durability(Enum):
    VOLATILE = "volatile"


@dataclass(frozen=True)
class QosProfile:
    reliability: Reliability = Reliability.BEST_EFFORT
    durability: Durability = Durability.VOLATILE
    history_depth: int = 1

    def __post_init__(self) -> None:
        if self.history_depth < 1:
            raise ValueError(f"history_depth must be positive, got {self.history_depth}")


DEFAULT_QOS = QosProfile()


@dataclass(frozen=True)
class Message:
    topic: QualifiedName
    stamp: float
    payload: bytes


@dataclass(frozen=True)
class DeliveryReport:
    matched: int
    enqueued: int


class FaultInjector(Protocol):
    """Per-delivery drop decision, standing in for a lossy wireless link."""

    def should_drop(self, topic: QualifiedName) -> bool: ...


class SeededDropInjector:
    """Drops a deterministic, seed-replayable fraction of deliveries."""

    def __init__(self, drop_rate: float, seed: int) -> None:
        if not 0.0 <= drop_rate <= 1.0:
            raise ValueError(f"drop_rate must be in [0, 1], got {drop_rate}")
        self.drop_rate = drop_rate
        self._rng = random.Random(seed)

    def should_drop(self, topic: QualifiedName) -> bool:
        return self._rng.random() < self.drop_rate


@dataclass(frozen=True)
class BusGraph:
    """Snapshot of the discovery state: who exists and who talks to whom."""

    nodes: frozenset[str]
    publishers: dict[str, frozenset[str]]
    subscribers: dict[str, frozenset[str]]


class NodeHandle:
    def __init__(self, bus: "Bus", name: QualifiedName, parameters: dict[str, str]) -> None:
        self._bus = bus
        self.name = name
        self.parameters = parameters
        self._closed = False
        self._endpoints: list[object] = []

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        self._bus._close_node(self)

    def __repr__(self) -> str:
        return f"NodeHandle({self.name.full})"


class PublisherHandle:
    def __init__(self, bus: "Bus", node: NodeHandle, topic: QualifiedName, qos: QosProfile) -> None:
        self._bus = bus
        self.node = node
        self.topic = topic
        self.qos = qos
        self._closed = False
        self._last_stamp = -1.0

    @property
    def closed(self) -> bool:
        return self._closed

    def publish(self, stamp: float, payload: bytes) -> DeliveryReport:
        return self._bus.publish(self, stamp, payload)

    def close(self) -> None:
        self._bus._close_publisher(self)


class SubscriptionHandle:
    def __init__(self, bus: "Bus", node: NodeHandle, topic: QualifiedName, qos: QosProfile) -> None:
        self._bus = bus
        self.node = node
        self.topic = topic
        self.qos = qos
        self._closed = False
        self._queue: deque[tuple[int, Message]] = deque(maxlen=qos.history_depth)

    @property
    def closed(self) -> bool:
        return self._closed

    def take(self) -> Message | None:
        return self._bus.take(self)

    def close(self) -> None:
        self._bus._close_subscription(self)


class Bus:
    """In-process bus shared by every participant; the only common substrate.

    All handle operations are safe to call from multiple threads. Ordering is
    guaranteed per publisher-subscriber pair only.
    """

    def __init__(self, fault_injector: FaultInjector | None = None) -> None:
        self._lock = threading.RLock()
        self._nodes: dict[str, NodeHandle] = {}
        self._publishers: dict[str, list[PublisherHandle]] = {}
        self._subscriptions: dict[str, list[SubscriptionHandle]] = {}
        self._fault_injector = fault_injector
        self._seq = 0
        self._advertise_hooks: list[Callable[[PublisherHandle], None]] = []

    def set_fault_injector(self, injector: FaultInjector | None) -> None:
        with self._lock:
            self._fault_injector = injector

    # -- registration -------------------------------------------------

    def create_node(self, namespace: str, local_name: str,
                    params: dict[str, str] | None = None) -> NodeHandle:
        name = QualifiedName(namespace, local_name)
        parameters = dict(params or {})
        parameters["agent_name"] = namespace
        with self._lock:
            if name.full in self._nodes:
                raise DuplicateNodeError(f"node {name.full} already exists")
            node = NodeHandle(self, name, parameters)
            self._nodes[name.full] = node
        return node

    def advertise(self, node: NodeHandle, topic: str, qos: QosProfile = DEFAULT_QOS) -> PublisherHandle:
        if topic.startswith("/"):
            raise InvalidNameError(
                f"publishers use relative topic names, got absolute {topic!r}")
        resolved = QualifiedName(node.name.namespace, topic)
        with self._lock:
            self._check_node_live(node)
            pub = PublisherHandle(self, node, resolved, qos)
            self._publishers.setdefault(resolved.full, []).append(pub)
            node._endpoints.append(pub)
            hooks = list(self._advertise_hooks)
        for hook in hooks:
            hook(pub)
        return pub

    def subscribe(self, node: NodeHandle, topic: str, qos: QosProfile = DEFAULT_QOS) -> SubscriptionHandle:
        if topic.startswith("/"):
            resolved = QualifiedName.parse(topic)
        else:
            resolved = QualifiedName(node.name.namespace, topic)
        with self._lock:
            self._check_node_live(node)
            sub = SubscriptionHandle(self, node, resolved, qos)
            self._subscriptions.setdefault(resolved.full, []).append(sub)
            node._endpoints.append(sub)
        return sub

    def add_advertise_hook(self, hook: Callable[[PublisherHandle], None]) -> None:
        """Invoke hook for every future advertise; used by recorders."""
        with self._lock:
            self._advertise_hooks.append(hook)

    def remove_advertise_hook(self, hook: Callable[[PublisherHandle], None]) -> None:
        with self._lock:
            if hook in self._advertise_hooks:
                self._advertise_hooks.remove(hook)

    # -- data path ----------------------------------------------------

    def publish(self, pub: PublisherHandle, stamp: float, payload: bytes) -> DeliveryReport:
        with self._lock:
            if pub._closed:
                raise ClosedHandleError(f"publisher on {pub.topic.full} is closed")
            if stamp < 0.0:
                raise StampOrderError(f"negative stamp {stamp}")
            if stamp < pub._last_stamp:
                raise StampOrderError(
                    f"stamp {stamp} precedes {pub._last_stamp} on {pub.topic.full}")
            pub._last_stamp = stamp
            msg = Message(pub.topic, stamp, bytes(payload))
            subs = self._subscriptions.get(pub.topic.full, [])
            matched = len(subs)
            enqueued = 0
            best_effort_pub = pub.qos.reliability is Reliability.BEST_EFFORT
            for sub in subs:
                # Drops only affect deliveries where both sides accept loss;
                # a reliable subscription (e.g. a recorder) is never starved.
                droppable = best_effort_pub and sub.qos.reliability is Reliability.BEST_EFFORT
                if droppable and self._fault_injector is not None \
                        and self._fault_injector.should_drop(pub.topic):
                    continue
                self._seq += 1
                sub._queue.append((self._seq, msg))
                enqueued += 1
            return DeliveryReport(matched, enqueued)

    def take(self, sub: SubscriptionHandle) -> Message | None:
        with self._lock:
            if sub._closed:
                raise ClosedHandleError(f"subscription on {sub.topic.full} is closed")
            if not sub._queue:
                return None
            return sub._queue.popleft()[1]

    def take_with_seq(self, sub: SubscriptionHandle) -> tuple[int, Message] | None:
        """Like take() but exposes the bus-wide enqueue sequence number."""
        with self._lock:
            if sub._closed:
                raise ClosedHandleError(f"subscription on {sub.topic.full} is closed")
            if not sub._queue:
                return None
            return sub._queue.popleft()

    # -- discovery ----------------------------------------------------

    def discover(self) -> BusGraph:
        with self._lock:
            publishers = {
                topic: frozenset(p.node.name.full for p in pubs)
                for topic, pubs in self._publishers.items() if pubs
            }
            subscribers = {
                topic: frozenset(s.node.name.full for s in subs)
                for topic, subs in self._subscriptions.items() if subs
            }
            return BusGraph(frozenset(self._nodes), publishers, subscribers)

    # -- teardown -----------------------------------------------------

    def _check_node_live(self, node: NodeHandle) -> None:
        if node._closed or self._nodes.get(node.name.full) is not node:
            raise ClosedHandleError(f"node {node.name.full} is not registered")

    def _close_node(self, node: NodeHandle) -> None:
        with self._lock:
            if node._closed:
                return
            for endpoint in list(node._endpoints):
                if isinstance(endpoint, PublisherHandle):
                    self._close_publisher(endpoint)
                else:
                    self._close_subscription(endpoint)
            self._nodes.pop(node.name.full, None)
            node._closed = True

    def _close_publisher(self, pub: PublisherHandle) -> None:
        with self._lock:
            if pub._closed:
                return
            pubs = self._publishers.get(pub.topic.full, [])
            if pub in pubs:
                pubs.remove(pub)
            if not pubs:
                self._publishers.pop(pub.topic.full, None)
            if pub in pub.node._endpoints:
                pub.node._endpoints.remove(pub)
            pub._closed = True

    def _close_subscription(self, sub: SubscriptionHandle) -> None:
        with self._lock:
            if sub._closed:
                return
            subs = self._subscriptions.get(sub.topic.full, [])
            if sub in subs:
                subs.remove(sub)
            if not subs:
                self._subscriptions.pop(sub.topic.full, None)
            if sub in sub.node._endpoints:
                sub.node._endpoints.remove(sub)
            sub._closed = True

    def topics(self) -> list[str]:
        with self._lock:
            return sorted(set(self._publishers) | set(self._subscriptions))
