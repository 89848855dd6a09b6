"""Timestamped rigid-transform tree relating agent, sensor, and world frames.

Frames form a forest; each edge keeps a sliding time buffer of samples and
lookups compose interpolated edges along the unique tree path. The "world"
frame is conventionally the RTK base anchor.
"""
from __future__ import annotations

import threading
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from . import quat


class TfError(Exception):
    pass


class UnknownFrameError(TfError):
    pass


class DisconnectedFramesError(TfError):
    pass


class CycleError(TfError):
    pass


class TimeBoundsError(TfError):
    """Requested or inserted time falls outside an edge's buffer span."""


class FrameMismatchError(TfError):
    pass


QUAT_NORM_TOL = 1e-9
DEFAULT_HORIZON_S = 10.0


@dataclass(frozen=True)
class Transform:
    """Rigid transform mapping child-frame coordinates into the parent frame."""

    parent: str
    child: str
    translation: np.ndarray
    rotation: np.ndarray  # unit quaternion, (w, x, y, z)
    stamp: float = 0.0

    def __post_init__(self) -> None:
        if not self.parent or not self.child:
            raise UnknownFrameError("frame names must be non-empty")
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
            raise ValueError(f"rotation is not a unit quaternion: {q}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q)

    def apply(self, point) -> np.ndarray:
        """Map a point expressed in the child frame into the parent frame."""
        return quat.rotate(self.rotation, np.asarray(point, dtype=float)) + self.translation

    @classmethod
    def identity(cls, parent: str, child: str | None = None, stamp: float = 0.0) -> "Transform":
        return cls(parent, child if child is not None else parent,
                   np.zeros(3), quat.IDENTITY.copy(), stamp)


def compose(a: Transform, b: Transform) -> Transform:
    """a then b: result maps b.child coordinates into a.parent."""
    if a.child != b.parent:
        raise FrameMismatchError(f"cannot compose {a.parent}->{a.child} with {b.parent}->{b.child}")
    return Transform(
        a.parent, b.child,
        a.translation + quat.rotate(a.rotation, b.translation),
        quat.mul(a.rotation, b.rotation),
        max(a.stamp, b.stamp),
    )


def invert(a: Transform) -> Transform:
    qc = quat.conjugate(a.rotation)
    return Transform(a.child, a.parent, -quat.rotate(qc, a.translation), qc, a.stamp)


@dataclass
class _Edge:
    parent: str
    stamps: list[float] = field(default_factory=list)
    translations: list[np.ndarray] = field(default_factory=list)
    rotations: list[np.ndarray] = field(default_factory=list)


class TransformTree:
    """One-writer/many-reader forest of timestamped edges.

    Each edge retains ``horizon_s`` seconds of history behind its newest
    sample; lookups refuse to extrapolate outside an edge's buffered span.
    """

    def __init__(self, horizon_s: float = DEFAULT_HORIZON_S) -> None:
        if horizon_s <= 0.0:
            raise ValueError("horizon must be positive")
        self._horizon = horizon_s
        self._edges: dict[str, _Edge] = {}  # child -> edge history
        self._lock = threading.RLock()

    # -- writing ------------------------------------------------------

    def set_transform(self, t: Transform) -> None:
        with self._lock:
            edge = self._edges.get(t.child)
            if edge is not None and edge.parent != t.parent:
                raise CycleError(
                    f"frame {t.child!r} already has parent {edge.parent!r}; "
                    f"re-parenting to {t.parent!r} would break the forest")
            if edge is None and self._would_cycle(t.parent, t.child):
                raise CycleError(f"edge {t.parent}->{t.child} would create a cycle")
            if edge is None:
                edge = _Edge(t.parent)
                self._edges[t.child] = edge
            if edge.stamps and t.stamp < edge.stamps[-1] - self._horizon:
                raise TimeBoundsError(
                    f"stamp {t.stamp} is older than the {self._horizon}s buffer horizon")
            rotation = quat.canonicalize(t.rotation)
            i = bisect_left(edge.stamps, t.stamp)
            if i < len(edge.stamps) and edge.stamps[i] == t.stamp:
                edge.translations[i] = t.translation
                edge.rotations[i] = rotation
            else:
                edge.stamps.insert(i, t.stamp)
                edge.translations.insert(i, t.translation)
                edge.rotations.insert(i, rotation)
            cutoff = edge.stamps[-1] - self._horizon
            while edge.stamps[0] < cutoff:
                edge.stamps.pop(0)
                edge.translations.pop(0)
                edge.rotations.pop(0)

    def _would_cycle(self, parent: str, child: str) -> bool:
        node = parent
        while node in self._edges:
            node = self._edges[node].parent
            if node == child:
                return True
        return parent == child

    # -- reading ------------------------------------------------------

    def frames(self) -> set[str]:
        with self._lock:
            out = set(self._edges)
            out.update(e.parent for e in self._edges.values())
            return out

    def lookup(self, target: str, source: str, at: float) -> Transform:
        """Transform mapping source-frame coordinates into the target frame at time ``at``."""
        with self._lock:
            known = self.frames()
            for f in (target, source):
                if f not in known:
                    raise UnknownFrameError(f"unknown frame {f!r}")
            if target == source:
                return Transform.identity(target, source, at)
            t_chain = self._chain_to_root(target)
            s_chain = self._chain_to_root(source)
            t_set = set(t_chain)
            ancestor = next((f for f in s_chain if f in t_set), None)
            if ancestor is None:
                raise DisconnectedFramesError(
                    f"frames {target!r} and {source!r} live in different trees")
            q_t, p_t = self._to_ancestor(target, ancestor, at)
            q_s, p_s = self._to_ancestor(source, ancestor, at)
            q_ti = quat.conjugate(q_t)
            rotation = quat.canonicalize(quat.mul(q_ti, q_s))
            translation = quat.rotate(q_ti, p_s - p_t)
            return Transform(target, source, translation, rotation, at)

    def _chain_to_root(self, frame: str) -> list[str]:
        chain = [frame]
        while frame in self._edges:
            frame = self._edges[frame].parent
            chain.append(frame)
        return chain

    def _to_ancestor(self, frame: str, ancestor: str, at: float) -> tuple[np.ndarray, np.ndarray]:
        """Accumulated (rotation, translation) mapping ``frame`` coords into ``ancestor``."""
        q_acc = quat.IDENTITY
        p_acc = np.zeros(3)
        node = frame
        while node != ancestor:
            edge = self._edges[node]
            eq, ep = self._sample(edge, node, at)
            q_acc = quat.mul(eq, q_acc)
            p_acc = ep + quat.rotate(eq, p_acc)
            node = edge.parent
        return q_acc, p_acc

    def _sample(self, edge: _Edge, child: str, at: float) -> tuple[np.ndarray, np.ndarray]:
        stamps = edge.stamps
        if not stamps or at < stamps[0] or at > stamps[-1]:
            span = f"[{stamps[0]}, {stamps[-1]}]" if stamps else "(empty)"
            raise TimeBoundsError(
                f"time {at} outside buffer span {span} of edge {edge.parent}->{child}")
        i = bisect_left(stamps, at)
        if i < len(stamps) and stamps[i] == at:
            return edge.rotations[i], edge.translations[i]
        lo, hi = i - 1, i
        alpha = (at - stamps[lo]) / (stamps[hi] - stamps[lo])
        translation = (1.0 - alpha) * edge.translations[lo] + alpha * edge.translations[hi]
        rotation = quat.slerp(edge.rotations[lo], edge.rotations[hi], alpha)
        return rotation, translation

    # -- export ---------------------------------------------------------

    def to_dot(self) -> str:
        """Tree snapshot as a DOT digraph (one arrow per parent->child edge)."""
        with self._lock:
            lines = ["digraph transform_tree {"]
            for child in sorted(self._edges):
                lines.append(f'  "{self._edges[child].parent}" -> "{child}";')
            lines.append("}")
            return "\n".join(lines) + "\n"
