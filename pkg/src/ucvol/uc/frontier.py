"""Frontier hypercube graph: sublinear-space traversal of grid cubes.

Only inspected-but-unprocessed cubes are stored. ``P`` holds cubes that
share a face carrying a feasible intersection with a processed cube; ``NP``
holds the other inspected cubes. Processed cubes are dropped immediately;
the face labels of their stored neighbours remember them.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Hashable, Iterable, Sequence


class FaceLabel(IntEnum):
    SharedWithProcessed = 0
    SharedWithUninspected = 1
    SharedWithInspectedUnprocessed = 2


Key = tuple[int, ...]


@dataclass
class FrontierGraph:
    """Traversal state over a ``dim``-dimensional integer lattice.

    ``periods[j]`` wraps axis ``j`` (toroidal adjacency) when not None.
    Faces are numbered ``2*j + s``: ``s = 0`` is the ``-j`` face, ``s = 1`` the ``+j`` face.
    ``order`` picks the next promising cube: ``"fifo"`` (breadth first, keeps the
    frontier a thin shell) or ``"lifo"`` (depth first).
    """

    dim: int
    periods: tuple[int | None, ...] = ()
    order: str = "fifo"
    P: dict = field(default_factory=dict)
    NP: dict = field(default_factory=dict)
    stack: deque = field(default_factory=deque)
    inflight: dict = field(default_factory=dict)
    processed_count: int = 0
    peak_size: int = 0
    inspections: int = 0
    retired: int = 0

    def __post_init__(self):
        if not self.periods:
            self.periods = (None,) * self.dim
        if len(self.periods) != self.dim:
            raise ValueError("one period entry per axis")
        if self.order not in ("fifo", "lifo"):
            raise ValueError(f"unknown order {self.order!r}")

    @property
    def n_faces(self) -> int:
        return 2 * self.dim

    @property
    def size(self) -> int:
        return len(self.P) + len(self.NP) + len(self.inflight)

    def neighbor(self, key: Key, face: int) -> Key:
        j, s = divmod(face, 2)
        k = list(key)
        k[j] += 1 if s else -1
        p = self.periods[j]
        if p is not None:
            k[j] %= p
        return tuple(k)

    def _known(self, key):
        for store in (self.P, self.NP, self.inflight):
            if key in store:
                return store[key]
        return None

    def _fresh_labels(self, key: Key) -> bytearray:
        labels = bytearray(self.n_faces)
        for f in range(self.n_faces):
            n = self.neighbor(key, f)
            if n == key:
                labels[f] = FaceLabel.SharedWithProcessed
                continue
            other = self._known(n)
            if other is None:
                labels[f] = FaceLabel.SharedWithUninspected
            else:
                labels[f] = FaceLabel.SharedWithInspectedUnprocessed
                other[f ^ 1] = FaceLabel.SharedWithInspectedUnprocessed
        return labels

    def _track(self):
        if self.size > self.peak_size:
            self.peak_size = self.size

    def add_seed(self, key: Key) -> None:
        """Register a seed before (or between) traversal steps."""
        key = tuple(key)
        if key in self.P or key in self.inflight:
            return
        if key in self.NP:
            self.P[key] = self.NP.pop(key)
        else:
            self.P[key] = self._fresh_labels(key)
            self.inspections += 1
        self.stack.append(key)
        self._track()

    def pop(self) -> tuple[Key, int] | None:
        """Take the next promising cube; returns it with its processed-face mask."""
        take = self.stack.popleft if self.order == "fifo" else self.stack.pop
        while self.stack:
            key = take()
            labels = self.P.pop(key, None)
            if labels is None:
                continue
            self.inflight[key] = labels
            return key, self.processed_mask(labels)
        return None

    @staticmethod
    def processed_mask(labels) -> int:
        m = 0
        for f, lab in enumerate(labels):
            if lab == FaceLabel.SharedWithProcessed:
                m |= 1 << f
        return m

    def step(self, key: Key, feasible_faces: int) -> None:
        """Retire a processed cube and update its face neighbours.

        ``feasible_faces`` has bit ``f`` set when face ``f`` carried a feasible
        intersection; those neighbours become promising.
        """
        labels = self.inflight.pop(key)
        self.processed_count += 1
        for f in range(self.n_faces):
            if labels[f] == FaceLabel.SharedWithProcessed:
                continue
            n = self.neighbor(key, f)
            feasible = bool(feasible_faces >> f & 1)
            back = f ^ 1
            if n in self.inflight:
                self.inflight[n][back] = FaceLabel.SharedWithProcessed
            elif n in self.P:
                self.P[n][back] = FaceLabel.SharedWithProcessed
            elif n in self.NP:
                self.NP[n][back] = FaceLabel.SharedWithProcessed
                if feasible:
                    self.P[n] = self.NP.pop(n)
                    self.stack.append(n)
            else:
                nl = self._fresh_labels(n)
                nl[back] = FaceLabel.SharedWithProcessed
                self.inspections += 1
                if feasible:
                    self.P[n] = nl
                    self.stack.append(n)
                else:
                    self.NP[n] = nl
        self._track()

    def empty(self) -> bool:
        return not self.P

    def retire(self) -> None:
        """Drop NP once P is exhausted: nothing can promote those cubes any more."""
        self.retired += len(self.NP)
        self.NP.clear()


def traverse(frontier: FrontierGraph, process: Callable[[list[tuple[Key, int]]], Sequence[int]],
             batch: int = 1) -> int:
    """Run the frontier until P is empty.

    ``process`` receives up to ``batch`` ``(key, processed_face_mask)`` pairs and
    returns one feasible-face mask per cube. Returns the number of processed cubes.
    """
    done = 0
    while True:
        work = []
        while len(work) < batch:
            item = frontier.pop()
            if item is None:
                break
            work.append(item)
        if not work:
            frontier.retire()
            return done
        masks = process(work)
        for (key, _), m in zip(work, masks):
            frontier.step(key, int(m))
        done += len(work)


def frontier_step(frontier: FrontierGraph, processed_cube: Key, per_face_feasibility) -> FrontierGraph:
    """Functional-style wrapper: ``per_face_feasibility`` is a 12-bit mask or a bool sequence."""
    if not isinstance(per_face_feasibility, int):
        mask = 0
        for f, ok in enumerate(per_face_feasibility):
            if ok:
                mask |= 1 << f
        per_face_feasibility = mask
    key = tuple(processed_cube)
    if key not in frontier.inflight:
        if key not in frontier.P:
            raise KeyError(f"cube {key} is not in P")
        frontier.inflight[key] = frontier.P.pop(key)
    frontier.step(key, per_face_feasibility)
    return frontier
