"""Static placement of intermediate activation tensors in one scratch arena.

Execution order on a linear chain is the chain order, so tensor i (the
output of node i) is live from step i until step i+1 consumes it; at most
two intermediates are live at any step. Placing even-numbered tensors at
the bottom of the arena and odd-numbered ones at the top (a generalized
double buffer) therefore packs every adjacent pair into an arena exactly
as large as the liveness peak, which is optimal. The graph input and final
output buffers are caller-owned and never enter the arena.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CodegenError
from .ir import BYTES_PER_FLOAT, Graph


@dataclass(frozen=True)
class TensorSlot:
    """Arena placement of one intermediate tensor. `lifetime` spans the step
    that defines it through the last step that reads it, inclusive."""

    name: str
    byte_size: int
    lifetime: tuple[int, int]
    arena_offset: int


@dataclass(frozen=True)
class MemoryPlan:
    slots: tuple[TensorSlot, ...]
    arena_total_bytes: int
    n_steps: int

    def check_no_collisions(self) -> None:
        """Pairwise safety check: tensors with overlapping lifetimes must
        occupy disjoint arena byte ranges."""
        for a_idx in range(len(self.slots)):
            for b_idx in range(a_idx + 1, len(self.slots)):
                a, b = self.slots[a_idx], self.slots[b_idx]
                lives_overlap = (
                    a.lifetime[0] <= b.lifetime[1] and b.lifetime[0] <= a.lifetime[1]
                )
                if not lives_overlap:
                    continue
                if a.arena_offset < b.arena_offset + b.byte_size and \
                        b.arena_offset < a.arena_offset + a.byte_size:
                    raise CodegenError(
                        f"memory plan collision: '{a.name}' and '{b.name}' overlap "
                        "in both lifetime and storage"
                    )

    def as_dict(self) -> dict:
        return {
            "arena_total_bytes": self.arena_total_bytes,
            "tensors": [
                {
                    "name": s.name,
                    "byte_size": s.byte_size,
                    "lifetime": list(s.lifetime),
                    "arena_offset": s.arena_offset,
                }
                for s in self.slots
            ],
        }


def plan_memory(g: Graph) -> MemoryPlan:
    """Compute arena offsets and lifetimes for all intermediate tensors.

    `arena_total_bytes` equals the peak of simultaneously live intermediate
    bytes, which on a chain is the largest adjacent tensor pair; it is the
    model-attributable RAM estimate.
    """
    if g.shapes is None:
        raise CodegenError("graph must be shape-inferred before memory planning")
    n = len(g.nodes)
    sizes = [
        int(np.prod(g.shapes[i], dtype=np.int64)) * BYTES_PER_FLOAT
        for i in range(n - 1)
    ]

    arena_total = 0
    for step in range(n):
        live = 0
        if 0 <= step - 1 < len(sizes):
            live += sizes[step - 1]
        if step < len(sizes):
            live += sizes[step]
        arena_total = max(arena_total, live)

    slots = []
    for i, size in enumerate(sizes):
        offset = 0 if i % 2 == 0 else arena_total - size
        slots.append(TensorSlot(
            name=f"t{i}_{g.nodes[i].id}",
            byte_size=size,
            lifetime=(i, i + 1),
            arena_offset=offset,
        ))

    plan = MemoryPlan(slots=tuple(slots), arena_total_bytes=arena_total, n_steps=n)
    plan.check_no_collisions()
    return plan
