"""Voxel-grid robot bodies: validity checking, repair, GA mutation, diffing, tiling.

A body is an n x n integer grid (rows top-to-bottom, columns left-to-right).
Cell codes: 0 empty, 1 rigid, 2 soft, 3 horizontal actuator, 4 vertical
actuator. Code 5 is environment geometry and never legal inside a body.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EMPTY = 0
RIGID = 1
SOFT = 2
H_ACT = 3
V_ACT = 4

ROBOT_CODES = (EMPTY, RIGID, SOFT, H_ACT, V_ACT)
ACTUATOR_CODES = (H_ACT, V_ACT)

DEFAULT_MUTATION_RATE = 0.1
DEFAULT_ATTEMPT_CAP = 50


class SizeMismatch(ValueError):
    """Two bodies of different grid sizes were combined."""


class Unrepairable(Exception):
    """No local, unambiguous repair exists; the slot must fall back to GA."""


class MutationExhausted(Exception):
    """ga_mutate hit its attempt cap without producing a valid child."""


def is_actuator(code: int) -> bool:
    return code in ACTUATOR_CODES


class Body:
    """An n x n voxel grid. May be invalid; validity is a query, not a constraint."""

    __slots__ = ("cells",)

    def __init__(self, cells):
        arr = np.asarray(cells, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise ValueError(f"body must be a square 2-D grid, got shape {arr.shape}")
        arr = arr.copy()
        arr.setflags(write=False)
        self.cells = arr

    @property
    def size(self) -> int:
        return self.cells.shape[0]

    @classmethod
    def from_rows(cls, rows) -> "Body":
        return cls(rows)

    def to_rows(self) -> list:
        return self.cells.tolist()

    def render(self) -> str:
        """Canonical text rendering: rows of space-separated integers."""
        return "\n".join(" ".join(str(int(v)) for v in row) for row in self.cells)

    def key(self) -> bytes:
        return self.cells.tobytes()

    def __eq__(self, other):
        if not isinstance(other, Body):
            return NotImplemented
        return self.cells.shape == other.cells.shape and bool(
            np.array_equal(self.cells, other.cells)
        )

    def __hash__(self):
        return hash((self.size, self.key()))

    def __repr__(self):
        return f"Body({self.to_rows()!r})"


@dataclass(frozen=True)
class ValidityReport:
    is_valid: bool
    connected: bool
    has_actuator: bool
    legal_codes: bool
    component_count: int
    largest_component_fraction: float


@dataclass(frozen=True)
class VoxelDiff:
    """Cell-level edits from parent to child: (row, col, old_code, new_code)."""

    edits: tuple

    @property
    def count(self) -> int:
        return len(self.edits)


def _components(cells: np.ndarray) -> list:
    """4-connected components of non-empty cells, in row-major discovery order."""
    n_rows, n_cols = cells.shape
    seen = np.zeros(cells.shape, dtype=bool)
    comps = []
    for r in range(n_rows):
        for c in range(n_cols):
            if cells[r, c] == EMPTY or seen[r, c]:
                continue
            stack = [(r, c)]
            seen[r, c] = True
            comp = []
            while stack:
                cr, cc = stack.pop()
                comp.append((cr, cc))
                for nr, nc in ((cr - 1, cc), (cr + 1, cc), (cr, cc - 1), (cr, cc + 1)):
                    if 0 <= nr < n_rows and 0 <= nc < n_cols:
                        if cells[nr, nc] != EMPTY and not seen[nr, nc]:
                            seen[nr, nc] = True
                            stack.append((nr, nc))
            comps.append(comp)
    return comps


def check_validity(body: Body) -> ValidityReport:
    """Validity = legal codes + one 4-connected non-empty component + an actuator."""
    cells = body.cells
    legal = bool(np.all((cells >= EMPTY) & (cells <= V_ACT)))
    has_act = bool(np.any((cells == H_ACT) | (cells == V_ACT)))
    comps = _components(cells)
    non_empty = int(np.count_nonzero(cells))
    largest = max((len(c) for c in comps), default=0)
    frac = largest / non_empty if non_empty else 0.0
    connected = len(comps) == 1
    is_valid = legal and connected and has_act and non_empty > 0
    return ValidityReport(
        is_valid=is_valid,
        connected=connected,
        has_actuator=has_act,
        legal_codes=legal,
        component_count=len(comps),
        largest_component_fraction=frac,
    )


# Repairs are deliberately conservative: they may only erase material, never
# create it, so a repaired body is always a subset of the proposal.
DOMINANT_COMPONENT_FRACTION = 0.8


def repair(body: Body) -> Body:
    """Apply the two sanctioned local repairs; raise Unrepairable if still invalid.

    R1: cells with codes outside {0..4} become empty.
    R2: if disconnected and the largest component holds >= 80% of non-empty
        cells and contains an actuator, erase all other components.
    """
    cells = np.array(body.cells)
    cells[(cells < EMPTY) | (cells > V_ACT)] = EMPTY  # R1

    comps = _components(cells)
    if len(comps) > 1:
        # Largest component; ties break to the earliest in row-major order.
        largest_i = max(range(len(comps)), key=lambda i: (len(comps[i]), -i))
        largest = comps[largest_i]
        non_empty = int(np.count_nonzero(cells))
        has_act = any(is_actuator(int(cells[r, c])) for r, c in largest)
        if len(largest) >= DOMINANT_COMPONENT_FRACTION * non_empty and has_act:  # R2
            for i, comp in enumerate(comps):
                if i == largest_i:
                    continue
                for r, c in comp:
                    cells[r, c] = EMPTY

    repaired = Body(cells)
    if not check_validity(repaired).is_valid:
        raise Unrepairable("no local, unambiguous repair applies")
    return repaired


def ga_mutate(
    parent: Body,
    rng_seed: int,
    per_voxel_rate: float = DEFAULT_MUTATION_RATE,
    attempt_cap: int = DEFAULT_ATTEMPT_CAP,
) -> Body:
    """Per-voxel uniform resampling at `per_voxel_rate`, retried until valid.

    Deterministic given (parent, rng_seed, per_voxel_rate). After the attempt
    cap, repair of the final draw is attempted before giving up.
    """
    rng = np.random.default_rng(rng_seed)
    shape = parent.cells.shape
    child = parent
    for _ in range(attempt_cap):
        mask = rng.random(shape) < per_voxel_rate
        draws = rng.integers(EMPTY, V_ACT + 1, size=shape)
        child = Body(np.where(mask, draws, parent.cells))
        if check_validity(child).is_valid:
            return child
    try:
        return repair(child)
    except Unrepairable:
        raise MutationExhausted(
            f"no valid child after {attempt_cap} attempts (rate={per_voxel_rate})"
        ) from None


def diff(parent: Body, child: Body) -> VoxelDiff:
    """All cells where parent and child differ, in row-major order."""
    if parent.size != child.size:
        raise SizeMismatch(f"parent size {parent.size} != child size {child.size}")
    rows, cols = np.nonzero(parent.cells != child.cells)
    edits = tuple(
        (int(r), int(c), int(parent.cells[r, c]), int(child.cells[r, c]))
        for r, c in zip(rows, cols)
    )
    return VoxelDiff(edits=edits)


def upsample_tiling(source: Body, factor: int) -> Body:
    """Tile each source cell into a factor x factor block (output (r,c) = source (r//f, c//f))."""
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    return Body(np.kron(source.cells, np.ones((factor, factor), dtype=np.int64)))


def random_valid_body(size: int, rng: np.random.Generator, max_attempts: int = 1000) -> Body:
    """Rejection-sample a valid body: uniform cell codes, repair as a fallback."""
    last = None
    for _ in range(max_attempts):
        cells = rng.integers(EMPTY, V_ACT + 1, size=(size, size))
        last = Body(cells)
        if check_validity(last).is_valid:
            return last
        try:
            return repair(last)
        except Unrepairable:
            continue
    raise MutationExhausted(f"could not sample a valid {size}x{size} body")
