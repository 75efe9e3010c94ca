"""Board-to-tensor encoding and the eight square symmetries.

A position is encoded as 24 binary 19x19 planes, all color-relative to the
player to move ("our" color):

    0      our stone present
    1      opponent stone present
    2      blank space
    3      legal move
    4-7    liberties after playing here, one-hot at 1, 2, 3, >=4
           (zero on occupied or illegal points)
    8-15   time since last move: plane 8+k-1 marks the point played k moves
           ago, k = 1..8; a pass consumes a k slot but marks nothing
    16-23  liberty count of the group occupying the point, one-hot at 1..7,
           plane 23 saturating at >=8
"""

from __future__ import annotations

import numpy as np

from .board import BLACK, EMPTY, BoardState, Coord, opponent

BOARD_SIZE = 19
NUM_PLANES = 24

PLANE_OURS = 0
PLANE_OPPONENT = 1
PLANE_BLANK = 2
PLANE_LEGAL = 3
PLANE_LIBS_AFTER = 4  # 4 planes: 1, 2, 3, >=4
PLANE_HISTORY = 8  # 8 planes: k = 1..8 moves ago
PLANE_LIBERTIES = 16  # 8 planes: 1..7, >=8

NUM_SYMMETRIES = 8  # id = flip * 4 + quarter_turns


def encode(state: BoardState) -> np.ndarray:
    """Encode a position into the (24, 19, 19) uint8 feature tensor."""
    if state.size != BOARD_SIZE:
        raise ValueError(f"encoding requires a {BOARD_SIZE}x{BOARD_SIZE} board")
    n = state.size
    planes = np.zeros((NUM_PLANES, n, n), dtype=np.uint8)
    us = state.to_move
    them = opponent(us)

    planes[PLANE_OURS] = state.grid == us
    planes[PLANE_OPPONENT] = state.grid == them
    planes[PLANE_BLANK] = state.grid == EMPTY

    for r in range(n):
        for c in range(n):
            coord = Coord(r, c)
            if state._check_play(coord) is not None:
                continue
            planes[PLANE_LEGAL, r, c] = 1
            libs = state._liberties_after_fast(coord)
            planes[PLANE_LIBS_AFTER + min(libs, 4) - 1, r, c] = 1

    history = state.history
    for k in range(1, 9):
        if k > len(history):
            break
        move, _ = history[-k]
        if not move.is_pass:
            planes[PLANE_HISTORY + k - 1, move.point.row, move.point.col] = 1

    for group in state.groups():
        plane = PLANE_LIBERTIES + min(len(group.liberties), 8) - 1
        for stone in group.stones:
            planes[plane, stone.row, stone.col] = 1

    return planes


# -- dihedral symmetries ------------------------------------------------------
#
# Symmetry s in 0..7 acts as: rotate counterclockwise by (s % 4) quarter
# turns, then mirror left-right if s >= 4. Applied identically to every
# plane of a tensor.


def transform_planes(planes: np.ndarray, sym: int) -> np.ndarray:
    """Apply symmetry ``sym`` to an array whose last two axes are the board."""
    if not 0 <= sym < NUM_SYMMETRIES:
        raise ValueError(f"symmetry id must be 0..7, got {sym}")
    out = np.rot90(planes, sym % 4, axes=(-2, -1))
    if sym >= 4:
        out = np.flip(out, axis=-1)
    return np.ascontiguousarray(out)


def transform_scores(scores: np.ndarray, sym: int) -> np.ndarray:
    return transform_planes(scores, sym)


def inverse_transform_scores(scores: np.ndarray, sym: int) -> np.ndarray:
    """Exact inverse of transform_scores for the same symmetry id."""
    return transform_planes(scores, INVERSE_SYMMETRY[sym])


def transform_coord(coord: Coord, sym: int, size: int = BOARD_SIZE) -> Coord:
    """Where a point lands under ``sym``; matches transform_planes pointwise."""
    r, c = coord
    for _ in range(sym % 4):
        r, c = size - 1 - c, r
    if sym >= 4:
        c = size - 1 - c
    return Coord(r, c)


def compose_symmetries(first: int, then: int) -> int:
    """Symmetry equivalent to applying ``first`` and then ``then``."""
    return _COMPOSE[first][then]


def _build_tables() -> tuple[list[list[int]], list[int]]:
    probe = np.arange(16).reshape(4, 4)
    variants = [transform_planes(probe, s).tobytes() for s in range(NUM_SYMMETRIES)]
    compose = [[0] * NUM_SYMMETRIES for _ in range(NUM_SYMMETRIES)]
    inverse = [0] * NUM_SYMMETRIES
    for a in range(NUM_SYMMETRIES):
        for b in range(NUM_SYMMETRIES):
            combined = transform_planes(transform_planes(probe, a), b).tobytes()
            compose[a][b] = variants.index(combined)
        inverse[a] = next(
            b
            for b in range(NUM_SYMMETRIES)
            if transform_planes(transform_planes(probe, a), b).tobytes()
            == probe.tobytes()
        )
    return compose, inverse


_COMPOSE, INVERSE_SYMMETRY = _build_tables()
