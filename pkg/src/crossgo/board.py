"""Go rules kernel: stone placement, groups, liberties, captures, legality.

All board values are immutable: ``play`` returns a fresh ``BoardState`` and
never touches its input, so states can be shared freely across threads.
Legality enforces no-suicide and positional superko (whole-board repetition).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

EMPTY = 0
BLACK = 1
WHITE = 2

MIN_SIZE = 2
MAX_SIZE = 25
DEFAULT_SIZE = 19

_ZOBRIST_SEED = 0x6F6B6F74  # fixed so signatures are stable across processes
_zobrist_cache: dict[int, np.ndarray] = {}
_neighbor_cache: dict[int, list[list[int]]] = {}


def opponent(color: int) -> int:
    return BLACK + WHITE - color


class Coord(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class Move:
    """Either a play on a point or a pass (point is None)."""

    point: Coord | None = None

    @classmethod
    def play(cls, row_or_coord, col: int | None = None) -> "Move":
        if col is None:
            return cls(Coord(*row_or_coord))
        return cls(Coord(row_or_coord, col))

    @property
    def is_pass(self) -> bool:
        return self.point is None

    def __repr__(self) -> str:
        if self.point is None:
            return "Move(pass)"
        return f"Move({self.point.row},{self.point.col})"


PASS = Move()


class IllegalMoveError(Exception):
    """Raised by play() for an illegal move; .reason names the violated rule."""

    def __init__(self, reason: str, move: Move | None = None):
        self.reason = reason  # "occupied" | "suicide" | "superko"
        self.move = move
        super().__init__(f"illegal move ({reason}): {move!r}")


@dataclass(frozen=True)
class GroupInfo:
    """A maximal 4-connected chain of stones and its liberty set."""

    color: int
    stones: frozenset[Coord]
    liberties: frozenset[Coord]


def _zobrist_table(size: int) -> np.ndarray:
    """Per-point, per-color random 64-bit table. Collisions over a game's
    few hundred positions are negligible (~n^2 / 2^64)."""
    table = _zobrist_cache.get(size)
    if table is None:
        rng = np.random.default_rng(_ZOBRIST_SEED + size)
        table = rng.integers(0, 2**64, size=(2, size * size), dtype=np.uint64)
        _zobrist_cache[size] = table
    return table


def _neighbors(size: int) -> list[list[int]]:
    """Flat-index adjacency lists, cached per board size."""
    adj = _neighbor_cache.get(size)
    if adj is None:
        adj = []
        for r in range(size):
            for c in range(size):
                pts = []
                if r > 0:
                    pts.append((r - 1) * size + c)
                if r < size - 1:
                    pts.append((r + 1) * size + c)
                if c > 0:
                    pts.append(r * size + c - 1)
                if c < size - 1:
                    pts.append(r * size + c + 1)
                adj.append(pts)
        _neighbor_cache[size] = adj
    return adj


class _Analysis:
    """Group decomposition of one position: flat group-id map plus per-group
    stone and liberty sets (flat indices)."""

    __slots__ = ("group_of", "stones", "liberties", "colors")

    def __init__(self, grid: np.ndarray, size: int):
        flat = grid.ravel()
        adj = _neighbors(size)
        group_of = [-1] * (size * size)
        stones: list[list[int]] = []
        liberties: list[set[int]] = []
        colors: list[int] = []
        for start in range(size * size):
            color = flat[start]
            if color == EMPTY or group_of[start] >= 0:
                continue
            gid = len(stones)
            members = [start]
            libs: set[int] = set()
            group_of[start] = gid
            stack = [start]
            while stack:
                p = stack.pop()
                for q in adj[p]:
                    v = flat[q]
                    if v == EMPTY:
                        libs.add(q)
                    elif v == color and group_of[q] < 0:
                        group_of[q] = gid
                        members.append(q)
                        stack.append(q)
            stones.append(members)
            liberties.append(libs)
            colors.append(int(color))
        self.group_of = group_of
        self.stones = stones
        self.liberties = liberties
        self.colors = colors


class BoardState:
    """One full game position: point colors, side to move, move history,
    capture counts, and the set of position signatures seen so far
    (for positional superko).

    Treat instances as immutable; the grid array is marked read-only.
    """

    __slots__ = (
        "size",
        "grid",
        "to_move",
        "history",
        "position_hashes",
        "captures_black",
        "captures_white",
        "_analysis_cache",
    )

    def __init__(
        self,
        size: int,
        grid: np.ndarray,
        to_move: int,
        history: tuple,
        position_hashes: frozenset[int],
        captures_black: int,
        captures_white: int,
    ):
        grid = np.ascontiguousarray(grid, dtype=np.int8)
        grid.flags.writeable = False
        self.size = size
        self.grid = grid
        self.to_move = to_move
        self.history = history
        self.position_hashes = position_hashes
        self.captures_black = captures_black
        self.captures_white = captures_white
        self._analysis_cache: _Analysis | None = None

    # -- position inspection -------------------------------------------------

    def _analyze(self) -> _Analysis:
        if self._analysis_cache is None:
            self._analysis_cache = _Analysis(self.grid, self.size)
        return self._analysis_cache

    def color_at(self, coord: Coord) -> int:
        return int(self.grid[coord[0], coord[1]])

    def group_at(self, coord: Coord) -> GroupInfo:
        """Group occupying ``coord``: maximal same-color chain plus its
        liberty set. Raises ValueError on an empty point."""
        coord = Coord(*coord)
        if self.color_at(coord) == EMPTY:
            raise ValueError(f"no stone at {coord}")
        a = self._analyze()
        gid = a.group_of[coord.row * self.size + coord.col]
        n = self.size
        return GroupInfo(
            color=a.colors[gid],
            stones=frozenset(Coord(p // n, p % n) for p in a.stones[gid]),
            liberties=frozenset(Coord(p // n, p % n) for p in a.liberties[gid]),
        )

    def groups(self) -> list[GroupInfo]:
        a = self._analyze()
        n = self.size
        return [
            GroupInfo(
                color=a.colors[g],
                stones=frozenset(Coord(p // n, p % n) for p in a.stones[g]),
                liberties=frozenset(Coord(p // n, p % n) for p in a.liberties[g]),
            )
            for g in range(len(a.stones))
        ]

    def position_signature(self) -> int:
        """64-bit signature of the point colors only (not the side to move):
        XOR of one random table entry per occupied point."""
        return _signature_of_grid(self.grid, self.size)

    # -- legality -------------------------------------------------------------

    def _captures_if_played(self, flat_idx: int, a: _Analysis) -> list[int]:
        """Group ids of opponent groups whose last liberty is ``flat_idx``."""
        opp = opponent(self.to_move)
        out = []
        for q in _neighbors(self.size)[flat_idx]:
            gid = a.group_of[q]
            if gid >= 0 and a.colors[gid] == opp and gid not in out:
                libs = a.liberties[gid]
                if len(libs) == 1 and flat_idx in libs:
                    out.append(gid)
        return out

    def _check_play(self, coord: Coord) -> str | None:
        """Fast rule check for Play(coord); returns the violated rule name or
        None when legal. Uses the cached group analysis; no grid copies."""
        n = self.size
        if not (0 <= coord.row < n and 0 <= coord.col < n):
            return "occupied"
        if self.grid[coord.row, coord.col] != EMPTY:
            return "occupied"
        idx = coord.row * n + coord.col
        a = self._analyze()
        adj = _neighbors(n)[idx]
        captured = self._captures_if_played(idx, a)
        if not captured:
            # Suicide: no empty neighbor and every friendly neighbor group
            # has this point as its only liberty, with no capture to help.
            alive = False
            flat = self.grid.ravel()
            for q in adj:
                if flat[q] == EMPTY:
                    alive = True
                    break
                gid = a.group_of[q]
                if a.colors[gid] == self.to_move and len(a.liberties[gid]) > 1:
                    alive = True
                    break
            if not alive:
                return "suicide"
        table = _zobrist_table(n)
        sig = self.position_signature() ^ int(table[self.to_move - 1][idx])
        opp_t = table[opponent(self.to_move) - 1]
        for gid in captured:
            for s in a.stones[gid]:
                sig ^= int(opp_t[s])
        if sig in self.position_hashes:
            return "superko"
        return None

    def is_legal(self, move: Move) -> bool:
        """Pass is always legal; a play must be on an empty in-bounds point,
        must not be suicide after captures, and must not recreate any earlier
        whole-board position. Never raises."""
        if move.is_pass:
            return True
        return self._check_play(Coord(*move.point)) is None

    def legal_moves(self) -> list[Move]:
        """All legal moves, plays in row-major order, Pass last."""
        out = []
        n = self.size
        for r in range(n):
            for c in range(n):
                if self._check_play(Coord(r, c)) is None:
                    out.append(Move(Coord(r, c)))
        out.append(PASS)
        return out

    # -- state transitions ----------------------------------------------------

    def play(self, move: Move) -> "BoardState":
        """Apply a move for the side to move and return the successor state.

        Adjacent opponent groups left with zero liberties are removed before
        the mover's own liberties are judged. Raises IllegalMoveError with
        the violated rule (occupied | suicide | superko).
        """
        color = self.to_move
        if move.is_pass:
            return BoardState(
                self.size,
                self.grid,
                opponent(color),
                self.history + ((move, color),),
                self.position_hashes | {self.position_signature()},
                self.captures_black,
                self.captures_white,
            )
        coord = Coord(*move.point)
        n = self.size
        if not (0 <= coord.row < n and 0 <= coord.col < n):
            raise IllegalMoveError("occupied", move)
        if self.grid[coord.row, coord.col] != EMPTY:
            raise IllegalMoveError("occupied", move)

        # Simulate on a fresh grid; deliberately independent of the fast
        # analysis path used by is_legal so the two can cross-check.
        grid = self.grid.copy()
        grid.flags.writeable = True
        grid[coord.row, coord.col] = color
        opp = opponent(color)
        captured = 0
        for nb in _coord_neighbors(coord, n):
            if grid[nb.row, nb.col] == opp:
                stones, libs = _flood(grid, nb, n)
                if not libs:
                    captured += len(stones)
                    for s in stones:
                        grid[s.row, s.col] = EMPTY
        _, own_libs = _flood(grid, coord, n)
        if not own_libs:
            raise IllegalMoveError("suicide", move)
        sig = _signature_of_grid(grid, n)
        if sig in self.position_hashes:
            raise IllegalMoveError("superko", move)

        cb = self.captures_black + (captured if color == BLACK else 0)
        cw = self.captures_white + (captured if color == WHITE else 0)
        return BoardState(
            n,
            grid,
            opp,
            self.history + ((move, color),),
            self.position_hashes | {sig},
            cb,
            cw,
        )

    def liberties_after_move(self, coord: Coord) -> int:
        """Liberty count of the played stone's group in the successor
        position, captures applied. Pure. Raises on an illegal play."""
        return len(self.play(Move.play(coord)).group_at(coord).liberties)

    def _liberties_after_fast(self, coord: Coord) -> int:
        """Same quantity as liberties_after_move but computed from the cached
        analysis without building the successor state. Pre: play is legal."""
        n = self.size
        idx = coord.row * n + coord.col
        a = self._analyze()
        adj = _neighbors(n)
        flat = self.grid.ravel()
        captured = self._captures_if_played(idx, a)
        captured_stones: set[int] = set()
        for gid in captured:
            captured_stones.update(a.stones[gid])
        merged = {idx}
        for q in adj[idx]:
            gid = a.group_of[q]
            if gid >= 0 and a.colors[gid] == self.to_move:
                merged.update(a.stones[gid])
        libs: set[int] = set()
        for s in merged:
            for q in adj[s]:
                if q in merged:
                    continue
                if q in captured_stones or flat[q] == EMPTY:
                    libs.add(q)
        libs.discard(idx)
        return len(libs)

    def with_to_move(self, color: int) -> "BoardState":
        """Same position with the given side to move (GTP allows out-of-turn
        plays, e.g. for free handicap placement)."""
        if color == self.to_move:
            return self
        return BoardState(
            self.size,
            self.grid,
            color,
            self.history,
            self.position_hashes,
            self.captures_black,
            self.captures_white,
        )

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BoardState)
            and self.size == other.size
            and self.to_move == other.to_move
            and np.array_equal(self.grid, other.grid)
            and self.history == other.history
            and self.position_hashes == other.position_hashes
            and self.captures_black == other.captures_black
            and self.captures_white == other.captures_white
        )

    def __repr__(self) -> str:
        mover = "B" if self.to_move == BLACK else "W"
        return f"<BoardState {self.size}x{self.size} {mover} to move, {len(self.history)} moves>"


def _coord_neighbors(coord: Coord, size: int) -> list[Coord]:
    out = []
    if coord.row > 0:
        out.append(Coord(coord.row - 1, coord.col))
    if coord.row < size - 1:
        out.append(Coord(coord.row + 1, coord.col))
    if coord.col > 0:
        out.append(Coord(coord.row, coord.col - 1))
    if coord.col < size - 1:
        out.append(Coord(coord.row, coord.col + 1))
    return out


def _flood(grid: np.ndarray, start: Coord, size: int) -> tuple[set[Coord], set[Coord]]:
    """Stones and liberties of the group at ``start`` on a raw grid."""
    color = grid[start.row, start.col]
    stones = {start}
    libs: set[Coord] = set()
    stack = [start]
    while stack:
        p = stack.pop()
        for q in _coord_neighbors(p, size):
            v = grid[q.row, q.col]
            if v == EMPTY:
                libs.add(q)
            elif v == color and q not in stones:
                stones.add(q)
                stack.append(q)
    return stones, libs


def _signature_of_grid(grid: np.ndarray, size: int) -> int:
    table = _zobrist_table(size)
    flat = grid.ravel()
    h = np.uint64(0)
    black = table[0][flat == BLACK]
    white = table[1][flat == WHITE]
    if black.size:
        h ^= np.bitwise_xor.reduce(black)
    if white.size:
        h ^= np.bitwise_xor.reduce(white)
    return int(h)


def new_board(size: int = DEFAULT_SIZE) -> BoardState:
    """Fresh empty board, Black to move."""
    if not (MIN_SIZE <= size <= MAX_SIZE):
        raise ValueError(f"board size must be {MIN_SIZE}..{MAX_SIZE}, got {size}")
    grid = np.zeros((size, size), dtype=np.int8)
    sig = _signature_of_grid(grid, size)
    return BoardState(size, grid, BLACK, (), frozenset({sig}), 0, 0)


def setup_position(
    size: int,
    black: Iterable[Coord] = (),
    white: Iterable[Coord] = (),
    to_move: int = BLACK,
) -> BoardState:
    """Pre-game position from setup stones (handicap games, test fixtures).

    The stones form the initial position: empty history, and the superko
    set is seeded with this position's signature. Every placed group must
    have at least one liberty.
    """
    if not (MIN_SIZE <= size <= MAX_SIZE):
        raise ValueError(f"board size must be {MIN_SIZE}..{MAX_SIZE}, got {size}")
    grid = np.zeros((size, size), dtype=np.int8)
    for color, coords in ((BLACK, black), (WHITE, white)):
        for coord in coords:
            coord = Coord(*coord)
            if not (0 <= coord.row < size and 0 <= coord.col < size):
                raise ValueError(f"setup stone off board: {coord}")
            if grid[coord.row, coord.col] != EMPTY:
                raise ValueError(f"setup stone on occupied point: {coord}")
            grid[coord.row, coord.col] = color
    state = BoardState(
        size,
        grid,
        to_move,
        (),
        frozenset({_signature_of_grid(grid, size)}),
        0,
        0,
    )
    for group in state.groups():
        if not group.liberties:
            raise ValueError("setup position contains a group with no liberties")
    return state


def replay_moves(state: BoardState, moves: Iterable[Move]) -> BoardState:
    for move in moves:
        state = state.play(move)
    return state
