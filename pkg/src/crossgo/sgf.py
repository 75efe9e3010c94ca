"""SGF (FF[3]/FF[4]) parsing, rules-checked replay, and writing.

Only the main line of each game tree is used. Setup stones (AB/AW) are
accepted in the root node as a pre-game position (handicap); setup anywhere
later is rejected. Unknown properties ride along as opaque metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .board import (
    BLACK,
    PASS,
    WHITE,
    BoardState,
    Coord,
    IllegalMoveError,
    Move,
    new_board,
    setup_position,
)

MAX_SGF_SIZE = 25


class SgfError(Exception):
    """Malformed or unsupported SGF input."""


@dataclass
class GameRecord:
    """One game: size, setup stones, moves in order, and raw metadata."""

    board_size: int
    moves: list[tuple[int, Move]]  # (color, move)
    setup_black: tuple[Coord, ...] = ()
    setup_white: tuple[Coord, ...] = ()
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def has_setup(self) -> bool:
        return bool(self.setup_black or self.setup_white)


@dataclass
class ReplayResult:
    """States paired with the moves played from them, plus truncation info."""

    pairs: list[tuple[BoardState, Move]]
    truncated: bool = False
    truncated_at: int | None = None  # index of the first unplayable move
    reason: str | None = None


# -- low-level parsing --------------------------------------------------------


class _Tree:
    __slots__ = ("nodes", "children")

    def __init__(self):
        self.nodes: list[dict[str, list[str]]] = []
        self.children: list[_Tree] = []


def _parse_tree(text: str, pos: int) -> tuple[_Tree, int]:
    if pos >= len(text) or text[pos] != "(":
        raise SgfError(f"expected '(' at offset {pos}")
    pos += 1
    tree = _Tree()
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            raise SgfError("unterminated game tree")
        ch = text[pos]
        if ch == ";":
            node, pos = _parse_node(text, pos + 1)
            tree.nodes.append(node)
        elif ch == "(":
            child, pos = _parse_tree(text, pos)
            tree.children.append(child)
        elif ch == ")":
            if not tree.nodes:
                raise SgfError("empty game tree")
            return tree, pos + 1
        else:
            raise SgfError(f"unexpected character {ch!r} at offset {pos}")


def _parse_node(text: str, pos: int) -> tuple[dict[str, list[str]], int]:
    node: dict[str, list[str]] = {}
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text) or not text[pos].isalpha():
            return node, pos
        start = pos
        while pos < len(text) and text[pos].isalpha():
            pos += 1
        # FF[3] long identifiers carry lowercase letters that are ignored
        ident = "".join(c for c in text[start:pos] if c.isupper())
        if not ident:
            raise SgfError(f"bad property identifier at offset {start}")
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text) or text[pos] != "[":
            raise SgfError(f"property {ident} has no value at offset {pos}")
        values = []
        while pos < len(text) and text[pos] == "[":
            value, pos = _parse_value(text, pos + 1)
            values.append(value)
            while pos < len(text) and text[pos].isspace():
                pos += 1
        node.setdefault(ident, []).extend(values)


def _parse_value(text: str, pos: int) -> tuple[str, int]:
    out = []
    while pos < len(text):
        ch = text[pos]
        if ch == "\\":
            if pos + 1 >= len(text):
                raise SgfError("dangling escape in property value")
            out.append(text[pos + 1])
            pos += 2
            continue
        if ch == "]":
            return "".join(out), pos + 1
        out.append(ch)
        pos += 1
    raise SgfError("unterminated property value")


def _main_line(tree: _Tree) -> list[dict[str, list[str]]]:
    nodes = list(tree.nodes)
    while tree.children:
        tree = tree.children[0]
        nodes.extend(tree.nodes)
    return nodes


# -- coordinates ----------------------------------------------------------------


def sgf_point(value: str, size: int) -> Coord | None:
    """SGF letter pair to Coord; None means pass. First letter is the column,
    second the row, 'a' at the top-left."""
    if value == "":
        return None
    if value == "tt" and size <= 19:
        return None
    if len(value) != 2:
        raise SgfError(f"bad point value {value!r}")
    col = ord(value[0]) - ord("a")
    row = ord(value[1]) - ord("a")
    if not (0 <= row < size and 0 <= col < size):
        raise SgfError(f"point {value!r} off a {size}x{size} board")
    return Coord(row, col)


def point_to_sgf(coord: Coord | None) -> str:
    if coord is None:
        return ""
    return chr(ord("a") + coord.col) + chr(ord("a") + coord.row)


# -- records ----------------------------------------------------------------------


_STRUCTURAL = {"B", "W", "AB", "AW", "AE"}


def parse_sgf(text: str) -> GameRecord:
    """Parse one game record (main line) from SGF text."""
    pos = 0
    while pos < len(text) and text[pos].isspace():
        pos += 1
    tree, _ = _parse_tree(text, pos)
    nodes = _main_line(tree)
    root = nodes[0]

    if "GM" in root and root["GM"][0].strip() not in ("", "1"):
        raise SgfError(f"not a Go record (GM={root['GM'][0]})")

    size = 19
    if "SZ" in root:
        raw = root["SZ"][0]
        if ":" in raw:
            w, _, h = raw.partition(":")
            if w.strip() != h.strip():
                raise SgfError(f"non-square board {raw!r}")
            raw = w
        try:
            size = int(raw)
        except ValueError as err:
            raise SgfError(f"bad SZ value {raw!r}") from err
        if not 2 <= size <= MAX_SGF_SIZE:
            raise SgfError(f"unsupported board size {size}")

    if "AE" in root:
        raise SgfError("AE (empty-point setup) not supported")
    setup_black = tuple(sgf_point(v, size) for v in root.get("AB", []))
    setup_white = tuple(sgf_point(v, size) for v in root.get("AW", []))
    if None in setup_black or None in setup_white:
        raise SgfError("pass value in setup stones")

    metadata = {
        key: values[0] for key, values in root.items() if key not in _STRUCTURAL
    }

    moves: list[tuple[int, Move]] = []
    for i, node in enumerate(nodes):
        if i > 0 and not _STRUCTURAL.isdisjoint(node.keys() - {"B", "W"}):
            raise SgfError("setup stones after move 1 are not supported")
        has_b = "B" in node
        has_w = "W" in node
        if has_b and has_w:
            raise SgfError("node plays both colors")
        if not (has_b or has_w):
            continue
        color = BLACK if has_b else WHITE
        value = node["B" if has_b else "W"][0]
        point = sgf_point(value, size)
        moves.append((color, Move(point) if point is not None else PASS))

    record = GameRecord(
        board_size=size,
        moves=moves,
        setup_black=setup_black,
        setup_white=setup_white,
        metadata=metadata,
    )
    if not record.has_setup:
        for (a, _), (b, _) in zip(moves, moves[1:]):
            if a == b:
                raise SgfError("colors do not alternate")
    return record


def initial_state(record: GameRecord) -> BoardState:
    """Pre-game position: setup stones applied, the side of the first
    recorded move to play (White for handicap games with no moves)."""
    if record.moves:
        to_move = record.moves[0][0]
    elif record.setup_black:
        to_move = WHITE
    else:
        to_move = BLACK
    if record.has_setup:
        return setup_position(
            record.board_size,
            black=record.setup_black,
            white=record.setup_white,
            to_move=to_move,
        )
    state = new_board(record.board_size)
    return state.with_to_move(to_move)


def replay(record: GameRecord) -> ReplayResult:
    """Replay through the rules kernel, pairing each pre-move state with the
    move played. Stops at the first unplayable move and reports it."""
    state = initial_state(record)
    pairs: list[tuple[BoardState, Move]] = []
    for i, (color, move) in enumerate(record.moves):
        if color != state.to_move:
            return ReplayResult(pairs, True, i, "out-of-turn move")
        try:
            nxt = state.play(move)
        except IllegalMoveError as err:
            return ReplayResult(pairs, True, i, err.reason)
        pairs.append((state, move))
        state = nxt
    return ReplayResult(pairs)


def write_sgf(
    moves: list[tuple[int, Move]],
    board_size: int = 19,
    metadata: dict[str, str] | None = None,
) -> str:
    """Serialize a plain game (no setup stones) as FF[4] SGF."""
    def esc(value: str) -> str:
        return value.replace("\\", "\\\\").replace("]", "\\]")

    head = f"(;GM[1]FF[4]SZ[{board_size}]"
    for key, value in (metadata or {}).items():
        head += f"{key}[{esc(value)}]"
    body = []
    for color, move in moves:
        letter = "B" if color == BLACK else "W"
        body.append(f";{letter}[{point_to_sgf(move.point)}]")
    return head + "".join(body) + ")"
