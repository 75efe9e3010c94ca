"""Game generation: engine self-play and a cheap synthetic-game source.

The engine never resigns and only passes when it has no legal play, so
self-play games need a move cap.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import model as modellib
from . import sgf as sgflib
from .board import Move, PASS, new_board


def selfplay_game(
    net,
    max_moves: int = 400,
    symmetries=modellib.ALL_SYMMETRIES,
) -> list[tuple[int, Move]]:
    """The network plays both sides until the move cap or a forced pass on
    both sides."""
    state = new_board(19)
    moves: list[tuple[int, Move]] = []
    passes = 0
    while len(moves) < max_moves and passes < 2:
        output = modellib.ensemble_predict(net, state, symmetries)
        move = modellib.select_move(output)
        passes = passes + 1 if move.is_pass else 0
        moves.append((state.to_move, move))
        state = state.play(move)
    return moves


def random_game(
    rng: np.random.Generator,
    size: int = 19,
    max_moves: int = 180,
    locality: float = 0.7,
    radius: int = 2,
) -> list[tuple[int, Move]]:
    """Random legal game with a locality bias: most moves land near the
    previous one, the way real games cluster into fights. Gives synthetic
    corpora a learnable signal."""
    state = new_board(size)
    moves: list[tuple[int, Move]] = []
    last = None
    for _ in range(max_moves):
        plays = [m for m in state.legal_moves() if not m.is_pass]
        if not plays:
            break
        pick = None
        if last is not None and rng.random() < locality:
            near = [
                m
                for m in plays
                if abs(m.point.row - last.row) <= radius
                and abs(m.point.col - last.col) <= radius
            ]
            if near:
                pick = near[rng.integers(len(near))]
        if pick is None:
            pick = plays[rng.integers(len(plays))]
        moves.append((state.to_move, pick))
        state = state.play(pick)
        last = pick.point
    return moves


def generate_corpus(
    out_dir,
    n_games: int,
    seed: int = 0,
    size: int = 19,
    max_moves: int = 180,
) -> list[Path]:
    """Write a deterministic corpus of synthetic SGF games."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n_games):
        rng = np.random.default_rng((seed, i))
        moves = random_game(rng, size=size, max_moves=max_moves)
        text = sgflib.write_sgf(
            moves,
            board_size=size,
            metadata={"PB": f"rand-{seed}-{i}-b", "PW": f"rand-{seed}-{i}-w"},
        )
        path = out_dir / f"game-{i:05d}.sgf"
        path.write_text(text + "\n")
        paths.append(path)
    return paths
