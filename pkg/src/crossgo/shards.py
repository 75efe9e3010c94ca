"""Bit-packed training shards and the SGF-to-shard compiler.

Shard layout (all little-endian):

    header   magic "CGSH" | u8 version | u8 board size | u8 plane count |
             u64 record count
    record   per plane: 361 bits row-major, zero-padded to 46 bytes;
             then the move label as a u16 (row-major point index)

Fixed-size records give O(1) random access for training-time shuffles.
Games, not pairs, are split between train and test by a seeded shuffle, so
no game leaks positions into both sides.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features
from . import sgf as sgflib

SHARD_MAGIC = b"CGSH"
SHARD_VERSION = 1
SHARD_SUFFIX = ".cgsh"
HEADER_BYTES = 15
DEFAULT_RECORDS_PER_SHARD = 4096

_PLANE_BYTES = 46  # ceil(361 / 8)


def pack_record(planes: np.ndarray, label: int) -> bytes:
    """One (features, label) pair as fixed-size bytes."""
    planes = np.asarray(planes, dtype=np.uint8)
    if planes.shape != (features.NUM_PLANES, 19, 19):
        raise ValueError(f"bad plane shape {planes.shape}")
    if not 0 <= label < 361:
        raise ValueError(f"label {label} out of range")
    bits = np.packbits(planes.reshape(features.NUM_PLANES, -1), axis=1)
    return bits.tobytes() + struct.pack("<H", label)


def record_size(plane_count: int = features.NUM_PLANES) -> int:
    return plane_count * _PLANE_BYTES + 2


def unpack_record(buf: bytes, plane_count: int = features.NUM_PLANES):
    if len(buf) != record_size(plane_count):
        raise ValueError(f"bad record size {len(buf)}")
    bits = np.frombuffer(buf[:-2], dtype=np.uint8).reshape(plane_count, _PLANE_BYTES)
    planes = np.unpackbits(bits, axis=1)[:, :361].reshape(plane_count, 19, 19)
    (label,) = struct.unpack("<H", buf[-2:])
    return planes, int(label)


class ShardWriter:
    """Accumulates records and writes one shard file on close."""

    def __init__(self, path, board_size: int = 19, plane_count: int = features.NUM_PLANES):
        self.path = Path(path)
        self.board_size = board_size
        self.plane_count = plane_count
        self._records: list[bytes] = []

    def __len__(self) -> int:
        return len(self._records)

    def add(self, planes: np.ndarray, label: int) -> None:
        self._records.append(pack_record(planes, label))

    def close(self) -> None:
        header = SHARD_MAGIC + struct.pack(
            "<BBBQ", SHARD_VERSION, self.board_size, self.plane_count, len(self._records)
        )
        with open(self.path, "wb") as f:
            f.write(header)
            for rec in self._records:
                f.write(rec)


class Shard:
    """Read-only random access to one shard file."""

    def __init__(self, path):
        self.path = Path(path)
        blob = self.path.read_bytes()
        if blob[:4] != SHARD_MAGIC:
            raise ValueError(f"{path}: not a shard file")
        version, self.board_size, self.plane_count, self.count = struct.unpack_from(
            "<BBBQ", blob, 4
        )
        if version != SHARD_VERSION:
            raise ValueError(f"{path}: unsupported shard version {version}")
        self._rec_size = record_size(self.plane_count)
        expected = HEADER_BYTES + self.count * self._rec_size
        if len(blob) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
        self._blob = blob

    def __len__(self) -> int:
        return self.count

    def record(self, i: int):
        if not 0 <= i < self.count:
            raise IndexError(i)
        start = HEADER_BYTES + i * self._rec_size
        return unpack_record(
            self._blob[start : start + self._rec_size], self.plane_count
        )


class ShardDataset:
    """All shards under a directory matching a split prefix, globally indexed."""

    def __init__(self, directory, split: str = "train"):
        self.paths = sorted(Path(directory).glob(f"{split}-*{SHARD_SUFFIX}"))
        self.shards = [Shard(p) for p in self.paths]
        self._offsets = np.cumsum([0] + [len(s) for s in self.shards])

    def __len__(self) -> int:
        return int(self._offsets[-1])

    def record(self, i: int):
        if not 0 <= i < len(self):
            raise IndexError(i)
        shard_idx = int(np.searchsorted(self._offsets, i, side="right")) - 1
        return self.shards[shard_idx].record(i - int(self._offsets[shard_idx]))

    def batch(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """Stacked float32 features and int labels for the given indices."""
        feats = np.empty((len(indices), features.NUM_PLANES, 19, 19), dtype=np.float32)
        labels = np.empty(len(indices), dtype=np.int64)
        for row, i in enumerate(indices):
            planes, label = self.record(int(i))
            feats[row] = planes
            labels[row] = label
        return feats, labels


@dataclass
class CompileReport:
    games_read: int = 0
    games_skipped: int = 0
    games_train: int = 0
    games_test: int = 0
    pairs_train: int = 0
    pairs_test: int = 0
    truncated_games: int = 0
    pass_moves_skipped: int = 0
    skipped: list[dict] = field(default_factory=list)
    shards: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def compile_dataset(
    input_dir,
    output_dir,
    split_fraction: float = 0.9,
    seed: int = 0,
    records_per_shard: int = DEFAULT_RECORDS_PER_SHARD,
) -> CompileReport:
    """Compile every parseable 19x19 SGF under input_dir into train/test
    shards. Deterministic: the same corpus and seed give byte-identical
    shards."""
    if not 0 <= split_fraction <= 1:
        raise ValueError("split_fraction must be in [0, 1]")
    input_dir = Path(input_dir)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    report = CompileReport()
    games: list[tuple[str, sgflib.GameRecord]] = []
    for path in sorted(input_dir.glob("*.sgf")):
        try:
            record = sgflib.parse_sgf(path.read_text(errors="replace"))
        except sgflib.SgfError as err:
            report.games_skipped += 1
            report.skipped.append({"file": path.name, "reason": str(err)})
            continue
        if record.board_size != 19:
            report.games_skipped += 1
            report.skipped.append(
                {"file": path.name, "reason": f"board size {record.board_size}"}
            )
            continue
        games.append((path.name, record))
    if not games:
        raise ValueError(f"no usable SGF files in {input_dir}")
    report.games_read = len(games)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(games))
    n_train = int(len(games) * split_fraction + 1e-9)
    splits = (
        ("train", [games[i] for i in order[:n_train]]),
        ("test", [games[i] for i in order[n_train:]]),
    )

    for split_name, split_games in splits:
        writer = None
        shard_idx = 0
        pairs = 0
        for _, record in split_games:
            result = sgflib.replay(record)
            if result.truncated:
                report.truncated_games += 1
            for state, move in result.pairs:
                if move.is_pass:
                    report.pass_moves_skipped += 1
                    continue
                if writer is None:
                    name = f"{split_name}-{shard_idx:05d}{SHARD_SUFFIX}"
                    writer = ShardWriter(output_dir / name)
                writer.add(
                    features.encode(state), move.point.row * 19 + move.point.col
                )
                pairs += 1
                if len(writer) >= records_per_shard:
                    writer.close()
                    report.shards.append(writer.path.name)
                    writer = None
                    shard_idx += 1
        if writer is not None:
            writer.close()
            report.shards.append(writer.path.name)
        if split_name == "train":
            report.games_train = len(split_games)
            report.pairs_train = pairs
        else:
            report.games_test = len(split_games)
            report.pairs_test = pairs

    (output_dir / "compile_report.json").write_text(report.to_json() + "\n")
    return report
