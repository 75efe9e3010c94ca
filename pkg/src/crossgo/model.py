"""Policy network: a 23-layer conv stack with two cross-convolution blocks.

Reference architecture (widths at multiplier 1):

    L1        7x7/128, pad 3
    L2-L4     block A on L1's output: {3x3/128 dense; 7x7 cross c=1 /32;
              1x1->16 then 39x39 cross c=1 pad 19 /16;
              1x1->16 then 39x39 cross c=5 pad 19 /16; passthrough},
              concatenated, then 1x1 fused to 256
    L5-L11    seven 3x3/256, pad 1
    L12-L15   block B: {7x7/64 pad 3; 1x1->16 then 39x39 c=1 /16;
              1x1->16 then 39x39 c=5 /16; passthrough}, fused to 256
    L16-L22   seven 3x3/256, pad 1
    L23       1x1/1 score head, no activation

Every convolution except the head is followed by ReLU. The network maps
(24, 19, 19) features to a (1, 19, 19) score map; spatial dims are
preserved by construction, so smaller boards pass through unchanged
(useful for cheap gradient checks).

Inference against a frozen net is pure and thread-safe: training state
(activation tape, gradient buffers) exists only when a tape is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import features as ft
from . import nn
from .board import BoardState, Coord, Move, PASS

ALL_SYMMETRIES = tuple(range(ft.NUM_SYMMETRIES))

CONFIG_FORMAT = "crossgo-network-config"
CONFIG_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture knobs; the layer wiring itself is fixed."""

    width_multiplier: float = 1.0
    board_size: int = 19
    input_planes: int = 24

    def channels(self, base: int) -> int:
        return max(1, round(base * self.width_multiplier))


def save_network_config(path, config: NetworkConfig) -> None:
    lines = [
        f"{CONFIG_FORMAT} v{CONFIG_VERSION}",
        f"width_multiplier = {config.width_multiplier!r}",
        f"board_size = {config.board_size}",
        f"input_planes = {config.input_planes}",
    ]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_network_config(path) -> NetworkConfig:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or not lines[0].startswith(CONFIG_FORMAT):
        raise ValueError("not a network config file")
    if lines[0] != f"{CONFIG_FORMAT} v{CONFIG_VERSION}":
        raise ValueError(f"unsupported config version: {lines[0]}")
    values = {}
    for line in lines[1:]:
        key, _, raw = line.partition("=")
        values[key.strip()] = raw.strip()
    return NetworkConfig(
        width_multiplier=float(values["width_multiplier"]),
        board_size=int(values["board_size"]),
        input_planes=int(values["input_planes"]),
    )


class ConvUnit:
    """One convolution with optional trailing ReLU plus gradient buffers."""

    def __init__(self, layer: nn.ConvLayer, relu: bool = True):
        self.layer = layer
        self.relu = relu
        self.grad_weights = np.zeros_like(layer.weights)
        self.grad_bias = np.zeros_like(layer.bias)

    def forward(self, x: np.ndarray, tape: list | None = None) -> np.ndarray:
        if tape is None:
            return (
                nn.relu(nn.conv2d_forward(x, self.layer))
                if self.relu
                else nn.conv2d_forward(x, self.layer)
            )
        cache: dict = {}
        pre = nn.conv2d_forward(x, self.layer, _cache=cache)
        out = nn.relu(pre) if self.relu else pre
        tape.append((x, pre if self.relu else None, cache))
        return out

    def backward(
        self, grad: np.ndarray, tape: list, need_input_grad: bool = True
    ) -> np.ndarray:
        x, pre, cache = tape.pop()
        if self.relu:
            grad = nn.relu_backward(grad, pre)
        gx, gw, gb = nn.conv2d_backward(
            grad, x, self.layer, _cache=cache, need_input_grad=need_input_grad
        )
        self.grad_weights += gw
        self.grad_bias += gb
        return gx


class CrossBlock:
    """Parallel branches over one input, concatenated with the input itself
    and fused back down by a 1x1 convolution."""

    def __init__(self, branches: list[list[ConvUnit]], fuse: ConvUnit, passthrough: bool = True):
        self.branches = branches
        self.fuse = fuse
        self.passthrough = passthrough

    def forward(self, x: np.ndarray, tape: list | None = None) -> np.ndarray:
        outs = []
        for branch in self.branches:
            h = x
            for unit in branch:
                h = unit.forward(h, tape)
            outs.append(h)
        if self.passthrough:
            outs.append(x)
        return self.fuse.forward(nn.concat_channels(outs), tape)

    def backward(self, grad: np.ndarray, tape: list) -> np.ndarray:
        grad = self.fuse.backward(grad, tape)
        counts = [branch[-1].layer.out_channels for branch in self.branches]
        if self.passthrough:
            counts.append(self.fuse.layer.in_channels - sum(counts))
        pieces = nn.concat_channels_backward(grad, counts)
        gx = pieces[-1].copy() if self.passthrough else None
        for branch, piece in zip(reversed(self.branches), reversed(pieces[: len(self.branches)])):
            g = piece
            for unit in reversed(branch):
                g = unit.backward(g, tape)
            gx = g if gx is None else gx + g
        return gx

    def units(self) -> list[ConvUnit]:
        out = [u for branch in self.branches for u in branch]
        out.append(self.fuse)
        return out


class PolicyNet:
    """Named stages in execution order; see the module docstring for wiring."""

    def __init__(self, stages: list[tuple[str, object]], config: NetworkConfig):
        self.stages = stages
        self.config = config

    def forward(self, x: np.ndarray, tape: list | None = None) -> np.ndarray:
        for _, stage in self.stages:
            x = stage.forward(x, tape)
        return x

    def backward(self, grad: np.ndarray, tape: list) -> np.ndarray:
        for i, (_, stage) in reversed(list(enumerate(self.stages))):
            if i == 0 and isinstance(stage, ConvUnit):
                # the input gradient of the first layer is never consumed
                grad = stage.backward(grad, tape, need_input_grad=False)
            else:
                grad = stage.backward(grad, tape)
        return grad

    def conv_units(self) -> list[ConvUnit]:
        out = []
        for _, stage in self.stages:
            if isinstance(stage, CrossBlock):
                out.extend(stage.units())
            else:
                out.append(stage)
        return out

    def conv_layers(self) -> list[nn.ConvLayer]:
        return [u.layer for u in self.conv_units()]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for u in self.conv_units():
            out.append(u.layer.weights)
            out.append(u.layer.bias)
        return out

    def gradients(self) -> list[np.ndarray]:
        out = []
        for u in self.conv_units():
            out.append(u.grad_weights)
            out.append(u.grad_bias)
        return out

    def zero_grads(self) -> None:
        for u in self.conv_units():
            u.grad_weights[:] = 0
            u.grad_bias[:] = 0

    def named_layer_span(self) -> int:
        """Number of architecture layer names covered by the stages."""
        total = 0
        for name, _ in self.stages:
            first, _, last = name.partition("-")
            if last:
                total += int(last[1:]) - int(first[1:]) + 1
            else:
                total += 1
        return total

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def save(self, path) -> None:
        nn.save_checkpoint(path, self.conv_layers())


def build_network(
    config: NetworkConfig, seed: int = 0, dtype=np.float32
) -> PolicyNet:
    """Assemble the reference architecture at the configured width."""
    rng = np.random.default_rng(seed)
    ch = config.channels
    first = ch(128)
    trunk = ch(256)

    def conv(cin, cout, n, pad=0, cross_width=None, relu=True):
        mask = nn.cross_mask(n, cross_width) if cross_width is not None else None
        return ConvUnit(
            nn.init_conv(rng, cin, cout, n, pad=pad, mask=mask, dtype=dtype),
            relu=relu,
        )

    stages: list[tuple[str, object]] = []
    stages.append(("L1", conv(config.input_planes, first, 7, pad=3)))

    def cross_block(name, cin):
        branches = []
        if cin == first:  # block A carries a wide dense branch and a 7x7 cross
            branches.append([conv(cin, ch(128), 3, pad=1)])
            branches.append([conv(cin, ch(32), 7, pad=3, cross_width=1)])
        else:  # block B trades them for a single 7x7 dense branch
            branches.append([conv(cin, ch(64), 7, pad=3)])
        for width in (1, 5):
            branches.append(
                [
                    conv(cin, ch(16), 1),
                    conv(ch(16), ch(16), 39, pad=19, cross_width=width),
                ]
            )
        concat_ch = sum(b[-1].layer.out_channels for b in branches) + cin
        fuse = conv(concat_ch, trunk, 1)
        return name, CrossBlock(branches, fuse)

    stages.append(cross_block("L2-L4", first))
    for i in range(5, 12):
        stages.append((f"L{i}", conv(trunk, trunk, 3, pad=1)))
    stages.append(cross_block("L12-L15", trunk))
    for i in range(16, 23):
        stages.append((f"L{i}", conv(trunk, trunk, 3, pad=1)))
    stages.append(("L23", conv(trunk, 1, 1, relu=False)))

    return PolicyNet(stages, config)


def load_network(path, config: NetworkConfig) -> PolicyNet:
    """Rebuild the architecture for ``config`` and fill it from a checkpoint."""
    net = build_network(config, seed=0)
    saved = nn.load_checkpoint(path)
    units = net.conv_units()
    if len(saved) != len(units):
        raise ValueError(
            f"checkpoint has {len(saved)} conv layers, config needs {len(units)}"
        )
    for unit, layer in zip(units, saved):
        if unit.layer.weights.shape != layer.weights.shape:
            raise ValueError(
                f"layer shape mismatch: {unit.layer.weights.shape} vs "
                f"{layer.weights.shape}"
            )
        unit.layer = layer
        unit.grad_weights = np.zeros_like(layer.weights)
        unit.grad_bias = np.zeros_like(layer.bias)
    return net


# -- scoring and move selection -------------------------------------------------


def forward(net: PolicyNet, planes: np.ndarray) -> np.ndarray:
    """Single-pass score map (H, W) for one feature tensor."""
    out = net.forward(planes.astype(np.float32, copy=False))
    return out[0]


def ensemble_scores(
    net: PolicyNet, planes: np.ndarray, symmetries: tuple[int, ...] = ALL_SYMMETRIES
) -> np.ndarray:
    """Average of per-symmetry forward passes, each mapped back to the
    original orientation; reduction order is fixed by ``symmetries``."""
    batch = ensemble_scores_batch(net, planes[None], symmetries)
    return batch[0]


def ensemble_scores_batch(
    net: PolicyNet,
    planes_batch: np.ndarray,
    symmetries: tuple[int, ...] = ALL_SYMMETRIES,
) -> np.ndarray:
    if not symmetries:
        raise ValueError("need at least one symmetry")
    acc = None
    for sym in symmetries:
        t = ft.transform_planes(planes_batch, sym).astype(np.float32)
        out = net.forward(t)[:, 0]
        back = ft.inverse_transform_scores(out, sym)
        acc = back.astype(np.float64) if acc is None else acc + back
    return acc / len(symmetries)


@dataclass
class PolicyOutput:
    """Scores for every point plus a proper distribution over legal moves."""

    scores: np.ndarray  # (19, 19) float
    probabilities: np.ndarray  # (361,) float, zero on illegal points
    legal_mask: np.ndarray  # (19, 19) bool

    def probability_at(self, coord: Coord) -> float:
        return float(self.probabilities[coord.row * 19 + coord.col])


def make_policy_output(scores: np.ndarray, legal_mask: np.ndarray) -> PolicyOutput:
    flat = scores.ravel().astype(np.float64)
    mask = legal_mask.ravel().astype(bool)
    probs = np.zeros(flat.size)
    if mask.any():
        z = flat[mask] - flat[mask].max()
        e = np.exp(z)
        probs[mask] = e / e.sum()
    return PolicyOutput(
        scores=scores, probabilities=probs, legal_mask=legal_mask.astype(bool)
    )


def ensemble_predict(
    net: PolicyNet,
    state: BoardState,
    symmetries: tuple[int, ...] = ALL_SYMMETRIES,
) -> PolicyOutput:
    """Encode, score under the symmetry ensemble, and normalize over the
    legal moves of the position."""
    planes = ft.encode(state)
    scores = ensemble_scores(net, planes, symmetries)
    legal = planes[ft.PLANE_LEGAL].astype(bool)
    return make_policy_output(scores, legal)


def select_move(output: PolicyOutput) -> Move:
    """Highest-probability legal play; ties break to the smallest row-major
    index. Pass only when no legal play exists."""
    if not output.legal_mask.any():
        return PASS
    idx = int(np.argmax(output.probabilities))
    return Move.play(Coord(idx // 19, idx % 19))


def top_k(output: PolicyOutput, k: int) -> list[tuple[Move, float]]:
    """The k most probable legal moves, descending; fewer if fewer exist."""
    if k < 1:
        raise ValueError("k must be >= 1")
    legal_idx = np.nonzero(output.legal_mask.ravel())[0]
    order = np.lexsort((legal_idx, -output.probabilities[legal_idx]))
    out = []
    for i in order[:k]:
        idx = int(legal_idx[i])
        out.append((Move.play(Coord(idx // 19, idx % 19)), float(output.probabilities[idx])))
    return out
