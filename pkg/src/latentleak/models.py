"""Global classifier architecture: an MLP encoder followed by an MLP head."""
from __future__ import annotations

from dataclasses import dataclass

from .nn import Sequential, build_mlp
from .rng import SeededRng


@dataclass(frozen=True)
class ArchSpec:
    """Encoder ``input_dim -> *hidden -> d`` then head ``d -> k -> o -> classes``.

    The first head layer (width ``k``, ReLU) and the second (width ``o``,
    linear) are the two layers the attacker turns into a leak module. The
    final ``o -> classes`` layer is needed: if the linear ``o`` outputs fed
    softmax directly, identical rows in the second layer would make every
    gradient reaching the first head layer vanish.
    """

    input_dim: int
    hidden: tuple[int, ...] = (128,)
    d: int = 16
    k: int = 128
    o: int = 32
    classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("input_dim", "d", "k", "o", "classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def encoder_widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.d)

    @property
    def encoder_activations(self) -> tuple[str, ...]:
        return ("relu",) * len(self.hidden) + ("identity",)

    @property
    def decoder_widths(self) -> tuple[int, ...]:
        return tuple(reversed(self.encoder_widths))

    @property
    def decoder_activations(self) -> tuple[str, ...]:
        return ("relu",) * len(self.hidden) + ("identity",)


@dataclass(frozen=True, eq=False)
class GlobalModel:
    """The network broadcast to clients. ``net[:encoder_depth]`` is the encoder."""

    net: Sequential
    encoder_depth: int

    def __post_init__(self):
        if not 0 <= self.encoder_depth <= len(self.net) - 2:
            raise ValueError("the head needs at least the two leak layers after the encoder")

    @property
    def encoder(self) -> Sequential | None:
        return self.net[: self.encoder_depth] if self.encoder_depth else None

    @property
    def leak_layers(self) -> tuple[int, int]:
        return self.encoder_depth, self.encoder_depth + 1

    @property
    def k(self) -> int:
        return self.net[self.encoder_depth].out_features

    @property
    def d(self) -> int:
        return self.net[self.encoder_depth].in_features

    def shapes(self):
        return self.net.shapes()

    def with_net(self, net: Sequential) -> "GlobalModel":
        return GlobalModel(net, self.encoder_depth)


def head_activations() -> tuple[str, str, str]:
    return ("relu", "identity", "identity")


def build_global_model(arch: ArchSpec, rng: SeededRng) -> GlobalModel:
    """Randomly initialised benign model."""
    enc = build_mlp(arch.encoder_widths, arch.encoder_activations, rng.child(0))
    head = build_mlp((arch.d, arch.k, arch.o, arch.classes), head_activations(), rng.child(1))
    return GlobalModel(enc + head, len(enc))
