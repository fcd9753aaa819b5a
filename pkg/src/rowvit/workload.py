"""Model workloads: the built-in Swin-T layer list and a line-oriented file format.

Workload file grammar, one layer per line::

    conv4x4 <h> <w> <cin> <cout> [norm] [residual]
    fc <tokens> <cin> <cout> [gelu] [norm] [residual]
    wmsa <windows> <tokens> <dim> <heads> [norm] [residual]

Blank lines are ignored and ``#`` starts a comment.  An optional header line
``name <text>`` names the workload and ``image <h> <w> <c>`` records the
input geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from .core_types import Conv4x4, FullyConnected, LayerDescriptor, WindowAttention

SWIN_T_DEPTHS = (2, 2, 6, 2)
SWIN_T_HEADS = (3, 6, 12, 24)
SWIN_T_EMBED = 96
SWIN_T_WINDOW = 7
SWIN_T_MLP_RATIO = 4
SWIN_T_CLASSES = 1000


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    name: str
    layers: tuple = field(default_factory=tuple)
    image: tuple = (224, 224, 3)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "image", tuple(self.image))

    def __len__(self):
        return len(self.layers)

    def check_shapes(self):
        """Raise :class:`WorkloadError` unless consecutive layers chain.

        A layer accepts the previous output ``(tokens, channels)`` when it
        matches exactly, when the element count is preserved (2x2 patch
        merging), or when it pools all tokens into one (classifier head).
        A conv layer must match the image geometry.
        """
        prev = None
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv4x4):
                if prev is not None or (layer.h_in, layer.w_in, layer.c_in) != self.image:
                    raise WorkloadError(f"layer {i}: conv must be first and match image {self.image}")
            elif prev is not None:
                want = layer.input_shape
                same = want == prev
                reshaped = want[0] * want[1] == prev[0] * prev[1]
                pooled = want[0] == 1 and want[1] == prev[1]
                if not (same or reshaped or pooled):
                    raise WorkloadError(
                        f"layer {i} ({layer.kind}) expects {want}, previous layer gives {prev}"
                    )
            prev = layer.output_shape


def _swin_block(tokens: int, dim: int, heads: int, windows: int) -> list:
    hidden = dim * SWIN_T_MLP_RATIO
    return [
        FullyConnected(tokens, dim, 3 * dim),
        WindowAttention(windows, SWIN_T_WINDOW * SWIN_T_WINDOW, dim, heads),
        FullyConnected(tokens, dim, dim, residual=True, post_norm=True),
        FullyConnected(tokens, dim, hidden, activation="gelu"),
        FullyConnected(tokens, hidden, dim, residual=True, post_norm=True),
    ]


def build_swin_t(image: int = 224) -> Workload:
    """Swin-T: patch embed, four stages (depths 2/2/6/2, heads 3/6/12/24), head.

    Shapes per stage ``s`` (resolution ``r = image/4/2**s``, ``C = 96*2**s``):

    * W-MSA block: QKV fc ``(r*r, C, 3C)``, attention over ``(r/7)**2`` windows
      of 49 tokens, output projection ``(r*r, C, C)``, MLP ``C -> 4C -> C``
      with GELU; both projections back into the residual stream are flagged
      ``residual`` and ``norm`` (the next sub-block's layer norm).
    * Patch merging between stages: fc ``(r*r/4, 4C, 2C)``.
    * Head: global average pool then fc ``(1, 768, 1000)``.

    Shifted-window blocks cost the same as regular ones and share the layout.
    """
    layers: list = [Conv4x4(image, image, 3, SWIN_T_EMBED, post_norm=True)]
    res = image // 4
    dim = SWIN_T_EMBED
    for stage, (depth, heads) in enumerate(zip(SWIN_T_DEPTHS, SWIN_T_HEADS)):
        if stage > 0:
            layers.append(FullyConnected((res // 2) ** 2, 4 * dim, 2 * dim))
            res //= 2
            dim *= 2
        windows = (res // SWIN_T_WINDOW) ** 2
        for _ in range(depth):
            layers.extend(_swin_block(res * res, dim, heads, windows))
    layers.append(FullyConnected(1, dim, SWIN_T_CLASSES))
    return Workload("swin-t", tuple(layers), (image, image, 3))


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------


def format_layer(layer: LayerDescriptor) -> str:
    if isinstance(layer, Conv4x4):
        words = ["conv4x4", layer.h_in, layer.w_in, layer.c_in, layer.c_out]
    elif isinstance(layer, FullyConnected):
        words = ["fc", layer.tokens, layer.c_in, layer.c_out]
        if layer.activation == "gelu":
            words.append("gelu")
    elif isinstance(layer, WindowAttention):
        words = ["wmsa", layer.num_windows, layer.tokens_per_window, layer.embed_dim,
                 layer.num_heads]
    else:
        raise TypeError(type(layer).__name__)
    if layer.post_norm:
        words.append("norm")
    if layer.residual:
        words.append("residual")
    return " ".join(str(w) for w in words)


def parse_layer(line: str, lineno: int = 0) -> LayerDescriptor:
    words = line.split()
    kind, rest = words[0], words[1:]
    nums = []
    while rest and rest[0].lstrip("-").isdigit():
        nums.append(int(rest.pop(0)))
    flags = set(rest)
    arity = {"conv4x4": 4, "fc": 3, "wmsa": 4}
    if kind not in arity:
        raise WorkloadError(f"line {lineno}: unknown layer type {kind!r}")
    if len(nums) != arity[kind]:
        raise WorkloadError(f"line {lineno}: {kind} takes {arity[kind]} integers, got {len(nums)}")
    allowed = {"norm", "residual"} | ({"gelu"} if kind == "fc" else set())
    unknown = flags - allowed
    if unknown:
        raise WorkloadError(f"line {lineno}: unknown flag(s) {sorted(unknown)}")
    common = dict(post_norm="norm" in flags, residual="residual" in flags)
    try:
        if kind == "conv4x4":
            return Conv4x4(*nums, **common)
        if kind == "fc":
            return FullyConnected(*nums, activation="gelu" if "gelu" in flags else "none", **common)
        return WindowAttention(*nums, **common)
    except ValueError as exc:
        raise WorkloadError(f"line {lineno}: {exc}") from exc


def loads(text: str, name: str = "workload") -> Workload:
    layers = []
    image = (224, 224, 3)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, tail = line.partition(" ")
        if head == "name":
            name = tail.strip()
        elif head == "image":
            dims = tail.split()
            if len(dims) != 3:
                raise WorkloadError(f"line {lineno}: image takes h w c")
            image = tuple(int(x) for x in dims)
        else:
            layers.append(parse_layer(line, lineno))
    return Workload(name, tuple(layers), image)


def dumps(w: Workload) -> str:
    lines = [f"name {w.name}", "image " + " ".join(str(x) for x in w.image)]
    lines += [format_layer(layer) for layer in w.layers]
    return "\n".join(lines) + "\n"


def load(path: Union[str, Path]) -> Workload:
    path = Path(path)
    return loads(path.read_text(), name=path.stem)


def save(w: Workload, path: Union[str, Path]):
    Path(path).write_text(dumps(w))
