"""Model builders: the exact lightweight student and a desk-scale teacher
that preserves the two-stream fusion topology (CNN pair with SE attention
on one stream, patch transformer on the other, dropout+dense head).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .layers import (
    Activation,
    Chain,
    Context,
    Conv3x3,
    Dense,
    Dropout,
    Flatten,
    Layer,
    ParallelConcat,
    PatchEmbed,
    Pool,
    SEBlock,
    TakeToken,
    TransformerBlock,
    ViTConfig,
    BatchNorm,
)
from .rng import Rng
from .tensor import Parameter, Tensor

FEATURE_CONVERSIONS = ("flatten", "global_avg", "global_max")


@dataclass
class StudentSpec:
    input_size: int = 64
    conv_filters: tuple = (32, 64, 128)
    head_widths: tuple = (256, 128, 32)
    num_classes: int = 2
    feature_conversion: str = "global_max"

    def __post_init__(self):
        if self.feature_conversion not in FEATURE_CONVERSIONS:
            raise ConfigError(f"unknown feature conversion {self.feature_conversion!r}")
        if self.input_size % 8 != 0 or self.input_size < 8:
            raise ConfigError(
                f"student input size must survive three 2x2 poolings, got {self.input_size}")


@dataclass
class TeacherDeskSpec:
    input_size: int = 64
    cnn_filters_a: tuple = (16, 32, 64)
    cnn_filters_b: tuple = (24, 48, 96)
    se_reduction: int = 4
    vit_patch: int = 8
    vit_dim: int = 64
    vit_heads: int = 4
    vit_depth: int = 2
    vit_mlp_ratio: int = 2
    head_widths: tuple = (256, 128, 64)
    dropout_rates: tuple = (0.5, 0.5, 0.2)
    num_classes: int = 2

    def __post_init__(self):
        if self.input_size % 8 != 0 or self.input_size < 8:
            raise ConfigError(
                f"teacher input size must survive three 2x2 poolings, got {self.input_size}")
        # ViTConfig validates patch/head divisibility on construction
        ViTConfig(self.input_size, self.vit_patch, self.vit_dim,
                  self.vit_heads, self.vit_depth, self.vit_mlp_ratio)
        fused = self.cnn_filters_a[-1] + self.cnn_filters_b[-1]
        if fused % self.se_reduction != 0:
            raise ConfigError(
                f"SE reduction {self.se_reduction} must divide fused channels {fused}")


class ModelGraph:
    """Ordered layer graph with a unique parameter table and a mode flag."""

    def __init__(self, arch: str, config: dict, root: Layer, input_size: int,
                 dtype=np.float32):
        self.arch = arch
        self.config = config
        self.root = root
        self.input_size = input_size
        self.dtype = np.dtype(dtype)
        self.mode = "train"
        names = [p.name for p in self.parameters()]
        if len(names) != len(set(names)):
            raise ConfigError("duplicate parameter names in model graph")

    # -- parameter/table access ------------------------------------------------
    def parameters(self) -> list[Parameter]:
        return self.root.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        return self.root.buffers()

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def train_mode(self) -> "ModelGraph":
        self.mode = "train"
        return self

    def infer_mode(self) -> "ModelGraph":
        self.mode = "infer"
        return self

    # -- execution ---------------------------------------------------------------
    def forward_logits(self, x: Tensor, rng: Rng | None = None,
                       mode: str | None = None) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != 3 or x.shape[2] != self.input_size \
                or x.shape[3] != self.input_size:
            raise DimensionError(
                f"expected input (b, 3, {self.input_size}, {self.input_size}), got {x.shape}")
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype), requires_grad=x.requires_grad)
        return self.root.forward(x, Context(mode or self.mode, rng))

    def predict(self, batch) -> Tensor:
        """Probability rows for a batch; always runs in inference semantics.

        The final softmax is evaluated in float64 so rows sum to 1 within
        1e-9 regardless of the training dtype.
        """
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch, self.dtype))
        with T.no_grad():
            logits = self.forward_logits(x.detach(), mode="infer")
        return T.softmax_t(Tensor(logits.data.astype(np.float64)), 1.0)

    # -- accounting ---------------------------------------------------------------
    def count_params(self):
        """(total_trainable, total_frozen, rows) with per-tensor counts."""
        rows = [(p.name, int(p.size), True) for p in self.parameters()]
        rows += [(name, int(buf.size), False) for name, buf in self.buffers().items()]
        trainable = sum(n for _, n, t in rows if t)
        frozen = sum(n for _, n, t in rows if not t)
        return trainable, frozen, rows

    def state_tensors(self) -> dict[str, tuple[np.ndarray, bool]]:
        """name -> (array, trainable) for every param and buffer, in order."""
        out = {p.name: (p.data, True) for p in self.parameters()}
        for name, buf in self.buffers().items():
            out[name] = (buf, False)
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, (target, _) in self.state_tensors().items():
            if name not in arrays:
                raise ConfigError(f"missing tensor {name!r} in state")
            src = arrays[name]
            if src.shape != target.shape:
                raise DimensionError(
                    f"tensor {name!r} shape {src.shape} does not match {target.shape}")
            target[...] = src.astype(target.dtype)


def _conv_block(prefix: str, c_in: int, c_out: int, rng: Rng, dtype) -> list[Layer]:
    return [Conv3x3(f"{prefix}.conv", c_in, c_out, rng, "same", dtype),
            Activation(f"{prefix}.relu", "relu"),
            Pool(f"{prefix}.pool", "max2x2")]


def build_student(input_size: int = 64, feature_conversion: str = "global_max",
                  seed: int = 0, dtype=np.float32) -> ModelGraph:
    """Three conv blocks (32/64/128 filters), a selectable feature
    conversion, then a 256/128/32 SELU head and a 2-way output layer."""
    spec = StudentSpec(input_size=input_size, feature_conversion=feature_conversion)
    rng = Rng(seed)
    layers: list[Layer] = []
    c_in = 3
    for i, c_out in enumerate(spec.conv_filters, start=1):
        layers += _conv_block(f"block{i}", c_in, c_out, rng, dtype)
        c_in = c_out

    if feature_conversion == "flatten":
        layers.append(Flatten("flatten"))
        features = c_in * (input_size // 8) ** 2
    else:
        layers.append(Pool("feature_pool", feature_conversion))
        features = c_in

    for i, width in enumerate(spec.head_widths, start=1):
        layers.append(Dense(f"head{i}", features, width, rng, dtype))
        layers.append(Activation(f"head{i}.selu", "selu"))
        features = width
    layers.append(Dense("output", features, spec.num_classes, rng, dtype))

    config = {"input_size": input_size, "feature_conversion": feature_conversion,
              "seed": seed}
    return ModelGraph("student", config, Chain("student", layers), input_size, dtype)


def build_teacher_desk(spec: TeacherDeskSpec | None = None, seed: int = 0,
                       dtype=np.float32) -> ModelGraph:
    """Desk-scale teacher with the two-stream fusion topology.

    Stream 1 runs two heterogeneous CNN extractors, concatenates their
    feature maps, applies batch norm, SE channel attention, and global
    average pooling.  Stream 2 is a small patch transformer whose class
    token is batch-normalized.  The fused vector passes three
    dropout+dense SELU blocks and a 2-way output layer.
    """
    spec = spec or TeacherDeskSpec()
    rng = Rng(seed)

    def cnn_stream(tag: str, filters: tuple) -> Chain:
        layers: list[Layer] = []
        c_in = 3
        for i, c_out in enumerate(filters, start=1):
            layers += _conv_block(f"{tag}.block{i}", c_in, c_out, rng, dtype)
            c_in = c_out
        return Chain(tag, layers)

    cnn_a = cnn_stream("cnn_a", spec.cnn_filters_a)
    cnn_b = cnn_stream("cnn_b", spec.cnn_filters_b)
    fused_channels = spec.cnn_filters_a[-1] + spec.cnn_filters_b[-1]
    stream1 = Chain("stream1", [
        ParallelConcat("cnn_pair", [cnn_a, cnn_b], axis=1),
        BatchNorm("stream1.bn", fused_channels, dtype),
        SEBlock("stream1.se", fused_channels, spec.se_reduction, rng, dtype),
        Pool("stream1.gap", "global_avg"),
    ])

    vit_cfg = ViTConfig(spec.input_size, spec.vit_patch, spec.vit_dim,
                        spec.vit_heads, spec.vit_depth, spec.vit_mlp_ratio)
    vit_layers: list[Layer] = [PatchEmbed("vit.embed", vit_cfg, rng, dtype)]
    for i in range(vit_cfg.depth):
        vit_layers.append(TransformerBlock(f"vit.block{i + 1}", vit_cfg.embed_dim,
                                           vit_cfg.num_heads, vit_cfg.mlp_ratio,
                                           rng, dtype))
    vit_layers.append(TakeToken("vit.cls", 0))
    vit_layers.append(BatchNorm("stream2.bn", vit_cfg.embed_dim, dtype))
    stream2 = Chain("stream2", vit_layers)

    head: list[Layer] = [ParallelConcat("fusion", [stream1, stream2], axis=1)]
    features = fused_channels + vit_cfg.embed_dim
    for i, (width, rate) in enumerate(zip(spec.head_widths, spec.dropout_rates), start=1):
        head.append(Dropout(f"head{i}.drop", rate))
        head.append(Dense(f"head{i}", features, width, rng, dtype))
        head.append(Activation(f"head{i}.selu", "selu"))
        features = width
    head.append(Dense("output", features, spec.num_classes, rng, dtype))

    config = {"spec": asdict(spec), "seed": seed}
    return ModelGraph("teacher_desk", config, Chain("teacher_desk", head),
                      spec.input_size, dtype)


def build_from_config(arch: str, config: dict, dtype=np.float32) -> ModelGraph:
    """Reconstruct a model from the config dict stored in an archive."""
    if arch == "student":
        return build_student(config["input_size"], config["feature_conversion"],
                             config.get("seed", 0), dtype)
    if arch == "teacher_desk":
        spec_fields = dict(config["spec"])
        for key in ("cnn_filters_a", "cnn_filters_b", "head_widths", "dropout_rates"):
            spec_fields[key] = tuple(spec_fields[key])
        return build_teacher_desk(TeacherDeskSpec(**spec_fields),
                                  config.get("seed", 0), dtype)
    raise ConfigError(f"unknown architecture {arch!r}")


def predict(model: ModelGraph, batch) -> Tensor:
    return model.predict(batch)


def count_params(model: ModelGraph):
    return model.count_params()
