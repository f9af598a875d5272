"""Three-head convolutional + LSTM + linear mid-price change classifier.

Each head consumes one flattened simplicial tensor (tetrahedra, triangles,
edges). A (1x2)/stride-(1x2) convolution first merges each (price, volume)
pair, a stride-arity convolution merges each simplex, two time-axis (4x1)
convolutions (zero-padded to preserve the 100-step extent) model short-range
temporal structure, and a (1 x head-cardinality) convolution with dropout
mixes across simplices. The three (100 x 32) head outputs are concatenated
into a (100 x 96) sequence feeding a 32-unit LSTM whose final state a linear
layer maps to the three class logits.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from . import engine
from .engine import LstmParams, Parameter, Tensor
from .errors import ConfigInconsistent, DigestMismatch, IoFailure, NonFiniteLogit

HEAD_NAMES = ("tetra", "tri", "edge")

CHECKPOINT_MAGIC = b"HLOBCKPT"


@dataclass(frozen=True)
class HlobConfig:
    window_len: int = 100
    channels: int = 32
    head_widths: tuple[int, int, int] = (136, 312, 216)
    arities: tuple[int, int, int] = (4, 3, 2)
    cardinalities: tuple[int, int, int] = (17, 52, 54)
    dropout_rate: float = 0.35
    lstm_hidden: int = 32
    n_classes: int = 3
    leaky_slope: float = 0.01

    def __post_init__(self):
        for width, arity, card in zip(self.head_widths, self.arities,
                                      self.cardinalities):
            if width != card * arity * 2:
                raise ConfigInconsistent(
                    f"head width {width} != {card} * {arity} * 2")
            if width % (2 * arity) != 0:
                raise ConfigInconsistent(f"width {width} not divisible by 2*{arity}")

    @property
    def lstm_input(self) -> int:
        return self.channels * len(self.head_widths)

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


class _Head:
    """One convolutional head over a flattened simplicial input."""

    def __init__(self, name: str, arity: int, cardinality: int,
                 config: HlobConfig, rng: np.random.Generator, dtype):
        c = config.channels
        self.name = name
        self.arity = arity
        self.cardinality = cardinality

        def conv_param(layer, out_c, in_c, kh, kw):
            fan_in = in_c * kh * kw
            w = Parameter(f"head.{name}.{layer}.weight",
                          engine.uniform_init(rng, (out_c, in_c, kh, kw), fan_in, dtype))
            b = Parameter(f"head.{name}.{layer}.bias",
                          engine.uniform_init(rng, (out_c,), fan_in, dtype))
            return w, b

        self.conv_pv = conv_param("conv_pv", c, 1, 1, 2)
        self.conv_simplex = conv_param("conv_simplex", c, c, 1, arity)
        self.conv_time1 = conv_param("conv_time1", c, c, 4, 1)
        self.conv_time2 = conv_param("conv_time2", c, c, 4, 1)
        self.conv_mix = conv_param("conv_mix", c, c, 1, cardinality)

    def layers(self):
        return [("conv_pv", self.conv_pv), ("conv_simplex", self.conv_simplex),
                ("conv_time1", self.conv_time1), ("conv_time2", self.conv_time2),
                ("conv_mix", self.conv_mix)]

    def parameters(self) -> list[Parameter]:
        return [p for _, (w, b) in self.layers() for p in (w, b)]

    def forward(self, x: Tensor, config: HlobConfig, train: bool,
                rng: np.random.Generator | None) -> Tensor:
        slope = config.leaky_slope

        def conv(t, pair, **kwargs):
            w, b = pair
            return engine.conv2d(t, w.tensor, b.tensor, **kwargs)

        h = conv(x, self.conv_pv, stride=(1, 2))
        h = engine.leaky_relu(h, slope)
        h = conv(h, self.conv_simplex, stride=(1, self.arity))
        h = engine.leaky_relu(h, slope)
        # time padding (1, 2) keeps the 100-step extent through the 4x1 kernels
        h = conv(h, self.conv_time1, padding=((1, 2), (0, 0)))
        h = engine.leaky_relu(h, slope)
        h = conv(h, self.conv_time2, padding=((1, 2), (0, 0)))
        h = engine.leaky_relu(h, slope)
        h = conv(h, self.conv_mix)
        h = engine.leaky_relu(h, slope)
        h = engine.dropout(h, config.dropout_rate, train, rng)
        # (N, C, T, 1) -> (N, T, C)
        n, c, t, _ = h.shape
        return engine.reshape(engine.permute(h, (0, 2, 1, 3)), (n, t, c))


class HlobModel:
    """The assembled classifier with named, serializable parameters."""

    def __init__(self, config: HlobConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.heads = [
            _Head(name, arity, card, config, rng, dtype)
            for name, arity, card in zip(HEAD_NAMES, config.arities,
                                         config.cardinalities)
        ]
        self.lstm = LstmParams("lstm", config.lstm_input, config.lstm_hidden,
                               rng, dtype)
        fan_in = config.lstm_hidden
        self.out_w = Parameter("output.weight",
                               engine.uniform_init(rng, (config.n_classes, fan_in),
                                                   fan_in, dtype))
        self.out_b = Parameter("output.bias",
                               engine.uniform_init(rng, (config.n_classes,),
                                                   fan_in, dtype))

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for head in self.heads:
            params.extend(head.parameters())
        params.extend(self.lstm.parameters())
        params.extend([self.out_w, self.out_b])
        return params

    def forward(self, inputs, train: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        """Map the three (N, 100, width) head inputs to (N, 3) logits."""
        head_outputs = []
        for head, arr in zip(self.heads, inputs):
            arr = np.asarray(arr, self.dtype)
            if arr.ndim == 2:
                arr = arr[None]
            n, t, w = arr.shape
            x = Tensor(arr.reshape(n, 1, t, w))
            head_outputs.append(head.forward(x, self.config, train, rng))
        seq = engine.concat(head_outputs, axis=2)  # (N, T, 96)
        _, h_final, _ = engine.lstm(seq, self.lstm)
        return engine.dense(h_final, self.out_w.tensor, self.out_b.tensor)

    def param_count_table(self) -> list[tuple[str, int]]:
        """Per-component trainable parameter counts, plus the total."""
        rows: list[tuple[str, int]] = []
        for head in self.heads:
            counts = {layer: w.data.size + b.data.size
                      for layer, (w, b) in head.layers()}
            rows.append((f"head.{head.name}.conv_pv", counts["conv_pv"]))
            rows.append((f"head.{head.name}.block2",
                         counts["conv_simplex"] + counts["conv_time1"]
                         + counts["conv_time2"]))
            rows.append((f"head.{head.name}.conv_mix", counts["conv_mix"]))
        rows.append(("lstm", sum(p.data.size for p in self.lstm.parameters())))
        rows.append(("output", self.out_w.data.size + self.out_b.data.size))
        rows.append(("total", sum(p.data.size for p in self.parameters())))
        return rows


def predict_proba(logits) -> np.ndarray:
    """Stabilized softmax over logits; rows sum to 1."""
    arr = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteLogit("logits contain non-finite values")
    return engine.softmax(arr)


def save_checkpoint(model: HlobModel, path, optimizer: engine.AdamW | None = None,
                    extra: dict | None = None) -> None:
    """Write parameters (and optimizer moments) as little-endian payloads.

    Layout: magic, 8-byte header length, JSON header, then raw buffers in
    header order.
    """
    entries = []
    buffers = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        arr = np.ascontiguousarray(arr)
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "shape": list(arr.shape),
                        "dtype": str(arr.dtype), "offset": offset,
                        "nbytes": len(raw)})
        buffers.append(raw)
        offset += len(raw)

    for p in model.parameters():
        push(p.name, p.data)
        push(p.name + "#m", p.m)
        push(p.name + "#v", p.v)

    header = {
        "config": asdict(model.config),
        "config_digest": model.config.digest(),
        "seed": model.seed,
        "dtype": str(np.dtype(model.dtype)),
        "optimizer_t": optimizer.t if optimizer is not None else 0,
        "extra": extra or {},
        "entries": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    try:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for raw in buffers:
                fh.write(raw)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_checkpoint(path, expected_config: HlobConfig | None = None
                    ) -> tuple[HlobModel, dict]:
    """Rebuild a model bit-exactly from a checkpoint file."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) < len(CHECKPOINT_MAGIC) + 8 or not blob.startswith(CHECKPOINT_MAGIC):
        raise IoFailure("not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    hlen = int.from_bytes(blob[pos:pos + 8], "little")
    pos += 8
    try:
        header = json.loads(blob[pos:pos + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IoFailure(f"corrupt header: {exc}") from exc
    pos += hlen

    cfg_fields = dict(header["config"])
    for key in ("head_widths", "arities", "cardinalities"):
        cfg_fields[key] = tuple(cfg_fields[key])
    config = HlobConfig(**cfg_fields)
    if expected_config is not None and expected_config.digest() != header["config_digest"]:
        raise DigestMismatch(
            f"checkpoint digest {header['config_digest'][:12]} does not match "
            f"expected {expected_config.digest()[:12]}")

    model = HlobModel(config, seed=header["seed"],
                      dtype=np.dtype(header["dtype"]).type)
    by_name = {e["name"]: e for e in header["entries"]}
    for p in model.parameters():
        for suffix, target in (("", "data"), ("#m", "m"), ("#v", "v")):
            entry = by_name.get(p.name + suffix)
            if entry is None:
                raise IoFailure(f"missing parameter {p.name + suffix}")
            start = pos + entry["offset"]
            end = start + entry["nbytes"]
            if end > len(blob):
                raise IoFailure("truncated checkpoint payload")
            arr = np.frombuffer(blob[start:end],
                                dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
            setattr(p, target, arr.copy())
    return model, header
