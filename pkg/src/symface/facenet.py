"""Small fully-connected face embedder, classifier head and weight checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numgrad as ng

CHECKPOINT_MAGIC = b"SYMFCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class EmbedderConfig:
    input_dims: tuple[int, int, int] = (32, 32, 1)
    hidden: tuple[int, ...] = (128, 64)
    embedding_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_dims", tuple(int(v) for v in self.input_dims))
        object.__setattr__(self, "hidden", tuple(int(v) for v in self.hidden))
        if len(self.input_dims) != 3:
            raise ValueError("input_dims must be (H, W, channels)")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")

    @property
    def input_size(self) -> int:
        h, w, c = self.input_dims
        return h * w * c


class Embedder:
    """flatten -> [affine -> relu] x len(hidden) -> affine to ``embedding_dim``."""

    def __init__(self, config: EmbedderConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = self._init_params(config)
        self.params = {k: ng.tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}

    @staticmethod
    def _init_params(config: EmbedderConfig) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(config.seed)
        widths = [config.input_size, *config.hidden, config.embedding_dim]
        params = {}
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            # He init for relu layers
            params[f"W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            params[f"b{i}"] = np.zeros(fan_out)
        return params

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden) + 1

    def flatten(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        h, w, c = self.config.input_dims
        if x.ndim == 3 and c == 1:
            x = x[..., None]
        if x.ndim != 4 or x.shape[1:] != (h, w, c):
            raise ng.DimensionError(f"images of shape {x.shape[1:]} do not match input_dims {(h, w, c)}")
        return x.reshape(x.shape[0], -1)

    def forward(self, images) -> ng.Tensor:
        out = ng.tensor(self.flatten(images))
        for i in range(self.n_layers):
            out = ng.add(ng.matmul(out, self.params[f"W{i}"]), self.params[f"b{i}"])
            if i < self.n_layers - 1:
                out = ng.relu(out)
        return out

    def embed(self, images) -> np.ndarray:
        return self.forward(images).data


@dataclass
class ClassifierHead:
    """Class weights stored one row per class, shape ``(C, d)``."""

    weight: ng.Tensor
    normalize: bool = True

    @classmethod
    def init(cls, num_classes: int, embedding_dim: int, seed: int, normalize: bool = True) -> "ClassifierHead":
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0, size=(num_classes, embedding_dim))
        return cls(ng.tensor(w, requires_grad=True), normalize)

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


def logits(embeddings: ng.Tensor, head: ClassifierHead, angular: bool = True) -> ng.Tensor:
    """Cosines ``<z/|z|, W_j/|W_j|>`` in angular mode, plain ``z W^T`` otherwise."""
    if embeddings.shape[1] != head.weight.shape[1]:
        raise ng.DimensionError(f"embedding dim {embeddings.shape[1]} != head dim {head.weight.shape[1]}")
    if not angular:
        return ng.matmul(embeddings, ng.transpose(head.weight))
    try:
        z = ng.normalize_rows(embeddings)
    except ng.DomainError as exc:
        raise ng.DomainError("zero-norm embedding in angular mode") from exc
    w = ng.normalize_rows(head.weight) if head.normalize else head.weight
    return ng.matmul(z, ng.transpose(w))


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write ``magic | u32 version | u32 header_len | JSON header | raw little-endian doubles``.

    The header records each array's name and shape in write order.
    """
    names = sorted(arrays)
    meta = dict(header)
    meta["arrays"] = [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", raw, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for spec in header.pop("arrays"):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if pos + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(raw):
        raise CheckpointError(f"{path}: trailing bytes")
    return header, arrays


def embedder_config_to_json(cfg: EmbedderConfig) -> dict:
    d = asdict(cfg)
    d["input_dims"] = list(cfg.input_dims)
    d["hidden"] = list(cfg.hidden)
    return d
