"""SGD training loop for the embedder with margin face loss plus the symmetry loss."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import numgrad as ng
from .dataman import (
    ImageSource,
    Manifest,
    assemble_batches,
    augment,
    batch_arrays,
    image_loader,
    normalize_pixels,
    plan_epoch,
)
from .faceloss import (
    FaceLossAccumulator,
    MarginConfig,
    NumericError,
    SymBatchView,
    margin_ce_terms,
    symface_loss,
    total_loss,
)
from .facenet import ClassifierHead, Embedder, EmbedderConfig, embedder_config_to_json, load_checkpoint, logits, save_checkpoint

logger = logging.getLogger(__name__)

SEED_STREAMS = {"corpus": 0, "plan": 1, "init": 2, "shuffle": 3, "augment": 4, "head": 5, "pairs": 6}


def sub_seed(seed: int, stream: str, *extra: int) -> int:
    """Derive an independent 63-bit seed for a named randomness stream."""
    ss = np.random.SeedSequence([int(seed), SEED_STREAMS[stream], *[int(e) for e in extra]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, state: "RunState"):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size_slots: int = 32
    lr_initial: float = 0.002
    lr_steps: list[tuple[int, float]] = field(default_factory=lambda: [(20, 0.0002)])
    momentum: float = 0.9
    weight_decay: float = 5e-4
    tau: float = 0.2
    p: float = 0.3
    margin: MarginConfig = field(default_factory=MarginConfig)
    seed: int = 0
    symface: bool = True
    flip_prob: float = 0.5
    normalized_sym: bool = False

    def __post_init__(self):
        if isinstance(self.margin, dict):
            self.margin = MarginConfig(**self.margin)
        self.lr_steps = [(int(e), float(r)) for e, r in self.lr_steps]
        epochs = [e for e, _ in self.lr_steps]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("lr_steps epochs must be strictly increasing")
        if self.lr_initial <= 0 or any(r <= 0 for _, r in self.lr_steps):
            raise ValueError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size_slots < 1:
            raise ValueError("epochs must be >= 0 and batch_size_slots >= 1")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must be in [0, 1)")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_initial
        for start, rate in self.lr_steps:
            if epoch >= start:
                lr = rate
        return lr

    def to_json(self) -> dict:
        d = asdict(self)
        d["lr_steps"] = [list(s) for s in self.lr_steps]
        return d


@dataclass
class RunState:
    epoch: int
    embedder: Embedder
    head: ClassifierHead
    velocity: dict[str, np.ndarray]
    metrics: list[dict] = field(default_factory=list)

    def named_params(self) -> dict[str, ng.Tensor]:
        params = {f"net.{k}": v for k, v in self.embedder.params.items()}
        params["head.W"] = self.head.weight
        return params


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], velocity: dict[str, np.ndarray],
             lr: float, momentum: float, weight_decay: float) -> dict[str, np.ndarray]:
    """In-place momentum SGD: ``v = momentum*v + g + wd*w``; ``w -= lr*v``."""
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ng.DimensionError(f"gradient for {name} has shape {g.shape}, expected {w.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    for name, w in params.items():
        g = grads[name]
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        v *= momentum
        v += g + weight_decay * w
        w -= lr * v
    return params


def init_state(num_classes: int, config: TrainConfig, embedder_config: EmbedderConfig) -> RunState:
    if num_classes < 2:
        raise ValueError("training needs at least two classes")
    ecfg = EmbedderConfig(embedder_config.input_dims, embedder_config.hidden, embedder_config.embedding_dim,
                          sub_seed(config.seed, "init"))
    net = Embedder(ecfg)
    head = ClassifierHead.init(num_classes, ecfg.embedding_dim, sub_seed(config.seed, "head"),
                               normalize=config.margin.angular)
    state = RunState(0, net, head, {})
    state.velocity = {k: np.zeros_like(v.data) for k, v in state.named_params().items()}
    return state


def initial_face_loss(state: RunState, manifest: Manifest, images: ImageSource, config: TrainConfig) -> float:
    """Mean margin loss over the unsplit, unflipped training images at the current weights."""
    load = image_loader(images)
    acc = FaceLossAccumulator()
    recs = manifest.records
    for i in range(0, len(recs), 256):
        chunk = recs[i : i + 256]
        x = normalize_pixels(np.stack([load(r) for r in chunk]))
        with np.errstate(over="ignore", invalid="ignore"):
            cos = logits(ng.tensor(state.embedder.embed(x)), state.head, angular=config.margin.angular)
            acc.add(margin_ce_terms(cos, [r.label for r in chunk], config.margin).data)
    return acc.value()


def _run_epoch(state: RunState, manifest: Manifest, images: ImageSource, config: TrainConfig) -> dict:
    epoch = state.epoch
    lf_init = None
    if epoch == 0:
        try:
            lf_init = initial_face_loss(state, manifest, images, config)
        except (NumericError, ng.DomainError) as exc:
            raise TrainingDiverged(f"initial weights: {exc}", state) from exc
    p = config.p
    plan = plan_epoch(manifest, p, sub_seed(config.seed, "plan", epoch))
    batches = assemble_batches(plan, manifest, config.batch_size_slots, sub_seed(config.seed, "shuffle", epoch), images)
    aug_rng = np.random.default_rng(sub_seed(config.seed, "augment", epoch))
    lr = config.lr_at(epoch)
    face_acc = FaceLossAccumulator()
    sym_sum = []
    dists = []
    params = state.named_params()
    n_images = 0
    for batch in batches:
        items = [augment(it, config.flip_prob, aug_rng) for it in batch]
        x, labels, left_rows, right_rows, rho = batch_arrays(items)
        n_images += len(labels)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                emb = state.embedder.forward(x)
                cos = logits(emb, state.head, angular=config.margin.angular)
                terms = margin_ce_terms(cos, labels, config.margin)
                face = ng.sum(terms) / len(labels)
                if config.symface and len(left_rows):
                    view = SymBatchView(ng.take_rows(emb, left_rows), ng.take_rows(emb, right_rows), rho, p,
                                        plan.n_sym, n_split=len(left_rows), normalized=config.normalized_sym)
                    sym = symface_loss(view)
                else:
                    view, sym = None, ng.tensor(0.0)
                loss = total_loss(face, sym)
        except (NumericError, ng.DomainError) as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", state) from exc
        if view is not None:
            # the optimizer sees a per-batch pair mean; keep the raw sum for the epoch figure
            sym_sum.append(float(sym.data) * view.denominator)
        if len(left_rows):
            dists.extend(np.linalg.norm(emb.data[left_rows] - emb.data[right_rows], axis=1).tolist())
        face_acc.add(terms.data)
        for t in params.values():
            t.zero_grad()
        loss.backward()
        grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in params.items()}
        try:
            sgd_step({k: t.data for k, t in params.items()}, grads, state.velocity, lr,
                     config.momentum, config.weight_decay)
        except NumericError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", state) from exc
    lf = face_acc.value(plan.n_effective)
    lrho = math.fsum(sym_sum) / (2 * plan.n_split) if sym_sum else 0.0
    row = {
        "epoch": epoch,
        "lf": lf,
        "lrho": lrho,
        "ltotal": lf + lrho,
        "pair_dist_mean": math.fsum(dists) / len(dists) if dists else 0.0,
        "lr": lr,
        "n_images": n_images,
        "n_split": plan.n_split,
    }
    if lf_init is not None:
        row["lf_init"] = lf_init
    return row


def train(
    manifest: Manifest,
    images: ImageSource,
    config: TrainConfig,
    embedder_config: EmbedderConfig | None = None,
    state: RunState | None = None,
    log_path: str | Path | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> RunState:
    """Run (or resume) training until ``config.epochs`` epochs are complete.

    Randomness for epoch ``e`` is derived from ``(config.seed, e)`` alone, so a run
    resumed from a checkpoint continues exactly as an uninterrupted one.
    """
    if len(manifest) == 0:
        raise ValueError("empty manifest")
    if state is None:
        if embedder_config is None:
            raise ValueError("embedder_config is required for a fresh run")
        num_classes = max(r.label for r in manifest) + 1
        state = init_state(num_classes, config, embedder_config)
    if manifest.tau != config.tau:
        manifest = manifest.with_tau(config.tau)
    log = open(log_path, "a", encoding="utf-8", newline="\n") if log_path else None
    try:
        while state.epoch < config.epochs:
            row = _run_epoch(state, manifest, images, config)
            state.metrics.append(row)
            state.epoch += 1
            if log:
                log.write(json.dumps(row) + "\n")
                log.flush()
            if on_epoch:
                on_epoch(row)
            logger.info("epoch %d lf=%.4f lrho=%.4f", row["epoch"], row["lf"], row["lrho"])
    finally:
        if log:
            log.close()
    return state


# ---------------------------------------------------------------- checkpointing

CHECKPOINT_SCHEMA = "symface-checkpoint/1"


def save_run(state: RunState, path: str | Path, config: TrainConfig) -> None:
    arrays = {f"param/{k}": v.data for k, v in state.named_params().items()}
    arrays.update({f"velocity/{k}": v for k, v in state.velocity.items()})
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "epoch": state.epoch,
        "num_classes": state.head.num_classes,
        "embedder": embedder_config_to_json(state.embedder.config),
        "train": config.to_json(),
    }
    save_checkpoint(path, header, arrays)


def load_run(path: str | Path) -> tuple[RunState, TrainConfig]:
    header, arrays = load_checkpoint(path)
    ecfg = EmbedderConfig(**header["embedder"])
    config = TrainConfig(**header["train"])
    net_params = {k[len("param/net."):]: v for k, v in arrays.items() if k.startswith("param/net.")}
    net = Embedder(ecfg, net_params)
    head = ClassifierHead(ng.tensor(arrays["param/head.W"], requires_grad=True), normalize=config.margin.angular)
    velocity = {k[len("velocity/"):]: v.copy() for k, v in arrays.items() if k.startswith("velocity/")}
    return RunState(int(header["epoch"]), net, head, velocity), config
