"""Training, evaluation, ablation grids and artifact export.

Everything is deterministic given (config, seed): parameter
initialization, batch order and Gumbel noise each come from disjoint
counter-based substreams of the single config seed.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, asdict, replace, fields as dc_fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamGroup, SgdState, Tensor, sgd_step
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import (DEFAULT_LOGIT_SCALE, ClassPrototypes, FrozenEncoder,
                         build_prototypes, encode, similarity_logits)
from .edges import edge_map_batch, to_grayscale
from .errors import ConfigError, ContractViolation, DataError
from .maskgen import (GumbelSchedule, MaskGeneratorParams, anneal,
                      count_generator_params, gumbel_noise,
                      gumbel_softmax_sample, inference_decision,
                      region_logits_batch)
from .pgm import to_gray_render, write_pgm
from .prompting import PromptTemplate, apply_prompt, count_prompt_params
from .synth import load_split, region_overlap_stats

METRICS_COLUMNS = ("epoch", "split", "loss", "accuracy", "mask_on_rate",
                   "object_on_rate", "background_on_rate", "tau")

MODES = ("adavipro", "vp-baseline")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "adavipro"
    prompt_width: int = 8
    region_size: int = 16
    embed_dim: int = 64
    tau0: float = 5.0
    gamma: float = 0.98
    epochs: int = 30
    batch_size: int = 64
    lr_prompt: float = 40.0
    lr_generator: float = 1.0
    seed: int = 0
    dataset: str = ""
    output_dir: str = ""
    straight_through: bool = False
    edge_detection: bool = True

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.prompt_width < 0 or self.region_size < 1 or self.embed_dim < 1:
            raise ConfigError("prompt_width/region_size/embed_dim out of range")
        if not (self.tau0 > 0 and self.gamma > 0):
            raise ConfigError("tau0 and gamma must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs/batch_size out of range")


def load_experiment_config(path) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text())
    known = {f.name for f in dc_fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**raw)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    mask_on_rate: float
    object_on_rate: float
    background_on_rate: float
    tau: float

    def as_csv(self) -> list[str]:
        return [str(self.epoch), self.split, repr(self.loss), repr(self.accuracy),
                repr(self.mask_on_rate), repr(self.object_on_rate),
                repr(self.background_on_rate), repr(self.tau)]


def write_metrics(rows: list[MetricsRow], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())


def _substream_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(0,) + key).generate_state(1)[0])


def _edge_input(images: np.ndarray, edge_detection: bool) -> np.ndarray:
    if edge_detection:
        return edge_map_batch(images)
    return to_grayscale(images)


@dataclass
class Model:
    """Everything the forward pass needs, trainable or frozen."""

    config: ExperimentConfig
    template: PromptTemplate
    generator: MaskGeneratorParams | None
    encoder: FrozenEncoder
    prototypes: ClassPrototypes
    image_size: int


def _build_model(cfg: ExperimentConfig, train_images, train_labels) -> Model:
    h = train_images.shape[2]
    if h % cfg.region_size:
        raise ContractViolation(
            f"image size {h} not divisible by region_size {cfg.region_size}")
    template = PromptTemplate.create(h, train_images.shape[3], cfg.prompt_width,
                                     seed=_substream_seed(cfg.seed, 1))
    generator = None
    if cfg.mode == "adavipro":
        generator = MaskGeneratorParams.create(cfg.embed_dim, cfg.region_size,
                                               seed=_substream_seed(cfg.seed, 2))
    encoder = FrozenEncoder.create(_substream_seed(cfg.seed, 3))
    counts = np.bincount(train_labels)
    prototypes = build_prototypes(train_images, train_labels, encoder,
                                  per_class_n=int(counts.min()))
    return Model(config=cfg, template=template, generator=generator,
                 encoder=encoder, prototypes=prototypes, image_size=h)


def _soft_masks(model: Model, edge_b: np.ndarray, schedule: GumbelSchedule,
                epoch: int, step: int):
    """Training-time relaxed keep maps: (pixel mask Tensor, keep grid data)."""
    cfg = model.config
    logits = region_logits_batch(Tensor(edge_b), model.generator)
    noise = gumbel_noise(logits.shape, cfg.seed, epoch=epoch, step=step)
    soft = gumbel_softmax_sample(logits, schedule, noise, axis=1)
    if cfg.straight_through:
        soft = ad.straight_through_hard(soft, axis=1)
    keep = ad.narrow(soft, 1, 1, 1)                       # n,1,gh,gw
    return ad.upsample_nearest(keep, cfg.region_size), keep.data[:, 0]


def _hard_masks(model: Model, edge_b: np.ndarray) -> np.ndarray:
    """Inference-time hard keep grids, N x Gh x Gw of {0,1}."""
    logits = region_logits_batch(Tensor(edge_b), model.generator).data
    return inference_decision(np.moveaxis(logits, 1, -1))


def _forward_scores(model: Model, images_b: np.ndarray, mask_pix) -> Tensor:
    xhat = apply_prompt(Tensor(images_b), model.template, mask_pix)
    emb = encode(xhat, model.encoder)
    return similarity_logits(emb, model.prototypes, DEFAULT_LOGIT_SCALE)


def _evaluate_arrays(model: Model, images, labels, boxes, tau: float,
                     epoch: int, split: str, batch_size: int = 128) -> MetricsRow:
    cfg = model.config
    n = images.shape[0]
    gh = model.image_size // cfg.region_size
    gw = images.shape[3] // cfg.region_size
    if cfg.mode == "adavipro":
        edge_all = _edge_input(images, cfg.edge_detection)
    losses, correct = [], 0
    grids = np.empty((n, gh, gw))
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        if cfg.mode == "adavipro":
            grid = _hard_masks(model, edge_all[sl])
        else:
            grid = np.ones((sl.stop - sl.start, gh, gw))
        grids[sl] = grid
        mask_pix = Tensor(np.repeat(np.repeat(grid[:, None], cfg.region_size, 2),
                                    cfg.region_size, 3))
        scores = _forward_scores(model, images[sl], mask_pix)
        losses.append(ad.cross_entropy(scores, labels[sl]).item() * (sl.stop - sl.start))
        correct += int(np.sum(np.argmax(scores.data, axis=1) == labels[sl]))
    object_on, background_on = region_overlap_stats(grids, boxes, cfg.region_size)
    return MetricsRow(epoch=epoch, split=split, loss=sum(losses) / n,
                      accuracy=correct / n, mask_on_rate=float(grids.mean()),
                      object_on_rate=object_on, background_on_rate=background_on,
                      tau=tau)


def train(cfg: ExperimentConfig, force_keep_mask: bool = False):
    """Run the full training loop; returns (checkpoint_path, metrics rows).

    ``force_keep_mask`` pins the mask to all-ones while keeping adavipro
    mode's bookkeeping, for baseline-equivalence checks; the generator is
    then excluded from the graph and the optimizer.
    """
    cfg.validate()
    if not cfg.dataset:
        raise ConfigError("config.dataset is required for training")
    out_dir = Path(cfg.output_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    train_images, train_labels, train_boxes = load_split(cfg.dataset, "train")
    test_images, test_labels, test_boxes = load_split(cfg.dataset, "test")
    model = _build_model(cfg, train_images, train_labels)

    use_generator = cfg.mode == "adavipro" and not force_keep_mask
    groups = [ParamGroup([model.template.values], cfg.lr_prompt)]
    if use_generator:
        groups.append(ParamGroup(model.generator.trainable(), cfg.lr_generator))
    opt = SgdState(groups=groups, total_epochs=cfg.epochs)
    schedule = GumbelSchedule(tau=cfg.tau0, tau0=cfg.tau0, gamma=cfg.gamma)

    if use_generator:
        edge_all = _edge_input(train_images, cfg.edge_detection)
    n = train_images.shape[0]
    r = cfg.region_size
    rows: list[MetricsRow] = []
    for epoch in range(cfg.epochs):
        opt.epoch = epoch
        order = np.random.default_rng(
            np.random.SeedSequence(cfg.seed, spawn_key=(0, 4, epoch))).permutation(n)
        steps = n // cfg.batch_size
        ep_loss = 0.0
        ep_correct = 0
        ep_count = 0
        keep_sum = 0.0
        keep_cells = 0
        grid_rows, box_rows = [], []
        for step in range(steps):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            images_b, labels_b = train_images[idx], train_labels[idx]
            if use_generator:
                mask_pix, keep_grid = _soft_masks(model, edge_all[idx], schedule,
                                                  epoch, step)
            else:
                shape = (len(idx), 1) + train_images.shape[2:]
                mask_pix = Tensor(np.ones(shape))
                keep_grid = np.ones((len(idx), model.image_size // r,
                                     train_images.shape[3] // r))
            scores = _forward_scores(model, images_b, mask_pix)
            batch_loss = ad.cross_entropy(scores, labels_b)
            batch_loss.backward()
            sgd_step(opt)
            ep_loss += batch_loss.item() * len(idx)
            ep_correct += int(np.sum(np.argmax(scores.data, axis=1) == labels_b))
            ep_count += len(idx)
            keep_sum += float(keep_grid.sum())
            keep_cells += keep_grid.size
            grid_rows.append(keep_grid)
            box_rows.append(train_boxes[idx])
        tau_used = schedule.tau
        obj_on, bg_on = region_overlap_stats(np.concatenate(grid_rows),
                                             np.concatenate(box_rows), r)
        rows.append(MetricsRow(epoch=epoch, split="train",
                               loss=ep_loss / ep_count, accuracy=ep_correct / ep_count,
                               mask_on_rate=keep_sum / keep_cells,
                               object_on_rate=obj_on, background_on_rate=bg_on,
                               tau=tau_used))
        rows.append(_evaluate_arrays(model, test_images, test_labels, test_boxes,
                                     tau_used, epoch, "test"))
        schedule = anneal(schedule)

    metrics_path = out_dir / "metrics.csv"
    write_metrics(rows, metrics_path)
    ckpt_path = out_dir / "checkpoint.avpc"
    save_checkpoint(_checkpoint_entries(model, schedule, force_keep_mask), ckpt_path)
    return ckpt_path, rows


def _checkpoint_entries(model: Model, schedule: GumbelSchedule,
                        force_keep_mask: bool) -> dict[str, np.ndarray]:
    cfg = model.config
    entries: dict[str, np.ndarray] = {"prompt.values": model.template.values.data}
    if cfg.mode == "adavipro" and not force_keep_mask:
        entries["generator.fc_kernel"] = model.generator.fc_kernel.data
        entries["generator.fc_bias"] = model.generator.fc_bias.data
        entries["generator.fp_kernel"] = model.generator.fp_kernel.data
        entries["generator.fp_bias"] = model.generator.fp_bias.data
    entries.update(model.encoder.weights())
    entries["prototypes"] = model.prototypes.vectors
    meta = {
        "mode": float(MODES.index(cfg.mode)),
        "prompt_width": float(cfg.prompt_width),
        "region_size": float(cfg.region_size),
        "embed_dim": float(cfg.embed_dim),
        "tau0": cfg.tau0,
        "gamma": cfg.gamma,
        "epochs_completed": float(cfg.epochs),
        "tau_final": schedule.tau,
        "seed": float(cfg.seed),
        "straight_through": float(cfg.straight_through),
        "edge_detection": float(cfg.edge_detection),
        "image_size": float(model.image_size),
        "prototypes_per_class": float(model.prototypes.per_class_n),
        "force_keep_mask": float(force_keep_mask),
    }
    for key, value in meta.items():
        entries[f"meta.{key}"] = np.float64(value)
    return entries


def load_model(checkpoint_path) -> tuple[Model, float, int]:
    """Rebuild a Model from a checkpoint; returns (model, tau_final, epochs)."""
    entries = load_checkpoint(checkpoint_path)
    try:
        meta = {k.split(".", 1)[1]: float(v) for k, v in entries.items()
                if k.startswith("meta.")}
        mode = MODES[int(meta["mode"])]
        h = int(meta["image_size"])
        cfg = ExperimentConfig(
            mode=mode,
            prompt_width=int(meta["prompt_width"]),
            region_size=int(meta["region_size"]),
            embed_dim=int(meta["embed_dim"]),
            tau0=meta["tau0"],
            gamma=meta["gamma"],
            epochs=int(meta["epochs_completed"]),
            seed=int(meta["seed"]),
            straight_through=bool(meta["straight_through"]),
            edge_detection=bool(meta["edge_detection"]),
        )
        prompt = entries["prompt.values"]
        encoder = FrozenEncoder.from_weights(entries, seed=int(meta["seed"]))
        protos = ClassPrototypes(vectors=entries["prototypes"],
                                 per_class_n=int(meta["prototypes_per_class"]),
                                 seed=int(meta["seed"]))
    except KeyError as exc:
        raise ContractViolation(f"checkpoint missing entry: {exc}") from exc
    from .prompting import frame_support
    template = PromptTemplate(values=Tensor(prompt),
                              support=frame_support(h, prompt.shape[2],
                                                    cfg.prompt_width),
                              width=cfg.prompt_width)
    generator = None
    if mode == "adavipro" and not meta.get("force_keep_mask"):
        try:
            generator = MaskGeneratorParams(
                fc_kernel=Tensor(entries["generator.fc_kernel"]),
                fc_bias=Tensor(entries["generator.fc_bias"]),
                fp_kernel=Tensor(entries["generator.fp_kernel"]),
                fp_bias=Tensor(entries["generator.fp_bias"]),
                region_size=cfg.region_size, embed_dim=cfg.embed_dim)
        except KeyError as exc:
            raise ContractViolation(f"checkpoint missing entry: {exc}") from exc
    model = Model(config=cfg, template=template, generator=generator,
                  encoder=encoder, prototypes=protos, image_size=h)
    return model, meta["tau_final"], int(meta["epochs_completed"])


def evaluate(checkpoint_path, dataset_dir, split: str) -> MetricsRow:
    """Inference-path metrics for a stored checkpoint; mutates nothing."""
    model, tau_final, epochs = load_model(checkpoint_path)
    if model.generator is None and model.config.mode == "adavipro":
        # force_keep_mask checkpoints evaluate as all-keep
        model = replace_mode_keep(model)
    images, labels, boxes = load_split(dataset_dir, split)
    if images.shape[2] != model.image_size:
        raise ContractViolation(
            f"checkpoint image size {model.image_size} does not match "
            f"dataset {images.shape[2]}")
    if images.shape[2] % model.config.region_size:
        raise ContractViolation("dataset not divisible by checkpoint region size")
    return _evaluate_arrays(model, images, labels, boxes, tau_final, epochs, split)


def replace_mode_keep(model: Model) -> Model:
    cfg = replace(model.config, mode="vp-baseline")
    return Model(config=cfg, template=model.template, generator=None,
                 encoder=model.encoder, prototypes=model.prototypes,
                 image_size=model.image_size)


ABLATION_AXES = ("edge_detection", "gamma", "region_size", "embed_dim",
                 "prompt_width")


def _parse_axis_value(axis: str, raw: str):
    if axis == "edge_detection":
        low = str(raw).strip().lower()
        if low in ("1", "true", "on", "w/"):
            return True
        if low in ("0", "false", "off", "w/o"):
            return False
        raise ConfigError(f"bad edge_detection value {raw!r}")
    if axis == "gamma":
        return float(raw)
    return int(raw)


def ablate(base: ExperimentConfig, axis: str, values, out_dir):
    """Train+evaluate once per axis value with a shared seed; emit one CSV."""
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    h = None
    for raw in values:
        value = _parse_axis_value(axis, raw) if isinstance(raw, str) else raw
        run_cfg = replace(base, **{axis: value},
                          output_dir=str(out_dir / f"{axis}={value}"))
        row = {"axis": axis, "value": value, "accuracy": "", "mask_on_rate": "",
               "object_on_rate": "", "background_on_rate": "",
               "prompt_params": "", "generator_params": "", "error": ""}
        try:
            ckpt, _ = train(run_cfg)
            metrics = evaluate(ckpt, run_cfg.dataset, "test")
            if h is None:
                h = load_split(run_cfg.dataset, "test")[0].shape[2]
            row.update(accuracy=repr(metrics.accuracy),
                       mask_on_rate=repr(metrics.mask_on_rate),
                       object_on_rate=repr(metrics.object_on_rate),
                       background_on_rate=repr(metrics.background_on_rate),
                       prompt_params=count_prompt_params(h, h, run_cfg.prompt_width),
                       generator_params=(count_generator_params(run_cfg.embed_dim)
                                         if run_cfg.mode == "adavipro" else 0))
        except Exception as exc:  # record and continue with remaining grid points
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    csv_path = out_dir / "ablation.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return csv_path, rows


def export_masks(checkpoint_path, dataset_dir, count: int, out_dir) -> list[Path]:
    """Hard-mask PGMs plus raw/prompted per-channel renders for test images."""
    model, _, _ = load_model(checkpoint_path)
    images, labels, _ = load_split(dataset_dir, "test")
    if count > images.shape[0]:
        raise ContractViolation(
            f"count {count} exceeds dataset size {images.shape[0]}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    written: list[Path] = []
    r = model.config.region_size
    for i in range(count):
        image = images[i]
        if model.generator is not None:
            edge = _edge_input(image[None], model.config.edge_detection)
            grid = _hard_masks(model, edge)[0]
        else:
            grid = np.ones((model.image_size // r, image.shape[2] // r))
        mask_pix = np.repeat(np.repeat(grid, r, 0), r, 1)[None]
        prompted = image + model.template.values.data * model.template.support * mask_pix
        stem = f"sample{i:04d}_label{int(labels[i])}"
        mask_path = out / f"{stem}_mask.pgm"
        write_pgm(grid * 255.0, mask_path)
        written.append(mask_path)
        for c, name in enumerate("rgb"):
            raw_path = out / f"{stem}_raw_{name}.pgm"
            write_pgm(to_gray_render(image[c]), raw_path)
            prompted_path = out / f"{stem}_prompted_{name}.pgm"
            write_pgm(to_gray_render(prompted[c]), prompted_path)
            written.extend([raw_path, prompted_path])
    return written
