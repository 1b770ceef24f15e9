"""Distillation training loop, linear probing, and the ablation sweeps.

Pipeline per step: paired views -> frozen teacher forwards -> fused targets
-> student forward + adapter -> loss per mode -> AdamW update. All
randomness derives from the run seed; single-threaded runs are
byte-reproducible (metrics records deliberately exclude wall time).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment as aug
from . import checkpoint as ckpt
from . import data as dat
from . import fusion
from . import optim
from . import tensor as T
from .config import LOSS_MODES, TrainConfig, parse_config, serialize_config
from .fusion import Adapter
from .teachers import TeacherBank, load_bank
from .tensor import GradTape, Tensor
from .vit import ViTEncoder

_MASK63 = (1 << 63) - 1


class NonFiniteLossError(RuntimeError):
    """Raised when a step produces non-finite values; carries the batch index."""

    def __init__(self, message: str, batch_index: int | None = None):
        super().__init__(message)
        self.batch_index = batch_index


def derive_seed(*parts: int) -> int:
    """Deterministic child seed from integer parts (SeedSequence mixing)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


def sample_seed(epoch_base: int, sample_index: int) -> int:
    # per-sample stream: global (per-epoch) seed XOR sample index
    return (epoch_base ^ sample_index) & _MASK63


@dataclass
class StepLosses:
    total: float
    token: float
    spatial: float


@dataclass
class EpochMetrics:
    epoch: int
    loss_total: float
    loss_token: float
    loss_spatial: float
    lr: float
    wall_time: float  # console-only; never serialized (byte-determinism)

    def record(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss_total": self.loss_total,
            "loss_token": self.loss_token,
            "loss_spatial": self.loss_spatial,
            "lr": self.lr,
        }


@dataclass
class RunMetrics:
    epochs: list[EpochMetrics] = field(default_factory=list)
    probe_accuracy: float | None = None


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Path
    metrics: RunMetrics
    final_loss: float | None


def _build_views(
    images: np.ndarray, seeds: list[int], cfg: aug.AugmentConfig
) -> tuple[np.ndarray, np.ndarray]:
    b = images.shape[0]
    teacher_views = np.empty_like(images)
    student_views = np.empty_like(images)
    for i in range(b):
        pair = aug.make_views(images[i], np.random.default_rng(seeds[i]), cfg)
        teacher_views[i] = pair.teacher_view
        student_views[i] = pair.student_view
    return teacher_views, student_views


def _loss_for_mode(
    mode: str,
    proj: Tensor,
    fused_tokens: np.ndarray,
    fused_map: np.ndarray,
    grid: int,
) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """Returns (loss, token_term, spatial_term); terms not in the gradient are None."""
    if mode == "tfd":
        lt = fusion.token_fusion_loss(proj, fused_tokens)
        return lt, lt, None
    if mode == "sfd":
        smap = fusion.student_feature_map(proj, grid, grid)
        ls = fusion.spatial_fusion_loss(smap, fused_map)
        return ls, None, ls
    if mode == "mse":
        lt = fusion.mse_token_term(proj, fused_tokens)
        smap = fusion.student_feature_map(proj, grid, grid)
        ls = fusion.mse_spatial_term(smap, fused_map)
        return T.add(lt, ls), lt, ls
    lt = fusion.token_fusion_loss(proj, fused_tokens)
    smap = fusion.student_feature_map(proj, grid, grid)
    ls = fusion.spatial_fusion_loss(smap, fused_map)
    return T.add(lt, ls), lt, ls


def _locate_bad_sample(
    images: np.ndarray,
    seeds: list[int],
    augment_cfg: aug.AugmentConfig,
    bank: TeacherBank,
    student: ViTEncoder,
    adapter: Adapter,
    loss_mode: str,
) -> int | None:
    grid = bank.config.grid
    for i in range(images.shape[0]):
        try:
            tv, sv = _build_views(images[i : i + 1], seeds[i : i + 1], augment_cfg)
            outs = bank.forward_all(tv)
            fused_tokens = fusion.fuse_tokens([o.array for o in outs])
            fused_map = fusion.tokens_to_feature_map(fused_tokens, grid, grid)
            proj = adapter.project(student.encode_batch(sv))
            _loss_for_mode(loss_mode, proj, fused_tokens, fused_map, grid)
        except ValueError:
            return i
    return None


def distill_step(
    images: np.ndarray,
    seeds: list[int],
    augment_cfg: aug.AugmentConfig,
    bank: TeacherBank,
    student: ViTEncoder,
    adapter: Adapter,
    opt_state: optim.AdamWState,
    lr: float,
    loss_mode: str = "tfd+sfd",
) -> StepLosses:
    """One optimizer step over a batch of raw [0,1] images."""
    if loss_mode not in LOSS_MODES:
        raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
    grid = bank.config.grid
    params = student.parameters() + adapter.parameters()
    try:
        teacher_views, student_views = _build_views(images, seeds, augment_cfg)
        outs = bank.forward_all(teacher_views)  # frozen: never on tape
        fused_tokens = fusion.fuse_tokens([o.array for o in outs])
        fused_map = fusion.tokens_to_feature_map(fused_tokens, grid, grid)
        with GradTape() as tape:
            tokens = student.encode_batch(student_views)
            proj = adapter.project(tokens)
            loss, lt, ls = _loss_for_mode(loss_mode, proj, fused_tokens, fused_map, grid)
        grads = tape.gradients(loss, params)
        optim.adamw_step(params, grads, opt_state, lr)
    except ValueError as exc:
        bad = _locate_bad_sample(
            images, seeds, augment_cfg, bank, student, adapter, loss_mode
        )
        raise NonFiniteLossError(
            f"non-finite value during step (batch index {bad}): {exc}", batch_index=bad
        ) from exc
    return StepLosses(
        total=loss.item(),
        token=lt.item() if lt is not None else 0.0,
        spatial=ls.item() if ls is not None else 0.0,
    )


def _student_tensors(student: ViTEncoder, adapter: Adapter) -> dict[str, np.ndarray]:
    out = {f"student.{n}": t.array for n, t in student.named_tensors()}
    out["adapter.weight"] = adapter.weight.array
    out["adapter.bias"] = adapter.bias.array
    return out


def save_train_checkpoint(
    path: str | Path,
    cfg: TrainConfig,
    student: ViTEncoder,
    adapter: Adapter,
    opt_state: optim.AdamWState,
    step: int,
) -> None:
    tensors = _student_tensors(student, adapter)
    names = [n for n, _ in student.named_tensors()] + ["adapter.weight", "adapter.bias"]
    for name, m, v in zip(names, opt_state.m, opt_state.v):
        tensors[f"opt.m.{name}"] = m
        tensors[f"opt.v.{name}"] = v
    meta = {
        "kind": "train_state",
        "config": serialize_config(cfg),
        "step": step,
        "opt_t": opt_state.t,
        "seed": cfg.seed,
    }
    ckpt.save_checkpoint(path, tensors, meta=meta)


def load_train_checkpoint(path: str | Path):
    """Returns (config, student, adapter, opt_state, step)."""
    tensors, meta = ckpt.load_checkpoint(path)
    if meta.get("kind") != "train_state":
        raise ckpt.MetadataError(f"{path}: not a training checkpoint")
    cfg = parse_config(meta["config"])
    student = ViTEncoder(cfg.student, seed=0)
    student.load_arrays(
        {n[len("student.") :]: a for n, a in tensors.items() if n.startswith("student.")}
    )
    adapter = Adapter(
        weight=Tensor(tensors["adapter.weight"], parameter=True, name="adapter_w"),
        bias=Tensor(tensors["adapter.bias"], parameter=True, name="adapter_b"),
    )
    params = student.parameters() + adapter.parameters()
    names = [n for n, _ in student.named_tensors()] + ["adapter.weight", "adapter.bias"]
    opt_state = optim.init_adamw(params)
    opt_state.m = [np.asarray(tensors[f"opt.m.{n}"], dtype=np.float64) for n in names]
    opt_state.v = [np.asarray(tensors[f"opt.v.{n}"], dtype=np.float64) for n in names]
    opt_state.t = int(meta.get("opt_t", 0))
    return cfg, student, adapter, opt_state, int(meta.get("step", 0))


def train(cfg: TrainConfig, log=None) -> TrainResult:
    """Full distillation run; deterministic given cfg.seed (single-threaded)."""
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        train_ds, _ = dat.load_splits(cfg.dataset)
    except (OSError, dat.DatasetError) as exc:
        raise RuntimeError(f"cannot load dataset from {cfg.dataset!r}: {exc}") from exc
    bank = load_bank(list(cfg.teacher_paths))
    tcfg = bank.config
    if (cfg.student.image_size, cfg.student.patch_size) != (
        tcfg.image_size,
        tcfg.patch_size,
    ):
        raise ValueError("student and teachers must share resolution and patch size")

    student = ViTEncoder(cfg.student, seed=derive_seed(cfg.seed, 1))
    adapter = Adapter.create(
        cfg.student.embed_dim, bank.embed_dim, seed=derive_seed(cfg.seed, 2)
    )
    params = student.parameters() + adapter.parameters()
    opt_state = optim.init_adamw(params)

    images = train_ds.float_images()
    n = len(train_ds)
    steps_per_epoch = max(1, -(-n // cfg.batch_size))
    metrics = RunMetrics()
    metrics_path = out_dir / "metrics.ndjson"
    final_path = out_dir / "student_final.dmtc"

    if cfg.epochs == 0:
        metrics_path.write_text("")
        save_train_checkpoint(final_path, cfg, student, adapter, opt_state, step=0)
        return TrainResult(final_path, metrics_path, metrics, None)

    schedule = optim.ScheduleConfig(
        base_lr=cfg.schedule.base_lr,
        warmup_epochs=cfg.schedule.warmup_epochs,
        total_epochs=cfg.epochs,
        steps_per_epoch=steps_per_epoch,
        floor_lr=cfg.schedule.floor_lr,
    )
    global_step = 0
    with open(metrics_path, "w") as metrics_fh:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            order = np.random.default_rng(derive_seed(cfg.seed, 3, epoch)).permutation(n)
            epoch_base = derive_seed(cfg.seed, 4, epoch)
            sums = np.zeros(3)
            lr_epoch = optim.lr_at(global_step, schedule)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                seeds = [sample_seed(epoch_base, int(i)) for i in idx]
                lr = optim.lr_at(global_step, schedule)
                losses = distill_step(
                    images[idx], seeds, cfg.augment, bank, student, adapter,
                    opt_state, lr, cfg.loss_mode,
                )
                sums += (losses.total, losses.token, losses.spatial)
                global_step += 1
            em = EpochMetrics(
                epoch=epoch,
                loss_total=sums[0] / steps_per_epoch,
                loss_token=sums[1] / steps_per_epoch,
                loss_spatial=sums[2] / steps_per_epoch,
                lr=lr_epoch,
                wall_time=time.perf_counter() - t0,
            )
            metrics.epochs.append(em)
            metrics_fh.write(json.dumps(em.record(), sort_keys=True) + "\n")
            if log:
                log(
                    f"epoch {epoch + 1}/{cfg.epochs} loss={em.loss_total:.6f} "
                    f"(token={em.loss_token:.6f} spatial={em.loss_spatial:.6f}) "
                    f"lr={em.lr:.2e} {em.wall_time:.1f}s"
                )
            if cfg.save_interval and (epoch + 1) % cfg.save_interval == 0 and epoch + 1 < cfg.epochs:
                save_train_checkpoint(
                    out_dir / f"ckpt_ep{epoch + 1:04d}.dmtc",
                    cfg, student, adapter, opt_state, step=global_step,
                )
    save_train_checkpoint(final_path, cfg, student, adapter, opt_state, step=global_step)
    return TrainResult(final_path, metrics_path, metrics, metrics.epochs[-1].loss_total)


# ------------------------------------------------------------- linear probe


def class_token_features(encoder: ViTEncoder, images: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Frozen-forward class-token embeddings, (n, D)."""
    feats = []
    with T.no_tape():
        for start in range(0, images.shape[0], chunk):
            out = encoder.encode_batch(images[start : start + chunk])
            feats.append(out.array[:, 0, :])
    return np.concatenate(feats, axis=0)


def fit_linear_head(
    train_x: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    test_y: np.ndarray,
    num_classes: int,
    iters: int = 200,
    lr: float = 0.05,
    weight_decay: float = 1e-4,
) -> float:
    """Full-batch softmax regression (Adam); returns held-out accuracy."""
    if len(np.unique(train_y)) < 2:
        raise ValueError("probe needs at least two classes in the training labels")
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-8
    xs = (train_x - mu) / sd
    xt = (test_x - mu) / sd
    n, d = xs.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), train_y.astype(int)] = 1.0
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    mw = np.zeros_like(w); vw = np.zeros_like(w)
    mb = np.zeros_like(b); vb = np.zeros_like(b)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    for t in range(1, iters + 1):
        logits = xs @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        gw = xs.T @ g + weight_decay * w
        gb = g.sum(axis=0)
        mw = beta1 * mw + (1 - beta1) * gw; vw = beta2 * vw + (1 - beta2) * gw * gw
        mb = beta1 * mb + (1 - beta1) * gb; vb = beta2 * vb + (1 - beta2) * gb * gb
        bc1 = 1 - beta1**t; bc2 = 1 - beta2**t
        w -= lr * (mw / bc1) / (np.sqrt(vw / bc2) + eps)
        b -= lr * (mb / bc1) / (np.sqrt(vb / bc2) + eps)
    pred = (xt @ w + b).argmax(axis=1)
    return float((pred == test_y.astype(int)).mean())


def linear_probe(
    encoder: ViTEncoder,
    train_ds: dat.Dataset,
    test_ds: dat.Dataset,
    probe_epochs: int = 200,
) -> float:
    """Accuracy of a linear head on frozen class-token features."""
    train_x = class_token_features(encoder, train_ds.float_images())
    test_x = class_token_features(encoder, test_ds.float_images())
    k = int(max(train_ds.labels.max(), test_ds.labels.max())) + 1
    return fit_linear_head(
        train_x, train_ds.labels, test_x, test_ds.labels, k, iters=probe_epochs
    )


# ------------------------------------------------------------------- sweeps


@dataclass
class SweepRow:
    label: str
    final_loss: float
    probe_accuracy: float
    delta_pp: float | None = None  # percentage points vs the sweep baseline
    note: str = ""


@dataclass
class SweepTable:
    title: str
    baseline_label: str
    rows: list[SweepRow]

    def render(self) -> str:
        width = max(28, max(len(r.label) for r in self.rows) + 2)
        lines = [
            self.title,
            "(desk-scale toy benchmark; numbers are not comparable to full-scale training)",
            f"{'setting':<{width}s} {'final_loss':>12s} {'probe_acc':>10s} {'delta':>8s}  note",
            "-" * (width + 44),
        ]
        for r in self.rows:
            delta = f"({r.delta_pp:+.1f})" if r.delta_pp is not None else ""
            lines.append(
                f"{r.label:<{width}s} {r.final_loss:>12.6f} {100 * r.probe_accuracy:>9.1f}% {delta:>8s}  {r.note}"
            )
        return "\n".join(lines)


def _run_and_probe(cfg: TrainConfig, probe_epochs: int = 200) -> tuple[float, float]:
    result = train(cfg)
    _, student, _, _, _ = load_train_checkpoint(result.checkpoint_path)
    train_ds, test_ds = dat.load_splits(cfg.dataset)
    acc = linear_probe(student, train_ds, test_ds, probe_epochs=probe_epochs)
    return result.final_loss if result.final_loss is not None else float("nan"), acc


def sweep_teacher_combinations(
    cfg: TrainConfig, subsets: list[tuple[int, ...]], probe_epochs: int = 200
) -> SweepTable:
    """Train once per teacher subset at a fixed seed/budget and tabulate."""
    if not subsets:
        raise ValueError("need at least one subset")
    bank = load_bank(list(cfg.teacher_paths))
    rows: list[SweepRow] = []
    results: dict[tuple[int, ...], tuple[float, float]] = {}
    for subset in subsets:
        if not subset:
            raise ValueError("subsets must be non-empty")
        paths = tuple(cfg.teacher_paths[i] for i in subset)
        label = "+".join(bank.labels[i] for i in subset)
        sub_cfg = replace(
            cfg,
            teacher_paths=paths,
            out_dir=str(Path(cfg.out_dir) / ("teachers_" + "_".join(map(str, subset)))),
        )
        results[tuple(subset)] = _run_and_probe(sub_cfg, probe_epochs)
    singles = {s: r for s, r in results.items() if len(s) == 1}
    best_single = max((acc for _, acc in singles.values()), default=None)
    full = tuple(range(len(cfg.teacher_paths)))
    for subset in subsets:
        loss, acc = results[tuple(subset)]
        label = "+".join(bank.labels[i] for i in subset)
        delta = None
        if best_single is not None and len(subset) > 1:
            delta = 100.0 * (acc - best_single)
        note = "all teachers (comparison baseline)" if tuple(subset) == full else ""
        rows.append(SweepRow(label, loss, acc, delta, note))
    return SweepTable(
        title="teacher-combination sweep",
        baseline_label="best single teacher",
        rows=rows,
    )


def sweep_loss_modes(cfg: TrainConfig, probe_epochs: int = 200) -> SweepTable:
    """Train once per loss mode {tfd, sfd, tfd+sfd, mse} and tabulate."""
    results: dict[str, tuple[float, float]] = {}
    for mode in ("tfd", "sfd", "tfd+sfd", "mse"):
        sub_cfg = replace(
            cfg,
            loss_mode=mode,
            out_dir=str(Path(cfg.out_dir) / f"loss_{mode.replace('+', '_')}"),
        )
        results[mode] = _run_and_probe(sub_cfg, probe_epochs)
    best_single = max(results["tfd"][1], results["sfd"][1])
    rows = []
    for mode in ("tfd", "sfd", "tfd+sfd", "mse"):
        loss, acc = results[mode]
        delta = 100.0 * (acc - best_single) if mode in ("tfd+sfd", "mse") else None
        note = "combined (comparison baseline)" if mode == "tfd+sfd" else ""
        rows.append(SweepRow(mode, loss, acc, delta, note))
    return SweepTable(
        title="loss-mode sweep", baseline_label="best single loss", rows=rows
    )
