"""Command-line front end.

Exit codes: 0 success, 1 usage error (usage text on stderr), 2 runtime
failure. Every subcommand accepts --seed and all numeric output is
deterministic given it.
"""

from __future__ import annotations

import argparse
import sys
from itertools import combinations
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as dat
from . import fusion
from . import teachers as tch
from . import tensor as T
from . import trainer
from .config import load_config, with_overrides
from .fusion import Adapter
from .tensor import Tensor, run_grad_check
from .vit import ViTConfig, ViTEncoder, param_count


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors must exit 1, not argparse's 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="fusekd", description="multi-teacher distillation engine")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-data", help="write synthetic train/test dataset files")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n-train", type=int, default=2048)
    g.add_argument("--n-test", type=int, default=512)
    g.add_argument("--image-size", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)

    m = sub.add_parser("make-teachers", help="train and save the toy teacher bank")
    m.add_argument("--data", required=True, help="dataset directory")
    m.add_argument("--out", required=True, help="output directory")
    m.add_argument("--epochs", type=int, default=40)
    m.add_argument("--embed-dim", type=int, default=32)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument(
        "--flavors",
        default=",".join(tch.FLAVORS),
        help="comma-separated subset of: " + ",".join(tch.FLAVORS),
    )

    d = sub.add_parser("distill", help="run a distillation training job")
    d.add_argument("--config", required=True)
    d.add_argument("--seed", type=int, default=None, help="override config seed")

    e = sub.add_parser("eval", help="linear-probe a student checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--probe-epochs", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)

    st = sub.add_parser("sweep-teachers", help="teacher-combination ablation sweep")
    st.add_argument("--config", required=True)
    st.add_argument(
        "--subsets",
        default=None,
        help="semicolon-separated index tuples, e.g. '0;1;2;0,1;0,1,2' (default: all non-empty)",
    )
    st.add_argument("--probe-epochs", type=int, default=200)
    st.add_argument("--seed", type=int, default=None)

    sl = sub.add_parser("sweep-losses", help="loss-mode ablation sweep")
    sl.add_argument("--config", required=True)
    sl.add_argument("--probe-epochs", type=int, default=200)
    sl.add_argument("--seed", type=int, default=None)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    gc.add_argument("--tiny", action="store_true", help="tiny end-to-end config")
    gc.add_argument("--seed", type=int, default=0)

    ic = sub.add_parser("inspect-ckpt", help="summarize a checkpoint file")
    ic.add_argument("path")
    ic.add_argument("--seed", type=int, default=0)
    return p


def _cmd_gen_data(args) -> int:
    train_path, test_path = dat.gen_data(
        args.out, args.n_train, args.n_test, args.seed, args.image_size
    )
    print(f"wrote {train_path} ({args.n_train} records)")
    print(f"wrote {test_path} ({args.n_test} records)")
    return 0


def _cmd_make_teachers(args) -> int:
    train_ds, _ = dat.load_splits(args.data)
    images = train_ds.float_images()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = tch.DEFAULT_TEACHER_CONFIG
    cfg = ViTConfig(
        image_size=train_ds.images.shape[-1],
        patch_size=base.patch_size,
        depth=base.depth,
        embed_dim=args.embed_dim,
        num_heads=base.num_heads,
    )
    flavors = [f.strip() for f in args.flavors.split(",") if f.strip()]
    for flavor in flavors:
        if flavor not in tch.FLAVORS:
            raise ValueError(f"unknown flavor {flavor!r}")
        enc = tch.make_toy_teacher(
            args.seed, flavor, images=images, config=cfg, epochs=args.epochs
        )
        label = tch.FLAVOR_LABELS[flavor]
        path = out / f"{label}.dmtc"
        tch.save_teacher(enc, path, label=label)
        print(f"wrote {path} ({flavor})")
    return 0


def _cmd_distill(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    result = trainer.train(cfg, log=lambda msg: print(msg, file=sys.stderr))
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics: {result.metrics_path}")
    if result.final_loss is not None:
        print(f"final_loss: {result.final_loss:.8f}")
    return 0


def _cmd_eval(args) -> int:
    _, student, _, _, _ = trainer.load_train_checkpoint(args.ckpt)
    train_ds, test_ds = dat.load_splits(args.data)
    acc = trainer.linear_probe(student, train_ds, test_ds, probe_epochs=args.probe_epochs)
    print(f"probe_accuracy: {acc:.4f}")
    return 0


def _apply_seed(cfg, seed):
    return cfg if seed is None else with_overrides(cfg, seed=seed)


def _cmd_sweep_teachers(args) -> int:
    cfg = _apply_seed(load_config(args.config), args.seed)
    m = len(cfg.teacher_paths)
    if args.subsets:
        subsets = [
            tuple(int(i) for i in part.split(",") if i != "")
            for part in args.subsets.split(";")
            if part.strip()
        ]
    else:  # all non-empty subsets, singletons first
        subsets = []
        for size in range(1, m + 1):
            subsets.extend(combinations(range(m), size))
    table = trainer.sweep_teacher_combinations(cfg, subsets, probe_epochs=args.probe_epochs)
    text = table.render()
    print(text)
    out = Path(cfg.out_dir) / "sweep_teachers.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")
    return 0


def _cmd_sweep_losses(args) -> int:
    cfg = _apply_seed(load_config(args.config), args.seed)
    table = trainer.sweep_loss_modes(cfg, probe_epochs=args.probe_epochs)
    text = table.render()
    print(text)
    out = Path(cfg.out_dir) / "sweep_losses.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    reports = []

    def check(name, fn, params, tol=1e-4):
        rep = run_grad_check(fn, params, tol=tol)
        reports.append((name, rep))
        print(f"{name}:")
        print(rep.summary())

    x = Tensor(rng.normal(size=(3, 5)), parameter=True, name="x")
    w = Tensor(rng.normal(size=(5, 4)), parameter=True, name="w")
    check("matmul+gelu", lambda: T.sum_all(T.gelu(T.matmul(x, w))), [x, w])

    v = Tensor(rng.normal(size=(4, 6)), parameter=True, name="v")
    target = rng.normal(size=(4, 6))
    check("softmax-kl", lambda: fusion.token_fusion_loss(v, target), [v])

    cfg = ViTConfig(image_size=16, patch_size=4, depth=2, embed_dim=8, num_heads=2)
    enc = ViTEncoder(cfg, seed=args.seed)
    adapter = Adapter.create(8, 16, seed=args.seed + 1)
    img = rng.random((1, 3, 16, 16))
    t_tokens = rng.normal(size=(1, cfg.num_patches + 1, 16))
    t_map = fusion.tokens_to_feature_map(t_tokens, cfg.grid, cfg.grid)

    def end_to_end():
        proj = adapter.project(enc.encode_batch(img))
        smap = fusion.student_feature_map(proj, cfg.grid, cfg.grid)
        return T.add(
            fusion.token_fusion_loss(proj, t_tokens),
            fusion.spatial_fusion_loss(smap, t_map),
        )

    params = enc.parameters() + adapter.parameters()
    if args.tiny:
        check("end-to-end-combined-loss", end_to_end, params)

    failed = [name for name, rep in reports if not rep.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return 2
    print("all gradient checks passed")
    return 0


def _cmd_inspect(args) -> int:
    info = ckpt.describe(args.path)
    print(f"version: {info['version']}")
    meta = info["meta"]
    if meta.get("kind"):
        print(f"kind: {meta['kind']}")
    if meta.get("label"):
        print(f"label: {meta['label']}")
    print(f"{'tensor':<28s} {'shape':<18s} {'dtype':<6s} {'size':>10s}")
    for row in info["tensors"]:
        shape = "x".join(map(str, row["shape"])) or "scalar"
        print(f"{row['name']:<28s} {shape:<18s} {row['dtype']:<6s} {row['size']:>10d}")
    print(f"total_parameters: {info['total_parameters']}")
    if meta.get("kind") == "teacher" and "config" in meta:
        expected = param_count(ViTConfig(**meta["config"]))
        print(f"config_param_count: {expected}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "make-teachers": _cmd_make_teachers,
    "distill": _cmd_distill,
    "eval": _cmd_eval,
    "sweep-teachers": _cmd_sweep_teachers,
    "sweep-losses": _cmd_sweep_losses,
    "gradcheck": _cmd_gradcheck,
    "inspect-ckpt": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help exits 0
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except (
        trainer.NonFiniteLossError,
        ckpt.CheckpointError,
        dat.DatasetError,
        tch.BankMismatchError,
        RuntimeError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
