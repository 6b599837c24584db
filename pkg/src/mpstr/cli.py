"""Command-line entry points.

Commands: gen-data, train, eval, predict, dump-masks, ablate, selfcheck.
Every command exits 0 on success and nonzero with a one-line diagnostic on
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import schedules
from .config import ExperimentConfig
from .evaluate import MODES, evaluate_model
from .inference import DecodePolicy, recognize_ar, recognize_nar
from .model import load_model
from .toydata import GenConfig, generate_dataset, load_dataset, read_pgm
from .training import Trainer


def cmd_gen_data(args) -> int:
    root = Path(args.out)
    counts = {"train": args.train_n, "val": args.val_n, "test": args.test_n}
    seeds = {split: args.seed + i for i, split in enumerate(counts)}
    for split, n in counts.items():
        if n <= 0:
            continue
        cfg = GenConfig(
            n=n, seed=seeds[split], split=split,
            image_height=args.image_height, image_width=args.image_width,
            min_len=args.min_len, max_len=args.max_len,
        )
        manifest = generate_dataset(cfg, root / split)
        print(f"{split}\t{manifest.root / 'manifest.tsv'}\t{len(manifest)} samples")
    return 0


def cmd_train(args) -> int:
    cfg = ExperimentConfig.from_json_file(args.config)
    if args.data:
        cfg.data_dir = args.data
    if args.out:
        cfg.out_dir = args.out
    if not cfg.data_dir:
        raise ValueError("no dataset: set data_dir in the config or pass --data")
    dataset = load_dataset(Path(cfg.data_dir) / "train"
                           if (Path(cfg.data_dir) / "train").exists() else cfg.data_dir)
    trainer = Trainer(cfg)
    if args.resume:
        trainer.resume(args.resume)
    ckpt, log, elapsed = trainer.fit(dataset, cfg.out_dir)
    print(f"checkpoint\t{ckpt}")
    print(f"log\t{log}")
    print(f"seconds\t{elapsed:.1f}")
    return 0


def cmd_eval(args) -> int:
    model, _, meta = load_model(args.checkpoint)
    dataset = load_dataset(args.data, model.charset)
    modes = tuple(args.modes.split(",")) if args.modes else MODES
    report = evaluate_model(model, dataset, modes=modes,
                            ar_refine=args.ar_refine, nar_refine=args.nar_refine)
    print(report.summary())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.summary() + "\n", encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    from .inference import attention_dump

    model, _, _ = load_model(args.checkpoint)
    policy = DecodePolicy(args.mode, args.refine)
    recognize = recognize_ar if args.mode == "ar" else recognize_nar
    dumps = []
    for path in args.images:
        image = read_pgm(path)
        rec = recognize(image, model, policy)
        conf = float(np.mean(rec.per_char_scores)) if rec.per_char_scores else 0.0
        print(f"{path}\t{rec.mode}\t{rec.text}\t{rec.length_used}\t{conf:.4f}")
        if args.dump_attention:
            dumps.append(f"# {path}\n{attention_dump(image, model, args.mode)}")
    if args.dump_attention:
        Path(args.dump_attention).write_text("\n\n".join(dumps) + "\n", encoding="utf-8")
    return 0


def cmd_dump_masks(args) -> int:
    L, T = args.length, args.max_len or args.length
    if args.kind == "train":
        if not args.perm:
            raise ValueError("train masks need --perm, e.g. --perm 1,3,2")
        perm = [int(v) for v in args.perm.split(",")]
        sched = schedules.build_train_mask(perm, L, T)
    elif args.kind == "ar":
        sched = schedules.build_ar_infer_mask(L, T)
    elif args.kind == "nar":
        sched = schedules.build_nar_mask(L, T)
    else:
        sched = schedules.build_cloze_mask(L, T)
    print(sched.serialize())
    return 0


def _ablation_variants(suite: str, base: ExperimentConfig) -> dict[str, ExperimentConfig]:
    """Named config variants mirroring the ablation tables."""
    out: dict[str, ExperimentConfig] = {}
    wanted = suite.split(",") if suite else ["lm", "length", "k-sweep", "perturb"]

    def derive(**kw) -> ExperimentConfig:
        cfg = ExperimentConfig.from_dict(base.to_dict())
        for key, value in kw.items():
            if hasattr(cfg.train, key):
                setattr(cfg.train, key, value)
            else:
                setattr(cfg, key, value)
        return ExperimentConfig.from_dict(cfg.to_dict())  # re-run consistency rules

    if "lm" in wanted:
        out["baseline-ar"] = derive(variant="baseline-ar")
        out["plm-only"] = derive(variant="plm-only")
        out["full"] = derive(variant="full")
    if "length" in wanted:
        out["no-length"] = derive(variant="no-length")
        out["char-length"] = derive(length_head="char")
    if "k-sweep" in wanted:
        # The K sweep protocol trains without length perturbation.
        for k in (1, 2, 6, 12):
            out[f"k{k}"] = derive(permutations=k, perturb_ratio=0.0)
    if "perturb" in wanted:
        for ratio in (0.0, 0.25, 0.5):
            out[f"perturb{int(ratio * 100)}"] = derive(perturb_ratio=ratio)
    return out


def cmd_ablate(args) -> int:
    base = ExperimentConfig.from_json_file(args.config) if args.config else ExperimentConfig()
    if args.data:
        base.data_dir = args.data
    if args.iterations:
        base.train.iterations = args.iterations
    root = Path(args.out)
    train_set = load_dataset(Path(base.data_dir) / "train")
    test_set = load_dataset(Path(base.data_dir) / "test")

    rows = []
    for name, cfg in _ablation_variants(args.suite, base).items():
        cfg.out_dir = str(root / name)
        trainer = Trainer(cfg)
        trainer.fit(train_set, cfg.out_dir)
        report = evaluate_model(trainer.model, test_set)
        rows.append((name, report))
        print(f"done\t{name}\tar={report.mode_accuracy['ar']:.4f}\t"
              f"nar={report.mode_accuracy['nar']:.4f}\t"
              f"cloze_gt={report.mode_accuracy['cloze_gt']:.4f}")

    table = ["variant\tar\tnar\tcloze_gt\tlength_acc"]
    for name, report in rows:
        table.append(
            f"{name}\t{report.mode_accuracy['ar']:.4f}\t{report.mode_accuracy['nar']:.4f}"
            f"\t{report.mode_accuracy['cloze_gt']:.4f}\t{report.length_accuracy:.4f}"
        )
    text = "\n".join(table)
    root.mkdir(parents=True, exist_ok=True)
    (root / "ablation.tsv").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_selfcheck(args) -> int:
    import itertools

    from .gradcheck import run_full_gradcheck

    checked = 0
    for L in range(1, 6):
        T = args.max_len
        for perm in itertools.permutations(range(1, L + 1)):
            sched = schedules.build_train_mask(list(perm), L, T)
            for step in range(1, L + 2):
                row = perm[step - 1] - 1 if step <= L else L
                expect = schedules.oracle_mask(list(perm), L, step, "train")
                if schedules.row_sets(sched, row) != expect:
                    print(f"selfcheck: mask mismatch perm={perm} step={step}", file=sys.stderr)
                    return 1
                checked += 1
    err, worst, n = run_full_gradcheck(depth=1, dim=16, max_len=4, labels=["ab"],
                                       chunk=512)
    ok = err <= args.tolerance
    print(f"mask-oracle rows checked\t{checked}")
    print(f"gradcheck max rel err\t{err:.3e}\tworst={worst}\tparams={n}")
    if not ok:
        print(f"selfcheck: gradient error {err:.3e} above {args.tolerance}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpstr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic glyph corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--train-n", type=int, default=2000)
    g.add_argument("--val-n", type=int, default=200)
    g.add_argument("--test-n", type=int, default=200)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--min-len", type=int, default=1)
    g.add_argument("--max-len", type=int, default=8)
    g.add_argument("--image-height", type=int, default=16)
    g.add_argument("--image-width", type=int, default=64)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--data", default="")
    t.add_argument("--out", default="")
    t.add_argument("--resume", default="")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--modes", default="")
    e.add_argument("--ar-refine", type=int, default=None)
    e.add_argument("--nar-refine", type=int, default=None)
    e.add_argument("--out", default="")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="recognize PGM images")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--mode", choices=["ar", "nar"], default="ar")
    r.add_argument("--refine", type=int, default=None)
    r.add_argument("--dump-attention", default="",
                   help="write first-stage attention weights to this file")
    r.add_argument("images", nargs="+")
    r.set_defaults(func=cmd_predict)

    d = sub.add_parser("dump-masks", help="print attention mask grids")
    d.add_argument("--kind", choices=["train", "ar", "nar", "cloze"], required=True)
    d.add_argument("--perm", default="")
    d.add_argument("--length", type=int, required=True)
    d.add_argument("--max-len", type=int, default=0)
    d.set_defaults(func=cmd_dump_masks)

    a = sub.add_parser("ablate", help="train and compare ablation variants")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", default="")
    a.add_argument("--iterations", type=int, default=600)
    a.add_argument("--suite", default="")
    a.set_defaults(func=cmd_ablate)

    s = sub.add_parser("selfcheck", help="mask-oracle and gradient-check suites")
    s.add_argument("--max-len", type=int, default=8)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"mpstr {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
