"""Command-line entry points: train, eval, generate, ablate, make-toy.

Exit codes: 0 success, 2 config error, 3 runtime failure. Every command is
reproducible from (config file, seed) alone; run directories receive the
fully resolved config.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np
import torch
from PIL import Image

from .config import (ConfigError, RunConfig, build_palette, echo_config,
                     generator_config, generic_palette, load_config, run_root)
from .data import (PairingError, PaletteError, image_to_uint8, load_dataset,
                   load_label, resize_sample, SemanticLayout, split_synthetic,
                   save_dataset)
from .generator import Generator
from .metrics import (ColorOracleSegmenter, InceptionEmbedder, RandomConvEmbedder,
                      SplitSpec, TorchScriptSegmenter, evaluate_split, render_table,
                      write_report)
from .seeding import torch_generator
from .toy import MAX_TOY_CLASSES, make_toy_domains, toy_palette
from .training import (TrainState, init_state, load_checkpoint, train)

ALIGNMENT_PRESET = (
    ("A", "whole image / LPIPS on image level",
     {"patchwise_generation": False, "grid_k_align": 1}),
    ("B", "whole image / LPIPS on patch level (4)",
     {"patchwise_generation": False, "grid_k_align": 2}),
    ("C", "whole image / LPIPS on patch level (16)",
     {"patchwise_generation": False, "grid_k_align": 4}),
    ("D", "individual patches / LPIPS on patch level (4)",
     {"patchwise_generation": True, "grid_k_align": 2}),
)

DISCRIMINATION_PRESET = (
    ("A", "whole-image D: patches (4) / ensemble: patches (4)",
     {"grid_k_disc_u": 2, "grid_k_disc_ensemble": 2}),
    ("B", "whole-image D: patches (4) / ensemble: whole image",
     {"grid_k_disc_u": 2, "grid_k_disc_ensemble": 1}),
    ("C", "whole-image D: whole image / ensemble: whole image",
     {"grid_k_disc_u": 1, "grid_k_disc_ensemble": 1}),
    ("D", "whole-image D: whole image / ensemble: patches (16)",
     {"grid_k_disc_u": 1, "grid_k_disc_ensemble": 4}),
    ("E", "whole-image D: whole image / ensemble: patches (4)",
     {"grid_k_disc_u": 1, "grid_k_disc_ensemble": 2}),
)

PRESETS = {"alignment": ALIGNMENT_PRESET, "discrimination": DISCRIMINATION_PRESET}


def _palette_for(num_classes: int):
    return toy_palette(num_classes) if num_classes <= MAX_TOY_CLASSES \
        else generic_palette(num_classes)


def _build_embedder(run: RunConfig):
    if run.metrics.embedder == "random_conv":
        return RandomConvEmbedder(run.metrics.embedder_seed, run.metrics.embedder_dim)
    return InceptionEmbedder(run.metrics.embedder)


def _build_segmenter(run: RunConfig, palette):
    name = run.metrics.segmenter
    if name == "none":
        return None
    if name == "toy_oracle":
        return ColorOracleSegmenter(palette)
    try:
        return TorchScriptSegmenter(name)
    except Exception as e:
        print(f"warning: segmenter {name!r} unavailable ({e}); "
              f"mIoU will be omitted", file=sys.stderr)
        return None


def _load_domains(run: RunConfig):
    palette = build_palette(run)
    if not run.data.synthetic_root or not run.data.real_root:
        raise ConfigError("data.synthetic_root and data.real_root must be set")
    syn = load_dataset(run.data.synthetic_root, "paired_synthetic", palette)
    real = load_dataset(run.data.real_root, "unpaired_real", palette)
    syn_train, syn_test = split_synthetic(syn, run.data.test_count)
    return palette, syn_train, syn_test, real


def _eval_generator(state: TrainState) -> Generator:
    if state.ema_shadow is not None:
        gen = Generator(state.generator_config)
        gen.load_state_dict(state.ema_shadow)
        return gen
    return state.generator


def _evaluate(run: RunConfig, state: TrainState, split: SplitSpec, seed: int) -> dict:
    palette = _palette_for(state.generator_config.num_classes)
    embedder = _build_embedder(run)
    segmenter = _build_segmenter(run, palette)
    subset = run.metrics.kid_subset_size or None
    return evaluate_split(
        _eval_generator(state), split, embedder, segmenter, seed=seed,
        batch_size=run.metrics.eval_batch_size,
        kid_subset_size=subset, kid_subsets=run.metrics.kid_subsets,
    )


def cmd_train(args) -> int:
    run = load_config(args.config, args.set)
    run_dir = args.out or os.path.join(run_root(run), f"train-seed{run.train.seed}")
    os.makedirs(run_dir, exist_ok=True)
    echo_config(run, run_dir)
    _, syn_train, _, real = _load_domains(run)
    state = init_state(run.train, generator_config(run), run.backbone,
                       run.discriminator)
    train(state, syn_train, real,
          log_path=os.path.join(run_dir, "train_log.jsonl"),
          checkpoint_dir=os.path.join(run_dir, "checkpoints"))
    print(run_dir)
    return 0


def cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    run = load_config(args.config, args.set)
    palette = _palette_for(state.generator_config.num_classes)
    labels = load_dataset(args.labels, "paired_synthetic", palette)
    references = load_dataset(args.references, "unpaired_real", palette)
    split = SplitSpec(name=args.split_name, labels=labels, references=references)
    report = _evaluate(run, state, split, args.seed)
    write_report(report, args.out, stem=args.split_name)
    print(render_table(report))
    return 0


def cmd_generate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    gen = _eval_generator(state).eval()
    gcfg = state.generator_config
    os.makedirs(args.out, exist_ok=True)
    files = sorted(f for f in os.listdir(args.labels) if f.lower().endswith(".png"))
    written, skipped = 0, 0
    for fname in files:
        try:
            ids = load_label(os.path.join(args.labels, fname))
            layout = SemanticLayout(ids, gcfg.num_classes)
            if layout.shape != tuple(gcfg.output_hw):
                dummy = np.zeros((3,) + layout.shape, dtype=np.float32)
                _, layout = resize_sample(dummy, layout, gcfg.output_hw)
            onehot = torch.from_numpy(layout.onehot())[None]
        except (PaletteError, PairingError, OSError, ValueError) as e:
            print(f"warning: skipping label {fname!r}: {e}", file=sys.stderr)
            skipped += 1
            continue
        stem = os.path.splitext(fname)[0]
        z = torch.randn(1, gcfg.noise_dim, *gcfg.output_hw,
                        generator=torch_generator(args.seed, "gen_z", stem))
        with torch.no_grad():
            image = gen(onehot, z)[0].numpy()
        Image.fromarray(image_to_uint8(image)).save(os.path.join(args.out, fname))
        written += 1
    print(f"wrote {written} images, skipped {skipped}")
    return 0


def cmd_ablate(args) -> int:
    if args.preset not in PRESETS:
        raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    run = load_config(args.config, args.set)
    out_dir = args.out or os.path.join(run_root(run), f"ablate-{args.preset}")
    os.makedirs(out_dir, exist_ok=True)
    echo_config(run, out_dir)
    _, syn_train, syn_test, real = _load_domains(run)

    rows = []
    for letter, description, overrides in PRESETS[args.preset]:
        row = {"config": letter, "setting": description}
        try:
            train_cfg = dataclasses.replace(run.train, **overrides)
            state = init_state(train_cfg, generator_config(run), run.backbone,
                               run.discriminator)
            row_dir = os.path.join(out_dir, letter)
            os.makedirs(row_dir, exist_ok=True)
            train(state, syn_train, real,
                  log_path=os.path.join(row_dir, "train_log.jsonl"),
                  checkpoint_dir=row_dir)
            split = SplitSpec("toy-test", labels=syn_test, references=real)
            report = _evaluate(run, state, split, run.train.seed)
            report.pop("_generated", None)
            row.update(fid=report["fid"], miou=report["miou"], kid=report["kid"])
        except Exception as e:  # record and continue with remaining configs
            row["error"] = f"{type(e).__name__}: {e}"
            print(f"warning: config {letter} failed: {row['error']}", file=sys.stderr)
        rows.append(row)

    table = _ablation_table(args.preset, rows)
    with open(os.path.join(out_dir, "table.txt"), "w") as f:
        f.write(table + "\n")
    with open(os.path.join(out_dir, "results.json"), "w") as f:
        json.dump(rows, f, indent=2)
    print(table)
    return 0


def _ablation_table(preset: str, rows) -> str:
    header = f"{'config':<7} {'setting':<55} {'FID':>10} {'mIoU':>8} {'KID':>10}"
    lines = [f"ablation preset: {preset}", header, "-" * len(header)]
    for row in rows:
        if "error" in row:
            lines.append(f"{row['config']:<7} {row['setting']:<55} FAILED: {row['error']}")
        else:
            miou = "n/a" if row["miou"] is None else f"{row['miou']:.4f}"
            lines.append(
                f"{row['config']:<7} {row['setting']:<55} "
                f"{row['fid']:>10.4f} {miou:>8} {row['kid']:>10.6f}"
            )
    return "\n".join(lines)


def cmd_make_toy(args) -> int:
    try:
        synthetic, real = make_toy_domains(
            args.seed, args.n_synthetic, args.n_real,
            num_classes=args.num_classes, hw=(args.height, args.width),
        )
    except ValueError as e:
        raise ConfigError(str(e))
    syn_root = os.path.join(args.out, "synthetic")
    real_root = os.path.join(args.out, "real")
    save_dataset(synthetic, syn_root)
    save_dataset(real, real_root)
    print(syn_root)
    print(real_root)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synsis",
        description="Synthetic-to-real semantic image synthesis: training, "
                    "evaluation, generation, and ablation runs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_set(p):
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value by dotted key, "
                            "e.g. --set train.lr=0.0002")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="run directory (default: run root)")
    add_set(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", required=True, help="dataset root providing labels")
    p.add_argument("--references", required=True,
                   help="dataset root providing reference images")
    p.add_argument("--out", required=True)
    p.add_argument("--split-name", default="split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="optional config for metric options")
    add_set(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="generate one image per label map")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--labels", required=True, help="directory of label PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ablate", help="run an ablation preset end to end")
    p.add_argument("--preset", required=True, choices=sorted(PRESETS))
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    add_set(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("make-toy", help="write the procedural toy domains to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-synthetic", type=int, default=200)
    p.add_argument("--n-real", type=int, default=200)
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=128)
    p.set_defaults(func=cmd_make_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
