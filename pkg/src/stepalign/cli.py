"""Command-line entry point: train, eval, gen-synth, align, gradcheck.

Every run is driven by a JSON config file (all knobs, one seed) plus
``--set key=value`` overrides; no hidden entropy sources. ``train`` writes
a loss-history CSV, a final checkpoint, and an exact config echo into the
output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path


from .data import DatasetError, GeneratorConfig, generate_synthetic, load_dataset, save_dataset
from .model import (
    FUSION_MODES,
    POOLING_MODES,
    ModelConfig,
    ModelParams,
    model_grad_check,
    pool,
    similarity_for_example,
)
from .objectives import ObjectiveConfig, predict
from .training import (
    SgdConfig,
    evaluate,
    hasty_baseline,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .autodiff import Graph

GRADCHECK_TOLERANCE = 1e-4


@dataclass
class RunConfig:
    """Every knob of a run; unknown keys in the file are rejected."""

    seed: int = 0
    embedding_dim: int = 32
    item_hidden_dim: int = 32
    step_hidden_dim: int = 32
    question_hidden_dim: int = 32
    mlp_hidden_dims: tuple = (32,)
    max_positions: int = 4
    share_candidate_encoder: bool = True
    objective: str = "obj1"
    margin: float = 0.1
    pooling: str = "constrained"
    fusion: str = "none"
    image_hidden_dim: int = 32
    attention_dim: int = 32
    lr_first_half: float = 0.4
    lr_second_half: float = 0.08
    momentum: float = 0.9
    epochs: int = 30
    train_dataset: str | None = None
    eval_dataset: str | None = None

    def __post_init__(self):
        self.mlp_hidden_dims = tuple(self.mlp_hidden_dims)
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"config: unknown pooling mode '{self.pooling}'")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"config: unknown fusion mode '{self.fusion}'")
        if self.objective not in ("obj1", "obj2"):
            raise ValueError(f"config: unknown objective '{self.objective}'")

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"config: unknown keys {sorted(unknown)}")
        return cls(**raw)

    def model_config(self, vocab_size: int, feature_dim) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            embedding_dim=self.embedding_dim,
            item_hidden_dim=self.item_hidden_dim,
            step_hidden_dim=self.step_hidden_dim,
            question_hidden_dim=self.question_hidden_dim,
            mlp_hidden_dims=self.mlp_hidden_dims,
            max_positions=self.max_positions,
            share_candidate_encoder=self.share_candidate_encoder,
            fusion=self.fusion,
            feature_dim=feature_dim if self.fusion != "none" else None,
            image_hidden_dim=self.image_hidden_dim,
            attention_dim=self.attention_dim,
        )

    def sgd_config(self) -> SgdConfig:
        return SgdConfig(
            lr_first_half=self.lr_first_half,
            lr_second_half=self.lr_second_half,
            momentum=self.momentum,
            epochs=self.epochs,
            rng_seed=self.seed,
        )

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(margin=self.margin, objective_kind=self.objective, rng_seed=self.seed)


def _parse_override(kv: str):
    if "=" not in kv:
        raise ValueError(f"--set expects key=value, got '{kv}'")
    key, raw = kv.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_run_config(path, overrides) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"config {path}: parse error: {e}") from e
        if not isinstance(raw, dict):
            raise ValueError(f"config {path}: expected a JSON object")
    for kv in overrides or []:
        key, value = _parse_override(kv)
        raw[key] = value
    return RunConfig.from_dict(raw)


def _echo_config(config: RunConfig, path: Path) -> None:
    doc = asdict(config)
    doc["mlp_hidden_dims"] = list(config.mlp_hidden_dims)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    config = load_run_config(args.config, args.set)
    if not config.train_dataset:
        raise ValueError("config: train_dataset is required for training")
    dataset = load_dataset(config.train_dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = ModelParams(config.model_config(dataset.vocab_size, dataset.feature_dim), seed=config.seed)
    history, state = train(
        params, dataset, config.objective_config(), config.sgd_config(), pooling_mode=config.pooling
    )
    lines = ["epoch,mean_loss,lr"]
    lines += [f"{h.epoch},{h.mean_loss!r},{h.lr!r}" for h in history]
    (out / "history.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    save_checkpoint(out / "final.ckpt", params, state)
    _echo_config(config, out / "config.echo.json")
    final = history[-1].mean_loss if history else float("nan")
    print(f"trained {len(history)} epochs on {len(dataset.examples)} examples; final mean loss {final:.6f}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    if args.baseline == "hasty":
        report = hasty_baseline(dataset)
    else:
        if args.checkpoint is None:
            raise ValueError("eval: --checkpoint is required unless --baseline is given")
        params, _ = load_checkpoint(args.checkpoint)
        report = evaluate(params, dataset, pooling_mode=args.pooling)
    print(f"accuracy={report.accuracy:.4f} p@2={report.p_at_2:.4f}")
    if args.per_example:
        for rec in report.records:
            print(json.dumps(asdict(rec)))
    return 0


def cmd_gen_synth(args) -> int:
    config = GeneratorConfig(
        num_examples=args.num_examples,
        num_steps_range=(args.min_steps, args.max_steps),
        vocab_size=args.vocab_size,
        tokens_per_step=args.tokens_per_step,
        distractor_mode=args.distractor_mode,
        with_images=args.with_images,
        feature_dim=args.feature_dim,
        seed=args.seed,
        split=args.split,
    )
    dataset = generate_synthetic(config)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.examples)} examples to {args.out}")
    return 0


def cmd_align(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    matches = [ex for ex in dataset.examples if ex.id == args.example]
    if not matches:
        raise ValueError(f"align: no example with id '{args.example}' in {args.dataset}")
    ex = matches[0]
    g = Graph()
    s = similarity_for_example(g, params, ex)
    align = pool(s, args.pooling)
    predicted, ranking = predict(align)
    print(f"example: {ex.id}")
    print(f"S (4 x {s.num_steps}):")
    for row in s.values:
        print("  " + " ".join(f"{v:8.4f}" for v in row))
    print(f"assignments: {list(align.assignments)}")
    print("m: " + " ".join(f"{v:.4f}" for v in align.selected))
    print(f"pick_order: {list(align.pick_order)}")
    print(f"ranking: {list(ranking)}")
    print(f"predicted: {predicted}")
    print(f"gold: {ex.answer}")
    return 0


def cmd_gradcheck(args) -> int:
    config = load_run_config(args.config, args.set)
    err, attempts = model_grad_check(
        objective_kind=config.objective,
        fusion=config.fusion,
        seed=config.seed,
        pooling_mode=config.pooling,
        break_gradient=args.break_gradient,
    )
    print(f"max relative error: {err:.2g} (seed attempts: {attempts})")
    if err < GRADCHECK_TOLERANCE:
        print(f"PASS (< {GRADCHECK_TOLERANCE:g})")
        return 0
    print(f"FAIL (>= {GRADCHECK_TOLERANCE:g})")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepalign",
        description="Latent alignment for procedural textual cloze: train, evaluate, inspect.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("train", help="train a model from a run config", formatter_class=fmt)
    p.add_argument("--config", required=True, help="run config JSON path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline", formatter_class=fmt)
    p.add_argument("--checkpoint", default=None, help="checkpoint path")
    p.add_argument("--dataset", required=True, help="dataset JSON path")
    p.add_argument("--pooling", default="constrained", choices=POOLING_MODES, help="pooling mode")
    p.add_argument("--baseline", default=None, choices=["hasty"], help="report a baseline instead")
    p.add_argument("--per-example", action="store_true", help="print per-example JSON lines")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--num-examples", type=int, default=100, help="number of examples")
    p.add_argument("--min-steps", type=int, default=4, help="fewest recipe steps")
    p.add_argument("--max-steps", type=int, default=8, help="most recipe steps")
    p.add_argument("--vocab-size", type=int, default=160, help="token id space")
    p.add_argument("--tokens-per-step", type=int, default=4, help="signature tokens per step")
    p.add_argument(
        "--distractor-mode", default="easy", choices=["easy", "adversarial", "image_only"],
        help="wrong-candidate construction",
    )
    p.add_argument("--with-images", action="store_true", help="attach per-step image features")
    p.add_argument("--feature-dim", type=int, default=64, help="image feature width")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--split", default="train", help="split tag written to the file")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("align", help="print S and the alignment for one example", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="checkpoint path")
    p.add_argument("--dataset", required=True, help="dataset JSON path")
    p.add_argument("--example", required=True, help="example id")
    p.add_argument("--pooling", default="constrained", choices=POOLING_MODES, help="pooling mode")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser(
        "gradcheck", help="finite-difference check of the configured model loss", formatter_class=fmt
    )
    p.add_argument("--config", default=None, help="run config JSON path (defaults apply if omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument(
        "--break-gradient",
        action="store_true",
        help="route the loss through a deliberately wrong backward rule (negative control)",
    )
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, DatasetError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
