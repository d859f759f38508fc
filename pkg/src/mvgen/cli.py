"""Command-line surface: corpus generation, training, sampling, evaluation,
benchmarking, codebook inspection.

Every command resolves its configuration (JSON file over defaults, unknown
keys rejected), echoes the resolved tree to stdout and next to its primary
artifact, and derives all randomness from seeds in that tree. Exit codes:
0 success, 2 usage or precondition failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import datagen as dg
from . import metrics as mx
from . import pgmio
from . import prior as pr
from . import sampler as smp
from . import tokenizer as tok
from .numerics import ContractError, NumericError, OptimizerConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class ConfigError(ValueError):
    pass


# -- strict config parsing ------------------------------------------------------


def _strict(cls, data: dict, context: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")
    return data


@dataclasses.dataclass
class LabelConfig:
    id: int
    name: str
    family: str

    @classmethod
    def from_dict(cls, data: dict) -> "LabelConfig":
        return cls(**_strict(cls, data, "labels[]"))


@dataclasses.dataclass
class CorpusConfig:
    per_label: int = 500
    resolution: int = 32
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    master_seed: int = 2026
    noise_level: float = 1.0
    out_dir: str = "corpus"
    labels: list[LabelConfig] = dataclasses.field(default_factory=lambda: [
        LabelConfig(i, fam, fam) for i, fam in enumerate(dg.FAMILIES)])

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusConfig":
        data = dict(_strict(cls, data, "corpus config"))
        if "labels" in data:
            data["labels"] = [LabelConfig.from_dict(d) for d in data["labels"]]
        if "split" in data:
            data["split"] = tuple(data["split"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["split"] = list(self.split)
        return out


def _optimizer_from_dict(data: dict, defaults: OptimizerConfig) -> OptimizerConfig:
    fields = {f.name for f in dataclasses.fields(OptimizerConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown keys in optimizer config: {sorted(unknown)}")
    return dataclasses.replace(defaults, **data)


@dataclasses.dataclass
class TokenizerTrainConfig:
    corpus_dir: str = "corpus"
    resolution: int = 32
    schedule: tuple[int, ...] = (1, 2, 3, 4)
    vocab_size: int = 64
    embed_dim: int = 8
    beta_commit: float = 0.25
    ema_decay: float = 0.99
    dtype: str = "float32"
    steps: int = 5000
    batch_size: int = 16
    seed: int = 13
    model_seed: int = 11
    save_every: int = 1000
    checkpoint: str = "tokenizer.mvckpt"
    loss_csv: str = "tokenizer_loss.csv"
    optimizer: OptimizerConfig = dataclasses.field(default_factory=lambda: OptimizerConfig(
        peak_lr=3e-3, warmup_steps=150, total_steps=5000))

    @classmethod
    def from_dict(cls, data: dict) -> "TokenizerTrainConfig":
        data = dict(_strict(cls, data, "tokenizer training config"))
        base = cls()
        raw_optimizer = data.get("optimizer", {})
        if "schedule" in data:
            data["schedule"] = tuple(data["schedule"])
        if "optimizer" in data:
            data["optimizer"] = _optimizer_from_dict(raw_optimizer, base.optimizer)
        cfg = dataclasses.replace(base, **data)
        if "total_steps" not in raw_optimizer:
            cfg = dataclasses.replace(cfg, optimizer=dataclasses.replace(
                cfg.optimizer, total_steps=max(cfg.steps, 1)))
        return cfg

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["schedule"] = list(self.schedule)
        return out


@dataclasses.dataclass
class PriorTrainConfig:
    corpus_dir: str = "corpus"
    tokenizer_checkpoint: str = "tokenizer.mvckpt"
    depth: int = 4
    width: int = 128
    heads: int = 4
    cond_dropout_p: float = 0.1
    dtype: str = "float32"
    steps: int = 1500
    batch_size: int = 32
    seed: int = 19
    model_seed: int = 17
    save_every: int = 500
    checkpoint: str = "prior.mvckpt"
    loss_csv: str = "prior_loss.csv"
    optimizer: OptimizerConfig = dataclasses.field(default_factory=lambda: OptimizerConfig(
        peak_lr=1e-3, warmup_steps=100, total_steps=1500))

    @classmethod
    def from_dict(cls, data: dict) -> "PriorTrainConfig":
        data = dict(_strict(cls, data, "prior training config"))
        base = cls()
        raw_optimizer = data.get("optimizer", {})
        if "optimizer" in data:
            data["optimizer"] = _optimizer_from_dict(raw_optimizer, base.optimizer)
        cfg = dataclasses.replace(base, **data)
        if "total_steps" not in raw_optimizer:
            cfg = dataclasses.replace(cfg, optimizer=dataclasses.replace(
                cfg.optimizer, total_steps=max(cfg.steps, 1)))
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _echo_config(tree: dict, echo_path: str) -> None:
    text = json.dumps(tree, indent=2, sort_keys=True)
    print(text)
    os.makedirs(os.path.dirname(echo_path) or ".", exist_ok=True)
    with open(echo_path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def _write_loss_csv(path: str, curve: list[tuple[int, float, float]]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("step,lr,loss\n")
        for step, lr, loss in curve:
            fh.write(f"{step},{lr:.10g},{loss:.10g}\n")


def _read_pgm_dir(path: str) -> np.ndarray:
    names = sorted(n for n in os.listdir(path) if n.endswith(".pgm"))
    if len(names) < 2:
        raise ConfigError(f"need at least 2 PGM images in {path}")
    images = [pgmio.read_pgm(os.path.join(path, n)) for n in names]
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise ConfigError(f"mixed image sizes in {path}: {sorted(shapes)}")
    return np.stack(images)


# -- commands --------------------------------------------------------------------


def cmd_datagen(args) -> int:
    cfg = CorpusConfig.from_dict(_load_config_file(args.config))
    if cfg.per_label <= 0:
        raise ConfigError("per_label must be positive")
    out_dir = os.path.join(args.workdir, cfg.out_dir)
    specs = [dg.PhantomSpec(dg.DatasetLabel(l.id, l.name), l.family,
                            cfg.noise_level, cfg.master_seed) for l in cfg.labels]
    corpus = dg.build_corpus(specs, cfg.per_label, cfg.resolution,
                             split=cfg.split, master_seed=cfg.master_seed)
    dg.save_corpus(corpus, out_dir)
    _echo_config({"command": "datagen", "corpus": cfg.to_dict()},
                 os.path.join(out_dir, "corpus_config.json"))
    print(f"slices: {sum(len(v) for v in corpus.slices.values())}")
    print(f"manifest sha256: {corpus.manifest_hash()}")
    return EXIT_OK


def _train_tokenizer(args) -> int:
    cfg = TokenizerTrainConfig.from_dict(_load_config_file(args.config))
    corpus = dg.load_corpus(os.path.join(args.workdir, cfg.corpus_dir),
                            dtype=np.float32 if cfg.dtype == "float32" else np.float64)
    if corpus.resolution != cfg.resolution:
        raise ConfigError(f"corpus resolution {corpus.resolution} != config {cfg.resolution}")
    model_cfg = tok.TokenizerConfig(resolution=cfg.resolution, schedule=cfg.schedule,
                                    vocab_size=cfg.vocab_size, embed_dim=cfg.embed_dim,
                                    beta_commit=cfg.beta_commit, ema_decay=cfg.ema_decay,
                                    dtype=cfg.dtype)
    start_step = 0
    if args.resume:
        model, old = tok.load_tokenizer(args.resume)
        if tuple(model.config.schedule) != cfg.schedule:
            raise ConfigError("checkpoint schedule does not match the config")
        start_step = int(old.get("train_step", 0))
    else:
        model = tok.TokenizerModel.create(model_cfg, seed=cfg.model_seed)
    ckpt_path = os.path.join(args.workdir, cfg.checkpoint)
    label_names = {str(k): v for k, v in corpus.label_names.items()}
    extra = {"labels": label_names}

    curve: list[tuple[int, float, float]] = []
    remaining = cfg.steps - start_step
    step = start_step
    while remaining > 0:
        chunk = min(cfg.save_every, remaining)
        curve += tok.train_tokenizer(corpus.values["train"], model, cfg.optimizer,
                                     steps=chunk, batch_size=cfg.batch_size, seed=cfg.seed,
                                     start_step=step, warm_start=(step == 0), log_every=1)
        step += chunk
        remaining -= chunk
        tok.save_tokenizer(ckpt_path, model, extra_config=extra, train_step=step,
                           optimizer_state=True)
    if cfg.steps == 0 or start_step >= cfg.steps:
        tok.save_tokenizer(ckpt_path, model, extra_config=extra, train_step=start_step,
                           optimizer_state=True)
    _write_loss_csv(os.path.join(args.workdir, cfg.loss_csv), curve)
    _echo_config({"command": "train tokenizer", "tokenizer": cfg.to_dict()},
                 ckpt_path + ".config.json")
    if curve:
        print(f"final loss: {curve[-1][2]:.6f}")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def _train_prior(args) -> int:
    cfg = PriorTrainConfig.from_dict(_load_config_file(args.config))
    tok_path = os.path.join(args.workdir, cfg.tokenizer_checkpoint)
    if not os.path.exists(tok_path):
        raise ConfigError(f"tokenizer checkpoint not found: {tok_path} "
                          "(train the tokenizer first)")
    tokenizer, tok_config = tok.load_tokenizer(tok_path)
    corpus = dg.load_corpus(os.path.join(args.workdir, cfg.corpus_dir),
                            dtype=tokenizer.config.np_dtype())
    labels_cfg = tok_config.get("labels") or {
        str(k): v for k, v in corpus.label_names.items()}
    n_labels = len(labels_cfg)
    prior_cfg = pr.PriorConfig(depth=cfg.depth, width=cfg.width, heads=cfg.heads,
                               vocab_size=tokenizer.config.vocab_size,
                               schedule=tuple(tokenizer.config.schedule),
                               n_labels=n_labels, code_dim=tokenizer.config.embed_dim,
                               cond_dropout_p=cfg.cond_dropout_p, dtype=cfg.dtype)
    start_step = 0
    if args.resume:
        model, old = pr.load_prior(args.resume)
        if tuple(model.config.schedule) != tuple(tokenizer.config.schedule):
            raise ConfigError("checkpoint schedule does not match the tokenizer")
        start_step = int(old.get("train_step", 0))
    else:
        model = pr.PriorModel.create(prior_cfg, tokenizer.codebook.embeddings,
                                     seed=cfg.model_seed)

    train_grids = tok.encode_batch(tokenizer, corpus.values["train"])
    train_labels = corpus.labels["train"]
    ckpt_path = os.path.join(args.workdir, cfg.checkpoint)
    extra = {"labels": labels_cfg, "tokenizer_checkpoint": cfg.tokenizer_checkpoint}

    curve: list[tuple[int, float, float]] = []
    remaining = cfg.steps - start_step
    step = start_step
    while remaining > 0:
        chunk = min(cfg.save_every, remaining)
        curve += pr.train_prior(train_grids, train_labels, model, cfg.optimizer,
                                steps=chunk, batch_size=cfg.batch_size, seed=cfg.seed,
                                start_step=step, log_every=1)
        step += chunk
        remaining -= chunk
        pr.save_prior(ckpt_path, model, extra_config=extra, train_step=step,
                      optimizer_state=True)
    if cfg.steps == 0 or start_step >= cfg.steps:
        pr.save_prior(ckpt_path, model, extra_config=extra, train_step=start_step,
                      optimizer_state=True)
    _write_loss_csv(os.path.join(args.workdir, cfg.loss_csv), curve)
    _echo_config({"command": "train prior", "prior": cfg.to_dict()},
                 ckpt_path + ".config.json")
    if curve:
        print(f"final loss: {curve[-1][2]:.6f}")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.component == "tokenizer":
        return _train_tokenizer(args)
    return _train_prior(args)


def _label_id_by_name(labels_cfg: dict, name: str) -> int:
    by_name = {v: int(k) for k, v in labels_cfg.items()}
    if name not in by_name:
        raise ConfigError(f"unknown label '{name}'; known labels: {sorted(by_name)}")
    return by_name[name]


def cmd_sample(args) -> int:
    tokenizer, _ = tok.load_tokenizer(os.path.join(args.workdir, args.tokenizer))
    model, prior_config = pr.load_prior(os.path.join(args.workdir, args.prior))
    labels_cfg = prior_config.get("labels") or {}
    label_id = _label_id_by_name(labels_cfg, args.label)
    cfg = smp.SamplingConfig(cfg_scale=None if args.no_cfg else args.cfg,
                             top_k=args.top_k, top_p=args.top_p,
                             temperature=args.temperature, seed=args.seed)
    out_dir = os.path.join(args.workdir, args.out)
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "command": "sample",
        "label": args.label,
        "count": args.count,
        "sampling": dataclasses.asdict(cfg),
        "tokenizer": args.tokenizer,
        "prior": args.prior,
    }
    total_passes = 0
    for index in range(args.count):
        per_image = dataclasses.replace(cfg, seed=cfg.seed + index)
        result = smp.generate(model, tokenizer, label_id, per_image)
        stem = f"{args.label}_{per_image.seed}_{index:04d}"
        pgmio.write_pgm(os.path.join(out_dir, stem + ".pgm"), result.values)
        if args.tokens:
            tok.write_token_stream(os.path.join(out_dir, stem + ".mvtk"),
                                   result.pyramid, model.config.vocab_size)
        total_passes += result.forward_passes
    _echo_config(meta, os.path.join(out_dir, "sample_config.json"))
    print(f"generated {args.count} images under {out_dir}")
    if args.count:
        print(f"forward passes per image: {total_passes // args.count}")
    return EXIT_OK


def cmd_eval(args) -> int:
    real = _read_pgm_dir(os.path.join(args.workdir, args.real))
    fake = _read_pgm_dir(os.path.join(args.workdir, args.fake))
    if real.shape[1:] != fake.shape[1:]:
        raise ConfigError("real and fake image sizes differ")
    embedder = mx.FeatureEmbedder.from_checkpoint(os.path.join(args.workdir, args.embedder))
    if real.shape[1] != embedder.model.config.resolution:
        raise ConfigError("image size does not match the embedder's resolution")
    report = mx.evaluate(real, fake, embedder, median_time_s=args.time,
                         model=args.model, seed=args.seed)
    csv_path = os.path.join(args.workdir, args.out)
    fresh = not os.path.exists(csv_path)
    with open(csv_path, "a", encoding="ascii") as fh:
        if fresh:
            fh.write(mx.CSV_HEADER + "\n")
        fh.write(report.csv_row() + "\n")
    _echo_config({"command": "eval", "real": args.real, "fake": args.fake,
                  "embedder": args.embedder, "model": args.model,
                  "time": args.time, "seed": args.seed, "out": args.out},
                 csv_path + ".config.json")
    print(report.text_report())
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.mode == "verify-table1":
        print(json.dumps({"command": "bench verify-table1",
                          "log_base": args.log_base}, sort_keys=True))
        base = {"10": 10.0, "e": np.e}[args.log_base]
        rows, worst = mx.verify_table1(log_base=base)
        for row, value in rows:
            print(f"{row.model:12s} time={row.time_s:5.2f}s fid={row.fid:7.2f} "
                  f"published={row.efficiency:6.2f} recomputed={value:8.4f} "
                  f"dev={abs(value - row.efficiency):.4f}")
        print(f"max absolute deviation: {worst:.4f} (tolerance {mx.EFFICIENCY_TOLERANCE})")
        if worst > mx.EFFICIENCY_TOLERANCE:
            print("verification FAILED", file=sys.stderr)
            return EXIT_NUMERIC
        return EXIT_OK

    # measure
    print(json.dumps({"command": "bench measure", "tokenizer": args.tokenizer,
                      "prior": args.prior, "label": args.label, "count": args.count,
                      "cfg": args.cfg, "seed": args.seed, "real": args.real},
                     sort_keys=True))
    tokenizer, _ = tok.load_tokenizer(os.path.join(args.workdir, args.tokenizer))
    model, prior_config = pr.load_prior(os.path.join(args.workdir, args.prior))
    label_id = _label_id_by_name(prior_config.get("labels") or {}, args.label)
    counter = {"i": 0, "passes": 0}

    def one():
        cfg = smp.SamplingConfig(cfg_scale=args.cfg, seed=args.seed + counter["i"])
        result = smp.generate(model, tokenizer, label_id, cfg)
        counter["i"] += 1
        counter["passes"] = result.forward_passes
        return result

    timing = mx.time_generation(one, n_images=args.count, warmup=min(2, args.count - 1))
    fid = float("nan")
    efficiency = float("nan")
    if args.real:
        real = _read_pgm_dir(os.path.join(args.workdir, args.real))
        fakes = []
        for i in range(max(args.count, 16)):
            cfg = smp.SamplingConfig(cfg_scale=args.cfg, seed=args.seed + 10_000 + i)
            fakes.append(smp.generate(model, tokenizer, label_id, cfg).values)
        embedder = mx.FeatureEmbedder(tokenizer)
        report = mx.evaluate(real, np.stack(fakes), embedder,
                             median_time_s=timing.median_s, model="local", seed=args.seed)
        fid, efficiency = report.fid, report.efficiency
    print(f"median_time_s={timing.median_s:.6f} fid={fid:.6f} efficiency={efficiency:.6f}")
    print(f"forward passes per image: {counter['passes']} "
          f"(2K for {model.schedule.num_scales} scales with guidance)")
    print(f"fingerprint: {timing.fingerprint}")
    return EXIT_OK


def cmd_inspect_codebook(args) -> int:
    tokenizer, _ = tok.load_tokenizer(os.path.join(args.workdir, args.checkpoint))
    names = sorted(n for n in os.listdir(os.path.join(args.workdir, args.eval_dir))
                   if n.endswith(".pgm"))
    if not names:
        raise ConfigError("need at least one PGM image to inspect usage")
    images = np.stack([pgmio.read_pgm(os.path.join(args.workdir, args.eval_dir, n))
                       for n in names])
    hist, utilization, heatmap = tok.codebook_usage(tokenizer, images)
    out_path = os.path.join(args.workdir, args.out)
    # heatmap pixels are round(frequency * 255), so they sum to ~255
    pgmio.write_pgm(out_path, heatmap)
    _echo_config({"command": "inspect-codebook", "checkpoint": args.checkpoint,
                  "eval_dir": args.eval_dir, "out": args.out,
                  "images": len(names)}, out_path + ".config.json")
    print(f"codes: {hist.size}  utilization: {utilization:.4f}")
    print(f"heatmap: {out_path}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvgen",
                                     description="multi-scale token image generation")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("datagen", help="generate the phantom corpus")
    p.add_argument("--workdir", required=True)
    p.add_argument("--config", default=None, help="JSON corpus config")
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train", help="train the tokenizer or the prior")
    p.add_argument("component", choices=["tokenizer", "prior"])
    p.add_argument("--workdir", required=True)
    p.add_argument("--config", default=None, help="JSON training config")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("sample", help="generate conditional samples")
    p.add_argument("--workdir", required=True)
    p.add_argument("--tokenizer", default="tokenizer.mvckpt")
    p.add_argument("--prior", default="prior.mvckpt")
    p.add_argument("--label", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cfg", type=float, default=4.0, help="guidance strength")
    p.add_argument("--no-cfg", action="store_true", help="disable guidance entirely")
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--tokens", action="store_true", help="also write MVTK token streams")
    p.add_argument("--out", default="samples")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("eval", help="FID/KID/efficiency between two image dirs")
    p.add_argument("--workdir", required=True)
    p.add_argument("--real", required=True)
    p.add_argument("--fake", required=True)
    p.add_argument("--embedder", required=True, help="tokenizer checkpoint")
    p.add_argument("--model", default="local")
    p.add_argument("--time", type=float, default=0.0, help="median seconds per image")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="verify the published efficiency table or measure locally")
    p.add_argument("mode", choices=["verify-table1", "measure"])
    p.add_argument("--log-base", choices=["10", "e"], default="10",
                   help="diagnostic: natural log visibly fails the table")
    p.add_argument("--workdir", default=".")
    p.add_argument("--tokenizer", default="tokenizer.mvckpt")
    p.add_argument("--prior", default="prior.mvckpt")
    p.add_argument("--label", default=dg.FAMILIES[0])
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--cfg", type=float, default=4.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--real", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("inspect-codebook", help="usage histogram heatmap + utilization")
    p.add_argument("--workdir", required=True)
    p.add_argument("--checkpoint", default="tokenizer.mvckpt")
    p.add_argument("--eval-dir", required=True)
    p.add_argument("--out", default="codebook_usage.pgm")
    p.set_defaults(fn=cmd_inspect_codebook)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ContractError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    raise SystemExit(main())
