"""Command-line entry point.

Subcommands: extract (wav to feature files), synth (generate a
synthetic keyword dataset), train, eval, and ablate (the shift/block
sweep). Configuration comes from an INI file with [frontend], [sdc]
and [model] sections; command-line flags override file values. Exit
codes: 0 success, 1 runtime or data error, 2 usage error. The
SDCKWS_LOG environment variable (debug/info/warning/error) sets log
verbosity on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import glob
import logging
import os
import sys
from dataclasses import fields

from . import data as data_module
from . import metrics as metrics_module
from . import model as model_module
from .errors import KwsError
from .features import (
    FEATURE_NAMES,
    FrontEndConfig,
    SdcConfig,
    make_front_end,
    write_features,
)

LOG = logging.getLogger("sdckws")


class UsageError(Exception):
    """Bad flags or configuration keys; maps to exit code 2."""


def _setup_logging():
    name = os.environ.get("SDCKWS_LOG", "info").upper()
    level = getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")


_FRONTEND_CASTS = {
    f.name: (float if f.type == "float" else int) for f in fields(FrontEndConfig)
}
_SDC_KEYS = ("n", "d", "p", "k")
_MODEL_INT_KEYS = ("conv_filters", "kernel", "stride_t", "gru_hidden",
                   "embed_dim", "char_embed_dim", "disc_hidden", "batch_size",
                   "seed")
_MODEL_FLOAT_KEYS = ("dropout", "lr")
_MODEL_KEYS = set(_MODEL_INT_KEYS) | set(_MODEL_FLOAT_KEYS) | {
    "feature", "dropout_after_conv"}
_TRUE_WORDS = ("1", "true", "yes", "on")
_FALSE_WORDS = ("0", "false", "no", "off")


def load_ini(path) -> dict:
    """Read the config file, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as handle:
        parser.read_file(handle)
    known = {
        "frontend": set(_FRONTEND_CASTS),
        "sdc": set(_SDC_KEYS),
        "model": _MODEL_KEYS,
    }
    values = {}
    for section in parser.sections():
        if section not in known:
            raise UsageError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in known[section]:
                raise UsageError(f"unknown key {key!r} in section [{section}]")
            values[(section, key)] = value
    return values


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in _TRUE_WORDS:
        return True
    if lowered in _FALSE_WORDS:
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def build_model_config(args) -> model_module.ModelConfig:
    """Defaults, then config file values, then flag overrides."""
    ini = load_ini(args.config) if getattr(args, "config", None) else {}
    front_kwargs = {}
    for name, cast in _FRONTEND_CASTS.items():
        if ("frontend", name) in ini:
            try:
                front_kwargs[name] = cast(ini[("frontend", name)])
            except ValueError:
                raise UsageError(
                    f"bad value for frontend.{name}: {ini[('frontend', name)]!r}"
                ) from None
    sdc_kwargs = {}
    for name in _SDC_KEYS:
        if ("sdc", name) in ini:
            try:
                sdc_kwargs[name] = int(ini[("sdc", name)])
            except ValueError:
                raise UsageError(
                    f"bad value for sdc.{name}: {ini[('sdc', name)]!r}"
                ) from None
    model_kwargs = {}
    for name in _MODEL_INT_KEYS:
        if ("model", name) in ini:
            model_kwargs[name] = int(ini[("model", name)])
    for name in _MODEL_FLOAT_KEYS:
        if ("model", name) in ini:
            model_kwargs[name] = float(ini[("model", name)])
    if ("model", "dropout_after_conv") in ini:
        model_kwargs["dropout_after_conv"] = _parse_bool(
            ini[("model", "dropout_after_conv")])
    feature_name = ini.get(("model", "feature"), "sdc")
    if feature_name not in FEATURE_NAMES:
        raise UsageError(f"unknown feature {feature_name!r} in config")
    if getattr(args, "feature", None):
        feature_name = args.feature
    sdc_cfg = SdcConfig(**sdc_kwargs)
    if getattr(args, "sdc", None):
        sdc_cfg = args.sdc
    for flag in ("lr", "batch_size", "seed", "dropout"):
        value = getattr(args, flag, None)
        if value is not None:
            model_kwargs[flag] = value
    try:
        cfg = model_module.ModelConfig(
            feature=FEATURE_NAMES[feature_name],
            front_end=FrontEndConfig(**front_kwargs),
            sdc=sdc_cfg,
            **model_kwargs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    LOG.info("resolved config: %s",
             " ".join(f"{k}={v}" for k, v in cfg.to_dict().items()))
    return cfg


def _atomic_write_text(path, text: str):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(text)
    os.replace(tmp, path)


def _atomic(path, write_fn):
    tmp = f"{path}.tmp.{os.getpid()}"
    write_fn(tmp)
    os.replace(tmp, path)


def cmd_extract(args) -> int:
    cfg = build_model_config(args)
    kind = cfg.feature
    front = make_front_end(kind, cfg.front_end, cfg.sdc)
    if os.path.isdir(args.input):
        wavs = sorted(glob.glob(os.path.join(args.input, "**", "*.wav"),
                                recursive=True))
        if not wavs:
            LOG.error("no .wav files under %s", args.input)
            return 1
        out_dir = args.output or args.input
        os.makedirs(out_dir, exist_ok=True)
        targets = [
            os.path.join(out_dir,
                         os.path.splitext(os.path.basename(p))[0] + ".kwsf")
            for p in wavs
        ]
    else:
        wavs = [args.input]
        default = os.path.splitext(args.input)[0] + ".kwsf"
        targets = [args.output or default]
    for source, target in zip(wavs, targets):
        feat = front(data_module.read_wav(source))
        _atomic(target, lambda tmp: write_features(tmp, feat))
        LOG.info("%s -> %s (%d x %d)", source, target,
                 feat.num_frames, feat.dim)
        print(target)
    return 0


def cmd_synth(args) -> int:
    manifest_path = data_module.synth_dataset(
        args.keywords, args.per_keyword, args.negative_ratio, args.seed,
        args.output)
    LOG.info("synthesized %d keywords x %d into %s", len(args.keywords),
             args.per_keyword, args.output)
    print(manifest_path)
    return 0


def cmd_train(args) -> int:
    cfg = build_model_config(args)
    manifest = data_module.load_manifest(args.manifest)
    def log_row(stats):
        LOG.info("epoch %d train_loss=%.4f val_loss=%.4f val_auc=%.4f"
                 " val_eer=%.4f", stats.epoch, stats.train_loss,
                 stats.val_loss, stats.val_auc, stats.val_eer)
    _, checkpoint, history = model_module.train(
        manifest, cfg, args.epochs, log=log_row)
    _atomic(args.output, lambda tmp: model_module.save_checkpoint(tmp, checkpoint))
    history_path = args.history or (os.path.splitext(args.output)[0]
                                    + "_history.csv")
    _atomic_write_text(history_path, model_module.history_csv(history))
    best_auc = max((row.val_auc for row in history), default=float("nan"))
    LOG.info("checkpoint %s, history %s", args.output, history_path)
    print(f"best_val_auc={best_auc!r}")
    return 0


def cmd_eval(args) -> int:
    checkpoint = model_module.load_checkpoint(args.ckpt)
    kws = model_module.KwsModel.from_checkpoint(checkpoint)
    LOG.info("resolved config: %s",
             " ".join(f"{k}={v}" for k, v in kws.cfg.to_dict().items()))
    manifest = data_module.load_manifest(args.manifest)
    scored = model_module.evaluate(kws, manifest)
    if args.output:
        _atomic(args.output, lambda tmp: metrics_module.write_scores(tmp, scored))
    print(f"auc={metrics_module.auc(scored)!r}")
    print(f"eer={metrics_module.eer(scored)!r}")
    print(f"f1_at_0.5={metrics_module.f1_at(scored, 0.5)!r}")
    return 0


def parse_sweep(text: str):
    """Parse 'd=1..4' or 'k=5..10' into (variable, values)."""
    try:
        variable, span = text.split("=", 1)
        low_text, high_text = span.split("..", 1)
        low, high = int(low_text), int(high_text)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"sweep must look like d=1..4 or k=5..10, got {text!r}") from None
    if variable not in ("d", "k"):
        raise argparse.ArgumentTypeError(
            f"sweep variable must be d or k, got {variable!r}")
    if low < 1 or high < low:
        raise argparse.ArgumentTypeError(f"bad sweep range {text!r}")
    return variable, list(range(low, high + 1))


def cmd_ablate(args) -> int:
    cfg = build_model_config(args)
    manifest_train = data_module.load_manifest(args.train_manifest)
    manifest_eval = data_module.load_manifest(args.eval_manifest)
    variable, values = args.sweep
    d_values = values if variable == "d" else []
    k_values = values if variable == "k" else []
    def log_row(row):
        LOG.info("d=%d k=%d auc=%.4f eer=%.4f", row.d, row.k, row.auc, row.eer)
    rows = metrics_module.ablation_grid(
        manifest_train, manifest_eval, d_values, k_values, cfg, args.epochs,
        log=log_row)
    _atomic_write_text(args.output, metrics_module.ablation_csv(rows))
    print(args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdckws",
        description="Keyword spotting with shifted-delta and baseline"
                    " front-ends.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_flags(p, with_model: bool):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--feature", choices=sorted(FEATURE_NAMES),
                       help="front-end name")
        p.add_argument("--sdc", type=SdcConfig.parse, metavar="N-d-p-k",
                       help="shifted-delta configuration, e.g. 40-1-3-8")
        if with_model:
            p.add_argument("--lr", type=float, help="learning rate")
            p.add_argument("--batch-size", dest="batch_size", type=int)
            p.add_argument("--dropout", type=float)
            p.add_argument("--seed", type=int)

    p_extract = sub.add_parser("extract", help="wav(s) to feature file(s)")
    p_extract.add_argument("input", help="a .wav file or a directory of them")
    p_extract.add_argument("-o", "--output", help="output file or directory")
    add_config_flags(p_extract, with_model=False)
    p_extract.set_defaults(handler=cmd_extract)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    p_synth.add_argument("--keywords", nargs="+", required=True)
    p_synth.add_argument("--per-keyword", dest="per_keyword", type=int,
                         default=25)
    p_synth.add_argument("--negative-ratio", dest="negative_ratio", type=float,
                         default=1.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("-o", "--output", required=True, help="output directory")
    p_synth.set_defaults(handler=cmd_synth)

    p_train = sub.add_parser("train", help="train a matcher")
    p_train.add_argument("--manifest", required=True)
    p_train.add_argument("--epochs", type=int, required=True)
    p_train.add_argument("-o", "--output", required=True,
                         help="checkpoint path")
    p_train.add_argument("--history", help="history CSV path")
    add_config_flags(p_train, with_model=True)
    p_train.set_defaults(handler=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("-o", "--output", help="scores CSV path")
    p_eval.set_defaults(handler=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="sweep the shift or block count")
    p_ablate.add_argument("--train-manifest", dest="train_manifest",
                          required=True)
    p_ablate.add_argument("--eval-manifest", dest="eval_manifest",
                          required=True)
    p_ablate.add_argument("--sweep", type=parse_sweep, required=True,
                          metavar="d=1..4|k=5..10")
    p_ablate.add_argument("--epochs", type=int, required=True)
    p_ablate.add_argument("-o", "--output", required=True, help="grid CSV path")
    add_config_flags(p_ablate, with_model=True)
    p_ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and len(args.keywords) < 2:
        parser.error("synth needs at least 2 keywords")
    try:
        return args.handler(args)
    except (UsageError, ValueError) as exc:
        LOG.error("%s", exc)
        return 2
    except (KwsError, OSError) as exc:
        LOG.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
