"""Command-line surface: describe, embed-fallback, train, eval, synth,
analyze, gradcheck.

Configuration comes from a JSON document (unknown keys rejected, every key
has a default) with a handful of flag overrides; machine-readable results
go to stdout, diagnostics to stderr. Exit codes: 1 assertion or gradcheck
failure, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as dio
from . import gradcheck
from . import plots
from . import textbridge as tb
from . import trainer as tr

EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_IO = 3


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


DEFAULT_CONFIG: dict = {
    "dataset": None,  # path to the training CSV
    "has_timestamp_column": False,  # first CSV column is a timestamp string
    "embeddings": None,  # path to an LTSE file; null uses the fallback embedder
    "test_dataset": None,  # optional separate test CSV (e.g. the synthetic study)
    "out_dir": "out",  # artifact directory
    "descriptions": None,  # descriptions JSONL (embed-fallback input)
    "checkpoint": None,  # model checkpoint (eval/analyze input)
    "template": {f.name: f.default for f in dataclasses.fields(tb.TemplateConfig)},
    "train": {
        f.name: f.default for f in dataclasses.fields(tr.TrainConfig)
    },
    "synth": {
        "length": dio.SYNTH_LENGTH,
        "weights": list(dio.SYNTH_TRAIN_WEIGHTS),
        "freqs": list(dio.SYNTH_TRAIN_FREQS),
        "phases": list(dio.SYNTH_TRAIN_PHASES),
        "noise": dio.SYNTH_NOISE,
        "seed": 0,
    },
}


def log(message: str) -> None:
    print(message, file=sys.stderr)


def merge_config(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise CliError(f"unknown config key {where!r}", EXIT_CONFIG)
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = merge_config(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}", EXIT_CONFIG)
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config is not valid JSON: {exc}", EXIT_CONFIG) from None
        if not isinstance(user, dict):
            raise CliError("config root must be a JSON object", EXIT_CONFIG)
        cfg = merge_config(cfg, user)
    if getattr(args, "seed", None) is not None:
        cfg["train"]["seed"] = args.seed
        cfg["synth"]["seed"] = args.seed
    if getattr(args, "variant", None) is not None:
        cfg["train"]["variant"] = args.variant
    if getattr(args, "static_lambda", None) is not None:
        cfg["train"]["static_lambda"] = args.static_lambda
    if getattr(args, "out", None) is not None:
        cfg["out_dir"] = args.out
    return cfg


def train_config(cfg: dict) -> tr.TrainConfig:
    try:
        return tr.TrainConfig(**cfg["train"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid train config: {exc}", EXIT_CONFIG) from None


def template_config(cfg: dict) -> tb.TemplateConfig:
    try:
        return tb.TemplateConfig(**cfg["template"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid template config: {exc}", EXIT_CONFIG) from None


def load_dataset(cfg: dict, key: str = "dataset") -> dio.TimeSeriesDataset:
    path = cfg.get(key)
    if not path:
        raise CliError(f"config key {key!r} is required for this command", EXIT_CONFIG)
    try:
        return dio.load_csv(path, cfg["has_timestamp_column"])
    except dio.DataError as exc:
        raise CliError(str(exc), EXIT_IO) from None


def out_dir(cfg: dict) -> Path:
    path = Path(cfg["out_dir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def train_windows_for_describe(cfg: dict, tcfg: tr.TrainConfig, dataset):
    split = dio.SplitConfig(tcfg.train_fraction, tcfg.val_fraction, tcfg.test_fraction)
    train_end, _ = split.boundaries(dataset.length)
    stats = dio.NormStats.fit(dataset.values[:train_end])
    norm = stats.apply(dataset.values[:train_end])
    if tcfg.task == "impute":
        return dio.make_impute_windows(norm, tcfg.input_len)
    return dio.make_windows(norm, tcfg.input_len, tcfg.horizon)


def cmd_describe(args) -> dict:
    cfg = load_config(args)
    tcfg = train_config(cfg)
    template = template_config(cfg)
    dataset = load_dataset(cfg)
    windows = train_windows_for_describe(cfg, tcfg, dataset)
    descriptions = []
    for x, _ in windows:
        for c in range(x.shape[1]):
            descriptions.append(tb.render_description(x[:, c], template))
    path = out_dir(cfg) / "descriptions.jsonl"
    tb.write_descriptions_jsonl(descriptions, path)
    log(f"wrote {len(descriptions)} descriptions to {path}")
    return {"count": len(descriptions), "path": str(path)}


def cmd_embed_fallback(args) -> dict:
    cfg = load_config(args)
    tcfg = train_config(cfg)
    desc_path = cfg["descriptions"] or (Path(cfg["out_dir"]) / "descriptions.jsonl")
    if not Path(desc_path).exists():
        raise CliError(f"descriptions file not found: {desc_path}", EXIT_IO)
    descriptions = tb.read_descriptions_jsonl(desc_path)
    table = tb.EmbeddingTable(dim=tcfg.dim_l)
    duplicates = 0
    for desc in descriptions:
        if desc.key in table:
            duplicates += 1
            continue
        table.add(desc.key, tb.fallback_embed(desc, tcfg.dim_l, tcfg.seed))
    if duplicates:
        log(f"collapsed {duplicates} duplicate keys")
    path = out_dir(cfg) / "embeddings.ltse"
    tb.write_embedding_file(table, path)
    return {"count": len(table), "dim": table.dim, "path": str(path)}


def load_embeddings(cfg: dict) -> tb.EmbeddingTable | None:
    if not cfg["embeddings"]:
        return None
    try:
        return tb.load_embedding_file(cfg["embeddings"])
    except (OSError, tb.EmbeddingFileError) as exc:
        raise CliError(str(exc), EXIT_IO) from None


def cmd_train(args) -> dict:
    cfg = load_config(args)
    tcfg = train_config(cfg)
    template = template_config(cfg)
    dataset = load_dataset(cfg)
    test_dataset = load_dataset(cfg, "test_dataset") if cfg["test_dataset"] else None
    embeddings = load_embeddings(cfg)
    try:
        result = tr.train(tcfg, dataset, embeddings, template, test_dataset)
    except tr.TrainingDiverged as exc:
        directory = out_dir(cfg)
        (directory / "report.json").write_text(exc.report.to_json())
        raise CliError(f"training diverged: {exc}", EXIT_ASSERTION) from None
    except tb.MissingKeyError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    directory = out_dir(cfg)
    report_path = directory / "report.json"
    report_path.write_text(result.report.to_json())
    params = dict(result.model.params)
    if result.disc is not None:
        params.update(result.disc.params)
    if result.wnet is not None:
        params.update(result.wnet.params)
    ckpt.save_params(params, directory / "model.ltsp")
    with open(directory / "curves.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss,mi_estimate,mean_omega_o,mean_omega_i\n")
        for i, e in enumerate(result.report.epochs):
            fh.write(
                f"{i},{e.train_loss!r},{e.val_loss!r},{e.mi_estimate!r},"
                f"{e.mean_omega_o!r},{e.mean_omega_i!r}\n"
            )
    plots.training_curves_figure(result.report.epochs, directory / "training_curves.png")
    if result.wnet is not None:
        grid = np.linspace(0.0, 2.0, 81)
        rows = tr.dump_weight_curve(result.wnet, grid)
        tr.write_weight_curve_csv(rows, directory / "weight_curve.csv")
        plots.weight_curve_figure(rows, directory / "weight_curve.png")
    log(f"artifacts in {directory}")
    return {
        "test_mse": result.report.test_mse,
        "test_mae": result.report.test_mae,
        "report": str(report_path),
        "checkpoint": str(directory / "model.ltsp"),
    }


def rebuild_model(cfg: dict, tcfg: tr.TrainConfig, dataset):
    from .backbone import BackboneConfig, build_backbone

    bb_cfg = BackboneConfig(
        kind=tcfg.backbone,
        task=tcfg.task,
        input_len=tcfg.input_len,
        horizon=tcfg.horizon,
        channels=dataset.channels,
        d_model=tcfg.d_model,
        layers=tcfg.layers,
        k_periods=tcfg.k_periods,
    )
    model = build_backbone(bb_cfg, np.random.default_rng([tcfg.seed, 1]))
    ckpt_path = cfg["checkpoint"] or (Path(cfg["out_dir"]) / "model.ltsp")
    if not Path(ckpt_path).exists():
        raise CliError(f"checkpoint not found: {ckpt_path}", EXIT_IO)
    try:
        stored = ckpt.load_params(ckpt_path)
    except ckpt.CheckpointError as exc:
        raise CliError(str(exc), EXIT_IO) from None
    missing = set(model.params) - set(stored)
    if missing:
        raise CliError(f"checkpoint lacks tensors: {sorted(missing)}", EXIT_CONFIG)
    for name in model.params:
        if stored[name].shape != model.params[name].shape:
            raise CliError(
                f"checkpoint tensor {name} has shape {stored[name].shape}, "
                f"config implies {model.params[name].shape}",
                EXIT_CONFIG,
            )
        model.params[name] = stored[name]
    return model, stored


def test_split(tcfg: tr.TrainConfig, dataset, test_dataset=None):
    split = dio.SplitConfig(tcfg.train_fraction, tcfg.val_fraction, tcfg.test_fraction)
    train_end, val_end = split.boundaries(dataset.length)
    stats = dio.NormStats.fit(dataset.values[:train_end])
    source = stats.apply(test_dataset.values if test_dataset is not None else dataset.values[val_end:])
    if tcfg.task == "impute":
        return dio.make_impute_windows(source, tcfg.input_len), stats
    return dio.make_windows(source, tcfg.input_len, tcfg.horizon), stats


def cmd_eval(args) -> dict:
    cfg = load_config(args)
    tcfg = train_config(cfg)
    dataset = load_dataset(cfg)
    test_dataset = load_dataset(cfg, "test_dataset") if cfg["test_dataset"] else None
    model, _ = rebuild_model(cfg, tcfg, dataset)
    windows, stats = test_split(tcfg, dataset, test_dataset)
    mse, mae, mse_o, mae_o = tr.evaluate_model(model, windows, tcfg, stats)
    return {"mse": mse, "mae": mae, "mse_original": mse_o, "mae_original": mae_o}


def cmd_synth(args) -> dict:
    cfg = load_config(args)
    s = cfg["synth"]
    try:
        dataset = dio.synth_generate(
            length=s["length"],
            weights=s["weights"],
            freqs=s["freqs"],
            phases=s["phases"],
            noise=s["noise"],
            seed=s["seed"],
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from None
    path = out_dir(cfg) / "synthetic.csv"
    dio.save_csv(dataset, path)
    return {"path": str(path), "rows": dataset.length}


def cmd_analyze(args) -> dict:
    cfg = load_config(args)
    tcfg = train_config(cfg)
    dataset = load_dataset(cfg)
    model, stored = rebuild_model(cfg, tcfg, dataset)
    windows, _ = test_split(tcfg, dataset)
    directory = out_dir(cfg)
    sample = dio.gather_batch(windows[:256], np.arange(min(256, len(windows))))
    out = model.forward(sample.x)
    cka = tr.cka_linear(out.h_first.data, out.h_last.data)
    result = {"cka_first_last": cka}
    wnet_names = [n for n in stored if n.startswith("wnet/")]
    if wnet_names:
        from . import reweight as rw

        wnet = rw.WeightingNet(np.random.default_rng(0), hidden=tcfg.wnet_hidden)
        for name in wnet.params:
            if name not in stored:
                raise CliError(f"checkpoint lacks tensor {name}", EXIT_CONFIG)
            wnet.params[name] = stored[name]
        grid = np.linspace(0.0, 2.0, 81)
        rows = tr.dump_weight_curve(wnet, grid)
        tr.write_weight_curve_csv(rows, directory / "weight_curve.csv")
        plots.weight_curve_figure(rows, directory / "weight_curve.png")
        result["weight_curve"] = str(directory / "weight_curve.csv")
    (directory / "analysis.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


def cmd_gradcheck(args) -> dict:
    cfg = load_config(args)
    result = gradcheck.run_all(seed=cfg["train"]["seed"])
    if not result["pass"]:
        print(json.dumps(result, indent=2, sort_keys=True))
        raise CliError(f"gradient check failed: max error {result['max_error']}", EXIT_ASSERTION)
    return result


COMMANDS = {
    "describe": cmd_describe,
    "embed-fallback": cmd_embed_fallback,
    "train": cmd_train,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsbridge",
        description="Train and analyze text-aligned time-series models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--variant", help="override the training variant")
        p.add_argument("--lambda", dest="static_lambda", type=float,
                       help="static-variant mixing ratio in [0, 1]")
        p.add_argument("--out", help="override the output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = COMMANDS[args.command](args)
    except CliError as exc:
        log(f"error: {exc}")
        return exc.code
    except OSError as exc:
        log(f"I/O error: {exc}")
        return EXIT_IO
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
