"""Command-line entry point: ``probtsf generate|train|evaluate|forecast``.

Settings come from built-in defaults, then the command's section of an INI
config file (``--config``), then command-line flags; later sources win.
Exit codes: 0 success, 2 invalid configuration or input files, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from probtsf import __version__
from probtsf.calibration import build_report, oracle_forecasts, report_from_forecasts
from probtsf.dataio import DatasetError, read_csv_dataset, write_csv_dataset
from probtsf.datagen import BrownianConfig, SinesConfig, VdpConfig, gen_brownian, gen_sines, gen_vdp, window
from probtsf.ssm import forecast_mean
from probtsf.training import CheckpointError, TrainConfig, TrainingDiverged, load_checkpoint, save_checkpoint, train
from probtsf.variance import forward_sigma

log = logging.getLogger("probtsf")

REQUIRED = object()


class ConfigError(ValueError):
    pass


def _bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _opt_bool(value):
    if value is None or str(value).strip().lower() in ("", "none", "auto"):
        return None
    return _bool(value)


_TRAIN_TYPES = {"clip_norm": float, "sigma_normalize": _opt_bool}
_TRAIN_KEYS = {
    f.name: (_TRAIN_TYPES.get(f.name) or (_bool if isinstance(f.default, bool) else type(f.default)), f.default)
    for f in fields(TrainConfig)
    if f.name != "fixed_unit_sigma"
}

SCHEMAS = {
    "generate": {
        "kind": (str, "sines"),
        "n": (int, 2000),
        "len": (int, 192),
        "seed": (int, 0),
        "output": (str, "dataset.csv"),
        "noise_std": (float, 1.0),
        "omega1": (float, 2 * math.pi / 24),
        "omega2_mean": (float, 2 * math.pi / 12),
        "lambda_mean": (float, 5.0),
        "dt_int": (float, 0.05),
        "vdp_form": (str, "standard"),
    },
    "train": {
        "data": (str, REQUIRED),
        "lookback": (int, 96),
        "horizon": (int, 96),
        "train_fraction": (float, 0.8),
        "split_seed": (int, 0),
        "output_dir": (str, "run"),
        **_TRAIN_KEYS,
    },
    "evaluate": {
        "data": (str, REQUIRED),
        "checkpoint": (str, None),
        "model": (str, "checkpoint"),
        "split": (str, "test"),
        "lookback": (int, None),
        "horizon": (int, None),
        "train_fraction": (float, None),
        "split_seed": (int, None),
        "output_dir": (str, "report"),
        "svg": (_bool, True),
        "kl_method": (str, "moment"),
    },
    "forecast": {
        "data": (str, REQUIRED),
        "checkpoint": (str, REQUIRED),
        "output": (str, "forecast.csv"),
    },
}

CHOICES = {
    "kind": ("sines", "vdp", "brownian"),
    "vdp_form": ("standard", "literal"),
    "model": ("checkpoint", "brownian_oracle"),
    "split": ("test", "train", "all"),
    "kl_method": ("moment", "binned"),
    "arch_variant": ("fully_connected", "ssm_backed"),
}


def _normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def resolve_config(command: str, config_path: str | None, overrides: dict) -> dict:
    """Merge defaults, config-file section and flag overrides; validate every value."""
    schema = SCHEMAS[command]
    raw: dict[str, object] = {}
    if config_path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(config_path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{config_path}: {exc}") from None
        unknown_sections = set(parser.sections()) - SCHEMAS.keys()
        if unknown_sections:
            raise ConfigError(f"{config_path}: unknown sections {sorted(unknown_sections)}")
        if parser.has_section(command):
            for key, value in parser.items(command):
                name = _normalize_key(key)
                if name not in schema:
                    raise ConfigError(f"{config_path}: unknown key {key!r} in [{command}]")
                raw[name] = value
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value

    cfg = {}
    for name, (kind, default) in schema.items():
        if name in raw:
            try:
                cfg[name] = kind(raw[name])
            except (TypeError, ValueError):
                raise ConfigError(f"invalid value for {name}: {raw[name]!r}") from None
        elif default is REQUIRED:
            raise ConfigError(f"missing required setting {name!r} for {command}")
        else:
            cfg[name] = default
        if name in CHOICES and cfg[name] is not None and cfg[name] not in CHOICES[name]:
            raise ConfigError(f"{name} must be one of {CHOICES[name]}, got {cfg[name]!r}")
    _validate(command, cfg)
    return cfg


def _validate(command, cfg):
    positive = [k for k in ("n", "len", "lookback", "horizon", "batch_size", "latent_dim", "hidden") if k in cfg]
    for k in positive:
        if cfg[k] is not None and cfg[k] < 1:
            raise ConfigError(f"{k} must be >= 1")
    if cfg.get("train_fraction") is not None and not 0.0 <= cfg["train_fraction"] <= 1.0:
        raise ConfigError("train_fraction must lie in [0, 1]")
    if command == "train":
        try:
            train_config(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if command == "generate":
        try:
            _generator(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if command == "evaluate" and cfg["model"] == "checkpoint" and not cfg["checkpoint"]:
        raise ConfigError("evaluate needs a checkpoint unless model = brownian_oracle")


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{name: cfg[name] for name in _TRAIN_KEYS})


def _generator(cfg):
    kind = cfg["kind"]
    if kind == "sines":
        return gen_sines, SinesConfig(omega1=cfg["omega1"], omega2_mean=cfg["omega2_mean"], noise_std=cfg["noise_std"])
    if kind == "vdp":
        vcfg = VdpConfig(
            omega1=cfg["omega1"],
            lambda_mean=cfg["lambda_mean"],
            dt_int=cfg["dt_int"],
            noise_std=cfg["noise_std"],
            form=cfg["vdp_form"],
        )
        return gen_vdp, vcfg
    return gen_brownian, BrownianConfig(increment_std=cfg["noise_std"])


# -- helpers -----------------------------------------------------------------


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _manifest(command, cfg, inputs, outputs, **extra) -> dict:
    return {
        "tool": "probtsf",
        "version": __version__,
        "command": command,
        "config": cfg,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        **extra,
    }


def _ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from None
    return path


# -- commands ----------------------------------------------------------------


def cmd_generate(cfg: dict) -> list[Path]:
    gen, gcfg = _generator(cfg)
    data = gen(cfg["n"], cfg["len"], cfg["seed"], gcfg)
    out = Path(cfg["output"])
    if out.parent != Path(""):
        _ensure_dir(out.parent)
    write_csv_dataset(out, data, t=np.arange(1, cfg["len"] + 1))
    manifest = Path(f"{out}.manifest.json")
    _write_json(
        manifest,
        _manifest("generate", cfg, [], [out], generator=gen.__name__, generator_config=asdict(gcfg), seed=cfg["seed"]),
    )
    log.info("wrote %s (%d series x %d steps)", out, cfg["n"], cfg["len"])
    return [out, manifest]


def _windows(cfg, data):
    P, T = cfg["lookback"], cfg["horizon"]
    try:
        return window(data, P, T, cfg["train_fraction"], cfg["split_seed"])
    except ValueError as exc:
        raise DatasetError(f"{cfg['data']}: {exc}") from None


def cmd_train(cfg: dict) -> list[Path]:
    data, _, _ = read_csv_dataset(cfg["data"])
    train_set, _ = _windows(cfg, data)
    if train_set.n == 0:
        raise DatasetError(f"{cfg['data']}: training split is empty (train_fraction={cfg['train_fraction']})")
    tcfg = train_config(cfg)
    out_dir = _ensure_dir(cfg["output_dir"])
    split = {k: cfg[k] for k in ("lookback", "horizon", "train_fraction", "split_seed")}
    try:
        result = train(train_set, tcfg)
    except TrainingDiverged as exc:
        path = out_dir / "checkpoint.diverged.json"
        save_checkpoint(path, exc.mean_params, exc.sigma_params, tcfg, extra=split)
        raise RuntimeError(f"{exc}; last good parameters saved to {path}") from None

    ckpt = out_dir / "checkpoint.json"
    save_checkpoint(ckpt, result.mean, result.sigma, tcfg, result.mean_pretrained, extra=split)
    hist = result.history
    history = out_dir / "history.csv"
    _write_rows(
        history,
        ["step", "phase", "epoch", "loss", "point_loss"],
        ((i, p, e, l, pl) for i, (p, e, l, pl) in enumerate(zip(hist.phase, hist.epoch, hist.loss, hist.point_loss))),
    )
    timing = out_dir / "timing.csv"
    _write_rows(timing, ["phase", "epoch", "seconds"], hist.epoch_seconds)
    manifest = out_dir / "manifest.json"
    outputs = [ckpt, history, timing]
    _write_json(manifest, _manifest("train", cfg, [cfg["data"]], outputs, n_train=train_set.n))
    log.info("trained on %d trajectories; checkpoint %s", train_set.n, ckpt)
    return outputs + [manifest]


def _split_settings(cfg, checkpoint):
    extra = checkpoint.extra if checkpoint is not None else {}
    defaults = {"lookback": 96, "horizon": 96, "train_fraction": 0.8, "split_seed": 0}
    out = dict(cfg)
    for key, default in defaults.items():
        if out[key] is None:
            out[key] = extra.get(key, default)
    return out


def cmd_evaluate(cfg: dict) -> list[Path]:
    checkpoint = load_checkpoint(cfg["checkpoint"]) if cfg["model"] == "checkpoint" else None
    cfg = _split_settings(cfg, checkpoint)
    data, _, _ = read_csv_dataset(cfg["data"])
    P, T = cfg["lookback"], cfg["horizon"]
    if checkpoint is not None:
        ck_T = checkpoint.mean.horizon
        ck_P = checkpoint.sigma.layer_dims[0] if checkpoint.sigma.layer_dims else checkpoint.extra.get("lookback", P)
        if (ck_P, ck_T) != (P, T):
            raise DatasetError(f"checkpoint expects lookback/horizon {ck_P}/{ck_T}, evaluation uses {P}/{T}")
    if cfg["split"] == "all":
        test_set, _ = _windows({**cfg, "train_fraction": 1.0}, data)
    else:
        train_set, test_set = _windows(cfg, data)
        if cfg["split"] == "train":
            test_set = train_set
    if test_set.n == 0:
        raise DatasetError(f"{cfg['data']}: the {cfg['split']} split is empty")
    if test_set.n < 2:
        raise DatasetError(f"{cfg['data']}: need at least 2 evaluation trajectories, got {test_set.n}")

    if checkpoint is None:
        mu, sigma = oracle_forecasts(test_set)
        report = report_from_forecasts(mu, sigma, test_set.futures, kl_method=cfg["kl_method"])
    else:
        report = build_report(
            checkpoint.mean, checkpoint.sigma, test_set, checkpoint.mean_pretrained, kl_method=cfg["kl_method"]
        )
        mu = forecast_mean(checkpoint.mean, test_set.lookbacks[:1])
        sigma = forward_sigma(checkpoint.sigma, test_set.lookbacks[:1])

    out_dir = _ensure_dir(cfg["output_dir"])
    outputs = write_report(report, out_dir)
    if cfg["svg"]:
        from probtsf.figures import calibration_figure, coverage_figure

        sample = (test_set.lookbacks[0], test_set.futures[0], mu[0], sigma[0])
        calibration_figure(report, out_dir / "calibration.svg", sample)
        coverage_figure(report, out_dir / "coverage.svg")
        outputs += [out_dir / "calibration.svg", out_dir / "coverage.svg"]
    inputs = [cfg["data"]] + ([cfg["checkpoint"]] if checkpoint is not None else [])
    manifest = out_dir / "manifest.json"
    _write_json(manifest, _manifest("evaluate", cfg, inputs, outputs))
    log.info("pooled KL %.4g, pooled variance %.4g", report.kl_pooled, report.variance_pooled)
    return outputs + [manifest]


def write_report(report, out_dir: Path) -> list[Path]:
    """Report JSON plus one CSV per figure panel."""
    taus = np.arange(1, report.horizon + 1)
    paths = {
        "report": out_dir / "report.json",
        "variance": out_dir / "variance_per_tau.csv",
        "kl": out_dir / "kl_per_tau.csv",
        "coverage": out_dir / "coverage.csv",
        "hist": out_dir / "histograms.csv",
    }
    doc = report.summary()
    doc["variance_per_tau"] = report.variance_per_tau
    doc["kl_per_tau"] = report.kl_per_tau
    doc["hist_edges"] = report.histograms["pooled"]["edges"]
    _write_json(paths["report"], doc)
    _write_rows(paths["variance"], ["tau", "variance"], zip(taus, report.variance_per_tau))
    _write_rows(paths["kl"], ["tau", "kl"], zip(taus, report.kl_per_tau))
    ks = list(report.coverage_per_tau)
    _write_rows(
        paths["coverage"],
        ["tau"] + [f"k{k:g}" for k in ks],
        ([tau] + [report.coverage_per_tau[k][i] for k in ks] for i, tau in enumerate(taus)),
    )
    rows = []
    for panel, hist in report.histograms.items():
        edges = hist["edges"]
        for i, count in enumerate(hist["counts"]):
            rows.append((panel, edges[i], edges[i + 1], int(count), hist["density"][i]))
    _write_rows(paths["hist"], ["panel", "bin_left", "bin_right", "count", "density"], rows)
    return list(paths.values())


def cmd_forecast(cfg: dict) -> list[Path]:
    """Forecast from the last ``P`` points of every series in the dataset."""
    checkpoint = load_checkpoint(cfg["checkpoint"])
    data, _, names = read_csv_dataset(cfg["data"])
    P = checkpoint.extra.get("lookback")
    if P is None:
        P = checkpoint.sigma.layer_dims[0] if checkpoint.sigma.layer_dims else data.shape[1]
    if data.shape[1] < P:
        raise DatasetError(f"{cfg['data']}: series have {data.shape[1]} steps, checkpoint needs {P}")
    lookbacks = data[:, -P:]
    mu = forecast_mean(checkpoint.mean, lookbacks)
    sigma = forward_sigma(checkpoint.sigma, lookbacks)
    header = ["tau"]
    for name in names:
        header += [f"{name}_mu", f"{name}_sigma"]
    rows = []
    for j in range(mu.shape[1]):
        row = [j + 1]
        for i in range(mu.shape[0]):
            row += [mu[i, j], sigma[i, j]]
        rows.append(row)
    out = Path(cfg["output"])
    if out.parent != Path(""):
        _ensure_dir(out.parent)
    _write_rows(out, header, rows)
    return [out]


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "forecast": cmd_forecast}


def _flag_type(kind):
    return str if kind in (_bool, _opt_bool) else kind


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probtsf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command, help=COMMANDS[command].__doc__)
        p.add_argument("--config", help="INI file; the [%s] section is read" % command)
        p.add_argument("-v", "--verbose", action="store_true")
        for name, (kind, _) in schema.items():
            flag = "--" + name.replace("_", "-")
            p.add_argument(flag, dest=name, type=_flag_type(kind), default=None, metavar=name.upper())
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {name: getattr(args, name) for name in SCHEMAS[args.command]}
    try:
        cfg = resolve_config(args.command, args.config, overrides)
        COMMANDS[args.command](cfg)
    except (ConfigError, DatasetError, CheckpointError) as exc:
        print(f"probtsf {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level diagnostic
        log.debug("failure", exc_info=True)
        print(f"probtsf {args.command}: runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
