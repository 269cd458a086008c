"""Run configuration: strict YAML parsing, overrides, and config echo.

A run config is a YAML file with sections ``data``, ``trainer``,
``degradation``, ``model`` (subsections ``generator``, ``discriminator``,
``features``), and ``loss_weights``. Unknown keys anywhere are rejected.
Values omitted fall back to the package defaults. Command-line overrides
(``section.key=value``) beat file values, which beat defaults; every run
echoes the fully resolved config next to its outputs, and parsing that echo
reproduces the run's parameters exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from . import imaging, losses, models, trainer
from .errors import ConfigError


@dataclass
class RunConfig:
    train: trainer.TrainConfig
    manifest: str | None = None
    out_dir: str | None = None

    def resolved(self) -> dict:
        t = self.train.to_dict()
        doc = {
            "data": {"manifest": self.manifest, "out_dir": self.out_dir},
            "trainer": {
                k: t[k]
                for k in (
                    "lr_init", "adam_beta1", "adam_beta2", "warmup_batches", "max_batches",
                    "batch_spec", "hr_size", "seed", "checkpoint_every", "log_every",
                    "eval_every", "eval_n", "early_stop_patience", "prefetch_workers", "dtype",
                )
            },
            "degradation": t["degradation"],
            "model": {
                "generator": t["generator"],
                "discriminator": t["discriminator"],
                "features": t["features"],
            },
            "loss_weights": t["weights"],
        }
        return doc


_TRAINER_KEYS = {
    "lr_init", "adam_beta1", "adam_beta2", "warmup_batches", "max_batches",
    "batch_spec", "hr_size", "seed", "checkpoint_every", "log_every",
    "eval_every", "eval_n", "early_stop_patience", "prefetch_workers", "dtype",
}
_SECTION_KEYS = {
    "data": {"manifest", "out_dir"},
    "trainer": _TRAINER_KEYS,
    "degradation": {"scale", "kernel", "antialias"},
    "model": {"generator", "discriminator", "features"},
    "loss_weights": {f.name for f in losses.LossWeights.__dataclass_fields__.values()},
}
_MODEL_KEYS = {
    "generator": set(models.GeneratorConfig.__dataclass_fields__),
    "discriminator": set(models.DiscriminatorConfig.__dataclass_fields__),
    "features": set(models.FeatureExtractorSpec.__dataclass_fields__),
}


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; allowed: {sorted(allowed)}")


def parse_run_config(doc: dict | None) -> RunConfig:
    """Validate a config document and build the typed run config."""
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(doc, set(_SECTION_KEYS), "config root")
    for name, allowed in _SECTION_KEYS.items():
        section = doc.get(name) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        _check_keys(section, allowed, f"section {name!r}")
    model = doc.get("model") or {}
    for name, allowed in _MODEL_KEYS.items():
        sub = model.get(name) or {}
        if not isinstance(sub, dict):
            raise ConfigError(f"model.{name} must be a mapping")
        _check_keys(sub, allowed, f"model.{name}")

    deg = dict(doc.get("degradation") or {})
    degradation = imaging.DegradationSpec(**deg)

    weights = losses.LossWeights(**(doc.get("loss_weights") or {}))

    gen_kw = dict(model.get("generator") or {})
    disc_kw = dict(model.get("discriminator") or {})
    feat_kw = dict(model.get("features") or {})
    if "tap" in feat_kw:
        feat_kw["tap"] = tuple(feat_kw["tap"])

    t_kw = dict(doc.get("trainer") or {})
    if "batch_spec" in t_kw:
        t_kw["batch_spec"] = tuple(t_kw["batch_spec"])

    train = trainer.TrainConfig(
        weights=weights,
        degradation=degradation,
        generator=models.GeneratorConfig(**gen_kw),
        discriminator=models.DiscriminatorConfig(**disc_kw),
        features=models.FeatureExtractorSpec(**feat_kw),
        **t_kw,
    )
    data = doc.get("data") or {}
    return RunConfig(train=train, manifest=data.get("manifest"), out_dir=data.get("out_dir"))


def load_run_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    """Read a YAML config file and apply ``section.key=value`` overrides."""
    doc = yaml.safe_load(Path(path).read_text())
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    for ov in overrides or []:
        doc = apply_override(doc, ov)
    return parse_run_config(doc)


def apply_override(doc: dict, assignment: str) -> dict:
    """Apply one ``a.b.c=value`` override to a config document (value is YAML)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    dotted, raw = assignment.split("=", 1)
    keys = dotted.strip().split(".")
    if not all(keys):
        raise ConfigError(f"bad override path {dotted!r}")
    value = yaml.safe_load(raw)
    node = doc
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = {}
            node[k] = nxt
        if not isinstance(nxt, dict):
            raise ConfigError(f"override path {dotted!r} collides with a scalar")
        node = nxt
    node[keys[-1]] = value
    return doc


def echo_config(cfg: RunConfig, path: str | Path) -> None:
    """Write the fully resolved config; re-parsing it reproduces ``cfg``."""
    Path(path).write_text(yaml.safe_dump(cfg.resolved(), sort_keys=True))
