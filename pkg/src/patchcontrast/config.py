"""Run configuration: one JSON document covering every knob.

The schema mirrors TrainConfig with `model` and `weights` nested, plus a
`data` section describing where scenes come from (generated counts or
directories of PNGs).  Unknown keys are rejected with their full dotted
path; values keep the type of the schema default.  Dotted `key=value`
overrides let the CLI adjust single entries without editing files.
"""

import copy
import dataclasses
import json

from . import losses, network, train

DATA_DEFAULTS = {
    "n_source": 200,
    "n_target": 100,
    "n_val": 50,
    "source_dir": None,  # images/ + labels/ under each *_dir override generation
    "target_dir": None,
    "val_dir": None,
}

# Fields whose None default means "optional string path".
_STRING_OR_NONE = {"pseudo_label_dir", "out_dir", "source_dir", "target_dir", "val_dir"}


def default_config():
    cfg = {}
    for f in dataclasses.fields(train.TrainConfig):
        if f.name == "model":
            cfg["model"] = dataclasses.asdict(network.ModelConfig())
        elif f.name == "weights":
            cfg["weights"] = dataclasses.asdict(losses.LossWeights())
        else:
            cfg[f.name] = f.default
    cfg["data"] = dict(DATA_DEFAULTS)
    return cfg


def _check_keys(user, schema, prefix=""):
    for key, value in user.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ValueError(f"unknown config key {path!r}")
        if isinstance(schema[key], dict):
            if not isinstance(value, dict):
                raise ValueError(f"config key {path!r} must be a section")
            _check_keys(value, schema[key], prefix=path + ".")


def _merge(base, user):
    for key, value in user.items():
        if isinstance(base.get(key), dict) and isinstance(value, dict):
            _merge(base[key], value)
        else:
            base[key] = value


def load_config(path=None):
    """Defaults overlaid with the JSON file at `path` (if given)."""
    cfg = default_config()
    if path is not None:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")
        if not isinstance(user, dict):
            raise ValueError(f"{path}: config root must be an object")
        _check_keys(user, cfg)
        _merge(cfg, user)
    return cfg


def _coerce(path, raw, default):
    """Parse an override string into the type of the schema default."""
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings need no quotes
    if value is None or isinstance(default, dict):
        return value
    if default is None:
        if path.split(".")[-1] in _STRING_OR_NONE or isinstance(value, str):
            return value
        return value
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ValueError(f"override {path!r} expects true/false, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, int):
            return value
        raise ValueError(f"override {path!r} expects an integer, got {raw!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)):
            return float(value)
        raise ValueError(f"override {path!r} expects a number, got {raw!r}")
    if isinstance(default, (list, tuple)):
        if isinstance(value, list):
            return value
        raise ValueError(f"override {path!r} expects a JSON list, got {raw!r}")
    return value


def apply_overrides(cfg, assignments):
    """Apply `a.b.c=value` strings in order; unknown paths are rejected."""
    schema = default_config()
    for item in assignments:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        keys = path.split(".")
        node, snode = cfg, schema
        for k in keys[:-1]:
            if not isinstance(snode.get(k), dict):
                raise ValueError(f"unknown config key {path!r}")
            node, snode = node[k], snode[k]
        leaf = keys[-1]
        if leaf not in snode:
            raise ValueError(f"unknown config key {path!r}")
        node[leaf] = _coerce(path, raw, snode[leaf])
    return cfg


def to_train_config(cfg):
    """Materialize the dataclasses from a validated config dict."""
    body = {k: v for k, v in cfg.items() if k not in ("model", "weights", "data")}
    model_raw = dict(cfg["model"])
    for key in ("channels", "latent_stages"):
        model_raw[key] = tuple(model_raw[key])
    return train.TrainConfig(
        model=network.ModelConfig(**model_raw),
        weights=losses.LossWeights(**cfg["weights"]),
        **body,
    )


def write_resolved(path, cfg, extra=None):
    """Echo the effective configuration next to a run's outputs."""
    doc = copy.deepcopy(cfg)
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
