"""Checkpoints: run config, named parameter arrays, inner rates and optimizer state as JSON text."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..models import EncoderConfig, ParamSet
from ..optimizers import LrTable, OuterOptState
from .config import ConfigError, RunConfig, dump_config, parse_config_text

FORMAT = "metalearn-checkpoint"
VERSION = 1

# checkpoint kinds besides the algorithm names
NON_EPISODIC = "non_episodic"
ZERO_SHOT = "zero_shot"


@dataclass
class Checkpoint:
    kind: str
    params: ParamSet
    lrs: LrTable
    config: RunConfig
    epoch: int = 0
    opt_state: OuterOptState | None = None
    metrics: dict = field(default_factory=dict)


def _array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _unarray(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def checkpoint_to_json(ck: Checkpoint) -> str:
    opt = None
    if ck.opt_state is not None:
        s = ck.opt_state
        opt = {"lr": s.lr, "betas": list(s.betas), "eps": s.eps, "sync_period": s.sync_period,
               "lookahead_alpha": s.lookahead_alpha, "rect_threshold": s.rect_threshold, "t": s.t,
               "buffers": {k: _array(v) for k, v in sorted(s.to_arrays().items())}}
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": ck.kind,
        "epoch": ck.epoch,
        "config": dump_config(ck.config).splitlines(),
        "encoder": dataclasses.asdict(ck.params.config),
        "params": {k: _array(v) for k, v in ck.params.to_arrays().items()},
        "head_multiplier": ck.lrs.head_multiplier,
        "lrs": {k: float(v) for k, v in ck.lrs.to_arrays().items()},
        "optimizer": opt,
        "metrics": ck.metrics,
    }
    return json.dumps(doc, indent=1) + "\n"


def checkpoint_from_json(text: str, source: str = "<checkpoint>") -> Checkpoint:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: not a checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ConfigError(f"{source}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ConfigError(f"{source}: unsupported checkpoint version {doc.get('version')!r}")
    enc = doc["encoder"]
    enc["hidden_dims"] = tuple(enc["hidden_dims"])
    params = ParamSet.from_arrays(EncoderConfig(**enc),
                                  {k: _unarray(v) for k, v in doc["params"].items()})
    layers: dict[str, int] = {}
    for key in doc["lrs"]:
        _, layer, step = key.split(".")
        layers[layer] = max(layers.get(layer, 0), int(step) + 1)
    n_steps = max(layers.values(), default=0)
    lrs = LrTable.initial(list(layers), n_steps, 0.0, doc["head_multiplier"]).with_values(
        {k: np.float64(v) for k, v in doc["lrs"].items()})
    opt = None
    if doc["optimizer"] is not None:
        o = dict(doc["optimizer"])
        buffers = {k: _unarray(v) for k, v in o.pop("buffers").items()}
        t = o.pop("t")
        o["betas"] = tuple(o["betas"])
        opt = OuterOptState.from_arrays(buffers, **o)
        opt.t = t
    config = parse_config_text("\n".join(doc["config"]), f"{source}:config")
    return Checkpoint(doc["kind"], params, lrs, config, doc["epoch"], opt, doc.get("metrics", {}))


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(checkpoint_to_json(ck), encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint file not found: {path}")
    return checkpoint_from_json(path.read_text(encoding="utf-8"), str(path))


__all__ = ["Checkpoint", "NON_EPISODIC", "ZERO_SHOT", "checkpoint_to_json", "checkpoint_from_json",
           "save_checkpoint", "load_checkpoint"]
