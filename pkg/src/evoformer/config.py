"""Run configuration: sectioned key = value files with typed defaults.

Every key has a default whose type fixes how the file value is parsed.
Unknown sections or keys are errors.  The config hash is the sha256 of the
canonical JSON form, so two configs that parse to the same values share a hash
regardless of key order, comments or whitespace in the file.
"""
from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import ModelConfig
from .persist import canonical_json, config_hash
from .temporal import TrainConfig
from .walks import WalkConfig

DEFAULTS: dict[str, dict] = {
    "run": {"seed": 0, "resolution": "1"},
    "walk": {"W": 5, "L": 32, "p": 1.0, "q": 1.0},
    "model": {"d": 256, "layers": 8, "heads": 8, "k": 16, "mlp_hidden": 0, "ff_mult": 4,
              "head_init_scale": 0.01},
    "train": {"epochs": 15, "batch_size": 32, "learning_rate": 1e-4, "lambda1": 5.0, "lambda2": 10.0,
              "lambda3": 5.0, "segments": 8, "mask_rate": 0.15, "mlm_norm": "sequence",
              "edge_input": "zg", "strict_alg1": False, "split_select": "longest"},
    "eval": {"k_list": "5,10", "anomaly_direction": "high", "embed_source": "wtm",
             "segment_method": "dp", "score_mask_rate": 0.15},
}

# laptop-scale preset; learning rate raised so 20 epochs suffice
DESK = {
    "model": {"d": 32, "layers": 2, "heads": 4, "k": 8},
    "train": {"epochs": 20, "learning_rate": 3e-4},
}


class ConfigError(ValueError):
    def __init__(self, keys: list[str], detail: str = ""):
        self.keys = keys
        msg = "invalid config keys: " + ", ".join(keys)
        super().__init__(msg + (f" ({detail})" if detail else ""))


def _coerce(raw, default, key: str):
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError([key], f"not a boolean: {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (TypeError, ValueError):
        raise ConfigError([key], f"cannot parse {raw!r}") from None
    return str(raw).strip()


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def default(cls, desk: bool = False) -> "RunConfig":
        rc = cls()
        if desk:
            rc.update(DESK)
        return rc

    @classmethod
    def from_file(cls, path, desk: bool = False) -> "RunConfig":
        rc = cls.default(desk)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str  # keep key case (W, L)
        text = Path(path).read_text()
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as e:
            raise ConfigError(["<syntax>"], str(e).splitlines()[0]) from None
        rc.update({s: dict(parser.items(s)) for s in parser.sections()})
        return rc

    def update(self, overrides: dict) -> None:
        bad = []
        for section, items in overrides.items():
            if section not in DEFAULTS:
                bad.append(f"[{section}]")
                continue
            for key, raw in items.items():
                if key not in DEFAULTS[section]:
                    bad.append(f"{section}.{key}")
                    continue
                self.values[section][key] = _coerce(raw, DEFAULTS[section][key], f"{section}.{key}")
        if bad:
            raise ConfigError(bad, "unknown")

    def set(self, dotted: str, raw) -> None:
        section, _, key = dotted.partition(".")
        self.update({section: {key: raw}})

    def __getitem__(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def resolution(self) -> str | int:
        r = self.values["run"]["resolution"]
        return int(r) if r.lstrip("-").isdigit() else r

    @property
    def k_list(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.values["eval"]["k_list"].split(",") if x.strip())

    def walk_config(self) -> WalkConfig:
        return WalkConfig(seed=self.seed, **self.values["walk"])

    def model_config(self, num_nodes: int, T: int) -> ModelConfig:
        m = dict(self.values["model"])
        m["mlp_hidden"] = m["mlp_hidden"] or None
        return ModelConfig(num_nodes=num_nodes, T=T, **m)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.values["train"])

    def validate(self) -> None:
        """Build every derived config once; collect the offending keys."""
        bad = []
        try:
            self.walk_config()
        except ValueError:
            bad += [f"walk.{k}" for k in self.values["walk"] if not self._walk_ok(k)]
        try:
            self.model_config(1, 1)
        except ValueError:
            bad.append("model.d/model.heads")
        tc = self.train_config()
        try:
            tc.validate()
        except ValueError as e:
            bad += [f"train.{k.strip()}" for k in str(e).split(":", 1)[1].split(",")]
        if self.values["model"]["head_init_scale"] <= 0:
            bad.append("model.head_init_scale")
        ev = self.values["eval"]
        if ev["anomaly_direction"] not in ("high", "low"):
            bad.append("eval.anomaly_direction")
        if ev["embed_source"] not in ("wtm", "zg"):
            bad.append("eval.embed_source")
        if ev["segment_method"] not in ("dp", "topdown"):
            bad.append("eval.segment_method")
        if not 0 < ev["score_mask_rate"] < 1:
            bad.append("eval.score_mask_rate")
        try:
            if not self.k_list or min(self.k_list) < 1:
                bad.append("eval.k_list")
        except ValueError:
            bad.append("eval.k_list")
        if bad:
            raise ConfigError(bad)

    def _walk_ok(self, key: str) -> bool:
        v = self.values["walk"][key]
        return v > 0 if key in ("p", "q") else v >= (2 if key == "L" else 1)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    @property
    def hash(self) -> str:
        return config_hash(self.values)

    def dumps(self) -> str:
        lines = [f"# config {self.hash}"]
        for section, items in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in items.items()]
            lines.append("")
        return "\n".join(lines)

    def canonical(self) -> str:
        return canonical_json(self.values)
