"""Run configuration: flat key=value sections in a plain text file.

Example::

    [model]
    vocab_size = 70
    dim = 64
    layers = 2
    heads = 4

    [lora]
    rank = 4
    alpha = 32.0

    [vat]
    epochs = 30
    pgd_epochs = 15

    [corruption]
    shuffle_prob = 0.0
    lang = en

    [decode]
    strategy = greedy

    [paths]
    corpus = corpus.txt
    checkpoint_dir = ckpt

    [run]
    seed = 0

Every key mirrors a field of the corresponding configuration dataclass;
missing keys fall back to the dataclass defaults.  One global seed drives
all randomness; per-component substreams are derived from it by stable
name hashes (see rng.component_rng), so the corruption stream, the model
init, the training shuffle, and decoding never interfere.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .corpus import CorruptionConfig
from .decode import DecodeConfig
from .errors import ConfigError
from .model import ModelConfig
from .vat import VATConfig

SECTIONS = ("model", "lora", "vat", "corruption", "decode", "paths", "run")


@dataclass(frozen=True)
class LoraSettings:
    rank: int = 4
    alpha: float = 8.0


@dataclass(frozen=True)
class Paths:
    corpus: str = ""
    stopwords_dir: str = ""
    checkpoint_dir: str = ""
    eval_set: str = ""
    vocab: str = ""


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    lora: LoraSettings
    vat: VATConfig
    corruption: CorruptionConfig
    decode: DecodeConfig
    paths: Paths
    seed: int
    lang: str
    tokenize_mode: str
    raw_text: str

    def validate(self, require: tuple[str, ...] = ()) -> None:
        """Check invariants and that the required path entries exist on disk."""
        try:
            self.model.validate()
            self.vat.validate()
            self.decode.validate()
            self.corruption.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.lora.rank < 1:
            raise ConfigError("lora rank must be >= 1")
        if self.lora.alpha <= 0:
            raise ConfigError("lora alpha must be positive")
        for name in require:
            value = getattr(self.paths, name)
            if not value:
                raise ConfigError(f"paths.{name} is required by this command")
            if not Path(value).exists():
                raise ConfigError(f"paths.{name}: {value} does not exist")


def _coerce(value: str, typ, key: str):
    try:
        if typ is bool:
            return value.strip().lower() in ("1", "true", "yes", "on")
        if typ is int:
            return int(value)
        if typ is float:
            return float(value)
        return value
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse {value!r}") from e


def _fill(cls, section: dict[str, str], section_name: str, **forced):
    kwargs = dict(forced)
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"[{section_name}] has unknown key {key!r}")
        f = names[key]
        typ = {"int": int, "float": float, "str": str, "bool": bool}.get(
            f.type if isinstance(f.type, str) else f.type.__name__, str)
        if f.name == "pgd_epochs":
            typ = int
        kwargs[key] = _coerce(raw, typ, f"[{section_name}] {key}")
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"[{section_name}]: {e}") from e


def parse_run_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config parse error: {e}") from e
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")

    def sec(name: str) -> dict[str, str]:
        return dict(cp[name]) if cp.has_section(name) else {}

    model_sec = sec("model")
    if "vocab_size" not in model_sec:
        raise ConfigError("[model] vocab_size is required")
    corruption_sec = sec("corruption")
    lang = corruption_sec.pop("lang", "en")
    tokenize_mode = corruption_sec.pop("tokenize_mode", "whitespace")
    if tokenize_mode not in ("whitespace", "char"):
        raise ConfigError("[corruption] tokenize_mode must be whitespace or char")
    run_sec = sec("run")
    for key in run_sec:
        if key != "seed":
            raise ConfigError(f"[run] has unknown key {key!r}")
    seed = _coerce(run_sec.get("seed", "0"), int, "[run] seed")

    model = _fill(ModelConfig, model_sec, "model")
    lora = _fill(LoraSettings, sec("lora"), "lora")
    vat = _fill(VATConfig, sec("vat"), "vat", seed=seed)
    corruption = _fill(CorruptionConfig, corruption_sec, "corruption", seed=seed)
    decode = _fill(DecodeConfig, sec("decode"), "decode", seed=seed)
    paths = _fill(Paths, sec("paths"), "paths")
    return RunConfig(model=model, lora=lora, vat=vat, corruption=corruption,
                     decode=decode, paths=paths, seed=seed, lang=lang,
                     tokenize_mode=tokenize_mode, raw_text=text)


def load_run_config(path: str | Path, seed_override: int | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    cfg = parse_run_config(text)
    if seed_override is not None:
        return replace_seed(cfg, seed_override)
    return cfg


def replace_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return RunConfig(
        model=cfg.model,
        lora=cfg.lora,
        vat=dataclasses.replace(cfg.vat, seed=seed),
        corruption=dataclasses.replace(cfg.corruption, seed=seed),
        decode=dataclasses.replace(cfg.decode, seed=seed),
        paths=cfg.paths,
        seed=seed,
        lang=cfg.lang,
        tokenize_mode=cfg.tokenize_mode,
        raw_text=cfg.raw_text,
    )
