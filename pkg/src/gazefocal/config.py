"""Run configuration: INI-style ``key = value`` files, defaults, validation.

A config file is a list of ``key = value`` lines, optionally under a single
``[run]`` header; ``#`` and ``;`` start comments. Values are JSON literals
(``64``, ``1e-2``, ``true``, ``[0.5, 0.5]``) or bare strings. Unknown keys are
rejected. Augmentation profiles use dotted keys such as
``augment.teacher_focal.contrast_lower = 2.8``.

``config_schema()`` returns the equivalent JSON schema.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import PROFILES, AugmentProfile
from .hva import HvaConfig
from .network import SEMA_MODES, GlobalFocalConfig
from .optim import LrSchedule
from .system import PRESETS, StudentTeacher, StudentTeacherConfig, apply_preset


class ConfigError(ValueError):
    pass


def _pair(value) -> tuple[float, float]:
    return (float(value[0]), float(value[1]))


@dataclass(frozen=True)
class RunConfig:
    image_size: int = 256
    patch: int = 8
    window: int = 4
    dim: int = 64
    channels: int = 1
    batch_size: int = 64
    epochs: int = 50
    lr: float = 1e-2
    decay_steps: int = 100_000
    decay_rate: float = 0.2
    early_stop_patience: int = 20
    seed: int = 0
    val_fraction: float = 0.15
    preset: str = "full"
    # 0 means "take the class count from the manifest"
    n_classes: int = 0
    teacher_classes: int = 3
    lambda_in: tuple[float, float] = (0.5, 0.5)
    lambda_out: tuple[float, float] = (0.5, 0.5)
    inter_lambda_in: tuple[float, float] = (0.5, 0.5)
    inter_lambda_out: tuple[float, float] = (0.5, 0.5)
    val_weights: tuple[float, float] = (1.0, 1.0)
    hvat_weights: tuple[float, float] = (1.0, 1.0)
    teacher_frozen: bool = True
    sema_mode: str = "track"
    hva_sigma: float = 64.0
    hva_threshold: int = 140
    hva_connectivity: int = 8
    augment: dict = field(default_factory=lambda: {k: asdict(v) for k, v in PROFILES.items()})

    def __post_init__(self):
        if self.image_size % self.patch:
            raise ConfigError(f"image_size {self.image_size} is not divisible by patch {self.patch}")
        if (self.image_size // self.patch) % self.window:
            raise ConfigError(
                f"token grid {self.image_size // self.patch} is not divisible by window {self.window}"
            )
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; expected one of {', '.join(PRESETS)}")
        if self.batch_size < 1 or self.epochs < 0 or self.early_stop_patience < 1:
            raise ConfigError("batch_size and early_stop_patience must be >= 1, epochs >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.channels not in (1, 3):
            raise ConfigError(f"channels must be 1 or 3, got {self.channels}")
        try:
            self.schedule()
            self.hva()
            self.profiles()
            self.system_config(2)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def schedule(self) -> LrSchedule:
        return LrSchedule(self.lr, self.decay_steps, self.decay_rate)

    def hva(self) -> HvaConfig:
        return HvaConfig(self.hva_sigma, self.hva_threshold, self.hva_connectivity)

    def profiles(self) -> dict[str, AugmentProfile]:
        return {k: AugmentProfile(**v) for k, v in self.augment.items()}

    def system_config(self, n_classes: int | None = None, teacher_classes: int | None = None) -> StudentTeacherConfig:
        gf = GlobalFocalConfig(
            dim=self.dim,
            window=self.window,
            lambda_in=_pair(self.lambda_in),
            lambda_out=_pair(self.lambda_out),
            sema_mode=self.sema_mode,
        )
        cfg = StudentTeacherConfig(
            student=gf,
            teacher=gf,
            inter_lambda_in=_pair(self.inter_lambda_in),
            inter_lambda_out=_pair(self.inter_lambda_out),
            val_weights=_pair(self.val_weights),
            hvat_weights=_pair(self.hvat_weights),
            teacher_frozen=self.teacher_frozen,
            n_classes=n_classes or self.n_classes or 2,
            teacher_classes=teacher_classes or self.teacher_classes,
            patch=self.patch,
            channels=self.channels,
        )
        return apply_preset(cfg, self.preset)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k, v in out.items():
            if isinstance(v, tuple):
                out[k] = list(v)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for f in fields(cls):
            if f.name in data:
                kwargs[f.name] = _coerce(f.name, data[f.name])
        return cls(**kwargs)


_DEFAULTS = RunConfig.__dataclass_fields__


def _coerce(name: str, value):
    default = _DEFAULTS[name].default
    if name == "augment":
        merged = {k: asdict(v) for k, v in PROFILES.items()}
        for profile, values in value.items():
            if profile not in merged:
                raise ConfigError(f"unknown augmentation profile {profile!r}")
            for key, v in values.items():
                if key not in merged[profile]:
                    raise ConfigError(f"unknown augmentation parameter augment.{profile}.{key}")
                merged[profile][key] = float(v)
        return merged
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{name} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"{name} must be a pair of numbers, got {value!r}")
        return _pair(value)
    if isinstance(default, str):
        return str(value)
    return value


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    has_header = any(line.strip().startswith("[") for line in text.splitlines())
    offset = 0 if has_header else 1
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    try:
        parser.read_string(text if has_header else "[run]\n" + text, source=source)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] - offset
        line = text.splitlines()[lineno - 1].strip()
        raise ConfigError(f"{source} (line {lineno}): cannot parse {line!r}; expected key = value") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f" (line {lineno - offset})" if lineno else ""
        raise ConfigError(f"{source}{where}: {exc.message.splitlines()[0]}") from None
    sections = parser.sections()
    if sections not in ([], ["run"]):
        raise ConfigError(f"{source}: only a single [run] section is allowed, found {sections}")
    data: dict = {}
    for key, raw in (parser.items("run") if sections else []):
        value = _parse_value(raw)
        if key.startswith("augment."):
            parts = key.split(".")
            if len(parts) != 3:
                raise ConfigError(f"{source}: malformed augmentation key {key!r}")
            data.setdefault("augment", {}).setdefault(parts[1], {})[parts[2]] = value
        else:
            data[key] = value
    try:
        return RunConfig.from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def build_system(run: RunConfig, n_classes: int | None = None, teacher_classes: int | None = None) -> StudentTeacher:
    return StudentTeacher(run.system_config(n_classes, teacher_classes), seed=run.seed)


def config_schema() -> dict:
    props: dict = {}
    for f in fields(RunConfig):
        default = f.default
        if f.name == "augment":
            profile = {
                "type": "object",
                "properties": {k: {"type": "number"} for k in asdict(AugmentProfile())},
                "additionalProperties": False,
            }
            props["augment"] = {
                "type": "object",
                "properties": {k: profile for k in PROFILES},
                "additionalProperties": False,
            }
            continue
        if isinstance(default, bool):
            prop = {"type": "boolean"}
        elif isinstance(default, int):
            prop = {"type": "integer"}
        elif isinstance(default, float):
            prop = {"type": "number"}
        elif isinstance(default, tuple):
            prop = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
        else:
            prop = {"type": "string"}
        if f.name == "preset":
            prop["enum"] = list(PRESETS)
        if f.name == "sema_mode":
            prop["enum"] = list(SEMA_MODES)
        prop["default"] = list(default) if isinstance(default, tuple) else default
        props[f.name] = prop
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "gazefocal run configuration",
        "type": "object",
        "properties": props,
        "additionalProperties": False,
    }
