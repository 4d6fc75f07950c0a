"""Flat key=value experiment configuration with CLI flag overrides.

The config file is plain text, one ``key = value`` per line, ``#`` comments,
list values comma-separated.  Every key doubles as a command-line flag of
the same name (underscores become dashes), so a run is fully described by
one diffable file plus any overrides, both of which are captured in the
run record.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, field
from pathlib import Path


@dataclass
class ExperimentConfig:
    # dataset source: a manifest path, or synthetic generation when empty
    manifest: str = ""
    n_classes: int = 0                 # 0 = derive from the manifest/synth config
    synth_classes: int = 5
    synth_recordings_per_class: int = 40
    synth_frames: int = 100
    synth_grid: int = 32
    synth_speed: float = 0.5
    synth_target_depth: int = 1500
    synth_distractor_depth: int = 4000
    synth_p_false_positive: float = 0.002
    synth_p_false_negative: float = 0.05
    synth_jitter_sigma: float = 0.7
    augment: bool = False              # x8 mirror/rotation expansion after load/synth

    # sweep axes ("frames" is the frame-based baseline, raw mode only)
    kinds: list = field(default_factory=lambda: ["frames", "firstand", "onoff", "oobu"])
    feature_modes: list = field(default_factory=lambda: ["raw", "random", "trained"])
    neuron_counts: list = field(default_factory=lambda: [1, 2, 3, 4, 9, 16])
    pool_sizes: list = field(default_factory=lambda: [1, 2, 3, 4, 6, 8, 12, 16, 24])
    pool_methods: list = field(default_factory=lambda: ["1d", "2d"])

    # frame-to-event conversion
    firstand_success_threshold: int = 6
    firstand_fifo_capacity: int = 0    # events per pulse; 0 = unlimited
    change_threshold: int = 2
    uni_count_threshold: int = 2
    bi_count_threshold: int = 1
    on_is_increase: bool = True

    # feature layer
    feast_roi_side: int = 5
    feast_window_us: int = 2000
    feast_mix_rate: float = 0.001
    feast_shrink_step: float = 0.002
    feast_grow_step: float = 0.004
    feast_active_bits: int = 32
    retrain_per_trial: bool = False

    # classification
    ridge_lambda: float = 0.1
    train_fraction: float = 0.9
    n_trials: int = 5
    sample_every_frames: int = 8
    sample_every_firstand: int = 51
    sample_every_onoff: int = 74
    sample_every_oobu: int = 201
    activity_fraction: float = 0.1

    seed: int = 0
    jobs: int = 1

    def sample_every(self, kind: str) -> int:
        return {"frames": self.sample_every_frames,
                "firstand": self.sample_every_firstand,
                "onoff": self.sample_every_onoff,
                "oobu": self.sample_every_oobu}[kind]


_LIST_ELEMENT_TYPES = {
    "kinds": str,
    "feature_modes": str,
    "pool_methods": str,
    "neuron_counts": int,
    "pool_sizes": int,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_value(name: str, kind: type, text: str):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is list:
        element = _LIST_ELEMENT_TYPES[name]
        items = [part.strip() for part in text.split(",") if part.strip()]
        return [element(item) for item in items]
    return text


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; later keys override earlier ones."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def make_config(config_path: str | Path | None = None,
                overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then config file values, then override strings."""
    merged: dict[str, str] = {}
    if config_path:
        merged.update(parse_kv_text(Path(config_path).read_text(), source=str(config_path)))
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})

    cfg = ExperimentConfig()
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    for key, text in merged.items():
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        kind = type(current)
        setattr(cfg, key, _parse_value(key, kind, str(text)))
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(ExperimentConfig):
        out[f.name] = getattr(cfg, f.name)
    return out


def config_to_text(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def config_field_names() -> list[str]:
    return [f.name for f in fields(ExperimentConfig)]
