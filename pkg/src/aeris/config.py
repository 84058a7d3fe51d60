"""Experiment configuration: YAML files or bundled presets, with environment overrides.

A config is a nested mapping. ``extends: <preset or path>`` inherits from
another config and deep-merges on top of it. Any variable of the form
``AERIS_<SECTION>_<KEY>=value`` overrides ``config[section][key]``; the value
is parsed as YAML, so numbers and lists work as expected.
"""
from __future__ import annotations

import copy
import logging
import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .channel import ChannelParams, dbm_to_watts
from .energy import EnergyParams
from .environment import EnvConfig
from .learning import TrainConfig
from .phaseopt import PsoConfig
from .scenario import AreaGrid, ClusterSpec, ScenarioState, generate_scenario, load_scenario, make_ris

log = logging.getLogger(__name__)

METHODS = ("drl_dqn", "drl_ac", "brute_force", "rwp")
SWEEP_AXES = ("tx_power", "uav_count", "ris_elements")
ENV_PREFIX = "AERIS_"
# process-level switches that are not config overrides
_RESERVED_ENV = {"AERIS_PURE_PYTHON", "AERIS_NO_EXT"}


class ConfigError(ValueError):
    """Invalid, missing or unreadable experiment configuration."""


def preset_names() -> list[str]:
    root = resources.files("aeris") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _read_yaml(text: str, origin: str) -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{origin}: not valid YAML: {exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    return doc


def _load_raw(ref: str, base_dir: Path | None, seen: tuple[str, ...]) -> dict:
    path = Path(ref)
    if base_dir is not None and not path.is_absolute() and not path.exists():
        path = base_dir / ref
    if path.suffix in (".yaml", ".yml") or path.exists():
        if not path.is_file():
            raise ConfigError(f"config file not found: {ref}")
        doc = _read_yaml(path.read_text(), str(path))
        here = path.parent
        origin = str(path.resolve())
    else:
        res = resources.files("aeris") / "presets" / f"{ref}.yaml"
        if not res.is_file():
            raise ConfigError(f"unknown config {ref!r}: no such file and no preset "
                              f"(presets: {', '.join(preset_names())})")
        doc = _read_yaml(res.read_text(), f"preset {ref}")
        here = None
        origin = f"preset:{ref}"
    if origin in seen:
        raise ConfigError(f"config inheritance cycle through {ref}")
    parent = doc.pop("extends", None)
    if parent is not None:
        doc = deep_merge(_load_raw(str(parent), here, seen + (origin,)), doc)
    return doc


def deep_merge(base: Mapping, top: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in top.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _match_path(doc: dict, tokens: list[str]) -> list[str] | None:
    """Split underscore tokens into a key path that exists in ``doc`` (longest key first)."""
    for cut in range(len(tokens), 0, -1):
        key = "_".join(tokens[:cut])
        if key not in doc:
            continue
        rest = tokens[cut:]
        if not rest:
            return [key]
        if isinstance(doc[key], dict):
            sub = _match_path(doc[key], rest)
            if sub is not None:
                return [key, *sub]
            # unknown leaf inside a known section: create it
            return [key, "_".join(rest)]
    return None


def apply_env_overrides(doc: dict, environ: Mapping[str, str] | None = None) -> dict:
    environ = os.environ if environ is None else environ
    doc = copy.deepcopy(doc)
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX) or name in _RESERVED_ENV:
            continue
        tokens = name[len(ENV_PREFIX):].lower().split("_")
        path = _match_path(doc, tokens)
        if path is None:
            log.debug("ignoring %s: no matching config section", name)
            continue
        try:
            value = yaml.safe_load(environ[name])
        except yaml.YAMLError as exc:
            raise ConfigError(f"{name}: cannot parse value {environ[name]!r}") from exc
        node = doc
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
        log.info("override %s = %r", ".".join(path), value)
    return doc


def load_config_dict(ref: str, environ: Mapping[str, str] | None = None) -> dict:
    return apply_env_overrides(_load_raw(ref, None, ()), environ)


# ---------------------------------------------------------------------------
# typed view


def _kwargs_for(cls, section: Mapping[str, Any], where: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return dict(section)


@dataclass(frozen=True)
class JointConfig:
    rounds: int = 3
    tolerance: float = 0.005  # relative improvement below which the outer loop stops
    refresh_episodes: int = 500
    refresh_eps_start: float = 0.3
    rollout_seeds: int = 4


@dataclass(frozen=True)
class BruteForceConfig:
    cap: int = 1000
    phase_samples: int = 1000


@dataclass(frozen=True)
class ObjectiveConfig:
    # added per served UE to the phase cost; large values rank served count first
    served_bonus_bps: float = 0.0


@dataclass(frozen=True)
class SweepConfig:
    axis: str | None = None
    values: tuple[float, ...] = ()
    warm_start: bool = False  # learned planners continue from the previous sweep value


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    scenario: dict
    channel: ChannelParams
    energy: EnergyParams
    env: EnvConfig
    training: TrainConfig
    pso: PsoConfig
    joint: JointConfig
    brute_force: BruteForceConfig
    objective: ObjectiveConfig
    sweep: SweepConfig
    methods: tuple[str, ...]
    seeds: tuple[int, ...]
    out_dir: str
    workers: int = 1
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def figure(self) -> str:
        return {"tx_power": "fig2", "uav_count": "fig3", "ris_elements": "fig4"}.get(self.sweep.axis, "baseline")

    def sweep_values(self) -> tuple:
        return self.sweep.values if self.sweep.axis else (None,)

    def build_scenario(self) -> ScenarioState:
        spec = self.scenario
        if spec.get("path"):
            return load_scenario(spec["path"])
        try:
            area = AreaGrid(float(spec["width_m"]), float(spec["height_m"]), float(spec["cell_size_m"]))
            cl = dict(spec.get("clusters") or {})
            if cl.get("centers") is not None:
                cl["centers"] = tuple(tuple(float(v) for v in c) for c in cl["centers"])
            clusters = ClusterSpec(**cl)
            ris_spec = spec.get("ris") or {}
            ris = make_ris([tuple(p) for p in ris_spec.get("positions", [])],
                           int(ris_spec.get("elements", 16)), int(ris_spec.get("bits", 2)),
                           ris_spec.get("spacing_m", self.channel.spacing_m))
            kw = {k: spec[k] for k in ("altitude_m", "battery_init_j", "battery_min_j") if k in spec}
            if "class_mix" in spec:
                kw["class_mix"] = tuple(float(x) for x in spec["class_mix"])
            return generate_scenario(int(spec.get("seed", self.seed)), area, int(spec["n_ues"]), clusters,
                                     int(spec.get("uav_count", 2)), ris, **kw)
        except KeyError as exc:
            raise ConfigError(f"scenario: missing key {exc}") from exc
        except TypeError as exc:
            raise ConfigError(f"scenario: {exc}") from exc

    def at(self, value, scenario: ScenarioState):
        """Scenario and channel parameters for one sweep value."""
        axis = self.sweep.axis
        channel = self.channel
        if axis is None or value is None:
            return scenario, channel
        if axis == "tx_power":
            return scenario, replace(channel, tx_power_w=dbm_to_watts(float(value)))
        if axis == "uav_count":
            return scenario.with_uav_count(int(value), scenario.seed), channel
        if axis == "ris_elements":
            ris = scenario.ris
            if not ris:
                raise ConfigError("ris_elements sweep needs at least one RIS")
            new = make_ris([r.position for r in ris], int(value), ris[0].phase_bits, ris[0].element_spacing_m)
            return scenario.with_ris(new), channel
        raise ConfigError(f"unknown sweep axis {axis!r}")


def _channel(section: Mapping) -> ChannelParams:
    section = dict(section)
    dbm = section.pop("tx_power_dbm", None)
    if dbm is not None:
        if "tx_power_w" in section:
            raise ConfigError("channel: give tx_power_dbm or tx_power_w, not both")
        section["tx_power_w"] = dbm_to_watts(float(dbm))
    noise_dbm = section.pop("noise_power_dbm", None)
    if noise_dbm is not None:
        section["noise_power_w"] = dbm_to_watts(float(noise_dbm))
    if "thresholds_db" in section:
        section["thresholds_db"] = tuple(section["thresholds_db"])
    return ChannelParams(**_kwargs_for(ChannelParams, section, "channel"))


def build_config(doc: Mapping, *, seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    """Validate a raw mapping into an :class:`ExperimentConfig`."""
    doc = copy.deepcopy(dict(doc))
    try:
        training = dict(doc.get("training") or {})
        if "hidden" in training:
            training["hidden"] = tuple(int(h) for h in training["hidden"])
        sweep = dict(doc.get("sweep") or {})
        unknown = set(sweep) - {"axis", "values", "warm_start"}
        if unknown:
            raise ConfigError(f"sweep: unknown keys {sorted(unknown)}")
        values = tuple(sweep.get("values") or ())
        axis = sweep.get("axis")
        if axis is not None and axis not in SWEEP_AXES:
            raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}, got {axis!r}")
        if axis is not None and not values:
            raise ConfigError("sweep.values must be non-empty when an axis is set")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigError(f"sweep values must be strictly increasing: {list(values)}")
        methods = tuple(doc.get("methods") or ())
        if not methods:
            raise ConfigError("at least one method is required")
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        seeds = tuple(int(s) for s in (doc.get("seeds") or ()))
        if not seeds:
            raise ConfigError("at least one evaluation seed is required")
        master = int(doc.get("seed", 0) if seed is None else seed)
        training.setdefault("seed", master)
        pso = dict(doc.get("pso") or {})
        cfg = ExperimentConfig(
            name=str(doc.get("name", "experiment")),
            seed=master,
            scenario=dict(doc.get("scenario") or {}),
            channel=_channel(doc.get("channel") or {}),
            energy=EnergyParams(**_kwargs_for(EnergyParams, doc.get("energy") or {}, "energy")),
            env=EnvConfig(**_kwargs_for(EnvConfig, doc.get("env") or {}, "env")),
            training=TrainConfig(**_kwargs_for(TrainConfig, training, "training")),
            pso=PsoConfig(**_kwargs_for(PsoConfig, pso, "pso")),
            joint=JointConfig(**_kwargs_for(JointConfig, doc.get("joint") or {}, "joint")),
            brute_force=BruteForceConfig(**_kwargs_for(BruteForceConfig, doc.get("brute_force") or {},
                                                       "brute_force")),
            objective=ObjectiveConfig(**_kwargs_for(ObjectiveConfig, doc.get("objective") or {}, "objective")),
            sweep=SweepConfig(axis, values, bool(sweep.get("warm_start", False))),
            methods=methods,
            seeds=seeds,
            out_dir=str(out_dir if out_dir is not None else doc.get("out_dir", "runs")),
            workers=int(doc.get("workers", 1)),
            raw=doc,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.objective.served_bonus_bps < 0:
        raise ConfigError("objective.served_bonus_bps must be non-negative")
    if cfg.joint.rounds < 1:
        raise ConfigError("joint.rounds must be >= 1")
    return cfg


def load_config(ref: str, *, seed: int | None = None, out_dir: str | None = None,
                environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    return build_config(load_config_dict(ref, environ), seed=seed, out_dir=out_dir)
