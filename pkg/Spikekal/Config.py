"""
TOML run configuration and the run manifest.

    scenario = "lorenz"
    seed = 3
    teacher_steps = 800
    q_diag = [0.1, 0.1, 0.1]

    [lif]
    tau1 = 0.02

    [plasticity]
    lr = 0.05

    [decoder]
    tau_dec = 0.005

Keys left out take the scenario defaults and the SpikeKalConfig defaults.
"""
from __future__ import annotations

import json
import logging
import re
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from Spikekal.Errors import ConfigError
from Spikekal.HybridFilter import DecoderParams, SpikeKalConfig
from Spikekal.Scenarios import ScenarioConfig
from Spikekal.snn.Neuron import LifParams
from Spikekal.snn.Plasticity import PlasticityParams


logger = logging.getLogger(__name__)

TOOL_VERSION = '0.1'
MANIFEST_NAME = 'manifest.json'

_TUPLE_KEYS = ('q_diag', 'r_diag', 'x0')
SCENARIO_KEYS = tuple(f.name for f in fields(ScenarioConfig) if f.name != 'name') + ('scenario',)
SPIKEKAL_KEYS = tuple(f.name for f in fields(SpikeKalConfig) if f.name not in ('lif', 'plasticity', 'decoder'))
# snn_dt 由 dt / snn_substeps 决定
TABLES = {
    'lif': (LifParams, tuple(f.name for f in fields(LifParams) if f.name != 'snn_dt')),
    'plasticity': (PlasticityParams, tuple(f.name for f in fields(PlasticityParams))),
    'decoder': (DecoderParams, tuple(f.name for f in fields(DecoderParams))),
}


def _key_line(text: str, key: str, table: Optional[str] = None) -> Optional[int]:
    current = None
    pattern = re.compile(rf'^\s*"?{re.escape(key)}"?\s*=')
    for line_no, line in enumerate(text.splitlines(), start=1):
        header = re.match(r'^\s*\[\s*([^\]]+?)\s*\]', line)
        if header:
            current = header.group(1)
            continue
        if current == table and pattern.match(line):
            return line_no
    return None


def _table_line(text: str, table: str) -> Optional[int]:
    for line_no, line in enumerate(text.splitlines(), start=1):
        if re.match(rf'^\s*\[\s*{re.escape(table)}\s*\]', line):
            return line_no
    return None


def _check_keys(text: str, values: dict, allowed, table: Optional[str] = None):
    for key in values:
        if key not in allowed:
            where = f"[{table}]" if table else "top level"
            raise ConfigError(f"unknown configuration key '{key}' at {where}", key=key,
                              line=_key_line(text, key, table))


def _build(text: str, builder, values: dict, table: Optional[str] = None):
    try:
        return builder(**values)
    except ConfigError as exc:
        if exc.line is None and exc.key is not None:
            exc.line = _key_line(text, exc.key, table)
        raise
    except TypeError as exc:
        raise ConfigError(f"invalid value: {exc}") from None


def parse_config(text: str, scenario: Optional[str] = None, seed: Optional[int] = None,
                 teacher_steps: Optional[int] = None) -> tuple[ScenarioConfig, SpikeKalConfig]:
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, 'lineno', None)
        if line is None:
            match = re.search(r'line (\d+)', str(exc))
            line = int(match.group(1)) if match else None
        raise ConfigError(f"configuration is not valid TOML: {exc}", line=line) from None

    top = {k: v for k, v in document.items() if not isinstance(v, dict)}
    tables = {k: v for k, v in document.items() if isinstance(v, dict)}
    _check_keys(text, top, SCENARIO_KEYS + SPIKEKAL_KEYS)
    for name in tables:
        if name not in TABLES:
            raise ConfigError(f"unknown configuration table [{name}]", key=name, line=_table_line(text, name))

    scenario_values = {k: tuple(v) if k in _TUPLE_KEYS else v for k, v in top.items() if k in SCENARIO_KEYS}
    spikekal_values = {k: v for k, v in top.items() if k in SPIKEKAL_KEYS}
    name = scenario_values.pop('scenario', 'linear_motion')
    if scenario is not None:
        name = scenario
    if seed is not None:
        scenario_values['seed'] = seed
    if teacher_steps is not None:
        spikekal_values['teacher_steps'] = teacher_steps

    for table, (builder, allowed) in TABLES.items():
        values = tables.get(table, {})
        _check_keys(text, values, allowed, table)
        spikekal_values[table] = _build(text, builder, values, table)

    scenario_config = _build(text, lambda **kw: ScenarioConfig.default(name, **kw), scenario_values)
    spikekal_config = _build(text, SpikeKalConfig, spikekal_values)
    return scenario_config, spikekal_config


def load_config(path, scenario: Optional[str] = None, seed: Optional[int] = None,
                teacher_steps: Optional[int] = None) -> tuple[ScenarioConfig, SpikeKalConfig]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    logger.info("loading configuration %s", path)
    return parse_config(path.read_text(), scenario, seed, teacher_steps)


def spikekal_config_from_dict(values: dict) -> SpikeKalConfig:
    values = dict(values)
    lif = LifParams(**values.pop('lif'))
    plasticity = PlasticityParams(**values.pop('plasticity'))
    decoder = DecoderParams(**values.pop('decoder'))
    return SpikeKalConfig(lif=lif, plasticity=plasticity, decoder=decoder, **values)


def scenario_config_from_dict(values: dict) -> ScenarioConfig:
    values = {k: tuple(v) if k in _TUPLE_KEYS else v for k, v in values.items()}
    return ScenarioConfig(**values)


@dataclass
class RunManifest:
    command: str
    scenario: ScenarioConfig
    spikekal: SpikeKalConfig
    config_path: Optional[str] = None
    out_dir: Optional[str] = None
    methods: Optional[list[str]] = None
    seeds: Optional[list[int]] = None
    matched: bool = False
    checkpoint: Optional[str] = None
    version: str = TOOL_VERSION

    @property
    def seed(self) -> int:
        return self.scenario.seed

    def to_dict(self) -> dict:
        return {
            'version': self.version,
            'command': self.command,
            'config_path': self.config_path,
            'out_dir': self.out_dir,
            'seed': self.seed,
            'methods': self.methods,
            'seeds': self.seeds,
            'matched': self.matched,
            'checkpoint': self.checkpoint,
            'scenario': asdict(self.scenario),
            'spikekal': asdict(self.spikekal),
        }

    @staticmethod
    def from_dict(document: dict) -> RunManifest:
        try:
            return RunManifest(command=document['command'],
                               scenario=scenario_config_from_dict(document['scenario']),
                               spikekal=spikekal_config_from_dict(document['spikekal']),
                               config_path=document.get('config_path'), out_dir=document.get('out_dir'),
                               methods=document.get('methods'), seeds=document.get('seeds'),
                               matched=bool(document.get('matched', False)),
                               checkpoint=document.get('checkpoint'),
                               version=document.get('version', TOOL_VERSION))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed run manifest: {exc}") from None


def write_manifest(manifest: RunManifest, out_dir) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(manifest.to_dict(), indent=2) + '\n')
    logger.info("manifest written to %s", path)
    return path


def load_manifest(path) -> RunManifest:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest {path} is not valid JSON: {exc.msg}", line=exc.lineno) from None
    return RunManifest.from_dict(document)
