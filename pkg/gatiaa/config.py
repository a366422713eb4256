"""
Process configuration: environment, logging and run configuration files.

Precedence for every setting is defaults < config file < `--set key=value`
overrides < dedicated command-line flags.
"""
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from dotenv import load_dotenv

from gatiaa.utils.errors import ConfigError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
SECTIONS = ('model', 'train', 'synth', 'data', 'eval')


@dataclass(frozen=True)
class Environment:
    threads: int = 1
    log_level: str = 'INFO'
    deterministic: bool = False


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


def load_env(path: Optional[str] = None) -> Environment:
    """Load `.env` (if present) and read the GATIAA_* variables."""
    load_dotenv(path)
    try:
        threads = int(os.getenv('GATIAA_THREADS', '1'))
    except ValueError:
        raise ConfigError(f"GATIAA_THREADS must be an integer, got {os.getenv('GATIAA_THREADS')!r}",
                          {'key': 'GATIAA_THREADS'})
    if threads < 1:
        raise ConfigError(f"GATIAA_THREADS must be >= 1, got {threads}", {'key': 'GATIAA_THREADS'})
    return Environment(
        threads=threads,
        log_level=os.getenv('GATIAA_LOG_LEVEL', 'INFO').upper(),
        deterministic=_env_bool('GATIAA_DETERMINISTIC', False)
    )


def configure_logging(level: str = 'INFO'):
    """Configure process logging."""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)


@dataclass(frozen=True)
class DataConfig:
    manifest: Optional[str] = None
    train_split: str = 'train'
    val_split: str = 'val'
    test_split: str = 'test'
    synth_count: int = 2000
    synth_seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    tau: float = 5.0
    oracle_replay: bool = False
    augmented: bool = True
    confusion: bool = False
    seeds: int = 1


def parse_config_text(text: str, source: str = '<config>') -> Dict[str, str]:
    """Flat `key=value` lines; blank lines and `#` comments are ignored."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition('=')
        if not sep:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw.strip()!r}",
                              {'line': line_no, 'source': source})
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key", {'line': line_no, 'source': source})
        values[key] = value.strip()
    return values


def parse_overrides(items: Optional[List[str]]) -> Dict[str, str]:
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got {item!r}", {'override': item})
        overrides[key.strip()] = value.strip()
    return overrides


def _split_sections(values: Mapping[str, str]) -> Dict[str, Dict[str, str]]:
    sections: Dict[str, Dict[str, str]] = {name: {} for name in SECTIONS}
    for key, value in values.items():
        section, dot, name = key.partition('.')
        if not dot or section not in sections or not name:
            raise ConfigError(f"unknown configuration key {key!r}; expected one of "
                              f"{', '.join(s + '.*' for s in SECTIONS)}", {'key': key})
        sections[section][name] = value
    return sections


@dataclass
class RunConfig:
    command: str
    model: Any
    train: Any
    synth: Any
    data: DataConfig
    eval: EvalConfig
    env: Environment = field(default_factory=Environment)
    source: Optional[str] = None
    explicit_keys: frozenset = frozenset()

    @property
    def deterministic(self) -> bool:
        return self.env.deterministic

    @property
    def workers(self) -> int:
        return 1 if self.env.deterministic else self.env.threads

    def effective_lines(self) -> List[str]:
        """Every setting as a sorted `section.key=value` line."""
        lines = []
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                value = getattr(obj, f.name)
                if isinstance(value, bool):
                    value = 'true' if value else 'false'
                elif isinstance(value, tuple):
                    value = ','.join(str(v) for v in value)
                lines.append(f"{section}.{f.name}={value}")
        lines.append(f"env.deterministic={'true' if self.env.deterministic else 'false'}")
        lines.append(f"env.threads={self.env.threads}")
        return sorted(lines)


def load_run_config(command: str, path: Optional[str] = None, overrides: Optional[Mapping[str, str]] = None,
                    seed: Optional[int] = None, deterministic: Optional[bool] = None,
                    env: Optional[Environment] = None) -> RunConfig:
    """Merge defaults, the config file, overrides and flags into a validated RunConfig."""
    from gatiaa.schemas import (
        DataConfigSchema,
        EvalConfigSchema,
        ModelSpecSchema,
        SynthConfigSchema,
        TrainConfigSchema,
        load_section
    )

    values: Dict[str, str] = {}
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}", {'path': str(config_path)})
        values.update(parse_config_text(config_path.read_text(encoding='utf-8'), str(config_path)))
    values.update(overrides or {})
    if seed is not None:
        values['train.seed'] = str(seed)
        values.setdefault('data.synth_seed', str(seed))

    env = env or Environment()
    if deterministic is not None:
        env = Environment(env.threads, env.log_level, deterministic or env.deterministic)

    sections = _split_sections(values)
    config = RunConfig(
        command=command,
        model=load_section(ModelSpecSchema(), sections['model'], 'model'),
        train=load_section(TrainConfigSchema(), sections['train'], 'train'),
        synth=load_section(SynthConfigSchema(), sections['synth'], 'synth'),
        data=load_section(DataConfigSchema(), sections['data'], 'data'),
        eval=load_section(EvalConfigSchema(), sections['eval'], 'eval'),
        env=env,
        source=str(path) if path else None,
        explicit_keys=frozenset(values)
    )
    for line in config.effective_lines():
        logger.info(f"config {line}")
    return config
