"""Configuration: INI-style files, validation, presets.

A config file has one section per subsystem, ``key = value`` entries and
``#``/``;`` comments.  Unknown sections or keys are rejected with the line
they appear on.  Every value has a default, so the empty file is a valid
configuration (a 2x2x2 torus, one tile per chip).

Named presets ship with the package and can be used wherever a path is
accepted: ``shapes_mtnoc`` (one 8-tile chip on a 2x2x2 torus joined by the
on-chip network cloud), ``shapes_mt2d`` (same lattice, 2x4 on-chip mesh)
and ``torus3d`` (plain torus, one tile per chip).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .kernel import TimingConfig
from .topology import BuildParams, NetworkInstance, TopologySpec

PRESET_NAMES = ("shapes_mtnoc", "shapes_mt2d", "torus3d")


class ConfigError(ValueError):
    """Unparseable or invalid configuration; message carries diagnostics."""


@dataclass
class SimConfig:
    topology: TopologySpec = field(default_factory=TopologySpec)
    timing: TimingConfig = field(default_factory=TimingConfig)
    memory_words: int = 1 << 20
    cmd_fifo_depth: int = 16
    cq_depth: int = 256
    lut_entries: int = 32
    vc_depth: int = 16
    offchip_vcs: int = 2
    serialization_factor: int = 16
    ddr: bool = True
    ber: float = 0.0
    retry_limit: int = 8
    arbitration: str = "round_robin"
    dimension_priority: tuple[int, int, int] = (2, 1, 0)
    timeout_cycles: int = 10_000
    seed: int = 1
    max_cycles: int = 1_000_000

    def build_params(self) -> BuildParams:
        return BuildParams(
            seed=self.seed,
            timing=self.timing,
            memory_words=self.memory_words,
            cmd_fifo_depth=self.cmd_fifo_depth,
            cq_depth=self.cq_depth,
            lut_entries=self.lut_entries,
            vc_depth=self.vc_depth,
            offchip_vcs=self.offchip_vcs,
            serialization_factor=self.serialization_factor,
            ddr=self.ddr,
            ber=self.ber,
            retry_limit=self.retry_limit,
            arbitration=self.arbitration,
            dimension_priority=self.dimension_priority,
            timeout_cycles=self.timeout_cycles,
            config_echo=self.echo(),
        )

    def build(self) -> NetworkInstance:
        from .topology import TopologyError

        try:
            self.timing.validate()
            return NetworkInstance(self.topology, self.build_params())
        except (TopologyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self) -> dict:
        t = self.topology
        return {
            "topology": {
                "lattice": "x".join(map(str, t.lattice)),
                "scheme": t.scheme,
                "chip_dims": "x".join(map(str, t.chip_dims)),
                "intra_ports": t.intra_ports,
                "onchip_ports": t.onchip_ports,
                "offchip_ports": t.offchip_ports,
                "id_codec": t.id_codec,
                "mesh_shape": "x".join(map(str, t.mesh_shape)),
            },
            "timing": {k: getattr(self.timing, k) for k in (
                "cmd_issue_to_read", "switch_inject", "serdes_transit",
                "deliver_to_write", "loopback_turnaround", "switch_head_setup",
                "onchip_link_latency", "noc_transit_latency", "clock_mhz")},
            "rdma": {
                "memory_words": self.memory_words,
                "cmd_fifo_depth": self.cmd_fifo_depth,
                "cq_depth": self.cq_depth,
                "lut_entries": self.lut_entries,
            },
            "switch": {
                "vc_depth": self.vc_depth,
                "offchip_vcs": self.offchip_vcs,
                "arbitration": self.arbitration,
                "dimension_priority": "".join("xyzw"[d] for d in self.dimension_priority),
                "timeout_cycles": self.timeout_cycles,
            },
            "link": {
                "serialization_factor": self.serialization_factor,
                "ddr": self.ddr,
                "ber": self.ber,
                "retry_limit": self.retry_limit,
            },
            "run": {"seed": self.seed, "max_cycles": self.max_cycles},
        }


def _parse_dims(text: str, rank: int, where: str) -> tuple[int, ...]:
    parts = text.lower().replace("x", " ").split()
    if len(parts) != rank or not all(p.isdigit() for p in parts):
        raise ConfigError(f"{where}: expected {rank} sizes like 2x2x2, got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_bool(text: str, where: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{where}: expected a boolean, got {text!r}")


def _parse_priority(text: str, where: str) -> tuple[int, int, int]:
    axes = {"x": 0, "y": 1, "z": 2}
    letters = [c for c in text.strip().lower() if not c.isspace()]
    if sorted(letters) != ["x", "y", "z"]:
        raise ConfigError(f"{where}: expected a permutation of xyz, got {text!r}")
    return tuple(axes[c] for c in letters)


_INT_KEYS = {
    ("topology", "intra_ports"), ("topology", "onchip_ports"),
    ("topology", "offchip_ports"),
    ("timing", "cmd_issue_to_read"), ("timing", "switch_inject"),
    ("timing", "serdes_transit"), ("timing", "deliver_to_write"),
    ("timing", "loopback_turnaround"), ("timing", "switch_head_setup"),
    ("timing", "onchip_link_latency"), ("timing", "noc_transit_latency"),
    ("timing", "clock_mhz"),
    ("rdma", "memory_words"), ("rdma", "cmd_fifo_depth"),
    ("rdma", "cq_depth"), ("rdma", "lut_entries"),
    ("switch", "vc_depth"), ("switch", "offchip_vcs"),
    ("switch", "timeout_cycles"),
    ("link", "serialization_factor"), ("link", "retry_limit"),
    ("run", "seed"), ("run", "max_cycles"),
}

_KNOWN_KEYS = {key for _section, key in _INT_KEYS} | {
    "lattice", "scheme", "chip_dims", "id_codec", "mesh_shape",
    "arbitration", "dimension_priority", "ddr", "ber",
}

_SECTIONS = ("topology", "timing", "rdma", "switch", "link", "run")


def _find_line(text: str, key: str) -> int:
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].split(";", 1)[0].strip()
        if stripped.lower().startswith(key.lower()):
            return lineno
    return 0


def parse_config_text(text: str, origin: str = "<config>") -> SimConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=origin)
    except configparser.Error as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    config = SimConfig()
    topo = config.topology
    timing = config.timing
    for section in parser.sections():
        if section not in _SECTIONS:
            line = _find_line(text, f"[{section}]")
            raise ConfigError(f"{origin}:{line}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{origin}:{_find_line(text, key)}: [{section}] {key}"
            if key not in _KNOWN_KEYS:
                raise ConfigError(f"{where}: unknown key")
            if (section, key) in _INT_KEYS:
                try:
                    value = int(raw, 0)
                except ValueError:
                    raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
                if value < 0:
                    raise ConfigError(f"{where}: negative value {value}")
            if section == "topology":
                if key == "lattice":
                    topo.lattice = _parse_dims(raw, 3, where)
                elif key == "chip_dims":
                    topo.chip_dims = _parse_dims(raw, 3, where)
                elif key == "mesh_shape":
                    topo.mesh_shape = _parse_dims(raw, 2, where)
                elif key == "scheme":
                    topo.scheme = raw.strip().lower()
                elif key == "id_codec":
                    topo.id_codec = raw.strip().lower()
                elif key == "intra_ports":
                    topo.intra_ports = value
                elif key == "onchip_ports":
                    topo.onchip_ports = value
                elif key == "offchip_ports":
                    topo.offchip_ports = value
            elif section == "timing":
                setattr(timing, key, value)
            elif section == "rdma":
                setattr(config, key, value)
            elif section == "switch":
                if key == "arbitration":
                    if raw.strip() not in ("round_robin", "fixed_priority"):
                        raise ConfigError(f"{where}: unknown arbitration {raw!r}")
                    config.arbitration = raw.strip()
                elif key == "dimension_priority":
                    config.dimension_priority = _parse_priority(raw, where)
                else:
                    setattr(config, key, value)
            elif section == "link":
                if key == "ddr":
                    config.ddr = _parse_bool(raw, where)
                elif key == "ber":
                    try:
                        config.ber = float(raw)
                    except ValueError:
                        raise ConfigError(f"{where}: expected a float, got {raw!r}") from None
                    if not 0.0 <= config.ber < 1.0:
                        raise ConfigError(f"{where}: bit error rate outside [0, 1)")
                else:
                    setattr(config, key, value)
            elif section == "run":
                setattr(config, key, value)
    try:
        timing.validate()
        topo.validate()
    except ValueError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    return config


def preset_path(name: str) -> Path:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; have {', '.join(PRESET_NAMES)}")
    return Path(str(resources.files("dnpsim").joinpath(f"presets/{name}.ini")))


def parse_config(path: str) -> SimConfig:
    """Load a config file; bare preset names resolve to shipped files."""
    if path in PRESET_NAMES:
        file_path = preset_path(path)
    else:
        file_path = Path(path)
    if not file_path.exists():
        raise ConfigError(f"config file {path!r} not found")
    return parse_config_text(file_path.read_text(), origin=str(file_path))


def load_preset(name: str) -> SimConfig:
    return parse_config(name)
