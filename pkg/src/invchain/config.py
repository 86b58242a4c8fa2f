"""Node configuration, loaded from one JSON file.

Relative ``data_dir`` paths resolve against the config file's directory;
other relative paths resolve against ``data_dir``. The chain auth token is
never part of the file: it comes from the ``INVCHAIN_TOKEN`` variable.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .chain import PoA, policy_from_dict
from .clock import ClockConfig

TOKEN_ENV = "INVCHAIN_TOKEN"


class ConfigError(ValueError):
    pass


def parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class ChainConfig:
    endpoint: str = "file:chain.jsonl"  # or tcp://host:port
    policy: dict = field(default_factory=lambda: PoA().to_dict())
    seed: int = 0
    credential_sha256: str | None = None
    serve: str | None = None  # host:port for node run to host the chain service
    contract: str | None = None

    def __post_init__(self) -> None:
        if not (self.endpoint.startswith("file:") or self.endpoint.startswith("tcp://")):
            raise ConfigError(f"chain endpoint must be file:<path> or tcp://host:port, not {self.endpoint!r}")
        policy_from_dict(self.policy)


@dataclass
class StoreRef:
    kind: str
    name: str
    creator: str | None = None  # hex public key; default is the node's own


@dataclass
class NodeConfig:
    data_dir: Path
    identity_file: Path | None = None
    listen: str | None = None
    peers: list[str] = field(default_factory=list)
    announce_ms: float = 500.0
    inventory: StoreRef = field(default_factory=lambda: StoreRef("eventlog", "inventory"))
    replicate: list[StoreRef] = field(default_factory=list)
    chain: ChainConfig = field(default_factory=ChainConfig)
    clock: ClockConfig = field(default_factory=ClockConfig)
    seed: int | None = 0

    def __post_init__(self) -> None:
        self.data_dir = Path(self.data_dir)
        if self.identity_file is None:
            self.identity_file = self.data_dir / "identity.key"
        else:
            self.identity_file = self.data_dir / Path(self.identity_file)
        if self.announce_ms <= 0:
            raise ConfigError("announce_ms must be > 0")
        if self.clock.mode == "virtual" and self.seed is None:
            raise ConfigError("virtual clock mode requires a seed")
        if self.inventory.kind != "eventlog":
            raise ConfigError("the inventory store must be an eventlog")
        if self.listen is not None:
            parse_hostport(self.listen)
        for p in self.peers:
            parse_hostport(p)

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "NodeConfig":
        d = dict(d)
        if "data_dir" not in d:
            raise ConfigError("config needs a data_dir")
        data_dir = Path(d.pop("data_dir"))
        if base is not None and not data_dir.is_absolute():
            data_dir = base / data_dir
        inv = d.pop("inventory", None)
        rep = d.pop("replicate", [])
        chain = d.pop("chain", {})
        clock = d.pop("clock", {})
        try:
            return cls(data_dir=data_dir,
                       inventory=StoreRef(**inv) if inv else StoreRef("eventlog", "inventory"),
                       replicate=[StoreRef(**r) for r in rep], chain=ChainConfig(**chain),
                       clock=ClockConfig(**clock), **d)
        except TypeError as exc:
            raise ConfigError(f"bad config field: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "NodeConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        return cls.from_dict(d, base=path.parent)

    def ensure_data_dir(self) -> None:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        if not os.access(self.data_dir, os.W_OK):
            raise ConfigError(f"data directory {self.data_dir} is not writable")

    def chain_path(self) -> Path:
        """Journal file; a node serving the chain over tcp keeps it in data_dir."""
        ep = self.chain.endpoint
        return self.data_dir / (ep[len("file:"):] if ep.startswith("file:") else "chain.jsonl")


def token_from_env() -> str:
    return os.environ.get(TOKEN_ENV, "")
