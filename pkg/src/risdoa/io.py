"""Plain-text config and snapshot files.

Both start with a ``format=1`` line followed by ``key=value`` lines; ``#``
starts a comment. Lists are comma separated. A snapshot file continues with
one ``re,im`` line per slot after a ``data`` line.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

FORMAT_VERSION = "1"


def _fmt(v) -> str:
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _split_header(lines, source: str):
    body = [ln.split("#", 1)[0].strip() for ln in lines]
    body = [(i, ln) for i, ln in enumerate(body) if ln]
    if not body or body[0][1].replace(" ", "") != f"format={FORMAT_VERSION}":
        raise ConfigError(f"{source}: first line must be 'format={FORMAT_VERSION}'")
    out: dict[str, str] = {}
    rest = []
    for pos, (i, ln) in enumerate(body[1:], start=1):
        if ln == "data":
            rest = [b[1] for b in body[pos + 1:]]
            break
        if "=" not in ln:
            raise ConfigError(f"{source}:{i + 1}: expected key=value, got {ln!r}")
        key, val = (s.strip() for s in ln.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{i + 1}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{i + 1}: duplicate key {key!r}")
        out[key] = val
    return out, rest


def read_key_values(path: str) -> dict[str, str]:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return _split_header(lines, path)[0]


def write_key_values(path: str, values: dict) -> None:
    with open(path, "w") as fh:
        fh.write(f"format={FORMAT_VERSION}\n")
        for k, v in values.items():
            fh.write(f"{k}={_fmt(v)}\n")


def parse_float(key: str, raw: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ConfigError(f"{key}: not a number: {raw!r}") from None
    if not np.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    return v


def parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: not an integer: {raw!r}") from None


def parse_float_list(key: str, raw: str) -> tuple[float, ...]:
    items = [s.strip() for s in raw.split(",") if s.strip()]
    if not items:
        raise ConfigError(f"{key}: empty list")
    return tuple(parse_float(key, s) for s in items)


def parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected true/false, got {raw!r}")


@dataclass(frozen=True)
class SnapshotFile:
    header: dict
    received: np.ndarray


def write_snapshot_file(path: str, header: dict, received) -> None:
    received = np.asarray(received, dtype=complex)
    with open(path, "w") as fh:
        fh.write(f"format={FORMAT_VERSION}\n")
        for k, v in header.items():
            fh.write(f"{k}={_fmt(v)}\n")
        fh.write("data\n")
        for z in received:
            fh.write(f"{float(z.real)!r},{float(z.imag)!r}\n")


def read_snapshot_file(path: str) -> SnapshotFile:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    header, rows = _split_header(lines, path)
    vals = []
    for row in rows:
        parts = row.split(",")
        if len(parts) != 2:
            raise ConfigError(f"{path}: bad sample line {row!r}")
        vals.append(complex(parse_float("re", parts[0]), parse_float("im", parts[1])))
    if not vals:
        raise ConfigError(f"{path}: no samples")
    return SnapshotFile(header, np.asarray(vals))
