"""Flat ``key = value`` text documents used for plant and AOI configs."""
from .errors import ConfigError


def parse_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path):
    try:
        with open(path) as fh:
            return parse_kv(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(format_value(x) for x in v)
    return str(v)


def dump_kv(d):
    return "".join(f"{k} = {format_value(v)}\n" for k, v in d.items())


def write_kv(path, d):
    with open(path, "w") as fh:
        fh.write(dump_kv(d))


def get_float(d, key, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    try:
        return float(d[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: not a number: {d[key]!r}") from exc


def get_floats(d, key, default=None, n=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return list(default)
    try:
        vals = [float(p) for p in d[key].split(",")]
    except ValueError as exc:
        raise ConfigError(f"{key}: expected comma-separated numbers") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


def get_int(d, key, default=None):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default
    try:
        return int(d[key])
    except ValueError as exc:
        raise ConfigError(f"{key}: not an integer: {d[key]!r}") from exc
