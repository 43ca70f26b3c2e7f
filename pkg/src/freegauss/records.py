"""Plain-text record helpers: key=value files and reproducible CSV output.

All floats are written with 17 significant digits so that a written value
reloads to the bit-identical double on any platform.
"""

import os

from .errors import ParseError


def fmt(x) -> str:
    """Format a scalar for output; floats get 17 significant digits."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def write_kv(path, pairs) -> None:
    """Write an ordered mapping as `key=value` lines (LF endings)."""
    lines = [f"{k}={fmt(v)}" for k, v in pairs]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_kv(path) -> dict:
    """Read a `key=value` file back into a dict of strings."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_csv(path, header, rows) -> None:
    """Write a CSV file with '.' decimals, LF endings, 17 significant digits.

    header may be None for headerless files (matrix dumps).
    """
    with open(path, "w", newline="\n") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def atomic_write(path, text) -> None:
    """Write text to path via a temp file + rename so readers never see partial content."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)
