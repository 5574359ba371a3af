"""Shared CSV output helpers (manifest stamping, float formatting)."""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path


def fmt(x) -> str:
    """Stable scalar formatting; infinities serialize as inf / -inf."""
    import math

    xf = float(x)
    if math.isinf(xf):
        return "inf" if xf > 0 else "-inf"
    if math.isnan(xf):
        return "nan"
    return f"{xf:.10g}"


@contextmanager
def open_output(path, manifest: str | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        if manifest:
            f.write(f"# manifest={manifest}\n")
        yield f
