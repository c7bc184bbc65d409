"""Shared helpers: seeded RNG streams, atomic file output, canonical JSON."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zlib
from typing import Any, Iterable, Sequence

import numpy as np


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Return an independent generator for a named sub-stream of one seed.

    The stream name is folded into the seed material so that modules drawing
    from the same top-level seed do not share state.
    """
    tag = zlib.crc32(stream.encode("utf-8"))
    return np.random.default_rng([int(seed), tag])


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and fixed separators; byte-stable per input."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file and rename so readers never see partial output."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str | os.PathLike, obj: Any) -> None:
    atomic_write_text(path, canonical_json(obj) + "\n")


def digest_of(parts: Iterable[str]) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def render_table(headers: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Render rows as an aligned-column text table (left col left-justified,
    remaining columns right-justified)."""
    cells = [[str(h) for h in headers]] + [[str(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for k, row in enumerate(cells):
        out = [row[0].ljust(widths[0])]
        out += [row[i].rjust(widths[i]) for i in range(1, len(row))]
        lines.append("  ".join(out).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
