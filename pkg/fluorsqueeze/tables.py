"""Semicolon-separated tables with a '#'-prefixed metadata header."""

from __future__ import annotations

import json
from pathlib import Path

import pandas as pd

SEP = ";"
FLOAT_FORMAT = "%.17g"


def write_csv(df: pd.DataFrame, path: Path, meta: dict | None = None, title: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, mode="w", encoding="utf-8", newline="") as f_out:
        if title:
            f_out.write(f"# {title}\n")
        for key, value in (meta or {}).items():
            f_out.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
        df.to_csv(f_out, sep=SEP, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_meta(path: Path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as f_in:
        for line in f_in:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            key, sep, value = body.partition(": ")
            if sep:
                meta[key] = json.loads(value)
    return meta


def load_csv(path: Path) -> tuple[pd.DataFrame, dict]:
    df = pd.read_csv(path, sep=SEP, comment="#", encoding="utf-8", float_precision="round_trip")
    df.columns = [c.strip() for c in df.columns]
    return df, read_meta(path)


def write_frame(df: pd.DataFrame, path: Path | None, fmt: str = "csv", meta: dict | None = None, title=None):
    """CSV or JSON emission of a table; ``path=None`` returns the text instead."""
    if fmt == "json":
        payload = {"meta": meta or {}, "rows": df.to_dict(orient="records")}
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        if path is None:
            return text
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
        return Path(path)
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if path is None:
        head = "".join(f"# {k}: {json.dumps(v, sort_keys=True)}\n" for k, v in (meta or {}).items())
        if title:
            head = f"# {title}\n" + head
        return head + df.to_csv(sep=SEP, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return write_csv(df, path, meta, title)
