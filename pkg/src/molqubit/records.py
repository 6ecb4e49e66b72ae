"""Output files: atomic writes, CSV dialect, run manifests."""

import csv
import hashlib
import io
import json
import os
import platform
import tempfile
from pathlib import Path

from . import __version__


def write_atomic(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header, rows):
    """Comma-separated, header row, LF endings; floats written with repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) or hasattr(v, "dtype") else v for v in row])
    return buf.getvalue()


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    return sha256_bytes(Path(path).read_bytes())


def json_text(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


class OutputSet:
    """Collects the files of one command, then writes them and a manifest."""

    def __init__(self, directory, command, cfg, inputs=()):
        self.directory = Path(directory)
        self.command = command
        self.cfg = cfg
        self.inputs = [Path(p) for p in inputs if p is not None]
        self.files = {}
        self.timings = {}
        self.extra = {}

    def add(self, name, text):
        self.files[name] = text
        write_atomic(self.directory / name, text)

    def manifest(self):
        return {
            "command": self.command,
            "tool": "molqubit",
            "version": __version__,
            "python": platform.python_version(),
            "config": self.cfg.to_dict(),
            "seeds": {"master": self.cfg.seed, "bath": self.cfg.seed_for("bath"),
                      "cce": self.cfg.seed_for("cce")},
            "inputs": {str(p): sha256_file(p) for p in self.inputs},
            "outputs": {k: sha256_bytes(v.encode()) for k, v in sorted(self.files.items())},
            "timings_s": self.timings,
            **self.extra,
        }

    def finish(self):
        name = f"manifest_{self.command.replace(' ', '_')}.json"
        return write_atomic(self.directory / name, json_text(self.manifest()))
