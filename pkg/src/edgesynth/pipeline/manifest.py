"""JSON-lines dataset manifest: one metadata line, then one record per sample."""

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__
from ..exceptions import ConfigError, EdgeSynthError, IoError, ShapeError
from ..imaging import read_pnm
from ..validation import check_fused, check_mask

SPLITS = ("train", "test")
ORIGINS = ("real", "g0", "g1")


@dataclass
class SampleRecord:
    id: str
    image: str
    label: str
    fused: str = None
    split: str = "train"
    origin: str = "real"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigError(f"{self.id}: split must be one of {SPLITS}, got {self.split!r}")
        if self.origin not in ORIGINS:
            raise ConfigError(f"{self.id}: origin must be one of {ORIGINS}, got {self.origin!r}")


@dataclass
class DatasetManifest:
    """Sample records plus metadata; paths are relative to the manifest's directory."""

    path: str
    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def root(self):
        return os.path.dirname(os.path.abspath(self.path))

    def resolve(self, rel):
        return os.path.join(self.root, rel)

    def relative(self, path):
        return os.path.relpath(path, self.root)

    def select(self, split=None, origins=None):
        return [r for r in self.records
                if (split is None or r.split == split) and (origins is None or r.origin in origins)]

    def replace_origin(self, origin, records):
        """Drop every record of ``origin`` and append ``records`` (reruns stay idempotent)."""
        self.records = [r for r in self.records if r.origin != origin] + list(records)

    def save(self):
        self.check()
        lines = [json.dumps({"_meta": self.meta}, sort_keys=True)]
        lines += [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        try:
            os.makedirs(self.root, exist_ok=True)
            with open(self.path, "w") as fh:
                fh.write("\n".join(lines) + "\n")
        except OSError as err:
            raise IoError(f"cannot write manifest {self.path}: {err}") from err

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        except OSError as err:
            raise IoError(f"cannot read manifest {path}: {err}") from err
        meta, records = {}, []
        for i, line in enumerate(lines):
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}:{i + 1}: invalid JSON ({err.msg})") from None
            if "_meta" in obj:
                meta = obj["_meta"]
            else:
                records.append(SampleRecord(**obj))
        manifest = cls(str(path), records, meta)
        manifest.check()
        return manifest

    @classmethod
    def new(cls, path, block_size, seed):
        return cls(str(path), [], {"block_size": int(block_size), "seed": int(seed),
                                   "created_by_version": __version__})

    def check(self):
        """Cheap structural checks: unique ids and real-only test split."""
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[:5]
            raise ConfigError(f"duplicate manifest ids {dup}")
        bad = [r.id for r in self.records if r.split == "test" and r.origin != "real"]
        if bad:
            raise ConfigError(f"synthetic samples in the test split: {bad[:5]}")

    def audit(self):
        """Full check: every referenced file exists and holds a valid image or label."""
        self.check()
        for r in self.records:
            try:
                image = read_pnm(self.resolve(r.image))
                mask = check_mask(read_pnm(self.resolve(r.label)))
                maps = [mask]
                if r.fused is not None:
                    maps.append(check_fused(read_pnm(self.resolve(r.fused))))
                if any(m.shape != (image.height, image.width) for m in maps):
                    raise ShapeError("image and labels differ in extent")
            except (EdgeSynthError, OSError) as err:
                raise type(err)(f"sample {r.id}: {err}") from err
        return True


def class_counts(manifest, records):
    counts = np.zeros(2, dtype=np.int64)
    for r in records:
        mask = check_mask(read_pnm(manifest.resolve(r.label)))
        counts += np.bincount((mask == 255).ravel(), minlength=2)
    return counts
