"""Versioned JSON persistence for trained pools."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentGenome, Pool
from .data import Normalization
from .errors import ConfigError
from .simulation import HyperParams
from .training import GenerationReport

FORMAT_VERSION = 1


@dataclass
class PoolFile:
    hyper: HyperParams
    seed: int
    fingerprint: str
    n_features: int
    normalization: Normalization
    pool: Pool
    reports: list[GenerationReport] = field(default_factory=list)
    split: dict = field(default_factory=lambda: {"kind": "full"})

    def to_json(self) -> str:
        doc = {
            "format_version": FORMAT_VERSION,
            "hyper": self.hyper.to_dict(),
            "seed": self.seed,
            "dataset": {"fingerprint": self.fingerprint, "n_features": self.n_features},
            "split": self.split,
            "normalization": self.normalization.to_dict(),
            "reports": [_clean(r.to_dict()) for r in self.reports],
            "genomes": [g.to_record() for g in self.pool.genomes()],
        }
        return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> PoolFile:
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read pool file {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not a pool file: {exc}") from exc
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported pool format_version {version!r}")
        genomes = [AgentGenome.from_record(g) for g in doc["genomes"]]
        n_features = int(doc["dataset"]["n_features"])
        if any(g.dim != n_features for g in genomes):
            raise ConfigError(f"{path}: genome dimension does not match the dataset's {n_features} features")
        reports = [GenerationReport(**{k: (math.nan if v is None and k.startswith("rmse") else v)
                                       for k, v in r.items()}) for r in doc["reports"]]
        return cls(HyperParams(**doc["hyper"]), int(doc["seed"]), doc["dataset"]["fingerprint"],
                   n_features, Normalization.from_dict(doc["normalization"]),
                   Pool.from_genomes(genomes), reports, doc["split"])


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}
