"""Experiment configuration: one JSON document with every default filled in."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .elliptic import ModuliPoint, admissible
from .torus import LatticeSpec

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULTS", "default_config"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


DEFAULTS: dict = {
    "lattice": {"omega1": [1.0, 0.0], "omega2": [0.0, 1.0], "grid_n": 64},
    "moduli": {
        "n": 2,
        "q0": {
            "lambda": [1.0, 0.0],
            "a": [[0.05, 0.1], [0.55, 0.6]],
            "b": [[0.6, 0.15]],
        },
        "q1": [0.0, 0.0, 0.5, 0.3, -0.4, 0.2, 0.1, -0.3],
        "delta_sep": None,
    },
    "eps_ladder": [0.2, 0.1, 0.05],
    "tau_star": 0.5,
    "samples": 50,
    "dt_cfl": 0.25,
    "dtau_geodesic": 1e-3,
    "geodesic": {"tau_end": 1.0},
    "evolve": {"eps": 0.1, "t_end": 10.0, "sample_every": 64},
    "spectrum": {"grid_n": 24},
    "output_dir": "out",
    "seed": 0,
    "workers": 1,
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown configuration key {key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key != "q0":
            out[key] = _merge(base[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _complex(v, what: str) -> complex:
    try:
        if isinstance(v, (int, float)):
            return complex(v)
        re, im = v
        return complex(float(re), float(im))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what} must be a number or a [re, im] pair, got {v!r}") from exc


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated view of a configuration document.

    The raw merged document is kept in ``doc`` and echoed into manifests.
    """

    doc: dict

    @classmethod
    def from_dict(cls, d: dict | None = None) -> "ExperimentConfig":
        if d is not None and not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        cfg = cls(_merge(DEFAULTS, d or {}))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(d)

    def override(self, **changes) -> "ExperimentConfig":
        """Copy with top-level or dotted keys replaced, e.g. ``{"lattice.grid_n": 32}``."""
        doc = copy.deepcopy(self.doc)
        for key, val in changes.items():
            node = doc
            parts = key.split(".")
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = val
        return ExperimentConfig.from_dict(doc)

    # ------------------------------------------------------------------

    @property
    def lattice(self) -> LatticeSpec:
        lat = self.doc["lattice"]
        try:
            return LatticeSpec(_complex(lat["omega1"], "omega1"),
                               _complex(lat["omega2"], "omega2"), lat["grid_n"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def q0(self) -> ModuliPoint:
        m = self.doc["moduli"]
        q0 = m["q0"]
        try:
            a = [_complex(v, "a") for v in q0["a"]]
            b = [_complex(v, "b") for v in q0["b"]]
            return ModuliPoint.from_complex(_complex(q0["lambda"], "lambda"), a, b,
                                            self.lattice, m.get("delta_sep"))
        except KeyError as exc:
            raise ConfigError(f"moduli.q0 is missing {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"moduli.q0: {exc}") from exc

    @property
    def q1(self) -> np.ndarray:
        return np.asarray(self.doc["moduli"]["q1"], dtype=float)

    @property
    def eps_ladder(self) -> list[float]:
        return [float(e) for e in self.doc["eps_ladder"]]

    @property
    def output_dir(self) -> Path:
        return Path(self.doc["output_dir"])

    def __getitem__(self, key):
        return self.doc[key]

    def validate(self) -> None:
        """Raise :class:`ConfigError` on any inconsistency.

        Admissibility of ``q0`` is checked separately by callers so that it
        can be reported as a validation failure rather than a config error.
        """
        _ = self.lattice  # raises on bad periods or grid size
        n = int(self.doc["moduli"]["n"])
        q0 = self.q0
        if q0.n != n:
            raise ConfigError(f"moduli.n = {n} but q0 has {q0.n} zeros")
        if self.q1.shape != (4 * n,):
            raise ConfigError(f"moduli.q1 must have length {4 * n}")
        eps = self.eps_ladder
        if not eps or any(not 0 < e < 1 for e in eps):
            raise ConfigError("eps_ladder values must lie in (0, 1)")
        if any(e2 >= e1 for e1, e2 in zip(eps, eps[1:])):
            raise ConfigError("eps_ladder must be strictly descending")
        for key in ("tau_star", "dt_cfl", "dtau_geodesic"):
            if not float(self.doc[key]) > 0:
                raise ConfigError(f"{key} must be positive")
        if int(self.doc["samples"]) < 3:
            raise ConfigError("samples must be at least 3")
        if not 8 <= int(self.doc["spectrum"]["grid_n"]) <= 32 or self.doc["spectrum"]["grid_n"] % 2:
            raise ConfigError("spectrum.grid_n must be even and in [8, 32]")
        if not 0 < float(self.doc["evolve"]["eps"]) < 1:
            raise ConfigError("evolve.eps must lie in (0, 1)")
        if int(self.doc["workers"]) < 1:
            raise ConfigError("workers must be >= 1")

    def q0_admissible(self) -> tuple[bool, dict]:
        return admissible(self.q0)

    def canonical_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        """Digest of every setting except the output location."""
        doc = {k: v for k, v in self.doc.items() if k != "output_dir"}
        text = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def default_config() -> ExperimentConfig:
    return ExperimentConfig.from_dict({})
