"""One configuration file for every tunable threshold.

Layout (JSON, all sections optional):

    {
      "tolerance": 0.5,
      "fit":       {"max_iterations": 7, "degrees": [2, 2], ...},
      "deconflict": {"alpha": 0.05, "reference_level": 3, ...},
      "tiling":    {"overlap": 0.05}
    }

A top-level ``tolerance`` sets both the fit and the deconfliction tolerance;
the sections can still override it individually.  Unknown keys are rejected
by name so a typo cannot silently fall back to a default.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields

from .adaptive import FitConfig
from .deconflict import DeconflictConfig
from .least_squares import SmoothingWeights

__all__ = ["Settings", "load_settings", "default_dict", "settings_to_dict"]


@dataclass
class Settings:
    fit: FitConfig = field(default_factory=FitConfig)
    deconflict: DeconflictConfig = field(default_factory=DeconflictConfig)
    overlap: float = 0.05  # tile expansion per side, fraction of tile width


def _build(cls, section: str, data: dict):
    """Dataclass from a plain dict with unknown-key rejection."""
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(
            f"unknown {section} setting(s): {', '.join(sorted(unknown))}; "
            f"valid keys: {', '.join(sorted(names))}")
    kwargs = dict(data)
    for key in ("degrees", "initial_grid"):
        if key in kwargs:
            kwargs[key] = tuple(int(v) for v in kwargs[key])
    if "smoothing" in kwargs and isinstance(kwargs["smoothing"], dict):
        kwargs["smoothing"] = _build(SmoothingWeights, section + ".smoothing",
                                     kwargs["smoothing"])
    return cls(**kwargs)


def load_settings(path=None, tolerance: float | None = None) -> Settings:
    """Settings from an optional JSON file plus an optional tolerance override.

    Precedence: built-in defaults < file < ``tolerance`` argument (which is
    the CLI flag and wins for both the fit and the deconfliction sections).
    """
    raw: dict = {}
    if path is not None:
        with open(path) as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}: not valid JSON ({e})") from None
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: top level must be a JSON object")
    unknown = set(raw) - {"tolerance", "fit", "deconflict", "tiling"}
    if unknown:
        raise ValueError(
            f"unknown config section(s): {', '.join(sorted(unknown))}; "
            "valid: tolerance, fit, deconflict, tiling")

    fit_d = dict(raw.get("fit", {}))
    dec_d = dict(raw.get("deconflict", {}))
    if "tolerance" in raw:
        fit_d.setdefault("tolerance", raw["tolerance"])
        dec_d.setdefault("tolerance", raw["tolerance"])
    if tolerance is not None:
        fit_d["tolerance"] = tolerance
        dec_d["tolerance"] = tolerance

    til_d = dict(raw.get("tiling", {}))
    unknown = set(til_d) - {"overlap"}
    if unknown:
        raise ValueError(f"unknown tiling setting(s): {', '.join(sorted(unknown))}")
    return Settings(fit=_build(FitConfig, "fit", fit_d),
                    deconflict=_build(DeconflictConfig, "deconflict", dec_d),
                    overlap=float(til_d.get("overlap", 0.05)))


def settings_to_dict(s: Settings) -> dict:
    out = {"fit": dataclasses.asdict(s.fit),
           "deconflict": dataclasses.asdict(s.deconflict),
           "tiling": {"overlap": s.overlap}}
    for key in ("degrees", "initial_grid"):
        out["fit"][key] = list(out["fit"][key])
    return out


def default_dict() -> dict:
    """The full default configuration, ready to serialize as a template."""
    return settings_to_dict(Settings())
