"""Scenario configuration: one JSON object, one fully determined experiment.

Unknown keys are rejected at every level, a seed is mandatory whenever noise
is requested, and the parsed configuration serializes back to itself with
all defaults made explicit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .ellipticity import DirectionSet, cgo_boundary_set, constant_bg_boundary_set
from .errors import ScenarioError
from .field_core import BoundaryData, Grid, ScalarField
from .fileio import field_from_dict, load_json
from .forward import CoefficientPair
from .phantom import BumpSpec, generate_phantom

_GRID_KEYS = {"nx", "ny", "hx", "hy", "x0", "y0"}
_TOP_KEYS = {
    "grid",
    "eta",
    "background",
    "boundary_set",
    "phantom",
    "noise",
    "solver",
    "certify",
    "inversion",
}


def _require_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys {sorted(unknown)} in {where}")


@dataclass(frozen=True)
class SolverConfig:
    forward_tol: float = 1e-10
    normal_tol: float = 1e-10
    grad_floor: float | None = None


@dataclass(frozen=True)
class CertifyConfig:
    xi_samples: int = 128
    margin_threshold: float = 1e-6


@dataclass(frozen=True)
class NoiseConfig:
    level: float = 0.0
    seed: int | None = None


@dataclass(frozen=True)
class InversionConfig:
    path: str = "linearized"
    mode: str = "frozen"
    tol: float = 1e-8
    kmax: int = 100

    def __post_init__(self):
        if self.path not in ("linearized", "constant_bg", "nonlinear"):
            raise ScenarioError(f"unknown inversion path '{self.path}'")
        if self.mode not in ("frozen", "refreshed"):
            raise ScenarioError(f"unknown reconstruction mode '{self.mode}'")


@dataclass(frozen=True)
class ScenarioConfig:
    grid: dict
    eta: float
    background: dict
    boundary_set: dict
    phantom: tuple = ()
    noise: NoiseConfig = NoiseConfig()
    solver: SolverConfig = SolverConfig()
    certify: CertifyConfig = CertifyConfig()
    inversion: InversionConfig = InversionConfig()

    def make_grid(self) -> Grid:
        g = self.grid
        return Grid(
            int(g["nx"]), int(g["ny"]), float(g["hx"]), float(g["hy"]),
            float(g.get("x0", 0.0)), float(g.get("y0", 0.0)),
        )

    def make_background(self, grid: Grid) -> CoefficientPair:
        bg = self.background
        if bg["type"] == "constant":
            return CoefficientPair.constant(grid, bg["gamma0"], bg["sigma0"])
        gamma = field_from_dict(load_json(bg["gamma_file"]))
        sigma = field_from_dict(load_json(bg["sigma_file"]))
        if gamma.grid != grid or sigma.grid != grid:
            raise ScenarioError("background field files disagree with the grid")
        return CoefficientPair(gamma, sigma)

    def make_truth(self, grid: Grid, background: CoefficientPair) -> CoefficientPair:
        dg, ds = generate_phantom(grid, list(self.phantom))
        return CoefficientPair(
            ScalarField(grid, background.gamma.values + dg.values),
            ScalarField(grid, background.sigma.values + ds.values),
            background.gamma_floor,
        )

    def make_directions(self) -> DirectionSet | None:
        bs = self.boundary_set
        if bs["type"] != "constant_bg":
            return None
        vecs = [np.asarray(v, dtype=float) for v in bs["dirs"]]
        vecs = [v / np.linalg.norm(v) for v in vecs]
        return DirectionSet(2, tuple(vecs))

    def make_traces(self, grid: Grid, background: CoefficientPair) -> list[BoundaryData]:
        bs = self.boundary_set
        if bs["type"] == "cgo":
            return cgo_boundary_set(grid, bs.get("M", 4.0), bs.get("k", 1.0), background)
        if bs["type"] == "constant_bg":
            bg = self.background
            if bg["type"] != "constant":
                raise ScenarioError("constant_bg boundary sets need a constant background")
            return constant_bg_boundary_set(
                grid, bg["gamma0"], bg["sigma0"], self.make_directions()
            )
        if bs["type"] == "explicit":
            out = []
            for f in bs["files"]:
                d = load_json(f)
                out.append(BoundaryData(grid, np.asarray(d["values"], dtype=float)))
            return out
        raise ScenarioError(f"unknown boundary set type '{bs['type']}'")

    def to_dict(self) -> dict:
        return {
            "grid": dict(self.grid),
            "eta": self.eta,
            "background": dict(self.background),
            "boundary_set": dict(self.boundary_set),
            "phantom": [
                {
                    "center": list(b.center),
                    "radius": b.radius,
                    "amplitude": b.amplitude,
                    "target": b.target,
                }
                for b in self.phantom
            ],
            "noise": {"level": self.noise.level, "seed": self.noise.seed},
            "solver": asdict(self.solver),
            "certify": asdict(self.certify),
            "inversion": asdict(self.inversion),
        }


def parse_scenario(data) -> ScenarioConfig:
    """Parse a scenario from a dict, JSON text, or file path."""
    if isinstance(data, (str, bytes)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError:
            data = load_json(data)
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    _require_keys(data, _TOP_KEYS, "scenario")
    for key in ("grid", "background", "boundary_set"):
        if key not in data:
            raise ScenarioError(f"scenario is missing '{key}'")
    _require_keys(data["grid"], _GRID_KEYS, "grid")
    for key in ("nx", "ny", "hx", "hy"):
        if key not in data["grid"]:
            raise ScenarioError(f"grid is missing '{key}'")

    bg = data["background"]
    if bg.get("type") == "constant":
        _require_keys(bg, {"type", "gamma0", "sigma0"}, "background")
    elif bg.get("type") == "fields":
        _require_keys(bg, {"type", "gamma_file", "sigma_file"}, "background")
    else:
        raise ScenarioError("background type must be 'constant' or 'fields'")

    bs = data["boundary_set"]
    if bs.get("type") == "cgo":
        _require_keys(bs, {"type", "M", "k"}, "boundary_set")
    elif bs.get("type") == "constant_bg":
        _require_keys(bs, {"type", "dirs"}, "boundary_set")
    elif bs.get("type") == "explicit":
        _require_keys(bs, {"type", "files"}, "boundary_set")
    else:
        raise ScenarioError("boundary set type must be cgo, constant_bg, or explicit")

    bumps = []
    if "phantom" in data:
        ph = data["phantom"]
        if isinstance(ph, dict):
            _require_keys(ph, {"bumps"}, "phantom")
            ph = ph["bumps"]
        for b in ph:
            _require_keys(b, {"center", "radius", "amplitude", "target"}, "phantom bump")
            bumps.append(
                BumpSpec(
                    tuple(b["center"]), float(b["radius"]), float(b["amplitude"]),
                    b.get("target", "gamma"),
                )
            )

    noise_d = data.get("noise", {})
    _require_keys(noise_d, {"level", "seed"}, "noise")
    noise = NoiseConfig(float(noise_d.get("level", 0.0)), noise_d.get("seed"))
    if noise.level > 0.0 and noise.seed is None:
        raise ScenarioError("a seed is mandatory when the noise level is positive")

    solver_d = data.get("solver", {})
    _require_keys(solver_d, {"forward_tol", "normal_tol", "grad_floor"}, "solver")
    certify_d = data.get("certify", {})
    _require_keys(certify_d, {"xi_samples", "margin_threshold"}, "certify")
    inv_d = data.get("inversion", {})
    _require_keys(inv_d, {"path", "mode", "tol", "kmax"}, "inversion")

    return ScenarioConfig(
        grid=dict(data["grid"]),
        eta=float(data.get("eta", 1.0)),
        background=dict(bg),
        boundary_set=dict(bs),
        phantom=tuple(bumps),
        noise=noise,
        solver=SolverConfig(**solver_d),
        certify=CertifyConfig(**certify_d),
        inversion=InversionConfig(**inv_d),
    )


def serialize_scenario(config: ScenarioConfig) -> str:
    return json.dumps(config.to_dict(), sort_keys=True, indent=1) + "\n"


def config_digest(config: ScenarioConfig) -> str:
    return hashlib.sha256(
        json.dumps(config.to_dict(), sort_keys=True).encode()
    ).hexdigest()
