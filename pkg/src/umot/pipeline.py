"""Scenario pipeline: forward -> certify -> invert, with a run manifest.

Artifacts are written as each stage completes, so a failing stage preserves
everything produced before it and its error names the stage.  Numeric
outputs are deterministic for a fixed configuration (and seed); the manifest
lists every output file with a content digest.
"""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass
from pathlib import Path


from . import __version__
from .constant_bg import ConstantBackground, preprocess_data, solve_constant_bg
from .ellipticity import certify_field
from .errors import Diverged, PipelineStageError, UmotError
from .field_core import ScalarField, rel_l2_error
from .fileio import (
    dump_json,
    field_to_dict,
    write_field_csv,
    write_field_json,
)
from .forward import build_bundle
from .linearized import assemble_system, injectivity_probe, normal_residual, solve_normal_equations
from .nonlinear import ReconstructOptions, reconstruct
from .phantom import add_noise
from .scenario import ScenarioConfig, config_digest, serialize_scenario

log = logging.getLogger("umot")


@dataclass(frozen=True)
class RunManifest:
    config_digest: str
    artifact_version: str
    created: str
    outputs: tuple

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "artifact_version": self.artifact_version,
            "created": self.created,
            "outputs": [{"path": p, "sha256": d} for p, d in self.outputs],
        }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Recorder:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[Path] = []

    def json(self, name: str, obj) -> Path:
        path = self.out_dir / name
        dump_json(obj, path)
        self.files.append(path)
        return path

    def field(self, name: str, f: ScalarField) -> None:
        jpath = self.out_dir / f"{name}.json"
        cpath = self.out_dir / f"{name}.csv"
        write_field_json(f, jpath)
        write_field_csv(f, cpath)
        self.files.extend([jpath, cpath])

    def text(self, name: str, content: str) -> Path:
        path = self.out_dir / name
        path.write_text(content)
        self.files.append(path)
        return path


def _report_dict(report) -> dict:
    witness = None
    if report.witness is not None:
        node, xi = report.witness
        witness = {"node": node, "xi": [float(c) for c in xi]}
    return {
        "elliptic": report.elliptic,
        "global_margin": report.global_margin,
        "threshold": report.threshold,
        "witness": witness,
        "xi_samples": report.xi_samples,
        "masked_interior_fraction": report.masked_fraction,
        "masked_interior_count": report.masked_count,
    }


def run_pipeline(
    config: ScenarioConfig, out_dir, allow_noncertified: bool = False
) -> RunManifest:
    """Execute the configured experiment end to end and write all artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec = _Recorder(out)
    rec.text("scenario.json", serialize_scenario(config))

    # ---- forward stage
    try:
        grid = config.make_grid()
        background = config.make_background(grid)
        truth = config.make_truth(grid, background)
        traces = config.make_traces(grid, background)
        eta = config.eta
        tol = config.solver.forward_tol
        bundle_bg = build_bundle(background, traces, eta, config.solver.grad_floor, tol)
        bundle_truth = build_bundle(truth, traces, eta, config.solver.grad_floor, tol)
        H_meas = list(bundle_truth.H)
        if config.noise.level > 0.0:
            H_meas = [
                add_noise(h, config.noise.level, config.noise.seed + j)
                for j, h in enumerate(H_meas)
            ]
        for j, (f, u) in enumerate(bundle_truth.solutions):
            rec.field(f"u_{j}", u)
        for j, h in enumerate(H_meas):
            rec.field(f"H_{j}", h)
        dH = [
            ScalarField(grid, hm.values - hb.values)
            for hm, hb in zip(H_meas, bundle_bg.H)
        ]
        for j, d in enumerate(dH):
            rec.field(f"dH_{j}", d)
        rec.field("gamma_truth", truth.gamma)
        rec.field("sigma_truth", truth.sigma)
        log.info("forward stage complete (J=%d)", bundle_bg.J)
    except UmotError as exc:
        raise PipelineStageError("forward", str(exc)) from exc

    # ---- certification stage
    try:
        report = certify_field(
            bundle_bg,
            n_xi=config.certify.xi_samples,
            margin_threshold=config.certify.margin_threshold,
        )
        rec.json("certify.json", _report_dict(report))
        log.info("certification margin %.3e elliptic=%s", report.global_margin, report.elliptic)
    except UmotError as exc:
        raise PipelineStageError("certify", str(exc)) from exc
    if not report.elliptic and not allow_noncertified:
        raise PipelineStageError(
            "certify", f"bundle not certified (margin {report.global_margin:.3e})"
        )

    # ---- inversion stage
    path = config.inversion.path
    try:
        if path == "linearized":
            sys = assemble_system(bundle_bg, dH)
            sys.certified = report.elliptic
            v = solve_normal_equations(sys, tol=config.solver.normal_tol)
            probe = injectivity_probe(sys, relative=True)
            out_obj = {
                "dgamma": field_to_dict(v.dgamma),
                "dsigma": field_to_dict(v.dsigma),
                "du": [field_to_dict(u) for u in v.du],
                "normal_residual": normal_residual(sys, v),
                "injectivity_probe_rel": probe,
                "err_dgamma_rel": rel_l2_error(
                    v.dgamma.values,
                    truth.gamma.values - background.gamma.values,
                    grid,
                ),
                "err_dsigma_rel": rel_l2_error(
                    v.dsigma.values,
                    truth.sigma.values - background.sigma.values,
                    grid,
                ),
            }
            rec.json("reconstruction.json", out_obj)
        elif path == "constant_bg":
            if config.background["type"] != "constant":
                raise PipelineStageError(
                    "invert", "constant_bg path needs a constant background"
                )
            dirs = config.make_directions()
            if dirs is None:
                raise PipelineStageError(
                    "invert", "constant_bg path needs a constant_bg boundary set"
                )
            bg = ConstantBackground(
                config.background["gamma0"], config.background["sigma0"], eta, dirs
            )
            data = [
                preprocess_data(d, u, bg)
                for d, (_, u) in zip(dH, bundle_bg.solutions)
            ]
            dgamma, dsigma = solve_constant_bg(bg, data)
            rec.json(
                "reconstruction.json",
                {
                    "dgamma": field_to_dict(dgamma),
                    "dsigma": field_to_dict(dsigma),
                    "err_dgamma_rel": rel_l2_error(
                        dgamma.values, truth.gamma.values - background.gamma.values, grid
                    ),
                    "err_dsigma_rel": rel_l2_error(
                        dsigma.values, truth.sigma.values - background.sigma.values, grid
                    ),
                },
            )
        else:  # nonlinear
            opts = ReconstructOptions(
                mode=config.inversion.mode,
                tol=config.inversion.tol,
                kmax=config.inversion.kmax,
                forward_tol=tol,
                strict_ellipticity=not allow_noncertified,
            )
            diverged = None
            try:
                result = reconstruct(H_meas, traces, background, eta, opts, truth=truth)
            except Diverged as exc:
                # keep the best iterate as an artifact, then fail the stage
                result = exc.result
                diverged = str(exc)
            trace_lines = ["k,residual,step,damping"]
            trace_lines += [
                f"{r.k},{r.residual_norm!r},{r.step_norm!r},{r.damping!r}"
                for r in result.history
            ]
            rec.text("trace.csv", "\n".join(trace_lines) + "\n")
            rec.json(
                "reconstruction.json",
                {
                    "converged": result.converged,
                    "diverged": diverged is not None,
                    "iterations": result.iterations,
                    "final_residual": result.final_residual,
                    "error_vs_truth": list(result.error_vs_truth)
                    if result.error_vs_truth
                    else None,
                    "gamma": field_to_dict(result.coeffs.gamma),
                    "sigma": field_to_dict(result.coeffs.sigma),
                },
            )
            if diverged is not None:
                raise PipelineStageError("invert", diverged)
        log.info("inversion stage complete (path=%s)", path)
    except PipelineStageError:
        raise
    except UmotError as exc:
        raise PipelineStageError("invert", str(exc)) from exc

    # ---- manifest
    outputs = tuple(
        (str(p.relative_to(out)), _sha256(p)) for p in sorted(rec.files)
    )
    manifest = RunManifest(
        config_digest=config_digest(config),
        artifact_version=__version__,
        created=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        outputs=outputs,
    )
    dump_json(manifest.to_dict(), out / "manifest.json")
    return manifest
