"""Campaign orchestration: calibrate, falsify, certify, validate and report.

Every stage reads and writes plain files in one output directory, so stages
can be rerun or resumed independently. All randomness derives from the
config's master seed.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import io
import logging
import math
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import benchmark  # noqa: F401  (registers the shipped Segway models)
from ._util import sha256_file
from .bayesopt import (
    EnvSpace,
    Evaluation,
    FalsificationResult,
    history_header,
    history_row,
    minimize_robustness,
    parse_history_row,
)
from .calibrate import AccuracyProfile, coverage_level, estimate_accuracy
from .certify import Certificate, NormMismatchError, ValidationReport, certify, validate_empirically
from .signals import WeightedNorm
from .stl import NotReachAvoidError, RobustnessMeasure, Spec, SpecSyntaxError, build_measure, parse_spec, robustness
from .systems import ControllerSpec, NominalModel, ScenarioConfig, TrueModel, derive_seed, resolve, simulate_nominal

logger = logging.getLogger("specguard")

EXIT_CERTIFIED = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_NOT_CERTIFIED = 3

PROFILE = "accuracy_profile.json"
HISTORY = "falsification_history.csv"
CERTIFICATE = "certificate.json"
VALIDATION = "validation_report.json"
HISTOGRAM = "deviation_histogram.csv"
CONVERGENCE = "convergence.csv"
TRACES = "validation_traces.csv"

HISTOGRAM_BINS = 30

# sub-stream of the master seed used by each stage
_CALIBRATION_STREAM, _BO_STREAM, _VALIDATION_STREAM = 1, 2, 3


class ConfigError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    pass


def default_config_text() -> str:
    return resources.files("specguard").joinpath("presets/default.yaml").read_text()


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def read_config(path: str | Path) -> dict:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw or {}


@dataclass(frozen=True)
class CampaignConfig:
    seed: int
    nominal: str
    true: str
    controller: str
    space: str
    preset: str
    spec_text: str
    norm_weights: tuple[float, ...]
    x0: tuple[float, ...]
    t_f: float
    dt: float
    N: int
    lam: float
    mode: str
    fixed_d: tuple[float, ...] | None
    budget: int
    init_count: int
    length_scale: float | tuple[float, ...]
    n_starts: int
    explore: float
    K: int
    keep_traces: int
    output: str
    created_at: str | None

    @classmethod
    def from_dict(cls, raw: dict) -> "CampaignConfig":
        data = _merge(yaml.safe_load(default_config_text()), raw or {})
        try:
            models, scen = data["models"], data["scenario"]
            cal, bo, val = data["calibration"], data["bo"], data["validation"]
            ls = bo["length_scale"]
            cfg = cls(
                seed=int(data["seed"]),
                nominal=str(models["nominal"]),
                true=str(models["true_model"]),
                controller=str(models["controller"]),
                space=str(models["space"]),
                preset=str(models["preset"]),
                spec_text=str(data["spec"]),
                norm_weights=tuple(float(w) for w in data["norm_weights"]),
                x0=tuple(float(v) for v in scen["x0"]),
                t_f=float(scen["t_f"]),
                dt=float(scen["dt"]),
                N=int(cal["N"]),
                lam=float(cal["lambda"]),
                mode=str(cal["mode"]),
                fixed_d=None if cal["fixed_d"] is None else tuple(float(v) for v in cal["fixed_d"]),
                budget=int(bo["budget"]),
                init_count=int(bo["init_count"]),
                length_scale=tuple(float(v) for v in ls) if isinstance(ls, list) else float(ls),
                n_starts=int(bo["n_starts"]),
                explore=float(bo["explore"]),
                K=int(val["K"]),
                keep_traces=int(val["keep_traces"]),
                output=str(data["output"]),
                created_at=None if data["created_at"] is None else str(data["created_at"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config value: {exc}") from None
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "CampaignConfig":
        return cls.from_dict(read_config(path) if path is not None else {})

    def check(self) -> None:
        try:
            coverage_level(self.lam)
        except ValueError as exc:
            raise ConfigError(f"calibration.lambda: {exc}") from None
        if self.N < 1 or self.K < 1:
            raise ConfigError("calibration.N and validation.K must be positive")
        if not self.budget >= self.init_count >= 1:
            raise ConfigError("bo.budget >= bo.init_count >= 1 is required")
        if self.mode not in ("sampled", "fixed"):
            raise ConfigError(f"calibration.mode must be 'sampled' or 'fixed', got {self.mode!r}")
        if self.mode == "fixed" and self.fixed_d is None:
            raise ConfigError("calibration.mode 'fixed' needs calibration.fixed_d")
        if not 0.0 <= self.explore <= 1.0:
            raise ConfigError("bo.explore must lie in [0, 1]")
        if self.n_starts < 1 or self.keep_traces < 0:
            raise ConfigError("bo.n_starts must be positive and validation.keep_traces non-negative")
        try:
            ScenarioConfig(np.array(self.x0), self.t_f, self.dt)
            WeightedNorm(np.array(self.norm_weights))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def stage_seed(self, stream: int) -> int:
        return derive_seed(self.seed, stream)


@dataclass(frozen=True)
class Campaign:
    """A config with every registry name resolved and the spec compiled."""

    config: CampaignConfig
    nominal: NominalModel
    true_sys: TrueModel
    controller: ControllerSpec
    space: EnvSpace
    scenario: ScenarioConfig
    spec: Spec
    measure: RobustnessMeasure

    @classmethod
    def build(cls, config: CampaignConfig) -> "Campaign":
        try:
            nominal = resolve(config.nominal, preset=config.preset)
            true_sys = resolve(config.true, preset=config.preset)
            ctrl = resolve(config.controller, preset=config.preset)
            space = resolve(config.space, preset=config.preset)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
        if not (isinstance(nominal, NominalModel) and isinstance(true_sys, TrueModel)):
            raise ConfigError("models.nominal / models.true_model resolve to the wrong kind of object")
        if not (isinstance(ctrl, ControllerSpec) and isinstance(space, EnvSpace)):
            raise ConfigError("models.controller / models.space resolve to the wrong kind of object")
        if nominal.n != true_sys.n or len(config.x0) != nominal.n or len(config.norm_weights) != nominal.n:
            raise ConfigError(
                f"state dimension mismatch: nominal {nominal.n}, true {true_sys.n}, "
                f"x0 {len(config.x0)}, norm_weights {len(config.norm_weights)}"
            )
        if config.fixed_d is not None and not space.contains(np.array(config.fixed_d)):
            raise ConfigError(f"calibration.fixed_d {list(config.fixed_d)} is outside the configuration space")
        try:
            spec = parse_spec(config.spec_text)
            measure = build_measure(spec, WeightedNorm(np.array(config.norm_weights)))
        except SpecSyntaxError as exc:
            raise ConfigError(f"spec: {exc}") from None
        except NotReachAvoidError as exc:
            raise ConfigError(f"spec {config.spec_text!r} is not certifiable: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"spec: {exc}") from None
        scenario = ScenarioConfig(np.array(config.x0), config.t_f, config.dt)
        return cls(config, nominal, true_sys, ctrl, space, scenario, spec, measure)

    def objective(self, d: np.ndarray) -> float:
        return robustness(self.measure, simulate_nominal(self.nominal, self.controller, self.scenario, d))


# --------------------------------------------------------------------------- stages


def _require(out: Path, name: str, stage: str) -> Path:
    path = out / name
    if not path.is_file():
        raise MissingArtifactError(f"{path} not found; run `specguard {stage}` first")
    return path


def stage_calibrate(c: Campaign, out: Path, jobs: int = 1) -> AccuracyProfile:
    cfg = c.config
    ap = estimate_accuracy(
        c.nominal,
        c.true_sys,
        c.controller,
        c.scenario,
        c.space,
        c.measure.norm,
        cfg.N,
        cfg.lam,
        cfg.stage_seed(_CALIBRATION_STREAM),
        fixed_d=cfg.fixed_d if cfg.mode == "fixed" else None,
        jobs=jobs,
    )
    ap.write_json(out / PROFILE)
    logger.info("calibration: epsilon = %.6g from %d pairs (%d diverged)", ap.epsilon, ap.N, ap.divergences)
    return ap


def _read_checkpoint(path: Path, names: Sequence[str]) -> list[Evaluation]:
    text = path.read_text()
    # a partially written last row is dropped
    complete = text[: text.rfind("\n") + 1]
    rows = list(csv.reader(io.StringIO(complete)))
    if not rows:
        return []
    if complete.splitlines()[0] + "\n" != history_header(names):
        raise ConfigError(f"{path} does not match this configuration space; delete it to start over")
    history = []
    for k, r in enumerate(rows[1:]):
        e = parse_history_row(r)
        if e.iteration != k:
            raise ConfigError(f"{path}: iterations are not consecutive; delete it to start over")
        history.append(e)
    return history


def stage_falsify(c: Campaign, out: Path, resume: bool = False) -> FalsificationResult:
    """Run Bayesian optimization, appending each evaluation to the history file as it completes."""
    cfg = c.config
    path = out / HISTORY
    names = c.space.names
    history = _read_checkpoint(path, names) if resume and path.is_file() else []
    if len(history) > cfg.budget:
        raise ConfigError(f"{path} holds {len(history)} evaluations, more than bo.budget = {cfg.budget}")
    if history:
        logger.info("falsification: resuming after %d recorded evaluations", len(history))
    path.write_text(history_header(names) + "".join(history_row(e) for e in history))

    with path.open("a") as fh:

        def checkpoint(e: Evaluation) -> None:
            fh.write(history_row(e))
            fh.flush()
            if e.iteration % 25 == 24:
                logger.info("falsification: iteration %d, incumbent %.6g", e.iteration + 1, e.incumbent)

        fr = minimize_robustness(
            c.objective,
            c.space,
            cfg.budget,
            init_count=cfg.init_count,
            length_scale=cfg.length_scale,
            seed=cfg.stage_seed(_BO_STREAM),
            n_starts=cfg.n_starts,
            history=history,
            on_evaluation=checkpoint,
            explore=cfg.explore,
        )
    fr.write_csv(path)
    logger.info("falsification: h* = %.6g at d* = %s", fr.h_star, list(fr.d_star))
    return fr


def _created_at(cfg: CampaignConfig) -> str | None:
    if cfg.created_at is not None:
        return cfg.created_at
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc).isoformat()
    return None


def stage_certify(c: Campaign, out: Path) -> Certificate:
    profile_path = _require(out, PROFILE, "calibrate")
    history_path = _require(out, HISTORY, "falsify")
    ap = AccuracyProfile.read_json(profile_path)
    fr = FalsificationResult.read_csv(history_path, c.config.budget)
    cert = certify(
        fr,
        ap,
        c.measure,
        accuracy_profile_ref="sha256:" + sha256_file(profile_path),
        falsification_ref="sha256:" + sha256_file(history_path),
        created_at=_created_at(c.config),
    )
    cert.write_json(out / CERTIFICATE)
    verdict = f"certified with probability >= {cert.probability}" if cert.certified else "not certified"
    logger.info("certificate: h* = %.6g, L*eps = %.6g: %s", cert.h_star, cert.L * cert.epsilon, verdict)
    return cert


def stage_validate(c: Campaign, out: Path, jobs: int = 1) -> ValidationReport:
    fr = FalsificationResult.read_csv(_require(out, HISTORY, "falsify"), c.config.budget)
    report = validate_empirically(
        c.true_sys,
        c.controller,
        c.scenario,
        fr.d_star,
        c.spec,
        c.measure,
        c.config.K,
        c.config.stage_seed(_VALIDATION_STREAM),
        jobs=jobs,
        keep_traces=c.config.keep_traces,
    )
    report.write_json(out / VALIDATION)
    logger.info("validation: %d/%d trials satisfied the spec", sum(report.satisfied), report.K)
    return report


def _write_rows(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def stage_report(out: Path) -> list[Path]:
    """Regenerate plot-data CSVs from stored artifacts; no simulation, so repeated runs are identical."""
    written = []
    profile_path = out / PROFILE
    if profile_path.is_file():
        ap = AccuracyProfile.read_json(profile_path)
        finite = np.array([v for v in ap.samples if math.isfinite(v)])
        top = float(finite.max()) if len(finite) and finite.max() > 0 else 1.0
        counts, edges = np.histogram(finite, bins=HISTOGRAM_BINS, range=(0.0, top))
        rows = [[repr(float(lo)), repr(float(hi)), int(n)] for lo, hi, n in zip(edges[:-1], edges[1:], counts)]
        if len(finite) < ap.N:
            rows.append(["inf", "inf", ap.N - len(finite)])
        _write_rows(out / HISTOGRAM, ["bin_lo", "bin_hi", "count"], rows)
        written.append(out / HISTOGRAM)
    history_path = out / HISTORY
    if history_path.is_file():
        fr = FalsificationResult.read_csv(history_path)
        rows = [[e.iteration + 1, repr(e.value), repr(e.incumbent)] for e in fr.history]
        _write_rows(out / CONVERGENCE, ["iteration", "value", "incumbent"], rows)
        written.append(out / CONVERGENCE)
    validation_path = out / VALIDATION
    if validation_path.is_file():
        vr = ValidationReport.read_json(validation_path)
        if vr.traces:
            cols = [vr.trace_times, *vr.traces]
            header = ["t", *(f"trial_{k + 1}" for k in range(len(vr.traces)))]
            _write_rows(out / TRACES, header, [[repr(v) for v in row] for row in zip(*cols)])
            written.append(out / TRACES)
    if not written:
        raise MissingArtifactError(f"no artifacts in {out}; run `specguard run` first")
    return written


def run_campaign(c: Campaign, out: Path, jobs: int = 1, resume: bool = False) -> Certificate:
    stage_calibrate(c, out, jobs)
    stage_falsify(c, out, resume)
    cert = stage_certify(c, out)
    stage_validate(c, out, jobs)
    stage_report(out)
    return cert


# --------------------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="campaign YAML (defaults to the shipped preset)")
    common.add_argument("--out", metavar="DIR", help="output directory (SPECGUARD_OUT takes precedence)")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes for simulations")
    common.add_argument("--seed-override", type=int, metavar="K", help="replace the config's master seed")
    common.add_argument("--preset", metavar="NAME", help="replace models.preset (default | stress)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")

    p = argparse.ArgumentParser(prog="specguard", description="Probabilistic reach-avoid certificates from simulation.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="calibrate, falsify, certify, validate and report")
    sub.add_parser("calibrate", parents=[common], help="estimate the nominal model's accuracy")
    fals = sub.add_parser("falsify", parents=[common], help="minimize nominal robustness")
    sub.add_parser("certify", parents=[common], help="certificate from the stored profile and history")
    sub.add_parser("validate", parents=[common], help="true-system rollouts at the worst configuration")
    sub.add_parser("report", parents=[common], help="plot-data CSVs from stored artifacts")
    sub.add_parser("show-config", parents=[common], help="print the shipped example config")
    for sp in (fals, sub.choices["run"]):
        sp.add_argument("--resume", action="store_true", help="continue from an interrupted history file")
    return p


def _config(args: argparse.Namespace) -> CampaignConfig:
    raw = read_config(args.config) if args.config is not None else {}
    if args.seed_override is not None:
        raw["seed"] = args.seed_override
    if args.preset is not None:
        raw.setdefault("models", {})["preset"] = args.preset
    return CampaignConfig.from_dict(raw)


def _out_dir(args: argparse.Namespace, cfg: CampaignConfig) -> Path:
    out = Path(os.environ.get("SPECGUARD_OUT") or args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "show-config":
        sys.stdout.write(default_config_text())
        return EXIT_CERTIFIED
    if args.jobs < 1:
        print("specguard: --jobs must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _config(args)
        out = _out_dir(args, cfg)
        if args.command == "report":
            for path in stage_report(out):
                print(path)
            return EXIT_CERTIFIED
        c = Campaign.build(cfg)
        if args.command == "run":
            cert = run_campaign(c, out, args.jobs, args.resume)
        elif args.command == "calibrate":
            ap = stage_calibrate(c, out, args.jobs)
            print(f"epsilon = {ap.epsilon!r} ({ap.N} pairs, lambda = {ap.lam})")
            return EXIT_CERTIFIED
        elif args.command == "falsify":
            fr = stage_falsify(c, out, args.resume)
            print(f"h_star = {fr.h_star!r} at d_star = {list(fr.d_star)}")
            return EXIT_CERTIFIED
        elif args.command == "validate":
            vr = stage_validate(c, out, args.jobs)
            print(f"satisfaction rate = {vr.rate!r} over K = {vr.K} trials")
            return EXIT_CERTIFIED
        else:
            cert = stage_certify(c, out)
    except (ConfigError, MissingArtifactError, NormMismatchError) as exc:
        print(f"specguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, ConfigError) else EXIT_ERROR
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"specguard: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if cert.certified:
        print(f"certified: P[satisfy] >= {cert.probability} (h* = {cert.h_star!r}, L*eps = {cert.L * cert.epsilon!r})")
        return EXIT_CERTIFIED
    print(f"not certified: h* = {cert.h_star!r} < L*eps = {cert.L * cert.epsilon!r}")
    return EXIT_NOT_CERTIFIED


if __name__ == "__main__":
    sys.exit(main())
