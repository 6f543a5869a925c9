"""
Command line front end: ``ifs <command> ...``.

Every command writes its artifact (JSON for reports, CSV for point data) and a
manifest echoing the resolved configuration. Exit status is 0 when the command's
check passes, 1 when it fails (diagnostics name what failed) and 2 on usage or
parse errors. Diagnostics go to stderr as JSON.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from affine_construction import box_B, check_conditions, construction_family, find_parameters
from config import VERSION, configure_logging, get_settings
from errors import DimensionMismatchError, DomainError, IFSError, UsageError, VerificationError
from geometry import Ball, Box, Region, write_cloud_csv
from hutchinson import absorbing_ball, attractor, chaos_game, fixed_point_set
from maps import FamilySequence, MapFamily
from minimality import ball_base, certify, dense_branch, dense_orbit, strong_trial
from schemas import AffineParams, Manifest, MinimalityCertificate, RunConfig
from symbolic import (
    Cylinder,
    SkewProduct,
    blender_verify,
    mixing_probe,
    perturbed_product,
    skew_product_from_certificate,
    write_strips_csv,
)

logger = logging.getLogger("ifs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, usage=self.format_usage().strip())


@dataclass
class Outcome:
    passed: bool
    summary: Dict[str, Any]
    outputs: List[str] = field(default_factory=list)
    failure: Optional[Dict[str, Any]] = None


def _write_json(path: str, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"input file {path} does not exist", path=path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise UsageError(f"cannot parse {path}: {e.msg}", path=path, line=e.lineno)
    if not isinstance(data, dict):
        raise UsageError(f"{path} must hold a JSON object", path=path)
    return data


def _floats(text: str, what: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}")


def parse_domain(text: str, dim: Optional[int] = None) -> Optional[Region]:
    """``auto`` (None), ``box:h1,...,hm[@c1,...,cm]`` or ``ball:c1,...,cm,r``"""
    if text is None or text == "auto":
        return None
    kind, _, body = text.partition(":")
    try:
        if kind == "box":
            widths, _, center = body.partition("@")
            halfwidths = _floats(widths, "box halfwidths")
            if not halfwidths:
                raise UsageError("box needs its halfwidths", domain=text)
            region = Box(halfwidths, _floats(center, "box center") if center else None)
        elif kind == "ball":
            values = _floats(body, "ball")
            if len(values) < 2:
                raise UsageError("ball needs a center and a radius", domain=text)
            region = Ball(values[:-1], values[-1])
        else:
            raise UsageError(f"unknown domain {text!r}; use auto, box:... or ball:...")
    except (DimensionMismatchError, DomainError) as e:
        raise UsageError(f"invalid domain {text!r}: {e.message}", domain=text)
    if dim is not None and region.dim != dim:
        raise UsageError("domain dimension does not match the family", domain=text, dim=dim)
    return region


def _load_params(data: dict) -> AffineParams:
    try:
        return AffineParams(**data)
    except ValidationError as e:
        raise UsageError("invalid parameters", errors=json.loads(e.json()))


def load_family(path: str):
    """A family JSON, a parameter JSON (the S, S∘T pair) or a certificate; returns (family, default domain)"""
    data = _read_json(path)
    if "maps" in data:
        return MapFamily.from_dict(data), None
    if "hypotheses" in data:
        cert = load_certificate(path)
        return cert.load_family(), cert.domain_region()
    params = _load_params(data)
    return construction_family(params), box_B(params)


def load_certificate(path: str) -> MinimalityCertificate:
    try:
        return MinimalityCertificate(**_read_json(path))
    except ValidationError as e:
        raise UsageError(f"{path} is not a certificate", errors=json.loads(e.json()))


def _vector(text: str, what: str) -> np.ndarray:
    return np.array(_floats(text, what))


def _target(text: str) -> Ball:
    values = _floats(text, "target")
    if len(values) < 2:
        raise UsageError("target needs a center and a radius", target=text)
    return Ball(values[:-1], values[-1])


def cmd_construct(args) -> Outcome:
    params = find_parameters(args.dim, args.max_contraction, args.spacing)
    _write_json(args.out, params.model_dump())
    outputs = [args.out]
    if args.family_out:
        construction_family(params).save(args.family_out)
        outputs.append(args.family_out)
    return Outcome(True, params.model_dump(), outputs)


def cmd_check(args) -> Outcome:
    params = _load_params(_read_json(args.params))
    report = check_conditions(params, args.spacing, covering=args.covering)
    _write_json(args.out, report.model_dump())
    failure = None if report.passed else {"failed": report.failures}
    return Outcome(report.passed, {"failed": report.failures}, [args.out], failure)


def cmd_attractor(args) -> Outcome:
    family, default = load_family(args.input)
    seed = parse_domain(args.domain, family.dim) or default or Ball(np.zeros(family.dim), 1.0)
    if args.method == "chaos":
        start = seed.center if args.start is None else _vector(args.start, "start point")
        cloud = chaos_game(family, start, args.n_points, args.burn_in, args.seed, chains=args.chains)
    else:
        cloud = attractor(family, seed, args.tol, args.max_iter)
    write_cloud_csv(args.out, cloud)
    return Outcome(True, {"points": int(cloud.shape[0]), "method": args.method}, [args.out])


def cmd_fixed_points(args) -> Outcome:
    family, default = load_family(args.input)
    domain = parse_domain(args.domain, family.dim) or default
    fps = fixed_point_set(family, args.length, args.word_budget, domain)
    write_cloud_csv(args.out, fps.points)
    outputs = [args.out]
    if args.words_out:
        _write_json(args.words_out, {"n": fps.n, "words": fps.words})
        outputs.append(args.words_out)
    return Outcome(True, {"n": fps.n, "points": len(fps)}, outputs)


def cmd_certify(args) -> Outcome:
    family, default = load_family(args.input)
    domain = parse_domain(args.domain, family.dim) or default
    if domain is None:
        raise UsageError("a family file needs --domain")
    cert = certify(family, domain, args.spacing, args.max_word_length, args.word_budget)
    _write_json(args.out, cert.model_dump())
    failure = None if cert.passed else {"failed": cert.failed_hypotheses()}
    summary = {"status": cert.status, "n0": cert.n0, "delta": cert.delta, "kappa": cert.kappa}
    return Outcome(cert.passed, summary, [args.out], failure)


def _sequence(cert: MinimalityCertificate, args) -> FamilySequence:
    return FamilySequence(cert.load_family(), args.epsilon, args.model, args.seed, cert.domain_region())


def cmd_branch(args) -> Outcome:
    cert = load_certificate(args.cert)
    domain = cert.domain_region()
    start = domain.center if args.start is None else _vector(args.start, "start point")
    plan = dense_branch(start, _target(args.target), _sequence(cert, args), cert, args.start_step, seed=args.seed)
    _write_json(args.out, plan.model_dump())
    failure = None if plan.verified else {"word": plan.word, "reason": "replay left the working ball"}
    return Outcome(plan.verified, {"length": plan.length, "bound": plan.bound}, [args.out], failure)


def cmd_orbit(args) -> Outcome:
    cert = load_certificate(args.cert)
    domain = cert.domain_region()
    start = domain.center if args.start is None else _vector(args.start, "start point")
    balls = ball_base(domain, args.radius, args.count)
    plans = dense_orbit(start, _sequence(cert, args), balls, cert, seed=args.seed)
    _write_json(args.out, {"plans": [p.model_dump() for p in plans]})
    passed = all(p.verified for p in plans)
    failure = None if passed else {"unverified": [i for i, p in enumerate(plans) if not p.verified]}
    summary = {"balls": len(balls), "steps": sum(p.length for p in plans)}
    return Outcome(passed, summary, [args.out], failure)


def cmd_trial(args) -> Outcome:
    cert = load_certificate(args.cert)
    report = strong_trial(
        cert,
        args.epsilon,
        args.trials,
        seed=args.seed,
        model=args.model,
        n_targets=args.targets,
        target_radius=args.radius,
        threads=args.threads,
        budget=args.word_budget,
    )
    _write_json(args.out, report.model_dump())
    passed = report.precheck_passed and report.n_success == report.n_trials
    failure = None if passed else {"n_success": report.n_success, "n_trials": report.n_trials, "message": report.message}
    return Outcome(passed, {"success_rate": report.success_rate, "epsilon": report.epsilon}, [args.out], failure)


def _product(args) -> SkewProduct:
    data = _read_json(args.input)
    if "hypotheses" in data:
        product = skew_product_from_certificate(load_certificate(args.input))
    elif "maps" in data and "window" in data:
        product = SkewProduct.from_dict(data)
    else:
        family, default = load_family(args.input)
        domain = parse_domain(args.domain, family.dim) or default
        if domain is None:
            raise UsageError("a family file needs --domain")
        product = SkewProduct.from_family(family, domain, absorbing_ball(family, domain.circumscribed_ball()))
    if args.window > 1 or args.epsilon > 0:
        product = perturbed_product(product, args.window, args.epsilon, args.seed, args.model)
    return product


def cmd_blender(args) -> Outcome:
    product = _product(args)
    kept = []
    report = blender_verify(product, args.nmax, args.spacing, args.base_rate, args.strip_budget, keep=kept)
    _write_json(args.out, report.model_dump())
    outputs = [args.out]
    if args.strips:
        write_strips_csv(args.strips, kept[0])
        outputs.append(args.strips)
    last = report.generations[-1] if report.generations else None
    failure = None
    if not report.passed:
        failure = {
            "covered": last.covered if last else False,
            "max_diameter": last.max_diameter if last else None,
            "witnesses": last.witnesses if last else [],
        }
    return Outcome(report.passed, {"window": report.window, "passed": report.passed}, outputs, failure)


def cmd_mix(args) -> Outcome:
    data = _read_json(args.input)
    product_data = data.get("product", data)
    if "maps" not in product_data:
        raise UsageError(f"{args.input} holds no skew product")
    product = SkewProduct.from_dict(product_data)
    u = Cylinder.parse(args.u, product.k)
    v = Cylinder.parse(args.v, product.k)
    report = mixing_probe(product, u, v, args.nmin, args.horizon, args.seed, args.max_samples, args.threads)
    _write_json(args.out, report.model_dump())
    failure = None if report.passed else {"first_miss": report.first_miss, "message": report.message}
    return Outcome(report.passed, {"passed": report.passed, "samples": report.samples[-1]}, [args.out], failure)


COMMANDS = {
    "construct": cmd_construct,
    "check": cmd_check,
    "attractor": cmd_attractor,
    "fixed-points": cmd_fixed_points,
    "certify": cmd_certify,
    "branch": cmd_branch,
    "orbit": cmd_orbit,
    "trial": cmd_trial,
    "blender": cmd_blender,
    "mix": cmd_mix,
}


INPUT_ARGS = ("input", "params", "cert")
BUDGET_ARGS = ("word_budget", "strip_budget", "max_word_length")
# Recorded as RunConfig fields, or run plumbing that does not change the outputs
CONFIG_ARGS = ("command", "out", "seed", "epsilon", "spacing", "tol", "dim", "manifest", "record", "log_config")


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = _Parser(prog="ifs", description="Robustly minimal iterated function systems and symbolic blenders.")
    parser.add_argument("--version", action="version", version=f"ifs {VERSION}")

    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (IFS_SEED overrides)")
    common.add_argument("--threads", type=int, default=settings.threads, help="worker cap")
    common.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    common.add_argument("--record", action="store_true", help="append the run to the ledger database")
    common.add_argument("--log-config", default=None, help="logging fileConfig path")
    common.add_argument("--word-budget", type=int, default=settings.word_budget)

    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("construct", parents=[common], help="search parameters of the S, S∘T pair in dimension m")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--max-contraction", type=float)
    p.add_argument("--spacing", type=float, help="covering grid spacing")
    p.add_argument("--out", default="params.json")
    p.add_argument("--family-out", help="also write the family JSON")

    p = sub.add_parser("check", parents=[common], help="evaluate the construction inequalities")
    p.add_argument("params", nargs="?", default="params.json")
    p.add_argument("--covering", action="store_true", help="run the grid covering oracle too")
    p.add_argument("--spacing", type=float)
    p.add_argument("--out", default="check.json")

    p = sub.add_parser("attractor", parents=[common], help="attractor cloud (deterministic or chaos game)")
    p.add_argument("input", help="family, parameter or certificate JSON")
    p.add_argument("--domain", default="auto")
    p.add_argument("--method", choices=["deterministic", "chaos"], default="deterministic")
    p.add_argument("--tol", type=float, default=0.01)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--n-points", type=int, default=100000)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--chains", type=int, default=1024)
    p.add_argument("--start", help="chaos game start point x1,...,xm")
    p.add_argument("--out", default="attractor.csv")

    p = sub.add_parser("fixed-points", parents=[common], help="fixed points of all words of one length")
    p.add_argument("input")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--domain", default="auto")
    p.add_argument("--out", default="fixed_points.csv")
    p.add_argument("--words-out", help="also write the words, in the same order")

    p = sub.add_parser("certify", parents=[common], help="minimality certificate on a domain")
    p.add_argument("input")
    p.add_argument("--domain", default="auto")
    p.add_argument("--spacing", type=float)
    p.add_argument("--max-word-length", type=int, default=settings.max_word_length)
    p.add_argument("--out", default="cert.json")

    for name, text in (("branch", "word sending the domain into a target ball"), ("orbit", "orbit through a ball base")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("cert")
        p.add_argument("--start", help="start point x1,...,xm (default: domain center)")
        p.add_argument("--epsilon", type=float, default=0.0, help="per-step perturbation size")
        p.add_argument("--model", choices=["affine", "bump"], default="affine")
        if name == "branch":
            p.add_argument("--target", required=True, help="c1,...,cm,radius")
            p.add_argument("--start-step", type=int, default=0)
            p.add_argument("--out", default="plan.json")
        else:
            p.add_argument("--radius", type=float, default=0.05)
            p.add_argument("--count", type=int, default=9)
            p.add_argument("--out", default="orbit.json")

    p = sub.add_parser("trial", parents=[common], help="strong robustness trials under perturbed sequences")
    p.add_argument("cert")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--targets", type=int, default=5)
    p.add_argument("--radius", type=float, default=0.05)
    p.add_argument("--model", choices=["affine", "bump"], default="affine")
    p.add_argument("--out", default="trial.json")

    p = sub.add_parser("blender", parents=[common], help="strip refinement check of a skew product")
    p.add_argument("input", help="certificate, skew product or family JSON")
    p.add_argument("--domain", default="auto")
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--nmax", type=int, default=40)
    p.add_argument("--eps", dest="epsilon", type=float, default=0.0)
    p.add_argument("--model", choices=["affine", "bump"], default="affine")
    p.add_argument("--spacing", type=float, default=0.02)
    p.add_argument("--base-rate", type=float, default=2.0)
    p.add_argument("--strip-budget", type=int, default=settings.strip_budget)
    p.add_argument("--strips", help="dump the final strips as CSV")
    p.add_argument("--out", default="blender.json")

    p = sub.add_parser("mix", parents=[common], help="topological mixing probe between two cylinders")
    p.add_argument("input", help="blender report or skew product JSON")
    p.add_argument("--u", required=True, help="prefix:c1,...,cm,radius")
    p.add_argument("--v", required=True, help="prefix:c1,...,cm,radius")
    p.add_argument("--nmin", type=int, default=30)
    p.add_argument("--horizon", type=int, default=60)
    p.add_argument("--max-samples", type=int, default=65536)
    p.add_argument("--out", default="mix.json")
    return parser


def _config(args) -> RunConfig:
    inputs = [getattr(args, name) for name in INPUT_ARGS if getattr(args, name, None)]
    budgets = {name: getattr(args, name) for name in BUDGET_ARGS if getattr(args, name, None) is not None}
    skip = set(CONFIG_ARGS) | set(INPUT_ARGS) | set(BUDGET_ARGS)
    options = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return RunConfig(
        command=args.command,
        inputs=inputs,
        output=args.out,
        dim=getattr(args, "dim", None),
        spacing=getattr(args, "spacing", None),
        tol=getattr(args, "tol", None),
        epsilon=getattr(args, "epsilon", None),
        seed=args.seed,
        options=options,
        budgets=budgets,
    )


def _diagnostic(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        _diagnostic(e.to_diagnostic())
        return e.exit_code
    configure_logging(args.log_config)
    seed = get_settings().seed
    if seed is not None:
        args.seed = seed

    config = _config(args)
    outcome = None
    try:
        outcome = COMMANDS[args.command](args)
        exit_code = 0 if outcome.passed else 1
        if outcome.failure is not None:
            _diagnostic(VerificationError(f"{args.command} failed", **outcome.failure).to_diagnostic())
    except IFSError as e:
        exit_code = e.exit_code
        _diagnostic(e.to_diagnostic())

    status = "passed" if exit_code == 0 else ("error" if exit_code == 2 else "failed")
    manifest = Manifest(
        version=VERSION,
        config=config,
        outputs=outcome.outputs if outcome else [],
        status=status,
        exit_code=exit_code,
    )
    manifest_path = args.manifest or f"{args.out}.manifest.json"
    _write_json(manifest_path, manifest.model_dump())
    if args.record:
        from database import init_db
        from models import record_run

        init_db()
        record_run(args.command, status, exit_code, manifest.model_dump(), outcome.summary if outcome else None)
    logger.info("%s finished with exit code %d", args.command, exit_code)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
