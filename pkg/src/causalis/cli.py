"""Command-line entry point: ``causalis <command> ...`` prints a JSON report.

Exit codes: 0 pass, 1 contract violation, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .comb import (
    CombConditionError,
    FactorizationError,
    channel_from_process,
    check_isometric_form,
    compose_with_alice,
    verify_subsystem_factorization,
)
from .process import (
    InvalidProcessError,
    ProcessMatrix,
    nonseparability_certificate,
    signaling_test,
    validate_process_matrix,
)
from .switch import (
    SubsystemEncoderPair,
    SwitchConfig,
    switch_comb_unitary,
    switch_encoders,
    switch_process_matrix,
    verify_delocalized_factorization,
)
from .tensor import LabelError, LabeledOperator, SystemId, haar_unitary, operator_from_json, operator_to_json
from .tomography import tomograph_delocalized_operation

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


class InputError(Exception):
    """Unreadable or malformed input; reported with exit code 2."""


@dataclass
class CommandReport:
    command: str
    status: str = "pass"
    seed: int = 0
    residuals: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def check(self, name: str, value: float, tol: float, upper: bool = True) -> None:
        """Record a residual and fail the report if it is out of tolerance."""
        ok = value <= tol if upper else value >= tol
        self.residuals[name] = {"value": float(value), "tol": tol, "ok": bool(ok)}
        if not ok and self.status == "pass":
            self.status = "fail"

    @property
    def exit_code(self) -> int:
        return {"pass": EXIT_PASS, "fail": EXIT_FAIL}.get(self.status, EXIT_ERROR)

    def to_json(self) -> dict:
        return {"command": self.command, "status": self.status, "version": __version__,
                "seed": self.seed, "residuals": self.residuals, "artifacts": self.artifacts,
                "details": self.details}


def _default_seed() -> int:
    raw = os.environ.get("CAUSALIS_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"CAUSALIS_SEED must be an integer, got {raw!r}") from None


def _load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def _load_process(path: str) -> ProcessMatrix:
    try:
        return ProcessMatrix.from_json(_load_json(path), path)
    except InputError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _write_json(path: Path, obj) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return str(path)


def _parse_amplitudes(text: str | None):
    if text is None:
        return None
    try:
        return tuple(complex(x.strip().replace(" ", "")) for x in text.split(","))
    except ValueError:
        raise InputError(f"cannot parse amplitudes {text!r}; use e.g. '0.6,0.8j'") from None


# commands


def cmd_validate(args, rep: CommandReport) -> None:
    W = _load_process(args.process)
    try:
        v = validate_process_matrix(W, seed=rep.seed)
    except InvalidProcessError as exc:
        rep.status = "fail"
        rep.details["error"] = str(exc)
        return
    _validation_residuals(v, rep)
    rep.details["validation"] = v.to_json()


def _validation_residuals(v, rep: CommandReport) -> None:
    rep.check("psd", max(0.0, -v.min_eigenvalue), 1e-10)
    rep.check("identity_weight", abs(v.identity_weight - v.expected_identity_weight), 1e-10)
    rep.check("forbidden_terms", v.n_forbidden, 0)
    rep.check("trace", abs(v.trace - v.expected_trace), 1e-8)
    rep.check("normalization", v.sampled_normalization, 1e-9)


def cmd_build_switch(args, rep: CommandReport) -> None:
    try:
        cfg = SwitchConfig(d=args.d, psi=_parse_amplitudes(args.psi))
    except ValueError as exc:
        raise InputError(str(exc)) from None
    W = switch_process_matrix(cfg, four_party=not args.tripartite)
    v = validate_process_matrix(W, seed=rep.seed)
    _validation_residuals(v, rep)
    rep.details["config"] = cfg.to_json()
    rep.details["four_party"] = not args.tripartite
    rep.details["validation"] = v.to_json()
    if args.save:
        rep.artifacts.append(_write_json(Path(args.save), W.to_json()))


def _labeled_u(u: np.ndarray) -> LabeledOperator:
    return LabeledOperator((SystemId("out", u.shape[0]),), (SystemId("in", u.shape[1]),), u)


def cmd_verify_switch(args, rep: CommandReport) -> None:
    cfg = SwitchConfig(d=args.d, anc_a_in=args.ancilla, anc_a_out=args.ancilla)
    rng = np.random.default_rng(rep.seed)
    worst = 0.0
    samples = [haar_unitary(cfg.d * args.ancilla, rng) for _ in range(args.samples)]
    for u in samples:
        worst = max(worst, verify_delocalized_factorization(u, cfg))
    rep.check("factorization", worst, 1e-10)
    rep.details.update(d=cfg.d, ancilla=args.ancilla, samples=args.samples)
    if args.save_dir:
        out = Path(args.save_dir)
        u = samples[0]
        comb = {"circuit": operator_to_json(switch_comb_unitary(u, cfg)), "u_a": operator_to_json(_labeled_u(u))}
        rep.artifacts.append(_write_json(out / "comb.json", comb))
        rep.artifacts.append(_write_json(out / "encoders.json", switch_encoders(cfg).to_json()))


def cmd_factorize(args, rep: CommandReport) -> None:
    W = _load_process(args.process)
    try:
        V = channel_from_process(W)
    except (LabelError, ValueError) as exc:
        rep.status = "fail"
        rep.details["error"] = f"not a unitary four-party process: {exc}"
        return
    try:
        form = check_isometric_form(V, seed=rep.seed)
    except (CombConditionError, FactorizationError) as exc:
        rep.status = "fail"
        rep.details["error"] = str(exc)
        return
    rep.details["form"] = form.to_json()
    if not form.satisfies:
        rep.status = "fail"
        return
    rng = np.random.default_rng(rep.seed)
    d = V.dim("A_I")
    samples = [haar_unitary(d, rng) for _ in range(args.samples)]
    rep.check("factorization", verify_subsystem_factorization(V, form.encoders, samples), 1e-9)
    rep.check("first_tooth_unitarity", form.encoders.w_in.isometry_residual(), 1e-9)
    rep.check("second_tooth_isometry", form.encoders.w_out.isometry_residual(), 1e-9)
    if args.save_dir:
        out = Path(args.save_dir)
        u = samples[0]
        comb = {"circuit": operator_to_json(compose_with_alice(V, u)), "u_a": operator_to_json(_labeled_u(u))}
        rep.artifacts.append(_write_json(out / "comb.json", comb))
        rep.artifacts.append(_write_json(out / "encoders.json", form.encoders.to_json()))


def cmd_tomography(args, rep: CommandReport) -> None:
    comb = _load_json(args.comb)
    try:
        circuit = operator_from_json(comb.get("circuit", comb) if isinstance(comb, dict) else comb, f"{args.comb}.circuit")
        target = operator_from_json(comb["u_a"], f"{args.comb}.u_a").data if "u_a" in comb else None
        encoders = SubsystemEncoderPair.from_json(_load_json(args.encoders), args.encoders)
        rpt = tomograph_delocalized_operation(circuit, encoders, shots=args.shots, seed=rep.seed, target=target)
    except InputError:
        raise
    except (LabelError, KeyError, TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    tol = args.tol if args.tol is not None else (1e-8 if args.shots is None else 0.02)
    rep.check("success_weight", 1.0 - rpt.min_success_weight, 1e-9 if args.shots is None else 1e-6)
    if rpt.target is not None:
        rep.check("choi", rpt.choi_residual, tol)
        rep.details["max_trace_distance"] = rpt.max_trace_distance
    rep.details["shots"] = args.shots
    rep.details["reconstructed"] = rpt.reconstructed.to_json()


def cmd_signaling(args, rep: CommandReport) -> None:
    W = _load_process(args.process)
    try:
        res = signaling_test(W, args.source, args.target, samples=args.samples, seed=rep.seed)
    except (LabelError, KeyError) as exc:
        raise InputError(str(exc)) from None
    rep.details["signaling"] = res.to_json()
    if args.expect == "signal":
        rep.check("operational_gap", res.operational_gap, 1e-6, upper=False)
    elif args.expect == "none":
        rep.check("structural_residual", res.structural_residual, 1e-9)


def cmd_certify(args, rep: CommandReport) -> None:
    W = _load_process(args.process)
    try:
        cert = nonseparability_certificate(W, seed=rep.seed)
    except (LabelError, ValueError) as exc:
        raise InputError(str(exc)) from None
    rep.details["certificate"] = cert.to_json()
    rep.details["evidence"] = cert.evidence
    if not cert.certified:
        rep.status = "fail"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalis", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"causalis {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: $CAUSALIS_SEED or 0)")
    common.add_argument("--out", help="write the report here instead of stdout")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check that a JSON operator is a valid process matrix")
    s.add_argument("process")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("build-switch", parents=[common], help="build and validate the SWITCH process matrix")
    s.add_argument("--d", type=int, default=2)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--four-party", action="store_true", default=True)
    g.add_argument("--tripartite", action="store_true")
    s.add_argument("--psi", help="target state amplitudes, comma separated (tripartite only)")
    s.add_argument("--save", help="write the process matrix JSON here")
    s.set_defaults(func=cmd_build_switch)

    s = sub.add_parser("verify-switch", parents=[common], help="check the controlled-swap factorization")
    s.add_argument("--samples", type=int, default=50)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--ancilla", type=int, default=1)
    s.add_argument("--save-dir", help="write comb.json and encoders.json here")
    s.set_defaults(func=cmd_verify_switch)

    s = sub.add_parser("factorize", parents=[common], help="extract delocalized subsystems of a unitary process")
    s.add_argument("process")
    s.add_argument("--samples", type=int, default=50)
    s.add_argument("--save-dir", help="write comb.json and encoders.json here")
    s.set_defaults(func=cmd_factorize)

    s = sub.add_parser("tomography", parents=[common], help="reconstruct the delocalized operation")
    s.add_argument("comb")
    s.add_argument("encoders")
    s.add_argument("--shots", type=int, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.set_defaults(func=cmd_tomography)

    s = sub.add_parser("signaling", parents=[common], help="signaling from one party to another")
    s.add_argument("process")
    s.add_argument("--from", dest="source", required=True)
    s.add_argument("--to", dest="target", required=True)
    s.add_argument("--samples", type=int, default=64)
    s.add_argument("--expect", choices=("signal", "none"), help="fail unless this outcome is observed")
    s.set_defaults(func=cmd_signaling)

    s = sub.add_parser("certify", parents=[common], help="rank-one two-way signaling certificate")
    s.add_argument("process")
    s.set_defaults(func=cmd_certify)
    return p


def run(argv=None) -> tuple[int, CommandReport | None]:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return (EXIT_PASS if exc.code == 0 else EXIT_ERROR), None
    rep = CommandReport(args.command)
    try:
        rep.seed = args.seed if args.seed is not None else _default_seed()
        args.func(args, rep)
    except InputError as exc:
        rep.status = "error"
        rep.details["error"] = str(exc)
    text = json.dumps(rep.to_json(), indent=2, sort_keys=True)
    if args.out:
        try:
            Path(args.out).write_text(text + "\n")
        except OSError as exc:
            print(f"causalis: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
            return EXIT_ERROR, rep
    else:
        print(text)
    if rep.status == "error":
        print(f"causalis {rep.command}: {rep.details['error']}", file=sys.stderr)
    return rep.exit_code, rep


def main(argv=None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
