"""Command-line front end.

The CLI is a thin client: it reads and writes local files, then delegates
all computation to the HTTP service (mounted in-process by default, or a
remote server via ``--server``). Exit codes: 0 success, 2 configuration
or schema error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .client import ServiceClient
from .errors import ConfigError
from .io import (
    GramArtifact,
    build_manifest,
    load_artifact,
    manifest_path_for,
    atomic_write_text,
    read_results_csv,
    read_table,
    result_rows_from_dicts,
    results_csv_text,
    save_artifact,
    write_manifest,
    write_table,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _resolve_seed(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("PRIVSHIFT_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"PRIVSHIFT_SEED must be an integer, got {env!r}", EXIT_CONFIG)
    return 0


def _post(client: ServiceClient, path: str, payload: dict) -> dict:
    response = client.post(path, payload)
    if response.status_code == 200:
        return response.json()
    try:
        detail = response.json().get("detail")
    except ValueError:
        detail = None
    if isinstance(detail, dict):
        message = detail.get("message", str(detail))
        kind = detail.get("kind")
    else:
        message = str(detail) if detail else response.text
        kind = None
    if response.status_code in (400, 422) or kind == "config":
        raise CliError(f"invalid request: {message}", EXIT_CONFIG)
    raise CliError(f"computation failed: {message}", EXIT_NUMERICAL)


def _read_table_checked(path: str) -> tuple[list[str], list[list[float]]]:
    try:
        columns, data = read_table(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    return columns, data.tolist()


def _write_text_checked(path: str, text: str) -> None:
    try:
        atomic_write_text(path, text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_transform(args: argparse.Namespace, client: ServiceClient) -> int:
    columns, rows = _read_table_checked(args.input)
    seed = _resolve_seed(args.seed)
    payload = {
        "data": {"columns": columns, "rows": rows},
        "outcome": args.outcome,
        "method": args.method,
        "epsilon": args.epsilon,
        "delta": args.delta,
        "lambda": getattr(args, "lambda"),
        "rows_out": args.rows,
        "seed": seed,
        "dp_split": args.dp_split,
    }
    body = _post(client, "/v1/transform", payload)
    if body.get("synthetic") is not None:
        table = body["synthetic"]
        try:
            import numpy as np

            write_table(args.output, table["columns"], np.asarray(table["rows"], dtype=float))
        except OSError as exc:
            raise CliError(f"cannot write {args.output}: {exc}", EXIT_IO)
        print(f"wrote synthetic data ({len(table['rows'])} rows) to {args.output}")
        return EXIT_OK

    artifact = GramArtifact.from_json_dict(body["artifact"])
    try:
        save_artifact(artifact, args.output)
    except OSError as exc:
        raise CliError(f"cannot write {args.output}: {exc}", EXIT_IO)
    print(f"wrote {artifact.transform['method']} artifact to {args.output}")
    if body.get("ledger") is not None:
        _print_ledger(body["ledger"])
    return EXIT_OK


def _print_ledger(ledger: dict) -> None:
    print("privacy budget ledger:")
    print(f"  {'statistic':<16} {'epsilon':>12} {'delta':>12}")
    for row in ledger["allocations"]:
        print(f"  {row['label']:<16} {row['epsilon']:>12.6g} {row['delta']:>12.6g}")
    print(
        f"  spent: epsilon={ledger['spent_epsilon']:.6g} delta={ledger['spent_delta']:.6g} "
        f"(stated budget epsilon={ledger['total_epsilon']:.6g} delta={ledger['total_delta']:.6g})"
    )
    if not ledger["within_budget"]:
        print("  note: per-statistic calibration; composed spend exceeds the stated budget")


def cmd_estimate(args: argparse.Namespace, client: ServiceClient) -> int:
    columns, rows = _read_table_checked(args.rct)
    seed = _resolve_seed(args.seed)
    payload = {
        "rct": {"columns": columns, "rows": rows},
        "outcome": args.outcome,
        "treatment": args.treatment,
        "pi": args.pi,
        "estimator": args.estimator,
        "bootstrap": args.bootstrap,
        "seed": seed,
        "max_rct_covariates": args.max_rct_covariates,
        "second_moments": args.second_moments,
    }
    if args.aux:
        if args.aux.endswith(".json"):
            try:
                artifact = load_artifact(args.aux)
            except OSError as exc:
                raise CliError(f"cannot read {args.aux}: {exc}", EXIT_IO)
            except ConfigError as exc:
                raise CliError(str(exc), EXIT_CONFIG)
            payload["aux_artifact"] = artifact.to_json_dict()
        else:
            aux_columns, aux_rows = _read_table_checked(args.aux)
            payload["aux_data"] = {"columns": aux_columns, "rows": aux_rows}
            payload["aux_outcome"] = args.aux_outcome or args.outcome
    body = _post(client, "/v1/estimate", payload)
    record = dict(body)
    record["seed"] = seed
    _write_text_checked(args.output, json.dumps(record, indent=2) + "\n")
    manifest = build_manifest("estimate", _resolved_args(args, seed), seed, [args.output])
    _write_text_checked(manifest_path_for(args.output), json.dumps(manifest, indent=2) + "\n")
    ci = ""
    if body.get("ci_low") is not None:
        ci = f", 95% CI [{body['ci_low']:.6g}, {body['ci_high']:.6g}]"
    print(f"{body['estimator']}: tau_hat = {body['tau_hat']:.6g}{ci}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, client: ServiceClient) -> int:
    seed = _resolve_seed(args.seed)
    payload = {
        "study": args.study,
        "p": args.p,
        "reps": args.reps,
        "generations": args.generations,
        "assignments": args.assignments,
        "n": args.n,
        "m_aux": args.m,
        "candidate_pool": args.candidate_pool,
        "bootstrap": args.bootstrap,
        "max_rct_covariates": args.max_rct_covariates,
        "transforms": args.transforms,
        "delta": args.delta,
        "seed": seed,
        "threads": args.threads,
    }
    body = _post(client, "/v1/simulate", payload)
    rows = result_rows_from_dicts(body["rows"])
    _write_text_checked(args.output, results_csv_text_rows(rows))
    resolved = _resolved_args(args, seed)
    manifest = build_manifest("simulate", resolved, seed, [args.output])
    manifest["diagnostics"] = body.get("diagnostics", {})
    _write_text_checked(manifest_path_for(args.output), json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(rows)} result rows to {args.output}")
    for key, value in body.get("diagnostics", {}).items():
        print(f"  {key}: {value}")
    return EXIT_OK


def results_csv_text_rows(rows) -> str:
    from .simulation import StudyResults

    if not rows:
        raise CliError("simulation returned no rows", EXIT_NUMERICAL)
    shell = StudyResults(study=rows[0].study, p=rows[0].p, rows=tuple(rows))
    return results_csv_text(shell)


def cmd_report(args: argparse.Namespace, client: ServiceClient) -> int:
    try:
        rows = read_results_csv(args.input)
    except OSError as exc:
        raise CliError(f"cannot read {args.input}: {exc}", EXIT_IO)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG)
    body = _post(client, "/v1/report", {"rows": rows, "table": args.table, "format": args.format})
    if args.output:
        _write_text_checked(args.output, body["content"])
        print(f"wrote {args.table} table to {args.output}")
    else:
        sys.stdout.write(body["content"])
    return EXIT_OK


def cmd_serve(args: argparse.Namespace, client: ServiceClient) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def _resolved_args(args: argparse.Namespace, seed: int) -> dict:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "server")}
    resolved["seed"] = seed
    return resolved


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="privshift",
        description="Disclosure-limiting transforms and experiment/auxiliary effect estimation.",
    )
    parser.add_argument("--version", action="version", version=f"privshift {__version__}")
    parser.add_argument("--server", default=None, help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("transform", help="release a transformed summary of confidential data")
    t.add_argument("--input", required=True, help="confidential data CSV (no intercept column)")
    t.add_argument("--method", required=True, choices=["gram", "en-gram", "dp-gram", "synth"])
    t.add_argument("--outcome", required=True, help="outcome column name")
    t.add_argument("--epsilon", type=float, default=None)
    t.add_argument("--delta", type=float, default=1e-5)
    t.add_argument("--lambda", type=float, default=None, help="entry-noise variance (default: per-column empirical)")
    t.add_argument("--rows", type=int, default=None, help="synthetic rows to draw (synth only)")
    t.add_argument("--dp-split", default="per_statistic", choices=["element", "block", "per_statistic"])
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--output", required=True)
    t.set_defaults(func=cmd_transform)

    e = sub.add_parser("estimate", help="estimate a treatment effect from experiment data")
    e.add_argument("--rct", required=True, help="experiment data CSV")
    e.add_argument("--aux", default=None, help="auxiliary artifact (.json) or raw CSV")
    e.add_argument("--aux-outcome", default=None, help="outcome column in a raw auxiliary CSV")
    e.add_argument("--estimator", required=True, choices=["dm", "ols", "ipw", "cw", "acw", "fipw", "loop"])
    e.add_argument("--outcome", required=True)
    e.add_argument("--treatment", required=True)
    e.add_argument("--pi", type=float, required=True, help="known treatment probability")
    e.add_argument("--bootstrap", type=int, default=0)
    e.add_argument("--max-rct-covariates", type=int, default=20)
    e.add_argument("--second-moments", action="store_true")
    e.add_argument("--seed", type=int, default=None)
    e.add_argument("--output", required=True)
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="run a replication study")
    s.add_argument("--study", required=True, choices=["generalization", "precision"])
    s.add_argument("--p", type=int, required=True)
    s.add_argument("--reps", type=int, default=1000, help="replications (generalization)")
    s.add_argument("--generations", type=int, default=100, help="data generations (precision)")
    s.add_argument("--assignments", type=int, default=1000, help="assignment draws per generation (precision)")
    s.add_argument("--n", type=int, default=100, help="experiment size (precision)")
    s.add_argument("--m", type=int, default=1000, help="auxiliary sample size")
    s.add_argument("--candidate-pool", type=int, default=1300)
    s.add_argument("--bootstrap", type=int, default=100)
    s.add_argument("--max-rct-covariates", type=int, default=20)
    s.add_argument("--transforms", default="gram", help="comma list: gram,en:1,dp:1,dp:3,synth")
    s.add_argument("--delta", type=float, default=1e-5)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="render study results as a table")
    r.add_argument("--input", required=True, help="results CSV from simulate")
    r.add_argument("--table", required=True, choices=["coverage", "mse", "precision"])
    r.add_argument("--format", default="markdown", choices=["markdown", "csv"])
    r.add_argument("--output", default=None, help="write here instead of stdout")
    r.set_defaults(func=cmd_report)

    v = sub.add_parser("serve", help="run the HTTP service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    v.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad flags, matching the config exit code
        return int(exc.code or 0)
    try:
        if args.command == "serve":
            return cmd_serve(args, None)
        with ServiceClient(args.server) as client:
            return args.func(args, client)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
