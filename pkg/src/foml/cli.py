"""Thin command-line client for the experiment service.

Every subcommand talks to the HTTP API: against an in-process app instance by
default, or a remote server via --server. Flags mirror config keys one-to-one
and are sent as overrides; parsing and validation happen server-side so there
is exactly one config code path.

Exit codes: 0 success, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import FIELDS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _client(server):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _add_config_flags(parser, exclude=()):
    for spec in FIELDS:
        if spec.name in exclude:
            continue
        parser.add_argument(
            f"--{spec.name}",
            dest=f"cfg_{spec.name}",
            metavar=spec.kind.upper(),
            help=f"{spec.help} (default: {spec.default})",
        )


def _collect_overrides(args):
    overrides = {}
    for spec in FIELDS:
        value = getattr(args, f"cfg_{spec.name}", None)
        if value is not None:
            overrides[spec.name] = value
    return overrides


def _read_config_file(path):
    if not path:
        return ""
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG) from exc


def _finish_run(resp):
    if resp.status_code == 400:
        print(f"config error: {resp.json()['detail']}", file=sys.stderr)
        return EXIT_CONFIG
    resp.raise_for_status()
    status = resp.json()
    state = status.get("state")
    if state == "failed_config":
        print(f"config error: {status.get('error')}", file=sys.stderr)
        return EXIT_CONFIG
    if state == "failed_numeric":
        print(f"numeric failure: {status.get('error')}", file=sys.stderr)
        if status.get("checkpoint_path"):
            print(f"failure checkpoint: {status['checkpoint_path']}", file=sys.stderr)
        return EXIT_NUMERIC
    if state != "succeeded":
        print(f"run {status.get('run_id')} {state}: {status.get('error')}", file=sys.stderr)
        return 1
    summary = status.get("summary") or {}
    print(f"run {status['run_id']} finished: outdir={status['outdir']}")
    for key in ("steps", "tasks", "final_error", "last10_mean_error", "regret"):
        if summary.get(key) is not None:
            print(f"  {key} = {summary[key]}")
    return EXIT_OK


def cmd_run(args):
    with _client(args.server) as client:
        resp = client.post(
            "/runs",
            json={
                "config_text": _read_config_file(args.config),
                "overrides": _collect_overrides(args),
                "wait": True,
            },
        )
    return _finish_run(resp)


def cmd_resume(args):
    with _client(args.server) as client:
        resp = client.post(
            "/resume",
            json={
                "checkpoint_path": args.checkpoint,
                "config_text": _read_config_file(args.config) if args.config else None,
                "outdir": args.outdir,
                "wait": True,
            },
        )
    return _finish_run(resp)


def cmd_convert(args):
    with _client(args.server) as client:
        resp = client.post(
            "/convert-dataset",
            json={
                "images_path": args.images,
                "labels_path": args.labels,
                "out_path": args.out,
                "limit": args.limit,
            },
        )
    if resp.status_code == 400:
        print(f"conversion error: {resp.json()['detail']}", file=sys.stderr)
        return EXIT_CONFIG
    resp.raise_for_status()
    body = resp.json()
    print(f"wrote {body['items']} items to {body['out_path']}")
    return EXIT_OK


def cmd_sweep(args):
    values = [v for v in args.values.split(",") if v]
    with _client(args.server) as client:
        resp = client.post(
            "/sweeps",
            json={
                "config_text": _read_config_file(args.config),
                "overrides": _collect_overrides(args),
                "param": args.param,
                "values": values,
                "outdir": args.outdir,
            },
        )
    resp.raise_for_status()
    status = resp.json()
    if status["state"] == "failed_config":
        print(f"config error: {status.get('error')}", file=sys.stderr)
        return EXIT_CONFIG
    if status["state"] == "failed_numeric":
        print(f"numeric failure: {status.get('error')}", file=sys.stderr)
        return EXIT_NUMERIC
    if status["state"] != "succeeded":
        print(f"sweep failed: {status.get('error')}", file=sys.stderr)
        return 1
    print(f"sweep {status['run_id']} over {args.param}:")
    for row in status["rows"]:
        print(f"  {args.param}={row['value']}  last10_mean_error={row['last10_mean_error']:.4f}")
    print(f"summary: {args.outdir}/sweep_summary.csv")
    return EXIT_OK


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="foml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--config", help="config file (key = value lines)")
    p_run.add_argument("--server", help="remote service URL (default: in-process)")
    _add_config_flags(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_res = sub.add_parser("resume", help="continue a checkpointed run")
    p_res.add_argument("--checkpoint", required=True, help="checkpoint file")
    p_res.add_argument("--config", help="config file to verify against the checkpoint")
    p_res.add_argument("--outdir", help="write continued artifacts here")
    p_res.add_argument("--server", help="remote service URL")
    p_res.set_defaults(fn=cmd_resume)

    p_cv = sub.add_parser("convert-dataset", help="convert IDX images+labels to FOMLDS v1")
    p_cv.add_argument("--images", required=True)
    p_cv.add_argument("--labels", required=True)
    p_cv.add_argument("--out", required=True)
    p_cv.add_argument("--limit", type=int, default=0, help="keep only the first N items")
    p_cv.add_argument("--server", help="remote service URL")
    p_cv.set_defaults(fn=cmd_convert)

    p_sw = sub.add_parser("sweep", help="sequential runs over one config key")
    p_sw.add_argument("--config", help="base config file")
    p_sw.add_argument("--param", required=True, help="config key to sweep")
    p_sw.add_argument("--values", required=True, help="comma-separated values")
    p_sw.add_argument("--outdir", required=True, help="sweep output root")
    p_sw.add_argument("--server", help="remote service URL")
    _add_config_flags(p_sw, exclude=("outdir",))
    p_sw.set_defaults(fn=cmd_sweep)

    p_srv = sub.add_parser("serve", help="start the experiment service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8750)
    p_srv.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
