"""Command-line client for the coapt service.

Every subcommand builds a request and sends it to the service API: by
default the FastAPI app is driven in-process (no socket), and ``--server``
points the same requests at a remote instance instead. Exit codes: 0 on
success, 2 on any validation/configuration error, 3 when training
diverged.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3

RUN_COMMANDS = {
    "train": "/train",
    "eval-base-novel": "/eval/base-novel",
    "eval-cross": "/eval/cross",
    "eval-domain": "/eval/domain",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coapt", description=__doc__)
    parser.add_argument("--server", default=None, help="base URL of a running service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="single seed for the run")
        p.add_argument("--num-attrs", type=int, default=None, help="attribute words per class")
        p.add_argument("--k-ensemble", type=int, default=None, help="vocabulary sets ensembled at inference")
        p.add_argument("--vocab", default=None, help="attribute vocabulary JSON path")
        p.add_argument("--embeddings", default=None, help="COAPTEMB token export path")
        p.add_argument("--out", default=None, help="directory for report.json / summary.csv")

    for name in RUN_COMMANDS:
        add_run_flags(sub.add_parser(name, help=f"run the {name} protocol"))

    sweep = sub.add_parser("sweep-attrs", help="base-to-novel runs over attribute counts")
    add_run_flags(sweep)
    sweep.add_argument("--counts", default="0,4,8", help="comma-separated attribute counts")

    grad = sub.add_parser("gradcheck", help="finite-difference check of the full training loss")
    add_run_flags(grad)
    grad.add_argument("--tolerance", type=float, default=1e-4)

    vv = sub.add_parser("vocab-validate", help="validate an attribute vocabulary JSON file")
    vv.add_argument("--vocab", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
        overrides["seeds"] = str(args.seed)
    if args.num_attrs is not None:
        overrides["num_attrs"] = str(args.num_attrs)
    if args.k_ensemble is not None:
        overrides["k_ensemble"] = str(args.k_ensemble)
    if args.vocab is not None:
        overrides["vocab_path"] = args.vocab
    if args.embeddings is not None:
        overrides["embeddings_path"] = args.embeddings
    return overrides


def _run_request(args) -> dict:
    body: dict = {"overrides": _overrides(args), "out_dir": args.out}
    if args.config:
        body["config_text"] = Path(args.config).read_text(encoding="utf-8")
    return body


async def _post(server: str | None, path: str, body: dict) -> httpx.Response:
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=None) as client:
            return await client.post(path, json=body)
    from .service import app

    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url="http://coapt", timeout=None) as client:
        return await client.post(path, json=body)


def _fail(response: httpx.Response) -> int:
    try:
        detail = response.json().get("detail")
    except ValueError:
        detail = response.text
    if isinstance(detail, dict):
        kind = detail.get("kind", "error")
        print(f"error ({kind}): {detail.get('message', '')}", file=sys.stderr)
        return EXIT_DIVERGENCE if kind == "divergence" else EXIT_VALIDATION
    print(f"error: {detail}", file=sys.stderr)
    # 422 comes from request-model validation; anything else is a failure
    return EXIT_VALIDATION if response.status_code in (400, 422) else EXIT_FAILURE


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service import app

        uvicorn.run(app, host=args.host, port=args.port)
        return EXIT_OK

    if args.command == "vocab-validate":
        response = asyncio.run(_post(args.server, "/vocab/validate", {"path": args.vocab}))
        if response.status_code != 200:
            return _fail(response)
        payload = response.json()
        print(json.dumps(payload, indent=2))
        return EXIT_OK if payload["valid"] else EXIT_VALIDATION

    if args.command == "gradcheck":
        body = _run_request(args)
        body["tolerance"] = args.tolerance
        body["use_default_toy_config"] = not (args.config or body["overrides"])
        response = asyncio.run(_post(args.server, "/gradcheck", body))
        if response.status_code != 200:
            return _fail(response)
        payload = response.json()
        print(json.dumps(payload, indent=2))
        return EXIT_OK if payload["passed"] else EXIT_FAILURE

    if args.command == "sweep-attrs":
        body = _run_request(args)
        try:
            body["counts"] = [int(v) for v in args.counts.split(",") if v.strip()]
        except ValueError:
            print(f"error: --counts must be comma-separated integers, got {args.counts!r}", file=sys.stderr)
            return EXIT_VALIDATION
        response = asyncio.run(_post(args.server, "/sweep-attrs", body))
        if response.status_code != 200:
            return _fail(response)
        print(response.json()["csv"], end="")
        return EXIT_OK

    response = asyncio.run(_post(args.server, RUN_COMMANDS[args.command], _run_request(args)))
    if response.status_code != 200:
        return _fail(response)
    payload = response.json()
    if "report" in payload:
        print(json.dumps(payload["report"], indent=2))
    else:
        print(json.dumps(payload["reports"], indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
