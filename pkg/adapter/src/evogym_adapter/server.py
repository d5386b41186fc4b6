"""Wire-protocol server: handshake, then one fitness result per request.

Speaks newline-delimited JSON on stdio (or TCP with --tcp). Each eval
request builds the requested environment for the submitted body, trains a
PPO controller seeded by controller_seed, and replies with the final
evaluation reward. Any per-request failure produces an error reply for
that request_id; the process keeps serving.
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import sys

from evogym_adapter.config import AdapterConfig
from evogym_adapter.ppo import train_controller

PROTOCOL_NAME = "morphoskill-eval"
PROTOCOL_VERSION = 1

logger = logging.getLogger(__name__)


def handshake_line(config: AdapterConfig) -> str:
    return json.dumps(
        {
            "protocol": PROTOCOL_NAME,
            "version": PROTOCOL_VERSION,
            "tasks": config.served_tasks(),
            "pipelining": False,
        }
    )


def handle_request(message: dict, config: AdapterConfig, env_factory_builder=None) -> dict:
    """One eval request -> one result or error reply (never raises)."""
    request_id = message.get("request_id", "unknown")
    try:
        if message.get("type") != "eval":
            raise ValueError(f"unsupported message type {message.get('type')!r}")
        task = message["task"]
        scale = int(message.get("scale", 0))
        env_id = config.env_id_for(task, scale)
        if env_id is None:
            raise ValueError(f"no environment mapped for task {task!r} at scale {scale}")
        builder = env_factory_builder
        if builder is None:
            from evogym_adapter.evogym_backend import make_env_factory
            builder = make_env_factory
        factory = builder(env_id, message["body"])
        fitness = train_controller(
            factory,
            config.ppo,
            seed=int(message.get("controller_seed", 0)),
            total_steps=message.get("budget_steps"),
        )
        if not (fitness == fitness and abs(fitness) != float("inf")):
            raise ValueError(f"non-finite fitness {fitness!r}")
        return {"type": "result", "request_id": request_id, "fitness": float(fitness)}
    except Exception as exc:
        logger.exception("request %s failed", request_id)
        return {"type": "error", "request_id": request_id, "message": str(exc)}


def serve(reader, writer, config: AdapterConfig, env_factory_builder=None):
    """Serve until EOF. Exits nonzero only on protocol-stream corruption."""
    writer.write(handshake_line(config) + "\n")
    writer.flush()
    for line in reader:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SystemExit(f"protocol stream corrupted: {exc}")
        reply = handle_request(message, config, env_factory_builder)
        writer.write(json.dumps(reply) + "\n")
        writer.flush()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evogym-adapter",
        description="PPO fitness evaluator speaking the morphoskill-eval protocol",
    )
    parser.add_argument("--config", default=None, help="JSON config overrides")
    parser.add_argument("--tcp", default=None, metavar="HOST:PORT",
                        help="serve one connection over TCP instead of stdio")
    parser.add_argument("--log", default=None, help="local training-log file")
    args = parser.parse_args(argv)

    if args.log:
        logging.basicConfig(filename=args.log, level=logging.INFO)
    config = AdapterConfig.load(args.config) if args.config else AdapterConfig()

    if args.tcp:
        host, port = args.tcp.rsplit(":", 1)
        with socket.create_server((host, int(port))) as server:
            conn, _ = server.accept()
            with conn, conn.makefile("rw", newline="\n") as stream:
                serve(stream, stream, config)
        return 0
    serve(sys.stdin, sys.stdout, config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
