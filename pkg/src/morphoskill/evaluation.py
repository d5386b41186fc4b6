"""Pluggable fitness evaluation.

Two evaluator families: a deterministic built-in surrogate for desk-scale
testing of the whole search loop, and a client for external evaluators
speaking the newline-delimited JSON wire protocol (handshake, then one
request/response pair per evaluation). The surrogate is a motif-scoring
function, not physics; it exists so the loop has a reproducible, learnable
landscape.
"""

from __future__ import annotations

import json
import socket
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from morphoskill.voxelbody import (
    EMPTY,
    H_ACT,
    RIGID,
    SOFT,
    V_ACT,
    Body,
    check_validity,
)

PROTOCOL_NAME = "morphoskill-eval"
PROTOCOL_VERSION = 1
DEFAULT_BUDGET_STEPS = 512_000
DEFAULT_TIMEOUT_S = 3600.0


class InvalidBody(ValueError):
    pass


class EvaluatorUnavailable(Exception):
    pass


class ProtocolViolation(Exception):
    pass


class EvaluationTimeout(Exception):
    pass


@dataclass(frozen=True)
class EvalRequest:
    request_id: str
    body: Body
    task: str
    scale: int
    controller_seed: int
    budget_steps: int = DEFAULT_BUDGET_STEPS


@dataclass(frozen=True)
class EvalResult:
    request_id: str
    fitness: float | None
    wall_time: float
    evaluator: str
    error: str | None = None


# ---------------------------------------------------------------------------
# Surrogate landscape
# ---------------------------------------------------------------------------
#
# Feature set (frozen; changing any definition invalidates the golden
# constants pinned in the tests):
#
#   actuator_balance      4*p*(1-p) where p = actuators / non-empty cells.
#                         Peaks when half the material actuates.
#   bottom_material       non-empty cells in the bottom row / grid size.
#   rigid_support         actuator cells with a rigid 4-neighbor / actuators.
#                         (Not tiling-invariant: interior subcells of a tiled
#                         actuator block lose their rigid neighbor.)
#   frame_perimeter       boundary edge count of the largest rigid component
#                         / (4 * grid size).
#   soft_contact          soft cells in the bottom row / grid size.
#
# All features except rigid_support are invariant under k x k tiling, so a
# profile with zero rigid_support weight scores a body and its tiling
# identically.

FEATURE_NAMES = (
    "actuator_balance",
    "bottom_material",
    "rigid_support",
    "frame_perimeter",
    "soft_contact",
)

# Per-profile weights over FEATURE_NAMES. walker_like rewards rigid support
# adjacent to actuators (the learnable signal for skill-conditioned search);
# pusher_like is the scale-invariant profile (zero rigid_support weight).
TASK_PROFILES = {
    "walker_like": (2.0, 3.0, 4.0, 1.0, 1.0),
    "carrier_like": (1.5, 2.5, 2.0, 3.0, 2.0),
    "pusher_like": (2.5, 3.5, 0.0, 2.0, 3.0),
}


def body_features(body: Body) -> dict:
    cells = body.cells
    n = body.size
    non_empty = int(np.count_nonzero(cells))
    if non_empty == 0:
        return {name: 0.0 for name in FEATURE_NAMES}
    act_mask = (cells == H_ACT) | (cells == V_ACT)
    n_act = int(act_mask.sum())
    p = n_act / non_empty
    balance = 4.0 * p * (1.0 - p)
    bottom = cells[n - 1]
    bottom_material = int(np.count_nonzero(bottom)) / n
    supported = 0
    for r, c in zip(*np.nonzero(act_mask)):
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < n and 0 <= nc < n and cells[nr, nc] == RIGID:
                supported += 1
                break
    rigid_support = supported / n_act if n_act else 0.0
    frame_perimeter = _largest_rigid_perimeter(cells) / (4.0 * n)
    soft_contact = int((bottom == SOFT).sum()) / n
    return {
        "actuator_balance": balance,
        "bottom_material": bottom_material,
        "rigid_support": rigid_support,
        "frame_perimeter": frame_perimeter,
        "soft_contact": soft_contact,
    }


def _largest_rigid_perimeter(cells: np.ndarray) -> int:
    """Boundary edge count of the largest 4-connected rigid component."""
    n_rows, n_cols = cells.shape
    seen = np.zeros(cells.shape, dtype=bool)
    best = 0
    for r0 in range(n_rows):
        for c0 in range(n_cols):
            if cells[r0, c0] != RIGID or seen[r0, c0]:
                continue
            stack = [(r0, c0)]
            seen[r0, c0] = True
            comp = []
            while stack:
                r, c = stack.pop()
                comp.append((r, c))
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < n_rows and 0 <= nc < n_cols:
                        if cells[nr, nc] == RIGID and not seen[nr, nc]:
                            seen[nr, nc] = True
                            stack.append((nr, nc))
            comp_set = set(comp)
            perim = 0
            for r, c in comp:
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if not (0 <= nr < n_rows and 0 <= nc < n_cols) or (nr, nc) not in comp_set:
                        perim += 1
            best = max(best, perim)
    return best


def surrogate_fitness(body: Body, task_profile: str = "walker_like") -> float:
    """Deterministic weighted motif score; pure function of the body."""
    if task_profile not in TASK_PROFILES:
        raise KeyError(f"unknown task profile {task_profile!r}")
    if not check_validity(body).is_valid:
        raise InvalidBody("surrogate only scores valid bodies")
    feats = body_features(body)
    weights = TASK_PROFILES[task_profile]
    return float(sum(w * feats[name] for w, name in zip(weights, FEATURE_NAMES)))


PROFILE_FOR_TASK = {
    "Walker-v0": "walker_like",
    "BridgeWalker-v0": "walker_like",
    "Balancer-v0": "walker_like",
    "Carrier-v0": "carrier_like",
    "Climber-v0": "walker_like",
    "Jumper-v0": "walker_like",
    "Pusher-v0": "pusher_like",
}


def profile_for_task(task: str) -> str:
    base = task.replace("-10x10", "")
    return PROFILE_FOR_TASK.get(base, "walker_like")


class SurrogateEvaluator:
    """Reentrant evaluator backed by surrogate_fitness."""

    name = "surrogate"

    def __init__(self, profile: str | None = None):
        self.profile = profile

    def evaluate(self, request: EvalRequest) -> EvalResult:
        start = time.monotonic()
        try:
            profile = self.profile or profile_for_task(request.task)
            fitness = surrogate_fitness(request.body, profile)
            return EvalResult(
                request_id=request.request_id,
                fitness=fitness,
                wall_time=time.monotonic() - start,
                evaluator="surrogate",
            )
        except Exception as exc:
            return EvalResult(
                request_id=request.request_id,
                fitness=None,
                wall_time=time.monotonic() - start,
                evaluator="surrogate",
                error=str(exc),
            )


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------

def evaluate_batch(requests, evaluator, parallelism: int = 1) -> list:
    """Evaluate all requests; results come back in request order.

    Every issued request costs one budget unit, including failures (the
    attempt was spent). A batch is only issued once the evaluator is
    reachable; EvaluatorUnavailable aborts before anything is charged.
    """
    requests = list(requests)
    if not requests:
        return []
    for req in requests:
        if not check_validity(req.body).is_valid:
            raise InvalidBody(f"request {req.request_id} carries an invalid body")
    ping = getattr(evaluator, "ensure_available", None)
    if ping is not None:
        ping()
    if parallelism <= 1 or len(requests) == 1:
        return [evaluator.evaluate(req) for req in requests]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(evaluator.evaluate, requests))


# ---------------------------------------------------------------------------
# External evaluator client (newline-delimited JSON over a stream)
# ---------------------------------------------------------------------------

def encode_request(request: EvalRequest) -> str:
    return json.dumps(
        {
            "type": "eval",
            "request_id": request.request_id,
            "task": request.task,
            "scale": request.scale,
            "body": request.body.to_rows(),
            "controller_seed": request.controller_seed,
            "budget_steps": request.budget_steps,
        }
    )


def parse_handshake(line: str) -> dict:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolViolation(f"handshake is not JSON: {exc}") from exc
    if doc.get("protocol") != PROTOCOL_NAME or doc.get("version") != PROTOCOL_VERSION:
        raise ProtocolViolation(f"unexpected handshake {doc!r}")
    if not isinstance(doc.get("tasks"), list) or not isinstance(doc.get("pipelining"), bool):
        raise ProtocolViolation("handshake must list tasks and pipelining")
    return doc


class _LineStream:
    """Line-oriented send/receive over a subprocess stdio pair or a socket."""

    def __init__(self, reader, writer, sock=None):
        self._reader = reader
        self._writer = writer
        self._sock = sock

    def send_line(self, line: str):
        self._writer.write(line + "\n")
        self._writer.flush()

    def recv_line(self, timeout: float) -> str:
        if self._sock is not None:
            self._sock.settimeout(timeout)
        line = self._reader.readline()
        if not line:
            raise ProtocolViolation("stream closed by evaluator")
        return line.rstrip("\n")

    def close(self):
        try:
            self._writer.close()
        except Exception:
            pass
        if self._sock is not None:
            self._sock.close()


class ExternalEvaluator:
    """Client side of the wire protocol; one request/response per message."""

    name = "external"

    def __init__(self, stream: _LineStream, timeout: float = DEFAULT_TIMEOUT_S):
        self.stream = stream
        self.timeout = timeout
        self.handshake = parse_handshake(stream.recv_line(timeout))

    @classmethod
    def spawn(cls, argv, timeout: float = DEFAULT_TIMEOUT_S) -> "ExternalEvaluator":
        try:
            proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True
            )
        except OSError as exc:
            raise EvaluatorUnavailable(f"cannot launch evaluator: {exc}") from exc
        client = cls(_LineStream(proc.stdout, proc.stdin), timeout=timeout)
        client._proc = proc
        return client

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = DEFAULT_TIMEOUT_S) -> "ExternalEvaluator":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise EvaluatorUnavailable(f"cannot reach {host}:{port}: {exc}") from exc
        fh = sock.makefile("rw", newline="\n")
        return cls(_LineStream(fh, fh, sock=sock), timeout=timeout)

    def ensure_available(self):
        if self.handshake is None:
            raise EvaluatorUnavailable("no handshake")

    def supports(self, task: str) -> bool:
        return task in self.handshake["tasks"]

    def evaluate(self, request: EvalRequest) -> EvalResult:
        start = time.monotonic()
        try:
            self.stream.send_line(encode_request(request))
            line = self.stream.recv_line(self.timeout)
        except (socket.timeout, TimeoutError):
            return EvalResult(
                request_id=request.request_id, fitness=None,
                wall_time=time.monotonic() - start, evaluator="external",
                error="timeout",
            )
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"reply is not JSON: {exc}") from exc
        if doc.get("request_id") != request.request_id:
            raise ProtocolViolation(
                f"reply id {doc.get('request_id')!r} != request id {request.request_id!r}"
            )
        if doc.get("type") == "result":
            if not isinstance(doc.get("fitness"), (int, float)):
                raise ProtocolViolation("result without numeric fitness")
            return EvalResult(
                request_id=request.request_id, fitness=float(doc["fitness"]),
                wall_time=time.monotonic() - start, evaluator="external",
            )
        if doc.get("type") == "error":
            return EvalResult(
                request_id=request.request_id, fitness=None,
                wall_time=time.monotonic() - start, evaluator="external",
                error=str(doc.get("message", "unknown error")),
            )
        raise ProtocolViolation(f"unknown reply type {doc.get('type')!r}")

    def close(self):
        self.stream.close()
