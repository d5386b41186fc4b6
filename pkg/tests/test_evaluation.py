import json
import sys
import textwrap
import threading
import time

import numpy as np
import pytest

from morphoskill.evaluation import (
    DEFAULT_BUDGET_STEPS,
    EvalRequest,
    EvalResult,
    EvaluatorUnavailable,
    ExternalEvaluator,
    FEATURE_NAMES,
    InvalidBody,
    ProtocolViolation,
    SurrogateEvaluator,
    TASK_PROFILES,
    body_features,
    evaluate_batch,
    parse_handshake,
    profile_for_task,
    surrogate_fitness,
)
from morphoskill.voxelbody import Body, random_valid_body, upsample_tiling


def feature_oracle(body):
    """Independent re-derivation of the documented feature set."""
    cells = body.cells
    n = body.size
    material = [(r, c) for r in range(n) for c in range(n) if cells[r, c] != 0]
    if not material:
        return dict.fromkeys(FEATURE_NAMES, 0.0)
    acts = [(r, c) for r, c in material if cells[r, c] in (3, 4)]
    p = len(acts) / len(material)
    supported = 0
    for r, c in acts:
        neigh = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
        if any(0 <= a < n and 0 <= b < n and cells[a, b] == 1 for a, b in neigh):
            supported += 1
    # largest rigid component by exhaustive region growing
    rigid = {(r, c) for r, c in material if cells[r, c] == 1}
    comps = []
    todo = set(rigid)
    while todo:
        seed = todo.pop()
        comp = {seed}
        frontier = [seed]
        while frontier:
            r, c = frontier.pop()
            for q in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if q in todo:
                    todo.remove(q)
                    comp.add(q)
                    frontier.append(q)
        comps.append(comp)
    perim = 0
    if comps:
        largest = max(comps, key=len)
        for r, c in largest:
            for q in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if q not in largest:
                    perim += 1
    return {
        "actuator_balance": 4 * p * (1 - p),
        "bottom_material": sum(1 for r, c in material if r == n - 1) / n,
        "rigid_support": supported / len(acts) if acts else 0.0,
        "frame_perimeter": perim / (4 * n),
        "soft_contact": sum(1 for c in range(n) if cells[n - 1, c] == 2) / n,
    }


def fitness_oracle(body, profile):
    feats = feature_oracle(body)
    return sum(w * feats[name] for w, name in zip(TASK_PROFILES[profile], FEATURE_NAMES))


class TestSurrogate:
    def test_golden_single_voxel_constants(self):
        # pinned from the frozen feature definitions
        b = Body([[3]])
        assert surrogate_fitness(b, "walker_like") == 3.0
        assert surrogate_fitness(b, "carrier_like") == 2.5
        assert surrogate_fitness(b, "pusher_like") == 3.5

    def test_matches_oracle_on_random_bodies(self):
        rng = np.random.default_rng(31)
        for _ in range(300):
            b = random_valid_body(5, rng)
            for profile in TASK_PROFILES:
                assert surrogate_fitness(b, profile) == pytest.approx(
                    fitness_oracle(b, profile), abs=1e-12
                )

    def test_tiling_invariance_under_scale_invariant_profile(self):
        rng = np.random.default_rng(37)
        for _ in range(100):
            b = random_valid_body(5, rng)
            up = upsample_tiling(b, 2)
            assert surrogate_fitness(up, "pusher_like") == pytest.approx(
                surrogate_fitness(b, "pusher_like"), abs=1e-12
            )

    def test_rigid_support_monotonicity(self):
        cells = np.zeros((5, 5), dtype=int)
        cells[4, 1:4] = 3  # unsupported actuators
        base = Body(cells)
        bumped = np.array(cells)
        bumped[3, 2] = 1  # rigid cell adjacent to an actuator
        before = surrogate_fitness(base, "walker_like")
        after = surrogate_fitness(Body(bumped), "walker_like")
        assert after > before
        assert after == pytest.approx(fitness_oracle(Body(bumped), "walker_like"))

    def test_pure_function(self):
        rng = np.random.default_rng(5)
        bodies = [random_valid_body(5, rng) for _ in range(50)]
        first = [surrogate_fitness(b, "walker_like") for b in bodies]
        for _ in range(3):
            again = [surrogate_fitness(b, "walker_like") for b in bodies]
            assert again == first

    def test_invalid_body_rejected(self):
        with pytest.raises(InvalidBody):
            surrogate_fitness(Body(np.zeros((5, 5), dtype=int)), "walker_like")

    def test_profile_for_task(self):
        assert profile_for_task("Walker-v0") == "walker_like"
        assert profile_for_task("Pusher-v0-10x10") == "pusher_like"


def req(body, i, task="Walker-v0"):
    return EvalRequest(
        request_id=f"r{i}", body=body, task=task, scale=body.size, controller_seed=i
    )


class ReverseCompletionEvaluator:
    """Adversarial evaluator: later requests complete before earlier ones."""

    def __init__(self, total):
        self.total = total
        self.done = 0
        self.cond = threading.Condition()
        self.order = []

    def evaluate(self, request):
        rank = int(request.request_id[1:])
        with self.cond:
            # r(total-1) completes first, r0 last
            while self.done != self.total - 1 - rank:
                self.cond.wait(timeout=5)
            self.done += 1
            self.order.append(request.request_id)
            self.cond.notify_all()
        return EvalResult(
            request_id=request.request_id, fitness=float(rank),
            wall_time=0.0, evaluator="surrogate",
        )


class TestEvaluateBatch:
    def test_empty(self):
        assert evaluate_batch([], SurrogateEvaluator()) == []

    def test_batch_order_and_determinism(self):
        rng = np.random.default_rng(9)
        requests = [req(random_valid_body(5, rng), i) for i in range(25)]
        r1 = evaluate_batch(requests, SurrogateEvaluator(), parallelism=4)
        r2 = evaluate_batch(requests, SurrogateEvaluator(), parallelism=1)
        assert [r.request_id for r in r1] == [f"r{i}" for i in range(25)]
        assert [r.fitness for r in r1] == [r.fitness for r in r2]

    def test_reverse_completion_order_restored(self):
        rng = np.random.default_rng(10)
        n = 6
        requests = [req(random_valid_body(5, rng), i) for i in range(n)]
        ev = ReverseCompletionEvaluator(n)
        results = evaluate_batch(requests, ev, parallelism=n)
        assert ev.order == [f"r{i}" for i in reversed(range(n))]
        assert [r.request_id for r in results] == [f"r{i}" for i in range(n)]

    def test_invalid_body_never_issued(self):
        bad = Body(np.zeros((5, 5), dtype=int))
        with pytest.raises(InvalidBody):
            evaluate_batch([req(bad, 0)], SurrogateEvaluator())

    def test_unavailable_aborts_before_issue(self):
        class Offline:
            def ensure_available(self):
                raise EvaluatorUnavailable("offline")

            def evaluate(self, request):  # pragma: no cover
                raise AssertionError("must not be called")

        rng = np.random.default_rng(11)
        with pytest.raises(EvaluatorUnavailable):
            evaluate_batch([req(random_valid_body(5, rng), 0)], Offline())


ECHO_EVALUATOR = textwrap.dedent(
    """
    import json, sys
    print(json.dumps({"protocol": "morphoskill-eval", "version": 1,
                      "tasks": ["Walker-v0"], "pipelining": False}), flush=True)
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("task") != "Walker-v0":
            print(json.dumps({"type": "error", "request_id": msg["request_id"],
                              "message": "unknown task " + msg.get("task", "?")}), flush=True)
            continue
        acts = sum(1 for row in msg["body"] for v in row if v in (3, 4))
        print(json.dumps({"type": "result", "request_id": msg["request_id"],
                          "fitness": float(acts)}), flush=True)
    """
)


class TestExternalEvaluator:
    def spawn_echo(self, tmp_path):
        script = tmp_path / "echo_eval.py"
        script.write_text(ECHO_EVALUATOR)
        return ExternalEvaluator.spawn([sys.executable, str(script)], timeout=30)

    def test_loopback_roundtrip(self, tmp_path):
        client = self.spawn_echo(tmp_path)
        assert client.handshake["tasks"] == ["Walker-v0"]
        rng = np.random.default_rng(3)
        body = random_valid_body(5, rng)
        n_act = int(((body.cells == 3) | (body.cells == 4)).sum())
        result = client.evaluate(req(body, 0))
        assert result.fitness == float(n_act)
        assert result.evaluator == "external"
        client.close()

    def test_error_reply_for_unknown_task(self, tmp_path):
        client = self.spawn_echo(tmp_path)
        rng = np.random.default_rng(4)
        result = client.evaluate(req(random_valid_body(5, rng), 1, task="Jumper-v0"))
        assert result.fitness is None
        assert "unknown task" in result.error
        client.close()

    def test_malformed_reply_protocol_violation(self):
        class FakeStream:
            def __init__(self, replies):
                self.replies = list(replies)

            def send_line(self, line):
                pass

            def recv_line(self, timeout):
                return self.replies.pop(0)

        handshake = json.dumps(
            {"protocol": "morphoskill-eval", "version": 1, "tasks": [], "pipelining": False}
        )
        rng = np.random.default_rng(5)
        body = random_valid_body(5, rng)

        client = ExternalEvaluator(FakeStream([handshake, '{"type": "result", "request_id": "r0"}']))
        with pytest.raises(ProtocolViolation):
            client.evaluate(req(body, 0))  # missing fitness

        client = ExternalEvaluator(
            FakeStream([handshake, '{"type": "result", "request_id": "zzz", "fitness": 1.0}'])
        )
        with pytest.raises(ProtocolViolation):
            client.evaluate(req(body, 0))  # id mismatch

    def test_bad_handshake(self):
        with pytest.raises(ProtocolViolation):
            parse_handshake('{"protocol": "other", "version": 1}')
        with pytest.raises(ProtocolViolation):
            parse_handshake("not json")

    def test_default_budget_steps(self):
        rng = np.random.default_rng(6)
        r = req(random_valid_body(5, rng), 0)
        assert r.budget_steps == DEFAULT_BUDGET_STEPS == 512_000
