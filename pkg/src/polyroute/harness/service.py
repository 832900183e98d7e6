"""HTTP routing service: pick a configuration per question, run it, answer.

``POST /answer`` takes ``{"question", "language", "context"?}`` and returns
``{"answer", "configuration", "predicted_scores_top5"}``; ``GET /healthz``
reports readiness.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

import numpy as np

from polyroute.config_space import ConfigurationSpace, QueryTask
from polyroute.errors import ArchitectureError, PolyrouteError, StrategyFailed, StrategyInapplicable
from polyroute.harness.dataset import language_tag
from polyroute.selector.model import predict
from polyroute.selector.select import sample_index, topk_indices
from polyroute.selector.train import Backbone, TrainState
from polyroute.strategies import Providers, ShotMode, run

log = logging.getLogger(__name__)


class Router:
    """Read-only selector plus providers; safe to share across request threads."""

    def __init__(self, state: TrainState, space: ConfigurationSpace, providers: Providers, backbone: Backbone,
                 shots: ShotMode = ShotMode.zero(), sample: bool = False, temperature: float = 1.0, seed: int = 0):
        if state.space is not None and state.space != space:
            raise ArchitectureError("checkpoint was trained on a different configuration space")
        if state.params.e != backbone.e:
            raise ArchitectureError(f"checkpoint expects e={state.params.e}, backbone gives {backbone.e}")
        if state.backbone_id is not None and state.backbone_id != backbone.provider_id:
            raise ArchitectureError(
                f"checkpoint backbone {state.backbone_id!r} differs from configured {backbone.provider_id!r}")
        if state.params.rank != len(space.shape):
            raise ArchitectureError("checkpoint head rank differs from the space rank")
        self.params = state.params.copy()
        self.space = space
        self.providers = providers
        self.backbone = backbone
        self.shots = shots
        self.sample = sample
        self.temperature = temperature
        self._rng = np.random.default_rng(seed)
        self._rng_lock = threading.Lock()
        self._config_raw = backbone.embed_configs(space)
        self._counter = 0
        self._counter_lock = threading.Lock()

    def _applicable(self, task: QueryTask) -> np.ndarray:
        mask = np.ones(self.space.shape, dtype=bool)
        if "Sim" in self.space.strategies and (self.providers.pivots is None
                                                or self.providers.pivots.pivot(task.language) is None):
            mask[:, :, self.space.strategies.index("Sim")] = False
        return mask

    def answer(self, question: str, language: str, context: Optional[str] = None) -> dict:
        with self._counter_lock:
            self._counter += 1
            rid = f"req-{self._counter}"
        tag = language_tag(language, self.providers.pivots)
        task = QueryTask(rid, tag, question, ("",), context)
        y_hat = predict(self.params, self.backbone.embed_task(task)[None], self._config_raw)[0]
        applicable = self._applicable(task)
        ranked = [int(k) for k in topk_indices(y_hat, self.space.size, applicable)]
        if self.sample:
            with self._rng_lock:
                first = sample_index(y_hat, self.temperature, self._rng, applicable)
            ranked.remove(first)
            ranked.insert(0, first)
        flat = y_hat.ravel()
        top5 = [{"configuration": self.space.multi_index(k).to_dict(), "score": round(float(flat[k]), 6)}
                for k in topk_indices(y_hat, 5, applicable)]
        errors = []
        for k in ranked:
            config = self.space.multi_index(k)
            try:
                outcome = run(config.strategy_id, task, config, self.providers, self.shots)
            except (StrategyFailed, StrategyInapplicable) as exc:
                errors.append(str(exc))
                continue
            return {"answer": outcome.final_answer, "configuration": config.to_dict(),
                    "predicted_scores_top5": top5}
        raise StrategyFailed("any", "; ".join(errors[:3]) or "no applicable configuration")


def _handler(router: Router):
    class Handler(BaseHTTPRequestHandler):
        def _send(self, code: int, body: dict):
            data = json.dumps(body, ensure_ascii=False, sort_keys=True).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path == "/healthz":
                self._send(200, {"status": "ok", "configurations": router.space.size})
            else:
                self._send(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/answer":
                self._send(404, {"error": "not found"})
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                req = json.loads(self.rfile.read(length) or b"{}")
                question, language = req["question"], req["language"]
            except (ValueError, KeyError, TypeError):
                self._send(400, {"error": "body must be JSON with 'question' and 'language'"})
                return
            try:
                self._send(200, router.answer(question, language, req.get("context")))
            except PolyrouteError as exc:
                self._send(502, {"error": str(exc)})

        def log_message(self, fmt, *args):
            log.info("%s - %s", self.address_string(), fmt % args)

    return Handler


def make_server(router: Router, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), _handler(router))
    server.daemon_threads = True
    return server


def serve(state: TrainState, space: ConfigurationSpace, providers: Providers, backbone: Backbone,
          port: int = 8080, host: str = "127.0.0.1", **router_kw) -> None:
    """Block serving requests until interrupted."""
    server = make_server(Router(state, space, providers, backbone, **router_kw), host, port)
    log.info("serving on http://%s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    finally:
        server.server_close()
