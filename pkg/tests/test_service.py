import threading

import httpx
import pytest

from conftest import mock_providers
from polyroute.backends import FixtureChat, HashedEmbedder
from polyroute.config_space import ConfigurationSpace
from polyroute.errors import ArchitectureError, BackendUnavailable
from polyroute.harness.service import Router, make_server
from polyroute.selector.train import Backbone, Hyper, TrainState

SPACE = ConfigurationSpace(("m1", "m2"), ("ada-002",), ("Mono", "Trans", "Sim"))
HYPER = Hyper(channels=(4,))


def router(chat=None, **kw):
    bb = Backbone(HashedEmbedder("bb", 8))
    state = TrainState.fresh(8, 3, HYPER, SPACE, "bb")
    return Router(state, SPACE, mock_providers(chat=chat), bb, **kw)


def test_answer_shape():
    out = router().answer("Who built the fort?", "hi", "The fort was built by Akbar in 1565.")
    assert set(out) == {"answer", "configuration", "predicted_scores_top5"}
    assert len(out["predicted_scores_top5"]) == 5
    scores = [s["score"] for s in out["predicted_scores_top5"]]
    assert scores == sorted(scores, reverse=True)


def test_pivotless_language_never_routed_to_sim():
    out = router().answer("q?", "ta", "ctx.")
    assert out["configuration"]["strategy"] != "Sim"
    assert all(s["configuration"]["strategy"] != "Sim" for s in out["predicted_scores_top5"])


def test_falls_back_when_configs_fail():
    def only_m2(req):
        if req.model_id == "m1":
            raise BackendUnavailable("m1 down")
        return "Akbar"

    out = router(chat=FixtureChat(only_m2)).answer("q?", "hi", "ctx.")
    assert out["configuration"]["model"] == "m2"


def test_mismatched_checkpoint_refused():
    state = TrainState.fresh(8, 3, HYPER, SPACE, "bb")
    with pytest.raises(ArchitectureError):
        Router(state, SPACE, mock_providers(), Backbone(HashedEmbedder("bb", 16)))
    with pytest.raises(ArchitectureError):
        Router(state, SPACE, mock_providers(), Backbone(HashedEmbedder("other", 8)))
    with pytest.raises(ArchitectureError):
        Router(state, ConfigurationSpace(("m1",), ("ada-002",), ("Mono",)), mock_providers(),
               Backbone(HashedEmbedder("bb", 8)))


def test_http_endpoints():
    server = make_server(router(), port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        with httpx.Client(base_url=base, timeout=10) as client:
            assert client.get("/healthz").json() == {"status": "ok", "configurations": 6}
            r = client.post("/answer", json={"question": "Who built it?", "language": "hi",
                                             "context": "Akbar built it."})
            assert r.status_code == 200 and "answer" in r.json()
            assert client.post("/answer", json={"question": "x"}).status_code == 400
            assert client.post("/answer", content=b"not json").status_code == 400
            assert client.get("/nope").status_code == 404
    finally:
        server.shutdown()
        server.server_close()
