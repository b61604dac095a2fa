from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from scalingfilter.corpus import Document, write_corpus


@pytest.fixture
def small_docs() -> list[Document]:
    return [
        Document.create(f"doc:{i:03d}", f"sample text number {i} with some shared words")
        for i in range(10)
    ]


def make_corpus_dir(tmp_path, docs, name="corpus", shard_size=100):
    out = tmp_path / name
    write_corpus(docs, out, shard_size=shard_size, corpus_id=name)
    return out


class _JsonHandler(BaseHTTPRequestHandler):
    """Test double for the perplexity / embedding services."""

    # set per server instance
    perplexity_fn = None
    embed_fn = None
    model = "test-model"
    fail_requests = False

    def log_message(self, *args):
        pass

    def do_POST(self):
        if self.fail_requests:
            self.send_error(500, "synthetic failure")
            return
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length).decode("utf-8"))
        texts = body.get("texts", [])
        if self.path == "/v1/perplexity" and self.perplexity_fn is not None:
            payload = {
                "perplexities": [self.perplexity_fn(t) for t in texts],
                "model": self.model,
                "log_base": 2,
            }
        elif self.path == "/v1/embed" and self.embed_fn is not None:
            vectors, normalized = self.embed_fn(texts)
            payload = {"embeddings": vectors, "model": self.model, "normalized": normalized}
        else:
            self.send_error(404, "unknown path")
            return
        data = json.dumps(payload).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class ServiceHandle:
    def __init__(self, server: ThreadingHTTPServer, handler_cls):
        self.server = server
        self.handler_cls = handler_cls
        self.url = f"http://127.0.0.1:{server.server_address[1]}"

    def set_failing(self, failing: bool):
        self.handler_cls.fail_requests = failing


@pytest.fixture
def make_service():
    """Start a throwaway JSON service; returns a factory of ServiceHandle."""
    servers = []

    def factory(perplexity_fn=None, embed_fn=None, model="test-model"):
        handler_cls = type(
            "Handler",
            (_JsonHandler,),
            {"perplexity_fn": staticmethod(perplexity_fn) if perplexity_fn else None,
             "embed_fn": staticmethod(embed_fn) if embed_fn else None,
             "model": model,
             "fail_requests": False},
        )
        server = ThreadingHTTPServer(("127.0.0.1", 0), handler_cls)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return ServiceHandle(server, handler_cls)

    yield factory
    for server in servers:
        server.shutdown()
        server.server_close()
