import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from counterspeech.domain import MisinfoPost
from counterspeech.knowledge_store import build_index, chunk_document
from counterspeech.llm_gateway import MockEmbedder

CORPUS_DOCS = {
    "flu_guidance": (
        "Influenza vaccines are reviewed every year by international health bodies. "
        "Seasonal flu shots reduce severe illness and hospitalization in all age groups. "
        "Side effects of the flu vaccine are typically mild and resolve within days. "
        "The flu shot cannot cause influenza because it contains no live virus."
    ),
    "covid_guidance": (
        "COVID-19 vaccines underwent large randomized clinical trials before approval. "
        "The trials demonstrated strong protection against severe disease and death. "
        "Adverse events after vaccination are monitored through national safety systems. "
        "Boosters restore protection as immunity wanes over time."
    ),
    "hiv_guidance": (
        "Antiretroviral therapy allows people with HIV to live long healthy lives. "
        "Daily preexposure prophylaxis greatly reduces the risk of acquiring HIV. "
        "HIV is not transmitted through casual contact such as hugging or sharing food."
    ),
}


@pytest.fixture
def embedder():
    return MockEmbedder()


@pytest.fixture
def small_index(embedder):
    chunks = []
    for doc_id, text in CORPUS_DOCS.items():
        chunks.extend(chunk_document(doc_id, text, chunk_size=24, overlap=4))
    return build_index(chunks, embedder)


def make_posts(n=3):
    texts = [
        ("p1", "The flu shot gives you the flu every single time.", "influenza"),
        ("p2", "COVID-19 vaccines were never tested in any clinical trial.", "covid19"),
        ("p3", "You can catch HIV from sharing a water bottle.", "hiv"),
        ("p4", "Vitamin megadoses cure influenza faster than any vaccine.", "influenza"),
        ("p5", "Boosters weaken your natural immune system permanently.", "covid19"),
        ("p6", "Hospitals invent COVID-19 case numbers for profit.", "covid19"),
        ("p7", "The flu vaccine contains microchips for tracking.", "influenza"),
        ("p8", "HIV medication is more dangerous than the virus itself.", "hiv"),
        ("p9", "Natural herbs protect you better than any flu shot.", "influenza"),
        ("p10", "Vaccinated people shed virus particles onto others.", "covid19"),
    ]
    return [MisinfoPost(pid, text, topic) for pid, text, topic in texts[:n]]


@pytest.fixture
def posts3():
    return make_posts(3)


@pytest.fixture
def posts10():
    return make_posts(10)


class _JsonHandler(BaseHTTPRequestHandler):
    """Test HTTP handler: the server instance carries `responder`, a
    callable (path, payload, headers) -> (status, body-dict-or-str)."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length).decode("utf-8") if length else ""
        payload = json.loads(raw) if raw else {}
        status, body = self.server.responder(self.path, payload, dict(self.headers))
        data = body if isinstance(body, (bytes, str)) else json.dumps(body)
        if isinstance(data, str):
            data = data.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    do_GET = do_POST

    def log_message(self, *args):
        pass


class LocalHttpServer:
    def __init__(self, responder):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _JsonHandler)
        self.server.responder = responder
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def http_server():
    servers = []

    def start(responder):
        server = LocalHttpServer(responder)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()
