"""Local HTTP stand-in for a remote annealer endpoint.

Speaks the sampler wire protocol: POST /v1/sample with {"qubo": {...},
"num_reads": int} returns {"samples": [...], "energies": [...],
"occurrences": [...]}.  Two modes:

  fixed     always answers with a canned payload from a fixture file
  proxy-mh  answers by running the local Metropolis sampler with the
            server's configured beta / sweeps / seed

In proxy mode the per-request randomness is keyed by the configured seed
and the posted qubo, so a client solve against this server reproduces a
local Metropolis solve with the same seed bit for bit.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .samplers import SamplerConfig, mh_sample, qubo_from_wire

__all__ = ["MockAnnealerServer", "serve_mock", "load_fixture"]

MODES = ("fixed", "proxy-mh")


def load_fixture(path: str | Path) -> dict:
    payload = json.loads(Path(path).read_text())
    for key in ("samples", "energies"):
        if key not in payload:
            raise ValueError(f"fixture is missing {key!r}")
    return payload


class _Handler(BaseHTTPRequestHandler):
    server: "MockAnnealerServer"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _reply(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):
        if self.path != "/v1/sample":
            self._reply(404, {"error": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            request = json.loads(self.rfile.read(length))
            if not isinstance(request, dict):
                raise ValueError("request body must be a JSON object")
            num_reads = int(request["num_reads"])
            if num_reads < 1:
                raise ValueError("num_reads must be positive")
            qubo = qubo_from_wire(request["qubo"])
        except (KeyError, TypeError, ValueError) as e:
            self._reply(400, {"error": f"malformed request: {e}"})
            return
        try:
            self._reply(200, self.server.respond(qubo, num_reads))
        except Exception as e:
            self._reply(500, {"error": f"sampling failed: {e}"})

    def do_GET(self):
        self._reply(404, {"error": "only POST /v1/sample is supported"})


class MockAnnealerServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(
        self,
        port: int,
        mode: str,
        fixture: dict | None = None,
        sampler_config: SamplerConfig | None = None,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "fixed" and fixture is None:
            raise ValueError("fixed mode requires a fixture payload")
        if mode == "proxy-mh" and sampler_config is None:
            raise ValueError("proxy-mh mode requires a sampler config")
        self.mode = mode
        self.fixture = fixture
        self.sampler_config = sampler_config
        self._thread: threading.Thread | None = None
        super().__init__(("127.0.0.1", port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    @property
    def endpoint(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def respond(self, qubo, num_reads: int) -> dict:
        if self.mode == "fixed":
            return self.fixture
        cfg = SamplerConfig(
            beta=self.sampler_config.beta,
            num_reads=num_reads,
            sweeps_per_read=self.sampler_config.sweeps_per_read,
            trotter=self.sampler_config.trotter,
            gamma_start=self.sampler_config.gamma_start,
            gamma_end=self.sampler_config.gamma_end,
            seed=self.sampler_config.seed,
        )
        s = mh_sample(qubo, cfg)
        return {
            "samples": s.samples.tolist(),
            "energies": s.energies.tolist(),
            "occurrences": [int(w) for w in s.weights],
        }

    def start(self) -> "MockAnnealerServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.server_close()


def serve_mock(
    port: int,
    mode: str,
    fixture: dict | str | Path | None = None,
    sampler_config: SamplerConfig | None = None,
) -> MockAnnealerServer:
    """Create and start a mock annealer; caller is responsible for stop()."""
    if isinstance(fixture, (str, Path)):
        fixture = load_fixture(fixture)
    return MockAnnealerServer(port, mode, fixture, sampler_config).start()
