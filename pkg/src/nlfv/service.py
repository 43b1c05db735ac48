"""HTTP frame service: renders arbitrary (u, v, t) coordinates on demand.

Stdlib-only threading HTTP server.  Weights and dataset are shared immutable
state; each request renders with private buffers, so concurrent requests up to
the configured cap are safe.  Frames go over the wire as binary PPM, identical
bytes to what the render command writes, with an X-Render-Millis timing header
and permissive CORS so a browser viewer can fetch directly.
"""

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from . import pipeline as P
from .data import LFCoordinate, encode_ppm

SERVABLE_MODES = {
    "geometry": ["full", "no_occlusion", "blend", "down_up"],
    "color": ["no_warp", "blend"],
}


class FrameService:
    def __init__(self, dataset, weights, config, host="127.0.0.1", port=0,
                 max_concurrent=4, default_mode="full", scene="scene",
                 kappa=P.DEFAULT_KAPPA):
        if max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        self.dataset = dataset
        self.weights = weights
        self.config = config
        self.default_mode = default_mode
        self.scene = scene
        self.kappa = kappa
        self.modes = list(SERVABLE_MODES[config.mode])
        self._slots = threading.Semaphore(max_concurrent)
        handler = _make_handler(self)
        self._server = ThreadingHTTPServer((host, port), handler)
        self._thread = None
        self.host, self.port = self._server.server_address[:2]

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def join(self):
        if self._thread is not None:
            self._thread.join()

    def shutdown(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    # ----- request logic (handler delegates here) -----

    def meta(self):
        ds = self.dataset
        return {
            "grid": [ds.grid_m, ds.grid_n],
            "frames": ds.frames,
            "size": [ds.width, ds.height],
            "modes": self.modes,
            "scene": self.scene,
        }

    def frame(self, query):
        """Returns (status, headers, body)."""
        try:
            u = float(query["u"][0])
            v = float(query["v"][0])
            t = float(query["t"][0])
        except (KeyError, ValueError, IndexError):
            return _error(400, "u, v, t must be present and numeric")
        if not all(0.0 <= val <= 1.0 for val in (u, v, t)):
            return _error(400, "u, v, t must lie in [0,1]")
        mode = query.get("mode", [self.default_mode])[0].replace("-", "_")
        if mode not in self.modes:
            return _error(400, f"mode must be one of {self.modes}")
        try:
            factor = int(query.get("factor", ["8"])[0])
        except ValueError:
            return _error(400, "factor must be an integer")
        if not self._slots.acquire(blocking=False):
            return _error(503, "render capacity exhausted, retry")
        try:
            started = time.perf_counter()
            image = P.render(self.weights, self.config, self.dataset,
                             LFCoordinate(u, v, t), mode=mode, kappa=self.kappa,
                             down_factor=factor)
            millis = (time.perf_counter() - started) * 1000.0
        except P.PipelineError as e:
            return _error(400, str(e))
        finally:
            self._slots.release()
        body = encode_ppm(image)
        headers = {
            "Content-Type": "application/x-portable-pixmap",
            "X-Render-Millis": f"{millis:.3f}",
        }
        return 200, headers, body


def _error(status, message):
    body = json.dumps({"error": message}).encode()
    return status, {"Content-Type": "application/json"}, body


def _make_handler(service):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):
            pass

        def _respond(self, status, headers, body):
            self.send_response(status)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Content-Length", str(len(body)))
            for key, value in headers.items():
                self.send_header(key, value)
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            parsed = urlparse(self.path)
            if parsed.path == "/meta":
                body = json.dumps(service.meta()).encode()
                self._respond(200, {"Content-Type": "application/json"}, body)
            elif parsed.path == "/frame":
                status, headers, body = service.frame(parse_qs(parsed.query))
                self._respond(status, headers, body)
            else:
                self._respond(*_error(404, f"no such path {parsed.path}"))

    return Handler
