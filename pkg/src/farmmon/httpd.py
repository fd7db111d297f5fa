"""Embedded web server: status documents, graphs, static files.

GET-only HTTP/1.1 with `Connection: close`. Three generated page families
sit in front of a static-file fallback rooted at html_dir:

    /status.html[?applyTransform=F]          whole-cluster status document
    /<host>/status.html[?applyTransform=F]   one host's status document
    /<host>/<graph>[?width=&height=&start=]  a rendered graph

Transforms run an external processor as a subprocess (stylesheet path as
argument, document on standard input); an optional postprocessor filter is
piped over response bodies whose extension is in the configured list. All
handlers read snapshots only: requests never mutate monitor state.
"""

from __future__ import annotations

import logging
import mimetypes
import os
import re
import shlex
import subprocess
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import grapher
from .config import MonitorConfig
from .status import StatusView, serialize_status_xml

log = logging.getLogger("farmmon.httpd")

DEFAULT_PROCESSOR = "xsltproc {} -"
SUBPROCESS_TIMEOUT = 30.0


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        self.status = status
        self.message = message
        super().__init__(f"{status} {message}")


@dataclass(frozen=True)
class StaticFile:
    path: str                  # absolute, inside html_dir


@dataclass(frozen=True)
class Graph:
    host: str
    graph_id: str
    query: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ClusterStatusRoute:
    transform: str | None = None


@dataclass(frozen=True)
class HostStatusRoute:
    host: str
    transform: str | None = None


def parse_query(qs: str) -> dict:
    """Split a query string on & and ; into a dict; the last key wins."""
    out = {}
    for part in re.split(r"[&;]", qs):
        if not part:
            continue
        key, _, value = part.partition("=")
        out[urllib.parse.unquote_plus(key)] = urllib.parse.unquote_plus(value)
    return out


def _check_transform_name(name: str) -> str:
    if "/" in name or "\\" in name or name in ("", ".", "..") or name.startswith("."):
        raise HttpError(403, "bad transform name")
    return name


def route(method: str, uri: str, config: MonitorConfig):
    """Map a request to a Route; raises HttpError for anything unservable."""
    if method != "GET":
        raise HttpError(405, "method not allowed")
    raw_path, _, qs = uri.partition("?")
    query = parse_query(qs)
    path = urllib.parse.unquote(raw_path)
    if not path.startswith("/"):
        raise HttpError(400, "bad request path")

    if path == "/status.html":
        transform = query.get("applyTransform")
        return ClusterStatusRoute(
            transform=_check_transform_name(transform) if transform else None)

    segments = [s for s in path.split("/") if s]
    if len(segments) == 2 and config.host_by_name(segments[0]) is not None:
        host, leaf = segments
        if leaf == "status.html":
            transform = query.get("applyTransform")
            return HostStatusRoute(
                host=host,
                transform=_check_transform_name(transform) if transform else None)
        return Graph(host=host, graph_id=leaf, query=query)

    # static fallback, confined to html_dir
    if path == "/":
        path = "/index.html"
    root = os.path.realpath(config.html_dir)
    target = os.path.realpath(os.path.join(root, path.lstrip("/")))
    if target != root and not target.startswith(root + os.sep):
        raise HttpError(403, "path escapes document root")
    return StaticFile(path=target)


def _run_pipe(cmd: list, body: bytes, what: str) -> bytes:
    try:
        proc = subprocess.run(cmd, input=body, stdout=subprocess.PIPE,
                              stderr=subprocess.PIPE, timeout=SUBPROCESS_TIMEOUT)
    except FileNotFoundError:
        log.error("%s command not found: %s", what, cmd[0])
        raise HttpError(500, f"{what} failed") from None
    except subprocess.TimeoutExpired:
        log.error("%s timed out: %s", what, " ".join(cmd))
        raise HttpError(500, f"{what} failed") from None
    if proc.returncode != 0:
        log.error("%s exited %d: %s", what, proc.returncode,
                  proc.stderr.decode("utf-8", "replace").strip())
        raise HttpError(500, f"{what} failed")
    return proc.stdout


def apply_transform(xml_text: str, transform_file: str, config: MonitorConfig,
                    processor_cmd: str = DEFAULT_PROCESSOR) -> bytes:
    """Run the external transformation processor over a status document.

    The command gets the stylesheet path where its `{}` placeholder sits
    (appended when there is none) and the document on standard input.
    """
    stylesheet = os.path.join(config.xslt_dir, _check_transform_name(transform_file))
    if not os.path.isfile(stylesheet):
        raise HttpError(404, f"no transform named {transform_file}")
    tokens = shlex.split(processor_cmd)
    if "{}" in tokens:
        cmd = [stylesheet if tok == "{}" else tok for tok in tokens]
    else:
        cmd = tokens + [stylesheet]
    return _run_pipe(cmd, xml_text.encode("utf-8"), "transform")


def apply_filter(body: bytes, request_path: str, config: MonitorConfig) -> bytes:
    """Pipe a response body through the postprocessor when its extension
    matches; an empty extension list means the filter never applies."""
    if not config.http_filter:
        return body
    ext = os.path.splitext(request_path.partition("?")[0])[1]
    if ext not in config.http_filter_extensions:
        return body
    return _run_pipe(shlex.split(config.http_filter), body, "filter")


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "farmmon"

    # every verb except GET is refused uniformly
    def do_POST(self):
        self._error(405, "method not allowed")

    do_PUT = do_DELETE = do_HEAD = do_PATCH = do_OPTIONS = do_POST

    def do_GET(self):
        ctx = self.server.ctx
        try:
            target = route("GET", self.path, ctx.config)
            body, ctype = self._render(target, ctx)
            body = apply_filter(body, self.path, ctx.config)
        except HttpError as exc:
            self._error(exc.status, exc.message)
            return
        except Exception:
            log.exception("unhandled error for %s", self.path)
            self._error(500, "internal error")
            return
        self._respond(200, body, ctype)

    def _render(self, target, ctx):
        if isinstance(target, ClusterStatusRoute):
            xml = serialize_status_xml(ctx.view.snapshot())
            return self._status_page(xml, target.transform, ctx)
        if isinstance(target, HostStatusRoute):
            xml = serialize_status_xml(ctx.view.snapshot_host(target.host))
            return self._status_page(xml, target.transform, ctx)
        if isinstance(target, Graph):
            return self._graph_page(target, ctx)
        if not os.path.isfile(target.path):
            raise HttpError(404, "no such file")
        with open(target.path, "rb") as fh:
            body = fh.read()
        ctype = mimetypes.guess_type(target.path)[0] or "application/octet-stream"
        return body, ctype

    @staticmethod
    def _status_page(xml: str, transform, ctx):
        if transform is None:
            return xml.encode("utf-8"), "text/xml; charset=utf-8"
        out = apply_transform(xml, transform, ctx.config, ctx.processor_cmd)
        return out, "text/html; charset=utf-8"

    @staticmethod
    def _graph_page(target: Graph, ctx):
        host = ctx.config.host_by_name(target.host)
        spec = host.graph_by_id(target.graph_id)
        if spec is None:
            raise HttpError(404, f"no graph named {target.graph_id}")
        rrd = ctx.rrds.get(target.host)
        if rrd is None:
            raise HttpError(404, "no archive for host")
        try:
            width = int(target.query.get("width", spec.width))
            height = int(target.query.get("height", spec.height))
        except ValueError:
            raise HttpError(400, "width and height must be integers") from None
        end = time.time()
        try:
            start = grapher.parse_at_time(target.query.get("start", spec.seconds),
                                          now=end)
            if target.graph_id.endswith(".svg"):
                svg = grapher.render_svg(rrd, spec.body, title=spec.title,
                                         width=width, height=height,
                                         start=start, end=end)
                return svg.encode("utf-8"), "image/svg+xml"
            png = grapher.render_png(rrd, spec.body, title=spec.title,
                                     width=width, height=height,
                                     start=start, end=end)
            return png, "image/png"
        except (grapher.BadTimeSpec, grapher.BadRenderRequest) as exc:
            raise HttpError(400, str(exc)) from None
        except grapher.GraphScriptError as exc:
            raise HttpError(500, f"graph script: {exc}") from None

    def _error(self, status: int, message: str):
        self._respond(status, (message + "\n").encode("utf-8"),
                      "text/plain; charset=utf-8")

    def _respond(self, status: int, body: bytes, ctype: str):
        self.close_connection = True
        try:
            self.send_response(status)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Connection", "close")
            self.end_headers()
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass
        self.server.ctx.access_log(self.client_address[0],
                                   getattr(self, "requestline", "-"),
                                   status, len(body))

    def log_message(self, format, *args):
        log.debug("%s %s", self.client_address[0], format % args)


class _Context:
    def __init__(self, config: MonitorConfig, view: StatusView, rrds: dict,
                 processor_cmd: str):
        self.config = config
        self.view = view
        self.rrds = rrds
        self.processor_cmd = processor_cmd
        self._log_lock = threading.Lock()
        self._log_fh = None
        if config.http_logfile:
            self._log_fh = open(config.http_logfile, "a", encoding="utf-8")

    def access_log(self, client_ip: str, request_line: str, status: int,
                   nbytes: int) -> None:
        if self._log_fh is None:
            return
        line = f'{int(time.time())} {client_ip} "{request_line}" {status} {nbytes}\n'
        with self._log_lock:
            self._log_fh.write(line)
            self._log_fh.flush()

    def close(self) -> None:
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None


class StatusServer:
    """The threaded server; bind happens in the constructor."""

    def __init__(self, config: MonitorConfig, view: StatusView, rrds: dict, *,
                 processor_cmd: str = DEFAULT_PROCESSOR, bind_host: str = ""):
        self.ctx = _Context(config, view, rrds, processor_cmd)
        try:
            self._server = ThreadingHTTPServer((bind_host, config.http_port), _Handler)
        except OSError:
            self.ctx.close()
            raise
        self._server.daemon_threads = True
        self._server.ctx = self.ctx
        self._thread = None

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        name="httpd", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        # shutdown() blocks on serve_forever, so skip it when never started
        if self._thread is not None:
            self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self.ctx.close()


def serve(config: MonitorConfig, view: StatusView, rrds: dict, stop_event, *,
          processor_cmd: str = DEFAULT_PROCESSOR) -> None:
    """Run the server until stop_event is set."""
    server = StatusServer(config, view, rrds, processor_cmd=processor_cmd)
    server.start()
    try:
        stop_event.wait()
    finally:
        server.stop()
