"""Client for an external reaction oracle.

Protocol: line-delimited JSON over a byte stream, one response line per request line.
    {"op": "apply", "template": "<ref>", "reactants": ["...", ...]}
        -> {"ok": true, "product": "..."} | {"ok": false, "reason": "..."}
    {"op": "score", "product": "..."}   -> {"ok": true, "score": 1.23}
    {"op": "filter", "product": "..."}  -> {"ok": true, "pass": true}

Endpoints are ``tcp://host:port`` (or bare ``host:port``) or ``cmd:<command line>``
for an oracle spawned as a child process talking over stdin/stdout.
"""

import json
import logging
import os
import queue
import shlex
import socket
import subprocess
import threading
from collections import deque

from ..errors import (
    OracleError,
    OracleProtocolError,
    OracleTimeout,
    OracleTransportError,
    PreconditionFailed,
)

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 10.0


class _SocketChannel:
    def __init__(self, host, port, timeout):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except socket.timeout as e:
            raise OracleTimeout(f"connect to {host}:{port} timed out") from e
        except OSError as e:
            raise OracleTransportError(f"cannot connect to {host}:{port}: {e}") from e
        self.sock.settimeout(timeout)
        self.reader = self.sock.makefile("rb")

    def send(self, data):
        try:
            self.sock.sendall(data)
        except OSError as e:
            raise OracleTransportError(f"send failed: {e}") from e

    def readline(self, timeout):
        self.sock.settimeout(timeout)
        try:
            return self.reader.readline()
        except socket.timeout as e:
            raise OracleTimeout(f"no response within {timeout}s") from e
        except OSError as e:
            raise OracleTransportError(f"receive failed: {e}") from e

    def close(self):
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


class _ProcessChannel:
    def __init__(self, command):
        try:
            self.process = subprocess.Popen(
                shlex.split(command, posix=os.name != "nt"),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
            )
        except OSError as e:
            raise OracleTransportError(f"cannot start oracle '{command}': {e}") from e
        self.lines = queue.Queue()
        self.stderr_buffer = deque(maxlen=50)
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._capture_stderr, daemon=True).start()

    def _pump_stdout(self):
        for line in iter(self.process.stdout.readline, b""):
            self.lines.put(line)
        self.lines.put(b"")

    def _capture_stderr(self):
        for line in iter(self.process.stderr.readline, b""):
            decoded = line.decode("utf-8", errors="replace").strip()
            if decoded:
                self.stderr_buffer.append(decoded)

    def send(self, data):
        try:
            self.process.stdin.write(data)
            self.process.stdin.flush()
        except (OSError, ValueError) as e:
            tail = "\n".join(self.stderr_buffer)
            raise OracleTransportError(f"oracle process not accepting input: {e}; stderr tail: {tail}") from e

    def readline(self, timeout):
        try:
            return self.lines.get(timeout=timeout)
        except queue.Empty as e:
            raise OracleTimeout(f"no response within {timeout}s") from e

    def close(self):
        if self.process.poll() is None:
            try:
                self.process.stdin.close()
                self.process.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                self.process.kill()


def _parse_endpoint(endpoint):
    if endpoint.startswith("cmd:"):
        return "cmd", endpoint[4:].strip()
    address = endpoint[len("tcp://"):] if endpoint.startswith("tcp://") else endpoint
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise OracleTransportError(f"bad oracle endpoint {endpoint!r}; use tcp://host:port or cmd:<command>")
    return "tcp", (host or "127.0.0.1", int(port))


class OracleClient:
    """One connection to an oracle. Requests on a connection are serialized."""

    def __init__(self, endpoint, timeout=DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.timeout = timeout
        self._channel = None
        self._lock = threading.Lock()

    def _connect(self):
        if self._channel is None:
            kind, target = _parse_endpoint(self.endpoint)
            log.debug("Connecting to oracle %s", self.endpoint)
            if kind == "cmd":
                self._channel = _ProcessChannel(target)
            else:
                self._channel = _SocketChannel(target[0], target[1], self.timeout)
        return self._channel

    def request(self, payload):
        line = (json.dumps(payload, separators=(",", ":")) + "\n").encode("utf-8")
        with self._lock:
            channel = self._connect()
            try:
                channel.send(line)
                raw = channel.readline(self.timeout)
            except (OracleTimeout, OracleTransportError):
                # a late reply would pair with the next request; drop the connection
                self.close()
                raise
        if not raw:
            self.close()
            raise OracleTransportError("oracle closed the connection")
        try:
            response = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise OracleProtocolError(f"malformed response line: {raw[:200]!r}") from e
        if not isinstance(response, dict) or not isinstance(response.get("ok"), bool):
            raise OracleProtocolError(f"response lacks boolean 'ok': {response!r}")
        return response

    def close(self):
        if self._channel is not None:
            self._channel.close()
            self._channel = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def oracle_apply(client, template_ref, reactant_strings):
    """Run one reaction on the oracle. ``ok:false`` surfaces as PreconditionFailed."""
    response = client.request({"op": "apply", "template": str(template_ref),
                               "reactants": list(reactant_strings)})
    if not response["ok"]:
        raise PreconditionFailed(None, str(response.get("reason", "")))
    product = response.get("product")
    if not isinstance(product, str):
        raise OracleProtocolError(f"'product' missing from successful response: {response!r}")
    return product


def oracle_score(client, product):
    response = client.request({"op": "score", "product": product})
    if not response["ok"]:
        raise OracleError(f"scoring failed: {response.get('reason', '')}")
    try:
        return float(response["score"])
    except (KeyError, TypeError, ValueError) as e:
        raise OracleProtocolError(f"bad score response: {response!r}") from e


def oracle_filter(client, product):
    response = client.request({"op": "filter", "product": product})
    if not response["ok"] or not isinstance(response.get("pass"), bool):
        raise OracleProtocolError(f"bad filter response: {response!r}")
    return response["pass"]


class OracleBackend:
    """Template backend delegating every reaction to an oracle.

    ``template_refs[i]`` is the string sent for template id ``i`` (a SMARTS in real use);
    without refs the decimal id is sent.
    """

    name = "oracle"

    def __init__(self, client, template_refs=None):
        self.client = client
        self.template_refs = list(template_refs) if template_refs is not None else None

    def apply(self, template_id, reactants):
        ref = self.template_refs[template_id] if self.template_refs is not None else str(template_id)
        return oracle_apply(self.client, ref, reactants)


def probe_oracle(endpoint, timeout=5.0):
    """Round-trip check of an endpoint. Returns (ok, message)."""
    try:
        with OracleClient(endpoint, timeout=timeout) as client:
            client.request({"op": "apply", "template": "0", "reactants": []})
        return True, "WORKS"
    except OracleTimeout:
        return False, "TIMEOUT"
    except OracleTransportError as e:
        return False, f"NET ERROR: {e}"
    except OracleProtocolError as e:
        return False, f"PROTOCOL ERROR: {e}"
