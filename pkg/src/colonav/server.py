"""Live session server: bridges the stepping loop to operator consoles.

The stepping thread only ever touches publish()/publish_episode_end(), which
set in-memory state under a lock and return immediately. A broadcaster thread
sends the latest snapshot to every console at a fixed rate (coalescing: only
the newest state goes out), plus queued one-off events and heartbeats when
training is between messages. Inbound operator messages land in the
intervention source's queue and are sampled by the stepping loop at step
boundaries.
"""

from __future__ import annotations

import json
import socket
import threading
import time
from collections import deque
from pathlib import Path

from . import wsproto
from .config import RunConfig
from .hiloop import QueueHumanSource
from .trainer import train

BROADCAST_HZ = 20.0
HEARTBEAT_S = 1.0

OUTBOUND_KINDS = ("state_update", "intervention_begin", "intervention_end",
                  "episode_end", "heartbeat")
INBOUND_KINDS = ("human_action", "intervention_begin", "intervention_end")


class _Client:
    def __init__(self, sock: socket.socket, addr):
        self.sock = sock
        self.addr = addr
        self.send_lock = threading.Lock()
        self.alive = True

    def send_json(self, obj: dict) -> bool:
        try:
            with self.send_lock:
                wsproto.send_text(self.sock, json.dumps(obj))
            return True
        except OSError:
            self.alive = False
            return False

    def close(self) -> None:
        self.alive = False
        wsproto.send_close(self.sock)
        try:
            self.sock.close()
        except OSError:
            pass


class SessionServer:
    """Accepts consoles, streams state, feeds operator input to the source."""

    def __init__(self, host: str, port: int, source: QueueHumanSource,
                 broadcast_hz: float = BROADCAST_HZ):
        self.source = source
        self.broadcast_interval = 1.0 / broadcast_hz
        self._seq = 0
        self._seq_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._latest = None          # newest snapshot, coalesced
        self._latest_sent = True
        self._events: deque = deque()  # one-off messages, never coalesced
        self._last_m = 0
        self._clients: list = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(8)
        self.host, self.port = self._listener.getsockname()[:2]
        self._threads = [
            threading.Thread(target=self._accept_loop, daemon=True),
            threading.Thread(target=self._broadcast_loop, daemon=True),
        ]
        for t in self._threads:
            t.start()

    # -- stepping-thread interface (must never block) -------------------

    def publish(self, snapshot: dict) -> None:
        with self._state_lock:
            m = int(snapshot.get("m", 0))
            if m != self._last_m:
                kind = "intervention_begin" if m == 1 else "intervention_end"
                self._events.append((kind, {"episode": snapshot.get("episode"),
                                            "step": snapshot.get("step")}))
                self._last_m = m
            self._latest = snapshot
            self._latest_sent = False

    def publish_episode_end(self, summary: dict) -> None:
        with self._state_lock:
            self._events.append(("episode_end", dict(summary)))

    # -- internals -------------------------------------------------------

    def _next_seq(self) -> int:
        with self._seq_lock:
            self._seq += 1
            return self._seq

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                self._listener.settimeout(0.2)
                sock, addr = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                sock.settimeout(10.0)
                wsproto.server_handshake(sock)
                sock.settimeout(None)
            except wsproto.WSError:
                sock.close()
                continue
            client = _Client(sock, addr)
            with self._clients_lock:
                self._clients.append(client)
            threading.Thread(target=self._reader_loop, args=(client,),
                             daemon=True).start()

    def _reader_loop(self, client: _Client) -> None:
        try:
            while not self._stop.is_set():
                text = wsproto.recv_text(client.sock)
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError:
                    continue
                self._handle_inbound(msg)
        except (wsproto.WSError, OSError):
            pass
        finally:
            # console gone: end any takeover so training continues alone
            self.source.disengage()
            self._drop(client)

    def _handle_inbound(self, msg: dict) -> None:
        kind = msg.get("kind")
        payload = msg.get("payload", {})
        if kind == "human_action":
            action = payload.get("action")
            if isinstance(action, int) and 0 <= action <= 5:
                self.source.push_action(action)
        elif kind == "intervention_begin":
            self.source.engage()
        elif kind == "intervention_end":
            self.source.disengage()
        # unknown kinds ignored for forward compatibility

    def _drop(self, client: _Client) -> None:
        client.close()
        with self._clients_lock:
            if client in self._clients:
                self._clients.remove(client)

    def _broadcast(self, kind: str, payload: dict) -> None:
        msg = {"kind": kind, "seq": self._next_seq(), "payload": payload}
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            if not client.send_json(msg):
                self._drop(client)

    def _broadcast_loop(self) -> None:
        last_sent = time.monotonic()
        while not self._stop.is_set():
            time.sleep(self.broadcast_interval)
            with self._state_lock:
                events = list(self._events)
                self._events.clear()
                snap = None if self._latest_sent else self._latest
                if snap is not None:
                    self._latest_sent = True
            for kind, payload in events:
                self._broadcast(kind, payload)
            if snap is not None:
                self._broadcast("state_update", snap)
            now = time.monotonic()
            if events or snap is not None:
                last_sent = now
            elif now - last_sent >= HEARTBEAT_S:
                self._broadcast("heartbeat", {"t": now})
                last_sent = now

    def close(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.close()


def serve(cfg: RunConfig, out_dir: str | Path, host: str = "127.0.0.1",
          port: int = 8765, should_stop=None):
    """Run training with a live console attached; returns the train result."""
    source = QueueHumanSource(cfg.hi)
    server = SessionServer(host, port, source)
    print(f"session server listening on ws://{server.host}:{server.port}/")
    try:
        return train(cfg, out_dir, source=source, on_step=server.publish,
                     on_episode_end=server.publish_episode_end,
                     should_stop=should_stop)
    finally:
        server.close()
