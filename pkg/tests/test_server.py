"""Live session server: handshake, streaming, operator input, serve mode."""

import json
import socket
import threading
import time

import numpy as np
import pytest

from colonav import wsproto
from colonav.agent import UpdateConfig
from colonav.checkpoint import load_checkpoint
from colonav.config import RunConfig
from colonav.env import EnvConfig
from colonav.episode_log import read_episode_log
from colonav.hiloop import HIConfig, QueueHumanSource
from colonav.server import OUTBOUND_KINDS, SessionServer, serve
from colonav.trainer import train

TUBE_LAYOUT = """[colon]
turn_radius_mm = 30
waypoint_spacing_mm = 25

[segment:Tube]
length_mm = 100
radius_min_mm = 20
radius_max_mm = 20
"""


@pytest.fixture
def session():
    source = QueueHumanSource(HIConfig(human_hold_steps=3))
    server = SessionServer("127.0.0.1", 0, source, broadcast_hz=100.0)
    yield server, source
    server.close()


def connect(server) -> socket.socket:
    sock = socket.create_connection((server.host, server.port), timeout=5)
    wsproto.client_handshake(sock, f"{server.host}:{server.port}")
    sock.settimeout(3.0)
    return sock


def recv_msg(sock) -> dict:
    return json.loads(wsproto.recv_text(sock, mask_replies=True))


def send_msg(sock, kind: str, payload: dict) -> None:
    wsproto.send_text(sock, json.dumps({"kind": kind, "payload": payload}),
                      mask=True)


def recv_until(sock, pred, attempts: int = 200):
    seen = []
    for _ in range(attempts):
        msg = recv_msg(sock)
        seen.append(msg)
        if pred(msg):
            return seen
    raise AssertionError(f"condition never met in {attempts} messages")


def wait_for(pred, timeout: float = 3.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return
        time.sleep(0.005)
    raise AssertionError("condition not reached before timeout")


def snapshot(step: int, m: int = 0, episode: int = 0) -> dict:
    return {"episode": episode, "step": step, "m": m,
            "pos": [0.0, 0.0, float(step)], "s": float(step)}


# ---------------------------------------------------------------------------
# transport
# ---------------------------------------------------------------------------

def test_state_update_round_trip(session):
    server, _ = session
    sock = connect(server)
    snap = snapshot(7)
    server.publish(snap)
    seen = recv_until(sock, lambda m: m["kind"] == "state_update")
    assert seen[-1]["payload"] == snap
    sock.close()


def test_rejects_plain_http_request(session):
    server, _ = session
    sock = socket.create_connection((server.host, server.port), timeout=5)
    sock.sendall(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")
    reply = sock.recv(4096)
    assert b"400" in reply.split(b"\r\n", 1)[0]
    sock.close()


def test_messages_are_well_formed_with_increasing_seq(session):
    server, _ = session
    sock = connect(server)
    for i in range(3):
        server.publish(snapshot(i))
        time.sleep(0.03)
    msgs = [recv_msg(sock) for _ in range(3)]
    for msg in msgs:
        assert msg["kind"] in OUTBOUND_KINDS
        assert isinstance(msg["seq"], int)
        assert isinstance(msg["payload"], dict)
    seqs = [m["seq"] for m in msgs]
    assert seqs == sorted(seqs) and len(set(seqs)) == 3
    sock.close()


def test_rapid_publishes_coalesce_to_newest(session):
    source = QueueHumanSource(HIConfig())
    server = SessionServer("127.0.0.1", 0, source, broadcast_hz=20.0)
    try:
        sock = connect(server)
        for i in range(10):
            server.publish(snapshot(i))
        time.sleep(0.3)
        sock.settimeout(0.2)
        updates = []
        try:
            while True:
                msg = recv_msg(sock)
                if msg["kind"] == "state_update":
                    updates.append(msg["payload"]["step"])
        except (TimeoutError, socket.timeout):
            pass
        assert updates[-1] == 9          # newest always wins
        assert len(updates) <= 2         # older snapshots were dropped
        assert updates == sorted(updates)
        sock.close()
    finally:
        server.close()


def test_intervention_edges_become_events(session):
    server, _ = session
    sock = connect(server)
    server.publish(snapshot(0, m=0))
    server.publish(snapshot(1, m=1))
    server.publish(snapshot(2, m=0))
    seen = recv_until(sock, lambda m: m["kind"] == "intervention_end")
    kinds = [m["kind"] for m in seen]
    assert kinds.index("intervention_begin") < kinds.index("intervention_end")
    begin = seen[kinds.index("intervention_begin")]
    assert begin["payload"] == {"episode": 0, "step": 1}
    sock.close()


def test_episode_end_broadcast(session):
    server, _ = session
    sock = connect(server)
    server.publish_episode_end({"episode": 3, "steps": 12, "total_reward": 1.5})
    seen = recv_until(sock, lambda m: m["kind"] == "episode_end")
    assert seen[-1]["payload"]["episode"] == 3
    sock.close()


def test_heartbeat_when_idle(session):
    server, _ = session
    sock = connect(server)
    msg = recv_msg(sock)  # nothing published: first traffic is a heartbeat
    assert msg["kind"] == "heartbeat"
    sock.close()


def test_publish_never_blocks_on_slow_consoles(session):
    server, _ = session
    socks = [connect(server) for _ in range(3)]  # connected, never reading
    t0 = time.perf_counter()
    for i in range(2000):
        server.publish(snapshot(i))
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0  # stepping-thread cost stays far below 0.5 ms/step
    for sock in socks:
        sock.close()


# ---------------------------------------------------------------------------
# operator input
# ---------------------------------------------------------------------------

def test_human_action_fills_the_slot(session):
    server, source = session
    sock = connect(server)
    send_msg(sock, "human_action", {"action": 3})
    wait_for(lambda: source.engaged_flag and bool(source.pending))
    assert list(source.pending) == [3]
    send_msg(sock, "human_action", {"action": 5})
    wait_for(lambda: list(source.pending) == [5])  # newest overwrites
    assert len(source.pending) == 1
    sock.close()


def test_engage_and_disengage_messages(session):
    server, source = session
    sock = connect(server)
    send_msg(sock, "intervention_begin", {})
    wait_for(lambda: source.engaged_flag)
    send_msg(sock, "intervention_end", {})
    wait_for(lambda: not source.engaged_flag)
    sock.close()


def test_malformed_input_is_ignored(session):
    server, source = session
    sock = connect(server)
    wsproto.send_text(sock, "this is not json", mask=True)
    send_msg(sock, "human_action", {"action": 17})
    send_msg(sock, "human_action", {"action": "up"})
    send_msg(sock, "human_action", {})
    send_msg(sock, "mystery_kind", {"action": 2})
    send_msg(sock, "intervention_begin", {})  # reader thread must survive
    wait_for(lambda: source.engaged_flag)
    assert not source.pending
    sock.close()


def test_disconnect_auto_disengages(session):
    server, source = session
    sock = connect(server)
    send_msg(sock, "human_action", {"action": 1})
    wait_for(lambda: source.engaged_flag)
    sock.close()
    wait_for(lambda: not source.engaged_flag)


# ---------------------------------------------------------------------------
# serve mode
# ---------------------------------------------------------------------------

def remote_cfg(tmp_path, **overrides):
    layout = tmp_path / "tube.cfg"
    if not layout.exists():
        layout.write_text(TUBE_LAYOUT)
    base = dict(
        algorithm="hi-ppo",
        intervention_source="remote",
        colon_file=str(layout),
        seed=21,
        total_steps=64,
        buffer_size=64,
        hidden_size=16,
        update=UpdateConfig(minibatch_size=16, epochs=1),
        hi=HIConfig(human_hold_steps=3),
        env=EnvConfig(max_episode_steps=400),
    )
    base.update(overrides)
    return RunConfig(**base)


def test_serve_smoke(tmp_path, capsys):
    result = serve(remote_cfg(tmp_path), tmp_path / "run", port=0,
                   should_stop=lambda: True)
    assert result.stats["steps_done"] == 0
    assert "listening on ws://" in capsys.readouterr().out


def test_absent_console_matches_headless_run(tmp_path):
    cfg_remote = remote_cfg(tmp_path)
    cfg_none = remote_cfg(tmp_path, intervention_source="none")
    a = train(cfg_remote, tmp_path / "a", source=QueueHumanSource(cfg_remote.hi))
    b = train(cfg_none, tmp_path / "b")
    lines_a = [p.read_text().splitlines()[1:] for p in a.log_paths]
    lines_b = [p.read_text().splitlines()[1:] for p in b.log_paths]
    assert lines_a == lines_b  # identical except the config header line
    pa, _ = load_checkpoint(a.checkpoint)
    pb, _ = load_checkpoint(b.checkpoint)
    assert np.array_equal(pa.flat(), pb.flat())


def test_live_console_takeover_reaches_the_logs(tmp_path):
    cfg = remote_cfg(tmp_path)
    source = QueueHumanSource(cfg.hi)
    server = SessionServer("127.0.0.1", 0, source, broadcast_hz=50.0)
    result_box = {}

    def paced_publish(snap):
        server.publish(snap)
        time.sleep(0.004)  # give the console time to react mid-run

    def run():
        result_box["result"] = train(cfg, tmp_path / "run", source=source,
                                     on_step=paced_publish,
                                     on_episode_end=server.publish_episode_end)

    worker = threading.Thread(target=run)
    try:
        sock = connect(server)
        worker.start()
        recv_until(sock, lambda m: (m["kind"] == "state_update"
                                    and m["payload"]["step"] >= 3))
        send_msg(sock, "human_action", {"action": 2})
        seen = recv_until(sock, lambda m: m["kind"] == "intervention_end",
                          attempts=400)
        assert any(m["kind"] == "intervention_begin" for m in seen)
        worker.join(timeout=30)
        assert not worker.is_alive()
        sock.close()
    finally:
        server.close()

    engaged = []
    onsets = 0
    for path in result_box["result"].log_paths:
        log = read_episode_log(path)
        engaged += [st for st in log.steps if st["m"] == 1]
        onsets += log.end["onsets"]
    assert onsets >= 1
    assert 1 <= len(engaged) <= cfg.hi.human_hold_steps
    assert all(st["action"] == 2 for st in engaged)  # operator command executed
