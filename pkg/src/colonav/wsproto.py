"""Minimal WebSocket framing over plain sockets: enough for one JSON message
per text frame in both directions, plus ping/pong and clean close. Supports
unfragmented frames only; peers that fragment get a protocol-error close.
"""

from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_CONT = 0x0
OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


class WSError(Exception):
    pass


class WSClosed(WSError):
    pass


def accept_key(key: str) -> str:
    digest = hashlib.sha1((key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise WSClosed("socket closed")
        buf += chunk
    return buf


def read_http_header(sock: socket.socket, limit: int = 65536) -> bytes:
    """Read until the blank line ending an HTTP request/response head."""
    buf = b""
    while b"\r\n\r\n" not in buf:
        if len(buf) > limit:
            raise WSError("oversized HTTP header")
        chunk = sock.recv(4096)
        if not chunk:
            raise WSClosed("socket closed during handshake")
        buf += chunk
    return buf


def parse_headers(raw: bytes) -> dict:
    lines = raw.split(b"\r\n\r\n", 1)[0].decode("latin-1").split("\r\n")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    return headers


def server_handshake(sock: socket.socket) -> None:
    raw = read_http_header(sock)
    headers = parse_headers(raw)
    key = headers.get("sec-websocket-key")
    if not key or "websocket" not in headers.get("upgrade", "").lower():
        sock.sendall(b"HTTP/1.1 400 Bad Request\r\nConnection: close\r\n\r\n")
        raise WSError("not a websocket upgrade request")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
        "\r\n"
    )
    sock.sendall(response.encode())


def client_handshake(sock: socket.socket, host: str, path: str = "/") -> None:
    key = base64.b64encode(os.urandom(16)).decode()
    request = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n"
        "\r\n"
    )
    sock.sendall(request.encode())
    raw = read_http_header(sock)
    status = raw.split(b"\r\n", 1)[0]
    if b"101" not in status:
        raise WSError(f"handshake rejected: {status!r}")
    headers = parse_headers(raw)
    if headers.get("sec-websocket-accept") != accept_key(key):
        raise WSError("bad Sec-WebSocket-Accept")


def encode_frame(payload: bytes, opcode: int = OP_TEXT, mask: bool = False) -> bytes:
    head = bytes([0x80 | opcode])
    n = len(payload)
    mask_bit = 0x80 if mask else 0
    if n < 126:
        head += bytes([mask_bit | n])
    elif n < 1 << 16:
        head += bytes([mask_bit | 126]) + struct.pack(">H", n)
    else:
        head += bytes([mask_bit | 127]) + struct.pack(">Q", n)
    if mask:
        key = os.urandom(4)
        masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        return head + key + masked
    return head + payload


def read_frame(sock: socket.socket, max_len: int = 1 << 22):
    """Next (opcode, payload); raises WSClosed on close frames / dead socket."""
    b0, b1 = _read_exact(sock, 2)
    fin = b0 & 0x80
    opcode = b0 & 0x0F
    if not fin or opcode == OP_CONT:
        raise WSError("fragmented frames not supported")
    masked = b1 & 0x80
    n = b1 & 0x7F
    if n == 126:
        (n,) = struct.unpack(">H", _read_exact(sock, 2))
    elif n == 127:
        (n,) = struct.unpack(">Q", _read_exact(sock, 8))
    if n > max_len:
        raise WSError(f"frame too large ({n} bytes)")
    key = _read_exact(sock, 4) if masked else None
    payload = _read_exact(sock, n) if n else b""
    if key:
        payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
    if opcode == OP_CLOSE:
        raise WSClosed("close frame")
    return opcode, payload


def send_text(sock: socket.socket, text: str, mask: bool = False) -> None:
    sock.sendall(encode_frame(text.encode(), OP_TEXT, mask))


def send_close(sock: socket.socket, mask: bool = False) -> None:
    try:
        sock.sendall(encode_frame(b"", OP_CLOSE, mask))
    except OSError:
        pass


def recv_text(sock: socket.socket, mask_replies: bool = False) -> str:
    """Next text frame, transparently answering pings."""
    while True:
        opcode, payload = read_frame(sock)
        if opcode == OP_PING:
            sock.sendall(encode_frame(payload, OP_PONG, mask_replies))
            continue
        if opcode == OP_PONG:
            continue
        if opcode != OP_TEXT:
            raise WSError(f"unexpected opcode {opcode}")
        return payload.decode()
