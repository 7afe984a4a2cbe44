"""Blocking line-oriented socket reads shared by station and vehicle."""

from __future__ import annotations

import socket

from .protocol import MAX_FRAME_BYTES, MalformedFrame


def recv_line(sock: socket.socket, buf: bytearray) -> bytes | None:
    """Read one newline-terminated frame; None on orderly EOF.

    `buf` carries bytes between calls. socket.timeout propagates to the
    caller; a frame growing past MAX_FRAME_BYTES raises MalformedFrame.
    """
    while b"\n" not in buf:
        if len(buf) > MAX_FRAME_BYTES:
            raise MalformedFrame(f"frame exceeds {MAX_FRAME_BYTES} bytes")
        chunk = sock.recv(65536)
        if not chunk:
            return None
        buf += chunk
    head, _, rest = bytes(buf).partition(b"\n")
    buf[:] = rest
    line = head + b"\n"
    if len(line) > MAX_FRAME_BYTES:
        raise MalformedFrame(f"frame exceeds {MAX_FRAME_BYTES} bytes")
    return line
