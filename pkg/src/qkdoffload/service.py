"""TCP binding of the decoder and PA-server roles.

Frame: 4-byte big-endian length (covering the type byte and payload), 1-byte
type, payload. Bit vectors are packed LSB-first.

==== ============== ==========================================================
type name           payload
==== ============== ==========================================================
0x01 DecodeRequest  u16 code-id, u32 bit-length, packed syndrome
0x02 DecodeResponse u8 converged, u32 iterations, packed e_hat
0x03 Error          u8 error code, UTF-8 message
0x11 PaRequest      u8 scheme, u32 n, u32 m, packed seed (n+m-1 bits), share
0x12 PaResponse     share
==== ============== ==========================================================

A share is packed bits for scheme 0 (additive GF(2)); for schemes 1 (additive
GF(p)) and 2 (Shamir) it is a u64 prime followed by one u64 per element.
Every malformed request gets an Error frame and the connection stays open.
Transport security is out of scope: deploy behind TLS or a VPN.
"""
from __future__ import annotations

import json
import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .bitlinalg import BitBlock, ParityCheck, ToeplitzSeed, syndrome
from .codes import load_code
from .ldpc import DecodeResult, DecoderConfig, decode_syndrome
from .sharing import Scheme, ShareVector, lin_combine

log = logging.getLogger(__name__)

DECODE_REQUEST = 0x01
DECODE_RESPONSE = 0x02
ERROR = 0x03
PA_REQUEST = 0x11
PA_RESPONSE = 0x12

ERR_MALFORMED = 1
ERR_UNKNOWN_CODE = 2
ERR_UNKNOWN_TYPE = 3
ERR_DIMENSION = 4
ERR_INTERNAL = 5

MAX_FRAME = 64 << 20

SCHEME_IDS = {"additive_gf2": 0, "additive_gfp": 1, "shamir": 2}


class ProtocolError(ValueError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class RemoteError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(f"server error {code}: {message}")
        self.code = code


# --- framing ------------------------------------------------------------------

def encode_frame(msg_type: int, payload: bytes) -> bytes:
    return struct.pack(">IB", len(payload) + 1, msg_type) + payload


def _recv_exact(sock: socket.socket, count: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < count:
        chunk = sock.recv(count - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> Optional[tuple[int, bytes]]:
    """Next (type, payload), or None on a clean close between frames."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack(">I", head)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(ERR_MALFORMED, f"frame length {length} out of range")
    body = _recv_exact(sock, length)
    if body is None:
        raise ConnectionError("connection closed inside a frame")
    return body[0], body[1:]


def _pack_bits(b: BitBlock) -> bytes:
    return b.payload


def _unpack_bits(data: bytes, length: int, what: str) -> BitBlock:
    need = (length + 7) // 8
    if len(data) != need:
        raise ProtocolError(ERR_MALFORMED, f"{what}: expected {need} bytes for {length} bits, got {len(data)}")
    try:
        return BitBlock.from_bytes(data, length)
    except ValueError as exc:
        raise ProtocolError(ERR_MALFORMED, f"{what}: {exc}") from None


# --- messages -----------------------------------------------------------------

def encode_decode_request(code_id: int, s: BitBlock) -> bytes:
    return encode_frame(DECODE_REQUEST, struct.pack(">HI", code_id, s.len) + _pack_bits(s))


def parse_decode_request(payload: bytes) -> tuple[int, BitBlock]:
    if len(payload) < 6:
        raise ProtocolError(ERR_MALFORMED, "DecodeRequest shorter than its 6-byte header")
    code_id, length = struct.unpack(">HI", payload[:6])
    return code_id, _unpack_bits(payload[6:], length, "syndrome")


def encode_decode_response(res: DecodeResult) -> bytes:
    return encode_frame(DECODE_RESPONSE, struct.pack(">BI", int(res.converged), res.iterations)
                        + _pack_bits(res.e_hat))


def parse_decode_response(payload: bytes, n: int) -> tuple[bool, int, BitBlock]:
    if len(payload) < 5:
        raise ProtocolError(ERR_MALFORMED, "DecodeResponse shorter than its 5-byte header")
    conv, iters = struct.unpack(">BI", payload[:5])
    return bool(conv), iters, _unpack_bits(payload[5:], n, "error vector")


def encode_error(code: int, message: str) -> bytes:
    return encode_frame(ERROR, struct.pack(">B", code) + message.encode("utf-8"))


def parse_error(payload: bytes) -> tuple[int, str]:
    if not payload:
        return ERR_MALFORMED, ""
    return payload[0], payload[1:].decode("utf-8", errors="replace")


def _encode_share(scheme: Scheme, values: np.ndarray) -> bytes:
    if scheme.kind == "additive_gf2":
        return BitBlock.from_bits(values).payload
    return struct.pack(">Q", scheme.p) + values.astype(">u8").tobytes()


def _decode_share(kind: str, data: bytes, count: int) -> tuple[int, np.ndarray]:
    if kind == "additive_gf2":
        return 2, _unpack_bits(data, count, "share").bits.copy()
    if len(data) != 8 + 8 * count:
        raise ProtocolError(ERR_MALFORMED, f"share: expected {8 + 8 * count} bytes, got {len(data)}")
    (p,) = struct.unpack(">Q", data[:8])
    if not 2 < p < 1 << 63:
        raise ProtocolError(ERR_MALFORMED, f"share: prime {p} outside (2, 2**63)")
    values = np.frombuffer(data[8:], dtype=">u8").astype(np.uint64)
    if values.size and int(values.max()) >= p:
        raise ProtocolError(ERR_MALFORMED, "share: element not reduced modulo p")
    return p, values


def encode_pa_request(share_: ShareVector, seed: ToeplitzSeed) -> bytes:
    sid = SCHEME_IDS[share_.scheme.kind]
    head = struct.pack(">BII", sid, seed.n, seed.m)
    return encode_frame(PA_REQUEST, head + seed.bits.payload + _encode_share(share_.scheme, share_.values))


def parse_pa_request(payload: bytes) -> tuple[str, int, ToeplitzSeed, np.ndarray]:
    if len(payload) < 9:
        raise ProtocolError(ERR_MALFORMED, "PaRequest shorter than its 9-byte header")
    sid, n, m = struct.unpack(">BII", payload[:9])
    kinds = {v: k for k, v in SCHEME_IDS.items()}
    if sid not in kinds:
        raise ProtocolError(ERR_MALFORMED, f"unknown scheme id {sid}")
    if not 1 <= m <= n:
        raise ProtocolError(ERR_DIMENSION, f"need 1 <= m <= n, got n={n} m={m}")
    seed_bytes = (n + m - 1 + 7) // 8
    if len(payload) < 9 + seed_bytes:
        raise ProtocolError(ERR_MALFORMED, "PaRequest truncated inside the seed")
    seed = ToeplitzSeed(n, m, _unpack_bits(payload[9:9 + seed_bytes], n + m - 1, "seed"))
    p, values = _decode_share(kinds[sid], payload[9 + seed_bytes:], n)
    return kinds[sid], p, seed, values


def encode_pa_response(share_: ShareVector) -> bytes:
    return encode_frame(PA_RESPONSE, _encode_share(share_.scheme, share_.values))


# --- registry -----------------------------------------------------------------

@dataclass(frozen=True)
class RegisteredCode:
    code_id: int
    name: str
    h: ParityCheck
    cfg: DecoderConfig


class CodeRegistry:
    """Codes served by id: either ``codes.json`` in the directory or its sorted ``*.alist`` files.

    ``codes.json`` holds ``{"codes": [{"id": 0, "file": "x.alist", "decoder": {...}}]}``
    where ``decoder`` takes :class:`DecoderConfig` fields.
    """

    def __init__(self, codes: dict[int, RegisteredCode]):
        self.codes = codes

    @classmethod
    def from_dir(cls, path: str | Path, default_cfg: DecoderConfig = DecoderConfig()) -> "CodeRegistry":
        root = Path(path)
        if not root.is_dir():
            raise FileNotFoundError(f"code directory {root} does not exist")
        manifest = root / "codes.json"
        codes: dict[int, RegisteredCode] = {}
        if manifest.exists():
            manifest_data = json.loads(manifest.read_text())
            for entry in manifest_data.get("codes", []):
                cfg = DecoderConfig(**entry["decoder"]) if "decoder" in entry else default_cfg
                cid = int(entry["id"])
                if cid in codes or not 0 <= cid < 1 << 16:
                    raise ValueError(f"{manifest}: bad or duplicate code id {cid}")
                codes[cid] = RegisteredCode(cid, entry["file"], load_code(root / entry["file"]), cfg)
        else:
            for cid, f in enumerate(sorted(root.glob("*.alist"))):
                codes[cid] = RegisteredCode(cid, f.name, load_code(f), default_cfg)
        if not codes:
            raise ValueError(f"no codes found in {root}")
        return cls(codes)

    def get(self, code_id: int) -> RegisteredCode:
        if code_id not in self.codes:
            raise ProtocolError(ERR_UNKNOWN_CODE, f"unknown code id {code_id}")
        return self.codes[code_id]


# --- server -------------------------------------------------------------------

class _Handler(socketserver.BaseRequestHandler):
    server: "OffloadServer"

    def handle(self) -> None:
        sock = self.request
        sock.settimeout(self.server.idle_timeout)
        peer = "%s:%s" % self.client_address[:2]
        log.info("event=connect peer=%s", peer)
        while True:
            try:
                frame = read_frame(sock)
            except ProtocolError as exc:
                # the stream cannot be resynchronised after a bad length header
                sock.sendall(encode_error(exc.code, str(exc)))
                log.warning("event=bad_frame peer=%s reason=%r", peer, str(exc))
                break
            except (ConnectionError, socket.timeout, OSError) as exc:
                log.info("event=drop peer=%s reason=%r", peer, str(exc))
                break
            if frame is None:
                break
            msg_type, payload = frame
            try:
                reply = self.server.dispatch(msg_type, payload)
            except ProtocolError as exc:
                reply = encode_error(exc.code, str(exc))
                log.warning("event=error peer=%s type=0x%02x code=%d reason=%r", peer, msg_type, exc.code, str(exc))
            except Exception as exc:  # keep the connection alive on server bugs
                log.exception("event=internal_error peer=%s", peer)
                reply = encode_error(ERR_INTERNAL, f"{type(exc).__name__}: {exc}")
            try:
                sock.sendall(reply)
            except OSError:
                break
        log.info("event=disconnect peer=%s", peer)


class OffloadServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    idle_timeout = 300.0

    def __init__(self, address: tuple[str, int], registry: Optional[CodeRegistry],
                 roles: tuple[str, ...] = ("decoder", "pa_server")):
        self.registry = registry
        self.roles = roles
        if "decoder" in roles and registry is None:
            raise ValueError("the decoder role needs a code registry")
        super().__init__(address, _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def dispatch(self, msg_type: int, payload: bytes) -> bytes:
        if msg_type == DECODE_REQUEST and "decoder" in self.roles:
            code_id, s = parse_decode_request(payload)
            code = self.registry.get(code_id)
            if s.len != code.h.r:
                raise ProtocolError(ERR_DIMENSION, f"code {code_id} expects {code.h.r} syndrome bits, got {s.len}")
            res = decode_syndrome(s, code.h, code.cfg)
            log.info("event=decode code=%d converged=%s iterations=%d", code_id, res.converged, res.iterations)
            return encode_decode_response(res)
        if msg_type == PA_REQUEST and "pa_server" in self.roles:
            kind, p, seed, values = parse_pa_request(payload)
            scheme = Scheme(kind, p, 1 if kind == "shamir" else 0)
            out = lin_combine(ShareVector(0, scheme, values, 2), seed)
            log.info("event=pa scheme=%s n=%d m=%d", kind, seed.n, seed.m)
            return encode_pa_response(out)
        raise ProtocolError(ERR_UNKNOWN_TYPE, f"unsupported message type 0x{msg_type:02x}")

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


def serve(role: str, bind: str, codes_dir: Optional[str] = None,
          default_cfg: DecoderConfig = DecoderConfig()) -> OffloadServer:
    """Build a server for ``role`` ("decoder", "pa_server" or "all") bound to ``host:port``."""
    roles = {"decoder": ("decoder",), "pa_server": ("pa_server",), "all": ("decoder", "pa_server")}
    if role not in roles:
        raise ValueError(f"unknown role {role!r}")
    registry = CodeRegistry.from_dir(codes_dir, default_cfg) if codes_dir else None
    return OffloadServer(parse_address(bind), registry, roles[role])


def parse_address(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address {bind!r} is not host:port")
    return host or "127.0.0.1", int(port)


# --- clients ------------------------------------------------------------------

class _Client:
    def __init__(self, address: tuple[str, int], timeout: float = 30.0):
        self.address = address
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()

    def _roundtrip(self, frame: bytes) -> tuple[int, bytes]:
        with self._lock:
            if self._sock is None:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            self._sock.sendall(frame)
            reply = read_frame(self._sock)
        if reply is None:
            raise ConnectionError("server closed the connection")
        msg_type, payload = reply
        if msg_type == ERROR:
            raise RemoteError(*parse_error(payload))
        return msg_type, payload

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class RemoteDecoder(_Client):
    """Decoder endpoint served over TCP; drop-in for the in-process binding."""

    def __init__(self, address: tuple[str, int], code_id: int, h: ParityCheck,
                 name: str = "decoder", timeout: float = 30.0):
        super().__init__(address, timeout)
        self.code_id = code_id
        self.h = h
        self.name = name

    def decode(self, s_e: BitBlock) -> DecodeResult:
        msg_type, payload = self._roundtrip(encode_decode_request(self.code_id, s_e))
        if msg_type != DECODE_RESPONSE:
            raise ProtocolError(ERR_UNKNOWN_TYPE, f"expected DecodeResponse, got 0x{msg_type:02x}")
        conv, iters, e_hat = parse_decode_response(payload, self.h.n)
        residual = syndrome(e_hat, self.h) ^ s_e
        return DecodeResult(e_hat, conv, iters, residual)


class RemotePaServer(_Client):
    """PA server reached over TCP; the share travels over an assumed secure channel."""

    def apply(self, share_: ShareVector, seed: ToeplitzSeed) -> ShareVector:
        msg_type, payload = self._roundtrip(encode_pa_request(share_, seed))
        if msg_type != PA_RESPONSE:
            raise ProtocolError(ERR_UNKNOWN_TYPE, f"expected PaResponse, got 0x{msg_type:02x}")
        _, values = _decode_share(share_.scheme.kind, payload, seed.m)
        return ShareVector(share_.party_id, share_.scheme, values.astype(share_.scheme.dtype), share_.n_parties)
