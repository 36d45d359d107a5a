"""Remote information reconciliation and the reverse-reconciliation attacks.

``run_rem_ir`` is direct reconciliation with the syndrome decoding handed to
an untrusted decoder: Alice publishes ``s_A``, Bob forms ``s_e = s_B ^ s_A``
and sends it out, the decoder answers with ``e_hat``, Bob checks the answer
and corrects his key. The decoder only ever sees ``e H^T`` and a function of
it.

The reverse-reconciliation helpers show why the same trick fails when Bob's
key is the reference: once ``s_B`` and ``s_e`` are both public, Eve learns
``s_A`` and can decode her own copy of Alice's key.
"""
from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .bitlinalg import BitBlock, DimensionError, ParityCheck, syndrome
from .channel import ChannelParams, KeyStore, LeakageLedger, substream, transmit
from .keyrate import secret_capacity
from .ldpc import DecodeResult, DecoderConfig, Verdict, decode_syndrome, verify_error_vector, weight_bound

log = logging.getLogger(__name__)


class MsgKind(str, enum.Enum):
    SYNDROME_A = "syndrome_a"
    ERROR_SYNDROME = "error_syndrome"
    ERROR_VECTOR = "error_vector"
    SYNDROME_B = "syndrome_b"
    SYNDROME_B_ENC = "syndrome_b_enc"
    ABORT = "abort"


@dataclass(frozen=True)
class IrMessage:
    kind: MsgKind
    body: BitBlock
    session: str


@dataclass(frozen=True)
class TranscriptEntry:
    sender: str
    receiver: str
    channel: str  # "public" or "private"
    message: IrMessage


@dataclass
class SessionTranscript:
    session: str
    ledger: LeakageLedger = field(default_factory=LeakageLedger)
    entries: list[TranscriptEntry] = field(default_factory=list)

    def send(self, sender: str, receiver: str, kind: MsgKind, body: BitBlock,
             channel: str = "public", novel: bool = False) -> IrMessage:
        msg = IrMessage(kind, body, self.session)
        self.entries.append(TranscriptEntry(sender, receiver, channel, msg))
        if channel == "public":
            self.ledger.record(f"ir/{kind.value}", body.len, f"{sender}->{receiver}", novel)
        return msg

    def public(self) -> list[TranscriptEntry]:
        return [e for e in self.entries if e.channel == "public"]

    def find(self, kind: MsgKind, public_only: bool = True) -> Optional[BitBlock]:
        for e in self.entries:
            if e.message.kind is kind and (e.channel == "public" or not public_only):
                return e.message.body
        return None

    def decoder_view(self) -> tuple[tuple[str, BitBlock], ...]:
        """Everything exchanged with a decoder, in order."""
        return tuple((e.message.kind.value, e.message.body) for e in self.entries
                     if e.sender.startswith("decoder") or e.receiver.startswith("decoder"))

    def public_bits(self) -> int:
        return sum(e.message.body.len for e in self.public())


class IrAbort(RuntimeError):
    """Reconciliation aborted; ``cause`` names the failed check and ``decoder`` the culprit."""

    def __init__(self, cause: str, transcript: SessionTranscript, decoder: str = ""):
        self.cause = cause
        self.transcript = transcript
        self.decoder = decoder
        super().__init__(f"session {transcript.session}: {cause}" + (f" from {decoder}" if decoder else ""))


class DecoderEndpoint(Protocol):
    name: str

    def decode(self, s_e: BitBlock) -> DecodeResult: ...


class LocalDecoder:
    """In-process binding of the decoder role."""

    def __init__(self, h: ParityCheck, cfg: DecoderConfig, name: str = "decoder"):
        self.h = h
        self.cfg = cfg
        self.name = name

    def decode(self, s_e: BitBlock) -> DecodeResult:
        return decode_syndrome(s_e, self.h, self.cfg)


Decoders = Union[DecoderEndpoint, Sequence[DecoderEndpoint]]


def _bound_for(n: int, cfg: DecoderConfig, bound) -> Optional[int]:
    if bound == "auto":
        return weight_bound(n, cfg.qber_prior)
    return bound


def _offload(s_e: BitBlock, h: ParityCheck, decoders: Decoders, transcript: SessionTranscript,
             requester: str, verify: bool, bound: Optional[int], novel: bool = False) -> BitBlock:
    """Send ``s_e`` to one or more decoders; return the first accepted answer.

    ``novel`` marks ``s_e`` as new information, which holds when no peer
    syndrome is public.
    """
    if not isinstance(decoders, (list, tuple)):
        decoders = [decoders]
    for i, d in enumerate(decoders):
        transcript.send(requester, d.name, MsgKind.ERROR_SYNDROME, s_e, novel=novel and i == 0)

    def check(dec, res: DecodeResult) -> Optional[str]:
        if res.e_hat.len != h.n:
            return "dimension_mismatch"
        transcript.send(dec.name, requester, MsgKind.ERROR_VECTOR, res.e_hat)
        if verify:
            verdict = verify_error_vector(res.e_hat, s_e, h, bound)
            if verdict is not Verdict.ACCEPT:
                return verdict.value
        if not res.converged:
            return "nonconvergence"
        return None

    last_cause, culprit = "no_decoder", ""
    if len(decoders) == 1:
        dec = decoders[0]
        res = dec.decode(s_e)
        cause = check(dec, res)
        if cause is None:
            return res.e_hat
        last_cause, culprit = cause, dec.name
    else:
        with ThreadPoolExecutor(max_workers=len(decoders)) as pool:
            futures = {pool.submit(d.decode, s_e): d for d in decoders}
            for fut in as_completed(futures):
                dec = futures[fut]
                try:
                    res = fut.result()
                except Exception as exc:  # a dead decoder must not sink the race
                    log.warning("decoder %s failed: %s", dec.name, exc)
                    last_cause, culprit = "decoder_error", dec.name
                    continue
                cause = check(dec, res)
                if cause is None:
                    for f in futures:
                        f.cancel()
                    return res.e_hat
                log.info("session %s: rejected answer from %s (%s)", transcript.session, dec.name, cause)
                last_cause, culprit = cause, dec.name
    transcript.send(requester, "all", MsgKind.ABORT, BitBlock.zeros(0))
    raise IrAbort(last_cause, transcript, culprit)


def _check_keys(k_a: BitBlock, k_b: BitBlock, h: ParityCheck) -> None:
    if not k_a.len == k_b.len == h.n:
        raise DimensionError(f"keys of {k_a.len}/{k_b.len} bits for code length {h.n}")


def run_rem_ir(k_a: BitBlock, k_b: BitBlock, h: ParityCheck, cfg: DecoderConfig, decoder: Decoders,
               *, verify: bool = True, bound: Union[int, None, str] = "auto",
               session: str = "s0") -> tuple[BitBlock, SessionTranscript]:
    """Direct reconciliation with outsourced syndrome decoding.

    Returns Bob's estimate of Alice's key and the session transcript. Raises
    :class:`IrAbort` when the decoder's answer fails verification or the
    decoder reports non-convergence.
    """
    _check_keys(k_a, k_b, h)
    tr = SessionTranscript(session)
    s_a = syndrome(k_a, h)
    tr.send("alice", "bob", MsgKind.SYNDROME_A, s_a, novel=True)
    s_e = syndrome(k_b, h) ^ s_a
    e_hat = _offload(s_e, h, decoder, tr, "bob", verify, _bound_for(h.n, cfg, bound))
    return k_b ^ e_hat, tr


class _PairDecoder(Protocol):
    def decode_pair(self, s_a: BitBlock, s_b: BitBlock) -> DecodeResult: ...


def run_rem_ir_variant(k_a: BitBlock, k_b: BitBlock, h: ParityCheck, cfg: DecoderConfig,
                       decoder: DecoderEndpoint, *, verify: bool = True,
                       bound: Union[int, None, str] = "auto",
                       session: str = "s0") -> tuple[BitBlock, SessionTranscript]:
    """Both peers send their syndromes to the decoder, which forms ``s_e`` itself."""
    _check_keys(k_a, k_b, h)
    tr = SessionTranscript(session)
    s_a = syndrome(k_a, h)
    s_b = syndrome(k_b, h)
    tr.send("alice", decoder.name, MsgKind.SYNDROME_A, s_a, novel=True)
    tr.send("bob", decoder.name, MsgKind.SYNDROME_B, s_b)
    if hasattr(decoder, "decode_pair"):
        res = decoder.decode_pair(s_a, s_b)
    else:
        res = decoder.decode(s_b ^ s_a)
    tr.send(decoder.name, "bob", MsgKind.ERROR_VECTOR, res.e_hat)
    # s_A travelled in public, so Bob can form s_e for the check himself
    s_e = s_b ^ s_a
    if res.e_hat.len != h.n:
        raise IrAbort("dimension_mismatch", tr, decoder.name)
    if verify:
        verdict = verify_error_vector(res.e_hat, s_e, h, _bound_for(h.n, cfg, bound))
        if verdict is not Verdict.ACCEPT:
            raise IrAbort(verdict.value, tr, decoder.name)
    if not res.converged:
        raise IrAbort("nonconvergence", tr, decoder.name)
    return k_b ^ res.e_hat, tr


def run_rr_offload(k_a: BitBlock, k_b: BitBlock, h: ParityCheck, cfg: DecoderConfig, decoder: Decoders,
                   *, verify: bool = True, bound: Union[int, None, str] = "auto",
                   session: str = "s0") -> tuple[BitBlock, SessionTranscript]:
    """Reverse reconciliation with ``s_B`` in the clear; insecure, kept for the attack demo."""
    _check_keys(k_a, k_b, h)
    tr = SessionTranscript(session)
    s_b = syndrome(k_b, h)
    tr.send("bob", "alice", MsgKind.SYNDROME_B, s_b, novel=True)
    s_e = s_b ^ syndrome(k_a, h)
    e_hat = _offload(s_e, h, decoder, tr, "alice", verify, _bound_for(h.n, cfg, bound))
    return k_a ^ e_hat, tr


def run_rr_encrypted(k_a: BitBlock, k_b: BitBlock, h: ParityCheck, cfg: DecoderConfig, decoder: Decoders,
                     key_store: KeyStore, channel: Optional[ChannelParams] = None,
                     *, verify: bool = True, bound: Union[int, None, str] = "auto",
                     session: str = "s0") -> tuple[BitBlock, SessionTranscript, Optional[float]]:
    """Reverse reconciliation with ``s_B`` one-time-padded on the Bob to Alice leg.

    Returns Alice's estimate of Bob's key, the transcript and the key balance
    ``n * C_s(e, d) - otp_bits`` (``None`` without channel parameters).
    """
    _check_keys(k_a, k_b, h)
    tr = SessionTranscript(session)
    s_b = syndrome(k_b, h)
    pad = key_store.take(s_b.len)
    tr.send("bob", "alice", MsgKind.SYNDROME_B_ENC, s_b ^ pad)
    tr.ledger.record("otp/syndrome_b", pad.len, "consumed", novel=False)
    s_b_alice = tr.find(MsgKind.SYNDROME_B_ENC) ^ pad
    s_e = s_b_alice ^ syndrome(k_a, h)
    e_hat = _offload(s_e, h, decoder, tr, "alice", verify, _bound_for(h.n, cfg, bound), novel=True)
    balance = None
    if channel is not None:
        balance = h.n * secret_capacity(channel.e, channel.d) - pad.len
    return k_a ^ e_hat, tr, balance


# --- attack demonstrations ---------------------------------------------------

@dataclass(frozen=True)
class AttackStats:
    mode: str
    trials: int
    recovery_rate: float
    residual_ber: float
    eve_converged_rate: float
    protocol_success_rate: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def eve_guess(transcript: SessionTranscript, k_e: BitBlock, h: ParityCheck, eve_cfg: DecoderConfig,
              target: str) -> tuple[BitBlock, bool]:
    """Eve's best estimate of the final key from the public transcript and her copy ``k_e``.

    ``target`` is ``"alice"`` for direct and ``"bob"`` for reverse
    reconciliation. When Alice's syndrome is public, or derivable as
    ``s_B ^ s_e``, Eve syndrome-decodes her noisy copy against it.
    """
    s_a = transcript.find(MsgKind.SYNDROME_A)
    s_b = transcript.find(MsgKind.SYNDROME_B)
    s_e = transcript.find(MsgKind.ERROR_SYNDROME)
    e_hat = transcript.find(MsgKind.ERROR_VECTOR)
    if s_a is None and s_b is not None and s_e is not None:
        s_a = s_b ^ s_e
    converged = False
    k_a_guess = k_e
    if s_a is not None:
        res = decode_syndrome(syndrome(k_e, h) ^ s_a, h, eve_cfg)
        converged = res.converged
        k_a_guess = k_e ^ res.e_hat
    if target == "alice":
        return k_a_guess, converged
    if e_hat is not None:
        return k_a_guess ^ e_hat, converged
    return k_a_guess, converged


def eve_rr_attack(p: ChannelParams, h: ParityCheck, cfg: DecoderConfig, trials: int,
                  mode: str = "rr", eve_cfg: Optional[DecoderConfig] = None) -> AttackStats:
    """Monte-Carlo of Eve against offloaded reconciliation.

    ``mode`` is ``"rr"`` (s_B public), ``"rr_encrypted"`` (s_B one-time-padded)
    or ``"dr"`` (the REM-IR control, only s_A and s_e public).
    """
    if mode not in ("rr", "rr_encrypted", "dr"):
        raise ValueError(f"unknown attack mode {mode!r}")
    if eve_cfg is None:
        eve_cfg = DecoderConfig(cfg.variant, qber_prior=max(p.d, 1e-3),
                                max_iterations=cfg.max_iterations, damping=cfg.damping)
    decoder = LocalDecoder(h, cfg)
    recovered = ok = eve_conv = 0
    ber = 0.0
    for t in range(trials):
        k_a = BitBlock.random(h.n, substream(p.seed, "attack", t, "alice"))
        k_b, k_e, _ = transmit(k_a, p, session=t)
        try:
            if mode == "dr":
                key, tr = run_rem_ir(k_a, k_b, h, cfg, decoder, session=f"t{t}")
                final, target = k_a, "alice"
            elif mode == "rr":
                key, tr = run_rr_offload(k_a, k_b, h, cfg, decoder, session=f"t{t}")
                final, target = k_b, "bob"
            else:
                store = KeyStore.random(h.r, substream(p.seed, "attack", t, "otp"))
                key, tr, _ = run_rr_encrypted(k_a, k_b, h, cfg, decoder, store, session=f"t{t}")
                final, target = k_b, "bob"
            ok += key == final
        except IrAbort as exc:
            tr = exc.transcript
            final = k_a if mode == "dr" else k_b
            target = "alice" if mode == "dr" else "bob"
        guess, conv = eve_guess(tr, k_e, h, eve_cfg, target)
        eve_conv += conv
        recovered += guess == final
        ber += (guess ^ final).weight() / h.n
    return AttackStats(mode, trials, recovered / trials, ber / trials, eve_conv / trials, ok / trials)


@dataclass(frozen=True)
class InvarianceResult:
    holds: bool
    trials: int
    distinct_views: int


def eve_dr_invariance(e_vec: BitBlock, h: ParityCheck, trials: int,
                      cfg: DecoderConfig = DecoderConfig(), rng: Optional[np.random.Generator] = None
                      ) -> InvarianceResult:
    """Run REM-IR with fresh random ``k_A`` and a fixed error pattern.

    The decoder-facing part of every transcript must be identical: it can
    only depend on ``e_vec``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    decoder = LocalDecoder(h, cfg)
    views = set()
    for t in range(trials):
        k_a = BitBlock.random(h.n, rng)
        try:
            _, tr = run_rem_ir(k_a, k_a ^ e_vec, h, cfg, decoder, session="inv")
        except IrAbort as exc:
            tr = exc.transcript
        views.add(tr.decoder_view())
    return InvarianceResult(len(views) == 1, trials, len(views))
