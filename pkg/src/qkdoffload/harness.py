"""End-to-end pipeline runs driven by JSON scenario files.

Per block: cut-and-choose estimation, reconciliation in the selected offload
mode, privacy amplification and key confirmation. Every random draw comes
from :func:`qkdoffload.channel.substream` keyed by the run seed, the block
index and the role, so a run is reproducible from its seed alone and the
offload modes consume identical randomness.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .bitlinalg import BitBlock, ParityCheck, syndrome
from .channel import (ChannelParams, KeyExhausted, KeyStore, LeakageLedger, estimate_qber,
                      substream, transmit)
from .codes import load_code, load_fixture
from .keyrate import curves_csv, generate_balance_curves, pa_output_length, secret_capacity
from .ldpc import DecoderConfig, Verdict, decode_syndrome, verify_error_vector, weight_bound
from .rem_ir import (IrAbort, LocalDecoder, MsgKind, SessionTranscript, run_rem_ir,
                     run_rem_ir_variant, run_rr_encrypted)
from .rem_pa import ConfirmVerdict, PaPlan, check_tag, make_tag, pa_local, run_rem_pa
from .sharing import MERSENNE_61, Scheme

SCHEMA_VERSION = 1
OFFLOAD_MODES = ("local", "rem_ir", "rem_ir_variant", "rr_encrypted")
SCHEMES = ("additive_gf2", "additive_gfp", "shamir")


class ScenarioError(ValueError):
    pass


def _reject_unknown(section: str, data: dict, allowed: set[str]) -> None:
    extra = sorted(set(data) - allowed)
    if extra:
        raise ScenarioError(f"{section}: unknown field(s) {', '.join(extra)}; allowed: {', '.join(sorted(allowed))}")


@dataclass(frozen=True)
class PaMode:
    mode: str = "local"
    n_servers: int = 3
    scheme: str = "additive_gf2"
    threshold: int = 1
    prime: int = MERSENNE_61
    spot_check: float = 0.0

    def __post_init__(self):
        if self.mode not in ("local", "rem_pa"):
            raise ScenarioError(f"pa.mode must be 'local' or 'rem_pa', not {self.mode!r}")
        if self.scheme not in SCHEMES:
            raise ScenarioError(f"pa.scheme must be one of {SCHEMES}, not {self.scheme!r}")
        if self.mode == "rem_pa" and self.n_servers < 2:
            raise ScenarioError("pa.n_servers must be >= 2")

    def scheme_obj(self) -> Scheme:
        if self.scheme == "additive_gf2":
            return Scheme.additive_gf2()
        if self.scheme == "additive_gfp":
            return Scheme.additive_gfp(self.prime)
        return Scheme.shamir(self.threshold, self.prime)


@dataclass(frozen=True)
class Scenario:
    channel: ChannelParams
    code: str
    decoder: DecoderConfig = DecoderConfig()
    offload_mode: str = "rem_ir"
    pa: PaMode = PaMode()
    blocks: int = 10
    tag_len: int = 32
    confirm_mode: str = "post_pa"
    sample_fraction: float = 0.1
    margin: int = 50
    seed: int = 0
    key_store_seed: Optional[int] = None
    outputs: dict = field(default_factory=lambda: {"report": "report.json", "blocks": "blocks.csv"})
    base_dir: str = "."

    def __post_init__(self):
        if self.offload_mode not in OFFLOAD_MODES:
            raise ScenarioError(f"offload_mode must be one of {OFFLOAD_MODES}, not {self.offload_mode!r}")
        if self.offload_mode == "rr_encrypted" and self.key_store_seed is None:
            raise ScenarioError("offload_mode 'rr_encrypted' needs key_store_seed")
        if self.confirm_mode not in ("post_pa", "pre_pa"):
            raise ScenarioError(f"confirm_mode must be 'post_pa' or 'pre_pa', not {self.confirm_mode!r}")
        if self.blocks < 1 or self.tag_len < 1:
            raise ScenarioError("blocks and tag_len must be >= 1")
        if not 0.0 < self.sample_fraction < 1.0:
            raise ScenarioError("sample_fraction must lie in (0, 1)")
        _reject_unknown("outputs", self.outputs, {"report", "blocks"})

    def load_code(self) -> ParityCheck:
        if self.code.startswith("fixture:"):
            return load_fixture(self.code.split(":", 1)[1])
        path = Path(self.code)
        if not path.is_absolute():
            path = Path(self.base_dir) / path
        if not path.exists():
            raise ScenarioError(f"code file {path} does not exist")
        return load_code(path)

    def with_overrides(self, **kw) -> "Scenario":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in kw.items() if v is not None})
        ch = data["channel"]
        data["channel"] = ChannelParams(ch.e, ch.d, data["seed"])
        return Scenario(**data)

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "channel": {"e": self.channel.e, "d": self.channel.d},
                "code": self.code, "decoder": self.decoder.to_dict(),
                "offload_mode": self.offload_mode, "pa": asdict(self.pa), "blocks": self.blocks,
                "tag_len": self.tag_len, "confirm_mode": self.confirm_mode,
                "sample_fraction": self.sample_fraction, "margin": self.margin, "seed": self.seed,
                "key_store_seed": self.key_store_seed, "outputs": dict(self.outputs)}


_TOP = {"schema_version", "channel", "code", "decoder", "offload_mode", "pa", "blocks", "tag_len",
        "confirm_mode", "sample_fraction", "margin", "seed", "key_store_seed", "outputs"}


def parse_scenario(data: dict, base_dir: str | Path = ".") -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a JSON object")
    _reject_unknown("scenario", data, _TOP)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    for key in ("channel", "code"):
        if key not in data:
            raise ScenarioError(f"scenario: missing required field {key!r}")
    ch = data["channel"]
    _reject_unknown("channel", ch, {"e", "d"})
    dec = dict(data.get("decoder", {}))
    _reject_unknown("decoder", dec, {"variant", "max_iterations", "qber_prior", "thresholds", "damping"})
    pa = dict(data.get("pa", {}))
    _reject_unknown("pa", pa, {f.name for f in fields(PaMode)})
    seed = int(data.get("seed", 0))
    try:
        return Scenario(
            channel=ChannelParams(float(ch.get("e", 0.0)), float(ch.get("d", 0.5)), seed),
            code=str(data["code"]), decoder=DecoderConfig(**dec),
            offload_mode=data.get("offload_mode", "rem_ir"), pa=PaMode(**pa),
            blocks=int(data.get("blocks", 10)), tag_len=int(data.get("tag_len", 32)),
            confirm_mode=data.get("confirm_mode", "post_pa"),
            sample_fraction=float(data.get("sample_fraction", 0.1)),
            margin=int(data.get("margin", 50)), seed=seed, key_store_seed=data.get("key_store_seed"),
            outputs=dict(data.get("outputs", {"report": "report.json", "blocks": "blocks.csv"})),
            base_dir=str(base_dir))
    except ScenarioError:
        raise
    except (ValueError, TypeError) as exc:
        raise ScenarioError(f"invalid scenario: {exc}") from None


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_scenario(data, path.parent)


# --- per-block pipeline -------------------------------------------------------

@dataclass
class BlockOutcome:
    block: int
    qber_estimate: float
    reconciled: bool
    cause: str
    confirmed: bool
    keys_equal: bool
    final_bits: int
    leak_total: int
    leak_novel: int
    otp_consumed: int
    key_digest: str
    elapsed_s: float = 0.0
    final_key_alice: Optional[BitBlock] = field(default=None, repr=False)
    final_key_bob: Optional[BitBlock] = field(default=None, repr=False)

    @property
    def success(self) -> bool:
        return self.cause in ("ok", "no_key_left")

    def row(self) -> list:
        return [self.block, f"{self.qber_estimate:.6f}", int(self.reconciled), self.cause,
                int(self.confirmed), int(self.keys_equal), self.final_bits, self.leak_total,
                self.leak_novel, self.otp_consumed, self.key_digest]


BLOCK_HEADER = ("block", "qber_estimate", "reconciled", "cause", "confirmed", "keys_equal",
                "final_bits", "leak_total", "leak_novel", "otp_consumed", "key_digest")


def _digest(key: Optional[BitBlock]) -> str:
    if key is None or key.len == 0:
        return ""
    return hashlib.sha256(key.len.to_bytes(8, "big") + key.payload).hexdigest()[:16]


def _local_ir(k_a: BitBlock, k_b: BitBlock, h: ParityCheck, cfg: DecoderConfig,
              session: str) -> tuple[BitBlock, SessionTranscript]:
    """Bob decodes himself; only ``s_A`` crosses the public channel."""
    tr = SessionTranscript(session)
    s_a = syndrome(k_a, h)
    tr.send("alice", "bob", MsgKind.SYNDROME_A, s_a, novel=True)
    s_e = syndrome(k_b, h) ^ s_a
    res = decode_syndrome(s_e, h, cfg)
    tr.send("bob", "bob", MsgKind.ERROR_VECTOR, res.e_hat, channel="private")
    verdict = verify_error_vector(res.e_hat, s_e, h, weight_bound(h.n, cfg.qber_prior))
    if verdict is not Verdict.ACCEPT:
        raise IrAbort(verdict.value, tr, "local")
    if not res.converged:
        raise IrAbort("nonconvergence", tr, "local")
    return k_b ^ res.e_hat, tr


def _pa(key: BitBlock, plan: PaPlan, sc: Scenario, rng: np.random.Generator) -> BitBlock:
    if sc.pa.mode == "local":
        return pa_local(key, plan)
    return run_rem_pa(key, plan, sc.pa.n_servers, sc.pa.scheme_obj(), rng, spot_check=sc.pa.spot_check)


def run_block(sc: Scenario, h: ParityCheck, b: int, decoder=None) -> BlockOutcome:
    t0 = time.perf_counter()
    n = h.n
    seed = sc.seed
    raw_len = math.ceil(n / (1.0 - sc.sample_fraction))
    k_a_raw = BitBlock.random(raw_len, substream(seed, "block", b, "alice"))
    k_b_raw, _, _ = transmit(k_a_raw, sc.channel, session=b)
    ledger = LeakageLedger()
    q_hat, k_a, k_b = estimate_qber(k_a_raw, k_b_raw, sc.sample_fraction, ledger,
                                    substream(seed, "block", b, "estimate"), sample_size=raw_len - n)
    cfg = sc.decoder
    decoder = decoder if decoder is not None else LocalDecoder(h, cfg)
    session = f"{seed}/{b}"
    otp = 0
    try:
        if sc.offload_mode == "local":
            k_hat, tr = _local_ir(k_a, k_b, h, cfg, session)
            key_a, key_b = k_a, k_hat
        elif sc.offload_mode == "rem_ir":
            k_hat, tr = run_rem_ir(k_a, k_b, h, cfg, decoder, session=session)
            key_a, key_b = k_a, k_hat
        elif sc.offload_mode == "rem_ir_variant":
            k_hat, tr = run_rem_ir_variant(k_a, k_b, h, cfg, decoder, session=session)
            key_a, key_b = k_a, k_hat
        else:
            store = KeyStore.random(h.r, substream(sc.key_store_seed, "keystore", b))
            k_hat, tr, _ = run_rr_encrypted(k_a, k_b, h, cfg, decoder, store, session=session)
            otp = store.consumed
            key_a, key_b = k_hat, k_b
        reconciled, cause = True, "ok"
    except IrAbort as exc:
        tr, reconciled, cause = exc.transcript, False, exc.cause
        otp = h.r if sc.offload_mode == "rr_encrypted" else 0
    except KeyExhausted:
        tr, reconciled, cause = SessionTranscript(session), False, "otp_exhausted"
    ledger.entries.extend(tr.ledger.entries)

    confirmed = False
    final_a = final_b = None
    if reconciled:
        confirm_rng = substream(seed, "block", b, "confirm")
        t = sc.tag_len
        if sc.confirm_mode == "pre_pa":
            tag = make_tag(key_a, t, confirm_rng)
            ledger.record("confirm/tag", t, "alice->bob", novel=True)
            confirmed = check_tag(key_b, tag) is ConfirmVerdict.ACCEPT
        m = pa_output_length(n, q_hat, ledger.novel_total, sc.margin)
        if sc.confirm_mode == "post_pa":
            # the first t amplified bits become the tag pad, so t more bits are needed
            m = m if m > t else 0
        if sc.confirm_mode == "pre_pa" and not confirmed:
            cause = "confirm_reject"
        elif m == 0:
            cause, confirmed = "no_key_left", sc.confirm_mode == "pre_pa" or confirmed
        else:
            plan = PaPlan.random(n, m, substream(seed, "block", b, "pa_seed"))
            out_a = _pa(key_a, plan, sc, substream(seed, "block", b, "pa_alice"))
            out_b = _pa(key_b, plan, sc, substream(seed, "block", b, "pa_bob"))
            if sc.confirm_mode == "post_pa":
                pad_a, out_a = BitBlock.from_bits(out_a.bits[:t]), BitBlock.from_bits(out_a.bits[t:])
                pad_b, out_b = BitBlock.from_bits(out_b.bits[:t]), BitBlock.from_bits(out_b.bits[t:])
                tag = make_tag(out_a, t, confirm_rng, pad_a)
                ledger.record("confirm/tag_encrypted", t, "alice->bob", novel=False)
                confirmed = check_tag(out_b, tag, pad_b) is ConfirmVerdict.ACCEPT
            if confirmed:
                final_a, final_b = out_a, out_b
            else:
                cause = "confirm_reject"
    final_bits = final_a.len if final_a is not None else 0
    keys_equal = final_a is not None and final_a == final_b
    return BlockOutcome(b, q_hat, reconciled, cause, confirmed, keys_equal, final_bits,
                        ledger.total, ledger.novel_total, otp, _digest(final_a),
                        time.perf_counter() - t0, final_a, final_b)


# --- run report ---------------------------------------------------------------

@dataclass
class RunReport:
    scenario: dict
    code_n: int
    code_r: int
    blocks: list[BlockOutcome]
    timing: dict

    @property
    def fer(self) -> float:
        return sum(not b.success for b in self.blocks) / len(self.blocks)

    @property
    def final_bits(self) -> int:
        return sum(b.final_bits for b in self.blocks)

    @property
    def otp_consumed(self) -> int:
        return sum(b.otp_consumed for b in self.blocks)

    @property
    def key_balance(self) -> float:
        """Secret-capacity allowance of the reconciled bits minus pad bits spent."""
        ch = self.scenario["channel"]
        return self.code_n * len(self.blocks) * secret_capacity(ch["e"], ch["d"]) - self.otp_consumed

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "scenario": self.scenario,
            "code": {"n": self.code_n, "r": self.code_r},
            "blocks": len(self.blocks),
            "fer": self.fer,
            "mean_qber_estimate": float(np.mean([b.qber_estimate for b in self.blocks])),
            "ledger": {"total": sum(b.leak_total for b in self.blocks),
                       "novel": sum(b.leak_novel for b in self.blocks)},
            "key_balance": {"bits_in": self.code_n * len(self.blocks), "bits_out": self.final_bits,
                            "otp_consumed": self.otp_consumed,
                            "net": self.final_bits - self.otp_consumed,
                            "capacity_balance": self.key_balance},
            "causes": {c: sum(b.cause == c for b in self.blocks)
                       for c in sorted({b.cause for b in self.blocks})},
            "per_block": [dict(zip(BLOCK_HEADER, b.row())) for b in self.blocks],
        }
        if include_timing:
            out["timing"] = self.timing
        return out

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    def blocks_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BLOCK_HEADER)
        for b in self.blocks:
            w.writerow(b.row())
        return buf.getvalue()


def run_scenario(sc: Scenario, out_dir: Optional[str | Path] = None, decoder=None,
                 workers: int = 1) -> RunReport:
    """Run every block of ``sc``; write report and block table when ``out_dir`` is given."""
    h = sc.load_code()
    t0 = time.perf_counter()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(lambda b: run_block(sc, h, b, decoder), range(sc.blocks)))
    else:
        blocks = [run_block(sc, h, b, decoder) for b in range(sc.blocks)]
    timing = {"total_s": time.perf_counter() - t0, "per_block_s": [b.elapsed_s for b in blocks]}
    report = RunReport(sc.to_dict(), h.n, h.r, blocks, timing)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / sc.outputs.get("report", "report.json")).write_text(report.to_json())
        (out / sc.outputs.get("blocks", "blocks.csv")).write_text(report.blocks_csv())
    return report


# --- tables -------------------------------------------------------------------

DEFAULT_E_LIST = (0.01, 0.02, 0.03, 0.05, 0.08, 0.11)


def emit_curves(out_path: str | Path, e_list=DEFAULT_E_LIST, d_steps: int = 101) -> int:
    d_grid = [0.5 * i / (d_steps - 1) for i in range(d_steps)]
    points = generate_balance_curves(e_list, d_grid)
    Path(out_path).write_text(curves_csv(points))
    return len(points)


def emit_mpc_table(out_path: str | Path, block_sizes=(1000, 10000), bitwidths=(4, 8),
                   iterations: int = 10, seed: int = 0) -> int:
    from .mpc_flip import mpc_bench, mpc_table_csv

    rows = mpc_bench(block_sizes, bitwidths, iterations, seed=seed)
    Path(out_path).write_text(mpc_table_csv(rows))
    return len(rows)
