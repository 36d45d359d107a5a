"""Command-line entry point: ``qkdoffload {run,serve,curves,mpc-bench,attack}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bitlinalg import BitBlock


def _cmd_run(args) -> int:
    from .harness import load_scenario, run_scenario

    sc = load_scenario(args.scenario).with_overrides(seed=args.seed, blocks=args.blocks,
                                                     offload_mode=args.mode)
    report = run_scenario(sc, args.out, workers=args.workers)
    d = report.to_dict()
    print(json.dumps({"fer": d["fer"], "blocks": d["blocks"], "key_balance": d["key_balance"],
                      "causes": d["causes"], "out": str(args.out)}, indent=2))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    role = args.mode or "all"
    server = serve(role, args.bind, args.codes)
    logging.getLogger(__name__).info("event=listening role=%s address=%s:%d", role,
                                     server.server_address[0], server.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_curves(args) -> int:
    from .harness import emit_curves

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = emit_curves(out / "curves.csv", d_steps=args.d_steps)
    print(f"wrote {rows} rows to {out / 'curves.csv'}")
    return 0


def _cmd_mpc_bench(args) -> int:
    from .harness import emit_mpc_table

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = tuple(int(s) for s in args.block_sizes.split(","))
    emit_mpc_table(out / "mpc_table.csv", sizes, seed=args.seed or 0)
    print((out / "mpc_table.csv").read_text(), end="")
    return 0


def _cmd_attack(args) -> int:
    from .channel import ChannelParams
    from .codes import load_code, load_fixture
    from .ldpc import DecoderConfig
    from .rem_ir import eve_dr_invariance, eve_rr_attack

    h = load_code(args.code) if args.code else load_fixture("ldpc_1000_3_6.alist")
    seed = args.seed or 0
    p = ChannelParams(args.e, args.d, seed)
    cfg = DecoderConfig(qber_prior=max(args.e, 1e-3))
    modes = [args.mode] if args.mode else ["rr", "rr_encrypted", "dr", "dr_invariance"]
    result = {}
    for mode in modes:
        if mode == "dr_invariance":
            rng = np.random.default_rng(seed)
            e_vec = BitBlock.from_bits(rng.random(h.n) < args.e)
            result[mode] = eve_dr_invariance(e_vec, h, args.trials, cfg, rng).__dict__
        else:
            result[mode] = eve_rr_attack(p, h, cfg, args.trials, mode).to_dict()
    print(json.dumps(result, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qkdoffload", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a scenario end to end")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", default="out")
    run.add_argument("--seed", type=int)
    run.add_argument("--blocks", type=int)
    run.add_argument("--mode", choices=["local", "rem_ir", "rem_ir_variant", "rr_encrypted"])
    run.add_argument("--workers", type=int, default=1)
    run.set_defaults(func=_cmd_run)

    srv = sub.add_parser("serve", help="serve decoder and PA requests over TCP")
    srv.add_argument("--bind", default="127.0.0.1:7400")
    srv.add_argument("--codes", help="directory with *.alist files or codes.json")
    srv.add_argument("--mode", choices=["decoder", "pa_server", "all"], help="role to serve")
    srv.set_defaults(func=_cmd_serve)

    cur = sub.add_parser("curves", help="write curves.csv (secret capacity vs d)")
    cur.add_argument("--out", default="out")
    cur.add_argument("--d-steps", type=int, default=101)
    cur.set_defaults(func=_cmd_curves)

    mpc = sub.add_parser("mpc-bench", help="write mpc_table.csv")
    mpc.add_argument("--out", default="out")
    mpc.add_argument("--seed", type=int)
    mpc.add_argument("--block-sizes", default="1000,10000")
    mpc.set_defaults(func=_cmd_mpc_bench)

    att = sub.add_parser("attack", help="reverse-reconciliation attack and invariance demos")
    att.add_argument("--mode", choices=["rr", "rr_encrypted", "dr", "dr_invariance"])
    att.add_argument("--code", help="alist file (default: bundled n=1000 code)")
    att.add_argument("--e", type=float, default=0.03)
    att.add_argument("--d", type=float, default=0.01)
    att.add_argument("--trials", type=int, default=100)
    att.add_argument("--seed", type=int)
    att.set_defaults(func=_cmd_attack)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.verb == "serve" else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
