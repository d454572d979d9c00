"""Command line front end.

Input files hold raw bytes when the alphabet has 256 letters and one symbol
per byte otherwise.  With --report every command prints a single JSON line
instead of the human-readable summary.

Exit codes: 0 success, 1 negative test outcome (classify/ancestor reject),
2 I/O error, 3 infeasible parameters, 4 corrupt stream or signature.
"""

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from . import __version__
from .adversarial import AdversarialParams, generate, verify_entropy_bounds
from .classifier import DEFAULT_EPSILON, Signature, build_signature, common_ancestor_test
from .codec import (CodecConfig, CodecLength, DEFAULT_DELTA, check_rate_bound,
                    decode, encode)
from .errors import CTZError, DecodeError, FormatError
from .stats import EmpiricalModel, as_symbols, block_entropy, block_entropy_full, default_depth
from .tree import model_tree

EXIT_OK, EXIT_REJECT, EXIT_IO, EXIT_PARAM, EXIT_CORRUPT = 0, 1, 2, 3, 4


class _IOFailure(Exception):
    pass


def _read(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise _IOFailure(str(e)) from e


def _write(path, data: bytes):
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise _IOFailure(str(e)) from e


def read_symbols(path, A: int) -> np.ndarray:
    return as_symbols(np.frombuffer(_read(path), np.uint8), A)


def _emit(args, report: dict, lines):
    if args.report:
        print(json.dumps(report, sort_keys=True, default=str))
    else:
        for line in lines:
            print(line)


def cmd_compress(args) -> int:
    x = read_symbols(args.input, args.alphabet)
    cfg = CodecConfig(args.alphabet, args.block, Fraction(args.delta), args.depth)
    data, blocks = encode(x, cfg, with_report=True)
    _write(args.output, data)
    n = max(1, x.shape[0])
    bpl = 8 * len(data) / n
    rows = [{"L1": b.L1, "L2": b.L2, "L3": b.L3, "hu": b.hu} for b in blocks]
    hu = float(np.mean([b.hu for b in blocks])) if blocks else 0.0
    report = {"command": "compress", "symbols": int(x.shape[0]), "bytes": len(data),
              "bits_per_letter": bpl, "mean_block_hu": hu, "blocks": rows}
    lines = [f"{x.shape[0]} symbols -> {len(data)} bytes, {bpl:.4f} bits/letter "
             f"(mean block H_u {hu:.4f})"]
    if args.verbose:
        lines += [f"  block {j}: L1={r['L1']} L2={r['L2']} L3={r['L3']} hu={r['hu']:.4f}"
                  for j, r in enumerate(rows)]
    _emit(args, report, lines)
    return EXIT_OK


def cmd_decompress(args) -> int:
    x = decode(_read(args.input))
    _write(args.output, x.tobytes())
    _emit(args, {"command": "decompress", "symbols": int(x.shape[0])},
          [f"{x.shape[0]} symbols written"])
    return EXIT_OK


def cmd_stats(args) -> int:
    x = read_symbols(args.input, args.alphabet)
    N = args.block
    t = default_depth(N) if args.depth is None else args.depth
    model = EmpiricalModel(x, N, args.alphabet, t)
    if model.M < 2:
        raise CTZError(f"stats need at least 2N={2 * N} symbols")
    K = Fraction(args.floor) if args.floor else Fraction(N)
    ells = list(range(1, min(8, t) + 1))
    hl = {ell: block_entropy(model, ell) for ell in ells}
    hN = block_entropy_full(model)
    hu = float(model_tree(model, K).hu)
    report = {"command": "stats", "N": N, "M": model.M, "t": t, "K": str(K),
              "block_entropy": {str(k): v for k, v in hl.items()},
              "block_entropy_N": hN, "hu": hu}
    lines = [f"N={N} M={model.M} t={t} K={K}"]
    lines += [f"H_MN({ell},N) = {v:.6f}" for ell, v in hl.items()]
    lines += [f"H_MN(N)     = {hN:.6f}", f"H_u(N,K,M)  = {hu:.6f}"]
    if not args.no_rate_check:
        L = CodecLength(N, args.alphabet, Fraction(args.delta), args.codec_depth)
        rep = check_rate_bound(model.x, N, model.M, L)
        report["rate_margin"] = rep.margin
        report["rho"] = rep.rho
        lines.append(f"rho_L = {rep.rho:.6f}, margin over H_MN(N) = {rep.margin:.6f}")
    _emit(args, report, lines)
    return EXIT_OK


def cmd_train(args) -> int:
    x = read_symbols(args.input, args.alphabet)
    sig = build_signature(x, args.block, Fraction(args.epsilon), args.alphabet, args.depth)
    sig.save(args.output)
    report = {"command": "train", "N": sig.N, "t": sig.t, "contexts": len(sig.contexts),
              "h_min": sig.h_min, "eps_prime": sig.eps_prime,
              "training_acceptance": sig.train_acceptance}
    _emit(args, report, [f"signature: {len(sig.contexts)} contexts, H_min={sig.h_min:.6f}, "
                         f"eps'={sig.eps_prime:.6f}, training acceptance "
                         f"{sig.train_acceptance:.4f}"])
    return EXIT_OK


def cmd_classify(args) -> int:
    sig = Signature.from_bytes(_read(args.signature))
    x = read_symbols(args.tests, sig.A)
    n = x.shape[0] // sig.N
    if n == 0 or x.shape[0] % sig.N:
        raise CTZError(f"test file length {x.shape[0]} is not a positive multiple of N={sig.N}")
    d = sig.deltas(x, np.arange(n) * sig.N)
    acc = np.ones(n, bool) if sig.escape else d <= sig.eps_prime
    report = {"command": "classify", "tests": n, "accepted": int(acc.sum()),
              "delta": [float(v) for v in d], "accept": [bool(v) for v in acc]}
    lines = [f"{k}\t{v:.6f}\t{'accept' if a else 'reject'}" for k, (v, a) in enumerate(zip(d, acc))]
    lines.append(f"accepted {int(acc.sum())}/{n}")
    _emit(args, report, lines)
    return EXIT_OK if acc.all() else EXIT_REJECT


def cmd_ancestor(args) -> int:
    y = read_symbols(args.first, args.alphabet)
    z = read_symbols(args.second, args.alphabet)
    res = common_ancestor_test(y, z, Fraction(args.epsilon), args.alphabet, args.depth)
    witness = None if res.witness is None else list(res.witness)
    report = {"command": "ancestor", "accept": res.accept, "witness": witness,
              "divergence": res.divergence, "contexts": res.tested}
    verdict = "common ancestor feasible" if res.accept else f"rejected at context {witness}"
    _emit(args, report, [f"{verdict}; max min-max divergence {res.divergence:.6f} bits "
                         f"over {res.tested} contexts"])
    return EXIT_OK if res.accept else EXIT_REJECT


def cmd_genadv(args) -> int:
    p = AdversarialParams(args.ell, Fraction(args.h), args.seed, args.repeats, args.alphabet)
    x = generate(p)
    _write(args.output, x.tobytes())
    report = {"command": "genadv", "N": p.N, "segments": p.T, "symbols": int(x.shape[0])}
    lines = [f"N={p.N}, {p.T} segments, {x.shape[0]} symbols"]
    if p.M >= 2:
        rep = verify_entropy_bounds(x, p)
        report.update(rep.as_dict())
        lines.append(f"H_u={rep.hu:.6f} <= H_MN(l,N)={rep.h_ell:.6f} <= log2(N)/l="
                     f"{rep.log_bound:.6f} <= 2h={rep.two_h:.6f}: "
                     f"{'ok' if rep.passed else 'VIOLATED'}")
    _emit(args, report, lines)
    return EXIT_OK


def _fraction_arg(text):
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    def common(A=256):
        # a fresh parent per command: parents share their action objects
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--alphabet", "-A", type=int, default=A)
        c.add_argument("--report", action="store_true", help="one JSON line on stdout")
        return c

    p = argparse.ArgumentParser(prog="ctz", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"ctz {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compress", parents=[common()])
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--block", "-N", type=int, default=1024)
    c.add_argument("--delta", type=_fraction_arg, default=DEFAULT_DELTA)
    c.add_argument("--depth", type=int, default=None)
    c.add_argument("--verbose", "-v", action="store_true")
    c.set_defaults(func=cmd_compress)

    c = sub.add_parser("decompress", parents=[common()])
    c.add_argument("input")
    c.add_argument("output")
    c.set_defaults(func=cmd_decompress)

    c = sub.add_parser("stats", parents=[common()])
    c.add_argument("input")
    c.add_argument("--block", "-N", type=int, required=True)
    c.add_argument("--depth", type=int, default=None)
    c.add_argument("--floor", type=_fraction_arg, default=None, help="K; default N")
    c.add_argument("--delta", type=_fraction_arg, default=DEFAULT_DELTA)
    c.add_argument("--codec-depth", type=int, default=None)
    c.add_argument("--no-rate-check", action="store_true")
    c.set_defaults(func=cmd_stats)

    c = sub.add_parser("train", parents=[common()])
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--block", "-N", type=int, required=True)
    c.add_argument("--epsilon", type=_fraction_arg, default=DEFAULT_EPSILON)
    c.add_argument("--depth", type=int, default=None)
    c.set_defaults(func=cmd_train)

    c = sub.add_parser("classify", parents=[common()])
    c.add_argument("signature")
    c.add_argument("tests")
    c.set_defaults(func=cmd_classify)

    c = sub.add_parser("ancestor", parents=[common()])
    c.add_argument("first")
    c.add_argument("second")
    c.add_argument("--epsilon", type=_fraction_arg, default=DEFAULT_EPSILON)
    c.add_argument("--depth", type=int, default=None)
    c.set_defaults(func=cmd_ancestor)

    c = sub.add_parser("genadv", parents=[common(2)])
    c.add_argument("output")
    c.add_argument("--ell", type=int, default=8)
    c.add_argument("--h", type=_fraction_arg, default=Fraction(1, 2))
    c.add_argument("--repeats", "-M", type=int, default=16)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_genadv)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _IOFailure as e:
        print(f"ctz: {e}", file=sys.stderr)
        return EXIT_IO
    except (DecodeError, FormatError) as e:
        print(f"ctz: corrupt input: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except CTZError as e:
        print(f"ctz: {e}", file=sys.stderr)
        return EXIT_PARAM


if __name__ == "__main__":
    sys.exit(main())
