"""Command-line front end: generate, verify, test, keys, analyze.

Exit status: 0 success, 2 configuration error, 3 malformed input file,
4 verification or randomness test failure, 5 key protocol failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bitio, keyproto
from .analysis import SWEEPS
from .noise import NoiseConfig, four_qubit_state
from .photonics import SourceConfig, generate_stream, polarizer_postselect, rate_summary
from .randtests import run_battery
from .verify import CONTINUITY, PARITY, RolePartition, VerificationError, entanglement_verification, public_verification_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_VERIFY, EXIT_PROTOCOL = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    source: SourceConfig
    noise: NoiseConfig
    roles: RolePartition
    sample_fraction: float
    workers: int = 1

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        try:
            accidental = 0.0 if args.ideal else args.accidental_rate
            source = SourceConfig(
                pump_power=args.pump_mw,
                duration=args.duration_s,
                seed=args.seed,
                accidental_rate=accidental,
                coincidence_window=args.window_ns * 1e-9,
            )
            noise = NoiseConfig(p=args.p, alpha=args.alpha, theta_h=args.theta_hwp, theta_p=args.theta_pol)
            roles = RolePartition.parse(args.roles)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if not 0 < args.sample_fraction < 1:
            raise ConfigError("--sample-fraction must be in (0, 1)")
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return cls(source, noise, roles, args.sample_fraction, args.workers)


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _source_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("source")
    g.add_argument("--pump-mw", type=float, default=1.0, help="pump power in mW")
    g.add_argument("--duration-s", type=float, default=1.0, help="simulated acquisition time")
    g.add_argument("--p", type=float, default=0.0, help="depolarizing probability of the source pair")
    g.add_argument("--alpha", type=float, default=1 / math.sqrt(2), help="|HV> amplitude of the source pair")
    g.add_argument("--theta-hwp", type=float, default=0.0, help="HWP deviation on Bob's photon, radians")
    g.add_argument("--theta-pol", type=float, default=0.0, help="polarizer angle in Bob's H arm, radians")
    g.add_argument("--window-ns", type=float, default=1.0, help="coincidence window")
    acc = g.add_mutually_exclusive_group()
    acc.add_argument("--accidental-rate", type=float, default=None, help="background coincidences per second")
    acc.add_argument("--ideal", action="store_true", help="no background coincidences")


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--sample-fraction", type=float, default=0.1)
    p.add_argument("--roles", default="verify=A,discard=D", help='e.g. "verify=A,discard=D"')


def _stream_for(cfg: RunConfig):
    state = four_qubit_state(cfg.noise)
    stream = generate_stream(cfg.source, state, workers=cfg.workers)
    if cfg.noise.theta_p:
        stream = polarizer_postselect(stream, cfg.noise.theta_p, cfg.source.seed)
    return stream


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_args(args)
    stream = _stream_for(cfg)
    bitio.write_records(args.out, stream)
    report = rate_summary(stream, cfg.source.duration).as_dict()
    report["output"] = str(args.out)
    _dump(report, args.report)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = RunConfig.from_args(args)
    stream = bitio.read_records(args.input)
    mode = CONTINUITY if args.mode == "continuity" else PARITY
    rep, surviving = entanglement_verification(stream, cfg.sample_fraction, args.threshold, cfg.source.seed, mode)
    pub = public_verification_pipeline(surviving, cfg.roles, run_battery=not args.no_battery)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bitio.write_records(out / "surviving.pvq4", surviving)
    bitio.write_bits(out / "public.pvq1", pub.public_bits)
    k1, k2 = pub.roles.keep_roles
    bitio.write_bits(out / f"secure_{k1}.pvq1", pub.secure_bits[0])
    bitio.write_bits(out / f"secure_{k2}.pvq1", pub.secure_bits[1])
    bitio.write_bits(out / "merged.pvq1", pub.merged_secure_bits)
    report = {"verification": rep.as_dict(), "public": pub.as_dict(), "n_input_records": len(stream)}
    _dump(report, str(out / "report.json"))
    _dump(report, None)
    ok = rep.passed and (pub.battery is None or pub.battery.all_pass)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_test(args: argparse.Namespace) -> int:
    bits = bitio.read_bits(args.input)
    report = run_battery(bits)
    _dump(report.as_dict(), args.out)
    return EXIT_OK if report.all_pass else EXIT_VERIFY


def _bundle(path: str, offset: int) -> keyproto.KeyBundle:
    bundle = keyproto.derive_keys(bitio.read_records(path))
    if not 0 <= offset <= len(bundle):
        raise ConfigError(f"--key-offset must be in [0, {len(bundle)}]")
    bundle.consumed = offset
    return bundle


def cmd_keys(args: argparse.Namespace) -> int:
    if args.action == "encrypt":
        bundle = _bundle(args.records, args.key_offset)
        data = Path(args.input).read_bytes()
        start = bundle.consumed
        blob = keyproto.encrypt_file(data, bundle, args.bit_length)
        Path(args.out).write_bytes(blob)
        _dump({"key_offset": start, "next_key_offset": bundle.consumed, "key_records_used": bundle.consumed - start,
               "total_key_bits": 4 * (bundle.consumed - start)}, args.report)
        return EXIT_OK
    if args.action == "decrypt":
        bundle = _bundle(args.records, args.key_offset)
        plain = keyproto.decrypt_file(Path(args.input).read_bytes(), bundle.bob_private_1, bundle.bob_private_2,
                                      args.key_offset)
        Path(args.out).write_bytes(plain)
        return EXIT_OK
    # session
    cfg = RunConfig.from_args(args)
    state = four_qubit_state(cfg.noise)
    aw = args.alice_window_ns * 1e-9 if args.alice_window_ns else None
    bw = args.bob_window_ns * 1e-9 if args.bob_window_ns else None
    alice, bob = keyproto.make_endpoints(cfg.source, state, aw, bw)
    message = keyproto.bytes_to_bits(Path(args.input).read_bytes())
    t = keyproto.session_run(alice, bob, keyproto.Channel(), message, sender=args.sender)
    summary = {
        "ok": t.ok,
        "reason": t.reason,
        "sender": args.sender,
        "frames": [{"from": who, "type": kind, "bytes": len(body)} for who, kind, body in t.decoded()],
    }
    if t.ok:
        Path(args.out).write_bytes(keyproto.bits_to_bytes(t.message))
        summary["message_bits"] = int(t.message.size)
    _dump(summary, args.report)
    return EXIT_OK if t.ok else EXIT_PROTOCOL


def parse_grid(text: str | None) -> list[float] | None:
    """``"0,0.1,0.2"`` or ``"start:stop:count"`` (inclusive linspace)."""
    if text is None:
        return None
    try:
        if ":" in text:
            a, b, n = text.split(":")
            return [float(x) for x in np.linspace(float(a), float(b), int(n))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"bad --grid {text!r}") from e


def cmd_analyze(args: argparse.Namespace) -> int:
    fn = SWEEPS[args.kind]
    kwargs = {"workers": args.workers}
    grid = parse_grid(args.grid)
    if grid is not None:
        kwargs[{"depolarizing": "p_grid"}.get(args.kind, "theta_grid")] = grid
    if args.kind != "depolarizing":
        kwargs["seed"] = args.seed
    try:
        table = fn(**kwargs)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    text = table.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pvqrng", description="Publicly verifiable QRNG simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a record stream")
    _source_flags(p)
    _common_flags(p)
    p.add_argument("--out", required=True, help="record file to write")
    p.add_argument("--report", help="JSON rate report path (default stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("verify", help="sampled verification and public/secure split")
    p.add_argument("input")
    _common_flags(p)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--mode", choices=("parity", "continuity"), default="parity")
    p.add_argument("--no-battery", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_verify, ideal=False, accidental_rate=None, pump_mw=1.0, duration_s=1.0, p=0.0,
                   alpha=1 / math.sqrt(2), theta_hwp=0.0, theta_pol=0.0, window_ns=1.0)

    p = sub.add_parser("test", help="run the randomness battery on a bit-string file")
    p.add_argument("input")
    p.add_argument("--out", help="JSON report path (default stdout)")
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("keys", help="one-time-pad encryption with stream keys")
    ksub = p.add_subparsers(dest="action", required=True)
    for action in ("encrypt", "decrypt"):
        k = ksub.add_parser(action)
        k.add_argument("--records", required=True, help="record file supplying the keys")
        k.add_argument("--in", dest="input", required=True)
        k.add_argument("--out", required=True)
        k.add_argument("--key-offset", type=int, default=0, help="first unused key record")
        k.add_argument("--report")
        if action == "encrypt":
            k.add_argument("--bit-length", type=int, default=None, help="true message length in bits")
        k.set_defaults(func=cmd_keys)
    k = ksub.add_parser("session", help="simulate both parties and transfer a file")
    _source_flags(k)
    _common_flags(k)
    k.add_argument("--in", dest="input", required=True)
    k.add_argument("--out", required=True)
    k.add_argument("--sender", choices=("alice", "bob"), default="alice")
    k.add_argument("--alice-window-ns", type=float, default=None)
    k.add_argument("--bob-window-ns", type=float, default=None)
    k.add_argument("--report")
    k.set_defaults(func=cmd_keys)

    p = sub.add_parser("analyze", help="CHSH/visibility/rate sweeps as CSV")
    p.add_argument("kind", choices=sorted(SWEEPS))
    p.add_argument("--grid", help='"a,b,c" or "start:stop:count"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, VerificationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (bitio.FormatError, keyproto.FormatError) as e:
        print(f"format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except (keyproto.KeyMaterialError, keyproto.ProtocolError) as e:
        print(f"protocol error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
