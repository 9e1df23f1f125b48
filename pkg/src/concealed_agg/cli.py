"""Command-line entry points: run a scenario, scaling sweeps, selftest.

Scenario files are line-oriented text.  Keywords (one per line, `#` starts a
comment):

    nodes <n>                      sensor count (required with a generator)
    edge <a> <b>                   explicit link; repeatable; 0 is the station
    generator <family>             recursive | geometric | path | star
    seed <int>                     scenario seed (CONCEALED_AGG_SEED overrides)
    rounds <int>
    function sum|mean
    domain <low> <high> <scale>    fixed-point sensor domain
    trigger <round>                round at which compromised behavior starts
    compromise <id> <kind> [args]  forge_children <delta> [dual]
                                   forge_own <delta_raw>
                                   noncommit [delta]
                                   replay <source_round>
                                   drop_child <child>
    force-attest
    audit-prob <float>

Exit codes: 0 all rounds reached a verdict, 1 runtime protocol failure,
2 invalid scenario (the diagnostic names the offending line).
"""

from __future__ import annotations

import argparse
import datetime
import os
import random
import sys
from pathlib import Path

from . import crypto
from .adversary import KINDS, CompromiseSpec
from .basestation import format_report_line
from .errors import ProtocolError, ScenarioInvalid
from .simulator import GENERATORS, Metrics, Scenario, World, measure_scaling

ENV_SEED = "CONCEALED_AGG_SEED"


# === Scenario files =========================================================


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    n = None
    edges: list[tuple[int, int]] = []
    generator = None
    fields: dict = {}
    compromises: list[CompromiseSpec] = []

    def fail(lineno: int, msg: str):
        raise ScenarioInvalid(f"{source}:{lineno}: {msg}")

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "nodes" and len(args) == 1:
                n = int(args[0])
            elif key == "edge" and len(args) == 2:
                if generator is not None:
                    fail(lineno, "edge lines cannot be mixed with a generator")
                if n is None:
                    fail(lineno, "edge before nodes line")
                a, b = int(args[0]), int(args[1])
                if not (0 <= a <= n and 0 <= b <= n) or a == b:
                    fail(lineno, f"edge {a} {b} out of range for {n} sensors")
                edges.append((a, b))
            elif key == "generator" and len(args) == 1:
                if edges:
                    fail(lineno, "generator cannot be mixed with edge lines")
                if args[0] not in GENERATORS:
                    fail(lineno, f"unknown generator {args[0]!r}")
                generator = args[0]
            elif key == "seed" and len(args) == 1:
                fields["seed"] = int(args[0])
            elif key == "rounds" and len(args) == 1:
                fields["rounds"] = int(args[0])
            elif key == "function" and len(args) == 1:
                fields["function"] = args[0]
            elif key == "domain" and len(args) == 3:
                fields["domain"] = (float(args[0]), float(args[1]), int(args[2]))
            elif key == "trigger" and len(args) == 1:
                fields["trigger_round"] = int(args[0])
            elif key == "compromise" and len(args) >= 2:
                nid, kind = int(args[0]), args[1]
                if kind not in KINDS:
                    fail(lineno, f"unknown behavior {kind!r}")
                extra = []
                for a in args[2:]:
                    extra.append(a if a == "dual" else int(a))
                if extra and extra[-1] == "dual":
                    extra[-1] = True
                compromises.append(CompromiseSpec(nid, kind, tuple(extra)))
            elif key == "force-attest" and not args:
                fields["force_attest"] = True
            elif key == "audit-prob" and len(args) == 1:
                fields["audit_prob"] = float(args[0])
            else:
                fail(lineno, f"unrecognized line {raw.strip()!r}")
        except ScenarioInvalid:
            raise
        except ValueError as exc:
            fail(lineno, f"bad value in {raw.strip()!r} ({exc})")
    return Scenario(
        n=n,
        edges=tuple(edges) if edges else None,
        generator=generator,
        compromises=tuple(compromises),
        source=source,
        **fields,
    )


def load_scenario(path: str) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioInvalid(f"{path}: {exc}") from exc
    return parse_scenario(text, source=path)


# === Output writers =========================================================


def _stamp() -> str:
    return "# generated " + datetime.datetime.now(datetime.timezone.utc).isoformat() + "\n"


def write_report(path: Path, results, timestamp: bool) -> None:
    head = _stamp() if timestamp else ""
    path.write_text(head + "".join(format_report_line(r) + "\n" for r in results), encoding="utf-8")


def write_metrics(path: Path, metrics: Metrics, timestamp: bool) -> None:
    head = _stamp() if timestamp else ""
    path.write_text(head + metrics.to_csv(), encoding="utf-8")


# === Commands ===============================================================


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    from dataclasses import replace

    updates = {}
    if args.topology:
        from .topology import load_topology

        try:
            n, edges = load_topology(args.topology)
        except OSError as exc:
            raise ScenarioInvalid(f"{args.topology}: {exc}") from exc
        except ValueError as exc:
            raise ScenarioInvalid(str(exc)) from exc
        updates.update(n=n, edges=tuple(edges), generator=None)
    if args.seed is not None:
        updates["seed"] = args.seed
    if os.environ.get(ENV_SEED):
        try:
            updates["seed"] = int(os.environ[ENV_SEED])
        except ValueError as exc:
            raise ScenarioInvalid(f"{ENV_SEED}: {exc}") from exc
    if args.rounds is not None:
        updates["rounds"] = args.rounds
    if args.function is not None:
        updates["function"] = args.function
    if args.force_attest:
        updates["force_attest"] = True
    if args.audit_prob is not None:
        updates["audit_prob"] = args.audit_prob
    return replace(scenario, **updates) if updates else scenario


def cmd_run(args) -> int:
    try:
        if args.scenario:
            scenario = load_scenario(args.scenario)
        elif args.topology:
            scenario = Scenario(source=args.topology)
        else:
            print("run: need a scenario file or --topology", file=sys.stderr)
            return 2
        scenario = _apply_overrides(scenario, args)
        world = World(scenario)
        results = world.run()
    except ScenarioInvalid as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    timestamp = not args.no_timestamp
    write_report(out / "report.txt", results, timestamp)
    write_metrics(out / "metrics.csv", world.metrics, timestamp)
    for line in (format_report_line(r) for r in results):
        print(line)
    verdicts = {"passed", "attested", "rejected"}
    return 0 if all(r.integrity in verdicts for r in results) else 1


def _parse_sizes(raw: list[str]) -> tuple[int, ...]:
    sizes: list[int] = []
    for chunk in raw:
        for piece in chunk.split(","):
            piece = piece.strip()
            if piece:
                sizes.append(int(piece))
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError("sizes must be positive integers")
    return tuple(sizes)


def cmd_scaling(args, parser) -> int:
    try:
        sizes = _parse_sizes(args.sizes)
    except ValueError as exc:
        parser.error(str(exc))  # exits 2
    rows = measure_scaling(sizes, args.trials, seed=args.seed or 0, generator=args.generator)
    lines = ["n,trials,mean_probes,max_probes,mean_depth,mean_messages"]
    for r in rows:
        lines.append(
            f"{r.n},{r.trials},{r.mean_probes:.4f},{r.max_probes},{r.mean_depth:.4f},{r.mean_messages:.1f}"
        )
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        head = _stamp() if not args.no_timestamp else ""
        (out / "scaling.csv").write_text(head + table, encoding="utf-8")
    return 0


def _property_homomorphism(rng: random.Random) -> str | None:
    codec = crypto.FixedPointCodec()
    for _ in range(200):
        n = rng.randint(2, 40)
        readings = [rng.randint(0, codec.max_raw) for _ in range(n)]
        seeds = [rng.getrandbits(64) for _ in range(n)]
        diffused = [crypto.diffuse(s, m) for s, m in zip(seeds, readings)]
        total = 0
        for d in diffused:
            total = crypto.add_mod(total, d)
        recovered = crypto.undiffuse(total, sum(seeds) & crypto.MASK)
        if recovered != sum(readings) & crypto.MASK:
            return f"sum over {n} diffused readings did not revert"
    return None


def _property_ipet(rng: random.Random) -> str | None:
    for _ in range(50):
        n = rng.randint(2, 40)
        readings = [rng.getrandbits(16) for _ in range(n)]
        s1 = [rng.getrandbits(64) for _ in range(n)]
        s2 = [rng.getrandbits(64) for _ in range(n)]
        p1 = sum(crypto.diffuse(a, m) for a, m in zip(s1, readings)) & crypto.MASK
        p2 = sum(crypto.diffuse(a, m) for a, m in zip(s2, readings)) & crypto.MASK
        r1 = crypto.undiffuse(p1, sum(s1) & crypto.MASK)
        r2 = crypto.undiffuse(p2, sum(s2) & crypto.MASK)
        if r1 != r2:
            return "honest pair compared unequal"
    for _ in range(200):
        n = rng.randint(2, 40)
        readings = [rng.getrandbits(16) for _ in range(n)]
        s1 = [rng.getrandbits(64) for _ in range(n)]
        s2 = [rng.getrandbits(64) for _ in range(n)]
        delta = rng.getrandbits(64) | 1
        p1 = (sum(crypto.diffuse(a, m) for a, m in zip(s1, readings)) + delta) & crypto.MASK
        p2 = sum(crypto.diffuse(a, m) for a, m in zip(s2, readings)) & crypto.MASK
        r1 = crypto.undiffuse(p1, sum(s1) & crypto.MASK)
        r2 = crypto.undiffuse(p2, sum(s2) & crypto.MASK)
        if r1 == r2:
            return f"single-component forgery delta={delta} went undetected"
    return None


def _property_mac_group(rng: random.Random) -> str | None:
    for _ in range(200):
        key = rng.randbytes(crypto.KEY_LEN)
        tags = [crypto.mac_pair(key, rng.getrandbits(64), rng.getrandbits(64)) for _ in range(4)]
        a, b, c, d = tags
        if crypto.xor_tags(a, b) != crypto.xor_tags(b, a):
            return "tag combination is not commutative"
        if crypto.xor_tags(crypto.xor_tags(a, b), c) != crypto.xor_tags(a, crypto.xor_tags(b, c)):
            return "tag combination is not associative"
        if crypto.xor_tags(a, crypto.ZERO_TAG) != a:
            return "zero tag is not the identity"
        if crypto.xor_tags(a, a) != crypto.ZERO_TAG:
            return "tags are not self-inverse"
        perm = [d, b, a]
        if crypto.combine_macs(c, perm) != crypto.combine_macs(a, [b, c, d]):
            return "combined MAC depends on combination order"
    return None


SELFTEST_PROPERTIES = (
    ("homomorphism", _property_homomorphism),
    ("ipet", _property_ipet),
    ("mac-group", _property_mac_group),
)


def cmd_selftest(args) -> int:
    rng = random.Random(args.seed if args.seed is not None else 0)
    for name, prop in SELFTEST_PROPERTIES:
        failure = prop(rng)
        if failure is not None:
            print(f"selftest: FAIL {name}: {failure}", file=sys.stderr)
            return 1
        print(f"selftest: {name} ok")
    return 0


# === Entry point ============================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="concealed-agg",
        description="Concealed hop-by-hop aggregation: scenario runner and experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario file and write report/metrics")
    p_run.add_argument("scenario", nargs="?", help="scenario file path")
    p_run.add_argument("--topology", help="topology file (nodes/edge lines) overriding the scenario")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--rounds", type=int, default=None)
    p_run.add_argument("--function", choices=("sum", "mean"), default=None)
    p_run.add_argument("--force-attest", action="store_true")
    p_run.add_argument("--audit-prob", type=float, default=None)
    p_run.add_argument("--out", default="out", help="output directory (default: out)")
    p_run.add_argument("--no-timestamp", action="store_true", help="omit generation timestamps")

    p_sc = sub.add_parser("scaling", help="attestation cost versus network size")
    p_sc.add_argument("--sizes", nargs="+", required=True, help="comma or space separated sizes")
    p_sc.add_argument("--trials", type=int, default=100)
    p_sc.add_argument("--seed", type=int, default=None)
    p_sc.add_argument("--generator", choices=GENERATORS, default="recursive")
    p_sc.add_argument("--out", default=None)
    p_sc.add_argument("--no-timestamp", action="store_true")

    p_st = sub.add_parser("selftest", help="fast property checks of the crypto core")
    p_st.add_argument("--seed", type=int, default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "scaling":
        return cmd_scaling(args, parser)
    return cmd_selftest(args)


if __name__ == "__main__":
    sys.exit(main())
