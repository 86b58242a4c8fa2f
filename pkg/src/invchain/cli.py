"""``invchain`` command line.

Machine-readable output (JSON, CSV) goes to stdout, everything meant for
people goes to stderr. Exit codes are stable:

    insert   0 anchored, 3 token rejected, 4 chain unreachable (pending-anchor)
    verify   0 Verified, 1 Mismatch or MissingAnchor, 2 Pending, 4 chain unreachable
    node run 5 corrupt store, 6 address in use
    any      2 usage or config error
"""
from __future__ import annotations

import argparse
import asyncio
import contextlib
import errno
import hashlib
import json
import logging
import signal
import sys
from importlib import resources
from pathlib import Path

from .blockstore import BlockStoreError, CorruptBlock, NotFound
from .chain import Chain, ChainError, policy_from_dict
from .chainsvc import ChainService, RemoteChain, ensure_contract
from .config import ConfigError, NodeConfig, parse_hostport, token_from_env
from .nodestate import NodeState
from .pipeline import (AnchorAuthError, AnchorRecord, ChainUnavailable, Status,
                       canonical_snapshot_bytes, insert_inventory, parse_snapshot, retry_anchor,
                       verify_inventory)
from .rfidsim import (FlightPath, ReaderParams, TagSpec, UnknownTag, curve_csv, simulate_flight,
                      snapshot_from_reads, ssi_trace, trace_csv)

log = logging.getLogger("invchain")

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_AUTH, EXIT_CHAIN_DOWN = 0, 1, 2, 3, 4
EXIT_CORRUPT, EXIT_PORT_IN_USE = 5, 6
VERIFY_EXIT = {Status.VERIFIED: 0, Status.MISMATCH: 1, Status.MISSING_ANCHOR: 1, Status.PENDING: 2}


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _read_json(path: str | Path, what: str):
    p = Path(path)
    try:
        text = sys.stdin.read() if str(path) == "-" else p.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _bundled(name: str) -> Path:
    return Path(str(resources.files("invchain").joinpath(f"data/{name}")))


# chain access -----------------------------------------------------------

def _file_chain(cfg: NodeConfig, token: str) -> Chain:
    path = cfg.chain_path()
    digest = cfg.chain.credential_sha256
    if digest is None and not (path.exists() and path.stat().st_size):
        if not token:
            raise UsageError("new chain journal needs chain.credential_sha256 or INVCHAIN_TOKEN")
        digest = hashlib.sha256(token.encode()).hexdigest()
    return Chain.open(path, policy=policy_from_dict(cfg.chain.policy), seed=cfg.chain.seed,
                      credential_sha256=digest)


def _chain_handle(cfg: NodeConfig, token: str):
    ep = cfg.chain.endpoint
    if ep.startswith("file:"):
        return _file_chain(cfg, token)
    return RemoteChain(*parse_hostport(ep[len("tcp://"):]))


def _contract(cfg: NodeConfig, chain) -> str:
    if cfg.chain.contract:
        return cfg.chain.contract
    if isinstance(chain, Chain):
        return ensure_contract(chain)
    return chain.contract()


def _wait(chain, tx_hash: str, timeout_s: float) -> None:
    if isinstance(chain, Chain):
        chain.wait_for(tx_hash)
    else:
        chain.wait_for(tx_hash, timeout_s=timeout_s)


# commands ----------------------------------------------------------------

def cmd_flight(args) -> int:
    layout_d = _read_json(args.layout or _bundled("layout_13.json"), "layout")
    path_d = _read_json(args.path or _bundled("path_circular.json"), "flight path")
    params_d = _read_json(args.params or _bundled("reader_params.json"), "reader params")
    try:
        layout = [TagSpec.from_dict(t) for t in (layout_d["tags"] if isinstance(layout_d, dict) else layout_d)]
        if not layout:
            raise ValueError("layout has no tags")
        if len({t.tag_id for t in layout}) != len(layout):
            raise ValueError("tag ids must be unique within a layout")
        path = FlightPath.from_dict(path_d)
        params = ReaderParams.from_dict(params_d)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid flight input: {exc}") from exc
    reads = simulate_flight(layout, path, params, args.seed)
    snap = snapshot_from_reads(reads, path.takeoff, len(layout))
    sys.stdout.write(canonical_snapshot_bytes(snap).decode("utf-8") + "\n")
    if args.curve:
        Path(args.curve).write_text(curve_csv(snap))
    if args.trace:
        try:
            tr = trace_csv(ssi_trace(reads, args.trace))
        except UnknownTag:
            raise UsageError(f"tag {args.trace} was never read") from None
        Path(args.trace_csv or f"trace_{args.trace}.csv").write_text(tr)
    _say(f"{len(snap.rows)}/{len(layout)} tags read; last at {snap.rows[-1].timestamp if snap.rows else '-'}")
    return EXIT_OK


def _open_inventory(cfg: NodeConfig, read_only: bool = False) -> tuple[NodeState, object]:
    cfg.ensure_data_dir()
    state = NodeState(cfg.data_dir, cfg.identity_file)
    inv = cfg.inventory
    store = state.open_store(inv.kind, inv.name, bytes.fromhex(inv.creator) if inv.creator else None,
                             read_only=read_only)
    return state, store


def cmd_insert(args) -> int:
    cfg = NodeConfig.load(args.config)
    token = token_from_env()
    state, store = _open_inventory(cfg)
    chain = _chain_handle(cfg, token)
    if args.retry:
        record = AnchorRecord.from_dict(_read_json(args.retry, "anchor record"))
    else:
        try:
            snap = parse_snapshot(json.dumps(_read_json(args.snapshot, "snapshot")))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"invalid snapshot: {exc}") from exc
    try:
        contract = _contract(cfg, chain)
    except ChainUnavailable:
        contract = ""
    try:
        if args.retry:
            record.contract = record.contract or contract
            record = retry_anchor(record, store, chain, token)
        else:
            record = insert_inventory(snap, store, chain, contract, token, hash_only=args.hash_only)
    except AnchorAuthError as exc:
        state.sync(store)
        state.record_anchor(exc.record)
        _emit(exc.record.to_dict())
        _say(f"anchoring refused: {exc}")
        return EXIT_AUTH
    state.sync(store)
    if record.status == "pending-anchor":
        state.record_anchor(record)
        _emit(record.to_dict())
        _say(f"stored as {record.orbit_hash}, chain unreachable: anchor pending")
        return EXIT_CHAIN_DOWN
    if args.wait:
        try:
            _wait(chain, record.tx_hash, args.timeout)
        except ChainUnavailable as exc:
            _say(f"anchored, but lost the chain while waiting: {exc}")
    state.record_anchor(record)
    _emit(record.to_dict())
    _say(f"stored as {record.orbit_hash}, anchored in tx {record.tx_hash}")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = NodeConfig.load(args.config)
    record = AnchorRecord.from_dict(_read_json(args.record, "anchor record"))
    state, store = _open_inventory(cfg, read_only=True)
    chain = _chain_handle(cfg, token_from_env())
    try:
        report = verify_inventory(record, store, chain)
    except ChainUnavailable as exc:
        _say(str(exc))
        return EXIT_CHAIN_DOWN
    _emit(report.to_dict())
    _say(f"{report.status.value}: {report.details}")
    return VERIFY_EXIT[report.status]


def cmd_bench(args) -> int:
    from .bench import (fit_gev, fit_kernel, load_scenario, run_scenario, summarize,
                        write_csv)
    try:
        cfg = load_scenario(args.scenario)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid scenario config: {exc}") from exc
    if args.requests is not None:
        cfg.n_requests = args.requests
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.__post_init__()
    samples = run_scenario(cfg)
    lat = [s.latency_s for s in samples]
    report = {"scenario": cfg.to_dict(), "n": len(samples)}
    if len(lat) >= 2:
        report["summary"] = summarize(lat).to_dict()
    if args.fit == "gev":
        report["fit"] = fit_gev(lat).to_dict()
    elif args.fit == "kernel":
        report["fit"] = fit_kernel(lat).to_dict()
    if args.csv:
        write_csv(samples, args.csv)
        _emit(report)
    else:
        write_csv(samples, sys.stdout)
        if args.report:
            Path(args.report).write_text(json.dumps(report, sort_keys=True) + "\n")
    if "summary" in report:
        s = report["summary"]
        _say(f"scenario {cfg.name}: {len(samples)} requests, mean {s['mean']:.4f} s, variance {s['variance']:.6f} s^2")
    return EXIT_OK


def cmd_status(args) -> int:
    cfg = NodeConfig.load(args.config)
    cfg.ensure_data_dir()
    state = NodeState(cfg.data_dir, cfg.identity_file)
    logs = {}
    for addr, meta in state.known_logs().items():
        st = state.open_store(meta["kind"], meta["name"], bytes.fromhex(meta["creator"]),
                              read_only=True)
        logs[addr] = {"kind": meta["kind"], "name": meta["name"], "creator": meta["creator"],
                      "entries": len(st.log), "heads": sorted(c.hex() for c in st.log.heads())}
    out = {"identity": state.identity.public_key.hex(), "logs": logs,
           "anchors": len(state.anchors())}
    try:
        chain = _chain_handle(cfg, token_from_env())
        st = chain.status()
        out["chain"] = {k: st[k] for k in ("height", "now_ms", "pending", "contracts")}
    except (ChainUnavailable, UsageError) as exc:
        out["chain"] = {"error": str(exc)}
    _emit(out)
    return EXIT_OK


async def _node_main(cfg: NodeConfig, duration: float | None) -> int:
    state = NodeState(cfg.data_dir, cfg.identity_file)
    try:
        state.blockstore.check_integrity()
        stores = [state.open_store(r.kind, r.name, bytes.fromhex(r.creator) if r.creator else None)
                  for r in [cfg.inventory, *cfg.replicate]]
    except CorruptBlock as exc:
        _say(f"refusing to start: corrupt block {exc.cid.hex()} in {state.blockstore.root}")
        return EXIT_CORRUPT
    except (NotFound, BlockStoreError) as exc:
        _say(f"refusing to start: store is damaged: {exc}")
        return EXIT_CORRUPT

    from .tcpnode import TcpNode

    def tick() -> None:
        for s in stores:
            state.sync(s)

    node = TcpNode(stores, cfg.announce_ms, [parse_hostport(p) for p in cfg.peers], tick)
    service = None
    info = {"identity": state.identity.public_key.hex(), "logs": [s.address for s in stores]}
    try:
        if cfg.chain.serve:
            chain = _file_chain(cfg, token_from_env())
            service = ChainService(chain)
            service.clock = cfg.clock.make(chain.now)
            host, port = parse_hostport(cfg.chain.serve)
            info["chain_port"] = await service.start(host, port)
            info["contract"] = service.contract
        if cfg.listen:
            await node.start(*parse_hostport(cfg.listen))
            info["port"] = node.port
        else:
            await node.start()
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            _say(f"address in use: {exc}")
            await node.close()
            if service is not None:
                await service.close()
            return EXIT_PORT_IN_USE
        raise

    _emit(info)
    _say(f"node {info['identity'][:16]} up; listening on {info.get('port', '-')}")
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        with contextlib.suppress(NotImplementedError, RuntimeError):
            loop.add_signal_handler(sig, stop.set)
    ticker = asyncio.create_task(service.ticker()) if service else None
    try:
        await asyncio.wait_for(stop.wait(), timeout=duration)
    except asyncio.TimeoutError:
        pass
    if ticker:
        ticker.cancel()
    await node.close()
    if service is not None:
        await service.close()
    tick()
    _say("node stopped; state flushed")
    return EXIT_OK


def cmd_node_run(args) -> int:
    cfg = NodeConfig.load(args.config)
    cfg.ensure_data_dir()
    return asyncio.run(_node_main(cfg, args.duration))


# parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invchain", description="Inventory traceability toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    node = sub.add_parser("node", help="storage node")
    nsub = node.add_subparsers(dest="node_command", required=True)
    run = nsub.add_parser("run", help="run a replicating node")
    run.add_argument("--config", required=True)
    run.add_argument("--duration", type=float, help="stop after this many seconds")
    run.set_defaults(func=cmd_node_run)

    fl = sub.add_parser("flight", help="simulate an inventory flight")
    fl.add_argument("--layout", help="tag layout JSON (default: bundled 13-tag layout)")
    fl.add_argument("--path", help="flight path JSON (default: bundled circular path)")
    fl.add_argument("--params", help="reader parameters JSON (default: bundled)")
    fl.add_argument("--seed", type=int, default=0)
    fl.add_argument("--curve", help="write the cumulative read curve CSV here")
    fl.add_argument("--trace", metavar="TAG_ID", help="also write this tag's SSI trace")
    fl.add_argument("--trace-csv", help="output file for --trace")
    fl.set_defaults(func=cmd_flight)

    ins = sub.add_parser("insert", help="store and anchor an inventory snapshot")
    ins.add_argument("snapshot", nargs="?", help="snapshot JSON file, or - for stdin")
    ins.add_argument("--config", required=True)
    ins.add_argument("--retry", metavar="RECORD", help="re-anchor a pending-anchor record")
    ins.add_argument("--hash-only", action="store_true", help="anchor only the snapshot digest")
    ins.add_argument("--wait", dest="wait", action="store_true", default=True)
    ins.add_argument("--no-wait", dest="wait", action="store_false")
    ins.add_argument("--timeout", type=float, default=60.0, help="seconds to wait for mining")
    ins.set_defaults(func=cmd_insert)

    ver = sub.add_parser("verify", help="check a stored snapshot against its anchor")
    ver.add_argument("record", help="anchor record JSON file, or - for stdin")
    ver.add_argument("--config", required=True)
    ver.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="run a latency scenario")
    b.add_argument("scenario", help="A-F or a scenario JSON file")
    b.add_argument("--csv", help="write samples here (default: stdout)")
    b.add_argument("--report", help="write the JSON report here when CSV goes to stdout")
    b.add_argument("--fit", choices=("gev", "kernel"))
    b.add_argument("--requests", type=int)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bench)

    st = sub.add_parser("status", help="show node and chain state")
    st.add_argument("--config", required=True)
    st.set_defaults(func=cmd_status)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "insert" and not (args.snapshot or args.retry):
        parser.error("insert needs a snapshot file or --retry RECORD")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.exit(EXIT_USAGE, f"invchain: error: {exc}\n")
    except ConfigError as exc:
        parser.exit(EXIT_USAGE, f"invchain: config error: {exc}\n")
    except ChainUnavailable as exc:
        _say(str(exc))
        return EXIT_CHAIN_DOWN
    except ChainError as exc:
        _say(f"chain error: {type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
