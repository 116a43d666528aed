"""Command-line entry points: generate synthetic sessions, stream them to a
server, replay stored sessions, and run the server itself."""

from __future__ import annotations

import argparse
import json
import sys

from .core import ArbenchError


def _parse_resolution(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution {text!r} is not WxH") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="arbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic session to disk")
    gen.add_argument("--scene", choices=("ramp", "step", "orbiting-box"), required=True)
    gen.add_argument("--frames", type=int, required=True)
    gen.add_argument("--res", type=_parse_resolution, default=(64, 48), metavar="WxH")
    gen.add_argument("--out", required=True, help="session store root")
    gen.add_argument("--fps", type=float, default=30.0)
    gen.add_argument("--session", default=None, help="session id (default: derived)")

    stream = sub.add_parser("stream", help="stream an on-disk session to a server")
    stream.add_argument("--root", required=True, help="session store root")
    stream.add_argument("--session", required=True)
    stream.add_argument("--url", required=True, help="server base url, e.g. http://127.0.0.1:8799")
    stream.add_argument("--fps", type=float, default=30.0)
    stream.add_argument("--loop", action="store_true")

    serve = sub.add_parser("serve", help="run the edge evaluation server")
    serve.add_argument("--config", default=None, help="JSON config file")
    serve.add_argument("--bind", default=None, help="override bind_address host:port")
    serve.add_argument("--storage-root", default=None)
    serve.add_argument("--frontend", default=None, help="static console directory")

    replay = sub.add_parser("replay", help="replay a stored session offline")
    replay.add_argument("--root", required=True)
    replay.add_argument("--session", required=True)
    replay.add_argument("--protocol", default=None, help="protocol JSON file")
    replay.add_argument("--fps", type=float, default=0.0, help="0 = as fast as possible")

    return parser


def cmd_generate(args):
    from .simulator import generate_synthetic

    session_id = generate_synthetic(
        args.out, args.scene, args.frames, resolution=args.res, fps=args.fps,
        session_id=args.session,
    )
    print(f"wrote session {session_id} under {args.out}")
    return 0


def cmd_stream(args):
    from .simulator import stream_session

    stats = stream_session(args.root, args.session, args.url, fps=args.fps, loop=args.loop)
    print(
        f"sent {stats.frames_sent} frames, {stats.bytes_sent} bytes, "
        f"mean inter-frame {stats.mean_interframe_ms:.2f} ms, {stats.acks_received} acks"
    )
    return 0


def cmd_serve(args):
    import uvicorn

    from .api import create_app
    from .server import Orchestrator, load_config

    config = load_config(args.config)
    if args.bind:
        config.bind_address = args.bind
    if args.storage_root:
        config.storage_root = args.storage_root
    orch = Orchestrator(config)
    app = create_app(orch, frontend_dir=args.frontend)
    print(f"serving on http://{config.bind_address} (storage: {config.storage_root})")
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


def cmd_replay(args):
    from .core import ExperimentProtocol
    from .server import Config, Orchestrator

    orch = Orchestrator(Config(storage_root=args.root))
    protocol_id = "default"
    if args.protocol:
        with open(args.protocol, "r", encoding="utf-8") as fh:
            protocol = ExperimentProtocol.from_json_dict(json.load(fh))
        orch.register_protocol(protocol)
        protocol_id = protocol.protocol_id
    envelopes = orch.replay(args.session, protocol_id, mode="video", fps=args.fps)
    print(f"replayed {orch.store.frame_count(args.session)} frames, {len(envelopes)} envelopes")
    for model_id in orch.store.metric_model_ids(args.session):
        lines = orch.store.read_metrics(args.session, model_id).splitlines()
        print(f"  metrics[{model_id}]: {len(lines)} rows")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "stream": cmd_stream,
        "serve": cmd_serve,
        "replay": cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except ArbenchError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
