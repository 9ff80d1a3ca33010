"""Command-line entry points: track tools, session server, datagen, driver,
RL environment and benchmarks."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .ins import NoiseModel


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="openrace", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    track = sub.add_parser("track", help="inspect and validate track files")
    track_sub = track.add_subparsers(dest="track_command", required=True)
    for name in ("validate", "info"):
        p = track_sub.add_parser(name)
        p.add_argument("file", help="track file (.ort) or bundled track name")

    serve = sub.add_parser("serve", help="run a simulation session server")
    serve.add_argument("--track", required=True)
    serve.add_argument("--vehicle", default="gt3_generic")
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--state-hz", type=float, default=100.0)
    serve.add_argument("--frame-hz", type=float, default=30.0)
    serve.add_argument("--frame-size", type=_parse_size, default=(640, 360))
    serve.add_argument("--camera", choices=("chase", "cockpit"), default="chase")
    serve.add_argument("--record", default=None, metavar="DIR")
    serve.add_argument("--debug-truth", action="store_true")
    serve.add_argument("--pace", choices=("realtime", "max", "lockstep"), default="realtime")
    serve.add_argument("--speed", type=float, default=1.0)
    serve.add_argument("--duration", type=float, default=None, metavar="SIM_S")
    serve.add_argument("--seed", type=int, default=0)
    serve.add_argument("--no-frames", action="store_true")
    serve.add_argument("--quiet-ins", action="store_true", help="zero sensor noise")
    serve.add_argument("--gateway-port", type=int, default=None,
                       help="serve the browser console and /ws bridge on this port")

    datagen = sub.add_parser("datagen", help="generate annotation data from a recording")
    datagen.add_argument("--record", required=True, metavar="DIR")
    datagen.add_argument("--track", required=True)
    datagen.add_argument("--out", required=True, metavar="DIR")
    datagen.add_argument("--camera", choices=("chase", "cockpit"), default="chase")
    datagen.add_argument("--size", type=_parse_size, default=(640, 360))

    drive = sub.add_parser("drive", help="run the autonomous driver against a server")
    drive.add_argument("--server", required=True, metavar="HOST:PORT")
    drive.add_argument("--config", default=None, metavar="FILE", help="JSON driver config")
    drive.add_argument("--debug-truth", action="store_true")
    drive.add_argument("--warmup-laps", type=int, default=3)
    drive.add_argument("--max-wall-s", type=float, default=None)

    rl = sub.add_parser("rl-env", help="run RL episodes (scripted baseline by default)")
    rl.add_argument("--server", required=True, metavar="HOST:PORT")
    rl.add_argument("--track", required=True)
    rl.add_argument("--threshold", type=int, default=50)
    rl.add_argument("--laps-per-episode", type=int, default=1)
    rl.add_argument("--episodes", type=int, default=1)
    rl.add_argument("--baseline", action="store_true")
    rl.add_argument("--seed", type=int, default=0)
    rl.add_argument("--out", default=None, metavar="DIR")

    bench = sub.add_parser("benchmark", help="run a lap-time benchmark protocol")
    bench.add_argument("--agent", required=True,
                       help="'builtin:driver', 'builtin:baseline', or a shell command with {server}")
    bench.add_argument("--track", required=True)
    bench.add_argument("--vehicle", default="gt3_generic")
    bench.add_argument("--protocol", choices=("single", "five", "twenty"), required=True)
    bench.add_argument("--out", default=None, metavar="FILE")
    bench.add_argument("--speed", type=float, default=1.0)
    bench.add_argument("--seed", type=int, default=0)

    assets = sub.add_parser("assets", help="regenerate bundled tracks and vehicles")
    assets.add_argument("--dir", default=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return {
        "track": _cmd_track,
        "serve": _cmd_serve,
        "datagen": _cmd_datagen,
        "drive": _cmd_drive,
        "rl-env": _cmd_rl_env,
        "benchmark": _cmd_benchmark,
        "assets": _cmd_assets,
    }[args.command](args)


def _cmd_track(args) -> int:
    from .stock import resolve_track
    from .track import TrackError

    try:
        track = resolve_track(args.file)
    except TrackError as exc:
        print(f"INVALID: {exc}")
        return 1
    if args.track_command == "validate":
        print(f"OK: {track.name} ({track.total_length:.1f} m, "
              f"{'closed' if track.closed else 'open'}, {len(track.regions)} regions)")
        return 0
    print(f"name            {track.name}")
    print(f"closed          {track.closed}")
    print(f"total length    {track.total_length:.2f} m")
    print(f"samples         {len(track.samples)}")
    print(f"friction        {track.friction_coefficient}")
    print(f"start line s    {track.start_line_s:.1f} m")
    lw, rw = track.widths_at(track.start_line_s)
    print(f"width at start  {lw + rw:.1f} m")
    print(f"regions         {len(track.regions)}")
    for reg in track.regions:
        print(f"  s [{reg.s_min:7.1f},{reg.s_max:7.1f}]  d [{reg.d_min:6.1f},{reg.d_max:6.1f}]  "
              f"{reg.label.name} (priority {reg.priority})")
    return 0


def _cmd_serve(args) -> int:
    from .server import RaceServer, ServerConfig, ServerHandle, default_port
    from .session import SessionSettings
    from .stock import resolve_track, resolve_vehicle

    track = resolve_track(args.track)
    params = resolve_vehicle(args.vehicle)
    noise = NoiseModel.quiet(args.seed) if args.quiet_ins else NoiseModel(
        seed=args.seed, gps_latency_ticks=10, gps_dropout_per_s=0.01
    )
    settings = SessionSettings(
        state_hz=args.state_hz,
        frame_hz=args.frame_hz,
        frame_width=args.frame_size[0],
        frame_height=args.frame_size[1],
        camera=args.camera,
        noise=noise,
        debug_truth=args.debug_truth,
    )
    config = ServerConfig(
        port=args.port if args.port is not None else default_port(),
        pace=args.pace,
        speed=args.speed,
        duration_s=args.duration,
        record_dir=args.record,
        render_live=not args.no_frames,
    )
    handle = ServerHandle(RaceServer(track, params, settings, config)).start()
    host, port = handle.address
    print(f"openrace session on {host}:{port} "
          f"(track={track.name}, vehicle={params.name}, pace={args.pace})")
    gateway = None
    if args.gateway_port is not None:
        from .gateway import ConsoleGateway

        gateway = ConsoleGateway(host, port, gateway_port=args.gateway_port)
        gateway.start()
        print(f"console gateway on http://{host}:{gateway.port}/ (ws endpoint /ws)")
    try:
        handle.wait()
    except KeyboardInterrupt:
        handle.stop()
    if gateway is not None:
        gateway.stop()
    return 0


def _cmd_datagen(args) -> int:
    from .datagen import DatagenConfig, generate_dataset
    from .recording import load_record
    from .stock import resolve_track

    record = load_record(args.record)
    track = resolve_track(args.track)
    config = DatagenConfig(camera=args.camera, width=args.size[0], height=args.size[1])
    manifest = generate_dataset(record, track, args.out, config)
    print(f"wrote {manifest['frame_count']} annotation triples to {args.out}")
    counts = manifest["pixel_counts"]
    total = max(1, sum(counts.values()))
    for name, count in sorted(counts.items(), key=lambda kv: -kv[1]):
        if count:
            print(f"  {name:14s} {count:12d}  ({count / total:6.2%})")
    return 0


def _cmd_drive(args) -> int:
    from .driver import DriverConfig, run_driver

    host, port = args.server.rsplit(":", 1)
    config = DriverConfig(ready_after_laps=args.warmup_laps, debug_truth=args.debug_truth,
                          max_drive_s=args.max_wall_s)
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        for key, value in overrides.items():
            if not hasattr(config, key):
                print(f"unknown driver config key {key!r}", file=sys.stderr)
                return 2
            setattr(config, key, value)
    outcome = run_driver(host, int(port), config)
    print(f"drive finished: laps={outcome.laps} sim_time={outcome.sim_time:.1f}s "
          f"states={outcome.states_seen} reason={outcome.reason}")
    return 0


def _cmd_rl_env(args) -> int:
    from .recording import TELEMETRY_HEADER
    from .rlenv import EnvConfig, CurriculumState, RacingEnv, ScriptedBaseline
    from .stock import resolve_track

    host, port = args.server.rsplit(":", 1)
    track = resolve_track(args.track)
    config = EnvConfig(
        laps_per_episode=args.laps_per_episode,
        curriculum=CurriculumState(buffer_episode_threshold=args.threshold),
    )
    env = RacingEnv(host, int(port), track, config)
    policy = ScriptedBaseline()
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for episode in range(args.episodes):
        obs = env.reset(seed=args.seed + episode)
        rows = []
        done = False
        result = None
        while not done:
            action = policy(obs)
            obs, r, done, result = env.step(action)
            ch = env.last_channels
            rows.append((ch["sim_time"], ch["x"], ch["y"], ch["speed"], r))
        summaries.append(result)
        print(f"episode {episode}: {result.reason} laps={result.laps} "
              f"reward={result.total_reward:.1f}"
              + (f" lap_time={result.lap_time:.3f}s" if result.lap_time else ""))
        if out_dir:
            with open(out_dir / f"episode_{episode:03d}.orkt", "w") as fh:
                fh.write(TELEMETRY_HEADER + "\n")
                fh.write("sim_time,x,y,speed,reward\n")
                for row in rows:
                    fh.write(",".join(format(v, ".17g") for v in row) + "\n")
    if out_dir:
        (out_dir / "episodes.json").write_text(json.dumps(
            [{"reason": s.reason, "laps": s.laps, "reward": s.total_reward,
              "lap_time": s.lap_time} for s in summaries], indent=1))
    env.close()
    return 0


def _cmd_benchmark(args) -> int:
    from .benchmark import run_benchmark
    from .server import ServerConfig
    from .session import SessionSettings
    from .stock import resolve_track, resolve_vehicle

    track = resolve_track(args.track)
    params = resolve_vehicle(args.vehicle)
    agent, settings, server_config = _benchmark_agent(args, track)
    report = run_benchmark(agent, track, params, args.protocol,
                           settings=settings, server_config=server_config)
    print(report.text_table())
    if args.out:
        Path(args.out).write_text(report.to_json())
        print(f"report written to {args.out}")
    return 0 if report.passed else 1


def _benchmark_agent(args, track):
    from .server import ServerConfig
    from .session import SessionSettings

    noise = NoiseModel(seed=args.seed, gps_latency_ticks=10)
    if args.agent == "builtin:driver":
        from .driver import DriverConfig, run_driver

        settings = SessionSettings(frame_width=320, frame_height=180, frame_hz=15.0,
                                   noise=noise, spawn_speed=10.0)
        config = ServerConfig(pace="realtime", speed=args.speed, duration_s=3600.0)

        def agent(host, port):
            run_driver(host, port, DriverConfig(ready_after_laps=3))

        return agent, settings, config
    if args.agent == "builtin:baseline":
        from .rlenv import EnvConfig, RacingEnv, ScriptedBaseline
        from .vehicle import PHYSICS_HZ

        settings = SessionSettings(noise=NoiseModel.quiet(args.seed), debug_truth=True,
                                   spawn_speed=15.0)
        config = ServerConfig(pace="lockstep", duration_s=3600.0, render_live=False)
        protocol_laps = {"single": 1, "five": 5, "twenty": 20}[args.protocol]

        def agent(host, port):
            from .rlenv import CurriculumState

            env = RacingEnv(host, port, track,
                            EnvConfig(laps_per_episode=protocol_laps + 2))
            policy = ScriptedBaseline()
            obs = env.reset()
            env.client.send_session({"cmd": "ready"})
            done = False
            while not done:
                obs, _, done, _ = env.step(policy(obs))
            env.close()

        return agent, settings, config
    return args.agent, SessionSettings(noise=noise), ServerConfig(pace="realtime",
                                                                  speed=args.speed,
                                                                  duration_s=3600.0)


def _cmd_assets(args) -> int:
    from .stock import write_assets

    written = write_assets(Path(args.dir) if args.dir else None)
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
