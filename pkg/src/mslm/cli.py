"""Command-line front end for the mapping, query, and navigation pipeline.

Exit codes: 0 success, 1 domain error (bad data, unreachable goals, provider
failures), 2 usage error.  A line-based ``key=value`` config file can supply
defaults for any long flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import audio as audio_mod
from . import featmap, heatmap as heatmap_mod, instruct, plan as plan_mod
from . import providers, query as query_mod, simharness
from .errors import MslmError
from .geometry import GridSpec
from .plan import AgentState, AVLMAPS_PROFILE, COARSE_PROFILE, VLMAPS_PROFILE
from .robot import NavRobot

_PROFILES = {
    "vlmaps": VLMAPS_PROFILE,
    "avlmaps": AVLMAPS_PROFILE,
    "coarse": COARSE_PROFILE,
}


def _add_provider_args(p: argparse.ArgumentParser):
    p.add_argument("--provider", choices=("mock", "file", "remote"),
                   default="mock")
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--provider-root", default=None,
                   help="blob directory for the file provider")
    p.add_argument("--bridge-url", default=None,
                   help="endpoint for the remote provider "
                        "(default: MSLM_BRIDGE_URL)")


def _make_provider(args):
    if args.provider == "mock":
        return providers.MockProvider(feature_dim=args.feature_dim,
                                      seed=args.seed,
                                      noise_sigma=args.noise_sigma)
    if args.provider == "file":
        if not args.provider_root:
            raise MslmError("file provider needs --provider-root")
        return providers.FileProvider(args.provider_root)
    return providers.RemoteProvider(endpoint=args.bridge_url)


def _split_csv(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_cell(text: str) -> tuple:
    parts = _split_csv(text)
    if len(parts) not in (2, 3):
        raise MslmError(f"expected 'px,py' or 'px,py,pz', got {text!r}")
    return tuple(int(p) for p in parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mslm", description="multimodal spatial language map engine")
    parser.add_argument("--config", default=None,
                        help="key=value file with flag defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", choices=("small", "medium"), default="small")
    p.add_argument("--duplicate-class", default=None)
    p.add_argument("--duplicates", type=int, default=2)
    p.add_argument("--sound", default=None,
                   help="sound class to attach to an object")
    p.add_argument("--sound-at", type=int, default=0,
                   help="object index the sound source sits next to")
    p.add_argument("--out", required=True)

    p = sub.add_parser("build-map", help="fuse a dataset into a feature map")
    _add_provider_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--height-band", default=None, help="'lo,hi' meters")
    p.add_argument("--out", required=True)

    p = sub.add_parser("query", help="open-vocabulary segmentation of a map")
    _add_provider_args(p)
    p.add_argument("--map", required=True)
    p.add_argument("--labels", required=True, help="comma-separated")
    p.add_argument("--out", required=True, help="label-index PGM path")

    p = sub.add_parser("obstacles", help="export obstacle maps")
    _add_provider_args(p)
    p.add_argument("--map", required=True)
    p.add_argument("--t1", type=float, default=0.15)
    p.add_argument("--t2", type=float, default=1.2)
    p.add_argument("--labels", default=None,
                   help="category vocabulary for embodiment filtering")
    p.add_argument("--exclude", default=None,
                   help="categories this embodiment ignores")
    p.add_argument("--out", required=True)

    p = sub.add_parser("heatmap", help="cross-modal heatmap for one query")
    _add_provider_args(p)
    p.add_argument("--map", required=True)
    p.add_argument("--obj", default=None)
    p.add_argument("--labels", default=None,
                   help="vocabulary (required with --obj)")
    p.add_argument("--point", default=None, help="'px,py[,pz]' source cell")
    p.add_argument("--sound", default=None)
    p.add_argument("--dataset", default=None,
                   help="dataset with the audio track (required with --sound)")
    p.add_argument("--sound-classes", default=None)
    p.add_argument("--eps", type=float, default=0.1,
                   help="decay per cell of distance")
    p.add_argument("--out", required=True, help="top-view PGM path")
    p.add_argument("--volume", default=None, help="raw float32 volume path")

    p = sub.add_parser("plan", help="shortest path on the obstacle map")
    _add_provider_args(p)
    p.add_argument("--map", required=True)
    p.add_argument("--t1", type=float, default=0.15)
    p.add_argument("--t2", type=float, default=1.2)
    p.add_argument("--start", required=True, help="'px,py'")
    p.add_argument("--goal", required=True, help="'px,py'")
    p.add_argument("--profile", choices=tuple(_PROFILES), default="avlmaps")
    p.add_argument("--heading", type=float, default=0.0)
    p.add_argument("--out", required=True, help="waypoint list path")
    p.add_argument("--actions", default=None, help="action trace path")

    p = sub.add_parser("navigate",
                       help="run a language instruction end to end")
    _add_provider_args(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--prompt", choices=("spatial", "multimodal"),
                   default="spatial")
    p.add_argument("--scale", type=float, default=0.1)
    p.add_argument("--sound-classes", default=None)
    p.add_argument("--profile", choices=tuple(_PROFILES), default="avlmaps")
    p.add_argument("--out", required=True, help="trace JSON path")
    p.add_argument("--actions", default=None, help="action trace path")

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", choices=("spatial", "disambig", "embodiment"),
                   required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--out", required=True, help="CSV report path")
    return parser


def _load_config(path) -> list:
    extra = []
    with open(path) as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise MslmError(f"bad config line (need key=value): {raw!r}")
            key, value = line.split("=", 1)
            extra.append(f"--{key.strip()}")
            extra.append(value.strip())
    return extra


def _cmd_gen_scene(args) -> int:
    scene = simharness.generate_scene(args.seed, args.size,
                                      duplicate_class=args.duplicate_class,
                                      duplicates=args.duplicates)
    if args.sound:
        simharness.add_sound_event(scene, args.sound, args.sound_at)
    trajectory = simharness.coverage_trajectory(scene)
    dataset = simharness.synth_stream(scene, trajectory, seed=args.seed)
    simharness.write_dataset(dataset, args.out)
    print(f"wrote {len(dataset.frames)} frames to {args.out}")
    return 0


def _dataset_spec(dataset, scale: float) -> GridSpec:
    if dataset.scene is None:
        raise MslmError("dataset manifest lacks a scene extent")
    return dataset.scene.grid_spec(scale)


def _cmd_build_map(args) -> int:
    dataset = simharness.read_dataset(args.dataset)
    provider = _make_provider(args)
    band = None
    if args.height_band:
        lo, hi = (float(v) for v in _split_csv(args.height_band))
        band = (lo, hi)
    grid = simharness.build_map(dataset, provider,
                                _dataset_spec(dataset, args.scale),
                                height_band=band)
    featmap.save(grid, args.out)
    print(f"fused {len(grid)} cells into {args.out}")
    return 0


def _cmd_query(args) -> int:
    grid = featmap.load(args.map)
    provider = _make_provider(args)
    labels = _split_csv(args.labels)
    label_set = query_mod.LabelSet(labels, provider.embed_text(labels))
    seg = query_mod.segment_grid(grid, label_set)
    out = np.zeros((grid.spec.h, grid.spec.w), dtype=np.uint8)
    counts = dict.fromkeys(labels, 0)
    for (px, py, _pz), (li, _s) in seg.cells.items():
        out[px, py] = li + 1
        counts[labels[li]] += 1
    query_mod.write_pgm(out, args.out)
    for name in labels:
        print(f"{name}: {counts[name]} cells")
    return 0


def _cmd_obstacles(args) -> int:
    grid = featmap.load(args.map)
    base = simharness.occupancy_from_grid(grid, args.t1, args.t2)
    omap = base
    if args.exclude:
        if not args.labels:
            raise MslmError("--exclude needs --labels")
        provider = _make_provider(args)
        labels = _split_csv(args.labels)
        excluded = set(_split_csv(args.exclude))
        unknown = excluded - set(labels)
        if unknown:
            raise MslmError(f"excluded labels not in vocabulary: {unknown}")
        label_set = query_mod.LabelSet(labels, provider.embed_text(labels))
        subset = [i for i, name in enumerate(labels) if name not in excluded]
        omap = query_mod.embodiment_obstacle_map(grid, base, label_set, subset)
    query_mod.write_pgm(omap.values, args.out, scale255=True)
    print(f"{int(omap.values.sum())} obstacle cells -> {args.out}")
    return 0


def _cmd_heatmap(args) -> int:
    grid = featmap.load(args.map)
    provider = _make_provider(args)
    chosen = [v is not None for v in (args.obj, args.point, args.sound)]
    if sum(chosen) != 1:
        raise MslmError("exactly one of --obj / --point / --sound is required")
    if args.obj:
        if not args.labels:
            raise MslmError("--obj needs --labels")
        labels = _split_csv(args.labels)
        if args.obj not in labels:
            raise MslmError(f"--obj {args.obj!r} missing from --labels")
        label_set = query_mod.LabelSet(labels, provider.embed_text(labels))
        seg = query_mod.segment_grid(grid, label_set)
        voxels = seg.mask(labels.index(args.obj)).astype(np.float64)
        if voxels.shape[0] == 0:
            raise MslmError(f"no cells matched {args.obj!r}")
        hmap = heatmap_mod.object_heatmap(voxels, args.eps, grid.spec)
    elif args.point:
        cell = _parse_cell(args.point)
        if len(cell) == 2:
            cell = cell + (0,)
        hmap = heatmap_mod.point_heatmap(cell, args.eps, grid.spec)
    else:
        if not args.dataset or not args.sound_classes:
            raise MslmError("--sound needs --dataset and --sound-classes")
        dataset = simharness.read_dataset(args.dataset)
        if dataset.audio is None:
            raise MslmError("dataset has no audio track")
        gated = audio_mod.noise_gate(dataset.audio)
        segments = audio_mod.split_on_silence(gated)
        db = audio_mod.build_audio_db(segments, dataset.audio, provider,
                                      _split_csv(args.sound_classes),
                                      dataset.odometry, grid.spec)
        hmap = audio_mod.audio_query_heatmap(db, args.sound, provider,
                                             args.eps, grid.spec)
        if hmap is None:
            raise MslmError("no audio segments found in the dataset")
    query_mod.write_pgm(heatmap_mod.top_view(hmap), args.out)
    if args.volume:
        heatmap_mod.save_volume(hmap, args.volume)
    peak = heatmap_mod.argmax_position(hmap)
    if peak is not None:
        (px, py, pz), score = peak
        print(f"peak {score:.3f} at ({px}, {py}, {pz})")
    return 0


def _cmd_plan(args) -> int:
    grid = featmap.load(args.map)
    omap = simharness.occupancy_from_grid(grid, args.t1, args.t2)
    start = _parse_cell(args.start)[:2]
    goal = _parse_cell(args.goal)[:2]
    path = plan_mod.plan_path(omap, start, goal)
    if path is None:
        raise MslmError(f"goal {goal} unreachable from {start}")
    with open(args.out, "w") as f:
        for px, py in path:
            f.write(f"{px} {py}\n")
    cost_m = plan_mod.path_cost(path) * grid.spec.scale
    print(f"{len(path)} waypoints, {cost_m:.2f} m")
    if args.actions:
        state = AgentState(start, args.heading)
        actions = plan_mod.path_to_actions(path, state,
                                           _PROFILES[args.profile],
                                           grid.spec.scale)
        plan_mod.write_action_trace(actions, args.actions)
    return 0


def _cmd_navigate(args) -> int:
    dataset = simharness.read_dataset(args.dataset)
    provider = _make_provider(args)
    spec = _dataset_spec(dataset, args.scale)
    grid = simharness.build_map(dataset, provider, spec)
    obstacles = simharness.occupancy_from_grid(grid)

    audio_db = None
    sound_classes = _split_csv(args.sound_classes) if args.sound_classes else []
    if sound_classes and dataset.audio is not None:
        gated = audio_mod.noise_gate(dataset.audio)
        segments = audio_mod.split_on_silence(gated)
        audio_db = audio_mod.build_audio_db(segments, dataset.audio, provider,
                                            sound_classes, dataset.odometry,
                                            spec)

    start = simharness.free_start(dataset.scene, spec)
    start = plan_mod.snap_to_free(obstacles.values, start,
                                  max(1, int(round(1.0 / spec.scale))))
    if start is None:
        raise MslmError("no free start cell on the obstacle map")
    robot = NavRobot(grid, dataset.classes, provider, obstacles,
                     AgentState(start), _PROFILES[args.profile],
                     audio_db=audio_db, sound_classes=sound_classes)
    context = instruct.load_context_prompt(args.prompt)
    code = instruct.generate_plan(args.instruction, context, provider)
    program = instruct.parse_program(code)
    instruct.execute_program(program, robot)
    with open(args.out, "w") as f:
        json.dump({"instruction": args.instruction, "code": code,
                   "start": list(start), "trace": robot.trace,
                   "end": list(robot.state.position),
                   "heading": robot.state.heading}, f, indent=1)
    if args.actions:
        plan_mod.write_action_trace(robot.actions, args.actions)
    ok = sum(1 for t in robot.trace if t.get("ok"))
    print(f"{ok}/{len(robot.trace)} subgoals ok, "
          f"end at {tuple(round(v, 1) for v in robot.state.position)}")
    return 0


def _cmd_bench(args) -> int:
    if args.suite == "spatial":
        results = simharness.run_spatial_suite(args.seeds, args.noise_sigma,
                                               base_seed=args.seed)
        sr, spl = simharness.eval_sr_spl(results)
        rows = [[i, ";".join("1" if s else "0" for s in r.successes),
                 f"{r.path_length:.2f}", f"{r.shortest_length:.2f}"]
                for i, r in enumerate(results)]
        rows.append(["summary", f"SR={sr:.1f}", f"SPL={spl:.3f}", ""])
        simharness.write_report_csv(
            args.out, ["episode", "subgoals", "path_m", "shortest_m"], rows)
        print(f"SR {sr:.1f}%  SPL {spl:.3f}")
    elif args.suite == "disambig":
        primary, fused = simharness.run_disambiguation_suite(
            args.seeds, base_seed=args.seed + 100)
        simharness.write_report_csv(
            args.out, ["variant", "recall_at_0.5m"],
            [["primary", f"{primary:.1f}"], ["fused", f"{fused:.1f}"]])
        print(f"Recall@1<0.5m: primary {primary:.1f}%  fused {fused:.1f}%")
    else:
        le, lt = simharness.run_embodiment_suite(args.seeds,
                                                 base_seed=args.seed + 500)
        simharness.write_report_csv(
            args.out, ["comparison", "fraction"],
            [["excl<=incl", f"{le:.2f}"], ["excl<incl", f"{lt:.2f}"]])
        print(f"cost(excl) <= cost(incl): {le:.0%}; strict: {lt:.0%}")
    return 0


_COMMANDS = {
    "gen-scene": _cmd_gen_scene,
    "build-map": _cmd_build_map,
    "query": _cmd_query,
    "obstacles": _cmd_obstacles,
    "heatmap": _cmd_heatmap,
    "plan": _cmd_plan,
    "navigate": _cmd_navigate,
    "bench": _cmd_bench,
}


def dispatch(argv) -> int:
    parser = build_parser()
    argv = list(argv)
    try:
        if "--config" in argv:
            at = argv.index("--config")
            extra = _load_config(argv[at + 1])
            argv = argv[:at] + argv[at + 2:]
            # config-supplied flags go first so explicit flags override them
            if argv:
                argv = [argv[0]] + extra + argv[1:]
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (MslmError, ValueError, KeyError, IndexError, OSError,
            RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
