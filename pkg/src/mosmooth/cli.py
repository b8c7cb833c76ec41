"""Command line entry point.

Training and evaluation run locally. ``simulate``, ``tgospa`` and ``taa`` can
instead be sent to a running service with ``--server``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import httpx
import uvicorn
from pydantic import BaseModel, ValidationError

from .dda import read_association_csv
from .pipeline.config import PRESETS, RunConfig, load_config
from .pipeline.evaluate import MODES, PREDICTED, evaluate, report_csv, report_json
from .pipeline.train import CheckpointError, TrainingDiverged, load_model, train_dda, train_ds
from .service.app import create_app, run_simulate, run_taa, run_tgospa
from .service.schemas import SimulateRequest, TaaRequest, TgospaParamsIn, TgospaRequest, TrajectoryIn
from .simkit import scene_from_dict, write_scenes

SCENE_FILE = "scenes.jsonl"


class CliError(Exception):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config, preset=args.preset)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _call(server: Optional[str], path: str, body: BaseModel, local):
    if server is None:
        return local(body).model_dump()
    resp = httpx.post(server.rstrip("/") + path, json=body.model_dump(mode="json"), timeout=600)
    if resp.status_code != 200:
        raise CliError(f"server returned {resp.status_code}: {resp.text}")
    return resp.json()


def cmd_simulate(args) -> int:
    cfg = _config(args)
    count = args.scenes if args.scenes is not None else cfg.eval.scenes
    req = SimulateRequest(task=cfg.task, seed=cfg.seed, count=count)
    result = _call(args.server, "/simulate", req, run_simulate)
    task = cfg.task_config
    scenes = [scene_from_dict(d, task) for d in result["scenes"]]
    path = _out_dir(args) / SCENE_FILE
    write_scenes(path, scenes, f"mosmooth scenes task={cfg.task_id} seed={cfg.seed} count={count}")
    print(path)
    return 0


def cmd_train_dda(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    (out / "config.json").write_text(cfg.model_dump_json(indent=2) + "\n")
    _, history = train_dda(cfg, out)
    print(json.dumps({"steps": len(history.losses), "final_moving_average": history.moving_average[-1] if history.losses else None}))
    return 0


def cmd_train_ds(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    dda = load_model(Path(args.dda) if args.dda else out / "dda")
    _, history = train_ds(cfg, dda, out)
    print(json.dumps({"steps": len(history.losses), "final_moving_average": history.moving_average[-1] if history.losses else None}))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    ckpt = Path(args.checkpoints) if args.checkpoints else out
    dda = load_model(ckpt / "dda") if args.mode == PREDICTED else None
    ds = load_model(ckpt / "ds")
    report = evaluate(cfg, dda, ds, args.scenes, args.mode)
    text = report_json(report)
    (out / f"report_{args.mode}.json").write_text(text)
    (out / f"report_{args.mode}.csv").write_text(report_csv([report]))
    sys.stdout.write(text)
    return 0


def _trajectories(path: str) -> list[TrajectoryIn]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["trajectories"]
    return [TrajectoryIn(**d) for d in data]


def cmd_tgospa(args) -> int:
    req = TgospaRequest(
        truths=_trajectories(args.truths),
        estimates=_trajectories(args.estimates),
        params=TgospaParamsIn(p=args.p, c=args.c, gamma=args.gamma, base=args.base),
        T=args.T,
    )
    result = _call(args.server, "/tgospa", req, run_tgospa)
    _emit(args, result, "tgospa.json")
    return 0


def cmd_taa(args) -> int:
    A = read_association_csv(args.association)
    labels = json.loads(Path(args.labels).read_text())
    if isinstance(labels, dict):
        labels = labels["labels"]
    req = TaaRequest(A=A.tolist(), labels=labels, clutter_target=args.clutter_target)
    result = _call(args.server, "/taa", req, run_taa)
    _emit(args, result, "taa.json")
    return 0


def _emit(args, result: dict, name: str) -> None:
    text = json.dumps(result, indent=2, sort_keys=True) + "\n"
    if args.out:
        (_out_dir(args) / name).write_text(text)
    sys.stdout.write(text)


def cmd_serve(args) -> int:
    app = create_app(Path(args.checkpoints) if args.checkpoints else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mosmooth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_args(p, out_required=True):
        p.add_argument("--config", help="RunConfig JSON file (unknown keys are errors)")
        p.add_argument("--preset", default="desk", choices=sorted(PRESETS), help="used when --config is absent")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("simulate", help="write a scene dataset")
    run_args(p)
    p.add_argument("--scenes", type=int, help="number of scenes (default: eval.scenes)")
    p.add_argument("--server", help="service URL; simulate remotely")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-dda", help="train the associator")
    run_args(p)
    p.set_defaults(func=cmd_train_dda)

    p = sub.add_parser("train-ds", help="train the smoother on the frozen associator")
    run_args(p)
    p.add_argument("--dda", help="associator checkpoint (default: OUT/dda)")
    p.set_defaults(func=cmd_train_ds)

    p = sub.add_parser("evaluate", help="score trained checkpoints on fresh scenes")
    run_args(p)
    p.add_argument("--mode", choices=MODES, default=PREDICTED)
    p.add_argument("--scenes", type=int, help="number of scenes (default: eval.scenes)")
    p.add_argument("--checkpoints", help="directory with dda/ and ds/ (default: OUT)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("tgospa", help="score two trajectory files")
    p.add_argument("truths")
    p.add_argument("estimates")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--c", type=float, default=20.0)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--base", choices=["L1", "L2"], default="L1")
    p.add_argument("--T", type=int, help="window length (default: last step of any trajectory)")
    p.add_argument("--out", help="also write tgospa.json here")
    p.add_argument("--server", help="service URL; score remotely")
    p.set_defaults(func=cmd_tgospa)

    p = sub.add_parser("taa", help="association accuracy of an association-matrix CSV")
    p.add_argument("association", help="CSV with a track0,track1,... header")
    p.add_argument("labels", help="JSON list of measurement labels (-1 for clutter)")
    p.add_argument("--clutter-target", choices=["literal", "single_column"], default="single_column")
    p.add_argument("--out", help="also write taa.json here")
    p.add_argument("--server", help="service URL; score remotely")
    p.set_defaults(func=cmd_taa)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--checkpoints", help="directory with dda/ and ds/ to enable /track")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, CheckpointError, CliError, TrainingDiverged, KeyError, FileNotFoundError, ValueError) as err:
        print(f"mosmooth {args.command}: {err}", file=sys.stderr)
        return 2
    except httpx.HTTPError as err:
        print(f"mosmooth {args.command}: cannot reach server: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
