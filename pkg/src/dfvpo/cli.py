"""Command-line pipeline: synth -> pairs -> train -> eval, plus theory verify.

Every command resolves its full configuration (defaults expanded), writes it
to <out>/resolved_config.json before doing any work, and is reproducible from
that snapshot. Exit codes are a stable contract: 0 success, 1 assertion
failure, 2 usage error, 3 I/O error. Failures also emit one JSON object on
stderr with the error class and message.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import align, diffuse, distort, media, theory, viz
from .errors import DfvpoError, LoseEqualsWin, MagicMismatch, TruncatedPayload
from .rng import Stream, derive_key
from scipy.stats import binomtest

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_USAGE = 2
EXIT_IO = 3

# default scene classes: (sprite_shape, velocity); the class index is the
# condition label fed to the model
SCENE_CLASSES = (
    ("square", (1, 1)),
    ("disc", (1, -1)),
    ("square", (-1, 1)),
    ("disc", (0, 1)),
)


def _load_config_file(path) -> dict:
    path = Path(path)
    data = path.read_bytes()
    if path.suffix == ".json":
        return json.loads(data.decode("utf-8"))
    return tomllib.loads(data.decode("utf-8"))


def _merge_config(file_cfg: dict, cli_overrides: dict) -> dict:
    """File values fill in wherever the command line left the default marker."""
    merged = dict(file_cfg)
    merged.update({k: v for k, v in cli_overrides.items() if v is not None})
    return merged


def _write_snapshot(out_dir: Path, command: str, inputs: dict, config: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    snap = {"command": command, "inputs": inputs, "config": config}
    with open(out_dir / "resolved_config.json", "w", encoding="utf-8") as fh:
        json.dump(snap, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")


def _curriculum_from_dict(d: dict) -> distort.CurriculumSchedule:
    if not d:
        return distort.default_curriculum()
    if "stages" in d:
        return distort.CurriculumSchedule.from_dict(d)
    arrays = [d["noise_sigma"], d["blur_sigma"], d["max_color_shift"], d["shuffle_fraction"]]
    if len({len(a) for a in arrays}) != 1:
        raise ValueError("curriculum arrays must share one length")
    stages = tuple(
        distort.CurriculumStage(ns, bs, mc, sf) for ns, bs, mc, sf in zip(*arrays)
    )
    return distort.CurriculumSchedule(stages=stages, update_interval=d["update_interval"])


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("DFVPO_THREADS", "1")))
    except ValueError:
        return 1


# --- synth -----------------------------------------------------------------

SYNTH_DEFAULTS = {
    "num_videos": 100,
    "seed": 0,
    "grid": 32,
    "frames": 16,
    "channels": 1,
    "sprite_size": 6,
    "background": 0.15,
    "num_classes": 4,
}


def cmd_synth(args) -> int:
    out = Path(args.out)
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = dict(SYNTH_DEFAULTS)
    cfg.update(file_cfg.get("synth", file_cfg))
    cfg = _merge_config(cfg, {
        "num_videos": args.num_videos,
        "seed": args.seed,
        "grid": args.grid,
        "frames": args.frames,
        "channels": args.channels,
    })
    _write_snapshot(out, "synth", {"out": str(out)}, cfg)
    (out / "videos").mkdir(parents=True, exist_ok=True)

    entries = []
    for i in range(cfg["num_videos"]):
        cls = i % cfg["num_classes"]
        shape, velocity = SCENE_CLASSES[cls % len(SCENE_CLASSES)]
        scene = media.SpriteSceneConfig(
            grid=(cfg["grid"], cfg["grid"]),
            num_frames=cfg["frames"],
            sprite_shape=shape,
            sprite_size=cfg["sprite_size"],
            velocity=velocity,
            background=cfg["background"],
            seed=derive_key(cfg["seed"], "video", i),
            channels=cfg["channels"],
        )
        video = media.synth_moving_sprite(scene)
        rel = f"videos/clip_{i:05d}.vraw"
        media.save_video(video, out / rel)
        entries.append(media.ManifestEntry(rel, cls, cfg["seed"], scene.config_hash()))
    media.DatasetManifest(entries=entries).save(out / "manifest.jsonl")
    print(f"wrote {len(entries)} videos under {out}")
    return EXIT_OK


# --- pairs -----------------------------------------------------------------

PAIRS_DEFAULTS = {"seed": 0, "stage": 0, "variants": list(distort.VARIANTS)}


def cmd_pairs(args) -> int:
    out = Path(args.out)
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = dict(PAIRS_DEFAULTS)
    cfg.update(file_cfg.get("pairs", file_cfg))
    cfg = _merge_config(cfg, {
        "seed": args.seed,
        "stage": args.stage,
        "variants": args.variants.split(",") if args.variants else None,
    })
    curriculum = _curriculum_from_dict(
        _load_config_file(args.curriculum) if args.curriculum else {}
    )
    cfg["curriculum"] = curriculum.to_dict()
    _write_snapshot(out, "pairs", {"manifest": str(args.manifest), "out": str(out)}, cfg)
    (out / "pairs").mkdir(parents=True, exist_ok=True)

    manifest = media.DatasetManifest.load(args.manifest)
    base = Path(args.manifest).parent
    stage = curriculum.stages[min(cfg["stage"], len(curriculum.stages) - 1)]
    variants = cfg["variants"]

    def build(i_entry):
        i, entry = i_entry
        win = media.to_float(media.load_video(base / entry.video_path))
        variant = variants[i % len(variants)]
        spec = distort.draw_spec(
            stage, variant, derive_key(cfg["seed"], "pairspec", i), win.num_frames, win.channels
        )
        try:
            pair = distort.make_pair(
                win,
                entry.condition_label,
                spec,
                distort.Provenance(Path(entry.video_path).stem, cfg["stage"], i),
            )
        except LoseEqualsWin as exc:
            return i, None, str(exc)
        return i, pair, None

    indexed = list(enumerate(manifest.entries))
    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(build, indexed))
    else:
        results = [build(item) for item in indexed]

    records = []
    skipped = 0
    for i, pair, err in results:  # manifest order, independent of completion order
        if pair is None:
            skipped += 1
            print(json.dumps({"warning": "LoseEqualsWin", "detail": err}), file=sys.stderr)
            continue
        win_rel = f"pairs/win_{i:05d}.vraw"
        lose_rel = f"pairs/lose_{i:05d}.vraw"
        media.save_video(pair.win, out / win_rel)
        media.save_video(pair.lose, out / lose_rel)
        records.append(
            distort.PairRecord(win_rel, lose_rel, pair.condition, pair.spec, pair.provenance)
        )
    distort.save_pair_manifest(records, out / "pairs.jsonl")
    print(f"wrote {len(records)} pairs ({skipped} skipped) under {out}")
    return EXIT_OK


# --- train -------------------------------------------------------------------

MODEL_DEFAULTS = {"hidden": [64, 64], "time_dim": 16, "cond_dim": 8}


def _train_config_from(cfg: dict) -> align.TrainConfig:
    fields = {
        k: cfg[k]
        for k in align.TrainConfig.__dataclass_fields__
        if k in cfg and k != "curriculum"
    }
    fields["curriculum"] = _curriculum_from_dict(cfg.get("curriculum", {}))
    return align.TrainConfig(**fields)


def cmd_train(args) -> int:
    out = Path(args.out)
    file_cfg = _load_config_file(args.config) if args.config else {}
    if "config" in file_cfg:  # re-run from a resolved snapshot
        file_cfg = file_cfg["config"]
    cli = {
        "total_steps": args.total_steps,
        "seed": args.seed,
        "learning_rate": args.learning_rate,
        "beta_dpo": args.beta_dpo,
        "lambda_sft": args.lambda_sft,
        "use_dpo": None if args.sft_only is None else not args.sft_only,
        "dpo_form": args.dpo_form,
        "batch_size": args.batch_size,
    }
    cfg = _merge_config(file_cfg, cli)
    cfg.setdefault("model", dict(MODEL_DEFAULTS))
    train_config = _train_config_from(cfg)
    resolved = train_config.to_dict()
    resolved["model"] = cfg["model"]
    _write_snapshot(out, "train", {"pairs": str(args.pairs), "out": str(out)}, resolved)

    items = align.load_training_items(args.pairs)
    model_cfg = diffuse.ModelConfig(
        video_shape=items[0].win.shape,
        hidden=tuple(cfg["model"]["hidden"]),
        time_dim=cfg["model"]["time_dim"],
        cond_count=max(i.condition for i in items) + 1,
        cond_dim=cfg["model"]["cond_dim"],
    )
    spec_log: list = []
    metrics: list = []
    try:
        state, metrics = align.train_on_items(
            items, train_config, model_config=model_cfg, spec_log=spec_log
        )
    finally:
        align.write_metrics_csv(metrics, out / "metrics.csv")
        with open(out / "specs.jsonl", "w", encoding="utf-8") as fh:
            for row in spec_log:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    diffuse.save_checkpoint(state.params, out / "checkpoint.dfpm")
    diffuse.save_checkpoint(state.ref_params, out / "reference.dfpm")
    viz.write_loss_curve_svg(metrics, out / "loss_curve.svg")
    if not state.ref_intact():
        print(json.dumps({"error": "FrozenReferenceViolated"}), file=sys.stderr)
        return EXIT_ASSERTION
    print(f"trained {state.step} updates; artifacts under {out}")
    return EXIT_OK


# --- eval ---------------------------------------------------------------------

EVAL_DEFAULTS = {"n_draws": 32, "beta_dpo": 200.0, "seed": 0, "num_strips": 4}


def cmd_eval(args) -> int:
    out = Path(args.out)
    file_cfg = _load_config_file(args.config) if args.config else {}
    cfg = dict(EVAL_DEFAULTS)
    cfg.update(file_cfg.get("eval", file_cfg))
    cfg = _merge_config(cfg, {
        "n_draws": args.n_draws,
        "beta_dpo": args.beta_dpo,
        "seed": args.seed,
    })
    _write_snapshot(
        out, "eval",
        {"ckpt": str(args.ckpt), "ref": str(args.ref) if args.ref else None, "pairs": str(args.pairs)},
        cfg,
    )

    params = diffuse.load_checkpoint(args.ckpt)
    if args.ref:
        ref = diffuse.load_checkpoint(args.ref)
    else:
        ref = diffuse.init_params(params.config, Stream.from_words(cfg["seed"], "init"))
    state = align.TrainState(
        params=params, ref_params=ref, seed=cfg["seed"], ref_digest=diffuse.params_digest(ref)
    )
    pairs = align.load_eval_pairs(args.pairs)
    schedule = diffuse.default_schedule()
    report = align.evaluate_pairs(
        state, pairs, schedule, n_draws=cfg["n_draws"], beta_dpo=cfg["beta_dpo"], seed=cfg["seed"]
    )
    n = len(report.margins)
    sign_p = float(binomtest(report.positive_margins, n, 0.5, alternative="greater").pvalue) if n else 1.0
    margins = np.asarray(report.margins)
    stats = {
        "num_pairs": n,
        "mean_margin": report.mean_margin,
        "std_margin": float(margins.std(ddof=1)) if n > 1 else 0.0,
        "positive_margins": report.positive_margins,
        "sign_test_p": sign_p,
        "frac_win_lower_error": report.frac_win_lower_error,
        "margins": report.margins,
    }
    with open(out / "margin_stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    conditions = sorted({p.condition for p in pairs})[: cfg["num_strips"]]
    for c in conditions:
        sample = diffuse.ancestral_sample(
            params, c, schedule, Stream.from_words(cfg["seed"], "sample", c)
        )
        viz.write_frame_strip(sample, out / f"sample_c{c}.png")
    print(f"mean margin {report.mean_margin:+.4f} over {n} pairs; report under {out}")
    return EXIT_OK


# --- theory ---------------------------------------------------------------------

def cmd_theory(args) -> int:
    if args.theory_command != "verify":
        raise DfvpoError(f"unknown theory subcommand {args.theory_command!r}")
    names = list(theory.SUITES) if args.suite == "all" else [args.suite]
    results = theory.run_suites(names, args.seed)
    report = [r.to_dict() for r in results]
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump({"seed": args.seed, "checks": report}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    failed = [r for r in results if not r.passed]
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        err = "" if r.max_abs_error is None else f" max_abs_error={r.max_abs_error:.3e}"
        print(f"[{mark}] {r.name}{err} tolerance={r.tolerance}")
    return EXIT_ASSERTION if failed else EXIT_OK


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfvpo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic sprite corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--num-videos", type=int, dest="num_videos")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--channels", type=int, choices=(1, 3))
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pairs", help="manufacture win/lose pairs from a corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--curriculum")
    p.add_argument("--seed", type=int)
    p.add_argument("--stage", type=int)
    p.add_argument("--variants")
    p.add_argument("--config")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("train", help="run preference optimization")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--total-steps", type=int, dest="total_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--beta-dpo", type=float, dest="beta_dpo")
    p.add_argument("--lambda-sft", type=float, dest="lambda_sft")
    p.add_argument("--sft-only", action="store_const", const=True, dest="sft_only", default=None)
    p.add_argument("--dpo-form", choices=("sigmoid", "difference"), dest="dpo_form")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="margin statistics and sample strips")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--ref")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-draws", type=int, dest="n_draws")
    p.add_argument("--beta-dpo", type=float, dest="beta_dpo")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("theory", help="exact verification suites")
    p.add_argument("theory_command", choices=("verify",))
    p.add_argument("--suite", default="all", choices=("all", *theory.SUITES))
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--report")
    p.set_defaults(func=cmd_theory)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, PermissionError, IsADirectoryError, MagicMismatch, TruncatedPayload) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_IO
    except (DfvpoError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ASSERTION


if __name__ == "__main__":
    sys.exit(main())
