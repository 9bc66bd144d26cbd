"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The directional-efficacy
criteria (4-6) train real models and together take tens of minutes on one
desktop CPU; everything else finishes in seconds.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from helpers import finite_difference_grad, max_rel_error
from scipy.stats import binomtest

from dfvpo import diffuse, distort, media, theory
from dfvpo.align import (
    TrainConfig,
    TrainingItem,
    TrainState,
    evaluate_pairs,
    init_train_state,
    regenerate_lose,
    total_loss,
    train_step,
    _batch_loss_and_grad,
)
from dfvpo.cli import main
from dfvpo.diffuse import ModelConfig, build_schedule, init_params, sft_grad, sft_loss
from dfvpo.distort import CurriculumSchedule, CurriculumStage, default_curriculum
from dfvpo.media import SpriteSceneConfig, Video, synth_moving_sprite
from dfvpo.rng import Stream, derive_key, uniform_field

RESULTS: list[str] = []


def _report(criterion: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}"
    RESULTS.append(line)
    print("\n" + line)


# --- criterion 1: theory suite exactness --------------------------------------------

def test_criterion_1_theory_exactness():
    t0 = time.time()
    results = theory.run_suites(["improvement", "bt", "optimal", "offset"], seed=20240)
    elapsed = time.time() - t0

    by_name = {r.name: r for r in results}
    bt_ok = all(
        by_name[f"bt_equivalence_gamma_{g}"].max_abs_error < 1e-10 for g in (1.0, 0.9)
    )
    dominance_ok = by_name["optimal_policy_dominance"].max_abs_error < 1e-10
    closed_ok = by_name["optimal_policy_closed_form"].max_abs_error < 1e-10
    offset_ok = by_name["partition_offset_gamma_1"].max_abs_error < 1e-8
    imp = by_name["policy_improvement"]
    improvement_ok = imp.detail["counterexamples"] == 0 and imp.detail["pairs_checked"] >= 500
    runtime_ok = elapsed < 60.0

    passed = bt_ok and dominance_ok and closed_ok and offset_ok and improvement_ok and runtime_ok
    _report(
        "criterion 1 (theory exactness)",
        passed,
        f"bt<1e-10:{bt_ok} dominance<1e-10:{dominance_ok} closed_form<1e-10:{closed_ok} "
        f"offset<1e-8:{offset_ok} improvement 0/{imp.detail['pairs_checked']} counterexamples "
        f"runtime {elapsed:.1f}s<60s:{runtime_ok}",
    )
    assert passed


# --- criterion 2: gradient exactness --------------------------------------------------

def test_criterion_2_gradient_exactness():
    tiny = ModelConfig(video_shape=(1, 2, 2, 1), hidden=(4, 4), time_dim=4, cond_count=3, cond_dim=3)
    sched = build_schedule(6, 0.05, 0.3)
    config = TrainConfig(
        curriculum=default_curriculum(), beta_dpo=4.0, lambda_sft=0.5, eval_interval=0
    )
    worst_sft = 0.0
    worst_total = 0.0
    n_params = None
    for point in range(20):
        params = init_params(tiny, Stream.from_words(point, "gradcheck"))
        n_params = params.num_params()
        r = np.random.default_rng(point)

        # SFT loss gradient
        batch = [
            (r.random(4), int(r.integers(3)), int(r.integers(1, 7)), r.standard_normal(4))
            for _ in range(2)
        ]

        def sft_at(vec):
            q = params.from_vector(vec)
            return float(np.mean([sft_loss(q, *item, sched) for item in batch]))

        analytic = sft_grad(params, batch, sched).to_vector()
        numeric = finite_difference_grad(sft_at, params.to_vector())
        worst_sft = max(worst_sft, max_rel_error(analytic, numeric))

        # total (DPO + lambda*SFT) loss gradient
        win = Video(r.random((1, 2, 2, 1)))
        lose = Video(np.clip(win.frames + r.normal(0, 0.1, win.frames.shape), 0, 1))
        pair = distort.PreferencePair(
            win=win,
            lose=lose,
            condition=int(r.integers(3)),
            spec=distort.DistortionSpec(
                "spatial", spatial=distort.SpatialSpec(0.0, (0.0,), 0.1, seed=1)
            ),
            provenance=distort.Provenance("g", 0, 0),
        )
        ref = init_params(tiny, Stream.from_words(point, "ref"))
        state = TrainState(params=params, ref_params=ref, seed=0, ref_digest="")
        t = int(r.integers(1, 7))
        eps = r.standard_normal(4)
        _, grad = _batch_loss_and_grad(state, [(pair, t, eps)], sched, config)

        def total_at(vec):
            probe = TrainState(params=params.from_vector(vec), ref_params=ref, seed=0, ref_digest="")
            return total_loss(probe, pair, t, eps, sched, config).total

        numeric_total = finite_difference_grad(total_at, params.to_vector())
        worst_total = max(worst_total, max_rel_error(grad.to_vector(), numeric_total))

    passed = worst_sft < 1e-4 and worst_total < 1e-4
    _report(
        "criterion 2 (gradient exactness)",
        passed,
        f"{n_params}-param model, 20 points, h=1e-5: max rel err sft={worst_sft:.2e} "
        f"total={worst_total:.2e} (tol 1e-4)",
    )
    assert passed


# --- criterion 3: distortion determinism and constraints -------------------------------

def test_criterion_3_distortion_battery():
    t0 = time.time()
    n_ops = 10_000
    curriculum = default_curriculum()
    # pre-built pool of random videos; specs are re-drawn per application
    pool = []
    for i in range(60):
        s = Stream.from_words(i, "battery-video")
        t_len = 10 + s.randint(7)
        h = 8 + s.randint(5)
        w = 8 + s.randint(5)
        c = 1 if s.randint(2) == 0 else 3
        pool.append(Video(s.uniforms((t_len, h, w, c))))

    violations = []
    for i in range(n_ops):
        s = Stream.from_words(i, "battery-spec")
        video = pool[s.randint(len(pool))]
        stage = curriculum.stages[s.randint(3)]
        variant = distort.VARIANTS[s.randint(3)]
        spec = distort.draw_spec(stage, variant, derive_key("bat", i), video.num_frames, video.channels)

        out1 = distort.apply_distortion(video, spec)
        out2 = distort.apply_distortion(video, spec)
        if out1.frames.tobytes() != out2.frames.tobytes():
            violations.append((i, "rerun not bit-identical"))
        if out1.frames.min() < 0.0 or out1.frames.max() > 1.0:
            violations.append((i, "output out of [0,1]"))
        if spec.temporal is not None and spec.temporal.kind == "partial_shuffle":
            ts = spec.temporal
            if ts.block_len > distort.max_block_len(video.num_frames):
                violations.append((i, "block exceeds floor(0.2 T)"))
            if spec.variant == "temporal":
                inside = set(range(ts.block_start, ts.block_start + ts.block_len))
                for f in range(video.num_frames):
                    if f not in inside and not np.array_equal(out1.frames[f], video.frames[f]):
                        violations.append((i, f"frame {f} changed outside block"))
                        break
    elapsed = time.time() - t0
    passed = not violations and elapsed < 30.0
    _report(
        "criterion 3 (distortion battery)",
        passed,
        f"{n_ops} applications, {len(violations)} violations, runtime {elapsed:.1f}s<30s",
    )
    assert passed


# --- shared machinery for criteria 4-6 ---------------------------------------------------

SCENE_VEL = ((1, 1), (1, -1), (-1, 1), (0, 1))
ACCEPT_CURRICULUM = default_curriculum(update_interval=533)
ACCEPT = dict(
    beta_dpo=200.0,
    lambda_sft=0.3,
    learning_rate=3e-4,
    batch_size=2,  # one pair per visit, two (t, eps) draws
    grad_accum_steps=2,
    micro_steps=4000,  # = 2,000 optimizer updates
    hidden=(96, 96),
    n_train=200,
    n_eval=50,
    n_draws=32,
)


def _make_items(n, seed0, variants=("temporal", "spatial", "hybrid")):
    items = []
    for i in range(n):
        cls = i % 4
        cfg = SpriteSceneConfig(
            grid=(32, 32),
            num_frames=16,
            sprite_shape="square" if cls % 2 else "disc",
            sprite_size=6,
            velocity=SCENE_VEL[cls],
            background=0.15,
            seed=seed0 + i,
            channels=1,
        )
        items.append(
            TrainingItem(
                win=synth_moving_sprite(cfg),
                condition=cls,
                variant=variants[i % len(variants)],
                source_id=f"v{seed0 + i}",
            )
        )
    return items


def _heldout_pairs(seed, variants=("temporal", "spatial", "hybrid"), n=50):
    items = _make_items(n, 777_777 + 1000 * seed, variants)
    stage0 = ACCEPT_CURRICULUM.stages[0]
    return [regenerate_lose(it, 0, stage0, 55 + seed, j, 0) for j, it in enumerate(items)]


def _train_model(seed, use_dpo=True, variants=("temporal", "spatial", "hybrid"),
                 micro_steps=None, n_train=None):
    micro_steps = micro_steps or ACCEPT["micro_steps"]
    n_train = n_train or ACCEPT["n_train"]
    items = _make_items(n_train, 1000 * seed, variants)
    config = TrainConfig(
        curriculum=ACCEPT_CURRICULUM,
        total_steps=micro_steps,
        beta_dpo=ACCEPT["beta_dpo"],
        lambda_sft=ACCEPT["lambda_sft"],
        learning_rate=ACCEPT["learning_rate"],
        batch_size=ACCEPT["batch_size"],
        grad_accum_steps=ACCEPT["grad_accum_steps"],
        seed=seed,
        eval_interval=0,
        use_dpo=use_dpo,
    )
    model_cfg = ModelConfig(video_shape=items[0].win.shape, hidden=ACCEPT["hidden"], cond_count=4)
    schedule = diffuse.default_schedule()
    state = init_train_state(model_cfg, config)
    for step_i in range(micro_steps):
        stage_idx = distort.curriculum_update(ACCEPT_CURRICULUM, step_i)
        stage = ACCEPT_CURRICULUM.stages[stage_idx]
        pair = regenerate_lose(
            items[step_i % n_train], stage_idx, stage, seed, step_i % n_train, step_i
        )
        state = train_step(state, [pair] * ACCEPT["batch_size"], config, schedule)
    assert state.ref_intact()
    return state, model_cfg, config


_dpo_cache: dict = {}


def _dpo_battery():
    """5-seed DF-VPO battery shared by criteria 4 and 5."""
    if not _dpo_cache:
        schedule = diffuse.default_schedule()
        reports, init_reports, seconds = [], [], []
        for seed in range(5):
            t0 = time.time()
            state, model_cfg, config = _train_model(seed)
            pairs = _heldout_pairs(seed)
            rep = evaluate_pairs(
                state, pairs, schedule, n_draws=ACCEPT["n_draws"],
                beta_dpo=ACCEPT["beta_dpo"], seed=99 + seed,
            )
            rep0 = evaluate_pairs(
                init_train_state(model_cfg, config), pairs, schedule,
                n_draws=ACCEPT["n_draws"], beta_dpo=ACCEPT["beta_dpo"], seed=99 + seed,
            )
            reports.append(rep)
            init_reports.append(rep0)
            seconds.append(time.time() - t0)
        _dpo_cache["reports"] = reports
        _dpo_cache["init_reports"] = init_reports
        _dpo_cache["runtime"] = sum(seconds)
    return _dpo_cache


def test_criterion_4_directional_efficacy():
    battery = _dpo_battery()
    reports, init_reports = battery["reports"], battery["init_reports"]
    n_eval = ACCEPT["n_eval"]

    pooled_margins = [m for rep in reports for m in rep.margins]
    positives = sum(rep.positive_margins for rep in reports)
    sign_p = binomtest(positives, len(pooled_margins), 0.5, alternative="greater").pvalue
    mean_margin = float(np.mean(pooled_margins))

    frac_trained = float(np.mean([rep.frac_win_lower_error for rep in reports]))
    frac_untrained = float(np.mean([rep.frac_win_lower_error for rep in init_reports]))

    a_ok = mean_margin > 0 and sign_p < 0.01
    b_ok = frac_trained > 0.80 and frac_untrained <= 0.55
    runtime_ok = battery["runtime"] < 20 * 60
    passed = a_ok and b_ok and runtime_ok
    per_seed = " ".join(f"{rep.mean_margin:+.2f}" for rep in reports)
    _report(
        "criterion 4 (directional efficacy)",
        passed,
        f"mean margin {mean_margin:+.3f} (per-seed {per_seed}), sign test {positives}/"
        f"{len(pooled_margins)} p={sign_p:.2e}<0.01:{a_ok}; frac trained {frac_trained:.3f}>0.80 "
        f"untrained {frac_untrained:.3f}<=0.55:{b_ok}; runtime {battery['runtime']:.0f}s<1200s:{runtime_ok}",
    )
    assert passed


def test_criterion_5_dpo_vs_sft_contrast():
    battery = _dpo_battery()
    dpo_positive = (
        float(np.mean([m for rep in battery["reports"] for m in rep.margins])) > 0
        and binomtest(
            sum(rep.positive_margins for rep in battery["reports"]),
            sum(len(rep.margins) for rep in battery["reports"]),
            0.5,
            alternative="greater",
        ).pvalue
        < 0.01
    )
    schedule = diffuse.default_schedule()
    sft_margins = []
    for seed in range(3):
        state, _, _ = _train_model(seed, use_dpo=False)
        rep = evaluate_pairs(
            state, _heldout_pairs(seed), schedule, n_draws=ACCEPT["n_draws"],
            beta_dpo=ACCEPT["beta_dpo"], seed=99 + seed,
        )
        sft_margins.extend(rep.margins)
    sft_margins = np.asarray(sft_margins)
    sft_mean = float(sft_margins.mean())
    sft_se = float(sft_margins.std(ddof=1) / np.sqrt(len(sft_margins)))
    sft_indistinguishable = abs(sft_mean) <= 2 * sft_se

    passed = sft_indistinguishable and dpo_positive
    _report(
        "criterion 5 (DPO vs SFT contrast)",
        passed,
        f"SFT-only margin {sft_mean:+.4f} within 2se ({2 * sft_se:.4f}):{sft_indistinguishable}; "
        f"DF-VPO margin positive per criterion 4:{dpo_positive}",
    )
    assert passed


def test_criterion_6_hybrid_ablation():
    schedule = diffuse.default_schedule()
    arms = {"temporal": ("temporal",), "spatial": ("spatial",), "hybrid": ("hybrid",)}
    own_margins = {name: [] for name in arms}
    hybrid_margins = {name: [] for name in arms}
    for seed in range(5):
        hybrid_pairs = _heldout_pairs(seed, ("hybrid",))
        for name, variants in arms.items():
            state, _, _ = _train_model(
                seed, variants=variants, micro_steps=2400, n_train=120
            )
            own = evaluate_pairs(
                state, _heldout_pairs(seed, variants), schedule,
                n_draws=ACCEPT["n_draws"], beta_dpo=ACCEPT["beta_dpo"], seed=99 + seed,
            )
            hyb = evaluate_pairs(
                state, hybrid_pairs, schedule,
                n_draws=ACCEPT["n_draws"], beta_dpo=ACCEPT["beta_dpo"], seed=99 + seed,
            )
            own_margins[name].append(own.mean_margin)
            hybrid_margins[name].append(hyb.mean_margin)

    own_ok = all(np.median(v) > 0 for v in own_margins.values())
    hybrid_med = {k: float(np.median(v)) for k, v in hybrid_margins.items()}
    ordering_ok = (
        hybrid_med["hybrid"] > hybrid_med["temporal"]
        and hybrid_med["hybrid"] > hybrid_med["spatial"]
    )
    passed = own_ok and ordering_ok
    _report(
        "criterion 6 (hybrid ablation)",
        passed,
        f"own-type medians { {k: round(float(np.median(v)), 3) for k, v in own_margins.items()} } all>0:{own_ok}; "
        f"margins on hybrid pairs {hybrid_med} hybrid-trained highest:{ordering_ok}",
    )
    assert passed


# --- criterion 7: reproducibility -----------------------------------------------------------

def _artifact_bytes(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "resolved_config.json"
    }


def test_criterion_7_reproducibility(tmp_path):
    def pipeline(root: Path) -> dict:
        data = root / "data"
        pairs = root / "pairs"
        run = root / "run"
        ev = root / "eval"
        rep = root / "theory.json"
        assert main(["synth", "--out", str(data), "--num-videos", "20", "--seed", "11"]) == 0
        assert main(["pairs", "--manifest", str(data / "manifest.jsonl"), "--out", str(pairs), "--seed", "12"]) == 0
        assert (
            main(
                [
                    "train", "--pairs", str(pairs / "pairs.jsonl"), "--out", str(run),
                    "--total-steps", "40", "--seed", "13",
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "eval", "--ckpt", str(run / "checkpoint.dfpm"), "--ref",
                    str(run / "reference.dfpm"), "--pairs", str(pairs / "pairs.jsonl"),
                    "--out", str(ev), "--n-draws", "4",
                ]
            )
            == 0
        )
        assert main(["theory", "verify", "--suite", "offset", "--seed", "14", "--report", str(rep)]) == 0
        arts = {}
        for sub in (data, pairs, run, ev):
            arts.update({f"{sub.name}/{k}": v for k, v in _artifact_bytes(sub).items()})
        arts["theory.json"] = rep.read_bytes()
        return arts

    first = pipeline(tmp_path / "one")
    second = pipeline(tmp_path / "two")
    same_keys = first.keys() == second.keys()
    diffs = [k for k in first if same_keys and first[k] != second[k]]
    passed = same_keys and not diffs
    _report(
        "criterion 7 (reproducibility)",
        passed,
        f"{len(first)} artifacts byte-compared across full pipeline re-run; mismatches: {diffs[:5]}",
    )
    assert passed


def test_zzz_summary():
    print("\n" + "=" * 72)
    for line in RESULTS:
        print(line)
    print("=" * 72)
