"""Command-line front end.

Subcommands:
    rir        render one room impulse response from a saved scene
    simulate   sample scenes and render a synthetic evaluation set
    separate   run the masking/beamforming sequence over a manifest
    evaluate   score separated estimates against the manifest references
    sweep      grid-search beamformer settings and report mean SI-SNRi

Seeds default to the BEAMKIT_SEED environment variable (then 0) unless given
explicitly. All randomness is derived per example from the base seed, so
results do not depend on --jobs.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys

import numpy as np

from .io import Manifest, ManifestEntry, load_manifest, read_wav, save_manifest, write_wav
from .masking import OracleMaskKind
from .metrics import evaluate
from .pipeline import (
    BfMode,
    LoadedExample,
    SweepGrid,
    best_cell,
    default_stages,
    run_sequence,
    sweep,
)
from .roomsim import (
    image_method_rir,
    load_scene,
    render_mixture,
    sample_scene,
    save_scene,
    synthesize_noise_burst,
    synthesize_speech_like,
)
from .stft import MultichannelWaveform

TRACE_INDEX_SCHEMA_VERSION = 1

TASKS = {
    "sep2": {"spatial_sources": 2, "speech": 2, "references": 2, "pit": True},
    "sep3": {"spatial_sources": 3, "speech": 3, "references": 3, "pit": True},
    # speech enhancement: one talker plus three noise sources, scored as
    # two references (speech, summed noise) with a fixed assignment
    "enh2noise3": {"spatial_sources": 4, "speech": 1, "references": 2, "pit": False},
}


def _base_seed(arg_seed: int | None) -> int:
    if arg_seed is not None:
        return arg_seed
    env = os.environ.get("BEAMKIT_SEED")
    return int(env) if env else 0


def _example_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([base_seed, index]))


# ---------------------------------------------------------------------------
# rir


def _cmd_rir(args: argparse.Namespace) -> int:
    scene = load_scene(args.scene)
    rir = image_method_rir(
        scene,
        args.source,
        args.mic,
        sample_rate=args.sample_rate,
        max_order=args.max_order,
        perturb=args.perturb,
    )
    write_wav(args.out, rir.taps[np.newaxis, :], rir.sample_rate, encoding="float32")
    print(f"wrote {args.out}: {rir.taps.size} taps, image order <= {rir.max_order}")
    return 0


# ---------------------------------------------------------------------------
# simulate


def _load_speech_pool(speech_dir: str, sample_rate: int) -> "tuple[str, ...]":
    names = sorted(
        os.path.join(speech_dir, f)
        for f in os.listdir(speech_dir)
        if f.lower().endswith(".wav")
    )
    if not names:
        raise ValueError(f"no .wav files in {speech_dir}")
    probe = read_wav(names[0])
    if probe.sample_rate != sample_rate:
        raise ValueError(
            f"{names[0]}: sample rate {probe.sample_rate} != {sample_rate}"
        )
    return tuple(names)


def _speech_clip(
    path: str, num_samples: int, rng: np.random.Generator
) -> np.ndarray:
    wav = read_wav(path)
    mono = wav.samples.mean(axis=0)
    if mono.size >= num_samples:
        start = int(rng.integers(0, mono.size - num_samples + 1))
        clip = mono[start : start + num_samples]
    else:
        reps = -(-num_samples // mono.size)
        clip = np.tile(mono, reps)[:num_samples]
    peak = np.max(np.abs(clip))
    if peak <= 0.0:
        raise ValueError(f"{path}: silent clip")
    return clip * (0.5 / peak)


def _simulate_worker(params: tuple) -> dict:
    (index, base_seed, out_dir, task_name, duration, sample_rate, mics,
     max_order, speech_files) = params
    task = TASKS[task_name]
    rng = _example_rng(base_seed, index)
    scene = sample_scene(rng, task["spatial_sources"], mic_subset=mics)
    n = int(round(duration * sample_rate))

    waveforms = []
    for s in range(task["spatial_sources"]):
        if s < task["speech"]:
            if speech_files:
                path = speech_files[int(rng.integers(0, len(speech_files)))]
                waveforms.append(_speech_clip(path, n, rng))
            else:
                waveforms.append(synthesize_speech_like(rng, n, sample_rate))
        else:
            waveforms.append(synthesize_noise_burst(rng, n, sample_rate))

    mixture, images = render_mixture(
        scene, waveforms, rng, sample_rate=sample_rate, max_order=max_order
    )
    if task_name == "enh2noise3":
        noise_sum = np.sum([img.samples for img in images[1:]], axis=0)
        images = [images[0], MultichannelWaveform(noise_sum, sample_rate)]

    name = f"ex{index:04d}"
    write_wav(os.path.join(out_dir, f"{name}_mixture.wav"), mixture)
    image_names = []
    for j, img in enumerate(images):
        fname = f"{name}_image{j}.wav"
        write_wav(os.path.join(out_dir, fname), img)
        image_names.append(fname)
    scene_name = f"{name}_scene.json"
    save_scene(os.path.join(out_dir, scene_name), scene)
    return {
        "name": name,
        "task": task_name,
        "mixture": f"{name}_mixture.wav",
        "images": image_names,
        "scene": scene_name,
    }


def _cmd_simulate(args: argparse.Namespace) -> int:
    base_seed = _base_seed(args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    speech_files: "tuple[str, ...]" = ()
    if args.speech_dir:
        speech_files = _load_speech_pool(args.speech_dir, args.sample_rate)

    params = [
        (i, base_seed, args.out_dir, args.task, args.duration,
         args.sample_rate, args.mics, args.max_order, speech_files)
        for i in range(args.num_examples)
    ]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            raw_entries = list(pool.map(_simulate_worker, params))
    else:
        raw_entries = [_simulate_worker(p) for p in params]

    entries = tuple(
        ManifestEntry(
            name=e["name"],
            task=e["task"],
            mixture=e["mixture"],
            images=tuple(e["images"]),
            scene=e["scene"],
        )
        for e in raw_entries
    )
    manifest_path = os.path.join(args.out_dir, "manifest.json")
    save_manifest(manifest_path, Manifest(args.sample_rate, entries))
    print(f"wrote {args.num_examples} examples to {args.out_dir} (seed {base_seed})")
    return 0


# ---------------------------------------------------------------------------
# separate


def _load_example(entry: ManifestEntry, sample_rate: int) -> LoadedExample:
    mixture = read_wav(entry.mixture)
    if mixture.sample_rate != sample_rate:
        raise ValueError(
            f"{entry.mixture}: sample rate {mixture.sample_rate} != {sample_rate}"
        )
    images = [read_wav(p) for p in entry.images]
    return LoadedExample(mixture, images, name=entry.name, task=entry.task)


def _stages_from_args(args: argparse.Namespace, sample_rate: int):
    mode = BfMode(args.bf_mode)
    if mode is BfMode.NONE:
        return default_stages(0, ref_channel=args.ref_channel)
    return default_stages(
        num_bf_stages=args.bf_stages,
        bf_mode=mode,
        win_ms=args.window_ms,
        context=args.context,
        block_frames=args.block_frames,
        ref_channel=args.ref_channel,
        loading=args.loading,
        sample_rate=sample_rate,
    )


def _separate_worker(params: tuple) -> dict:
    entry, sample_rate, out_dir, args = params
    example = _load_example(entry, sample_rate)
    if args.mics is not None:
        example = example.subset(args.mics)
    stages = _stages_from_args(args, sample_rate)
    trace = run_sequence(
        example.mixture,
        example.images,
        stages,
        oracle_kind=OracleMaskKind(args.mask_kind),
    )
    stage_files: "dict[str, list[str]]" = {}
    for key, est in trace.stages.items():
        files = []
        for j in range(est.shape[0]):
            fname = f"{entry.name}_{key}_s{j}.wav"
            write_wav(os.path.join(out_dir, fname), est[j : j + 1], sample_rate)
            files.append(fname)
        stage_files[key] = files
    return {
        "name": entry.name,
        "task": entry.task,
        "stages": stage_files,
        "timing": {k: round(v, 4) for k, v in trace.timing.items()},
    }


def _cmd_separate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    os.makedirs(args.out_dir, exist_ok=True)
    params = [(e, manifest.sample_rate, args.out_dir, args) for e in manifest.entries]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            examples = list(pool.map(_separate_worker, params))
    else:
        examples = [_separate_worker(p) for p in params]
    index = {
        "schema_version": TRACE_INDEX_SCHEMA_VERSION,
        "sample_rate": manifest.sample_rate,
        "manifest": os.path.abspath(args.manifest),
        "examples": examples,
    }
    index_path = os.path.join(args.out_dir, "trace_index.json")
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"separated {len(examples)} examples into {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    with open(args.trace_index) as fh:
        index = json.load(fh)
    if index.get("schema_version") != TRACE_INDEX_SCHEMA_VERSION:
        raise ValueError(f"{args.trace_index}: unsupported trace index version")
    trace_dir = os.path.dirname(os.path.abspath(args.trace_index))
    by_name = {e.name: e for e in manifest.entries}

    rows = []
    per_example = {}
    for ex in index["examples"]:
        entry = by_name.get(ex["name"])
        if entry is None:
            raise ValueError(f"{ex['name']}: not present in {args.manifest}")
        stage = args.stage or list(ex["stages"])[-1]
        if stage not in ex["stages"]:
            raise ValueError(f"{ex['name']}: no stage {stage} in trace index")
        estimates = np.stack(
            [
                read_wav(os.path.join(trace_dir, f)).samples[0]
                for f in ex["stages"][stage]
            ]
        )
        example = _load_example(entry, manifest.sample_rate)
        refs = np.stack(
            [img.samples[args.ref_channel] for img in example.images]
        )
        pit = TASKS.get(entry.task, {"pit": True})["pit"]
        report = evaluate(
            estimates,
            refs,
            example.mixture.samples[args.ref_channel],
            permutation_invariant=pit,
        )
        for j in range(refs.shape[0]):
            rows.append(
                (
                    ex["name"], stage, j,
                    report.si_snr_db[j],
                    report.mixture_si_snr_db[j],
                    report.si_snri_db[j],
                )
            )
        per_example[ex["name"]] = {
            "stage": stage,
            "si_snr_db": [float(v) for v in report.si_snr_db],
            "si_snri_db": [float(v) for v in report.si_snri_db],
            "permutation": list(report.permutation),
        }

    with open(args.report, "w") as fh:
        fh.write("example\tstage\tsource\tsi_snr_db\tmixture_si_snr_db\tsi_snri_db\n")
        for name, stage, j, snr, mix_snr, snri in rows:
            fh.write(f"{name}\t{stage}\t{j}\t{snr:.3f}\t{mix_snr:.3f}\t{snri:.3f}\n")

    mean_si_snr = float(np.mean([r[3] for r in rows]))
    mean_si_snri = float(np.mean([r[5] for r in rows]))
    summary = {
        "num_examples": len(per_example),
        "mean_si_snr_db": mean_si_snr,
        "mean_si_snri_db": mean_si_snri,
        "per_example": per_example,
    }
    summary_path = os.path.splitext(args.report)[0] + ".json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"{len(per_example)} examples: mean SI-SNR {mean_si_snr:.2f} dB, "
        f"mean SI-SNRi {mean_si_snri:.2f} dB"
    )
    return 0


# ---------------------------------------------------------------------------
# sweep


def _parse_floats(text: str) -> "tuple[float, ...]":
    return tuple(float(v) for v in text.split(","))


def _parse_ints(text: str) -> "tuple[int, ...]":
    return tuple(int(v) for v in text.split(","))


def _parse_blocks(text: str) -> "tuple[int | None, ...]":
    out: "list[int | None]" = []
    for v in text.split(","):
        v = v.strip().lower()
        out.append(None if v in ("none", "full") else int(v))
    return tuple(out)


def _sweep_cell_worker(params: tuple):
    examples, grid, pit = params
    return sweep(examples, grid, permutation_invariant=pit)


def _cmd_sweep(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    examples = [_load_example(e, manifest.sample_rate) for e in manifest.entries]
    pit = all(TASKS.get(e.task, {"pit": True})["pit"] for e in manifest.entries)
    grid = SweepGrid(
        mode=BfMode(args.mode),
        windows_ms=_parse_floats(args.windows_ms),
        contexts=_parse_ints(args.contexts),
        block_frames=_parse_blocks(args.blocks),
        mic_counts=_parse_ints(args.mics),
        ref_channel=args.ref_channel,
        loading=args.loading,
    )
    if args.jobs > 1:
        # one single-cell grid per worker keeps result order deterministic
        subgrids = [
            SweepGrid(
                mode=grid.mode, windows_ms=(w,), contexts=(c,),
                block_frames=(b,), mic_counts=(m,),
                ref_channel=grid.ref_channel, loading=grid.loading,
            )
            for (w, c, b, m) in grid.cells()
        ]
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            parts = pool.map(
                _sweep_cell_worker, [(examples, g, pit) for g in subgrids]
            )
            cells = [cell for part in parts for cell in part]
    else:
        cells = sweep(examples, grid, permutation_invariant=pit)

    with open(args.report, "w") as fh:
        fh.write("label\twindow_ms\tcontext\tblock_frames\tmics\tmean_si_snri_db\n")
        for c in cells:
            block = "full" if c.block_frames is None else str(c.block_frames)
            fh.write(
                f"{c.label}\t{c.window_ms:g}\t{c.context}\t{block}\t"
                f"{c.mic_count}\t{c.mean_si_snri:.3f}\n"
            )

    # numeric-only companion for plotting tools (0 block = full utterance)
    dat_path = os.path.splitext(args.report)[0] + ".dat"
    with open(dat_path, "w") as fh:
        fh.write("# window_ms context block_frames mics mean_si_snri_db\n")
        for c in cells:
            fh.write(
                f"{c.window_ms:g} {c.context} {c.block_frames or 0} "
                f"{c.mic_count} {c.mean_si_snri:.6f}\n"
            )

    best = best_cell(cells)
    summary = {
        "num_examples": len(examples),
        "cells": [
            {
                "label": c.label,
                "window_ms": c.window_ms,
                "context": c.context,
                "block_frames": c.block_frames,
                "mics": c.mic_count,
                "mean_si_snri_db": c.mean_si_snri,
                "per_example_si_snri_db": list(c.per_example),
            }
            for c in cells
        ],
        "best": {"label": best.label, "mics": best.mic_count,
                 "block_frames": best.block_frames,
                 "mean_si_snri_db": best.mean_si_snri},
    }
    summary_path = os.path.splitext(args.report)[0] + ".json"
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"best cell: {best.label} ({best.mic_count} mics) "
          f"mean SI-SNRi {best.mean_si_snri:.2f} dB")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamkit",
        description="mask-driven multichannel Wiener beamforming toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rir", help="render one room impulse response")
    p.add_argument("--scene", required=True, help="scene JSON path")
    p.add_argument("--source", type=int, default=0)
    p.add_argument("--mic", type=int, default=0)
    p.add_argument("--out", required=True, help="output WAV path")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--max-order", type=int, default=None)
    p.add_argument("--perturb", type=float, default=0.08,
                   help="image perturbation range in metres")
    p.set_defaults(func=_cmd_rir)

    p = sub.add_parser("simulate", help="render a synthetic evaluation set")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--num-examples", type=int, default=20)
    p.add_argument("--task", choices=sorted(TASKS), default="sep2")
    p.add_argument("--seed", type=int, default=None,
                   help="base seed (default: BEAMKIT_SEED env var, then 0)")
    p.add_argument("--duration", type=float, default=10.0, help="seconds")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--mics", type=int, default=8, choices=(1, 2, 4, 8))
    p.add_argument("--max-order", type=int, default=None)
    p.add_argument("--speech-dir", default=None,
                   help="draw speech from WAV files here instead of synthesizing")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("separate", help="run masking/beamforming over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--bf-mode", default="ti",
                   choices=[m.value for m in BfMode])
    p.add_argument("--bf-stages", type=int, default=2,
                   help="number of masking+beamforming rounds before the final mask")
    p.add_argument("--window-ms", type=float, default=64.0)
    p.add_argument("--context", type=int, default=4,
                   help="total context frames per channel")
    p.add_argument("--block-frames", type=int, default=None)
    p.add_argument("--ref-channel", type=int, default=0)
    p.add_argument("--loading", type=float, default=1e-4)
    p.add_argument("--mics", type=int, default=None, choices=(1, 2, 4, 8))
    p.add_argument("--mask-kind", default="wiener_like",
                   choices=[k.value for k in OracleMaskKind])
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_separate)

    p = sub.add_parser("evaluate", help="score separated estimates")
    p.add_argument("--manifest", required=True)
    p.add_argument("--trace-index", required=True)
    p.add_argument("--report", required=True, help="output TSV path")
    p.add_argument("--stage", default=None,
                   help="trace stage to score (default: last, e.g. MN3)")
    p.add_argument("--ref-channel", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="grid-search beamformer settings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True, help="output TSV path")
    p.add_argument("--mode", default="ti", choices=("ti", "tvf"))
    p.add_argument("--windows-ms", default="32,64,128,256")
    p.add_argument("--contexts", default="1,4")
    p.add_argument("--blocks", default="full",
                   help="comma list of block frame counts, 'full' for whole utterance")
    p.add_argument("--mics", default="8")
    p.add_argument("--ref-channel", type=int, default=0)
    p.add_argument("--loading", type=float, default=1e-4)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    return parser


def main(argv: "list[str] | None" = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"beamkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
