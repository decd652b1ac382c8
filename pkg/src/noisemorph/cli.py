"""Command-line front end: ``noisegen``, ``denoise`` and ``bench``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .denoise import DenoiserError, register_external_denoiser
from .image import ImageFormatError, RngState, atomic_write, load_image, resolve_image, save_image
from .metrics import psnr, ssim
from .noise import NOISE_KINDS, NoiseSpec, apply_noise
from .pipeline import ConfigError, PipelineError, build_config, parse_config, run_pipeline

log = logging.getLogger("noisemorph")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
REPORT_METRICS = ("noisy_psnr", "noisy_ssim", "direct_psnr", "direct_ssim", "pipeline_psnr", "pipeline_ssim")


class UsageError(Exception):
    pass


def _fmt_db(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.2f}"


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


# -- noisegen ----------------------------------------------------------------


def cmd_noisegen(args) -> int:
    try:
        spec = NoiseSpec(args.kind, args.level, RngState(args.seed))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    clean = load_image(args.input)
    noisy = apply_noise(clean, spec)
    save_image(noisy, args.out)
    stored = np.clip(noisy, 0.0, 1.0) if Path(args.out).suffix.lower() != ".ntf" else noisy
    print(f"PSNR vs input: {_fmt_db(psnr(stored, clean))} dB")
    return EXIT_OK


# -- denoise -----------------------------------------------------------------


def _make_config(path, denoiser_spec: str, seed: int | None):
    den = register_external_denoiser(denoiser_spec)
    values = parse_config(Path(path).read_text(encoding="utf-8")) if path else {}
    if seed is not None:
        values["seed"] = seed
    return build_config(values, den)


def cmd_denoise(args) -> int:
    if args.noise_kind is not None and args.noise_kind not in NOISE_KINDS + ("unknown", "real"):
        raise UsageError(f"unknown noise kind {args.noise_kind!r}")
    try:
        cfg = _make_config(args.config, args.denoiser, args.seed)
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    noisy = load_image(args.input)
    clean = load_image(args.clean) if args.clean else None
    d2, trace = run_pipeline(noisy, cfg, noise_kind=args.noise_kind, clean=clean)
    save_image(d2, args.out)
    if args.trace:
        trace.write_jsonl(args.trace)
    if clean is not None:
        print(f"noisy:    PSNR {_fmt_db(psnr(noisy, clean))} dB  SSIM {ssim(noisy, clean):.4f}")
        print(f"denoised: PSNR {_fmt_db(psnr(d2, clean))} dB  SSIM {ssim(d2, clean):.4f}")
    return EXIT_OK


# -- bench -------------------------------------------------------------------


def _run_key(image: str, noise: dict) -> str:
    return f"{image}|{noise['kind']}|{noise['level']:g}"


def _bench_one(task) -> dict:
    """Run one (image, noise) pair; failures are returned, not raised."""
    image, source, noise, values, denoiser_spec, seed, emit_dir = task
    key = _run_key(image, noise)
    stream = zlib.crc32(key.encode())
    rec = {"image": image, "kind": noise["kind"], "level": noise["level"], "key": key}
    try:
        clean = resolve_image(source)
        noisy = apply_noise(clean, NoiseSpec(noise["kind"], noise["level"], RngState(seed, stream)))
        cfg = build_config(dict(values, seed=seed), register_external_denoiser(denoiser_spec))
        cfg = dataclasses.replace(cfg, rng=RngState(seed, stream))
        direct = cfg.denoiser.denoise_fixed(noisy, cfg.sigma0)
        d2, trace = run_pipeline(noisy, cfg, noise_kind=noise["kind"], clean=clean)
        rec.update(
            noisy_psnr=psnr(noisy, clean), noisy_ssim=ssim(noisy, clean),
            direct_psnr=psnr(direct, clean), direct_ssim=ssim(direct, clean),
            pipeline_psnr=psnr(d2, clean), pipeline_ssim=ssim(d2, clean),
            flags=dataclasses.asdict(trace.flags),
            iterations=[r.summary(timing=False) for r in trace.records],
            status="ok",
        )
        if emit_dir is not None:
            stem = f"{Path(image.split(':')[-1]).stem}_{noise['kind']}_{noise['level']:g}"
            save_image(noisy, Path(emit_dir) / f"{stem}_noisy.png")
            save_image(d2, Path(emit_dir) / f"{stem}_denoised.png")
    except Exception as exc:  # recorded per run; the batch carries on
        rec.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return rec


def _load_job(path: Path) -> dict:
    try:
        job = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"job file {path} is not valid JSON: {exc}") from exc
    if not isinstance(job, dict):
        raise UsageError("job file must hold a JSON object")
    images = job.get("images") or []
    if not images:
        raise UsageError("job has an empty image set")
    noises = job.get("noises") or []
    if not noises:
        raise UsageError("job has no noise specs")
    base = path.parent
    # Reports keep the names as written; loading resolves them against the job file.
    job["sources"] = [im if im.startswith("builtin:") else str((base / im).resolve()) for im in images]
    for n in noises:
        if not isinstance(n, dict) or "kind" not in n or "level" not in n:
            raise UsageError(f"noise entries need 'kind' and 'level', got {n!r}")
        try:
            NoiseSpec(n["kind"], float(n["level"]))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        n["level"] = float(n["level"])
    config = job.get("config", {})
    if isinstance(config, str):
        config = parse_config((base / config).read_text(encoding="utf-8"))
    elif isinstance(config, dict):
        config = parse_config("\n".join(f"{k} = {v}" for k, v in config.items()))
    else:
        raise UsageError("'config' must be an object or a path")
    config.pop("seed", None)
    job["config"] = config
    job["output_dir"] = str(base / job.get("output_dir", "bench_out"))
    return job


def bench_table(records: list[dict]) -> str:
    """Tab-separated means over images, one row per noise setting."""
    groups: dict[tuple, list[dict]] = {}
    for r in records:
        if r["status"] == "ok":
            groups.setdefault((r["kind"], r["level"]), []).append(r)
    lines = ["noise\tlevel\timages\t" + "\t".join(REPORT_METRICS)]
    for (kind, level), rs in sorted(groups.items()):
        means = [float(np.mean([r[m] for r in rs])) for m in REPORT_METRICS]
        cells = [_fmt_db(v) if m.endswith("psnr") else f"{v:.4f}" for m, v in zip(REPORT_METRICS, means)]
        lines.append(f"{kind}\t{level:g}\t{len(rs)}\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    job = _load_job(Path(args.job))
    seed = int(job.get("seed", 0))
    out_dir = Path(job["output_dir"])
    emit_dir = str(out_dir / "images") if job.get("emit_images", False) else None
    denoiser_spec = job.get("denoiser", "builtin")
    try:
        build_config(job["config"], register_external_denoiser(denoiser_spec))
    except (ConfigError, ValueError, DenoiserError) as exc:
        raise UsageError(str(exc)) from exc
    tasks = [
        (im, src, n, job["config"], denoiser_spec, seed, emit_dir)
        for im, src in zip(job["images"], job["sources"])
        for n in job["noises"]
    ]
    workers = max(1, int(args.workers))
    if workers == 1:
        records = [_bench_one(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_bench_one, tasks))
    records.sort(key=lambda r: r["key"])
    table = bench_table(records)
    for r in records:
        for m in REPORT_METRICS:
            if m in r:
                r[m] = _json_num(float(r[m]))
        for it in r.get("iterations", []):
            for k, v in it.items():
                it[k] = _json_num(v)
    failed = [r for r in records if r["status"] != "ok"]
    report = {
        "seed": seed,
        "denoiser": denoiser_spec,
        "config": job["config"],
        "runs": records,
        "failed": len(failed),
    }
    atomic_write(out_dir / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    atomic_write(out_dir / "report.tsv", table)
    sys.stdout.write(table)
    for r in failed:
        print(f"FAILED {r['key']}: {r['error']}", file=sys.stderr)
    return EXIT_FAIL if failed else EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noisemorph", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log pipeline progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("noisegen", help="corrupt an image with synthetic noise")
    g.add_argument("--in", dest="input", required=True)
    g.add_argument("--kind", required=True, choices=NOISE_KINDS)
    g.add_argument("--level", required=True, type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_noisegen)

    d = sub.add_parser("denoise", help="run the transformation pipeline on one image")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--config", help="flat key = value config file")
    d.add_argument("--noise-kind", help="declared noise kind, used to pick the strategy")
    d.add_argument("--clean", help="reference image for PSNR/SSIM")
    d.add_argument("--trace", help="write per-iteration JSON lines here")
    d.add_argument("--denoiser", default="builtin", help="'builtin' or 'exec:<command>'")
    d.add_argument("--seed", type=int, default=None)
    d.set_defaults(func=cmd_denoise)

    b = sub.add_parser("bench", help="run a benchmark grid from a JSON job file")
    b.add_argument("--job", required=True)
    b.add_argument("--workers", type=int, default=1)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"noisemorph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as exc:
        print(f"noisemorph: pipeline failed in {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ImageFormatError, DenoiserError, OSError) as exc:
        print(f"noisemorph: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
