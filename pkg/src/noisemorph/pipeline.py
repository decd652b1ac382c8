"""Iterative noise-transformation denoising loop.

One iteration takes the current structure estimate ``S``, reshapes the
residual ``O - S`` into Gaussian noise of a known level, denoises the
resulting image with a fixed-level Gaussian denoiser, maps the surviving
texture back to the original noise domain and finishes with a level-map
denoising pass.  Its output replaces ``S`` for the next iteration.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import histmatch, shuffle
from .denoise import DctDenoiser, Denoiser, RefineConfig, random_replacement_refine
from .histmatch import MatchConfig
from .image import RngState, as_image, atomic_write
from .metrics import ks_statistic, psnr
from .noise import mean_brightness
from .smoothing import RtvConfig, estimate_initial_noise
from .texture import texture_transform

log = logging.getLogger(__name__)

LEVEL_MAP_BOX = 7
GLOBAL_KINDS = frozenset({"gaussian", "uniform", "salt_pepper", "impulse", "bernoulli"})
SIGNAL_DEPENDENT_KINDS = frozenset({"poisson", "speckle"})
CORRELATED_KINDS = frozenset({"circular_pattern", "stripe", "grid"})
CHANNEL_CORRELATED_KINDS = frozenset({"channel_replicated_gaussian"})

# Sub-stream ids for the random stages of one iteration.
_STABILIZER, _FREQUENCY, _INTRAPATCH, _REFINE = range(1, 5)


@dataclass(frozen=True)
class StrategyFlags:
    local_match: bool = False
    freq_match: bool = False
    use_pd: bool = False
    use_intrapatch: bool = False
    median_window: int = 3
    brightness_threshold: float = 0.2
    pd_without_freq: bool = False

    def __post_init__(self):
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError("median_window must be a positive odd integer")
        if self.use_pd and not self.freq_match and not self.pd_without_freq:
            raise ValueError("use_pd without freq_match needs pd_without_freq = true")


@dataclass(frozen=True)
class PipelineConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    rtv: RtvConfig = field(default_factory=RtvConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    flags: StrategyFlags | None = None
    iterations: int = 3
    patch: int = 2
    median_window: int = 3
    brightness_threshold: float = 0.2
    rng: RngState = field(default_factory=RngState)
    denoiser: Denoiser = field(default_factory=DctDenoiser, compare=False)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.patch < 1:
            raise ValueError("patch must be >= 1")

    @property
    def sigma0(self) -> float:
        return self.match.sigma0


@dataclass
class IterationRecord:
    index: int
    s: np.ndarray
    n1: np.ndarray
    n2: np.ndarray
    t: np.ndarray
    d: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    ks_n1: float
    ks_n2: float
    seconds: float
    psnr: float | None = None

    def summary(self, timing: bool = True) -> dict:
        out = {
            "iteration": self.index,
            "ks_n1": self.ks_n1,
            "ks_n2": self.ks_n2,
            "n2_std": float(np.std(self.n2)),
            "psnr": self.psnr,
        }
        if timing:
            out["seconds"] = self.seconds
        return out


@dataclass
class IterationTrace:
    flags: StrategyFlags
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self, timing: bool = True) -> str:
        return "".join(json.dumps(r.summary(timing), sort_keys=True) + "\n" for r in self.records)

    def write_jsonl(self, path) -> None:
        atomic_write(path, self.to_jsonl())


def select_strategy(noise_kind: str | None, img, flags_override: StrategyFlags | None = None,
                    threshold: float = 0.2, median_window: int = 3) -> StrategyFlags:
    """Pick matching and shuffling options from the declared noise kind.

    Images darker than ``threshold`` always use global matching.
    """
    if flags_override is not None:
        return flags_override
    if noise_kind in GLOBAL_KINDS:
        flags = StrategyFlags()
    elif noise_kind in SIGNAL_DEPENDENT_KINDS:
        flags = StrategyFlags(local_match=True)
    elif noise_kind in CORRELATED_KINDS:
        flags = StrategyFlags(freq_match=True, use_pd=True)
    elif noise_kind in CHANNEL_CORRELATED_KINDS:
        flags = StrategyFlags(use_intrapatch=True)
    else:
        flags = StrategyFlags(local_match=True, freq_match=True, use_pd=True, use_intrapatch=True)
    flags = dataclasses.replace(flags, brightness_threshold=threshold, median_window=median_window)
    if mean_brightness(img) < threshold:
        flags = dataclasses.replace(flags, local_match=False)
    return flags


def level_map(t1: np.ndarray) -> np.ndarray:
    return ndimage.uniform_filter(np.abs(t1), size=(1, LEVEL_MAP_BOX, LEVEL_MAP_BOX), mode="reflect")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


def _checked(stage: str, arr: np.ndarray, shape: tuple) -> np.ndarray:
    if arr.shape != shape:
        raise PipelineError(stage, f"returned shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise PipelineError(stage, "produced non-finite values")
    return arr


def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, str(exc)) from exc


def run_iteration(o, s, cfg: PipelineConfig, iter_index: int, flags: StrategyFlags | None = None,
                  clean=None) -> tuple[np.ndarray, IterationRecord]:
    o = as_image(o)
    s = np.asarray(s, dtype=np.float64)
    shape = o.shape
    _checked("input", s, shape)
    flags = flags or cfg.flags or StrategyFlags()
    rng = cfg.rng.child(iter_index)
    den = cfg.denoiser
    start = time.perf_counter()

    n1 = histmatch.add_stabilizer_noise(o - s, cfg.match.stabilizer_sigma, rng.child(_STABILIZER))
    if flags.local_match:
        n2 = histmatch.local_hist_match(n1, cfg.match)
    else:
        n2 = histmatch.global_hist_match(n1, cfg.match)
    if flags.freq_match and iter_index > 1:
        n2 = histmatch.frequency_hist_match(n2, cfg.match, rng.child(_FREQUENCY))
    _checked("hist_match", n2, shape)
    t = histmatch.assemble_transformed(s, n2)

    x = t
    perm_rec = pd_rec = None
    if flags.use_intrapatch and shape[0] == 3:
        x, perm_rec = shuffle.intrapatch_permute(x, cfg.patch, rng.child(_INTRAPATCH))
    if flags.use_pd:
        x, pd_rec = shuffle.pd_down(x)
    d = _stage("denoise_fixed", den.denoise_fixed, x, cfg.sigma0)
    if pd_rec is not None:
        d = shuffle.pd_up(d, pd_rec)
    if perm_rec is not None:
        d = shuffle.intrapatch_restore(d, perm_rec)
    _checked("denoise_fixed", d, shape)
    if pd_rec is not None or perm_rec is not None:
        refine = dataclasses.replace(cfg.refine, rng=rng.child(_REFINE))
        d = _checked("refine", _stage("refine", random_replacement_refine, d, t, den, cfg.sigma0, refine), shape)

    tex = texture_transform(d, s, n1, n2)
    lm = level_map(tex.t1)
    if den.supports_flexible:
        d2 = _stage("denoise_flexible", den.denoise_flexible, tex.d1, lm)
    else:
        d2 = _stage("denoise_flexible", den.denoise_fixed, tex.d1, float(np.mean(lm)))
    _checked("denoise_flexible", d2, shape)

    rec = IterationRecord(
        index=iter_index, s=s, n1=n1, n2=n2, t=t, d=d, d1=tex.d1, d2=d2,
        ks_n1=ks_statistic(n1, cfg.sigma0), ks_n2=ks_statistic(n2, cfg.sigma0),
        seconds=time.perf_counter() - start,
        psnr=None if clean is None else psnr(d2, clean),
    )
    log.info("iteration %d: ks %.4f -> %.4f", iter_index, rec.ks_n1, rec.ks_n2)
    return d2, rec


def run_pipeline(o, cfg: PipelineConfig, noise_kind: str | None = None, clean=None) -> tuple[np.ndarray, IterationTrace]:
    """Smooth once, then run ``cfg.iterations`` iterations feeding each output back as ``S``."""
    o = as_image(o)
    flags = select_strategy(noise_kind, o, cfg.flags, cfg.brightness_threshold, cfg.median_window)
    s = _stage("smoothing", estimate_initial_noise, o, cfg.rtv, flags.median_window).smoothed
    trace = IterationTrace(flags)
    for k in range(1, cfg.iterations + 1):
        s, rec = run_iteration(o, s, cfg, k, flags, clean=clean)
        trace.records.append(rec)
    return s, trace


# -- config files --------------------------------------------------------------

# key -> (section, field, type)
CONFIG_KEYS = {
    "sigma0": ("match", "sigma0", float),
    "sigma0_255": ("match", "sigma0", lambda v: float(v) / 255.0),
    "bins": ("match", "bins", int),
    "block": ("match", "block", int),
    "overlap": ("match", "overlap", int),
    "stabilizer_sigma": ("match", "stabilizer_sigma", float),
    "rtv_alpha": ("rtv", "alpha", float),
    "rtv_sigma": ("rtv", "sigma_g", float),
    "rtv_iterations": ("rtv", "iterations", int),
    "rtv_epsilon": ("rtv", "epsilon_w", float),
    "solver_tol": ("rtv", "solver_tol", float),
    "solver_max_iter": ("rtv", "solver_max_iter", int),
    "refine_p": ("refine", "probability", float),
    "refine_rounds": ("refine", "rounds", int),
    "local_match": ("flags", "local_match", "bool"),
    "freq_match": ("flags", "freq_match", "bool"),
    "use_pd": ("flags", "use_pd", "bool"),
    "use_intrapatch": ("flags", "use_intrapatch", "bool"),
    "pd_without_freq": ("flags", "pd_without_freq", "bool"),
    "median_window": ("top", "median_window", int),
    "brightness_threshold": ("top", "brightness_threshold", float),
    "iterations": ("top", "iterations", int),
    "patch": ("top", "patch", int),
    "seed": ("top", "seed", int),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def _parse_bool(key: str, v: str) -> bool:
    lv = v.lower()
    if lv in _TRUE:
        return True
    if lv in _FALSE:
        return False
    raise ConfigError(f"{key}: expected a boolean, got {v!r}")


def parse_config(text: str) -> dict[str, object]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        typ = CONFIG_KEYS[key][2]
        try:
            out[key] = _parse_bool(key, value) if typ == "bool" else typ(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return out


def build_config(values: dict[str, object], denoiser: Denoiser | None = None) -> PipelineConfig:
    """Turn parsed values into a :class:`PipelineConfig`.

    Strategy flags are fixed only if the values set at least one strategy
    switch; otherwise they are chosen per image from the noise kind.
    """
    sections: dict[str, dict] = {"match": {}, "rtv": {}, "refine": {}, "flags": {}, "top": {}}
    for key, value in values.items():
        section, name, _ = CONFIG_KEYS[key]
        sections[section][name] = value
    seed = int(sections["top"].pop("seed", 0))
    rng = RngState(seed)
    try:
        flags = None
        if sections["flags"]:
            top = sections["top"]
            flags = StrategyFlags(**sections["flags"], median_window=top.get("median_window", 3),
                                  brightness_threshold=top.get("brightness_threshold", 0.2))
        cfg = PipelineConfig(
            match=MatchConfig(**sections["match"], rng=rng),
            rtv=RtvConfig(**sections["rtv"]),
            refine=RefineConfig(**sections["refine"], rng=rng),
            flags=flags,
            rng=rng,
            denoiser=denoiser or DctDenoiser(),
            **sections["top"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path, denoiser: Denoiser | None = None) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return build_config(parse_config(fh.read()), denoiser)
