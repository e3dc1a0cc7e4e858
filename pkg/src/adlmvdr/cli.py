"""Command-line entry point: ``adlmvdr <command> [--config FILE] [flags]``.

Every command reads defaults, then an optional JSON config file, then
explicit flags (highest priority). Unknown config keys are errors. Exit
codes: 0 ok, 2 configuration error, 3 numeric error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import struct
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import estimators as est_mod
from .adl import AdlMvdrConfig, adl_mvdr_separate
from .beamform import chunk_mvdr, doa_steering, mf_mvdr_separate, recursive_mvdr
from .corpus import synthetic_speech
from .errors import AdlMvdrError, ConfigurationError, FormatError
from .features import compute_df, compute_ipd, compute_lps
from .gru import GruNetParams, read_params, write_params
from .manifest import atomic_write_bytes, atomic_write_text, build_manifest, write_json
from .metrics import MetricRow, aggregate_report, evaluate, si_snr_db
from .mvdr import beam_pattern, read_weights, write_weights
from .room import (
    ArrayGeometry,
    ArrayScene,
    SceneRanges,
    fig6_scene,
    min_interferer_angle,
    random_scene,
    resolve_channels,
    synthesize_mixture,
)
from .signal_core import DEFAULT_SAMPLE_RATE, StftConfig, TimeSignal, istft, read_wav, stft, write_wav
from .training import (
    TrainConfig,
    inverse_error,
    steering_error,
    synthetic_streams,
    train_gru_supervised,
)

COMPONENTS = ("mixture", "target", "interference", "noise")
BEAMFORM_MODES = ("mvdr-chunk", "mvdr-recursive", "mf-mvdr", "adl-mvdr")
ESTIMATORS = ("oracle-crm", "oracle-crf", "oracle-ideal", "loaded", "passthrough")
SWEEP_AXES = ("crf-size", "mf-size", "channels")


# ------------------------------------------------------------- parsing helpers

def _floats(text, n=None) -> tuple:
    if isinstance(text, (list, tuple)):
        vals = tuple(float(v) for v in text)
    else:
        try:
            vals = tuple(float(v) for v in str(text).split(",") if v.strip())
        except ValueError as exc:
            raise ConfigurationError(f"expected comma-separated numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigurationError(f"expected {n} numbers, got {text!r}")
    return vals


def _ints(text, n=None) -> tuple:
    vals = _floats(text, n)
    if any(v != int(v) for v in vals):
        raise ConfigurationError(f"expected integers, got {text!r}")
    return tuple(int(v) for v in vals)


def _crf_extents(text) -> tuple:
    """``"3x3"`` -> ``((1, 1), (1, 1))``; sizes must be odd."""
    try:
        nt, nf = (int(v) for v in str(text).lower().split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"cRF size must look like TxF, got {text!r}") from exc
    if nt < 1 or nf < 1 or nt % 2 == 0 or nf % 2 == 0:
        raise ConfigurationError(f"cRF sizes must be odd and positive, got {text!r}")
    return ((nt - 1) // 2, (nt - 1) // 2), ((nf - 1) // 2, (nf - 1) // 2)


def _mf_frames(L: int) -> tuple:
    """Split an MF size into ``(L1, L2)`` with the current frame counted in L1."""
    if L < 1:
        raise ConfigurationError(f"MF size must be >= 1, got {L}")
    L2 = (L - 1) // 2
    return L - L2, L2


def _pairs(text) -> tuple:
    out = []
    for item in str(text).split(","):
        try:
            a, b = item.split("-")
            out.append((int(a), int(b)))
        except ValueError as exc:
            raise ConfigurationError(f"pairs must look like 0-14,1-13; got {text!r}") from exc
    return tuple(out)


def _scene_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


# ------------------------------------------------------------- scene files

def load_scene(scene_dir) -> dict:
    """Read a scene directory written by ``simulate``."""
    scene_dir = Path(scene_dir)
    meta_path = scene_dir / "scene.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{meta_path}: missing scene description") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: {exc}") from exc
    geo = ArrayGeometry(np.array(meta["geometry"]["mic_positions"]), meta["geometry"]["reference_channel"])
    signals = {name: read_wav(scene_dir / f"{name}.wav") for name in COMPONENTS}
    return {"meta": meta, "scene": ArrayScene.from_dict(meta["scene"]), "geometry": geo, "signals": signals,
            "id": meta.get("id", scene_dir.name)}


def _scene_meta(scene_id: str, scene: ArrayScene, geo: ArrayGeometry, sample_rate: int, duration: float) -> dict:
    return {
        "id": scene_id,
        "scene": scene.to_dict(),
        "geometry": {"mic_positions": geo.mic_positions.tolist(), "reference_channel": geo.reference_channel},
        "sample_rate": sample_rate,
        "duration": duration,
        "speaker_count": scene.num_sources,
        "min_interferer_angle_deg": min_interferer_angle(scene),
    }


def _simulate_one(args) -> dict:
    index, cfg = args
    seed = _scene_seed(cfg["seed"], index)
    ranges = SceneRanges(room_min=_floats(cfg["room_min"], 3), room_max=_floats(cfg["room_max"], 3),
                         rt60=_floats(cfg["rt60_range"], 2), distance=_floats(cfg["distance_range"], 2),
                         snr_db=_floats(cfg["snr_range"], 2), sir_db=_floats(cfg["sir_range"], 2),
                         num_sources=_ints(cfg["speaker_range"], 2))
    speakers = int(cfg["speakers"]) or None
    scene, geo = random_scene(seed, ranges=ranges, num_sources=speakers)
    n_src = scene.num_sources
    dry = [synthetic_speech(_scene_seed(seed, 100 + k), cfg["duration"]) for k in range(n_src)]
    mix = synthesize_mixture(scene, geo, dry)
    scene_id = f"scene_{index:04d}"
    out = Path(cfg["out"]) / scene_id
    out.mkdir(parents=True, exist_ok=True)
    for name, sig in zip(COMPONENTS, (mix.mixture, mix.target, mix.interference, mix.noise)):
        path = out / f"{name}.wav"
        tmp = out / f".{name}.wav.tmp"
        write_wav(sig, tmp, cfg["encoding"])
        tmp.replace(path)
    meta = _scene_meta(scene_id, scene, geo, DEFAULT_SAMPLE_RATE, cfg["duration"])
    write_json(out / "scene.json", meta)
    return meta


# ------------------------------------------------------------- commands

def cmd_simulate(cfg: dict) -> int:
    """Simulate seeded multi-talker scenes to WAV files."""
    if cfg["num_scenes"] < 1:
        raise ConfigurationError("num_scenes must be at least 1")
    if cfg["encoding"] not in ("float32", "float64", "pcm16"):
        raise ConfigurationError(f"unknown encoding {cfg['encoding']!r}")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, cfg) for i in range(cfg["num_scenes"])]
    metas = _pool_map(_simulate_one, jobs, cfg["workers"])
    outputs, scenes = {}, []
    for meta in metas:
        sid = meta["id"]
        for name in COMPONENTS + ("scene",):
            suffix = "json" if name == "scene" else "wav"
            outputs[f"{sid}/{name}"] = out / sid / f"{name}.{suffix}"
        scenes.append({k: meta[k] for k in ("id", "speaker_count", "min_interferer_angle_deg")}
                      | {"doa_deg": meta["scene"]["doa_deg"], "rt60": meta["scene"]["rt60"],
                         "snr_db": meta["scene"]["snr_db"], "sir_db": meta["scene"]["sir_db"]})
    write_json(out / "manifest.json", build_manifest("simulate", cfg, outputs, out, extra={"scenes": scenes}))
    return 0


def _write_tensor(path, arr: np.ndarray) -> None:
    """Binary tensor: magic ``TNSR``, uint32 ndim, uint32 dims, little-endian float64 body."""
    arr = np.asarray(arr, dtype="<f8")
    atomic_write_bytes(path, b"TNSR" + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape) + arr.tobytes())


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != b"TNSR" or len(raw) < 8:
        raise FormatError(f"{path}: not a tensor file")
    (ndim,) = struct.unpack("<I", raw[4:8])
    shape = struct.unpack(f"<{ndim}I", raw[8:8 + 4 * ndim])
    body = np.frombuffer(raw[8 + 4 * ndim:], dtype="<f8")
    if body.size != int(np.prod(shape)):
        raise FormatError(f"{path}: body does not match header")
    return body.reshape(shape)


def _write_matrix_csv(path, mat: np.ndarray) -> None:
    T, F = mat.shape
    lines = ["frame," + ",".join(f"bin{f}" for f in range(F))]
    lines += [f"{t}," + ",".join(f"{v:.9g}" for v in mat[t]) for t in range(T)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def cmd_features(cfg: dict) -> int:
    """Compute LPS, IPD and directional features for a scene."""
    data = load_scene(cfg["scene"])
    pairs = _pairs(cfg["pairs"])
    spec = stft(data["signals"]["mixture"])
    theta = cfg["doa"] if cfg["doa"] is not None else data["scene"].doa_deg[data["scene"].target_index]
    feats = {
        "lps": compute_lps(spec, int(cfg["channel"])),
        "ipd": compute_ipd(spec, pairs),
        "df": compute_df(spec, float(theta), data["geometry"], pairs),
    }
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for name, arr in feats.items():
        if cfg["format"] == "bin":
            outputs[name] = out / f"{name}.bin"
            _write_tensor(outputs[name], arr)
        elif cfg["format"] == "csv":
            mats = [(name, arr)] if arr.ndim == 2 else [(f"{name}_p{p}", a) for p, a in enumerate(arr)]
            for fname, mat in mats:
                outputs[fname] = out / f"{fname}.csv"
                _write_matrix_csv(outputs[fname], mat)
        else:
            raise ConfigurationError(f"unknown feature format {cfg['format']!r}")
    write_json(out / "manifest.json", build_manifest("features", cfg, outputs, out,
                                                     extra={"pairs": pairs, "doa_deg": float(theta)}))
    return 0


def _estimates(cfg: dict, Y: np.ndarray, X: np.ndarray):
    kind = cfg["estimator"]
    if kind == "oracle-crm":
        return est_mod.oracle_estimates(Y, X, "crm")
    if kind == "oracle-crf":
        te, fe = _crf_extents(cfg["crf"])
        return est_mod.oracle_estimates(Y, X, "crf", te, fe)
    if kind == "oracle-ideal":
        return est_mod.oracle_estimates(Y, X, "ideal")
    if kind == "passthrough":
        return est_mod.passthrough_estimates(Y)
    if kind == "loaded":
        if not cfg["speech_filter"] or not cfg["noise_filter"]:
            raise ConfigurationError("the loaded estimator needs speech_filter and noise_filter files")
        return est_mod.filter_estimates(Y, est_mod.read_crf(cfg["speech_filter"]), est_mod.read_crf(cfg["noise_filter"]))
    raise ConfigurationError(f"unknown estimator {kind!r}; expected one of {ESTIMATORS}")


def _check_channels(channels, num_mics: int) -> tuple:
    channels = resolve_channels(channels)
    if not channels or len(set(channels)) != len(channels) or min(channels) < 0 or max(channels) >= num_mics:
        raise ConfigurationError(f"invalid channel subset {channels} for a {num_mics}-mic array")
    return channels


def _adl_params(cfg: dict, acfg: AdlMvdrConfig):
    if bool(cfg["v_params"]) != bool(cfg["inv_params"]):
        raise ConfigurationError("give both v_params and inv_params, or neither")
    if cfg["v_params"]:
        return read_params(cfg["v_params"]), read_params(cfg["inv_params"])
    return acfg.init_params(int(cfg["seed"]))


def separate(cfg: dict, signals: dict, geometry: ArrayGeometry, scene: ArrayScene | None = None):
    """Run one beamformer mode on in-memory scene signals.

    Returns ``(enhanced TimeSignal, BeamformerWeights, info dict)``; the
    enhanced signal is aligned with the reference channel of ``channels``.
    """
    channels = _check_channels(cfg["channels"], geometry.num_mics)
    mode = cfg["mode"]
    if mode not in BEAMFORM_MODES:
        raise ConfigurationError(f"unknown mode {mode!r}; expected one of {BEAMFORM_MODES}")
    mixture = signals["mixture"].select(channels)
    Y = stft(mixture)
    X = stft(signals["target"].select(channels))
    est = _estimates(cfg, Y.bins, X.bins)
    info = {"estimator": est.source.value, "method": est.method}
    if mode == "mvdr-chunk":
        steering = None
        if cfg["solution"] == "doa":
            if scene is None or not scene.doa_deg:
                raise ConfigurationError("the doa solution needs a scene with ground-truth DOA")
            sub = geometry.subset(channels)
            steering = doa_steering(sub, scene.doa_deg[scene.target_index], Y.config.bin_frequencies(Y.sample_rate))
        res = chunk_mvdr(Y.bins, est, cfg["solution"], 0, cfg["loading"], steering)
    elif mode == "mvdr-recursive":
        res = recursive_mvdr(Y.bins, est, int(cfg["block"]), int(cfg["hop"]), float(cfg["forgetting"]),
                             cfg["solution"], 0, cfg["loading"])
    elif mode == "mf-mvdr":
        L1, L2 = _ints(cfg["frames"], 2)
        res = mf_mvdr_separate(Y.bins, est, L1, L2, 0, cfg["loading"])
    else:
        L1, L2 = _ints(cfg["frames"], 2)
        acfg = AdlMvdrConfig(cfg["adl_mode"], tuple(range(len(channels))), (1, 0) if cfg["adl_mode"] == "MC" else (L1, L2),
                             v_hidden=_ints(cfg["v_hidden"]), inv_hidden=_ints(cfg["inv_hidden"]))
        v_params, inv_params = _adl_params(cfg, acfg)
        res = adl_mvdr_separate(Y.bins, est, v_params, inv_params, acfg)
        info["flagged_frames"] = int(res.flags.sum())
    enhanced = istft(Y.with_bins(res.output[None]), length=mixture.num_samples)
    return enhanced, res.weights, info


def cmd_beamform(cfg: dict) -> int:
    """Separate the target of a scene with one beamformer mode."""
    data = load_scene(cfg["scene"])
    enhanced, weights, info = separate(cfg, data["signals"], data["geometry"], data["scene"])
    channels = resolve_channels(cfg["channels"])
    ref = data["signals"]["target"].samples[channels[0]]
    mix = data["signals"]["mixture"].samples[channels[0]]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    wav, wts = out / "enhanced.wav", out / "weights.bin"
    tmp = out / ".enhanced.wav.tmp"
    write_wav(enhanced, tmp, "float32")
    tmp.replace(wav)
    tmp = out / ".weights.bin.tmp"
    write_weights(weights, tmp)
    tmp.replace(wts)
    row = evaluate(data["id"], cfg["mode"], read_wav(wav).samples[0], ref, data["scene"].num_sources,
                   min_interferer_angle(data["scene"]))
    metrics = {"row": row.__dict__, "mixture_si_snr_db": si_snr_db(mix, ref)}
    metrics["si_snr_improvement_db"] = row.si_snr_db - metrics["mixture_si_snr_db"]
    write_json(out / "metrics.json", metrics)
    outputs = {"enhanced": wav, "weights": wts, "metrics": out / "metrics.json"}
    write_json(out / "manifest.json", build_manifest("beamform", cfg, outputs, out, info["estimator"], {"info": info}))
    return 0


def cmd_train_gru(cfg: dict) -> int:
    """Train a GRU net on synthetic covariance streams."""
    task = cfg["task"]
    train = synthetic_streams(task, int(cfg["seed"]), int(cfg["sequences"]), int(cfg["frames"]), int(cfg["dim"]))
    test = synthetic_streams(task, int(cfg["seed"]) + 10_000, int(cfg["test_sequences"]), int(cfg["frames"]),
                             int(cfg["dim"]))
    params = GruNetParams.init(train.inputs.shape[-1], _ints(cfg["hidden"]), train.targets.shape[-1],
                               int(cfg["seed"]), f"supervised-{task}")
    if cfg["nesterov"] not in ("yes", "no"):
        raise ConfigurationError("nesterov must be 'yes' or 'no'")
    tcfg = TrainConfig(int(cfg["steps"]), float(cfg["lr"]), float(cfg["momentum"]), cfg["nesterov"] == "yes",
                       int(cfg["batch"]), int(cfg["seed"]), int(cfg["log_every"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    result = train_gru_supervised(params, train, tcfg, log_path=out / "loss.csv")
    write_params(result.params, out / "params.gru")
    err = (inverse_error if task == "inverse" else steering_error)(result.params, test)
    metrics = {"task": task, "final_loss": float(result.losses[-1]), "held_out_error": err,
               "error_kind": "relative_frobenius" if task == "inverse" else "mean_sin_angle"}
    write_json(out / "metrics.json", metrics)
    outputs = {"params": out / "params.gru", "loss_log": out / "loss.csv", "metrics": out / "metrics.json"}
    write_json(out / "manifest.json", build_manifest("train-gru", cfg, outputs, out))
    return 0


def _rows_from_runs(runs) -> list:
    rows = []
    for run in runs:
        run = Path(run)
        try:
            manifest = json.loads((run / "manifest.json").read_text())
        except (FileNotFoundError, json.JSONDecodeError) as exc:
            raise FormatError(f"{run}: not a beamform output directory ({exc})") from exc
        rcfg = manifest["config"]
        data = load_scene(rcfg["scene"])
        ch0 = resolve_channels(rcfg["channels"])[0]
        est = read_wav(run / "enhanced.wav").samples[0]
        rows.append(evaluate(data["id"], rcfg["mode"], est, data["signals"]["target"].samples[ch0],
                             data["scene"].num_sources, min_interferer_angle(data["scene"])))
    return rows


def _write_report(out: Path, rows, cfg: dict, command: str, extra=None) -> None:
    report = aggregate_report(rows)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.csv", report.to_csv())
    atomic_write_text(out / "report.json", report.to_json())
    outputs = {"report_csv": out / "report.csv", "report_json": out / "report.json"}
    write_json(out / "manifest.json", build_manifest(command, cfg, outputs, out, extra=extra))


def cmd_metrics(cfg: dict) -> int:
    """Score beamform runs or WAV pairs into a bucketed report."""
    rows = []
    if cfg["runs"]:
        rows += _rows_from_runs(cfg["runs"])
    if cfg["estimate"] or cfg["reference"]:
        if not (cfg["estimate"] and cfg["reference"]):
            raise ConfigurationError("estimate and reference must be given together")
        est = read_wav(cfg["estimate"]).samples[int(cfg["channel"])]
        ref = read_wav(cfg["reference"]).samples[int(cfg["channel"])]
        rows.append(evaluate(cfg["scene_id"], cfg["label"], est, ref))
    if not rows:
        raise ConfigurationError("nothing to score: pass runs or estimate/reference")
    _write_report(Path(cfg["out"]), rows, cfg, "metrics")
    return 0


def cmd_beampattern(cfg: dict) -> int:
    """Write the spatial response of MVDR weights at one frequency."""
    out = Path(cfg["out"])
    grid = np.arange(0.0, 180.0 + 1e-9, float(cfg["grid_step"]))
    if cfg["scene"]:
        data = load_scene(cfg["scene"])
        scene, geo, signals = data["scene"], data["geometry"], data["signals"]
    else:
        scene, geo = fig6_scene(rt60=float(cfg["rt60"]), snr_db=cfg["snr_db"], seed=int(cfg["seed"]))
        dry = [synthetic_speech(_scene_seed(cfg["seed"], 100 + k), float(cfg["duration"])) for k in range(2)]
        mix = synthesize_mixture(scene, geo, dry)
        signals = {"mixture": mix.mixture, "target": mix.target}
    channels = _check_channels(cfg["channels"], geo.num_mics)
    sub = geo.subset(channels)
    cfg_stft = StftConfig()
    bin_index = int(round(float(cfg["freq"]) * cfg_stft.fft_size / DEFAULT_SAMPLE_RATE))
    if cfg["weights"]:
        weights = read_weights(cfg["weights"])
        info = {"estimator": "loaded-weights"}
    else:
        bf_cfg = dict(cfg, mode="mvdr-chunk", channels=list(channels))
        _, weights, info = separate(bf_cfg, signals, geo, scene)
    f_bin = bin_index * DEFAULT_SAMPLE_RATE / cfg_stft.fft_size
    angles, gains = beam_pattern(weights, sub, f_bin, int(cfg["t"]), grid, bin_index)
    csv_path = out / "beam_pattern.csv"
    atomic_write_text(csv_path, "\n".join(["angle_deg,gain_db"] + [f"{a:.1f},{g:.6f}" for a, g in zip(angles, gains)])
                      + "\n")
    extra = {"bin_index": bin_index, "bin_frequency_hz": f_bin, "doa_deg": list(scene.doa_deg)}
    write_json(out / "manifest.json", build_manifest("beampattern", cfg, {"beam_pattern": csv_path}, out,
                                                     info["estimator"], extra))
    return 0


def _sweep_point(args):
    cfg, axis, point, scene_src = args
    if isinstance(scene_src, dict):
        scene, geo, signals, sid = scene_src["scene"], scene_src["geometry"], scene_src["signals"], scene_src["id"]
    else:
        data = load_scene(scene_src)
        scene, geo, signals, sid = data["scene"], data["geometry"], data["signals"], data["id"]
    run = dict(cfg)
    if axis == "crf-size":
        run.update(mode="mvdr-chunk", estimator="oracle-crf", crf=point)
    elif axis == "mf-size":
        run.update(mode="mf-mvdr", frames=list(_mf_frames(int(point))))
    else:
        run.update(mode="mvdr-chunk", channels=point)
    enhanced, _, _ = separate(run, signals, geo, scene)
    ch0 = resolve_channels(run["channels"])[0]
    return evaluate(sid, f"{axis}={point}", enhanced.samples[0], signals["target"].samples[ch0],
                    scene.num_sources, min_interferer_angle(scene))


def _memory_scene(seed: int, index: int, duration: float) -> dict:
    s = _scene_seed(seed, index)
    scene, geo = random_scene(s, num_sources=2)
    dry = [synthetic_speech(_scene_seed(s, 100 + k), duration) for k in range(2)]
    mix = synthesize_mixture(scene, geo, dry)
    return {"scene": scene, "geometry": geo, "signals": {"mixture": mix.mixture, "target": mix.target},
            "id": f"scene_{index:04d}"}


def cmd_sweep(cfg: dict) -> int:
    """Sweep cRF size, multi-frame size or channel subset over scenes."""
    axis = cfg["axis"]
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    grid = [g.strip() for g in str(cfg["grid"]).split(",") if g.strip()]
    if not grid:
        raise ConfigurationError("sweep grid is empty")
    for point in grid:  # validate before doing any work
        if axis == "crf-size":
            _crf_extents(point)
        elif axis == "mf-size":
            _mf_frames(int(point))
        else:
            resolve_channels(point)
    if cfg["scenes"]:
        sources = list(cfg["scenes"])
    else:
        sources = [_memory_scene(int(cfg["seed"]), i, float(cfg["duration"])) for i in range(int(cfg["num_scenes"]))]
    jobs = [(cfg, axis, point, src) for point in grid for src in sources]
    rows = _pool_map(_sweep_point, jobs, int(cfg["workers"]))
    _write_report(Path(cfg["out"]), rows, cfg, "sweep", extra={"axis": axis, "grid": grid})
    return 0


def _pool_map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ------------------------------------------------------------- option tables

_BEAMFORM_OPTS = {
    "scene": (None, str, "scene directory written by simulate"),
    "out": ("beamform_out", str, "output directory"),
    "mode": ("mvdr-chunk", str, f"one of {', '.join(BEAMFORM_MODES)}"),
    "channels": ("15ch", str, "preset (3ch, 7ch, 9ch, 15ch) or comma list; first entry is the reference"),
    "estimator": ("oracle-crm", str, f"one of {', '.join(ESTIMATORS)}"),
    "crf": ("3x3", str, "cRF size TxF (odd sizes) for oracle-crf"),
    "frames": ("3,2", str, "L1,L2 for multi-frame modes (L1 counts the current frame)"),
    "solution": ("steering", str, "steering, reference or doa"),
    "loading": (1e-5, float, "diagonal loading relative to trace/D"),
    "block": (30, int, "recursive mini-block length in frames"),
    "hop": (10, int, "recursive block hop in frames"),
    "forgetting": (0.9, float, "recursive forgetting factor"),
    "adl_mode": ("MC", str, "ADL layout: MC, MF or MCMF"),
    "v_hidden": ("32,32", str, "GRU sizes of the vector net (random init)"),
    "inv_hidden": ("32,32", str, "GRU sizes of the inverse net (random init)"),
    "v_params": (None, str, "trained vector-net weight file"),
    "inv_params": (None, str, "trained inverse-net weight file"),
    "speech_filter": (None, str, "speech cRF file for the loaded estimator"),
    "noise_filter": (None, str, "noise cRF file for the loaded estimator"),
    "seed": (0, int, "seed for random ADL net init"),
}

OPTIONS = {
    "simulate": {
        "out": ("sim_out", str, "output directory"),
        "seed": (0, int, "master seed"),
        "num_scenes": (4, int, "number of scenes"),
        "duration": (3.0, float, "seconds of audio per scene"),
        "speakers": (0, int, "talkers per scene; 0 draws from speaker_range"),
        "speaker_range": ("1,3", str, "min,max talkers"),
        "rt60_range": ("0.05,0.7", str, "min,max RT60 in seconds"),
        "snr_range": ("18,30", str, "min,max SNR in dB"),
        "sir_range": ("-6,6", str, "min,max SIR in dB"),
        "distance_range": ("0.5,6", str, "min,max source distance in meters"),
        "room_min": ("4,4,3", str, "smallest room (m)"),
        "room_max": ("10,10,6", str, "largest room (m)"),
        "encoding": ("float32", str, "WAV encoding: float32, float64 or pcm16"),
        "workers": (1, int, "worker processes"),
    },
    "features": {
        "scene": (None, str, "scene directory"),
        "out": ("features_out", str, "output directory"),
        "pairs": ("0-14,1-13,2-11,4-11,6-8", str, "IPD channel pairs"),
        "doa": (None, float, "target DOA in degrees (default: scene ground truth)"),
        "channel": (0, int, "LPS channel"),
        "format": ("bin", str, "bin or csv"),
    },
    "beamform": _BEAMFORM_OPTS,
    "train-gru": {
        "out": ("train_out", str, "output directory"),
        "task": ("inverse", str, "inverse or steering"),
        "dim": (2, int, "covariance dimension D"),
        "frames": (20, int, "frames per sequence"),
        "sequences": (512, int, "training sequences"),
        "test_sequences": (256, int, "held-out sequences"),
        "hidden": ("32,32", str, "GRU layer sizes"),
        "steps": (2000, int, "optimizer steps"),
        "lr": (1e-3, float, "learning rate"),
        "momentum": (0.9, float, "momentum"),
        "nesterov": ("yes", str, "Nesterov momentum: yes or no"),
        "batch": (64, int, "sequences per step"),
        "log_every": (1, int, "loss log stride"),
        "seed": (0, int, "seed for data, init and batching"),
    },
    "metrics": {
        "out": ("metrics_out", str, "output directory"),
        "runs": (None, "list", "beamform output directories"),
        "estimate": (None, str, "estimate WAV"),
        "reference": (None, str, "reference WAV"),
        "channel": (0, int, "channel of the WAVs to score"),
        "scene_id": ("utterance", str, "row id for estimate/reference scoring"),
        "label": ("external", str, "mode label for estimate/reference scoring"),
    },
    "beampattern": {
        "out": ("beampattern_out", str, "output directory"),
        "scene": (None, str, "scene directory (default: built-in two-talker scene at 63/131 degrees)"),
        "weights": (None, str, "weights dump from beamform instead of computing them"),
        "rt60": (0.0, float, "RT60 of the built-in scene"),
        "snr_db": (None, float, "sensor-noise SNR of the built-in scene"),
        "duration": (2.0, float, "seconds of audio for the built-in scene"),
        "freq": (968.0, float, "frequency in Hz; the nearest STFT bin is used"),
        "t": (0, int, "frame index for frame-level weights"),
        "grid_step": (1.0, float, "angle grid step in degrees"),
        "channels": ("15ch", str, "channel subset"),
        "estimator": ("oracle-ideal", str, f"one of {', '.join(ESTIMATORS)}"),
        "solution": ("doa", str, "steering, reference or doa"),
        "crf": ("3x3", str, "cRF size for oracle-crf"),
        "loading": (1e-5, float, "diagonal loading"),
        "speech_filter": (None, str, "speech cRF file for the loaded estimator"),
        "noise_filter": (None, str, "noise cRF file for the loaded estimator"),
        "seed": (0, int, "seed for the built-in scene"),
    },
    "sweep": dict(_BEAMFORM_OPTS, **{
        "out": ("sweep_out", str, "output directory"),
        "axis": ("crf-size", str, f"one of {', '.join(SWEEP_AXES)}"),
        "grid": ("1x1,3x3", str, "comma list of grid points (e.g. 1x1,3x3 / 1,3,5 / 3ch,9ch)"),
        "scenes": (None, "list", "scene directories (default: simulate num_scenes in memory)"),
        "num_scenes": (2, int, "in-memory scenes when none are given"),
        "duration": (2.0, float, "seconds per in-memory scene"),
        "workers": (1, int, "worker processes"),
    }),
}

HANDLERS = {
    "simulate": cmd_simulate,
    "features": cmd_features,
    "beamform": cmd_beamform,
    "train-gru": cmd_train_gru,
    "metrics": cmd_metrics,
    "beampattern": cmd_beampattern,
    "sweep": cmd_sweep,
}

REQUIRED = {"features": ("scene",), "beamform": ("scene",)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adlmvdr", description="MVDR / ADL-MVDR beamforming toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=(HANDLERS[name].__doc__ or name).strip().splitlines()[0] if HANDLERS[name].__doc__
                           else name)
        p.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file; flags override it")
        for key, (default, typ, text) in opts.items():
            flag = "--" + key.replace("_", "-")
            kwargs = {"dest": key, "default": argparse.SUPPRESS, "help": f"{text} (default: {default})"}
            if typ == "list":
                kwargs["nargs"] = "+"
            else:
                kwargs["type"] = typ
            p.add_argument(flag, **kwargs)
    return parser


def resolve_config(command: str, ns: dict) -> dict:
    """Defaults < config file < explicit flags; unknown file keys are errors."""
    opts = OPTIONS[command]
    cfg = {k: v[0] for k, v in opts.items()}
    if "config" in ns:
        try:
            loaded = json.loads(Path(ns["config"]).read_text())
        except FileNotFoundError as exc:
            raise FormatError(f"config file {ns['config']} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {ns['config']}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(opts))
        if unknown:
            raise ConfigurationError(f"unknown config keys for {command}: {unknown}")
        cfg.update(loaded)
    cfg.update({k: v for k, v in ns.items() if k in opts})
    for key in REQUIRED.get(command, ()):
        if not cfg.get(key):
            raise ConfigurationError(f"{command} needs --{key.replace('_', '-')}")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    try:
        cfg = resolve_config(command, args)
        return HANDLERS[command](cfg)
    except AdlMvdrError as exc:
        print(f"adlmvdr {command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"adlmvdr {command}: I/O error: {exc}", file=sys.stderr)
        return FormatError.exit_code
    except (KeyError, TypeError, ValueError) as exc:
        print(f"adlmvdr {command}: configuration error: {exc}", file=sys.stderr)
        return ConfigurationError.exit_code
    except ArithmeticError as exc:
        print(f"adlmvdr {command}: numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
