"""Self-describing zip archives holding generators, encoders and run counters.

Layout: ``manifest.json`` (schema, encoders, configs, counters, RNG states,
category frequencies, per-generator metadata and array shapes) and
``arrays.npz`` (every parameter and optimizer-moment array).
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .gan import AdamState, Generator
from .transform import CondSampler, DataTransformer

FORMAT = "evotab-checkpoint"
VERSION = 1


@dataclass
class StoredGenerator:
    label: str
    generator: Generator
    f_u: float
    f_r: float
    meta: dict = field(default_factory=dict)


@dataclass
class Checkpoint:
    transformer: DataTransformer
    frequencies: list
    generators: dict  # label -> StoredGenerator
    population: list  # labels in population order
    config: dict
    counters: dict
    manifest: dict

    @property
    def schema(self):
        return self.transformer.schema

    def cond_sampler(self) -> CondSampler:
        return CondSampler.from_frequencies(self.schema, self.frequencies)


def _module_arrays(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def _adam_arrays(prefix: str, state: AdamState | None) -> dict[str, np.ndarray]:
    if state is None:
        return {}
    out = {}
    for i, (m, v) in enumerate(zip(state.exp_avg, state.exp_avg_sq)):
        out[f"{prefix}/exp_avg/{i}"] = m.cpu().numpy()
        out[f"{prefix}/exp_avg_sq/{i}"] = v.cpu().numpy()
    return out


def _load_module(module: torch.nn.Module, prefix: str, arrays) -> None:
    sd = {k: torch.from_numpy(arrays[f"{prefix}/{k}"].copy()) for k in module.state_dict()}
    module.load_state_dict(sd)


def _float(x) -> float | None:
    x = float(x)
    return x if np.isfinite(x) else None


def save_checkpoint(
    path,
    transformer: DataTransformer,
    frequencies,
    generators: dict,
    population: list,
    config: dict,
    counters: dict,
    extra_modules: dict | None = None,
    adam_states: dict | None = None,
    rng_states: dict | None = None,
    extra: dict | None = None,
) -> Path:
    """Write an archive; ``generators`` maps label -> (Generator, f_u, f_r, meta)."""
    arrays: dict[str, np.ndarray] = {}
    gens_meta = {}
    for label, (gen, f_u, f_r, meta) in generators.items():
        arrays.update(_module_arrays(f"gen/{label}", gen))
        gens_meta[label] = {"config": gen.config(), "f_u": _float(f_u), "f_r": _float(f_r), **(meta or {})}
    modules_meta = {}
    for name, module in (extra_modules or {}).items():
        arrays.update(_module_arrays(f"module/{name}", module))
        modules_meta[name] = sorted(module.state_dict())
    adam_meta = {}
    for name, state in (adam_states or {}).items():
        arrays.update(_adam_arrays(f"adam/{name}", state))
        adam_meta[name] = {"step": state.step if state else 0}
    rng_json = {}
    for name, st in (rng_states or {}).items():
        if isinstance(st, torch.Tensor):
            arrays[f"rng/{name}"] = st.numpy()
            rng_json[name] = {"torch_array": f"rng/{name}"}
        else:
            rng_json[name] = st
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "transformer": transformer.to_dict(),
        "category_frequencies": [np.asarray(f).tolist() for f in frequencies],
        "config": config,
        "counters": counters,
        "generators": gens_meta,
        "population": list(population),
        "modules": modules_meta,
        "adam": adam_meta,
        "rng": rng_json,
        "arrays": {k: list(v.shape) for k, v in arrays.items()},
        **(extra or {}),
    }
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
        zf.writestr("arrays.npz", buf.getvalue())
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            arrays = np.load(io.BytesIO(zf.read("arrays.npz")))
            arrays = {k: arrays[k] for k in arrays.files}
    except (zipfile.BadZipFile, KeyError) as exc:
        raise ValueError(f"{path} is not a valid checkpoint archive: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{path}: unknown checkpoint format {manifest.get('format')!r}")
    for key, shape in manifest["arrays"].items():
        if list(arrays[key].shape) != shape:
            raise ValueError(f"{path}: array {key} has shape {arrays[key].shape}, manifest says {shape}")
    transformer = DataTransformer.from_dict(manifest["transformer"])
    gens = {}
    for label, meta in manifest["generators"].items():
        gen = Generator.from_config(meta["config"])
        _load_module(gen, f"gen/{label}", arrays)
        nan = float("nan")
        f_u = meta["f_u"] if meta["f_u"] is not None else nan
        f_r = meta["f_r"] if meta["f_r"] is not None else nan
        rest = {k: v for k, v in meta.items() if k not in ("config", "f_u", "f_r")}
        gens[label] = StoredGenerator(label, gen, f_u, f_r, rest)
    return Checkpoint(
        transformer,
        [np.asarray(f) for f in manifest["category_frequencies"]],
        gens,
        manifest["population"],
        manifest["config"],
        manifest["counters"],
        manifest,
    )
