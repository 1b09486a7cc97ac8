"""Line-oriented configuration files and run manifests.

Format: `[section]` headers and `key = value` pairs, `#` comments, blank
lines ignored. Every key must exist in DEFAULTS under its section; unknown
sections or keys are hard errors carrying the line number, so a typo can
never silently fall back to a default. Values are typed by their default:
int, float, bool (true/false), string, or comma-separated integer list.

The `[artifacts]` section is reserved: run manifests append it to record
output file hashes, and the parser skips it when resolving configuration.
"""

import copy
import hashlib
import math
import os

DEFAULTS = {
    "data": {
        "seed": 7,
        "classes": 4,
        "mean_radius": 2.0 * math.sqrt(2.0),
        "sigma": 0.35,
        "pool_per_class": 320,
        "train_fraction": 0.8,
        "aux_n": 2048,
        "aux_r_min": 4.5,
        "aux_r_max": 7.5,
        "ood_n": 1024,
        "ood_r_min": 5.0,
        "ood_r_max": 7.0,
    },
    "model": {
        "hidden": [64, 64],
        "activation": "relu",
        "leaky_slope": 0.01,
        "init_seed": 1,
    },
    "loss": {
        "lambda_s": 0.1,
        "lambda_grad": 1.0,
        "m_in": -25.0,
        "m_aux": -7.0,
    },
    "train": {
        "mode": "greg",
        "epochs": 50,
        "batch_size": 64,
        "lr_max": 0.01,
        "lr_min": 1e-4,
        "momentum": 0.9,
        "weight_decay": 1e-4,
        "seed": 0,
        "cluster_k": 0,
        "pool_multiple": 8,
        "sampler_restarts": 1,
    },
    "eval": {
        "score": "energy",
        "tpr": 0.95,
        "n_bins": 64,
    },
    "certify": {
        "eps_cap": 1.0,
        "ball_samples": 256,
        "inflate": 1.05,
        "probes": 1000,
        "seed": 3,
        "grid_points": 21,
        "max_per_side": 0,  # 0 means: certify every sample
    },
    "ablate": {
        "k_list": [16, 32, 64],
    },
    "io": {
        "data_dir": "",  # empty: artifacts live in the --out directory
        "checkpoint": "model.ckpt",
    },
}

RESERVED_SECTION = "artifacts"


class ConfigError(ValueError):
    """Unparseable or unknown configuration content."""


def _convert(raw: str, default, where: str):
    if isinstance(default, bool):
        if raw == "true":
            return True
        if raw == "false":
            return False
        raise ConfigError(f"{where}: expected true or false, got {raw!r}")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    if isinstance(default, list):
        if raw == "":
            return []
        try:
            return [int(part.strip()) for part in raw.split(",")]
        except ValueError:
            raise ConfigError(f"{where}: expected comma-separated integers, got {raw!r}") from None
    return raw


def parse_config(text: str, name: str = "<config>"):
    """(cfg_updates, artifacts): typed values found in the text, and the raw
    key/value pairs of a reserved [artifacts] section if present."""
    updates: dict = {}
    artifacts: dict = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        where = f"{name} line {lineno}"
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section != RESERVED_SECTION and section not in DEFAULTS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where}: expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if section is None:
            raise ConfigError(f"{where}: key {key!r} appears before any [section]")
        if section == RESERVED_SECTION:
            artifacts[key] = raw
            continue
        if key not in DEFAULTS[section]:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        updates.setdefault(section, {})[key] = _convert(raw, DEFAULTS[section][key], where)
    return updates, artifacts


def resolve_config(text: str | None = None, overrides=None, name: str = "<config>"):
    """Full typed configuration: defaults, then file text, then overrides.

    overrides maps (section, key) to an already-typed value; unknown pairs
    are rejected the same way file keys are.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if text is not None:
        updates, _ = parse_config(text, name)
        for section, pairs in updates.items():
            cfg[section].update(pairs)
    for (section, key), value in (overrides or {}).items():
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"override targets unknown key {section}.{key}")
        cfg[section][key] = value
    return cfg


def load_config(path, overrides=None):
    with open(path) as fh:
        return resolve_config(fh.read(), overrides, name=str(path))


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ",".join(str(e) for e in v)
    return str(v)


def render_config(cfg) -> str:
    """Canonical text form: sections and keys in DEFAULTS order. Resolving
    the rendered text reproduces cfg exactly."""
    lines = []
    for section, pairs in DEFAULTS.items():
        lines.append(f"[{section}]")
        for key in pairs:
            lines.append(f"{key} = {_render_value(cfg[section][key])}")
        lines.append("")
    return "\n".join(lines)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, cfg, artifact_names, name: str = "manifest.cfg") -> str:
    """Record the resolved configuration plus a sha256 per artifact file.

    The manifest comes last in a run, so its artifact hashes cover the final
    bytes of everything else the run wrote.
    """
    lines = [render_config(cfg), f"[{RESERVED_SECTION}]"]
    for art in sorted(artifact_names):
        lines.append(f"{art} = {sha256_file(os.path.join(out_dir, art))}")
    text = "\n".join(lines) + "\n"
    path = os.path.join(out_dir, name)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def read_manifest(path):
    """(cfg, artifacts): resolved configuration and the recorded hashes."""
    with open(path) as fh:
        text = fh.read()
    updates, artifacts = parse_config(text, name=str(path))
    cfg = copy.deepcopy(DEFAULTS)
    for section, pairs in updates.items():
        cfg[section].update(pairs)
    return cfg, artifacts
