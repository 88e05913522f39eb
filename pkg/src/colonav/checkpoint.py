"""Checkpoints: versioned binary dump of policy, normalizer, and config hash.

Layout: magic, u32 version, u64 header length, canonical-JSON header, then the
raw little-endian float64 bytes of every array in header order. No container
metadata (no timestamps), so identical state always gives identical bytes and
round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .agent import MLP, PolicyParams, RunningNorm

MAGIC = b"CNAVCKPT"
VERSION = 1


def _array_entries(params: PolicyParams):
    """(name, array) pairs in a fixed, documented order."""
    entries = []
    for prefix, net in (("actor", params.actor), ("critic", params.critic)):
        for i, w in enumerate(net.weights):
            entries.append((f"{prefix}.w{i}", w))
        for i, b in enumerate(net.biases):
            entries.append((f"{prefix}.b{i}", b))
    entries.append(("norm.mean", params.normalizer.mean))
    entries.append(("norm.m2", params.normalizer.m2))
    return entries


def save_checkpoint(path: str | Path, params: PolicyParams, config_hash: str,
                    meta: dict | None = None) -> None:
    entries = _array_entries(params)
    header = {
        "version": VERSION,
        "config_hash": config_hash,
        "obs_dim": params.obs_dim,
        "actor_sizes": params.actor.sizes,
        "critic_sizes": params.critic.sizes,
        "normalize_obs": params.normalize_obs,
        "norm_count": params.normalizer.count,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in entries],
        "meta": dict(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for _, arr in entries:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path):
    """Rebuild (PolicyParams, header dict) from a checkpoint file."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    ofs = 8 + 12
    header = json.loads(raw[ofs:ofs + hlen].decode())
    ofs += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=ofs).reshape(shape)
        arrays[entry["name"]] = arr.astype(float)
        ofs += 8 * n
    if ofs != len(raw):
        raise ValueError(f"{path}: trailing bytes after arrays")

    rng = np.random.default_rng(0)
    actor = MLP(header["actor_sizes"], rng)
    critic = MLP(header["critic_sizes"], rng)
    n_w = len(actor.weights)
    actor.set_params([arrays[f"actor.w{i}"] for i in range(n_w)] +
                     [arrays[f"actor.b{i}"] for i in range(n_w)])
    n_w = len(critic.weights)
    critic.set_params([arrays[f"critic.w{i}"] for i in range(n_w)] +
                      [arrays[f"critic.b{i}"] for i in range(n_w)])
    norm = RunningNorm(header["obs_dim"])
    norm.load({"count": header["norm_count"], "mean": arrays["norm.mean"],
               "m2": arrays["norm.m2"]})
    params = PolicyParams(actor, critic, norm, header["obs_dim"],
                          header["normalize_obs"])
    return params, header
