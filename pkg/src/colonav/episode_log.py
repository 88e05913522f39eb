"""Episode logs: JSON Lines, one object per line, deterministic bytes.

Line kinds:
  header — run/episode identity: version, config hash, seed, episode index,
           algorithm, segment names, start pose, waypoint count
  step   — i, pos, s, action, m, reward, value under `v`, wall_distance,
           collided, segment, waypoint_index
  end    — termination flags plus per-episode summary counters

Only deterministic quantities go in the file; wall-clock timings live in the
run's sidecar stats so identical seeds give identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

LOG_VERSION = 1


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


class EpisodeLogWriter:
    """Writes one episode per file; lines are canonical JSON."""

    def __init__(self, path: str | Path, config: dict, config_hash: str,
                 seed: int, episode: int, algorithm: str, mode: str,
                 segments, start: dict, waypoints_total: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self.steps = 0
        # the full resolved config rides along so logs are self-contained
        self._write({
            "kind": "header", "version": LOG_VERSION, "config": config,
            "config_hash": config_hash, "seed": seed, "episode": episode,
            "algorithm": algorithm, "mode": mode, "segments": list(segments),
            "start": start, "waypoints_total": waypoints_total,
        })

    def _write(self, obj: dict) -> None:
        self._fh.write(_dump(obj) + "\n")

    def step(self, i: int, pos, s: float, action: int, m: int, reward: float,
             value: float, wall_distance: float, collided: bool,
             segment: str, waypoint_index: int) -> None:
        if i != self.steps:
            raise ValueError(f"non-contiguous step index {i} (expected {self.steps})")
        self._write({
            "kind": "step", "i": i, "pos": [float(x) for x in pos],
            "s": float(s), "action": int(action), "m": int(m),
            "reward": float(reward), "v": float(value),
            "wall_distance": float(wall_distance), "collided": bool(collided),
            "segment": segment, "waypoint_index": int(waypoint_index),
        })
        self.steps += 1

    def end(self, terminated: bool, truncated: bool, reached_terminal: bool,
            total_reward: float, collisions: int, onsets: int,
            engaged_steps: int) -> None:
        self._write({
            "kind": "end", "steps": self.steps, "terminated": bool(terminated),
            "truncated": bool(truncated), "reached_terminal": bool(reached_terminal),
            "total_reward": float(total_reward), "collisions": int(collisions),
            "onsets": int(onsets), "engaged_steps": int(engaged_steps),
        })
        self._fh.close()

    def abort(self) -> None:
        if not self._fh.closed:
            self._fh.close()


@dataclass
class EpisodeLog:
    """Parsed episode log."""

    header: dict
    steps: list
    end: dict
    path: Path | None = None

    @property
    def config_hash(self) -> str:
        return self.header["config_hash"]

    @property
    def trail(self):
        return [st["pos"] for st in self.steps]

    def segment_names(self) -> list:
        return self.header["segments"]


def read_episode_log(path: str | Path) -> EpisodeLog:
    """Parse and structurally validate one log file."""
    path = Path(path)
    header = None
    end = None
    steps = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            kind = obj.get("kind")
            if kind == "header":
                if header is not None:
                    raise ValueError(f"{path}:{line_no}: duplicate header")
                header = obj
            elif kind == "step":
                steps.append(obj)
            elif kind == "end":
                end = obj
            else:
                raise ValueError(f"{path}:{line_no}: unknown line kind {kind!r}")
    if header is None or end is None:
        raise ValueError(f"{path}: missing header or end line")
    for want, st in enumerate(steps):
        if st["i"] != want:
            raise ValueError(f"{path}: step indices not contiguous at {st['i']}")
        if not all(isinstance(x, (int, float)) and abs(x) < 1e12 for x in st["pos"]):
            raise ValueError(f"{path}: non-finite position at step {st['i']}")
    if end["steps"] != len(steps):
        raise ValueError(f"{path}: end line says {end['steps']} steps, found {len(steps)}")
    return EpisodeLog(header, steps, end, path)


def find_logs(directory: str | Path) -> list:
    """All episode logs under a directory, sorted by path."""
    return sorted(Path(directory).rglob("*.jsonl"))
