"""Corpus persistence: JSON-lines manifest plus raw float32 clip payloads.

Layout under a corpus root directory:

    manifest.jsonl      header record, then one record per section
    clips/<id>.audio.f32    little-endian float32 waveform
    clips/<id>.video.f32    little-endian float32 frame tensor
    clips/<id>.json         sidecar with shapes, dtype and clip metadata
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .episodes import Corpus, Episode, section_from_dict, section_to_dict
from .render import Clip, TranscriptToken
from .world import world_from_dict, world_to_dict

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"
CLIP_DIR = "clips"


class ManifestError(ValueError):
    """Malformed, truncated or version-incompatible corpus files."""


def write_manifest(corpus: Corpus, root: str | Path) -> Path:
    """Write the corpus metadata; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    with path.open("w") as fh:
        header = {"record": "header", "version": MANIFEST_VERSION,
                  "world": world_to_dict(corpus.world),
                  "n_episodes": len(corpus.episodes)}
        fh.write(json.dumps(header) + "\n")
        for ep in corpus.episodes:
            for sec in ep.sections:
                rec = {"record": "section", "episode": ep.index}
                rec.update(section_to_dict(sec))
                fh.write(json.dumps(rec) + "\n")
    return path


def read_manifest(root: str | Path) -> Corpus:
    """Reconstruct a corpus from its manifest; inverse of write_manifest."""
    root = Path(root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    if not path.exists():
        raise ManifestError(f"no manifest at {path}")
    with path.open() as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines:
        raise ManifestError("empty manifest")
    header = lines[0]
    if header.get("record") != "header":
        raise ManifestError("manifest does not start with a header record")
    version = header.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestError(f"unknown manifest version {version!r}")
    try:
        world = world_from_dict(header["world"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"malformed world header: {exc}") from exc

    episodes: dict[int, Episode] = {}
    for rec in lines[1:]:
        if rec.get("record") != "section":
            raise ManifestError(f"unexpected record type {rec.get('record')!r}")
        idx = rec["episode"]
        ep = episodes.setdefault(idx, Episode(index=idx, sections=[]))
        ep.sections.append(section_from_dict(rec))
    ordered = [episodes[i] for i in sorted(episodes)]
    for ep in ordered:
        ep.sections.sort(key=lambda s: s.start)
    return Corpus(world=world, episodes=ordered)


# ---------------------------------------------------------------------------
# clip payloads

def save_clip(root: str | Path, clip_id: str, clip: Clip) -> None:
    root = Path(root) / CLIP_DIR
    root.mkdir(parents=True, exist_ok=True)
    audio = np.ascontiguousarray(clip.waveform, dtype="<f4")
    video = np.ascontiguousarray(clip.frames, dtype="<f4")
    (root / f"{clip_id}.audio.f32").write_bytes(audio.tobytes())
    (root / f"{clip_id}.video.f32").write_bytes(video.tobytes())
    sidecar = {
        "version": MANIFEST_VERSION,
        "id": clip_id,
        "audio": {"dtype": "float32", "shape": list(audio.shape)},
        "video": {"dtype": "float32", "shape": list(video.shape)},
        "section_kind": clip.section_kind,
        "episode": clip.episode,
        "audio_span": list(clip.audio_span),
        "video_span": list(clip.video_span),
        "transcript": [vars(t) for t in clip.transcript],
    }
    (root / f"{clip_id}.json").write_text(json.dumps(sidecar))


def _load_payload(path: Path, shape: list[int]) -> np.ndarray:
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ManifestError(
            f"payload {path.name}: {data.size} floats, sidecar says {expected}")
    return data.reshape(shape).copy()


def load_clip(root: str | Path, clip_id: str) -> Clip:
    root = Path(root) / CLIP_DIR
    sidecar_path = root / f"{clip_id}.json"
    if not sidecar_path.exists():
        raise ManifestError(f"no sidecar for clip {clip_id!r}")
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"malformed sidecar for {clip_id!r}: {exc}") from exc
    if sidecar.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unknown payload version {sidecar.get('version')!r}")
    for key in ("audio", "video", "audio_span", "video_span"):
        if key not in sidecar:
            raise ManifestError(f"sidecar for {clip_id!r} lacks {key!r}")
    waveform = _load_payload(root / f"{clip_id}.audio.f32",
                             sidecar["audio"]["shape"])
    frames = _load_payload(root / f"{clip_id}.video.f32",
                           sidecar["video"]["shape"])
    return Clip(
        waveform=waveform, frames=frames,
        section_kind=sidecar["section_kind"], episode=sidecar["episode"],
        audio_span=tuple(sidecar["audio_span"]),
        video_span=tuple(sidecar["video_span"]),
        transcript=[TranscriptToken(**t) for t in sidecar["transcript"]],
    )
