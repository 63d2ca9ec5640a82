"""Rendering: episode timeline spans -> (waveform, frame tensor) clips.

Audio is the sum of voice-transformed word motifs overlapping the audio
span; video rasterizes ambient characters, speaker sprites and animated
noun sprites for every frame of the video span.  Rendering is a pure
function of (world, episode, spans): no hidden state, no noise source.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .episodes import Episode, Section, Utterance
from .world import SpriteSpec, WordSpec, WorldSpec, word_waveform

BACKGROUND = 0.1
BLOB_SPRITE = SpriteSpec(shape="disc", color=(0.55, 0.55, 0.55), size=3)


@dataclass
class TranscriptToken:
    word: str
    start: float
    end: float
    grounded: bool
    speaker: str
    pos: str


@dataclass
class Clip:
    waveform: np.ndarray          # (n,) float32 mono
    frames: np.ndarray            # (T, H, W, 3) float32 in [0, 1]
    section_kind: str
    episode: int
    audio_span: tuple[float, float]
    video_span: tuple[float, float]
    transcript: list[TranscriptToken] = field(default_factory=list)

    @property
    def audio_duration(self) -> float:
        return self.audio_span[1] - self.audio_span[0]

    @property
    def video_duration(self) -> float:
        return self.video_span[1] - self.video_span[0]


MIN_SPAN = 0.05


def frame_count(duration: float, frame_rate: float) -> int:
    """Frames in a span: round-half-up so the 0.05 s floor still yields one."""
    return max(1, int(np.floor(duration * frame_rate + 0.5)))


def _trajectory_offset(name: str, theta: float) -> tuple[float, float]:
    """Unit-amplitude (dy, dx) offset at phase angle theta."""
    if name == "jump":
        return (-abs(np.sin(theta)), 0.0)
    if name == "spin":
        return (np.sin(theta), np.cos(theta))
    if name == "orbit":
        return (-np.sin(theta), np.cos(theta))
    if name == "slide":      # left-to-right ramp, then snap back
        return (0.0, 2.0 * ((theta / (2 * np.pi)) % 1.0) - 1.0)
    if name == "sweep":      # right-to-left ramp
        return (0.0, 1.0 - 2.0 * ((theta / (2 * np.pi)) % 1.0))
    if name == "bounce":
        frac = (theta / (2 * np.pi)) % 1.0
        return (2.0 * abs(2.0 * frac - 1.0) - 1.0, 0.0)
    if name == "zigzag":
        return (np.sin(2.0 * theta) * 0.7, np.sin(theta))
    if name == "drift":
        return (np.sin(theta) * 0.7, np.sin(theta) * 0.7)
    if name == "shake":
        return (0.0, np.sin(theta))
    if name == "hover":
        return (np.sin(theta), 0.0)
    raise ValueError(f"unknown trajectory {name!r}")


def draw_sprite(frame: np.ndarray, sprite: SpriteSpec, y: float, x: float) -> None:
    """Paint a sprite onto an (H, W, 3) frame in place."""
    h, w = frame.shape[:2]
    s = float(sprite.size)
    pad = int(np.ceil(s)) + 2
    y0, y1 = max(0, int(y) - pad), min(h, int(y) + pad + 1)
    x0, x1 = max(0, int(x) - pad), min(w, int(x) + pad + 1)
    if y0 >= y1 or x0 >= x1:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    dy = yy - y
    dx = xx - x
    shape = sprite.shape
    if shape == "disc":
        mask = dy * dy + dx * dx <= s * s
    elif shape == "square":
        mask = np.maximum(np.abs(dy), np.abs(dx)) <= 0.9 * s
    elif shape == "triangle":
        mask = (dy <= 0.85 * s) & (np.abs(dx) <= (dy + s) / 2.0) & (dy >= -s)
    elif shape == "diamond":
        mask = np.abs(dy) + np.abs(dx) <= 1.2 * s
    elif shape == "ring":
        r2 = dy * dy + dx * dx
        mask = (r2 <= s * s) & (r2 >= (0.5 * s) ** 2)
    elif shape == "cross":
        box = np.maximum(np.abs(dy), np.abs(dx)) <= s
        mask = box & ((np.abs(dy) <= 0.4 * s) | (np.abs(dx) <= 0.4 * s))
    elif shape == "person":
        head = (dy + 0.7 * s) ** 2 + dx * dx <= (0.55 * s) ** 2
        body = (np.abs(dx) <= 0.5 * s) & (dy >= -0.15 * s) & (dy <= s)
        mask = head | body
    else:
        raise ValueError(f"unknown sprite shape {shape!r}")
    frame[yy[mask], xx[mask]] = sprite.color


def _voiced_wave(world: WorldSpec, word: WordSpec, speaker: str) -> np.ndarray:
    cache = getattr(world, "_wave_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(world, "_wave_cache", cache)
    key = (word.id, speaker)
    wave = cache.get(key)
    if wave is None:
        voice = world.voice_of(speaker)
        wave = word_waveform(word, voice, world.config.sample_rate,
                             world.config.word_duration)
        cache[key] = wave
    return wave


def _render_waveform(world: WorldSpec, episode: Episode,
                     span: tuple[float, float]) -> np.ndarray:
    a0, a1 = span
    sr = world.config.sample_rate
    n = int(round((a1 - a0) * sr))
    out = np.zeros(n, dtype=np.float32)
    for sec in episode.sections:
        if sec.end <= a0 or sec.start >= a1:
            continue
        for utt in sec.utterances:
            if utt.end <= a0 or utt.start >= a1:
                continue
            for tok in utt.words:
                if tok.end <= a0 or tok.start >= a1:
                    continue
                wave = _voiced_wave(world, world.word(tok.word), utt.speaker)
                offset = int(round((tok.start - a0) * sr))
                lo = max(0, offset)
                hi = min(n, offset + len(wave))
                if hi > lo:
                    out[lo:hi] += wave[lo - offset:hi - offset]
    return out


def _active_utterances(sec: Section, t: float) -> list[Utterance]:
    return [u for u in sec.utterances if u.start <= t < u.end]


def _render_frame(world: WorldSpec, sec: Section | None, t: float) -> np.ndarray:
    cfg = world.config
    frame = np.full((cfg.frame_height, cfg.frame_width, 3), BACKGROUND,
                    dtype=np.float32)
    if sec is None:
        return frame
    for amb in sec.ambient:
        ch = world.character(amb.character)
        draw_sprite(frame, ch.sprite, amb.y, amb.x)
    active = _active_utterances(sec, t)
    for utt in active:
        if utt.speaker_visible and utt.speaker in sec.speaker_positions:
            y, x = sec.speaker_positions[utt.speaker]
            draw_sprite(frame, world.character(utt.speaker).sprite, y, x)
    for utt in active:
        for prop in utt.statics:
            tok = utt.words[prop.noun_slot]
            if tok.grounded:
                draw_sprite(frame, world.word(tok.word).sprite, prop.y, prop.x)
    for utt in active:
        for ev in utt.events:
            noun_tok = utt.words[ev.noun_slot]
            verb_tok = utt.words[ev.verb_slot]
            if not noun_tok.grounded and not verb_tok.grounded:
                continue
            sprite = world.word(noun_tok.word).sprite if noun_tok.grounded \
                else BLOB_SPRITE
            y, x = ev.y, ev.x
            if verb_tok.grounded:
                motion = world.word(verb_tok.word).motion
                theta = 2.0 * np.pi * motion.freq * (t - utt.start) + ev.phase
                dy, dx = _trajectory_offset(motion.trajectory, theta)
                y += motion.amplitude * dy
                x += motion.amplitude * dx
            draw_sprite(frame, sprite, y, x)
    return frame


def _section_at(episode: Episode, t: float) -> Section | None:
    for sec in episode.sections:
        if sec.start <= t < sec.end:
            return sec
    return None


def render_clip(world: WorldSpec, episode: Episode,
                audio_span: tuple[float, float],
                video_span: tuple[float, float]) -> Clip:
    """Render one paired clip; spans must lie within the episode timeline."""
    for name, (lo, hi) in (("audio", audio_span), ("video", video_span)):
        if hi - lo < MIN_SPAN - 1e-9:
            raise ValueError(f"{name} span shorter than {MIN_SPAN} s")
        if lo < -1e-9 or hi > episode.duration + 1e-6:
            raise ValueError(f"{name} span {lo:.2f}-{hi:.2f} outside episode")

    waveform = _render_waveform(world, episode, audio_span)

    v0, v1 = video_span
    fps = world.config.frame_rate
    n_frames = frame_count(v1 - v0, fps)
    frames = np.empty((n_frames, world.config.frame_height,
                       world.config.frame_width, 3), dtype=np.float32)
    for k in range(n_frames):
        t = v0 + (k + 0.5) / fps
        frames[k] = _render_frame(world, _section_at(episode, t), t)

    mid_sec = _section_at(episode, (v0 + v1) / 2.0)
    kind = mid_sec.kind if mid_sec is not None else "none"

    a0, a1 = audio_span
    transcript = []
    for sec in episode.sections:
        for utt in sec.utterances:
            for tok in utt.words:
                if tok.end > a0 and tok.start < a1:
                    transcript.append(TranscriptToken(
                        word=tok.word, start=tok.start, end=tok.end,
                        grounded=tok.grounded, speaker=utt.speaker,
                        pos=world.word(tok.word).pos))

    return Clip(waveform=waveform, frames=frames, section_kind=kind,
                episode=episode.index, audio_span=(a0, a1),
                video_span=(v0, v1), transcript=transcript)
