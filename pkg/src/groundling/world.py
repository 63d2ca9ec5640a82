"""Generative world: vocabulary, voices, sprites and motion patterns.

A world is a deterministic function of ``(seed, WorldConfig)``.  Each word
owns an audio motif (harmonic stack with a word-specific fundamental,
harmonic profile and amplitude-envelope rhythm) and a visual signature:
nouns get a shape/color sprite, verbs get a motion pattern that displaces a
carrier sprite over time without changing its appearance in any single frame.
Characters speak with pitch-shifted, spectrally tilted voices; the narrator
voice is distinct from every character voice.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.signal import fftconvolve


class GenerationError(ValueError):
    """Raised when a world or corpus cannot satisfy its own constraints."""


NARRATOR = "narrator"

SHAPES = ("disc", "square", "triangle", "diamond", "ring", "cross")

# name, oscillation frequency in Hz; spin/orbit and slide/sweep traverse the
# same positions in opposite order, so only temporal order tells them apart
TRAJECTORIES = (
    ("jump", 1.6),
    ("spin", 1.2),
    ("orbit", 1.2),
    ("slide", 1.0),
    ("sweep", 1.0),
    ("bounce", 1.8),
    ("zigzag", 1.4),
    ("drift", 0.8),
    ("shake", 3.0),
    ("hover", 0.7),
)

NOUN_NAMES = (
    "ball", "star", "tree", "duck", "fish", "moon", "drum", "kite", "ring",
    "leaf", "boat", "bell", "crab", "snail", "cloud", "plum", "fork", "lamp",
    "sock", "gate", "comb", "vase", "harp", "dice", "worm", "shell", "brick",
    "spoon", "flag", "pear",
)

CHARACTER_NAMES = ("fox", "owl", "bear", "frog", "deer", "mole", "hare",
                   "lynx", "seal", "crow")


@dataclass(frozen=True)
class VoiceSpec:
    """Pitch factor applied to word fundamentals plus a spectral tilt."""
    pitch: float
    tilt: float


@dataclass(frozen=True)
class SpriteSpec:
    shape: str
    color: tuple[float, float, float]
    size: int


@dataclass(frozen=True)
class MotionSpec:
    trajectory: str
    freq: float
    amplitude: float


@dataclass(frozen=True)
class MotifSpec:
    """Parameters of a word's canonical waveform."""
    f0: float
    harmonics: tuple[float, ...]
    phases: tuple[float, ...]
    bump_centers: tuple[float, ...]   # fraction of the word duration
    bump_widths: tuple[float, ...]    # seconds
    bump_heights: tuple[float, ...]


@dataclass
class WordSpec:
    id: str
    pos: str                          # "noun" or "verb"
    motif: MotifSpec
    sprite: SpriteSpec | None = None
    motion: MotionSpec | None = None
    train_frequency: int = 0


@dataclass
class CharacterSpec:
    id: str
    voice: VoiceSpec
    sprite: SpriteSpec


@dataclass
class WorldConfig:
    n_nouns: int = 20
    n_verbs: int = 10
    n_characters: int = 6
    displacement_prob: float = 0.3
    co_occurrence: float = 0.9
    sample_rate: int = 8000
    frame_rate: int = 10
    frame_height: int = 36
    frame_width: int = 20
    word_duration: float = 0.35
    motif_corr_threshold: float = 0.9
    zipf_exponent: float = 0.6
    # episode layout
    dialog_sections: int = 3
    narration_sections: int = 3
    dialog_section_duration: tuple[float, float] = (9.0, 12.0)
    narration_section_duration: tuple[float, float] = (8.5, 10.5)
    utterance_gap: tuple[float, float] = (0.15, 0.55)
    section_gap: tuple[float, float] = (0.4, 1.0)
    max_ambient_characters: int = 2
    template_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)

    def validate(self) -> None:
        if self.n_nouns < 2:
            raise GenerationError("need at least 2 nouns")
        if self.n_verbs < 2:
            raise GenerationError("need at least 2 verbs")
        if self.n_characters < 1:
            raise GenerationError("need at least 1 character")
        if not 0.0 <= self.displacement_prob <= 1.0:
            raise GenerationError("displacement_prob must lie in [0, 1]")
        if not 0.0 <= self.co_occurrence <= 1.0:
            raise GenerationError("co_occurrence must lie in [0, 1]")
        if self.word_duration <= 0.05:
            raise GenerationError("word_duration too short")


@dataclass
class WorldSpec:
    seed: int
    config: WorldConfig
    nouns: list[WordSpec]
    verbs: list[WordSpec]
    characters: list[CharacterSpec]
    narrator_voice: VoiceSpec
    noun_weights: tuple[float, ...] = ()
    verb_weights: tuple[float, ...] = ()

    @property
    def sample_rate(self) -> int:
        return self.config.sample_rate

    @property
    def frame_rate(self) -> int:
        return self.config.frame_rate

    @property
    def words(self) -> list[WordSpec]:
        return self.nouns + self.verbs

    def word(self, word_id: str) -> WordSpec:
        return self._index()[word_id]

    def _index(self) -> dict[str, WordSpec]:
        idx = getattr(self, "_word_index", None)
        if idx is None or len(idx) != len(self.nouns) + len(self.verbs):
            idx = {w.id: w for w in self.words}
            object.__setattr__(self, "_word_index", idx)
        return idx

    def voice_of(self, speaker: str) -> VoiceSpec:
        if speaker == NARRATOR:
            return self.narrator_voice
        for ch in self.characters:
            if ch.id == speaker:
                return ch.voice
        raise KeyError(f"unknown speaker {speaker!r}")

    def character(self, char_id: str) -> CharacterSpec:
        for ch in self.characters:
            if ch.id == char_id:
                return ch
        raise KeyError(f"unknown character {char_id!r}")


NEUTRAL_VOICE = VoiceSpec(pitch=1.0, tilt=0.0)

_N_HARMONICS = 6
_EDGE_TAPER = 0.015  # seconds of fade at both ends, avoids clicks


def motif_envelope(motif: MotifSpec, t: np.ndarray, duration: float) -> np.ndarray:
    """Amplitude envelope: a word-specific rhythm of raised bumps."""
    env = np.zeros_like(t)
    for c, w, h in zip(motif.bump_centers, motif.bump_widths, motif.bump_heights):
        env += h * np.exp(-0.5 * ((t - c * duration) / w) ** 2)
    env /= max(env.max(), 1e-9)
    taper = np.minimum(t / _EDGE_TAPER, (duration - t) / _EDGE_TAPER)
    return env * np.clip(taper, 0.0, 1.0)


def word_waveform(word: WordSpec, voice: VoiceSpec, sample_rate: int,
                  duration: float, peak: float = 0.5) -> np.ndarray:
    """Synthesize one word as spoken by ``voice`` (float32, mono)."""
    n = int(round(duration * sample_rate))
    t = np.arange(n, dtype=np.float64) / sample_rate
    m = word.motif
    f0 = m.f0 * voice.pitch
    sig = np.zeros_like(t)
    amps = np.array(m.harmonics) * np.arange(1, _N_HARMONICS + 1) ** (-voice.tilt)
    amps /= max(np.abs(amps).max(), 1e-9)
    for h, (a, ph) in enumerate(zip(amps, m.phases), start=1):
        sig += a * np.sin(2.0 * np.pi * h * f0 * t + ph)
    sig *= motif_envelope(m, t, duration)
    m_abs = np.abs(sig).max()
    if m_abs > 0:
        sig *= peak / m_abs
    return sig.astype(np.float32)


def motif_waveform(word: WordSpec, sample_rate: int, duration: float) -> np.ndarray:
    """The word's canonical (neutral-voice) waveform template."""
    return word_waveform(word, NEUTRAL_VOICE, sample_rate, duration)


def max_cross_correlation(x: np.ndarray, y: np.ndarray) -> float:
    """Largest |normalized cross-correlation| over all lags."""
    corr = fftconvolve(x.astype(np.float64), y[::-1].astype(np.float64), mode="full")
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    if denom == 0:
        return 0.0
    return float(np.abs(corr).max() / denom)


def motif_correlation_matrix(words: list[WordSpec], sample_rate: int,
                             duration: float) -> np.ndarray:
    """Pairwise max cross-correlation between canonical word motifs."""
    motifs = [motif_waveform(w, sample_rate, duration) for w in words]
    n = len(motifs)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = max_cross_correlation(motifs[i], motifs[j])
    return out


def _draw_motif(rng: np.random.Generator, f0: float) -> MotifSpec:
    harmonics = np.concatenate([[1.0], rng.uniform(0.05, 0.9, _N_HARMONICS - 1)])
    phases = rng.uniform(0.0, 2.0 * np.pi, _N_HARMONICS)
    n_bumps = int(rng.integers(1, 4))
    centers = (np.arange(n_bumps) + 0.5) / n_bumps \
        + rng.uniform(-0.1, 0.1, n_bumps) / n_bumps
    widths = rng.uniform(0.03, 0.09, n_bumps) / np.sqrt(n_bumps)
    heights = rng.uniform(0.55, 1.0, n_bumps)
    heights[rng.integers(0, n_bumps)] = 1.0
    return MotifSpec(
        f0=float(f0),
        harmonics=tuple(np.round(harmonics, 6)),
        phases=tuple(np.round(phases, 6)),
        bump_centers=tuple(np.round(np.clip(centers, 0.08, 0.92), 6)),
        bump_widths=tuple(np.round(widths, 6)),
        bump_heights=tuple(np.round(heights, 6)),
    )


def _distinct_color(i: int, n: int, value: float = 0.95) -> tuple[float, float, float]:
    hue = (i * 0.61803398875) % 1.0
    sat = 0.85 if i % 2 == 0 else 0.7
    r, g, b = colorsys.hsv_to_rgb(hue, sat, value)
    return (round(r, 4), round(g, 4), round(b, 4))


def _zipf_weights(n: int, exponent: float) -> tuple[float, ...]:
    w = (np.arange(1, n + 1) + 1.0) ** (-exponent)
    w /= w.sum()
    return tuple(w.tolist())


_MAX_MOTIF_RETRIES = 40


def generate_world(seed: int, config: WorldConfig | None = None) -> WorldSpec:
    """Build a deterministic world from ``(seed, config)``.

    Word motifs are drawn with fundamentals log-spaced over 110-420 Hz and
    re-drawn until every pair stays below the motif correlation threshold;
    if a word cannot be placed within a bounded number of retries the
    vocabulary is declared too large for the motif space.
    """
    config = config or WorldConfig()
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), 0)))

    n_words = config.n_nouns + config.n_verbs
    f0s = np.geomspace(110.0, 420.0, n_words)
    f0s = f0s * rng.uniform(0.98, 1.02, n_words)
    rng.shuffle(f0s)

    duration = config.word_duration
    accepted: list[MotifSpec] = []
    accepted_waves: list[np.ndarray] = []
    for i in range(n_words):
        placed = False
        for _ in range(_MAX_MOTIF_RETRIES):
            motif = _draw_motif(rng, f0s[i])
            probe = WordSpec(id="probe", pos="noun", motif=motif)
            wave = motif_waveform(probe, config.sample_rate, duration)
            if all(max_cross_correlation(wave, other) < config.motif_corr_threshold
                   for other in accepted_waves):
                accepted.append(motif)
                accepted_waves.append(wave)
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"could not find a {config.motif_corr_threshold}-separable motif "
                f"for word {i + 1}/{n_words}; vocabulary too large for motif space")

    def word_name(pool: tuple[str, ...], prefix: str, i: int) -> str:
        return pool[i] if i < len(pool) else f"{prefix}{i}"

    nouns = []
    for i in range(config.n_nouns):
        sprite = SpriteSpec(shape=SHAPES[i % len(SHAPES)],
                            color=_distinct_color(i, config.n_nouns), size=3)
        nouns.append(WordSpec(id=word_name(NOUN_NAMES, "noun", i), pos="noun",
                              motif=accepted[i], sprite=sprite))
    verbs = []
    for i in range(config.n_verbs):
        name, freq = TRAJECTORIES[i % len(TRAJECTORIES)]
        tier = i // len(TRAJECTORIES)
        verb_id = name if tier == 0 else f"{name}{tier + 1}"
        motion = MotionSpec(trajectory=name, freq=freq * (1.0 + 0.5 * tier),
                            amplitude=4.0)
        verbs.append(WordSpec(id=verb_id, pos="verb",
                              motif=accepted[config.n_nouns + i], motion=motion))

    narrator_voice = VoiceSpec(pitch=1.0, tilt=0.3)
    characters = []
    pitches: list[float] = []
    for i in range(config.n_characters):
        for _ in range(200):
            band = rng.uniform(0.66, 0.92) if rng.random() < 0.5 else rng.uniform(1.09, 1.45)
            if all(abs(band - p) >= 0.03 for p in pitches):
                pitches.append(round(float(band), 4))
                break
        else:
            raise GenerationError("too many characters for distinct voice pitches")
        voice = VoiceSpec(pitch=pitches[-1], tilt=round(float(rng.uniform(-0.4, 1.0)), 4))
        name = CHARACTER_NAMES[i] if i < len(CHARACTER_NAMES) else f"char{i}"
        sprite = SpriteSpec(shape="person",
                            color=_distinct_color(i + 3, config.n_characters, value=0.75),
                            size=4)
        characters.append(CharacterSpec(id=name, voice=voice, sprite=sprite))

    world = WorldSpec(
        seed=int(seed), config=config, nouns=nouns, verbs=verbs,
        characters=characters, narrator_voice=narrator_voice,
        noun_weights=_zipf_weights(config.n_nouns, config.zipf_exponent),
        verb_weights=_zipf_weights(config.n_verbs, config.zipf_exponent),
    )
    _check_world(world)
    return world


def _check_world(world: WorldSpec) -> None:
    ids = [w.id for w in world.words]
    if len(set(ids)) != len(ids):
        raise GenerationError("duplicate word identifiers")
    for w in world.nouns:
        if w.sprite is None:
            raise GenerationError(f"noun {w.id} lacks a visual signature")
    for w in world.verbs:
        if w.motion is None:
            raise GenerationError(f"verb {w.id} lacks a motion pattern")
    for ch in world.characters:
        if ch.voice == world.narrator_voice:
            raise GenerationError("narrator voice collides with a character voice")


# ---------------------------------------------------------------------------
# serialization

def world_to_dict(world: WorldSpec) -> dict:
    return {
        "seed": world.seed,
        "config": asdict(world.config),
        "nouns": [asdict(w) for w in world.nouns],
        "verbs": [asdict(w) for w in world.verbs],
        "characters": [asdict(c) for c in world.characters],
        "narrator_voice": asdict(world.narrator_voice),
        "noun_weights": list(world.noun_weights),
        "verb_weights": list(world.verb_weights),
    }


def _word_from_dict(d: dict) -> WordSpec:
    motif = d["motif"]
    sprite = d.get("sprite")
    motion = d.get("motion")
    return WordSpec(
        id=d["id"], pos=d["pos"],
        motif=MotifSpec(
            f0=motif["f0"],
            harmonics=tuple(motif["harmonics"]),
            phases=tuple(motif["phases"]),
            bump_centers=tuple(motif["bump_centers"]),
            bump_widths=tuple(motif["bump_widths"]),
            bump_heights=tuple(motif["bump_heights"]),
        ),
        sprite=SpriteSpec(shape=sprite["shape"], color=tuple(sprite["color"]),
                          size=sprite["size"]) if sprite else None,
        motion=MotionSpec(trajectory=motion["trajectory"], freq=motion["freq"],
                          amplitude=motion["amplitude"]) if motion else None,
        train_frequency=d.get("train_frequency", 0),
    )


def world_from_dict(d: dict) -> WorldSpec:
    cfg_d = dict(d["config"])
    for key in ("dialog_section_duration", "narration_section_duration",
                "utterance_gap", "section_gap", "template_weights"):
        if key in cfg_d:
            cfg_d[key] = tuple(cfg_d[key])
    config = WorldConfig(**cfg_d)
    return WorldSpec(
        seed=d["seed"], config=config,
        nouns=[_word_from_dict(w) for w in d["nouns"]],
        verbs=[_word_from_dict(w) for w in d["verbs"]],
        characters=[CharacterSpec(
            id=c["id"],
            voice=VoiceSpec(**c["voice"]),
            sprite=SpriteSpec(shape=c["sprite"]["shape"],
                              color=tuple(c["sprite"]["color"]),
                              size=c["sprite"]["size"]),
        ) for c in d["characters"]],
        narrator_voice=VoiceSpec(**d["narrator_voice"]),
        noun_weights=tuple(d.get("noun_weights", ())),
        verb_weights=tuple(d.get("verb_weights", ())),
    )
