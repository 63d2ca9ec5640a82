"""Episode timelines: dialog and narration sections with word-level timing.

Dialog is spoken by characters whose sprites co-occur with their voices
(the speaker-identity confound), and mentions words with no visual referent
with probability ``displacement_prob`` (displaced speech).  Narration is a
single fixed voice describing exactly what is rendered.  Everything is a
pure function of ``(world, episode index)``, so episodes can be generated
in parallel and reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .world import NARRATOR, GenerationError, WorldSpec

DIALOG = "dialog"
NARRATION = "narration"

# word-slot patterns per utterance template; each (noun_slot, verb_slot)
# pair in ``events`` becomes one animated sprite
_TEMPLATES = (
    {"slots": ("noun", "verb"), "events": ((0, 1),), "statics": ()},
    {"slots": ("noun", "verb", "noun"), "events": ((0, 1),), "statics": (2,)},
    {"slots": ("noun", "verb", "noun", "verb"), "events": ((0, 1), (2, 3)),
     "statics": ()},
)


@dataclass
class WordToken:
    word: str
    start: float
    end: float
    grounded: bool


@dataclass
class VisualEvent:
    """One animated sprite: a carrier noun driven by a verb's trajectory."""
    noun_slot: int
    verb_slot: int
    x: float
    y: float
    phase: float


@dataclass
class StaticProp:
    """A noun sprite standing still for the utterance duration."""
    noun_slot: int
    x: float
    y: float


@dataclass
class Utterance:
    speaker: str
    start: float
    end: float
    words: list[WordToken]
    events: list[VisualEvent] = field(default_factory=list)
    statics: list[StaticProp] = field(default_factory=list)
    speaker_visible: bool = False

    @property
    def word_ids(self) -> tuple[str, ...]:
        return tuple(w.word for w in self.words)


@dataclass
class AmbientCharacter:
    character: str
    x: float
    y: float


@dataclass
class Section:
    kind: str
    start: float
    end: float
    utterances: list[Utterance]
    ambient: list[AmbientCharacter] = field(default_factory=list)
    speaker_positions: dict[str, tuple[float, float]] = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class Episode:
    index: int
    sections: list[Section]

    @property
    def duration(self) -> float:
        return self.sections[-1].end if self.sections else 0.0


@dataclass
class Corpus:
    world: WorldSpec
    episodes: list[Episode]

    def episode(self, index: int) -> Episode:
        for ep in self.episodes:
            if ep.index == index:
                return ep
        raise KeyError(f"no episode {index}")


def episode_rng(world: WorldSpec, index: int) -> np.random.Generator:
    """Independent, order-free random stream for one episode."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=(world.seed, 1), spawn_key=(index,)))


def _choose_position(rng: np.random.Generator, world: WorldSpec,
                     taken: list[tuple[float, float]], margin: float = 7.0,
                     min_dist: float = 7.5) -> tuple[float, float]:
    h, w = world.config.frame_height, world.config.frame_width
    lo_y, hi_y = margin, h - margin
    lo_x, hi_x = min(margin, w / 2 - 1), w - min(margin, w / 2 - 1)
    best = None
    for _ in range(25):
        y = float(rng.uniform(lo_y, hi_y))
        x = float(rng.uniform(lo_x, hi_x))
        d = min((abs(y - ty) + abs(x - tx) for ty, tx in taken), default=np.inf)
        if d >= min_dist:
            best = (round(y, 2), round(x, 2))
            break
        if best is None or d > 0:
            best = (round(y, 2), round(x, 2))
    taken.append(best)
    return best


def _sample_words(rng: np.random.Generator, world: WorldSpec,
                  slots: tuple[str, ...]) -> list[str]:
    nouns = [w.id for w in world.nouns]
    verbs = [w.id for w in world.verbs]
    out = []
    for slot in slots:
        if slot == "noun":
            out.append(str(rng.choice(nouns, p=world.noun_weights)))
        else:
            out.append(str(rng.choice(verbs, p=world.verb_weights)))
    return out


def _build_utterance(rng: np.random.Generator, world: WorldSpec, kind: str,
                     speaker: str, start: float,
                     taken: list[tuple[float, float]]) -> Utterance:
    cfg = world.config
    weights = np.asarray(cfg.template_weights, dtype=float)
    template = _TEMPLATES[int(rng.choice(len(_TEMPLATES), p=weights / weights.sum()))]
    word_ids = _sample_words(rng, world, template["slots"])

    tokens = []
    t = start
    for wid in word_ids:
        grounded = True if kind == NARRATION else \
            bool(rng.random() >= cfg.displacement_prob)
        tokens.append(WordToken(word=wid, start=round(t, 4),
                                end=round(t + cfg.word_duration, 4),
                                grounded=grounded))
        t += cfg.word_duration

    events = []
    for noun_slot, verb_slot in template["events"]:
        y, x = _choose_position(rng, world, taken)
        events.append(VisualEvent(noun_slot=noun_slot, verb_slot=verb_slot,
                                  x=x, y=y,
                                  phase=round(float(rng.uniform(0, 2 * np.pi)), 4)))
    statics = []
    for noun_slot in template["statics"]:
        y, x = _choose_position(rng, world, taken)
        statics.append(StaticProp(noun_slot=noun_slot, x=x, y=y))

    return Utterance(speaker=speaker, start=round(start, 4), end=round(t, 4),
                     words=tokens, events=events, statics=statics)


def _build_section(rng: np.random.Generator, world: WorldSpec, kind: str,
                   start: float) -> Section:
    cfg = world.config
    lo, hi = (cfg.dialog_section_duration if kind == DIALOG
              else cfg.narration_section_duration)
    target = float(rng.uniform(lo, hi))

    ambient = []
    taken: list[tuple[float, float]] = []
    speaker_positions: dict[str, tuple[float, float]] = {}
    n_ambient = int(rng.integers(0, cfg.max_ambient_characters + 1))
    chars = list(world.characters)
    rng.shuffle(chars)
    for ch in chars[:n_ambient]:
        y, x = _choose_position(rng, world, taken)
        ambient.append(AmbientCharacter(character=ch.id, x=x, y=y))
        speaker_positions[ch.id] = (y, x)

    utterances = []
    t = start
    while True:
        gap = float(rng.uniform(*cfg.utterance_gap))
        longest = 4 * cfg.word_duration
        if (t + gap + longest) - start > target and utterances:
            break
        speaker = NARRATOR if kind == NARRATION else \
            str(rng.choice([c.id for c in world.characters]))
        utt = _build_utterance(rng, world, kind, speaker, t + gap, list(taken))
        if kind == DIALOG:
            utt.speaker_visible = bool(rng.random() < cfg.co_occurrence)
            if utt.speaker_visible and speaker not in speaker_positions:
                y, x = _choose_position(rng, world, taken)
                speaker_positions[speaker] = (y, x)
        utterances.append(utt)
        t = utt.end

    end = max(t + 0.2, start + target)
    return Section(kind=kind, start=round(start, 4), end=round(end, 4),
                   utterances=utterances, ambient=ambient,
                   speaker_positions=speaker_positions)


def generate_episode(world: WorldSpec, index: int,
                     rng: np.random.Generator | None = None) -> Episode:
    """Generate episode ``index`` (1-based) deterministically."""
    if index < 1:
        raise GenerationError("episode index must be >= 1")
    rng = rng or episode_rng(world, index)
    cfg = world.config

    kinds = [DIALOG] * cfg.dialog_sections + [NARRATION] * cfg.narration_sections
    if cfg.dialog_sections < 1 or cfg.narration_sections < 1:
        raise GenerationError("episodes need at least one section of each kind")
    rng.shuffle(kinds)

    sections = []
    t = float(rng.uniform(0.2, 0.8))
    for kind in kinds:
        section = _build_section(rng, world, kind, t)
        sections.append(section)
        t = section.end + float(rng.uniform(*cfg.section_gap))
    return Episode(index=index, sections=sections)


def generate_corpus(world: WorldSpec, n_episodes: int) -> Corpus:
    """Generate ``n_episodes`` episodes and stamp train word frequencies."""
    if n_episodes < 1:
        raise GenerationError("need at least one episode")
    episodes = [generate_episode(world, i) for i in range(1, n_episodes + 1)]
    corpus = Corpus(world=world, episodes=episodes)
    from .segmentation import default_boundaries  # cycle-free at call time
    bounds = default_boundaries(n_episodes)
    freqs = word_frequencies(corpus, bounds.train_dialog)
    for w in corpus.world.words:
        w.train_frequency = freqs.get(w.id, 0)
    return corpus


def word_frequencies(corpus: Corpus, episode_range: tuple[int, int],
                     kind: str = DIALOG) -> dict[str, int]:
    """Occurrence counts over the utterances of one episode range and kind."""
    lo, hi = episode_range
    counts: dict[str, int] = {}
    for ep in corpus.episodes:
        if not lo <= ep.index <= hi:
            continue
        for sec in ep.sections:
            if sec.kind != kind:
                continue
            for utt in sec.utterances:
                for tok in utt.words:
                    counts[tok.word] = counts.get(tok.word, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# serialization

def section_to_dict(section: Section) -> dict:
    return {
        "kind": section.kind,
        "start": section.start,
        "end": section.end,
        "ambient": [asdict(a) for a in section.ambient],
        "speaker_positions": {k: list(v) for k, v in section.speaker_positions.items()},
        "utterances": [{
            "speaker": u.speaker,
            "start": u.start,
            "end": u.end,
            "speaker_visible": u.speaker_visible,
            "words": [asdict(w) for w in u.words],
            "events": [asdict(e) for e in u.events],
            "statics": [asdict(s) for s in u.statics],
        } for u in section.utterances],
    }


def section_from_dict(d: dict) -> Section:
    return Section(
        kind=d["kind"], start=d["start"], end=d["end"],
        ambient=[AmbientCharacter(**a) for a in d["ambient"]],
        speaker_positions={k: tuple(v) for k, v in d["speaker_positions"].items()},
        utterances=[Utterance(
            speaker=u["speaker"], start=u["start"], end=u["end"],
            speaker_visible=u["speaker_visible"],
            words=[WordToken(**w) for w in u["words"]],
            events=[VisualEvent(**e) for e in u["events"]],
            statics=[StaticProp(**s) for s in u["statics"]],
        ) for u in d["utterances"]],
    )
