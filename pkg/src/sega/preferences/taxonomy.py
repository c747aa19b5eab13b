"""Topic and emotion categories for per-post preference pairs.

Sixteen Twitter topics and eight Plutchik emotions, each extended with
``others`` for anything the LLM answers outside the list. Declaration order is
the tie-break order used by preference summaries.
"""

from enum import Enum


class Topic(str, Enum):
    ARTS_CULTURE = "arts & culture"
    BUSINESS_FINANCE = "business & finance"
    CAREERS = "careers"
    ENTERTAINMENT = "entertainment"
    FASHION_BEAUTY = "fashion & beauty"
    FOOD = "food"
    GAMING = "gaming"
    HOBBIES_INTERESTS = "hobbies & interests"
    MOVIES_TV = "movies & TV"
    MUSIC = "music"
    NEWS = "news"
    OUTDOORS = "outdoors"
    SCIENCE = "science"
    SPORTS = "sports"
    TECHNOLOGY = "technology"
    TRAVEL = "travel"
    OTHERS = "others"

    def __str__(self) -> str:
        return self.value


class Emotion(str, Enum):
    JOY = "joy"
    SADNESS = "sadness"
    ANGER = "anger"
    FEAR = "fear"
    TRUST = "trust"
    DISGUST = "disgust"
    SURPRISE = "surprise"
    ANTICIPATION = "anticipation"
    OTHERS = "others"

    def __str__(self) -> str:
        return self.value


Pair = tuple[Topic, Emotion]

_TOPICS = {t.value.lower(): t for t in Topic}
_EMOTIONS = {e.value.lower(): e for e in Emotion}
TOPIC_ORDER = {t: i for i, t in enumerate(Topic)}
EMOTION_ORDER = {e: i for i, e in enumerate(Emotion)}

# 17 x 9 label space of the multi-label pre-training objective
PAIR_SPACE: tuple[Pair, ...] = tuple((t, e) for t in Topic for e in Emotion)
PAIR_INDEX = {pair: i for i, pair in enumerate(PAIR_SPACE)}


def _normalize(name: str) -> str:
    return " ".join(name.strip().lower().split())


def parse_topic(name: str) -> Topic:
    """Case-insensitive lookup; unknown names map to ``Topic.OTHERS``."""
    return _TOPICS.get(_normalize(name), Topic.OTHERS)


def parse_emotion(name: str) -> Emotion:
    """Case-insensitive lookup; unknown names map to ``Emotion.OTHERS``."""
    return _EMOTIONS.get(_normalize(name), Emotion.OTHERS)


def parse_pair(topic: str, emotion: str) -> Pair:
    return parse_topic(topic), parse_emotion(emotion)


def pair_order(pair: Pair) -> tuple[int, int]:
    return TOPIC_ORDER[pair[0]], EMOTION_ORDER[pair[1]]


def format_pair(pair: Pair) -> str:
    return f"{pair[0].value} - {pair[1].value}"
