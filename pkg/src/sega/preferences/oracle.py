"""Topic-emotion preference extraction, summaries and pseudo-label rendering."""

import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

from sega.errors import NoPostsError, PreferenceError
from sega.graph.store import UserRecord
from sega.preferences.cache import PreferenceCache
from sega.preferences.llm_client import LLMClient
from sega.preferences.taxonomy import (
    EMOTION_ORDER,
    TOPIC_ORDER,
    Emotion,
    Pair,
    Topic,
    pair_order,
    parse_pair,
)
from sega.prompts.preference_prompts import get_instruction_prompt
from sega.prompts.pseudo_label_prompts import get_pseudo_label_prompt

logger = logging.getLogger(__name__)

POSTS_PER_USER = 10
_LINE = re.compile(r"^\s*#?\s*\d+\s*[:.)]?\s*(.+?)\s*-\s*(.+?)\s*$")
_MARGINAL_KINDS = ("topic", "emotion", "tandem")

K = TypeVar("K")


@dataclass(frozen=True)
class PreferenceProfile:
    """Topic-emotion pair counts for one user."""

    user_id: str
    counts: Mapping[Pair, int] = field(default_factory=dict)

    @classmethod
    def from_pairs(cls, user_id: str, pairs: Iterable[Pair]) -> "PreferenceProfile":
        return cls(user_id, dict(Counter(pairs)))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def pairs(self) -> list[Pair]:
        return sorted(self.counts, key=pair_order)

    def topic_counts(self) -> Counter:
        topics: Counter = Counter()
        for (topic, _), n in self.counts.items():
            topics[topic] += n
        return topics

    def emotion_counts(self) -> Counter:
        emotions: Counter = Counter()
        for (_, emotion), n in self.counts.items():
            emotions[emotion] += n
        return emotions

    def __bool__(self) -> bool:
        return bool(self.counts)


@dataclass(frozen=True)
class PreferenceSummary:
    max_pair: Pair
    min_pair: Pair


@dataclass(frozen=True)
class PseudoLabel:
    kind: str
    text: str
    max_pair: Pair
    min_pair: Pair


def parse_llm_response(text: str) -> list[Pair]:
    """Parse numbered ``topic - emotion`` lines; other lines are skipped."""
    pairs = []
    for line in text.splitlines():
        match = _LINE.match(line)
        if match:
            pairs.append(parse_pair(match.group(1), match.group(2)))
    return pairs


def _extremes(counts: Mapping[K, int], order: Callable[[K], object]) -> tuple[K, K]:
    # highest count first, ties by declaration order; the last entry is the minimum
    ranked = sorted(counts, key=lambda k: (-counts[k], order(k)))
    return ranked[0], ranked[-1]


def preference_summary(profile: PreferenceProfile) -> PreferenceSummary:
    """Most and least frequent pair of a profile.

    Raises:
        PreferenceError: The profile holds no pairs.
    """
    if not profile:
        raise PreferenceError(f"user {profile.user_id} has an empty preference profile")
    max_pair, min_pair = _extremes(profile.counts, pair_order)
    return PreferenceSummary(max_pair, min_pair)


def topic_extremes(profile: PreferenceProfile) -> tuple[Topic, Topic]:
    return _extremes(profile.topic_counts(), TOPIC_ORDER.__getitem__)


def emotion_extremes(profile: PreferenceProfile) -> tuple[Emotion, Emotion]:
    return _extremes(profile.emotion_counts(), EMOTION_ORDER.__getitem__)


def render_prompt(
    summary: PreferenceSummary,
    kind: str = "default",
    profile: PreferenceProfile | None = None,
) -> PseudoLabel:
    """Render the pseudo-label sentence of a user.

    Args:
        summary: Majority and minority pair.
        kind: Template kind.
        profile: Needed by the ``topic``, ``emotion`` and ``tandem`` kinds, whose
            majority/minority come from independent topic and emotion frequencies.

    Returns:
        The rendered pseudo-label.
    """
    (t_max, e_max), (t_min, e_min) = summary.max_pair, summary.min_pair
    if kind in _MARGINAL_KINDS:
        if profile is None:
            raise PreferenceError(
                f"template {kind!r} needs the full preference profile"
            )
        t_max, t_min = topic_extremes(profile)
        e_max, e_min = emotion_extremes(profile)
    try:
        text = get_pseudo_label_prompt(
            kind, str(t_max), str(e_max), str(t_min), str(e_min)
        )
    except ValueError as e:
        raise PreferenceError(str(e)) from e
    return PseudoLabel(kind, text, summary.max_pair, summary.min_pair)


def pseudo_label_for(profile: PreferenceProfile, kind: str = "default") -> PseudoLabel:
    return render_prompt(preference_summary(profile), kind, profile)


def extract_pairs(
    user: UserRecord,
    client: LLMClient | None,
    cache: PreferenceCache,
    posts_per_user: int = POSTS_PER_USER,
) -> PreferenceProfile:
    """Topic-emotion profile of one user, cache first.

    Raises:
        NoPostsError: The user has no posts and no cache entry.
        PreferenceError: Cache miss with no LLM backend.
    """
    cached = cache.get(user.id)
    if cached is not None:
        logger.debug("preference cache hit for %s", user.id)
        return PreferenceProfile.from_pairs(user.id, cached)
    if not user.tweets:
        raise NoPostsError(user.id)
    if client is None:
        raise PreferenceError(f"no LLM backend and no cached pairs for user {user.id}")
    logger.debug("preference cache miss for %s", user.id)
    posts = list(user.tweets[-posts_per_user:])
    pairs = parse_llm_response(client.complete(get_instruction_prompt(posts)))
    pairs = pairs[: len(posts)]
    cache.put(user.id, pairs)
    return PreferenceProfile.from_pairs(user.id, pairs)


def extract_all(
    users: Sequence[UserRecord],
    client: LLMClient | None,
    cache: PreferenceCache,
    max_workers: int = 4,
    posts_per_user: int = POSTS_PER_USER,
) -> dict[str, PreferenceProfile]:
    """Profiles for every user with posts, keyed and ordered by user id.

    Raises:
        PreferenceError: Users are missing from the cache and there is no backend;
            the message lists their ids.
    """
    eligible = sorted(
        (u for u in users if u.tweets or u.id in cache), key=lambda u: u.id
    )
    skipped = len(users) - len(eligible)
    if skipped:
        logger.info("%d users without posts are excluded", skipped)
    missing = [u.id for u in eligible if u.id not in cache]
    if missing and client is None:
        raise PreferenceError(
            f"{len(missing)} users missing from preference cache and no LLM backend: "
            + ", ".join(missing)
        )

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        profiles = list(
            pool.map(
                lambda u: extract_pairs(u, client, cache, posts_per_user), eligible
            )
        )
    return {profile.user_id: profile for profile in profiles}


def load_profiles(
    cache: PreferenceCache, user_ids: Iterable[str] | None = None
) -> dict[str, PreferenceProfile]:
    """Profiles straight from the cache, without any backend."""
    ids = cache.ids() if user_ids is None else sorted(i for i in user_ids if i in cache)
    return {uid: PreferenceProfile.from_pairs(uid, cache.get(uid) or []) for uid in ids}
