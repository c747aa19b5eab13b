"""Instruction prompt for classifying posts into topic-emotion pairs."""

from typing import Sequence

INSTRUCTION_PROMPT = (
    "Please classify each tweet into the topics and corresponding emotions for the "
    "following ten posts. The available topics are arts & culture, business & "
    "finance, careers, entertainment, fashion & beauty, food, gaming, hobbies & "
    "interests, movies & TV, music, news, outdoors, science, sports, technology, "
    "and travel. The emotions to consider are joy, sadness, anger, fear, trust, "
    "disgust, surprise, and anticipation. Please provide the classification for "
    "each post in the format 'topic - emotion'. Limit the response to less than "
    "100 words. Following are the ten tweets numbered with '#'."
)


def get_instruction_prompt(tweets: Sequence[str]) -> str:
    """Format the instruction prompt followed by '#'-numbered tweets.

    Args:
        tweets: Posts to classify, oldest first

    Returns:
        Prompt text sent to the LLM
    """
    numbered = "\n".join(f"#{i} {tweet}" for i, tweet in enumerate(tweets, start=1))
    return f"{INSTRUCTION_PROMPT}\n{numbered}"
