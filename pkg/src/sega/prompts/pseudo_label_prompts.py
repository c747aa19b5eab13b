"""Pseudo-label sentence templates, one per template kind."""

DEFAULT_TEMPLATE = (
    "The majority of the posts express {t_max} with {e_max} emotion, "
    "while a minority of them express {t_min} with {e_min}."
)

SHORT_TEMPLATE = "Majority: {t_max} - {e_max}, minority: {t_min} - {e_min}."

TOPIC_TEMPLATE = (
    "The majority of the posts express {t_max}, "
    "while a minority of them express {t_min}."
)

EMOTION_TEMPLATE = (
    "The majority of the posts express {e_max}, "
    "while a minority of them express {e_min}."
)

TANDEM_TEMPLATE = f"{TOPIC_TEMPLATE} {EMOTION_TEMPLATE}"

TEMPLATES = {
    "default": DEFAULT_TEMPLATE,
    "short": SHORT_TEMPLATE,
    "topic": TOPIC_TEMPLATE,
    "emotion": EMOTION_TEMPLATE,
    "tandem": TANDEM_TEMPLATE,
}


def get_pseudo_label_prompt(
    kind: str, t_max: str, e_max: str, t_min: str, e_min: str
) -> str:
    """Render the pseudo-label sentence for ``kind``.

    Args:
        kind: One of ``default``, ``short``, ``topic``, ``emotion``, ``tandem``
        t_max: Majority topic
        e_max: Majority emotion
        t_min: Minority topic
        e_min: Minority emotion

    Returns:
        Rendered sentence
    """
    try:
        template = TEMPLATES[kind]
    except KeyError:
        raise ValueError(f"unknown template kind {kind!r}") from None
    return template.format(t_max=t_max, e_max=e_max, t_min=t_min, e_min=e_min)
