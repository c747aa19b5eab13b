"""LLM backends that classify posts into topic-emotion pairs."""

import logging
import os
import threading
from typing import Protocol

import httpx
from anthropic import Anthropic, APIError

from sega.config import LLM_API_KEY_ENV, LLM_ENDPOINT_ENV, LLMConfig
from sega.errors import ConfigError, PreferenceError

logger = logging.getLogger(__name__)

ATTEMPTS = 3


class LLMClient(Protocol):
    """Anything that turns an instruction prompt into response text."""

    calls: int

    def complete(self, prompt: str) -> str: ...


class _Counted:
    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def _count(self) -> None:
        with self._lock:
            self.calls += 1


class HttpLLMClient(_Counted):
    """POST ``{"prompt", "temperature"}`` and read the ``text`` field of the reply.

    Args:
        endpoint: Completion URL; defaults to ``SEGA_LLM_ENDPOINT``.
        api_key: Bearer token; defaults to ``SEGA_LLM_API_KEY``.
        temperature: Decoding temperature sent with every request.
        timeout: Per-request timeout in seconds.
        transport: Optional httpx transport (tests use ``httpx.MockTransport``).
    """

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        temperature: float = 0.0,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        super().__init__()
        self.endpoint = endpoint or os.getenv(LLM_ENDPOINT_ENV)
        if not self.endpoint:
            raise ConfigError(
                f"http LLM backend needs an endpoint or {LLM_ENDPOINT_ENV}"
            )
        self.temperature = temperature
        api_key = api_key or os.getenv(LLM_API_KEY_ENV)
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(
            headers=headers, timeout=timeout, transport=transport
        )

    def complete(self, prompt: str) -> str:
        self._count()
        payload = {"prompt": prompt, "temperature": self.temperature}
        last_error: Exception | None = None
        for attempt in range(1, ATTEMPTS + 1):
            try:
                response = self._client.post(self.endpoint, json=payload)
                response.raise_for_status()
                return str(response.json()["text"])
            except (httpx.HTTPError, KeyError, ValueError) as e:
                last_error = e
                logger.warning(
                    "LLM request attempt %d/%d failed: %s", attempt, ATTEMPTS, e
                )
        raise PreferenceError(
            f"LLM endpoint unreachable after {ATTEMPTS} attempts: {last_error}"
        )


class AnthropicLLMClient(_Counted):
    """Anthropic Messages API backend."""

    def __init__(
        self,
        model: str = "claude-sonnet-4-20250514",
        temperature: float = 0.0,
        max_tokens: int = 512,
        client: Anthropic | None = None,
    ):
        super().__init__()
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self._client = client or Anthropic()

    def complete(self, prompt: str) -> str:
        self._count()
        try:
            response = self._client.messages.create(
                model=self.model,
                max_tokens=self.max_tokens,
                temperature=self.temperature,
                messages=[{"role": "user", "content": prompt}],
            )
        except APIError as e:
            raise PreferenceError(f"Anthropic request failed: {e}") from e
        return response.content[0].text


def make_llm_client(config: LLMConfig) -> LLMClient | None:
    """Build the configured backend, or ``None`` when extraction is cache-only."""
    if config.backend == "none":
        return None
    if config.backend == "http":
        return HttpLLMClient(config.endpoint, temperature=config.temperature)
    return AnthropicLLMClient(config.model, config.temperature, config.max_tokens)
