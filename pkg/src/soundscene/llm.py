"""Minimal HTTP client for an external caption-paraphrasing service.

Wire protocol: POST {base_url}/caption with JSON body
  {"model": "<name>", "prompt": "<text>"}
and an optional `Authorization: Bearer <token>` header, token taken from
the environment variable named in the config. The service answers 200
with {"caption": "<text>"}.

Transient failures (connection errors, timeouts, 429, 5xx) are retried
with exponential backoff up to the configured attempt count; auth and
protocol problems fail immediately with a typed error so callers can fall
back to the template captioner.
"""

from __future__ import annotations

import logging
import os
import threading
import time

import requests

from .caption import CaptionCandidate, find_detail_keywords
from .config import LlmConfig

log = logging.getLogger(__name__)


class LlmError(Exception):
    pass


class LlmAuthError(LlmError):
    pass


class LlmQuotaError(LlmError):
    pass


class LlmProtocolError(LlmError):
    pass


class LlmTimeoutError(LlmError):
    def __init__(self, attempts: int, last: Exception | None = None):
        super().__init__(f"no response after {attempts} attempts ({last})")
        self.attempts = attempts


class LlmClient:
    """Bounded-concurrency client; each request is isolated, responses are
    independent of in-flight ordering."""

    def __init__(self, config: LlmConfig, session=None, sleep=time.sleep):
        if not config.base_url:
            raise ValueError("LlmConfig.base_url is required")
        self.config = config
        self.session = session if session is not None else requests.Session()
        self._sleep = sleep
        self._slots = threading.Semaphore(max(1, config.concurrency))

    def _headers(self) -> dict:
        token = os.environ.get(self.config.auth_env, "")
        return {"Authorization": f"Bearer {token}"} if token else {}

    def complete(self, prompt: str) -> str:
        """POST the prompt, returning the service's caption text."""
        url = self.config.base_url.rstrip("/") + "/caption"
        body = {"model": self.config.model, "prompt": prompt}
        attempts = self.config.max_attempts
        last_exc: Exception | None = None
        for attempt in range(attempts):
            if attempt > 0:
                self._sleep(self.config.backoff_s * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    log.debug("llm request attempt %d to %s", attempt + 1, url)
                    resp = self.session.post(
                        url, json=body, headers=self._headers(), timeout=self.config.timeout_s
                    )
            except requests.RequestException as exc:
                last_exc = exc
                log.warning("llm attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code in (401, 403):
                raise LlmAuthError(f"service rejected credentials ({resp.status_code})")
            if resp.status_code == 429:
                last_exc = LlmQuotaError("rate limited (429)")
                log.warning("llm attempt %d rate limited", attempt + 1)
                continue
            if resp.status_code >= 500:
                last_exc = LlmError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise LlmProtocolError(f"unexpected status {resp.status_code}")
            try:
                doc = resp.json()
                text = doc["caption"]
            except (ValueError, KeyError, TypeError) as exc:
                raise LlmProtocolError(f"malformed service reply: {exc}") from exc
            if not isinstance(text, str) or not text.strip():
                raise LlmProtocolError("service reply carries no caption text")
            log.debug("llm response: %r", text)
            return text.strip()
        if isinstance(last_exc, LlmQuotaError):
            raise last_exc
        raise LlmTimeoutError(attempts, last_exc)


def llm_paraphrase(prompt: str, config: LlmConfig, session=None) -> CaptionCandidate:
    """One prompt in, one tagged caption candidate out."""
    client = LlmClient(config, session=session)
    text = client.complete(prompt)
    return CaptionCandidate(
        text=text, origin="llm", detail_keywords_found=find_detail_keywords(text)
    )
