"""Chat-completions transport and deterministic mock backends.

All backends expose ``complete(bundle, trial) -> Completion``; ``trial`` is
the :class:`TrialMeta` of the query (the oracle mock reads the true label from
it). Live requests go through :func:`send`, which retries 429/5xx/timeouts
with capped exponential backoff and full jitter.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx

from .encode import DEFAULT_TOKEN_MODEL, estimate_tokens
from .errors import AuthError, ConfigError, MalformedReply, RateLimited, ScriptMiss, TransportError
from .prompt import PromptBundle

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"


@dataclass(frozen=True)
class ModelConfig:
    endpoint: str = DEFAULT_ENDPOINT
    model: str = "gpt-5.1-2025-11-13"
    api_key_env: str = "OPENAI_API_KEY"
    timeout_s: float = 120.0
    max_retries: int = 5
    max_concurrent: int = 4
    backoff_base_s: float = 1.0
    backoff_factor: float = 2.0
    backoff_cap_s: float = 60.0
    # passed through verbatim into the request body (provider defaults otherwise)
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ConfigError("max_concurrent must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from None

    def api_key(self) -> str | None:
        return os.environ.get(self.api_key_env)

    def backoff(self, attempt: int, rng: random.Random) -> float:
        """Full-jitter delay before retry number ``attempt`` (0-based)."""
        return rng.uniform(0.0, min(self.backoff_cap_s, self.backoff_base_s * self.backoff_factor ** attempt))


@dataclass(frozen=True)
class Completion:
    text: str
    usage: Mapping | None = None
    latency_s: float = 0.0
    attempts: int = 1

    @property
    def prompt_tokens(self) -> int | None:
        return None if self.usage is None else self.usage.get("prompt_tokens")

    @property
    def completion_tokens(self) -> int | None:
        return None if self.usage is None else self.usage.get("completion_tokens")


@dataclass(frozen=True)
class TrialMeta:
    trial_id: str
    true_label: str | None = None
    labels: tuple[str, ...] = ()


def data_url(png: bytes) -> str:
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


def serialize_request(bundle: PromptBundle, config: ModelConfig, inline_images: bool = True) -> dict:
    """Chat-completions request body for ``bundle``.

    With ``inline_images=False`` image payloads are replaced by their digest,
    which is what gets written to the audit log.
    """
    content = []
    for part in bundle.user_parts:
        if part.type == "image":
            url = data_url(part.content.png) if inline_images else f"sha256:{part.content.digest}"
            content.append({"type": "image_url", "image_url": {"url": url, "detail": part.detail}})
        else:
            content.append({"type": "text", "text": part.content})
    body = {
        "model": config.model,
        "messages": [
            {"role": "system", "content": bundle.system},
            {"role": "user", "content": content},
        ],
    }
    body.update(dict(config.params))
    return body


def _parse_reply(payload) -> tuple[str, dict | None]:
    try:
        text = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise MalformedReply("reply has no choices[0].message.content") from None
    if not isinstance(text, str):
        raise MalformedReply("message content is not a string")
    usage = payload.get("usage")
    if usage is not None:
        usage = {k: int(usage[k]) for k in ("prompt_tokens", "completion_tokens") if k in usage}
        if any(v < 0 for v in usage.values()):
            raise MalformedReply("negative token usage")
    return text, usage


def send(
    bundle: PromptBundle,
    config: ModelConfig,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    log_dir: str | Path | None = None,
    tag: str = "request",
) -> Completion:
    """POST a bundle and return the first successful completion."""
    key = config.api_key()
    if not key:
        raise AuthError(f"environment variable {config.api_key_env} is not set")
    rng = rng or random.Random()
    body = serialize_request(bundle, config)
    headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
    own_client = client is None
    client = client or httpx.Client(timeout=config.timeout_s)
    started = time.monotonic()
    last: Exception | None = None
    try:
        for attempt in range(config.max_retries + 1):
            if attempt:
                sleep(config.backoff(attempt - 1, rng))
            try:
                resp = client.post(config.endpoint, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                last = TransportError(f"timeout: {exc}")
                continue
            except httpx.HTTPError as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code == 429:
                last = RateLimited(f"HTTP 429 after {attempt + 1} attempt(s)")
                continue
            if resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                payload = resp.json()
            except ValueError:
                raise MalformedReply("reply is not JSON") from None
            text, usage = _parse_reply(payload)
            if log_dir is not None:
                _audit(Path(log_dir), tag, serialize_request(bundle, config, inline_images=False), payload)
            return Completion(text, usage, time.monotonic() - started, attempt + 1)
    finally:
        if own_client:
            client.close()
    raise last or TransportError("no attempt made")


def _audit(log_dir: Path, tag: str, request: dict, response) -> None:
    log_dir.mkdir(parents=True, exist_ok=True)
    safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in tag)
    (log_dir / f"{safe}.json").write_text(
        json.dumps({"request": request, "response": response}, indent=2), encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# backends

class InFlightMeter:
    """Counts concurrent calls; ``peak`` is the highest simultaneous count seen."""

    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0
        self.calls = 0

    def __enter__(self):
        with self._lock:
            self.current += 1
            self.calls += 1
            self.peak = max(self.peak, self.current)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self.current -= 1


class Backend:
    name = "backend"
    live = False
    max_concurrent = 1

    def complete(self, bundle: PromptBundle, trial: TrialMeta) -> Completion:
        raise NotImplementedError


class HttpBackend(Backend):
    name = "openai"
    live = True

    def __init__(self, config: ModelConfig, log_dir: str | Path | None = None):
        self.config = config
        self.max_concurrent = config.max_concurrent
        self.log_dir = log_dir
        self._client = httpx.Client(timeout=config.timeout_s)

    def complete(self, bundle, trial):
        return send(bundle, self.config, client=self._client, log_dir=self.log_dir, tag=trial.trial_id)

    def close(self):
        self._client.close()


class MockBackend(Backend):
    """Base for offline backends; usage is synthesized from the token estimator."""

    def __init__(self, max_concurrent: int = 1, delay_s: float = 0.0):
        self.max_concurrent = max_concurrent
        self.delay_s = delay_s
        self.meter = InFlightMeter()

    def reply(self, bundle: PromptBundle, trial: TrialMeta) -> str:
        raise NotImplementedError

    def complete(self, bundle, trial):
        with self.meter:
            if self.delay_s:
                time.sleep(self.delay_s)
            text = self.reply(bundle, trial)
        usage = {"prompt_tokens": bundle.token_estimate,
                 "completion_tokens": estimate_tokens(text, DEFAULT_TOKEN_MODEL)}
        return Completion(text, usage, self.delay_s, 1)


def _json_reply(label: str, reason: str) -> str:
    return json.dumps({"activity": label, "reason": reason})


class OracleTruthBackend(MockBackend):
    name = "mock:oracle"

    def reply(self, bundle, trial):
        if trial.true_label is None:
            raise ConfigError("oracle backend needs the true label in trial metadata")
        return _json_reply(trial.true_label, "oracle")


class UniformRandomBackend(MockBackend):
    """Uniform label draws; each reply depends only on (seed, trial id)."""

    name = "mock:random"

    def __init__(self, seed: int = 0, labels: Sequence[str] | None = None, **kw):
        super().__init__(**kw)
        self.seed = seed
        self.labels = list(labels) if labels else None

    def reply(self, bundle, trial):
        labels = self.labels or list(trial.labels) or list(bundle.description_labels)
        digest = hashlib.sha256(f"{self.seed}:{trial.trial_id}".encode()).digest()
        rng = random.Random(int.from_bytes(digest[:8], "big"))
        return _json_reply(rng.choice(sorted(labels)), "random")


class FixedLabelBackend(MockBackend):
    name = "mock:fixed"

    def __init__(self, label: str, **kw):
        super().__init__(**kw)
        self.label = label

    def reply(self, bundle, trial):
        return _json_reply(self.label, "fixed")


class ScriptedBackend(MockBackend):
    """Replies looked up by bundle digest in a JSON file ``{hex digest: reply}``."""

    name = "mock:script"

    def __init__(self, script: str | Path | Mapping[str, str], **kw):
        super().__init__(**kw)
        if isinstance(script, (str, Path)):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        self.script = dict(script)

    def reply(self, bundle, trial):
        digest = bundle.digest
        if digest not in self.script:
            raise ScriptMiss(f"no scripted reply for bundle {digest}")
        return self.script[digest]


def make_backend(spec: str, model_config: ModelConfig | None = None, log_dir=None,
                 max_concurrent: int | None = None) -> Backend:
    """Build a backend from ``mock:oracle``, ``mock:random[:SEED]``,
    ``mock:fixed:LABEL``, ``mock:script:FILE`` or ``openai``."""
    kind, _, arg = spec.partition(":")
    conc = max_concurrent or 1
    if kind == "openai":
        cfg = model_config or ModelConfig()
        if max_concurrent:
            cfg = ModelConfig(**{**cfg.__dict__, "max_concurrent": max_concurrent})
        return HttpBackend(cfg, log_dir)
    if kind != "mock":
        raise ConfigError(f"unknown backend {spec!r}")
    sub, _, rest = arg.partition(":")
    if sub == "oracle":
        return OracleTruthBackend(max_concurrent=conc)
    if sub == "random":
        return UniformRandomBackend(seed=int(rest or 0), max_concurrent=conc)
    if sub == "fixed":
        if not rest:
            raise ConfigError("mock:fixed needs a label, e.g. mock:fixed:Read")
        return FixedLabelBackend(rest, max_concurrent=conc)
    if sub == "script":
        return ScriptedBackend(rest, max_concurrent=conc)
    raise ConfigError(f"unknown mock backend {spec!r}")
