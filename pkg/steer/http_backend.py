"""OpenAI-compatible chat-completion backends

One synchronous httpx client is shared by the rater, the persona generator
and the coherence judge. Transient failures (HTTP 429, 5xx, transport errors
and unparseable content) are retried with a doubling delay; a level outside
the scale is rejected at once.
"""

import json
import re
import time
from typing import Any, Dict, Optional, Tuple

import httpx

from .backends import RatingResult
from .config import HttpConfig
from .core_model import Case, OrdinalScale, Persona
from .errors import DomainError, RatingError, TransportError
from .logging_setup import get_logger
from .prompts import PromptTemplates, load_definitions

JUDGE_SCORE_RANGE = (0, 4)

_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)


class _Retryable(Exception):
    """Internal marker for a failure worth another attempt."""

    def __init__(self, message: str, raw: Any = None, transport: bool = False):
        super().__init__(message)
        self.raw = raw
        self.transport = transport


def extract_json_object(content: str) -> Dict:
    """Parse the outermost JSON object in a reply (code fences tolerated)."""
    match = _JSON_OBJECT.search(content or "")
    if not match:
        raise ValueError("no JSON object in reply")
    data = json.loads(match.group(0))
    if not isinstance(data, dict):
        raise ValueError("reply JSON is not an object")
    return data


def strict_int(value: Any, field: str) -> int:
    """Integers only: bools, floats and strings are rejected."""
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"field {field!r} is not an integer: {value!r}")
    return value


class ChatCompletionClient:
    """POST {base_url}/chat/completions with capped exponential retries."""

    def __init__(self, config: HttpConfig, transport: Optional[httpx.BaseTransport] = None):
        if not config.base_url:
            raise DomainError("http.base_url is required for the HTTP backend")
        self.config = config
        self.log = get_logger()
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip('/'),
            headers=headers,
            timeout=httpx.Timeout(config.timeout, connect=10.0),
            transport=transport,
        )

    def close(self):
        self._client.close()

    def _post(self, model: str, prompt: str, system: Optional[str] = None) -> Tuple[str, Dict]:
        messages = [{"role": "system", "content": system}] if system else []
        messages.append({"role": "user", "content": prompt})
        body = {
            "model": model,
            "temperature": self.config.temperature,
            "messages": messages,
        }
        try:
            response = self._client.post("/chat/completions", json=body)
        except httpx.TransportError as e:
            raise _Retryable(f"transport error: {e}", transport=True)

        if response.status_code == 429 or response.status_code >= 500:
            raise _Retryable(
                f"HTTP {response.status_code}: {response.text[:200]}",
                raw=response.text, transport=True,
            )
        if response.status_code >= 400:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")

        try:
            payload = response.json()
            content = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise _Retryable("malformed chat-completion payload", raw=response.text)
        if not isinstance(content, str):
            raise _Retryable("chat-completion content is not text", raw=payload)
        return content, payload

    def complete(self, model: str, prompt: str, parse=None, system: Optional[str] = None) -> Any:
        """
        Send one prompt (after an optional system message) and return
        parse(content), or the content itself.

        parse may raise ValueError to request a retry; DomainError and
        RatingError propagate immediately.

        Raises:
            TransportError: endpoint unreachable after all attempts
            RatingError: content still unparseable after all attempts
        """
        delay = self.config.retry_delay
        attempts = self.config.retry_attempts
        last: Optional[_Retryable] = None

        for attempt in range(1, attempts + 1):
            try:
                content, _ = self._post(model, prompt, system)
                if parse is None:
                    return content
                try:
                    return parse(content)
                except (ValueError, KeyError, TypeError) as e:
                    raise _Retryable(f"unparseable reply: {e}", raw=content)
            except _Retryable as e:
                last = e
                if attempt < attempts:
                    self.log.warning(
                        f"Chat completion attempt {attempt}/{attempts} failed ({e}), "
                        f"retrying in {delay}s..."
                    )
                    time.sleep(delay)
                    delay = min(delay * 2, self.config.max_retry_delay)

        if last.transport:
            raise TransportError(f"chat completion failed after {attempts} attempts: {last}")
        raise RatingError(f"reply unparseable after {attempts} attempts: {last}", raw=last.raw)


class HttpRater:
    """
    RaterBackend rendering the rater template for each (persona, case).

    The rendered template is the system message; the case payload is the
    user turn.
    """

    deterministic = False
    supports_parallel = True

    def __init__(self, client: ChatCompletionClient, templates: PromptTemplates,
                 template_name: str = "rater_esi.j2", rating_field: str = "esi_level",
                 definitions_file: str = ""):
        self.client = client
        self.templates = templates
        self.template_name = template_name
        self.rating_field = rating_field
        self.definitions = load_definitions(definitions_file)
        self.model = client.config.model
        self.backend_id = f"http-rater:{self.model}:{template_name}:{client.config.temperature!r}"
        templates.check(template_name, "rater")

    def render(self, persona: Persona, case: Case) -> str:
        return self.templates.render(self.template_name, "rater", {
            "persona_block": persona.prompt_text,
            "patient_case": case.payload,
            "scale_definitions": self.definitions,
        })

    def rate(self, persona: Persona, case: Case, scale: OrdinalScale,
             sample: int = 0) -> RatingResult:
        prompt = self.render(persona, case)

        def parse(content: str) -> RatingResult:
            data = extract_json_object(content)
            level = strict_int(data[self.rating_field], self.rating_field)
            if not 1 <= level <= scale.k_levels:
                raise RatingError(
                    f"{persona.id}/{case.id}: level {level} outside [1, {scale.k_levels}]",
                    raw=content,
                )
            rationale = data.get("reasoning") or data.get("rationale") or ""
            return RatingResult(level=level, rationale=str(rationale))

        return self.client.complete(self.model, case.payload, parse, system=prompt)

    def close(self):
        self.client.close()


class HttpGenerator:
    """GeneratorBackend sending the already-rendered generation prompt."""

    def __init__(self, client: ChatCompletionClient, model: str = ""):
        self.client = client
        self.model = model or client.config.model
        self.backend_id = f"http-generator:{self.model}"

    def generate_persona(self, request) -> str:
        def parse(content: str) -> str:
            text = content.strip()
            if not text:
                raise ValueError("empty persona text")
            return text

        return self.client.complete(self.model, request.rendered_prompt, parse)


class HttpCoherenceScorer:
    """CoherenceScorer asking one judge prompt per dimension."""

    def __init__(self, client: ChatCompletionClient, templates: PromptTemplates,
                 soundness_template: str = "judge_soundness.j2",
                 grounding_template: str = "judge_grounding.j2", model: str = ""):
        self.client = client
        self.templates = templates
        self.soundness_template = soundness_template
        self.grounding_template = grounding_template
        self.model = model or client.config.model
        self.backend_id = f"http-judge:{self.model}:{soundness_template}:{grounding_template}"
        templates.check(soundness_template, "judge")
        templates.check(grounding_template, "judge")

    def _ask(self, template_name: str, case: Case, rationale: str, level: Optional[int]) -> float:
        prompt = self.templates.render(template_name, "judge", {
            "patient_case": case.payload,
            "decision": "" if level is None else level,
            "rationale": rationale,
        })
        low, high = JUDGE_SCORE_RANGE

        def parse(content: str) -> float:
            score = strict_int(extract_json_object(content)["score"], "score")
            if not low <= score <= high:
                raise RatingError(f"judge score {score} outside [{low}, {high}]", raw=content)
            return float(score)

        return self.client.complete(self.model, prompt, parse)

    def score(self, persona: Persona, case: Case, rationale: str,
              level: Optional[int] = None) -> Tuple[float, float]:
        soundness = self._ask(self.soundness_template, case, rationale, level)
        grounding = self._ask(self.grounding_template, case, rationale, level)
        return soundness, grounding
