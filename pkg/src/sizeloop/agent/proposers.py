"""Proposal backends: hosted chat models, scripted replay, seeded random and null."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from ..netlist import Netlist, NodeConstraints, bias_sources, list_mosfets
from ..spec import BackendConfig
from ..units import UnitError, parse_value
from .types import Proposal, ProposerUnavailable, RateLimited, Transcript, TransportError, UnparseableProposal

log = logging.getLogger(__name__)

BACKENDS = ("openai_compatible", "gemini", "scripted", "random", "null")

_FENCE = re.compile(r"```[ \t]*([A-Za-z0-9_-]*)[ \t]*\n(.*?)```", re.DOTALL)

CORRECTIVE = (
    "Your last answer did not contain a usable JSON block. Reply again with exactly one fenced "
    "```json block holding \"devices\", \"sources\" and \"no_change\" as described, values as "
    "positive numbers or SPICE strings such as \"3.5u\"."
)

# bare numbers at or above this are read as micrometres, not metres
_MICRON_CUTOFF = 1e-3


def fenced_json(text: str):
    """First fenced block that decodes as JSON, with its span; (None, None) if none."""
    for m in _FENCE.finditer(text):
        if m.group(1).lower() not in ("", "json", "jsonc"):
            continue
        try:
            return json.loads(m.group(2)), m.span()
        except json.JSONDecodeError:
            continue
    return None, None


def _length(v) -> float:
    if isinstance(v, bool):
        raise UnitError("boolean size")
    if isinstance(v, (int, float)):
        return float(v) * 1e-6 if abs(v) >= _MICRON_CUTOFF else float(v)
    return parse_value(str(v))


def _volts(v) -> float:
    if isinstance(v, bool):
        raise UnitError("boolean voltage")
    if isinstance(v, (int, float)):
        return float(v)
    return parse_value(str(v))


def proposal_from_obj(obj, rationale: str = "", raw: str = "") -> Proposal:
    """Decode the wire format; accepts the structured form or a flat {id: {...} | volts} map."""
    if not isinstance(obj, Mapping):
        raise UnparseableProposal("proposal JSON must be an object", raw)
    if any(k in obj for k in ("devices", "sources", "no_change")):
        devs, srcs = obj.get("devices") or {}, obj.get("sources") or {}
        no_change = bool(obj.get("no_change", False))
        rationale = str(obj.get("rationale", "")) or rationale
    else:
        devs = {k: v for k, v in obj.items() if isinstance(v, Mapping)}
        srcs = {k: v for k, v in obj.items() if not isinstance(v, Mapping) and k != "rationale"}
        no_change = False
        rationale = str(obj.get("rationale", "")) or rationale
    if not isinstance(devs, Mapping) or not isinstance(srcs, Mapping):
        raise UnparseableProposal("devices and sources must be objects", raw)
    try:
        device_updates = {}
        for dev, upd in devs.items():
            if not isinstance(upd, Mapping):
                raise UnparseableProposal(f"{dev}: expected an object of W/L", raw)
            vals = {}
            for k, v in upd.items():
                key = str(k).upper()
                if key not in ("W", "L"):
                    raise UnparseableProposal(f"{dev}: unknown parameter {k!r}", raw)
                vals[key] = _length(v)
            if vals:
                device_updates[str(dev)] = vals
        source_updates = {str(s): _volts(v) for s, v in srcs.items()}
        return Proposal(device_updates, source_updates, rationale.strip(), no_change or not (device_updates or source_updates), raw)
    except (UnitError, ValueError) as e:
        if isinstance(e, UnparseableProposal):
            raise
        raise UnparseableProposal(str(e), raw) from e


def parse_proposal(text: str) -> Proposal:
    obj, span = fenced_json(text)
    if obj is None:
        raise UnparseableProposal("no fenced JSON block found", text)
    rationale = (text[: span[0]] + text[span[1]:]).strip()
    return proposal_from_obj(obj, rationale, text)


# ---------------------------------------------------------------- base


class Proposer:
    """Interface; ``propose`` receives the prompt plus the live design for non-LLM backends."""

    kind = "base"
    supports_tools = False

    def __init__(self):
        self.calls = 0

    def propose(self, prompt: str, netlist: Netlist | None = None,
                constraints: NodeConstraints | None = None) -> tuple[Proposal, Transcript]:
        raise NotImplementedError

    def identify(self, netlist_text: str) -> dict | None:
        """Circuit type and io nodes, or None when this backend cannot answer."""
        return None

    def select_functions(self, prompt: str, declarations: Sequence[dict]) -> list[dict] | None:
        return None


class NullProposer(Proposer):
    kind = "null"

    def propose(self, prompt, netlist=None, constraints=None):
        self.calls += 1
        p = Proposal(no_change=True, rationale="no change proposed")
        return p, Transcript(prompt, "{\"no_change\": true}")


class ScriptedProposer(Proposer):
    """Replays a JSON-lines file of proposals; returns no-change once the script runs out."""

    kind = "scripted"

    def __init__(self, path: str | Path | None = None, lines: Sequence[str] | None = None):
        super().__init__()
        if lines is None:
            if path is None:
                raise ValueError("scripted backend needs a script file")
            lines = Path(path).read_text().splitlines()
        self.steps: list[str] = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
        self.position = 0

    def __len__(self):
        return len(self.steps)

    def propose(self, prompt, netlist=None, constraints=None):
        self.calls += 1
        if self.position >= len(self.steps):
            return Proposal(no_change=True, rationale="script exhausted"), Transcript(prompt, "")
        line = self.steps[self.position]
        self.position += 1
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise UnparseableProposal(f"script line {self.position}: {e}", line) from e
        return proposal_from_obj(obj, "", line), Transcript(prompt, line)


class RandomProposer(Proposer):
    """Seeded log-uniform sizes and uniform biases; ``spread`` widens draws past the limits."""

    kind = "random"

    def __init__(self, seed: int = 0, fraction: float = 0.3, spread: float = 1.0):
        super().__init__()
        self.rng = np.random.default_rng(seed)
        self.fraction = fraction
        self.spread = spread

    def _log_uniform(self, lo: float, hi: float) -> float:
        a, b = math.log(lo / self.spread), math.log(hi * self.spread)
        return float(math.exp(self.rng.uniform(a, b)))

    def propose(self, prompt, netlist=None, constraints=None):
        self.calls += 1
        if netlist is None or constraints is None:
            return Proposal(no_change=True, rationale="no design bound"), Transcript(prompt, "")
        devs, srcs = {}, {}
        for m in list_mosfets(netlist):
            if self.rng.random() < self.fraction:
                devs[m.device_id] = {"W": self._log_uniform(*constraints.w_range),
                                     "L": self._log_uniform(*constraints.l_range)}
        lo, hi = constraints.bias_range
        for s in bias_sources(netlist):
            if self.rng.random() < self.fraction:
                mid, half = (lo + hi) / 2, (hi - lo) / 2 * self.spread
                v = float(self.rng.uniform(mid - half, mid + half))
                srcs[s] = v if v > 0 else 1e-3
        if not (devs or srcs):
            return Proposal(no_change=True, rationale="random draw selected nothing"), Transcript(prompt, "")
        p = Proposal(devs, srcs, "random perturbation")
        return p, Transcript(prompt, json.dumps(p.to_dict(), sort_keys=True))


# ---------------------------------------------------------------- hosted chat


class ChatProposer(Proposer):
    """Shared retry, re-prompt and parsing logic for HTTP chat backends."""

    supports_tools = True
    retries = 3
    backoff = 1.0
    reprompts = 2

    def __init__(self, cfg: BackendConfig, api_key: str, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__()
        self.cfg = cfg
        self.api_key = api_key
        self.client = client or httpx.Client(timeout=120.0)
        self.sleep = sleep

    # subclasses build requests and decode responses
    def _request(self, messages: list[dict], tools: Sequence[dict] | None) -> tuple[str, dict]:
        raise NotImplementedError

    def _decode(self, data: dict) -> tuple[str, list[dict]]:
        raise NotImplementedError

    def _post(self, messages: list[dict], tools: Sequence[dict] | None = None) -> tuple[str, list[dict]]:
        url, body = self._request(messages, tools)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                r = self.client.post(url, json=body, headers=self._headers())
            except httpx.HTTPError as e:
                last = TransportError(f"{type(e).__name__}: {e}")
                delay = self.backoff * 2**attempt
            else:
                if r.status_code == 429 or r.status_code >= 500:
                    after = _retry_after(r.headers.get("retry-after"))
                    last = (RateLimited(f"HTTP {r.status_code}", after) if r.status_code == 429
                            else TransportError(f"HTTP {r.status_code}: {r.text[:200]}"))
                    delay = after if after is not None else self.backoff * 2**attempt
                elif r.status_code >= 400:
                    raise ProposerUnavailable(f"HTTP {r.status_code}: {r.text[:300]}")
                else:
                    try:
                        return self._decode(r.json())
                    except (ValueError, KeyError, IndexError, TypeError) as e:
                        raise TransportError(f"malformed response: {e}") from e
            if attempt < self.retries:
                log.warning("%s request failed (%s); retrying in %.1fs", self.kind, last, delay)
                self.sleep(delay)
        raise ProposerUnavailable(f"{self.kind}: giving up after {self.retries + 1} attempts: {last}")

    def _headers(self) -> dict:
        return {}

    def chat(self, messages: list[dict]) -> str:
        return self._post(messages)[0]

    def propose(self, prompt, netlist=None, constraints=None):
        self.calls += 1
        messages = [{"role": "user", "content": prompt}]
        responses = []
        for attempt in range(self.reprompts + 1):
            text = self.chat(messages)
            responses.append(text)
            try:
                p = parse_proposal(text)
                return p, Transcript(prompt, "\n\n---\n\n".join(responses), attempt + 1)
            except UnparseableProposal as e:
                log.warning("unparseable proposal (%s)", e)
                messages += [{"role": "assistant", "content": text}, {"role": "user", "content": CORRECTIVE}]
        raise UnparseableProposal(f"no usable proposal after {self.reprompts} corrective prompts",
                                  "\n\n---\n\n".join(responses))

    def identify(self, netlist_text: str) -> dict | None:
        prompt = (
            "Identify this circuit. Reply with one fenced JSON block "
            "{\"circuit_type\": str, \"io_nodes\": {\"vdd\": node, \"vss\": node, \"vin+\": node, "
            "\"vin-\": node, \"vout\": node}} using node names from the netlist; omit roles that do not apply.\n\n"
            f"```spice\n{netlist_text}\n```"
        )
        obj, _ = fenced_json(self.chat([{"role": "user", "content": prompt}]))
        return obj if isinstance(obj, dict) else None

    def select_functions(self, prompt, declarations):
        _, calls = self._post([{"role": "user", "content": prompt}], declarations)
        return calls


def _retry_after(value: str | None) -> float | None:
    if not value:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


class OpenAICompatibleProposer(ChatProposer):
    kind = "openai_compatible"

    def _headers(self):
        return {"Authorization": f"Bearer {self.api_key}"}

    def _request(self, messages, tools):
        base = (self.cfg.api_base or "https://api.openai.com/v1").rstrip("/")
        body = {"model": self.cfg.model, "messages": messages}
        if self.cfg.temperature is not None:
            body["temperature"] = self.cfg.temperature
        if self.cfg.max_tokens is not None:
            body["max_tokens"] = self.cfg.max_tokens
        if tools:
            body["tools"] = [{"type": "function", "function": d} for d in tools]
        return f"{base}/chat/completions", body

    def _decode(self, data):
        msg = data["choices"][0]["message"]
        calls = []
        for tc in msg.get("tool_calls") or []:
            fn = tc.get("function", {})
            args = fn.get("arguments") or "{}"
            try:
                args = json.loads(args) if isinstance(args, str) else args
            except json.JSONDecodeError:
                args = {"__invalid__": args}
            calls.append({"name": fn.get("name"), "arguments": args})
        return msg.get("content") or "", calls


class GeminiProposer(ChatProposer):
    kind = "gemini"

    def _headers(self):
        return {"x-goog-api-key": self.api_key}

    def _request(self, messages, tools):
        base = (self.cfg.api_base or "https://generativelanguage.googleapis.com/v1beta").rstrip("/")
        contents = [{"role": "model" if m["role"] == "assistant" else "user", "parts": [{"text": m["content"]}]}
                    for m in messages]
        body: dict = {"contents": contents}
        gen = {}
        if self.cfg.temperature is not None:
            gen["temperature"] = self.cfg.temperature
        if self.cfg.max_tokens is not None:
            gen["maxOutputTokens"] = self.cfg.max_tokens
        if gen:
            body["generationConfig"] = gen
        if tools:
            body["tools"] = [{"functionDeclarations": list(tools)}]
        return f"{base}/models/{self.cfg.model}:generateContent", body

    def _decode(self, data):
        parts = data["candidates"][0]["content"].get("parts", [])
        text = "".join(p.get("text", "") for p in parts)
        calls = [{"name": p["functionCall"].get("name"), "arguments": p["functionCall"].get("args", {})}
                 for p in parts if "functionCall" in p]
        return text, calls


def make_proposer(cfg: BackendConfig, client: httpx.Client | None = None, **kw) -> Proposer:
    """Build a backend from config; hosted backends read their API key from the environment."""
    if cfg.kind == "null":
        return NullProposer()
    if cfg.kind == "scripted":
        return ScriptedProposer(cfg.script)
    if cfg.kind == "random":
        return RandomProposer(cfg.seed)
    if cfg.kind == "openai_compatible":
        key = os.environ.get("OPENAI_API_KEY")
        if not key:
            raise ProposerUnavailable("OPENAI_API_KEY is not set")
        if cfg.api_base is None and os.environ.get("EESIZER_API_BASE"):
            cfg = replace(cfg, api_base=os.environ["EESIZER_API_BASE"])
        return OpenAICompatibleProposer(cfg, key, client, **kw)
    if cfg.kind == "gemini":
        key = os.environ.get("GEMINI_API_KEY")
        if not key:
            raise ProposerUnavailable("GEMINI_API_KEY is not set")
        return GeminiProposer(cfg, key, client, **kw)
    raise ValueError(f"unknown backend {cfg.kind!r}; expected one of {', '.join(BACKENDS)}")
