"""Flat SPICE netlists: parse, mutate, serialize.

Every card keeps its original text in ``raw``; serialization emits ``raw``
verbatim so an untouched netlist round-trips byte for byte. Mutations rebuild
only the affected card.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .units import PhysicalValue, UnitError, format_plain, format_value, parse_value

KINDS = (
    "mosfet",
    "vsource",
    "isource",
    "resistor",
    "capacitor",
    "model_directive",
    "include_directive",
    "analysis_directive",
    "control_block",
    "comment",
    "option",
)

ROLES = ("vin+", "vin-", "vout", "vdd", "vss")


class NetlistError(ValueError):
    pass


class MalformedCard(NetlistError):
    def __init__(self, line_no: int, text: str, why: str = "too few fields"):
        super().__init__(f"line {line_no}: {why}: {text.strip()!r}")
        self.line_no = line_no


class SubcircuitUnsupported(NetlistError):
    pass


class DuplicateId(NetlistError):
    pass


class UnknownDevice(NetlistError):
    pass


class NonPositiveValue(NetlistError):
    pass


@dataclass(frozen=True)
class NodeConstraints:
    tech: str
    w_range: tuple[float, float]
    l_range: tuple[float, float]
    vsup: float
    bias_range: tuple[float, float]  # open interval

    def clamp_size(self, param: str, value: float) -> tuple[float, bool]:
        lo, hi = self.w_range if param.upper() == "W" else self.l_range
        v = min(max(value, lo), hi)
        return v, v != value

    def clamp_bias(self, volts: float, eps: float = 1e-3) -> tuple[float, bool]:
        lo, hi = self.bias_range
        v = min(max(volts, lo + eps), hi - eps)
        return v, v != volts

    def describe(self) -> str:
        um = lambda r: f"[{r[0] * 1e6:g}, {r[1] * 1e6:g}] µm"
        return (
            f"technology {self.tech}: W ∈ {um(self.w_range)}, L ∈ {um(self.l_range)}, "
            f"supply {self.vsup:g} V, bias ∈ ({self.bias_range[0]:g}, {self.bias_range[1]:g}) V"
        )


CONSTRAINTS = {
    "180nm": NodeConstraints("180nm", (0.18e-6, 400e-6), (0.18e-6, 18e-6), 1.8, (0.0, 1.8)),
    "130nm": NodeConstraints("130nm", (0.13e-6, 400e-6), (0.13e-6, 13e-6), 1.8, (0.0, 1.8)),
    "90nm": NodeConstraints("90nm", (0.09e-6, 400e-6), (0.09e-6, 9e-6), 1.2, (0.0, 1.2)),
}


def constraints_for(tech: str) -> NodeConstraints:
    key = tech.lower().replace(" ", "")
    if key not in CONSTRAINTS:
        raise NetlistError(f"unknown technology {tech!r}; expected one of {sorted(CONSTRAINTS)}")
    return CONSTRAINTS[key]


@dataclass(frozen=True)
class Card:
    kind: str
    id: str
    nodes: tuple[str, ...]
    params: Mapping[str, PhysicalValue]
    raw: str
    model: str = ""
    passthrough: bool = False

    def __eq__(self, other):
        if not isinstance(other, Card):
            return NotImplemented
        return (self.kind, self.id, self.nodes, dict(self.params), self.raw, self.model, self.passthrough) == (
            other.kind, other.id, other.nodes, dict(other.params), other.raw, other.model, other.passthrough)

    def __hash__(self):
        return hash((self.kind, self.id, self.raw))

    def value(self, name: str) -> float:
        return self.params[name].magnitude


@dataclass(frozen=True)
class Netlist:
    title: str
    cards: tuple[Card, ...]
    node_aliases: Mapping[str, str] = field(default_factory=dict)
    trailing_newline: bool = True
    base_dir: str | None = field(default=None, compare=False)

    def __eq__(self, other):
        if not isinstance(other, Netlist):
            return NotImplemented
        return (self.title, self.cards, dict(self.node_aliases), self.trailing_newline) == (
            other.title, other.cards, dict(other.node_aliases), other.trailing_newline)

    def __hash__(self):
        return hash(self.text())

    def text(self) -> str:
        return serialize(self)

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()[:16]

    def find(self, ident: str) -> Card | None:
        low = ident.lower()
        for c in self.cards:
            if c.id and c.id.lower() == low:
                return c
        return None

    def index_of(self, ident: str) -> int:
        low = ident.lower()
        for i, c in enumerate(self.cards):
            if c.id and c.id.lower() == low:
                return i
        raise UnknownDevice(ident)

    def devices(self, kind: str | None = None) -> list[Card]:
        return [c for c in self.cards if c.id and (kind is None or c.kind == kind)]

    def nodes(self) -> set[str]:
        out = {"0"}
        for c in self.cards:
            out.update(n.lower() for n in c.nodes)
        return out

    def role(self, role: str) -> str | None:
        return self.node_aliases.get(role)

    def with_aliases(self, aliases: Mapping[str, str]) -> "Netlist":
        return replace(self, node_aliases=MappingProxyType(dict(aliases)))

    def with_cards(self, cards) -> "Netlist":
        return replace(self, cards=tuple(cards))


# ---------------------------------------------------------------- parsing

_ASSIGN = re.compile(r"\s*=\s*")


def _strip_inline_comment(text: str) -> str:
    for mark in (" $", "\t$", ";"):
        i = text.find(mark)
        if i >= 0:
            text = text[:i]
    return text


def _tokens(raw: str) -> list[str]:
    body = " ".join(
        (ln.lstrip()[1:] if i and ln.lstrip().startswith("+") else ln) for i, ln in enumerate(raw.split("\n"))
    )
    body = _strip_inline_comment(body)
    body = _ASSIGN.sub("=", body.strip())
    # keep "PULSE(0 1 ...)" groups as-is; only split on whitespace
    return body.split()


def _kv(tokens: list[str]) -> dict[str, str]:
    out = {}
    for t in tokens:
        if "=" in t:
            k, v = t.split("=", 1)
            out[k.lower()] = v
    return out


def _is_number(tok: str) -> bool:
    try:
        parse_value(tok)
        return True
    except UnitError:
        return False


def _source_dc(tokens: list[str]) -> float | None:
    rest = tokens[3:]
    for i, t in enumerate(rest):
        if t.lower() == "dc" and i + 1 < len(rest) and _is_number(rest[i + 1]):
            return parse_value(rest[i + 1])
    if rest and _is_number(rest[0]):
        return parse_value(rest[0])
    return None


def _make_card(raw: str, line_no: int) -> Card:
    stripped = raw.strip()
    if not stripped:
        return Card("comment", "", (), {}, raw)
    if stripped.startswith("*"):
        return Card("comment", "", (), {}, raw)
    low = stripped.lower()
    if low.startswith("."):
        word = low.split()[0]
        if word in (".subckt", ".ends"):
            raise SubcircuitUnsupported(f"line {line_no}: subcircuits are not supported (flat netlists only)")
        if word == ".model":
            toks = _tokens(raw)
            if len(toks) < 3:
                raise MalformedCard(line_no, raw)
            return Card("model_directive", "", (), {}, raw, model=toks[1])
        if word in (".include", ".inc", ".lib"):
            return Card("include_directive", "", (), {}, raw)
        if word in (".op", ".ac", ".dc", ".tran", ".noise", ".tf", ".pz", ".sens", ".disto"):
            return Card("analysis_directive", "", (), {}, raw)
        if word in (".option", ".options", ".opt"):
            return Card("option", "", (), {}, raw)
        if word == ".control":
            return Card("control_block", "", (), {}, raw)
        return Card("comment", "", (), {}, raw, passthrough=True)
    toks = _tokens(raw)
    head = toks[0]
    letter = head[0].lower()
    if letter == "x":
        raise SubcircuitUnsupported(f"line {line_no}: subcircuit instance {head} (flat netlists only)")
    if letter == "m":
        if len(toks) < 6:
            raise MalformedCard(line_no, raw)
        kv = _kv(toks[6:])
        params = {}
        for key in ("w", "l"):
            if key not in kv:
                raise MalformedCard(line_no, raw, f"mosfet without {key.upper()}=")
            val = parse_value(kv[key])
            if val <= 0:
                raise MalformedCard(line_no, raw, f"non-positive {key.upper()}")
            params[key.upper()] = PhysicalValue(val, "m")
        for key, v in kv.items():
            if key not in ("w", "l") and _is_number(v):
                params[key] = PhysicalValue(parse_value(v))
        return Card("mosfet", head, tuple(toks[1:5]), MappingProxyType(params), raw, model=toks[5])
    if letter in "vi":
        if len(toks) < 3:
            raise MalformedCard(line_no, raw)
        params = {}
        dc = _source_dc(toks)
        if dc is not None:
            params["dc"] = PhysicalValue(dc, "V" if letter == "v" else "A")
        kind = "vsource" if letter == "v" else "isource"
        return Card(kind, head, tuple(toks[1:3]), MappingProxyType(params), raw)
    if letter in "rc":
        if len(toks) < 4:
            raise MalformedCard(line_no, raw)
        val = parse_value(toks[3]) if _is_number(toks[3]) else parse_value(_kv(toks[3:]).get(letter, "nan"))
        unit = "Ohm" if letter == "r" else "F"
        kind = "resistor" if letter == "r" else "capacitor"
        return Card(kind, head, tuple(toks[1:3]), MappingProxyType({"value": PhysicalValue(val, unit)}), raw)
    # L, E, G, D, B, ... : carried through untouched; node list best-effort
    nodes = tuple(t for t in toks[1:3] if "=" not in t)
    return Card("comment", head, nodes, {}, raw, passthrough=True)


def parse_netlist(text: str, base_dir: str | Path | None = None) -> Netlist:
    if not text or not text.strip():
        raise NetlistError("empty netlist")
    trailing = text.endswith("\n")
    lines = text.split("\n")
    if trailing:
        lines = lines[:-1]
    title, body = lines[0], lines[1:]
    # group physical lines into logical cards
    groups: list[tuple[int, list[str]]] = []
    in_control = False
    for no, line in enumerate(body, start=2):
        low = line.strip().lower()
        if in_control:
            groups[-1][1].append(line)
            if low.startswith(".endc"):
                in_control = False
            continue
        if low.startswith("+") and groups and groups[-1][1][0].strip():
            groups[-1][1].append(line)
            continue
        groups.append((no, [line]))
        if low.startswith(".control"):
            in_control = True
    cards = []
    seen: dict[str, int] = {}
    for no, group in groups:
        card = _make_card("\n".join(group), no)
        if card.id:
            key = card.id.lower()
            if key in seen:
                raise DuplicateId(f"line {no}: {card.id} already defined on line {seen[key]}")
            seen[key] = no
        cards.append(card)
    return Netlist(title, tuple(cards), MappingProxyType({}), trailing, str(base_dir) if base_dir else None)


def load_netlist(path: str | Path, roles: str | Path | None = None) -> Netlist:
    """Read a netlist file; node roles come from ``roles`` or a ``<stem>.roles.json`` sidecar."""
    path = Path(path)
    n = parse_netlist(path.read_text(), base_dir=path.parent.resolve())
    sidecar = Path(roles) if roles else path.with_suffix(".roles.json")
    if sidecar.exists():
        n = n.with_aliases(load_roles(sidecar))
    return n


def load_roles(path: str | Path) -> dict[str, str]:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise NetlistError(f"{path}: role map must be a JSON object")
    return {str(k).replace("−", "-"): str(v) for k, v in data.items()}


def serialize(n: Netlist) -> str:
    out = "\n".join([n.title] + [c.raw for c in n.cards])
    return out + "\n" if n.trailing_newline else out


# ---------------------------------------------------------------- mutation


def _replace_kv(tokens: list[str], key: str, text: str) -> list[str]:
    for i, t in enumerate(tokens):
        if "=" in t and t.split("=", 1)[0].lower() == key.lower():
            tokens[i] = f"{t.split('=', 1)[0]}={text}"
            return tokens
    return tokens + [f"{key}={text}"]


def _rebuild(card: Card, raw: str) -> Card:
    return _make_card(raw, 0)


def set_device_param(n: Netlist, device_id: str, param: str, value: float,
                     c: NodeConstraints) -> tuple[Netlist, bool]:
    """Set W or L of one mosfet, clamped into the node's range."""
    idx = n.index_of(device_id)
    card = n.cards[idx]
    if card.kind != "mosfet":
        raise UnknownDevice(f"{device_id} is not a mosfet")
    if param.upper() not in ("W", "L"):
        raise NetlistError(f"param must be W or L, got {param!r}")
    if not value > 0:
        raise NonPositiveValue(f"{device_id}.{param} = {value}")
    v, clamped = c.clamp_size(param, value)
    toks = _tokens(card.raw)
    raw = " ".join(_replace_kv(toks, param.upper(), format_value(v)))
    cards = list(n.cards)
    cards[idx] = _rebuild(card, raw)
    return n.with_cards(cards), clamped


def find_source(n: Netlist, source_id: str) -> Card:
    card = n.find(source_id) or n.find("V" + source_id)
    if card is None or card.kind != "vsource":
        raise UnknownDevice(f"no voltage source {source_id!r}")
    return card


def set_source_value(n: Netlist, source_id: str, volts: float,
                     c: NodeConstraints) -> tuple[Netlist, bool]:
    """Replace a source's DC value, nudged into the open bias interval."""
    card = find_source(n, source_id)
    idx = n.index_of(card.id)
    v, clamped = c.clamp_bias(volts)
    return _set_dc(n, idx, v), clamped


def _set_dc(n: Netlist, idx: int, volts: float) -> Netlist:
    card = n.cards[idx]
    toks = _tokens(card.raw)
    rest = toks[3:]
    text = format_plain(volts)
    done = False
    for i, t in enumerate(rest):
        if t.lower() == "dc" and i + 1 < len(rest):
            rest[i + 1] = text
            done = True
            break
    if not done:
        if rest and _is_number(rest[0]):
            rest[0] = text
        else:
            rest = ["DC", text] + rest
    cards = list(n.cards)
    cards[idx] = _rebuild(card, " ".join(toks[:3] + rest))
    return n.with_cards(cards)


def set_dc_unclamped(n: Netlist, source_id: str, volts: float) -> Netlist:
    """Harness-side DC edit (no bias clamping); used for stimulus sources."""
    card = find_source(n, source_id)
    return _set_dc(n, n.index_of(card.id), volts)


def replace_card(n: Netlist, ident: str, raw: str) -> Netlist:
    idx = n.index_of(ident)
    cards = list(n.cards)
    cards[idx] = _make_card(raw, 0)
    return n.with_cards(cards)


def remove_cards(n: Netlist, ids) -> Netlist:
    drop = {i.lower() for i in ids}
    return n.with_cards(c for c in n.cards if not (c.id and c.id.lower() in drop))


def add_cards(n: Netlist, raws, before_end: bool = True) -> Netlist:
    """Append cards (before a trailing ``.end`` if present)."""
    new = [_make_card(r, 0) for r in raws]
    cards = list(n.cards)
    pos = len(cards)
    if before_end:
        for i in range(len(cards) - 1, -1, -1):
            if cards[i].raw.strip().lower() == ".end":
                pos = i
                break
    existing = {c.id.lower() for c in cards if c.id}
    for c in new:
        if c.id and c.id.lower() in existing:
            raise DuplicateId(c.id)
    return n.with_cards(cards[:pos] + new + cards[pos:])


# ---------------------------------------------------------------- queries


@dataclass(frozen=True)
class MosfetInfo:
    device_id: str
    W: float
    L: float
    model: str
    polarity: str


def model_types(n: Netlist, extra_paths=()) -> dict[str, str]:
    """Model name -> type (nmos/pmos) from .model cards, plus any given library files."""
    out = {}
    texts = [c.raw for c in n.cards if c.kind == "model_directive"]
    for p in extra_paths:
        try:
            texts.extend(Path(p).read_text().split("\n"))
        except OSError:
            continue
    for raw in texts:
        toks = raw.replace("(", " ").split()
        if len(toks) >= 3 and toks[0].lower() == ".model":
            out[toks[1].lower()] = toks[2].lower()
    return out


def _guess_polarity(model: str) -> str:
    m = model.lower()
    if "pmos" in m or "pch" in m:
        return "pmos"
    if "nmos" in m or "nch" in m:
        return "nmos"
    # trailing letter first: PTM90N is an nmos despite the leading P
    if m.endswith("p"):
        return "pmos"
    if m.endswith("n"):
        return "nmos"
    return "pmos" if m.startswith("p") else "nmos"


def list_mosfets(n: Netlist, types: Mapping[str, str] | None = None) -> list[MosfetInfo]:
    types = dict(model_types(n), **(types or {}))
    out = []
    for c in n.cards:
        if c.kind != "mosfet":
            continue
        t = types.get(c.model.lower(), "")
        pol = t if t in ("nmos", "pmos") else _guess_polarity(c.model)
        out.append(MosfetInfo(c.id, c.value("W"), c.value("L"), c.model, pol))
    return out


def list_sources(n: Netlist) -> list[tuple[str, float | None]]:
    return [(c.id, c.params["dc"].magnitude if "dc" in c.params else None)
            for c in n.cards if c.kind == "vsource"]


def bias_sources(n: Netlist) -> list[str]:
    """Voltage sources the proposer may tune: everything except supply and input stimulus."""
    fixed = {n.role(r) for r in ("vdd", "vss", "vin+", "vin-") if n.role(r)}
    out = []
    for c in n.cards:
        if c.kind != "vsource":
            continue
        if any(node.lower() in {f.lower() for f in fixed} and node != "0" for node in c.nodes[:1]):
            continue
        if "dc" not in c.params:
            continue
        out.append(c.id)
    return out


def parameter_vector(n: Netlist) -> list[tuple[str, str, float]]:
    out = []
    for m in list_mosfets(n):
        out.append((m.device_id, "W", m.W))
        out.append((m.device_id, "L", m.L))
    for sid in bias_sources(n):
        out.append((sid, "V", n.find(sid).value("dc")))
    return out
