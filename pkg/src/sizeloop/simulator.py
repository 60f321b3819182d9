"""Deck building, batch simulator runs and ASCII rawfile parsing."""

from __future__ import annotations

import math
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .netlist import Netlist, list_mosfets, model_types
from .units import format_plain

ALL_ON_MESSAGE = "No values found where vgs-vth < 0"
ENV_BINARY = "EESIZER_NGSPICE"
DEFAULT_OPTIONS = "reltol=1e-4 abstol=1e-12 method=trap"


class SimulatorError(RuntimeError):
    pass


class SimulatorNotFound(SimulatorError):
    pass


class SimulationFailed(SimulatorError):
    def __init__(self, message: str, log_excerpt: str = ""):
        super().__init__(f"{message}\n{log_excerpt}".strip())
        self.log_excerpt = log_excerpt


class Timeout(SimulatorError):
    def __init__(self, limit_s: float):
        super().__init__(f"simulation exceeded {limit_s:g} s")
        self.limit_s = limit_s


class RawfileMissing(SimulatorError):
    pass


class UnknownProbe(SimulatorError):
    pass


class RawfileError(ValueError):
    pass


class TruncatedRawfile(RawfileError):
    pass


class HeaderMismatch(RawfileError):
    pass


# ---------------------------------------------------------------- analyses


def _eng(x: float) -> str:
    """Compact exponent form for directive arguments: 1e10 -> 10e9, 1e-9 -> 1e-9."""
    if x == 0:
        return "0"
    exp = int(math.floor(math.log10(abs(x)) / 3) * 3)
    if exp == 0:
        return format_plain(x)
    mant = x / 10.0**exp
    return f"{format_plain(mant)}e{exp}"


@dataclass(frozen=True)
class AnalysisCard:
    kind: str  # dc | ac | tran | op
    dc: tuple[str, float, float, float] | None = None
    ac: tuple[int, float, float] | None = None
    tran: tuple[float, float] | None = None
    tran_start: float = 0.0
    tran_max_step: float | None = None

    def __post_init__(self):
        if self.kind not in ("dc", "ac", "tran", "op"):
            raise ValueError(f"unknown analysis {self.kind!r}")
        if self.kind == "dc":
            _, start, stop, step = self.dc
            if not start < stop or step <= 0:
                raise ValueError("dc sweep needs start < stop and step > 0")
        if self.kind == "ac":
            pts, f0, f1 = self.ac
            if not 0 < f0 < f1 or pts < 1:
                raise ValueError("ac sweep needs 0 < f_start < f_stop")
        if self.kind == "tran":
            step, stop = self.tran
            if not 0 < step < stop:
                raise ValueError("tran needs 0 < t_step < t_stop")

    @classmethod
    def op(cls) -> "AnalysisCard":
        return cls("op")

    @classmethod
    def dc_sweep(cls, source: str, start: float, stop: float, step: float) -> "AnalysisCard":
        return cls("dc", dc=(source, start, stop, step))

    @classmethod
    def ac_sweep(cls, points_per_decade: int = 20, f_start: float = 1.0, f_stop: float = 10e9) -> "AnalysisCard":
        return cls("ac", ac=(points_per_decade, f_start, f_stop))

    @classmethod
    def transient(cls, step: float, stop: float, start: float = 0.0, max_step: float | None = None) -> "AnalysisCard":
        return cls("tran", tran=(step, stop), tran_start=start, tran_max_step=max_step)

    def directive(self) -> str:
        if self.kind == "op":
            return ".op"
        if self.kind == "dc":
            src, a, b, s = self.dc
            return f".dc {src} {format_plain(a)} {format_plain(b)} {format_plain(s)}"
        if self.kind == "ac":
            pts, f0, f1 = self.ac
            return f".ac dec {pts} {_eng(f0)} {_eng(f1)}"
        step, stop = self.tran
        text = f".tran {_eng(step)} {_eng(stop)}"
        if self.tran_start or self.tran_max_step:
            text += f" {_eng(self.tran_start)}"
        if self.tran_max_step:
            text += f" {_eng(self.tran_max_step)}"
        return text


# ---------------------------------------------------------------- raw data


def vector_key(name: str) -> str:
    """Normalize a vector name so v(out), V(OUT) and out compare equal."""
    s = name.strip().lower().replace(" ", "")
    m = re.fullmatch(r"v\((.*)\)", s)
    if m and "," not in m.group(1):
        s = m.group(1)
    m = re.fullmatch(r"(.+)#branch", s)
    if m:
        s = f"i({m.group(1)})"
    return s


@dataclass(frozen=True)
class RawData:
    plotname: str
    flags: str
    variables: tuple[tuple[str, str], ...]
    points: np.ndarray = field(repr=False)
    title: str = ""

    @property
    def is_complex(self) -> bool:
        return self.flags == "complex"

    @property
    def names(self) -> list[str]:
        return [v[0] for v in self.variables]

    @property
    def has_sweep(self) -> bool:
        name = self.variables[0][0].lower()
        if name.startswith(("v(", "i(")) and name.endswith(")"):
            name = name[2:-1]
        return self.variables[0][1] in ("frequency", "time") or name in ("frequency", "time") or name.endswith("-sweep")

    def index(self, name: str) -> int:
        key = vector_key(name)
        for i, (n, _) in enumerate(self.variables):
            if vector_key(n) == key:
                return i
        raise KeyError(f"vector {name!r} not in rawfile (have {self.names})")

    def has(self, name: str) -> bool:
        try:
            self.index(name)
            return True
        except KeyError:
            return False

    def vector(self, name: str) -> np.ndarray:
        return self.points[:, self.index(name)]

    @property
    def sweep(self) -> np.ndarray:
        col = self.points[:, 0]
        return col.real if self.is_complex else col


def _cell(text: str, complex_: bool):
    if complex_:
        re_, _, im = text.partition(",")
        return complex(float(re_), float(im or 0.0))
    return float(text.split(",")[0])


def parse_rawfile(data: bytes | str) -> RawData:
    """Parse the first plot of an ASCII rawfile."""
    text = data.decode("utf-8", "replace") if isinstance(data, bytes) else data
    lines = text.splitlines()
    header: dict[str, str] = {}
    variables: list[tuple[str, str]] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line.strip():
            continue
        key, sep, val = line.partition(":")
        key = key.strip()
        if key.lower() == "variables":
            nvars = int(header.get("no. variables", "-1"))
            if nvars < 0:
                raise HeaderMismatch("Variables section before 'No. Variables'")
            while len(variables) < nvars and i < len(lines):
                parts = lines[i].split()
                i += 1
                if not parts:
                    continue
                if len(parts) < 3 or not parts[0].isdigit():
                    raise HeaderMismatch(f"bad variable line {lines[i - 1]!r}")
                if int(parts[0]) != len(variables):
                    raise HeaderMismatch(f"variable index {parts[0]} out of order")
                variables.append((parts[1], parts[2]))
            if len(variables) != nvars:
                raise TruncatedRawfile("variable list shorter than declared")
            continue
        if key.lower() == "values":
            break
        if key.lower() == "binary":
            raise RawfileError("binary rawfiles are not supported; use filetype=ascii")
        if sep:
            header[key.lower()] = val.strip()
    else:
        raise TruncatedRawfile("no Values section")

    for k in ("plotname", "flags", "no. variables", "no. points"):
        if k not in header:
            raise HeaderMismatch(f"missing header {k!r}")
    flags = "complex" if "complex" in header["flags"].lower() else "real"
    nvars = len(variables)
    npts = int(header["no. points"])
    cplx = flags == "complex"

    tokens: list[str] = []
    for line in lines[i:]:
        if not line.strip():
            continue
        if ":" in line and not line.strip()[0].isdigit() and not line.strip()[0] in "+-.":
            break  # next plot header
        tokens.extend(line.split())
    rows = []
    pos = 0
    while pos < len(tokens):
        idx = tokens[pos]
        if not idx.isdigit():
            raise RawfileError(f"expected point index, got {idx!r}")
        if int(idx) != len(rows):
            raise RawfileError(f"point index {idx} out of sequence")
        cells = tokens[pos + 1: pos + 1 + nvars]
        if len(cells) < nvars:
            raise TruncatedRawfile(f"point {idx} has {len(cells)} of {nvars} values")
        rows.append([_cell(c, cplx) for c in cells])
        pos += 1 + nvars
    if len(rows) < npts:
        raise TruncatedRawfile(f"header declares {npts} points, file has {len(rows)}")
    if len(rows) > npts:
        raise HeaderMismatch(f"header declares {npts} points, file has {len(rows)}")
    arr = np.array(rows, dtype=complex if cplx else float).reshape(npts, nvars)
    return RawData(header["plotname"], flags, tuple(variables), arr, header.get("title", ""))


# ---------------------------------------------------------------- running


def resolve_binary(explicit: str | None = None) -> str:
    cand = explicit or os.environ.get(ENV_BINARY) or shutil.which("ngspice")
    if not cand:
        raise SimulatorNotFound(
            f"no simulator found: set {ENV_BINARY} to an ngspice binary or pass --ngspice PATH")
    path = shutil.which(cand) or cand
    if not (os.path.isfile(path) and os.access(path, os.X_OK)):
        raise SimulatorNotFound(f"simulator {cand!r} is not an executable file")
    return path


_FATAL = re.compile(
    r"(^error\b|\berror:|unknown model|could not find|singular matrix|timestep too small"
    r"|no convergence|run simulation\(s\) aborted|simulation interrupted)",
    re.IGNORECASE | re.MULTILINE,
)


@dataclass(frozen=True)
class OverdriveReport:
    devices: tuple[tuple[str, float, float, float], ...]
    all_on: bool
    message: str
    note: str = ""

    def off_devices(self) -> list[str]:
        return [d[0] for d in self.devices if d[3] < 0]

    def to_dict(self) -> dict:
        return {
            "devices": [
                {"device": d, "vgs": vgs, "vth": vth, "overdrive": od} for d, vgs, vth, od in self.devices
            ],
            "all_on": self.all_on,
            "message": self.message,
            "note": self.note,
        }


def overdrive_report(values: Sequence[tuple[str, float, float]]) -> OverdriveReport:
    rows = tuple((d, float(vgs), float(vth), abs(vgs) - abs(vth)) for d, vgs, vth in values)
    off = [r for r in rows if not r[3] >= 0]
    if not off:
        note = "no mosfets in netlist; vacuously all on" if not rows else ""
        return OverdriveReport(rows, True, ALL_ON_MESSAGE, note)
    listing = ", ".join(f"{d} ({od * 1e3:.1f} mV)" for d, _, _, od in off)
    return OverdriveReport(rows, False, f"Found values where vgs-vth < 0: {listing}")


@dataclass
class Simulator:
    """Runs decks through an external ngspice-compatible batch binary."""

    binary: str | None = None
    timeout: float = 120.0
    options: str = DEFAULT_OPTIONS
    model_dirs: tuple[str, ...] = ()
    runs: int = field(default=0, init=False)

    def resolved_binary(self) -> str:
        return resolve_binary(self.binary)

    def _include_path(self, raw: str, base_dir: str | None) -> str:
        toks = raw.split()
        if len(toks) < 2:
            return raw
        target = toks[1].strip("'\"")
        if os.path.isabs(target):
            return raw
        for d in ([base_dir] if base_dir else []) + list(self.model_dirs):
            p = Path(d) / target
            if p.exists():
                toks[1] = str(p.resolve())
                return " ".join(toks)
        return raw

    def library_files(self, n: Netlist) -> list[str]:
        out = []
        for c in n.cards:
            if c.kind == "include_directive":
                path = self._include_path(c.raw, n.base_dir).split()
                if len(path) >= 2 and os.path.isfile(path[1]):
                    out.append(path[1])
        return out

    def check_probes(self, n: Netlist, probes: Sequence[str]) -> None:
        nodes = n.nodes()
        ids = {c.id.lower() for c in n.cards if c.id}
        for p in probes:
            key = p.strip().lower()
            m = re.fullmatch(r"@(\w+)\[(\w+)\]", key)
            if m:
                if m.group(1) not in ids:
                    raise UnknownProbe(p)
                continue
            m = re.fullmatch(r"i\((\w+)\)", key)
            if m:
                if m.group(1) not in ids:
                    raise UnknownProbe(p)
                continue
            m = re.fullmatch(r"v\(([^,()]+)(?:,([^,()]+))?\)", key)
            if m:
                for node in m.groups():
                    if node is not None and node not in nodes:
                        raise UnknownProbe(p)
                continue
            raise UnknownProbe(p)

    def build_deck(self, n: Netlist, a: AnalysisCard, probes: Sequence[str] = ()) -> str:
        """Netlist body, pinned options, one analysis, saves and an ascii control block."""
        self.check_probes(n, probes)
        lines = [n.title]
        for c in n.cards:
            if c.kind in ("analysis_directive", "control_block"):
                continue
            if c.raw.strip().lower() == ".end":
                continue
            if c.kind == "include_directive":
                lines.append(self._include_path(c.raw, n.base_dir))
                continue
            lines.append(c.raw)
        lines.append(f".options {self.options}")
        lines.append(a.directive())
        if probes:
            lines.append(".save " + " ".join(p.strip().lower() for p in probes))
        lines += [".control", "set filetype=ascii", ".endc", ".end", ""]
        return "\n".join(lines)

    def run(self, deck: str, workspace: str | Path) -> RawData:
        ws = Path(workspace)
        ws.mkdir(parents=True, exist_ok=True)
        if any(ws.iterdir()):
            raise SimulatorError(f"workspace {ws} is not empty")
        binary = self.resolved_binary()
        (ws / "deck.sp").write_text(deck)
        env = dict(os.environ, SPICE_ASCIIRAWFILE="1")
        self.runs += 1
        try:
            proc = subprocess.run(
                [binary, "-b", "-r", "out.raw", "deck.sp"],
                cwd=ws, env=env, capture_output=True, text=True, timeout=self.timeout,
            )
        except subprocess.TimeoutExpired as e:
            (ws / "sim.log").write_text(_decode(e.stdout) + _decode(e.stderr))
            raise Timeout(self.timeout) from None
        log = proc.stdout + ("\n" + proc.stderr if proc.stderr else "")
        (ws / "sim.log").write_text(log)
        fatal = _FATAL.search(log)
        if proc.returncode != 0 or fatal:
            raise SimulationFailed(f"simulator exit code {proc.returncode}", _excerpt(log, fatal))
        raw = ws / "out.raw"
        if not raw.exists() or raw.stat().st_size == 0:
            raise RawfileMissing(f"no rawfile written in {ws}")
        return parse_rawfile(raw.read_bytes())

    def simulate(self, n: Netlist, a: AnalysisCard, probes: Sequence[str] = (),
                 workspace: str | Path | None = None) -> RawData:
        if workspace is None:
            with tempfile.TemporaryDirectory(prefix="sim_") as tmp:
                return self.run(self.build_deck(n, a, probes), tmp)
        return self.run(self.build_deck(n, a, probes), workspace)

    def check_overdrive(self, n: Netlist, workspace: str | Path | None = None) -> OverdriveReport:
        mos = list_mosfets(n, model_types(n, self.library_files(n)))
        if not mos:
            return overdrive_report([])
        probes = []
        for m in mos:
            probes += [f"@{m.device_id}[vgs]", f"@{m.device_id}[vth]"]
        raw = self.simulate(n, AnalysisCard.op(), probes, workspace)
        vals = []
        for m in mos:
            vgs = float(np.real(raw.vector(f"@{m.device_id}[vgs]")[0]))
            vth = float(np.real(raw.vector(f"@{m.device_id}[vth]")[0]))
            vals.append((m.device_id, vgs, vth))
        return overdrive_report(vals)


def _decode(b) -> str:
    if b is None:
        return ""
    return b.decode("utf-8", "replace") if isinstance(b, bytes) else b


def _excerpt(log: str, match=None, width: int = 1200) -> str:
    if match:
        start = max(0, log.rfind("\n", 0, max(0, match.start() - 300)))
        return log[start: start + width].strip()
    return log[-width:].strip()
