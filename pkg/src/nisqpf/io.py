"""Case files and run artifacts.

A case is a JSON document::

    {"name": ..., "base_mva": 100,
     "buses":    [{"id": 1, "type": "PQ", "p": -0.4, "q": -0.1,
                   "v_set": 1.0, "theta_set": 0.0}, ...],
     "branches": [{"from": 1, "to": 2, "r": 0.01, "x": 0.1, "b": 0.02}, ...]}

Bus shunts are optional (``g_shunt``/``b_shunt``). Every parse error names
the offending line.
"""
from __future__ import annotations

import csv
import json
import json.scanner
from importlib import resources
from pathlib import Path

import numpy as np

from .powerflow import BUS_TYPES, Branch, Bus, CaseError, NetworkCase

SCHEMA_VERSION = "1.0"
BUILTIN_CASES = ("five_bus", "nine_bus")


class CaseFormatError(CaseError):
    def __init__(self, message: str, line: int | None = None, source: str = "<case>"):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.line = line


class _LineDecoder(json.JSONDecoder):
    """JSON decoder that records the starting line of every object."""

    def __init__(self):
        super().__init__()
        self.lines: dict[int, int] = {}
        base = self.parse_object

        def parse_object(s_and_end, *args):
            s, end = s_and_end
            obj, new_end = base(s_and_end, *args)
            self.lines[id(obj)] = s.count("\n", 0, end) + 1
            return obj, new_end

        self.parse_object = parse_object
        self.scan_once = json.scanner.py_make_scanner(self)


_BUS_FIELDS = {"id", "type", "p", "q", "v_set", "theta_set", "g_shunt", "b_shunt"}
_BRANCH_FIELDS = {"from", "to", "r", "x", "b"}


def _number(obj, key, line, source, default=None, kind=float):
    if key not in obj:
        if default is None:
            raise CaseFormatError(f"missing field {key!r}", line, source)
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseFormatError(f"field {key!r} must be a number, got {v!r}", line, source)
    if kind is int:
        if float(v) != int(v):
            raise CaseFormatError(f"field {key!r} must be an integer, got {v!r}", line, source)
        return int(v)
    return float(v)


def parse_case(text: str, source: str = "<case>") -> NetworkCase:
    """Parse and validate a case document."""
    decoder = _LineDecoder()
    try:
        data = decoder.decode(text)
    except json.JSONDecodeError as e:
        raise CaseFormatError(f"invalid JSON: {e.msg} (column {e.colno})", e.lineno, source) from None
    lines = decoder.lines
    if not isinstance(data, dict):
        raise CaseFormatError("top level must be an object", 1, source)
    for key in ("buses", "branches"):
        if not isinstance(data.get(key), list):
            raise CaseFormatError(f"missing or non-list section {key!r}", 1, source)

    buses = []
    for item in data["buses"]:
        line = lines.get(id(item))
        if not isinstance(item, dict):
            raise CaseFormatError("bus entries must be objects", line, source)
        unknown = set(item) - _BUS_FIELDS
        if unknown:
            raise CaseFormatError(f"unknown bus fields {sorted(unknown)}", line, source)
        btype = item.get("type")
        if btype not in BUS_TYPES:
            raise CaseFormatError(f"bus type must be one of {BUS_TYPES}, got {btype!r}", line, source)
        buses.append(Bus(
            _number(item, "id", line, source, kind=int),
            btype,
            _number(item, "p", line, source, 0.0),
            _number(item, "q", line, source, 0.0),
            _number(item, "v_set", line, source, 1.0),
            _number(item, "theta_set", line, source, 0.0),
            _number(item, "g_shunt", line, source, 0.0),
            _number(item, "b_shunt", line, source, 0.0),
        ))
    branches = []
    for item in data["branches"]:
        line = lines.get(id(item))
        if not isinstance(item, dict):
            raise CaseFormatError("branch entries must be objects", line, source)
        unknown = set(item) - _BRANCH_FIELDS
        if unknown:
            raise CaseFormatError(f"unknown branch fields {sorted(unknown)}", line, source)
        branches.append(Branch(
            _number(item, "from", line, source, kind=int),
            _number(item, "to", line, source, kind=int),
            _number(item, "r", line, source, 0.0),
            _number(item, "x", line, source),
            _number(item, "b", line, source, 0.0),
        ))

    bus_lines = [lines.get(id(item)) for item in data["buses"]]
    branch_lines = [lines.get(id(item)) for item in data["branches"]]
    try:
        return NetworkCase(buses, branches, _number(data, "base_mva", 1, source, 100.0),
                           str(data.get("name", Path(source).stem)))
    except CaseFormatError:
        raise
    except CaseError as e:
        line = _blame(e, buses, branches, bus_lines, branch_lines)
        raise CaseFormatError(str(e), line, source) from None


def _blame(err: CaseError, buses, branches, bus_lines, branch_lines) -> int | None:
    """Best line for a semantic error raised by :class:`NetworkCase`."""
    kind, k = getattr(err, "where", None) or (None, None)
    if kind == "bus":
        return bus_lines[k]
    if kind == "branch":
        return branch_lines[k]
    return 1


def case_path(name_or_path: str) -> Path:
    if name_or_path in BUILTIN_CASES:
        return Path(str(resources.files("nisqpf") / "cases" / f"{name_or_path}.json"))
    return Path(name_or_path)


def load_case(name_or_path: str) -> NetworkCase:
    """Load a built-in case by name or a case file by path."""
    path = case_path(name_or_path)
    try:
        text = path.read_text()
    except OSError as e:
        raise CaseFormatError(f"cannot read case: {e.strerror}", None, str(path)) from None
    return parse_case(text, str(path))


def case_to_dict(case: NetworkCase) -> dict:
    return {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [
            {"id": b.id, "type": b.type, "p": b.p, "q": b.q, "v_set": b.v_set,
             "theta_set": b.theta_set, "g_shunt": b.g_shunt, "b_shunt": b.b_shunt}
            for b in case.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b}
            for br in case.branches
        ],
    }


def serialize_case(case: NetworkCase) -> str:
    return json.dumps(case_to_dict(case), indent=2) + "\n"


# -- run artifacts ----------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def run_report(case: NetworkCase, result, method: str, settings: dict, circuit_stats=None) -> dict:
    """Versioned, deterministic summary of one power-flow run."""
    ids = [b.id for b in case.buses]
    return {
        "schema_version": SCHEMA_VERSION,
        "case": case.name,
        "method": method,
        "settings": settings,
        "converged": result.converged,
        "iterations": result.iterations,
        "mismatch_history": result.mismatch_history,
        "buses": [
            {"id": i, "V": float(v), "theta": float(t)}
            for i, v, t in zip(ids, result.state.V, result.state.theta)
        ],
        "iterates": [
            {"iteration": k + 1, "V": s.V.tolist(), "theta": s.theta.tolist()}
            for k, s in enumerate(result.iterates)
        ],
        "branch_flows": [
            {"from": f.from_bus, "to": f.to_bus, "p_from": f.p_from, "q_from": f.q_from,
             "p_to": f.p_to, "q_to": f.q_to}
            for f in result.branch_flows
        ],
        "circuits": circuit_stats or {},
    }


def write_iterations_csv(path: Path, case: NetworkCase, result) -> None:
    """One row per iteration: ``V_<id>`` and ``theta_<id>`` for every bus."""
    ids = [b.id for b in case.buses]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "max_mismatch"] + [f"V_{i}" for i in ids]
                   + [f"theta_{i}" for i in ids])
        for k, s in enumerate(result.iterates):
            w.writerow([k + 1, repr(result.mismatch_history[k + 1])]
                       + [repr(float(v)) for v in s.V] + [repr(float(t)) for t in s.theta])


def write_cost_trace_csv(path: Path, caches) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subsystem", "basis", "evaluation", "best_cost"])
        for name, cache in (caches or {}).items():
            for sol in cache.solutions:
                for ev, c in sol.cost_trace:
                    w.writerow([name, sol.j, ev, repr(float(c))])


def write_samples_csv(path: Path, res) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + [f"P_{b}" for b in res.target_buses]
                   + [f"V_{b}" for b in res.buses] + [f"theta_{b}" for b in res.buses])
        for k in range(res.n_samples):
            w.writerow([k] + [repr(float(x)) for x in res.injections[k]]
                       + [repr(float(x)) for x in res.V[k]]
                       + [repr(float(x)) for x in res.theta[k]])


def write_histogram_csv(path: Path, res, bins: int = 40) -> None:
    """Binned voltage magnitudes per monitored bus, ready for plotting."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "bin_left", "bin_right", "count"])
        for col, b in enumerate(res.buses):
            if res.n_samples == 0:
                continue
            counts, edges = np.histogram(res.V[:, col], bins=bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([b, repr(float(lo)), repr(float(hi)), int(c)])
