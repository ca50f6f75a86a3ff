"""Execution-trace file format, parsing, and liveness analysis.

A trace is a UTF-8 file with one JSON object per line. Every object carries a
``"k"`` key naming the event kind::

    {"k":"ins","pc":1,"bb":0,"op":"mov","reads":[...],"writes":[...]}
    {"k":"enter","fn":"main","sp":4096}
    {"k":"exit","fn":"main","sp":4096}
    {"k":"alloc","base":8192,"size":16}
    {"k":"free","base":8192}
    {"k":"label","addr":8192,"size":8,"name":"aclp","critical":true}

Operands are ``{"t":"reg","name":"r0"}``, ``{"t":"mem","addr":..,"size":..}``
(optionally with ``"via"``, the register the address was computed from) or
``{"t":"imm"}``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

log = logging.getLogger(__name__)

# defined_at of a global value that predates the first event
TRACE_START = -1
DEFAULT_FRAME_SIZE = 0x1000


class TraceParseError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class LivenessError(ValueError):
    pass


class EventKind(str, Enum):
    INS = "ins"
    ENTER = "enter"
    EXIT = "exit"
    ALLOC = "alloc"
    FREE = "free"
    LABEL = "label"


class StorageClass(str, Enum):
    GLOBAL = "global"
    STACK = "stack"
    HEAP = "heap"


@dataclass(slots=True)
class Operand:
    kind: str  # "reg" | "mem" | "imm"
    name: Optional[str] = None
    addr: Optional[int] = None
    size: Optional[int] = None
    via: Optional[str] = None

    @property
    def is_mem(self) -> bool:
        return self.kind == "mem"

    @property
    def is_reg(self) -> bool:
        return self.kind == "reg"

    @classmethod
    def reg(cls, name: str) -> "Operand":
        return cls("reg", name=name)

    @classmethod
    def mem(cls, addr: int, size: int = 8, via: Optional[str] = None) -> "Operand":
        return cls("mem", addr=addr, size=size, via=via)

    @classmethod
    def imm(cls) -> "Operand":
        return cls("imm")

    def to_json(self) -> dict:
        if self.kind == "reg":
            return {"t": "reg", "name": self.name}
        if self.kind == "mem":
            d = {"t": "mem", "addr": self.addr, "size": self.size}
            if self.via is not None:
                d["via"] = self.via
            return d
        return {"t": "imm"}


@dataclass(slots=True)
class TraceEvent:
    """One trace record. Only the fields relevant to ``kind`` are set."""

    kind: EventKind
    pc: Optional[int] = None
    bb: Optional[int] = None
    opcode: Optional[str] = None
    reads: tuple = ()
    writes: tuple = ()
    fn: Optional[str] = None
    sp: Optional[int] = None
    base: Optional[int] = None
    size: Optional[int] = None
    addr: Optional[int] = None
    name: Optional[str] = None
    critical: Optional[bool] = None

    @property
    def is_label(self) -> bool:
        # label records deliver ground truth only; they never become graph features
        return self.kind is EventKind.LABEL

    @classmethod
    def ins(cls, pc, bb, opcode, reads=(), writes=()) -> "TraceEvent":
        return cls(EventKind.INS, pc=pc, bb=bb, opcode=opcode, reads=tuple(reads), writes=tuple(writes))

    @classmethod
    def enter(cls, fn, sp) -> "TraceEvent":
        return cls(EventKind.ENTER, fn=fn, sp=sp)

    @classmethod
    def exit(cls, fn, sp) -> "TraceEvent":
        return cls(EventKind.EXIT, fn=fn, sp=sp)

    @classmethod
    def alloc(cls, base, size) -> "TraceEvent":
        return cls(EventKind.ALLOC, base=base, size=size)

    @classmethod
    def free(cls, base) -> "TraceEvent":
        return cls(EventKind.FREE, base=base)

    @classmethod
    def label(cls, addr, size, name, critical) -> "TraceEvent":
        return cls(EventKind.LABEL, addr=addr, size=size, name=name, critical=bool(critical))

    def to_json(self) -> dict:
        k = self.kind
        if k is EventKind.INS:
            return {
                "k": "ins", "pc": self.pc, "bb": self.bb, "op": self.opcode,
                "reads": [o.to_json() for o in self.reads],
                "writes": [o.to_json() for o in self.writes],
            }
        if k is EventKind.ENTER or k is EventKind.EXIT:
            return {"k": k.value, "fn": self.fn, "sp": self.sp}
        if k is EventKind.ALLOC:
            return {"k": "alloc", "base": self.base, "size": self.size}
        if k is EventKind.FREE:
            return {"k": "free", "base": self.base}
        return {"k": "label", "addr": self.addr, "size": self.size,
                "name": self.name, "critical": self.critical}


@dataclass
class Trace:
    program: str = ""
    input_id: str = ""
    events: list = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def instructions(self):
        return (e for e in self.events if e.kind is EventKind.INS)


# ---------------------------------------------------------------------------
# parsing

def _uint(obj, key, lineno):
    v = obj.get(key)
    if not isinstance(v, int) or isinstance(v, bool) or v < 0:
        raise TraceParseError(lineno, f"{key!r} must be an unsigned integer, got {v!r}")
    return v


def _parse_operand(obj, lineno) -> Operand:
    if not isinstance(obj, dict):
        raise TraceParseError(lineno, f"operand must be an object, got {obj!r}")
    t = obj.get("t")
    if t == "reg":
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            raise TraceParseError(lineno, "register operand needs a name")
        return Operand("reg", name=name)
    if t == "mem":
        size = _uint(obj, "size", lineno)
        if size < 1:
            raise TraceParseError(lineno, "memory operand size must be >= 1")
        via = obj.get("via")
        if via is not None and not isinstance(via, str):
            raise TraceParseError(lineno, "'via' must be a register name")
        return Operand("mem", addr=_uint(obj, "addr", lineno), size=size, via=via)
    if t == "imm":
        return Operand("imm")
    raise TraceParseError(lineno, f"unknown operand type {t!r}")


def _parse_event(obj, lineno) -> TraceEvent:
    if not isinstance(obj, dict):
        raise TraceParseError(lineno, "event must be a JSON object")
    k = obj.get("k")
    if k == "ins":
        op = obj.get("op")
        if not isinstance(op, str) or not op:
            raise TraceParseError(lineno, "instruction needs a non-empty 'op'")
        reads = tuple(_parse_operand(o, lineno) for o in obj.get("reads", ()))
        writes = tuple(_parse_operand(o, lineno) for o in obj.get("writes", ()))
        read_regs = {o.name for o in reads if o.kind == "reg"}
        for o in reads + writes:
            if o.via is not None and o.via not in read_regs:
                raise TraceParseError(lineno, f"'via' register {o.via!r} is not read by the instruction")
        return TraceEvent(EventKind.INS, pc=_uint(obj, "pc", lineno), bb=_uint(obj, "bb", lineno),
                          opcode=op, reads=reads, writes=writes)
    if k in ("enter", "exit"):
        fn = obj.get("fn")
        if not isinstance(fn, str) or not fn:
            raise TraceParseError(lineno, f"{k} needs a function name")
        return TraceEvent(EventKind(k), fn=fn, sp=_uint(obj, "sp", lineno))
    if k == "alloc":
        return TraceEvent(EventKind.ALLOC, base=_uint(obj, "base", lineno), size=_uint(obj, "size", lineno))
    if k == "free":
        return TraceEvent(EventKind.FREE, base=_uint(obj, "base", lineno))
    if k == "label":
        return TraceEvent(EventKind.LABEL, addr=_uint(obj, "addr", lineno), size=_uint(obj, "size", lineno),
                          name=str(obj.get("name", "")), critical=bool(obj.get("critical", False)))
    raise TraceParseError(lineno, f"unknown event kind {k!r}")


def parse_trace(data, program: str = "", input_id: str = "") -> Trace:
    """Parse a JSON-lines trace from bytes, str, or an iterable of lines.

    Blank lines are skipped; unknown keys are ignored. Raises
    :class:`TraceParseError` carrying the 1-based line number of the first
    malformed record.
    """
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    lines = data.splitlines() if isinstance(data, str) else data
    events = []
    for lineno, line in enumerate(lines, 1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(lineno, f"malformed JSON ({exc.msg})") from None
        events.append(_parse_event(obj, lineno))
    return Trace(program=program, input_id=input_id, events=events)


def serialize_trace(trace: Trace) -> bytes:
    out = "\n".join(json.dumps(e.to_json(), separators=(",", ":")) for e in trace.events)
    return (out + "\n").encode("utf-8") if out else b""


def read_trace(path, program=None, input_id: str = "") -> Trace:
    import os
    with open(path, "rb") as fh:
        data = fh.read()
    if program is None:
        program = os.path.splitext(os.path.basename(str(path)))[0]
    return parse_trace(data, program=program, input_id=input_id)


def write_trace(trace: Trace, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_trace(trace))


# ---------------------------------------------------------------------------
# liveness

@dataclass
class LiveVariable:
    id: int
    region: tuple
    defined_at: int
    dead_at: Optional[int]
    storage_class: StorageClass
    instance: int = -1


@dataclass
class VariableInstance:
    id: int
    region: tuple
    lifetime: tuple  # [start, end)
    live_vars: list
    storage_class: StorageClass
    label: Optional[bool] = None
    name: Optional[str] = None


@dataclass
class Liveness:
    """Result of :func:`analyze_liveness`.

    ``mem_reads[i]`` / ``mem_writes[i]`` list, for instruction event ``i``, the
    live-variable id bound to each memory operand in operand order.
    """

    live_vars: list
    instances: list
    mem_reads: dict
    mem_writes: dict

    def __iter__(self):
        yield self.live_vars
        yield self.instances

    def instance_by_name(self, name):
        for inst in self.instances:
            if inst.name == name:
                return inst
        raise KeyError(name)

    def labeled(self):
        return [inst for inst in self.instances if inst.label is not None]


@dataclass
class _Frame:
    fn: str
    sp: int
    enter_idx: int


class _Scope:
    """Liveness state of one allocation lifetime: a frame, heap chunk, or the globals."""

    __slots__ = ("key", "storage", "start", "labels", "regions")

    def __init__(self, key, storage, start):
        self.key = key
        self.storage = storage
        self.start = start
        self.labels = []      # (addr, size)
        self.regions = {}     # base -> (size, instance)

    def find_region(self, addr, size):
        for base, lsize in self.labels:
            if base <= addr < base + lsize:
                return base, lsize
        hit = self.regions.get(addr)
        if hit is not None:
            return addr, hit[0]
        for base, (rsize, _) in self.regions.items():
            if base <= addr < base + rsize:
                return base, rsize
        return addr, size


class _LivenessBuilder:
    def __init__(self, trace, frame_size):
        self.trace = trace
        self.frame_size = frame_size
        self.live_vars = []
        self.instances = []
        self.frames = []          # list of (_Frame, _Scope)
        self.chunks = {}          # base -> (size, _Scope)
        self.freed = []           # (base, size, _Scope) for regions released by free()
        self.globals = _Scope(("global",), StorageClass.GLOBAL, TRACE_START)
        self.current = {}         # instance id -> current live var id
        self.labels = []
        self.mem_reads = {}
        self.mem_writes = {}

    # -- scope resolution
    def scope_for(self, addr, idx):
        for base, (size, scope) in self.chunks.items():
            if base <= addr < base + size:
                return scope
        for frame, scope in reversed(self.frames):
            if frame.sp - self.frame_size <= addr < frame.sp:
                return scope
        for base, size, scope in reversed(self.freed):
            if base <= addr < base + size:
                return scope
        return self.globals

    def instance_for(self, scope, addr, size):
        base, rsize = scope.find_region(addr, size)
        hit = scope.regions.get(base)
        if hit is not None:
            return self.instances[hit[1]]
        inst = VariableInstance(
            id=len(self.instances), region=(base, rsize),
            lifetime=[scope.start, len(self.trace.events)],
            live_vars=[], storage_class=scope.storage)
        self.instances.append(inst)
        scope.regions[base] = (rsize, inst.id)
        return inst

    def new_live_var(self, inst, defined_at):
        lv = LiveVariable(id=len(self.live_vars), region=inst.region, defined_at=defined_at,
                          dead_at=None, storage_class=inst.storage_class, instance=inst.id)
        prev = self.current.get(inst.id)
        if prev is not None:
            self.live_vars[prev].dead_at = defined_at
        self.live_vars.append(lv)
        inst.live_vars.append(lv.id)
        self.current[inst.id] = lv.id
        return lv

    def kill_scope(self, scope, idx):
        for _, inst_id in scope.regions.values():
            inst = self.instances[inst_id]
            inst.lifetime[1] = idx
            cur = self.current.pop(inst_id, None)
            if cur is not None:
                self.live_vars[cur].dead_at = idx
        scope.regions.clear()

    # -- event handlers
    def on_ins(self, idx, ev):
        reads = []
        for op in ev.reads:
            if op.kind != "mem":
                continue
            scope = self.scope_for(op.addr, idx)
            inst = self.instance_for(scope, op.addr, op.size)
            cur = self.current.get(inst.id)
            if cur is None:
                # value that existed before anything in the trace wrote it
                cur = self.new_live_var(inst, scope.start).id
            reads.append(cur)
        writes = []
        for op in ev.writes:
            if op.kind != "mem":
                continue
            scope = self.scope_for(op.addr, idx)
            inst = self.instance_for(scope, op.addr, op.size)
            cur = self.current.get(inst.id)
            if cur is not None and self.live_vars[cur].defined_at == idx:
                writes.append(cur)
                continue
            writes.append(self.new_live_var(inst, idx).id)
        if reads:
            self.mem_reads[idx] = reads
        if writes:
            self.mem_writes[idx] = writes

    def on_enter(self, idx, ev):
        self.frames.append((_Frame(ev.fn, ev.sp, idx), _Scope(("stack", idx), StorageClass.STACK, idx)))

    def on_exit(self, idx, ev):
        if not self.frames:
            raise LivenessError(f"event {idx}: exit from {ev.fn!r} without matching enter")
        frame, scope = self.frames[-1]
        if frame.fn != ev.fn:
            raise LivenessError(f"event {idx}: exit from {ev.fn!r} while inside {frame.fn!r}")
        self.frames.pop()
        self.kill_scope(scope, idx)

    def on_alloc(self, idx, ev):
        lo, hi = ev.base, ev.base + ev.size
        self.freed = [f for f in self.freed if f[0] + f[1] <= lo or f[0] >= hi]
        self.chunks[ev.base] = (ev.size, _Scope(("heap", idx), StorageClass.HEAP, idx))

    def on_free(self, idx, ev):
        hit = self.chunks.pop(ev.base, None)
        if hit is None:
            log.debug("event %d: free of unknown chunk %#x ignored", idx, ev.base)
            return
        size, scope = hit
        self.kill_scope(scope, idx)
        # later touches of the released range start fresh heap instances
        self.freed.append((ev.base, size, _Scope(("freed", idx), StorageClass.HEAP, idx)))

    def on_label(self, idx, ev):
        scope = self.scope_for(ev.addr, idx)
        scope.labels.append((ev.addr, ev.size))
        self.labels.append((idx, ev))

    def run(self):
        handlers = {
            EventKind.INS: self.on_ins, EventKind.ENTER: self.on_enter,
            EventKind.EXIT: self.on_exit, EventKind.ALLOC: self.on_alloc,
            EventKind.FREE: self.on_free, EventKind.LABEL: self.on_label,
        }
        for idx, ev in enumerate(self.trace.events):
            if ev.kind is EventKind.INS and not ev.reads and not ev.writes:
                continue
            handlers[ev.kind](idx, ev)
        self.attach_labels()
        for inst in self.instances:
            inst.lifetime = tuple(inst.lifetime)
        return Liveness(self.live_vars, self.instances, self.mem_reads, self.mem_writes)

    def attach_labels(self):
        for idx, ev in self.labels:
            matched = False
            for inst in self.instances:
                base, size = inst.region
                start, end = inst.lifetime
                if base <= ev.addr < base + size and start <= idx < end:
                    inst.label = ev.critical
                    inst.name = ev.name
                    matched = True
            if not matched:
                log.debug("label %r at event %d matches no touched variable", ev.name, idx)


def analyze_liveness(trace: Trace, frame_size: int = DEFAULT_FRAME_SIZE) -> Liveness:
    """Split memory into live-variables and group them into variable instances.

    Each memory write starts a new live-variable of its region and ends the
    previous one. Stack regions belong to the innermost active frame whose
    ``[sp - frame_size, sp)`` window contains them and die at the frame's exit;
    heap regions live between ``alloc`` and ``free``; everything else is a
    global living for the whole trace. Reading a region before any write binds
    it to a live-variable defined at the start of its lifetime (``-1`` for
    globals).
    """
    return _LivenessBuilder(trace, frame_size).run()
