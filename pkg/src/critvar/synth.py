"""Synthetic labeled programs and a toy interpreter that executes them to traces.

Every labeled variable is produced by a long define chain: two
class-specific "signature" operations followed by four copies, so the
distinguishing opcodes sit 11 and 13 hops upstream of the variable's first
live-variable. The copy three hops up also reads a cell shared by the
variable's shape group, so a critical and its look-alikes meet four hops
away. The variable is then redefined a few times, read by some noise copies,
and finally checked by a comparison whose branch arms guard many basic blocks
(or nothing, for pure-dataflow decoys).

Variable roles:

========  ========  =============  ===========  ================
role      critical  far signature  use pattern  guards blocks
========  ========  =============  ===========  ================
auth      yes       xor/rol        flag         yes
flag      yes       add/add        flag         yes
config    no        movzx/shl      flag         yes
counter   no        imul/sub       counter      yes
data      no        imul/sub       flag         no
data2     no        add/add        flag         no
========  ========  =============  ===========  ================

``auth`` and ``config`` (and ``data``) look identical within six hops, as do
``flag`` and ``data2``; the latter pair differs only in measured control
dependency.
"""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional

from .cdp import CdpMeasurement, bb_set, block_diff
from .dfg import EnhancedDFG, attach_cdp, build_dfg
from .trace import EventKind, Liveness, Operand, Trace, TraceEvent, analyze_liveness

MASK64 = (1 << 64) - 1
GLOBAL_BASE = 0x10000
INPUT_BASE = 0x100000
HEAP_BASE = 0x2000000
MAIN_SP = 0x7FFF0000
FRAME = 0x1000
WORD = 8

SIGNATURES = {
    "crit": ("xor", "rol"),
    "cfg": ("movzx", "shl"),
    "data": ("imul", "sub"),
    "neutral": ("add", "add"),
}
N_COPIES = 4        # plain copies between the signature and the variable
SHARED_HOP = 3      # hop of the copy that also reads its shape group's shared cell


@dataclass(frozen=True)
class Role:
    critical: bool
    signature: str
    use: str          # "flag" | "counter"
    guards: bool


ROLES = {
    "auth": Role(True, "crit", "flag", True),
    "flag": Role(True, "neutral", "flag", True),
    "config": Role(False, "cfg", "flag", True),
    "counter": Role(False, "data", "counter", True),
    "data": Role(False, "data", "flag", False),
    "data2": Role(False, "neutral", "flag", False),
}
ROLE_MIX = (("auth", 6), ("flag", 5), ("config", 7), ("counter", 4), ("data", 4), ("data2", 5))
# decoy role -> critical role whose near-neighbourhood shape it mirrors
DECOY_OF = {"config": "auth", "data": "auth", "data2": "flag"}


class FlipPolicy(str, Enum):
    BITWISE_NOT = "not"
    XOR_ONE = "xor1"
    ZERO_ONE = "zero1"

    def apply(self, v: int) -> int:
        if self is FlipPolicy.BITWISE_NOT:
            return ~v & MASK64
        if self is FlipPolicy.XOR_ONE:
            return v ^ 1
        return 1 if v == 0 else 0


@dataclass(frozen=True)
class FlipDirective:
    target: str
    policy: FlipPolicy = FlipPolicy.ZERO_ONE


# ---------------------------------------------------------------------------
# program representation

@dataclass
class VarDecl:
    name: str
    storage: str                 # "global" | "stack" | "heap" | "input"
    slot: int                    # address (global/input), offset below sp (stack), chunk base (heap)
    fn: Optional[str] = None     # owning function of a stack variable
    critical: Optional[bool] = None
    role: Optional[str] = None
    pair: Optional[str] = None   # shape id shared by a critical and the decoys mirroring it


@dataclass
class Op:
    opcode: str
    dst: Optional[str]
    srcs: tuple
    bb: int
    pc: int
    imm: Optional[int] = None


@dataclass
class Branch:
    src: str
    pred: str                    # "nz" | "lt"
    limit: int
    then: list
    orelse: list
    bb: int
    pc: int


@dataclass
class Filler:
    """Straight-line run of basic blocks that touch no tracked data."""
    first_bb: int
    count: int
    pc: int


@dataclass
class Call:
    fn: str


@dataclass
class Alloc:
    var: str
    size: int = 16


@dataclass
class Free:
    var: str


@dataclass
class Label:
    var: str


_STMT_TYPES = {c.__name__: c for c in (Op, Branch, Filler, Call, Alloc, Free, Label)}


@dataclass
class ToyProgram:
    name: str
    variables: dict = field(default_factory=dict)
    functions: dict = field(default_factory=dict)
    entry: str = "main"
    _fillers: dict = field(default_factory=dict, repr=False, compare=False)

    def labeled(self):
        return [v for v in self.variables.values() if v.critical is not None]

    def to_json(self) -> dict:
        def stmt(s):
            d = {"type": type(s).__name__}
            for k, v in asdict(s).items():
                d[k] = v
            if isinstance(s, Branch):
                d["then"] = [stmt(x) for x in s.then]
                d["orelse"] = [stmt(x) for x in s.orelse]
            return d
        return {
            "name": self.name, "entry": self.entry,
            "variables": [asdict(v) for v in self.variables.values()],
            "functions": {fn: [stmt(s) for s in body] for fn, body in self.functions.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ToyProgram":
        def stmt(d):
            d = dict(d)
            kind = _STMT_TYPES[d.pop("type")]
            if kind is Branch:
                d["then"] = [stmt(x) for x in d["then"]]
                d["orelse"] = [stmt(x) for x in d["orelse"]]
            if kind is Op:
                d["srcs"] = tuple(d["srcs"])
            return kind(**d)
        prog = cls(doc["name"], entry=doc.get("entry", "main"))
        for v in doc["variables"]:
            prog.variables[v["name"]] = VarDecl(**v)
        prog.functions = {fn: [stmt(s) for s in body] for fn, body in doc["functions"].items()}
        return prog

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# ---------------------------------------------------------------------------
# generation

class _Builder:
    def __init__(self, name, rng):
        self.rng = rng
        self.prog = ToyProgram(name)
        self.next_bb = 0
        self.next_pc = 0x400000
        self.n_globals = 0
        self.n_inputs = 0
        self.n_heap = 0
        self.stack_slots = {}
        self.shared_cells = {}

    def bb(self):
        self.next_bb += 1
        return self.next_bb - 1

    def pc(self):
        self.next_pc += 4
        return self.next_pc - 4

    def var(self, name, storage, fn=None, **kw):
        if storage == "global":
            slot = GLOBAL_BASE + WORD * self.n_globals
            self.n_globals += 1
        elif storage == "input":
            slot = INPUT_BASE + WORD * self.n_inputs
            self.n_inputs += 1
        elif storage == "heap":
            slot = HEAP_BASE + 0x40 * self.n_heap
            self.n_heap += 1
        else:
            n = self.stack_slots.get(fn, 0)
            self.stack_slots[fn] = n + 1
            slot = WORD * (n + 1)
            if slot >= FRAME:
                raise ValueError(f"stack frame of {fn} overflows")
        decl = VarDecl(name, storage, slot, fn=fn, **kw)
        self.prog.variables[name] = decl
        return name

    def shared(self, group):
        """Input cell read by every member of a shape group (a critical and its mirrors)."""
        if group not in self.shared_cells:
            self.shared_cells[group] = self.var(f"ctx_{group}", "input")
        return self.shared_cells[group]

    def inp(self, hint):
        return self.var(f"in{self.n_inputs}_{hint}", "input")

    def op(self, opcode, dst, srcs, bb, imm=None):
        return Op(opcode, dst, tuple(srcs), bb, self.pc(), imm)

    def noise(self, body, src, bb, n):
        for _ in range(n):
            body.append(self.op("mov", self.var(f"log{self.n_globals}", "global"), [src], bb))


def _role_counts(n_vars):
    total = sum(w for _, w in ROLE_MIX)
    raw = [(role, n_vars * w / total) for role, w in ROLE_MIX]
    counts = {role: int(x) for role, x in raw}
    for role, x in sorted(raw, key=lambda r: r[1] - int(r[1]), reverse=True):
        if sum(counts.values()) >= n_vars:
            break
        counts[role] += 1
    for must in ("auth", "data"):
        if counts[must] == 0:
            donor = max(counts, key=counts.get)
            counts[donor] -= 1
            counts[must] += 1
    return counts


@dataclass(frozen=True)
class Shape:
    """Everything that decides a planted variable's graph within six hops."""

    redefs: int
    chain_noise: tuple     # extra reads of each copy temporary
    def_noise: tuple       # extra reads after the definition and each redefinition

    @classmethod
    def draw(cls, rng):
        redefs = rng.randint(1, 4)
        return cls(redefs, tuple(rng.randint(0, 1) for _ in range(N_COPIES)),
                   tuple(rng.randint(0, 2) for _ in range(redefs)))


def _plant(b: _Builder, main, name, role_name, shape: Shape, shape_id, storage):
    rng = b.rng
    role = ROLES[role_name]
    fn = f"derive_{name}"
    target = b.var(name, storage, fn="main" if storage == "stack" else None,
                   critical=role.critical, role=role_name, pair=shape_id)

    # define chain inside a helper frame: signature ops, then plain copies
    body = []
    bb = b.bb()
    sig = SIGNATURES[role.signature]
    prev = b.inp("seed")
    temps = [b.var(f"{fn}_s{i}", "stack", fn=fn) for i in range(len(sig))] + \
            [b.var(f"{fn}_t{i}", "stack", fn=fn) for i in range(N_COPIES)]
    for opcode, dst in zip(sig, temps):
        body.append(b.op(opcode, dst, [prev, b.inp("key")], bb))
        prev = dst
    copies = temps[len(sig):]
    for i, (dst, noise) in enumerate(zip(copies, shape.chain_noise)):
        # copy i sits at hop 2 * (N_COPIES - i) + 1 from the variable
        if 2 * (N_COPIES - i) + 1 == SHARED_HOP:
            body.append(b.op("add", dst, [prev, b.shared(shape_id)], bb))
        else:
            body.append(b.op("mov", dst, [prev], bb))
        b.noise(body, prev, bb, noise)
        prev = dst
    body.append(b.op("mov", target, [prev], bb))
    b.prog.functions[fn] = body
    main.append(Call(fn))

    seg = b.bb()
    b.noise(main, target, seg, shape.def_noise[0])
    for noise in shape.def_noise[1:]:
        main.append(b.op("and", target, [target, b.inp("mask")], seg))
        b.noise(main, target, seg, noise)

    u1 = b.var(f"{name}_u1", "stack", fn="main")
    u2 = b.var(f"{name}_u2", "stack", fn="main")
    main.append(b.op("mov", u1, [target], seg))
    main.append(b.op("mov", u2, [u1], seg))
    if role.use == "counter":
        u3 = b.var(f"{name}_u3", "stack", fn="main")
        main.append(b.op("add", u3, [u2], seg, imm=1))
        cond, pred, limit = u3, "lt", 0x1000
    else:
        cond, pred, limit = u2, "nz", 0
    if role.guards:
        a, c = rng.randint(6000, 16000), rng.randint(6000, 16000)
        then = [Filler(b.next_bb, a, b.pc())]
        b.next_bb += a
        orelse = [Filler(b.next_bb, c, b.pc())]
        b.next_bb += c
    else:
        then, orelse = [], []
    main.append(Branch(cond, pred, limit, then, orelse, seg, b.pc()))


def generate_program(name: str, seed, n_vars: int = 31) -> ToyProgram:
    if n_vars < 4:
        raise ValueError("n_vars must be >= 4")
    rng = random.Random(f"{seed}:{name}")
    b = _Builder(name, rng)
    counts = _role_counts(n_vars)
    roles = []
    shapes = {}
    for role, n in counts.items():
        if role in DECOY_OF:
            continue
        shapes[role] = [(f"{role}{i}", Shape.draw(rng)) for i in range(n)]
        roles += [(role,) + s for s in shapes[role]]
    for role, n in counts.items():
        if role not in DECOY_OF:
            continue
        mirror = shapes.get(DECOY_OF[role]) or [(f"{role}{i}", Shape.draw(rng)) for i in range(n)]
        roles += [(role,) + mirror[i % len(mirror)] for i in range(n)]
    rng.shuffle(roles)

    main = []
    prologue = []
    heap_vars = []
    for i, (role, shape_id, shape) in enumerate(roles):
        storage = rng.choice(("global", "global", "stack", "heap"))
        vname = f"v{i}_{role}"
        _plant(b, main, vname, role, shape, shape_id, storage)
        if storage == "heap":
            heap_vars.append(vname)
            prologue.append(Alloc(vname))
        prologue.append(Label(vname))
    epilogue = [Free(v) for v in heap_vars]
    b.prog.functions["main"] = prologue + main + epilogue
    # keep main first for readability of dumps
    b.prog.functions = {"main": b.prog.functions["main"],
                        **{k: v for k, v in b.prog.functions.items() if k != "main"}}
    return b.prog


def generate(seed, n_programs: int = 6, n_vars: int = 31) -> list:
    """``n_programs`` independent programs, each planting ``n_vars`` labeled variables."""
    return [generate_program(f"prog{i}", seed, n_vars) for i in range(n_programs)]


# ---------------------------------------------------------------------------
# execution

class _Machine:
    def __init__(self, prog: ToyProgram, input_seed, flip: Optional[FlipDirective]):
        self.prog = prog
        self.input_seed = input_seed
        self.flip = flip
        self.flipped = False
        self.mem = {}
        self.frames = []      # (fn, sp)
        self.events = []
        self.fillers = prog._fillers

    def addr(self, name):
        d = self.prog.variables[name]
        if d.storage == "stack":
            for fn, sp in reversed(self.frames):
                if fn == d.fn:
                    return sp - d.slot
            raise RuntimeError(f"stack variable {name} used outside {d.fn}")
        return d.slot

    def load(self, name):
        if self.flip is not None and not self.flipped and name == self.flip.target:
            self.flipped = True
            a = self.addr(name)
            self.mem[a] = self.flip.policy.apply(self.value_at(a, name))
        return self.value_at(self.addr(name), name)

    def value_at(self, a, name):
        v = self.mem.get(a)
        if v is None:
            v = random.Random(f"{self.input_seed}:{self.prog.name}:{name}").getrandbits(64)
            self.mem[a] = v
        return v

    def exec_op(self, s: Op):
        vals = [self.load(x) for x in s.srcs]
        if s.imm is not None:
            vals.append(s.imm)
        a = vals[0]
        b = vals[1] if len(vals) > 1 else 0
        code = s.opcode
        if code == "mov":
            r = a
        elif code == "add":
            r = a + b
        elif code == "sub":
            r = a - b
        elif code == "xor":
            r = a ^ b
        elif code == "and":
            r = a & b
        elif code == "or":
            r = a | b
        elif code == "imul":
            r = a * b
        elif code == "shl":
            r = a << (b & 63)
        elif code == "rol":
            k = b & 63
            r = (a << k) | (a >> (64 - k)) if k else a
        elif code == "movzx":
            r = a & 0xFF
        else:
            raise ValueError(f"toy machine has no opcode {code!r}")
        reads = [Operand("mem", addr=self.addr(x), size=WORD) for x in s.srcs]
        if s.imm is not None:
            reads.append(Operand("imm"))
        writes = ()
        if s.dst is not None:
            self.mem[self.addr(s.dst)] = r & MASK64
            writes = (Operand("mem", addr=self.addr(s.dst), size=WORD),)
        self.events.append(TraceEvent(EventKind.INS, pc=s.pc, bb=s.bb, opcode=code,
                                      reads=tuple(reads), writes=writes))

    def filler_events(self, s: Filler):
        evs = self.fillers.get(s.first_bb)
        if evs is None:
            evs = [TraceEvent(EventKind.INS, pc=s.pc + 4 * i, bb=s.first_bb + i, opcode="nop")
                   for i in range(s.count)]
            self.fillers[s.first_bb] = evs
        return evs

    def run_body(self, body):
        for s in body:
            if isinstance(s, Op):
                self.exec_op(s)
            elif isinstance(s, Branch):
                v = self.load(s.src)
                self.events.append(TraceEvent(
                    EventKind.INS, pc=s.pc, bb=s.bb, opcode="cmp",
                    reads=(Operand("mem", addr=self.addr(s.src), size=WORD), Operand("imm"))))
                taken = v != 0 if s.pred == "nz" else v < s.limit
                self.run_body(s.then if taken else s.orelse)
            elif isinstance(s, Filler):
                self.events.extend(self.filler_events(s))
            elif isinstance(s, Call):
                self.call(s.fn)
            elif isinstance(s, Alloc):
                self.events.append(TraceEvent(EventKind.ALLOC, base=self.prog.variables[s.var].slot, size=s.size))
            elif isinstance(s, Free):
                self.events.append(TraceEvent(EventKind.FREE, base=self.prog.variables[s.var].slot))
            elif isinstance(s, Label):
                d = self.prog.variables[s.var]
                self.events.append(TraceEvent(EventKind.LABEL, addr=self.addr(s.var), size=WORD,
                                              name=d.name, critical=bool(d.critical)))
            else:
                raise TypeError(f"unknown statement {s!r}")

    def call(self, fn):
        sp = MAIN_SP - FRAME * len(self.frames)
        self.frames.append((fn, sp))
        self.events.append(TraceEvent(EventKind.ENTER, fn=fn, sp=sp))
        self.run_body(self.prog.functions[fn])
        self.frames.pop()
        self.events.append(TraceEvent(EventKind.EXIT, fn=fn, sp=sp))


def run(program: ToyProgram, input_id=0, flip: Optional[FlipDirective] = None) -> Trace:
    """Execute ``program`` on ``input_id``; with ``flip``, the target is flipped before its first read."""
    m = _Machine(program, input_id, flip)
    m.call(program.entry)
    return Trace(program=program.name, input_id=str(input_id), events=m.events)


# ---------------------------------------------------------------------------
# dataset building

@dataclass
class ProgramData:
    """A program's dry-run trace, liveness, graph (with CDP attached) and measurements."""

    name: str
    trace: Trace
    liveness: Liveness
    graph: EnhancedDFG
    measurements: list
    program: Optional[ToyProgram] = None


def measure_program(program: ToyProgram, dry: Trace, liveness: Liveness, input_id=0,
                    policies=tuple(FlipPolicy), mode="symmetric") -> list:
    base = bb_set(dry)
    out = []
    for decl in program.labeled():
        inst = liveness.instance_by_name(decl.name)
        n = max(block_diff(base, bb_set(run(program, input_id, FlipDirective(decl.name, p))), mode)
                for p in policies)
        out.append(CdpMeasurement(inst.id, n, len(policies)))
    return out


def build_program_data(program: ToyProgram, input_id=0, mode="symmetric") -> ProgramData:
    dry = run(program, input_id)
    liveness = analyze_liveness(dry)
    graph = build_dfg(dry, liveness)
    measurements = measure_program(program, dry, liveness, input_id, mode=mode)
    graph = attach_cdp(graph, {m.instance: m.n for m in measurements})
    return ProgramData(program.name, dry, liveness, graph, measurements, program)
