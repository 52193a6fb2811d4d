"""Basic-block partitioning, control-flow edges, dispatcher-based function
recovery, and loop-avoiding path enumeration over disassembled bytecode.

Dynamic jumps (no PUSH-constant target) are over-approximated with edges to
every JUMPDEST block; paths are enumerated depth-first with successors in
ascending block-id order so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .evm import Instruction, Program

__all__ = [
    "BasicBlock",
    "Edge",
    "FunctionCfg",
    "ExecutionPath",
    "SelectorMap",
    "PathEnumeration",
    "partition_blocks",
    "resolve_edges",
    "recover_functions",
    "extract_paths",
    "enumerate_paths",
    "analyze_contract",
    "ContractAnalysis",
]

HALTING_KINDS = frozenset({"stop", "return", "revert", "invalid", "selfdestruct"})


@dataclass(frozen=True)
class BasicBlock:
    block_id: int
    start_offset: int
    instructions: tuple
    terminator_kind: str

    @property
    def instr_count(self) -> int:
        return len(self.instructions)

    @property
    def last(self) -> Instruction:
        return self.instructions[-1]


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    kind: str  # jump_taken | jumpi_true | jumpi_false | fallthrough
    dynamic: bool = False


@dataclass(frozen=True)
class FunctionCfg:
    function_id: tuple  # (code_hash, selector bytes or entry offset)
    selector: bytes | None
    entry_block: int
    blocks: tuple  # BasicBlock with function-local dense ids
    edges: frozenset

    @property
    def avg_block_len(self) -> float:
        if not self.blocks:
            return 0.0
        return sum(b.instr_count for b in self.blocks) / len(self.blocks)

    def block(self, block_id: int) -> BasicBlock:
        return self.blocks[block_id]


@dataclass(frozen=True)
class ExecutionPath:
    blocks: tuple  # block ids, duplicate-free
    start_positions: tuple  # cumulative instruction offsets
    terminal_reason: str  # natural_exit | all_successors_visited


@dataclass(frozen=True)
class SelectorMap:
    entries: dict  # 4-byte selector -> contract-level entry block_id
    fallback_entry: int | None = None


@dataclass(frozen=True)
class PathEnumeration:
    paths: tuple
    hit_cap: bool


def _terminator_kind(last: Instruction, next_is_leader: bool) -> str:
    op = last.opcode
    if op.is_jump:
        return "jump"
    if op.is_jumpi:
        return "jumpi"
    if op.byte_value == 0x00:
        return "stop"
    if op.byte_value == 0xF3:
        return "return"
    if op.byte_value == 0xFD:
        return "revert"
    if op.byte_value == 0xFF:
        return "selfdestruct"
    if op.mnemonic == "INVALID":
        return "invalid"
    return "fallthrough"


def partition_blocks(program: Program) -> list:
    """Split instructions into basic blocks. Leaders are offset 0, every
    JUMPDEST, and every instruction following a (conditional) terminator."""
    instructions = program.instructions
    if not instructions:
        return []
    leaders = {0}
    for idx, ins in enumerate(instructions[:-1]):
        if ins.opcode.is_terminator or ins.opcode.is_jumpi:
            leaders.add(idx + 1)
    for idx, ins in enumerate(instructions):
        if ins.opcode.byte_value == 0x5B:  # JUMPDEST
            leaders.add(idx)
    bounds = sorted(leaders) + [len(instructions)]
    blocks = []
    for block_id, (lo, hi) in enumerate(zip(bounds, bounds[1:])):
        chunk = instructions[lo:hi]
        blocks.append(BasicBlock(block_id, chunk[0].offset, tuple(chunk),
                                 _terminator_kind(chunk[-1], True)))
    return blocks


def resolve_edges(blocks: list) -> set:
    """Recover control-flow edges with the push-constant jump heuristic."""
    by_offset = {b.start_offset: b.block_id for b in blocks}
    jumpdest_blocks = [b.block_id for b in blocks
                       if b.instructions[0].opcode.byte_value == 0x5B]
    edges = set()
    for block in blocks:
        kind = block.terminator_kind
        next_id = block.block_id + 1 if block.block_id + 1 < len(blocks) else None
        if kind == "fallthrough" and next_id is not None:
            edges.add(Edge(block.block_id, next_id, "fallthrough"))
            continue
        if kind in ("jump", "jumpi"):
            taken_kind = "jump_taken" if kind == "jump" else "jumpi_true"
            target = None
            if block.instr_count >= 2:
                target = block.instructions[-2].push_value
            if target is not None:
                dst = by_offset.get(target)
                if dst is not None and dst in jumpdest_blocks:
                    edges.add(Edge(block.block_id, dst, taken_kind))
                # resolved-but-invalid target: statically a revert, no edge
            else:
                for dst in jumpdest_blocks:
                    edges.add(Edge(block.block_id, dst, taken_kind, dynamic=True))
            if kind == "jumpi" and next_id is not None:
                edges.add(Edge(block.block_id, next_id, "jumpi_false"))
    return edges


def _successors(edges) -> dict:
    succ = {}
    for e in edges:
        succ.setdefault(e.src, set()).add(e.dst)
    return succ


def _find_selector_patterns(block: BasicBlock) -> list:
    """Match {PUSH4 sel; EQ; PUSH dest; JUMPI} within a dispatcher block,
    tolerating stack-shuffle opcodes between the stages."""
    shuffle = {"DUP", "SWAP"}
    matches = []
    ins = block.instructions
    for i, first in enumerate(ins):
        if first.opcode.byte_value != 0x63 or first.truncated:  # PUSH4
            continue
        j = i + 1
        while j < len(ins) and ins[j].opcode.mnemonic.startswith(("DUP", "SWAP")):
            j += 1
        if j >= len(ins) or ins[j].opcode.byte_value != 0x14:  # EQ
            continue
        k = j + 1
        if k >= len(ins) or ins[k].push_value is None:
            continue
        if k + 1 >= len(ins) or not ins[k + 1].opcode.is_jumpi:
            continue
        matches.append((first.immediate, ins[k].push_value))
    return matches


def recover_functions(blocks: list, edges: set, code_hash: bytes = b"") -> tuple:
    """Scan the dispatcher spine for selector checks and carve per-function
    CFG subgraphs. Returns (SelectorMap, [FunctionCfg]); a contract with no
    dispatcher pattern yields one anonymous function over the whole graph."""
    if not blocks:
        return SelectorMap({}, None), []
    by_offset = {b.start_offset: b.block_id for b in blocks}
    succ = _successors(edges)

    # dispatcher spine: the chain of selector-miss continuations from block 0
    spine, seen = [], set()
    cursor = 0
    while cursor is not None and cursor not in seen:
        seen.add(cursor)
        spine.append(cursor)
        nxt = None
        for e in edges:
            if e.src == cursor and e.kind in ("jumpi_false", "fallthrough"):
                nxt = e.dst
                break
        cursor = nxt

    selector_entries: dict = {}
    for bid in spine:
        for selector, dest_offset in _find_selector_patterns(blocks[bid]):
            dst = by_offset.get(dest_offset)
            if dst is not None and selector not in selector_entries:
                selector_entries[selector] = dst

    dispatcher_blocks = {bid for bid in spine
                         if _find_selector_patterns(blocks[bid])} | {0}
    entry_ids = set(selector_entries.values())

    if not selector_entries:
        cfg = _carve_function(blocks, edges, succ, entry=0, excluded=set(),
                              selector=None, code_hash=code_hash)
        return SelectorMap({}, None), [cfg]

    # fallback entry: where the spine ends up after every selector misses
    fallback_entry = None
    for bid in reversed(spine):
        if bid not in dispatcher_blocks and bid not in entry_ids:
            fallback_entry = bid
            break

    functions = []
    for selector in sorted(selector_entries):
        entry = selector_entries[selector]
        excluded = dispatcher_blocks | (entry_ids - {entry})
        functions.append(_carve_function(blocks, edges, succ, entry, excluded,
                                         selector, code_hash))
    if fallback_entry is not None:
        excluded = dispatcher_blocks | entry_ids
        functions.append(_carve_function(blocks, edges, succ, fallback_entry,
                                         excluded, None, code_hash))
    return SelectorMap(dict(selector_entries), fallback_entry), functions


def _carve_function(blocks, edges, succ, entry, excluded, selector, code_hash):
    """Reachable subgraph from ``entry``, truncated at excluded blocks,
    re-indexed with function-local dense block ids."""
    reachable = []
    stack, seen = [entry], {entry}
    while stack:
        bid = stack.pop()
        reachable.append(bid)
        for dst in sorted(succ.get(bid, ()), reverse=True):
            if dst not in seen and dst not in excluded:
                seen.add(dst)
                stack.append(dst)
    reachable.sort(key=lambda bid: blocks[bid].start_offset)
    remap = {bid: new for new, bid in enumerate(reachable)}
    local_blocks = tuple(
        BasicBlock(remap[bid], blocks[bid].start_offset,
                   blocks[bid].instructions, blocks[bid].terminator_kind)
        for bid in reachable)
    local_edges = frozenset(
        Edge(remap[e.src], remap[e.dst], e.kind, e.dynamic)
        for e in edges if e.src in remap and e.dst in remap)
    fid = (code_hash, selector if selector is not None else blocks[entry].start_offset)
    return FunctionCfg(fid, selector, remap[entry], local_blocks, local_edges)


def enumerate_paths(cfg: FunctionCfg, max_paths: int = 64) -> PathEnumeration:
    """Loop-avoiding DFS from the entry block; deterministic order."""
    if max_paths < 1:
        raise ValueError("max_paths must be >= 1")
    if not cfg.blocks:
        return PathEnumeration((), False)
    succ = {}
    for e in cfg.edges:
        succ.setdefault(e.src, set()).add(e.dst)
    succ = {src: sorted(dsts) for src, dsts in succ.items()}

    paths = []
    hit_cap = False

    def positions(path):
        pos, total = [], 0
        for bid in path:
            pos.append(total)
            total += cfg.blocks[bid].instr_count
        return tuple(pos)

    def emit(path, reason):
        paths.append(ExecutionPath(tuple(path), positions(path), reason))

    # explicit-stack DFS: frames are (block_id, iterator over unvisited succs)
    path = [cfg.entry_block]
    on_path = {cfg.entry_block}
    frames = []

    def open_frame(bid):
        if cfg.blocks[bid].terminator_kind in HALTING_KINDS:
            emit(path, "natural_exit")
            return None
        next_blocks = [d for d in succ.get(bid, ()) if d not in on_path]
        if not next_blocks:
            emit(path, "all_successors_visited")
            return None
        return iter(next_blocks)

    frame = open_frame(cfg.entry_block)
    if frame is not None:
        frames.append(frame)
    while frames and len(paths) < max_paths:
        dst = next(frames[-1], None)
        if dst is None or dst in on_path:
            if dst is None:
                frames.pop()
                on_path.discard(path.pop())
            continue
        path.append(dst)
        on_path.add(dst)
        child = open_frame(dst)
        if child is None:
            on_path.discard(path.pop())
        else:
            frames.append(child)
    if len(paths) >= max_paths and frames:
        hit_cap = True
    return PathEnumeration(tuple(paths), hit_cap)


def extract_paths(cfg: FunctionCfg, max_paths: int = 64) -> list:
    return list(enumerate_paths(cfg, max_paths).paths)


@dataclass(frozen=True)
class ContractAnalysis:
    program: Program
    blocks: tuple
    edges: frozenset
    selector_map: SelectorMap
    functions: tuple


def analyze_contract(code: bytes) -> ContractAnalysis:
    """Full front-end: strip metadata, disassemble, partition, recover
    functions. Convenience composition used by the CLI and pipeline."""
    from .evm import disassemble, strip_metadata

    body, metadata = strip_metadata(code)
    program = disassemble(body)
    program = Program(program.instructions, metadata, program.code_body)
    blocks = partition_blocks(program)
    edges = resolve_edges(blocks)
    selmap, functions = recover_functions(blocks, edges, program.code_hash)
    return ContractAnalysis(program, tuple(blocks), frozenset(edges),
                            selmap, tuple(functions))
