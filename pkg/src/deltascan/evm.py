"""EVM runtime bytecode decoding.

Instruction set pinned to the Shanghai fork (PUSH0 included). Every byte
string disassembles: undefined bytes decode as per-byte INVALID opcodes and
a PUSH running past the end of code becomes a truncated final instruction,
so re-serialization is always byte-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from .keccak import keccak256

__all__ = [
    "Opcode",
    "Instruction",
    "Program",
    "OPCODES",
    "strip_metadata",
    "disassemble",
    "reserialize",
    "assemble",
    "parse_hex_input",
]


@dataclass(frozen=True)
class Opcode:
    mnemonic: str
    byte_value: int
    immediate_len: int = 0
    stack_pops: int = 0
    stack_pushes: int = 0
    is_defined: bool = True

    @property
    def is_push(self) -> bool:
        return self.immediate_len > 0 or self.byte_value == 0x5F

    @property
    def is_terminator(self) -> bool:
        return self.byte_value in (0x00, 0xF3, 0xFD, 0xFF, 0x56) or self.mnemonic == "INVALID"

    @property
    def is_jump(self) -> bool:
        return self.byte_value == 0x56

    @property
    def is_jumpi(self) -> bool:
        return self.byte_value == 0x57

    @property
    def is_external_call(self) -> bool:
        return self.byte_value in (0xF1, 0xF2, 0xF4, 0xFA)

    @property
    def is_sload(self) -> bool:
        return self.byte_value == 0x54

    @property
    def is_sstore(self) -> bool:
        return self.byte_value == 0x55


# (byte, mnemonic, pops, pushes)
_DEFINED = [
    (0x00, "STOP", 0, 0), (0x01, "ADD", 2, 1), (0x02, "MUL", 2, 1),
    (0x03, "SUB", 2, 1), (0x04, "DIV", 2, 1), (0x05, "SDIV", 2, 1),
    (0x06, "MOD", 2, 1), (0x07, "SMOD", 2, 1), (0x08, "ADDMOD", 3, 1),
    (0x09, "MULMOD", 3, 1), (0x0A, "EXP", 2, 1), (0x0B, "SIGNEXTEND", 2, 1),
    (0x10, "LT", 2, 1), (0x11, "GT", 2, 1), (0x12, "SLT", 2, 1),
    (0x13, "SGT", 2, 1), (0x14, "EQ", 2, 1), (0x15, "ISZERO", 1, 1),
    (0x16, "AND", 2, 1), (0x17, "OR", 2, 1), (0x18, "XOR", 2, 1),
    (0x19, "NOT", 1, 1), (0x1A, "BYTE", 2, 1), (0x1B, "SHL", 2, 1),
    (0x1C, "SHR", 2, 1), (0x1D, "SAR", 2, 1),
    (0x20, "KECCAK256", 2, 1),
    (0x30, "ADDRESS", 0, 1), (0x31, "BALANCE", 1, 1), (0x32, "ORIGIN", 0, 1),
    (0x33, "CALLER", 0, 1), (0x34, "CALLVALUE", 0, 1),
    (0x35, "CALLDATALOAD", 1, 1), (0x36, "CALLDATASIZE", 0, 1),
    (0x37, "CALLDATACOPY", 3, 0), (0x38, "CODESIZE", 0, 1),
    (0x39, "CODECOPY", 3, 0), (0x3A, "GASPRICE", 0, 1),
    (0x3B, "EXTCODESIZE", 1, 1), (0x3C, "EXTCODECOPY", 4, 0),
    (0x3D, "RETURNDATASIZE", 0, 1), (0x3E, "RETURNDATACOPY", 3, 0),
    (0x3F, "EXTCODEHASH", 1, 1),
    (0x40, "BLOCKHASH", 1, 1), (0x41, "COINBASE", 0, 1),
    (0x42, "TIMESTAMP", 0, 1), (0x43, "NUMBER", 0, 1),
    (0x44, "PREVRANDAO", 0, 1), (0x45, "GASLIMIT", 0, 1),
    (0x46, "CHAINID", 0, 1), (0x47, "SELFBALANCE", 0, 1),
    (0x48, "BASEFEE", 0, 1),
    (0x50, "POP", 1, 0), (0x51, "MLOAD", 1, 1), (0x52, "MSTORE", 2, 0),
    (0x53, "MSTORE8", 2, 0), (0x54, "SLOAD", 1, 1), (0x55, "SSTORE", 2, 0),
    (0x56, "JUMP", 1, 0), (0x57, "JUMPI", 2, 0), (0x58, "PC", 0, 1),
    (0x59, "MSIZE", 0, 1), (0x5A, "GAS", 0, 1), (0x5B, "JUMPDEST", 0, 0),
    (0x5F, "PUSH0", 0, 1),
    (0xF0, "CREATE", 3, 1), (0xF1, "CALL", 7, 1), (0xF2, "CALLCODE", 7, 1),
    (0xF3, "RETURN", 2, 0), (0xF4, "DELEGATECALL", 6, 1),
    (0xF5, "CREATE2", 4, 1), (0xFA, "STATICCALL", 6, 1),
    (0xFD, "REVERT", 2, 0), (0xFE, "INVALID", 0, 0),
    (0xFF, "SELFDESTRUCT", 1, 0),
]


def _build_table() -> tuple:
    table = [None] * 256
    for byte, name, pops, pushes in _DEFINED:
        table[byte] = Opcode(name, byte, 0, pops, pushes)
    for n in range(1, 33):
        table[0x5F + n] = Opcode(f"PUSH{n}", 0x5F + n, n, 0, 1)
    for n in range(1, 17):
        table[0x7F + n] = Opcode(f"DUP{n}", 0x7F + n, 0, n, n + 1)
        table[0x8F + n] = Opcode(f"SWAP{n}", 0x8F + n, 0, n + 1, n + 1)
    for n in range(5):
        table[0xA0 + n] = Opcode(f"LOG{n}", 0xA0 + n, 0, n + 2, 0)
    for byte in range(256):
        if table[byte] is None:
            table[byte] = Opcode("INVALID", byte, 0, 0, 0, is_defined=False)
    return tuple(table)


OPCODES: tuple = _build_table()
MNEMONICS: dict = {op.mnemonic: op for op in OPCODES if op.is_defined}


@dataclass(frozen=True)
class Instruction:
    offset: int
    opcode: Opcode
    immediate: bytes = b""
    truncated: bool = False

    @property
    def size(self) -> int:
        return 1 + len(self.immediate)

    @property
    def push_value(self) -> int | None:
        """Integer value of a PUSH immediate (PUSH0 -> 0), else None."""
        if self.opcode.byte_value == 0x5F:
            return 0
        if self.opcode.immediate_len > 0 and not self.truncated:
            return int.from_bytes(self.immediate, "big")
        return None

    def __str__(self) -> str:
        if self.immediate:
            return f"{self.offset:#06x} {self.opcode.mnemonic} 0x{self.immediate.hex()}"
        return f"{self.offset:#06x} {self.opcode.mnemonic}"


@dataclass(frozen=True)
class Program:
    instructions: tuple
    stripped_metadata: bytes = b""
    code_body: bytes = b""

    @cached_property
    def code_hash(self) -> bytes:
        return keccak256(self.code_body)

    def tokens(self) -> list:
        """Opcode mnemonic stream with immediates dropped."""
        return [ins.opcode.mnemonic for ins in self.instructions]


def _cbor_item_end(blob: bytes, pos: int, depth: int = 0):
    """Return the end offset of the CBOR item at ``pos``, or None on doubt.

    Definite-length items of major types 0-5 only, which covers compiler
    metadata maps; anything else fails the check and nothing is stripped.
    """
    if depth > 8 or pos >= len(blob):
        return None
    initial = blob[pos]
    major, info = initial >> 5, initial & 0x1F
    pos += 1
    if info < 24:
        length = info
    elif info == 24:
        if pos >= len(blob):
            return None
        length = blob[pos]
        pos += 1
    elif info == 25:
        if pos + 2 > len(blob):
            return None
        length = int.from_bytes(blob[pos:pos + 2], "big")
        pos += 2
    else:
        return None
    if major in (0, 1):
        return pos
    if major in (2, 3):
        end = pos + length
        return end if end <= len(blob) else None
    if major in (4, 5):
        count = length * (2 if major == 5 else 1)
        for _ in range(count):
            pos = _cbor_item_end(blob, pos, depth + 1)
            if pos is None:
                return None
        return pos
    return None


def _cbor_map_keys(blob: bytes):
    """Text keys of a CBOR map occupying exactly ``blob``, or None."""
    if not blob or (blob[0] >> 5) != 5 or (blob[0] & 0x1F) >= 24:
        return None
    count = blob[0] & 0x1F
    keys, pos = [], 1
    for _ in range(count):
        key_end = _cbor_item_end(blob, pos)
        if key_end is None or (blob[pos] >> 5) != 3:
            return None
        header = 1 if (blob[pos] & 0x1F) < 24 else 2
        keys.append(blob[pos + header:key_end])
        pos = _cbor_item_end(blob, key_end)
        if pos is None:
            return None
    return keys if pos == len(blob) else None


def strip_metadata(code: bytes) -> tuple:
    """Split off the trailing compiler CBOR metadata blob, if positively
    identified. Returns (code_body, metadata); conservative on any doubt."""
    if len(code) < 4:
        return code, b""
    meta_len = int.from_bytes(code[-2:], "big")
    if meta_len + 2 > len(code):
        return code, b""
    candidate = code[len(code) - meta_len - 2:len(code) - 2]
    keys = _cbor_map_keys(candidate)
    if keys is None:
        return code, b""
    for key in keys:
        try:
            text = key.decode("utf-8")
        except UnicodeDecodeError:
            return code, b""
        if text == "solc" or text.startswith("ipfs") or text.startswith("bzzr"):
            return code[:len(code) - meta_len - 2], code[len(code) - meta_len - 2:]
    return code, b""


def disassemble(code_body: bytes) -> Program:
    """Decode a metadata-free byte string into a Program. Never fails."""
    instructions = []
    pos = 0
    end = len(code_body)
    while pos < end:
        opcode = OPCODES[code_body[pos]]
        imm_len = opcode.immediate_len
        immediate = code_body[pos + 1:pos + 1 + imm_len]
        truncated = len(immediate) < imm_len
        instructions.append(Instruction(pos, opcode, immediate, truncated))
        pos += 1 + len(immediate)
    return Program(tuple(instructions), b"", code_body)


def reserialize(program: Program) -> bytes:
    """Byte-exact inverse of disassemble (truncated tails kept as-is)."""
    out = bytearray()
    for ins in program.instructions:
        out.append(ins.opcode.byte_value)
        out += ins.immediate
    return bytes(out)


def assemble(source) -> bytes:
    """Assemble mnemonic lines (or a list of tokens) into bytecode.

    Accepts forms like ``PUSH1 0x04`` / ``JUMPDEST``; immediates are hex.
    Test-fixture convenience, not a full assembler.
    """
    if isinstance(source, str):
        tokens = [ln.split() for ln in source.splitlines() if ln.strip()]
    else:
        tokens = [t if isinstance(t, (list, tuple)) else str(t).split() for t in source]
    out = bytearray()
    for parts in tokens:
        op = MNEMONICS[parts[0].upper()]
        out.append(op.byte_value)
        if op.immediate_len:
            raw = parts[1][2:] if parts[1].startswith("0x") else parts[1]
            imm = int(raw, 16).to_bytes(op.immediate_len, "big")
            out += imm
    return bytes(out)


def parse_hex_input(text: str) -> bytes:
    """Parse a hex string with optional 0x prefix into bytes."""
    text = text.strip()
    if text.startswith(("0x", "0X")):
        text = text[2:]
    return bytes.fromhex(text)
