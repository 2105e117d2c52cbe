"""Assembly dialect parser.

One statement per line, `#` starts a comment. Grammar (EBNF in
docs/assembly.md):

    line      = [label ":"] [statement] ["#" comment]
    statement = instruction | directive
    directive = ".text" | ".data" [address] | ".word" ints | ".byte" ints
              | ".space" int | ".targets" idents

Labels are only legal in the text section and resolve to instruction
indices. Branch and jump operands are labels; the parser turns them
into the pc-relative byte offsets the encodings carry, so a parsed
Program is independent of where it is later laid out. `.targets`
must directly follow a `jalr` and declares that instruction's
indirect-transfer destinations.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .isa import EncodingError, Instruction, encode

DATA_BASE_DEFAULT = 0x10000

REGISTER_ALIASES = {
    "zero": 0, "ra": 1, "sp": 2, "gp": 3, "tp": 4,
    "t0": 5, "t1": 6, "t2": 7, "fp": 8,
    "s0": 8, "s1": 9,
    "a0": 10, "a1": 11, "a2": 12, "a3": 13,
    "a4": 14, "a5": 15, "a6": 16, "a7": 17,
    "s2": 18, "s3": 19, "s4": 20, "s5": 21, "s6": 22, "s7": 23,
    "s8": 24, "s9": 25, "s10": 26, "s11": 27,
    "t3": 28, "t4": 29, "t5": 30, "t6": 31,
}

_LABEL_RE = re.compile(r"^[A-Za-z_.$][A-Za-z0-9_.$]*$")
_MEM_OPERAND_RE = re.compile(r"^([^()\s]+)\((\w+)\)$")


class AsmError(ValueError):
    """Syntax or resolution failure; carries the 1-based source line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Program:
    """Parsed program: concrete instructions plus the data segment."""

    instructions: tuple[Instruction, ...]
    labels: dict[str, int]                      # text label -> instruction index
    data: bytes = b""
    data_base: int = DATA_BASE_DEFAULT
    indirect_targets: dict[int, tuple[int, ...]] = field(default_factory=dict)


@dataclass
class _PendingInstr:
    op: str
    operands: list[str]
    line: int


def _parse_reg(token: str, line: int) -> int:
    token = token.strip()
    if token in REGISTER_ALIASES:
        return REGISTER_ALIASES[token]
    if token.startswith("x") and token[1:].isdigit():
        idx = int(token[1:])
        if 0 <= idx <= 31:
            return idx
    raise AsmError(f"bad register {token!r}", line)


def _parse_int(token: str, line: int) -> int:
    try:
        return int(token.strip(), 0)
    except ValueError:
        raise AsmError(f"bad integer {token!r}", line) from None


def _split_operands(rest: str, line: int, n: int) -> list[str]:
    ops = [p.strip() for p in rest.split(",")] if rest.strip() else []
    if len(ops) != n or any(not p for p in ops):
        raise AsmError(f"expected {n} operand(s), got {rest.strip()!r}", line)
    return ops


def parse_assembly(text: str) -> Program:
    """Parse source text into a Program; deterministic for identical input."""
    pending: list[_PendingInstr] = []
    labels: dict[str, int] = {}
    label_lines: dict[str, int] = {}
    data = bytearray()
    data_base: int | None = None
    pending_targets: dict[int, tuple[list[str], int]] = {}
    section = "text"

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue

        while True:  # leading labels, possibly several on one line
            head, sep, rest = line.partition(":")
            if not sep or "(" in head or " " in head.strip() or "\t" in head.strip():
                break
            name = head.strip()
            if not _LABEL_RE.match(name):
                raise AsmError(f"bad label {name!r}", line_no)
            if section != "text":
                raise AsmError("labels are only supported in .text", line_no)
            if name in labels:
                raise AsmError(
                    f"duplicate label {name!r} (first defined on line {label_lines[name]})",
                    line_no)
            labels[name] = len(pending)
            label_lines[name] = line_no
            line = rest.strip()
            if not line:
                break
        if not line:
            continue

        parts = line.split(None, 1)
        head, rest = parts[0].lower(), (parts[1] if len(parts) > 1 else "")

        if head.startswith("."):
            if head == ".text":
                section = "text"
            elif head == ".data":
                section = "data"
                if rest.strip():
                    base = _parse_int(rest, line_no)
                    if data_base is not None and base != data_base:
                        raise AsmError("conflicting .data base addresses", line_no)
                    data_base = base
            elif head == ".word":
                if section != "data":
                    raise AsmError(".word is only legal in .data", line_no)
                for tok in rest.split(","):
                    data += (_parse_int(tok, line_no) & 0xFFFFFFFF).to_bytes(4, "little")
            elif head == ".byte":
                if section != "data":
                    raise AsmError(".byte is only legal in .data", line_no)
                for tok in rest.split(","):
                    value = _parse_int(tok, line_no)
                    if not 0 <= value <= 255:
                        raise AsmError(f"byte value out of range: {value}", line_no)
                    data.append(value)
            elif head == ".space":
                if section != "data":
                    raise AsmError(".space is only legal in .data", line_no)
                count = _parse_int(rest, line_no)
                if count < 0:
                    raise AsmError(f"negative .space size: {count}", line_no)
                data += bytes(count)
            elif head == ".targets":
                if section != "text":
                    raise AsmError(".targets is only legal in .text", line_no)
                if not pending or pending[-1].op != "jalr":
                    raise AsmError(".targets must follow a jalr instruction", line_no)
                names = [t.strip() for t in rest.split(",")]
                if not names or any(not n for n in names):
                    raise AsmError(".targets needs at least one label", line_no)
                pending_targets[len(pending) - 1] = (names, line_no)
            else:
                raise AsmError(f"unknown directive {head!r}", line_no)
            continue

        if section != "text":
            raise AsmError(f"instruction {head!r} outside .text", line_no)
        pending.append(_PendingInstr(head, [rest], line_no))

    instructions = tuple(
        _resolve_instruction(p, index, labels) for index, p in enumerate(pending)
    )

    indirect: dict[int, tuple[int, ...]] = {}
    for index, (names, line_no) in pending_targets.items():
        resolved = []
        for name in names:
            if name not in labels:
                raise AsmError(f"unresolved label {name!r} in .targets", line_no)
            resolved.append(labels[name])
        indirect[index] = tuple(resolved)

    return Program(
        instructions=instructions,
        labels=labels,
        data=bytes(data),
        data_base=DATA_BASE_DEFAULT if data_base is None else data_base,
        indirect_targets=indirect,
    )


def _resolve_instruction(p: _PendingInstr, index: int, labels: dict[str, int]) -> Instruction:
    op, rest, line = p.op, p.operands[0], p.line

    def label_offset(token: str) -> int:
        token = token.strip()
        if token not in labels:
            raise AsmError(f"unresolved label {token!r}", line)
        return 4 * (labels[token] - index)

    try:
        if op in ("add", "sub", "and", "or", "xor", "slt"):
            rd, rs1, rs2 = _split_operands(rest, line, 3)
            instr = Instruction(op, rd=_parse_reg(rd, line), rs1=_parse_reg(rs1, line),
                                rs2=_parse_reg(rs2, line))
        elif op in ("addi", "andi", "ori", "xori", "slti"):
            rd, rs1, imm = _split_operands(rest, line, 3)
            instr = Instruction(op, rd=_parse_reg(rd, line), rs1=_parse_reg(rs1, line),
                                imm=_parse_int(imm, line))
        elif op == "jalr":
            rd, rs1, imm = _split_operands(rest, line, 3)
            instr = Instruction(op, rd=_parse_reg(rd, line), rs1=_parse_reg(rs1, line),
                                imm=_parse_int(imm, line))
        elif op == "lui":
            rd, imm = _split_operands(rest, line, 2)
            instr = Instruction(op, rd=_parse_reg(rd, line), imm=_parse_int(imm, line))
        elif op == "lw":
            rd, mem = _split_operands(rest, line, 2)
            offset, base = _parse_mem_operand(mem, line)
            instr = Instruction(op, rd=_parse_reg(rd, line), rs1=base, imm=offset)
        elif op == "sw":
            rs2, mem = _split_operands(rest, line, 2)
            offset, base = _parse_mem_operand(mem, line)
            instr = Instruction(op, rs1=base, rs2=_parse_reg(rs2, line), imm=offset)
        elif op in ("beq", "bne", "blt", "bge"):
            rs1, rs2, target = _split_operands(rest, line, 3)
            instr = Instruction(op, rs1=_parse_reg(rs1, line), rs2=_parse_reg(rs2, line),
                                imm=label_offset(target))
        elif op == "jal":
            rd, target = _split_operands(rest, line, 2)
            instr = Instruction(op, rd=_parse_reg(rd, line), imm=label_offset(target))
        elif op == "ecall":
            if rest.strip():
                raise AsmError("ecall takes no operands", line)
            instr = Instruction("ecall")
        else:
            raise AsmError(f"unknown mnemonic {op!r}", line)
        encode(instr)  # range-check operands now, with the source line attached
    except EncodingError as exc:
        raise AsmError(str(exc), line) from None
    return instr


def _parse_mem_operand(token: str, line: int) -> tuple[int, int]:
    m = _MEM_OPERAND_RE.match(token.strip())
    if not m:
        raise AsmError(f"expected offset(reg), got {token!r}", line)
    return _parse_int(m.group(1), line), _parse_reg(m.group(2), line)
