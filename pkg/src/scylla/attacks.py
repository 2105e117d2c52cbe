"""Scripted adversaries against encrypted images.

The attacker gets what the threat model grants: arbitrary reads and
writes of mapped memory, full knowledge of the program and its graph,
control of the pc at a chosen step, and no key material. An attack is
an intervention between two engine steps; everything after it runs
under normal engine rules.

Success is operationalized concretely: the attack "hijacked" the run
if the sentinel memory cell holds the attacker-chosen value when the
run ends, and it was "detected" if the run died in an integrity or
memory fault first.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass

from .crypto import EncryptedImage, derive_next_key
from .engine import (
    DEFAULT_STEP_LIMIT,
    HALT,
    INTEGRITY_FAULT,
    MEMORY_FAULT,
    Engine,
    RunReport,
    encrypted_engine,
    run_encrypted,
)
from .isa import Instruction, encode

CODE_INJECTION = "code-injection"
ROGUE_EDGE = "rogue-edge"
MID_BLOCK_ENTRY = "mid-block-entry"
PATCH_REPLAY = "patch-replay"

SCENARIO_KINDS = (CODE_INJECTION, ROGUE_EDGE, MID_BLOCK_ENTRY, PATCH_REPLAY)

DEFAULT_SENTINEL_VALUE = 0xC0FFEE42


class HarnessError(ValueError):
    """Scenario is malformed or references nonexistent addresses."""


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    trigger_step: int
    target: int | None = None          # transfer destination / payload address
    payload: bytes | None = None       # plaintext machine code, code-injection only
    sentinel_addr: int | None = None
    sentinel_value: int = DEFAULT_SENTINEL_VALUE
    patch_source: int | None = None    # patch-replay: block whose patch to replay

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise HarnessError(f"unknown scenario kind {self.kind!r}")
        if self.trigger_step < 0:
            raise HarnessError("trigger_step must be non-negative")
        if self.target is not None and self.target % 4:
            raise HarnessError("target must be 4-byte aligned")

    def to_json_dict(self) -> dict:
        doc = {"kind": self.kind, "trigger_step": self.trigger_step}
        if self.target is not None:
            doc["target"] = self.target
        if self.payload is not None:
            doc["payload_hex"] = self.payload.hex()
        if self.sentinel_addr is not None:
            doc["sentinel_addr"] = self.sentinel_addr
            doc["sentinel_value"] = self.sentinel_value
        if self.patch_source is not None:
            doc["patch_source"] = self.patch_source
        return doc


def scenario_from_json_dict(doc: dict) -> AttackScenario:
    if "trigger_step" not in doc and "trigger" in doc:
        doc = {**doc, "trigger_step": doc["trigger"]}
    try:
        return AttackScenario(
            kind=doc["kind"],
            trigger_step=doc["trigger_step"],
            target=doc.get("target"),
            payload=bytes.fromhex(doc["payload_hex"]) if "payload_hex" in doc else None,
            sentinel_addr=doc.get("sentinel_addr"),
            sentinel_value=doc.get("sentinel_value", DEFAULT_SENTINEL_VALUE),
            patch_source=doc.get("patch_source"),
        )
    except KeyError as exc:
        raise HarnessError(f"scenario file missing field {exc}") from None


def load_scenario(path) -> AttackScenario:
    with open(path) as fh:
        return scenario_from_json_dict(json.load(fh))


@dataclass(frozen=True)
class AttackOutcome:
    detected: bool
    instructions_until_fault: int | None   # 1-based fetch index after the trigger
    hijack_succeeded: bool
    report: RunReport

    def to_json_dict(self) -> dict:
        return {
            "detected": self.detected,
            "instructions_until_fault": self.instructions_until_fault,
            "hijack_succeeded": self.hijack_succeeded,
            "outcome": self.report.outcome,
            "counters": self.report.counters.as_dict(),
        }


def hijack_payload(sentinel_addr: int, sentinel_value: int) -> bytes:
    """Attacker shellcode: store the sentinel value, then halt."""
    def li(rd, value):
        hi = ((value + 0x800) >> 12) & 0xFFFFF
        lo = value - (hi << 12)
        if lo >= 1 << 31:
            lo -= 1 << 32
        return [Instruction("lui", rd=rd, imm=hi),
                Instruction("addi", rd=rd, rs1=rd, imm=lo)]

    instrs = (li(5, sentinel_addr) + li(6, sentinel_value)
              + [Instruction("sw", rs1=5, rs2=6, imm=0), Instruction("ecall")])
    return b"".join(encode(i).to_bytes(4, "little") for i in instrs)


def _block_spans(image):
    return [(entry, entry + 4 * length) for entry, length in image.blocks]


def _current_block(engine: Engine) -> int:
    block_id = engine.block_id_by_entry.get(engine.state.cur_block_base)
    if block_id is None:
        raise HarnessError("engine key state is not at a block entry")
    return block_id


def _apply_scenario(engine: Engine, eimage: EncryptedImage,
                    scenario: AttackScenario, rng: random.Random) -> None:
    state = engine.state
    image = eimage.image
    pairs = {(src, target) for src, target, _ in eimage.patch_table}
    cur = _current_block(engine)

    if scenario.kind == CODE_INJECTION:
        if scenario.payload is None or scenario.target is None:
            raise HarnessError("code-injection needs target and payload")
        if len(scenario.payload) % 4:
            raise HarnessError("payload must be whole words")
        for i in range(0, len(scenario.payload), 4):
            word = int.from_bytes(scenario.payload[i:i + 4], "little")
            if not state.mem.store_word(scenario.target + i, word):
                raise HarnessError(
                    f"payload address {scenario.target + i:#x} is not mapped")
        state.pc = scenario.target

    elif scenario.kind == ROGUE_EDGE:
        target = scenario.target
        if target is None:
            candidates = [entry for entry, _ in image.blocks
                          if (cur, entry) not in pairs
                          and entry != state.cur_block_base]
            if not candidates:
                raise HarnessError("no rogue target available from current block")
            target = rng.choice(candidates)
        elif engine.block_len_by_entry.get(target) is None:
            raise HarnessError(f"rogue target {target:#x} is not a block entry")
        state.pc = target

    elif scenario.kind == MID_BLOCK_ENTRY:
        target = scenario.target
        if target is None:
            candidates = [
                entry + 4 * off
                for entry, length in image.blocks
                for off in range(1, length)
                if entry != state.cur_block_base  # same-block skips are out of scope
            ]
            if not candidates:
                raise HarnessError("no multi-word block to enter mid-body")
            target = rng.choice(candidates)
        else:
            spans = _block_spans(image)
            inside = any(lo < target < hi for lo, hi in spans)
            if not inside or target in engine.block_len_by_entry:
                raise HarnessError(f"{target:#x} is not a mid-block address")
        state.pc = target

    elif scenario.kind == PATCH_REPLAY:
        records = [(src, target, patch) for src, target, patch in eimage.patch_table
                   if src != cur
                   and (scenario.patch_source is None or src == scenario.patch_source)
                   and (scenario.target is None or target == scenario.target)]
        if not records:
            raise HarnessError("no replayable patch from a different source block")
        src, target, patch = records[0] if scenario.target is not None \
            else rng.choice(records)
        # the replayed update: key register absorbs a patch minted for src
        state.cur_key = derive_next_key(state.cur_key, patch)
        state.cur_block_base = target
        state.pc = target


def run_attack(eimage: EncryptedImage, scenario: AttackScenario, seed: int = 0,
               step_limit: int = DEFAULT_STEP_LIMIT) -> AttackOutcome:
    """Run to the trigger, apply the scenario, keep executing engine rules."""
    rng = random.Random(seed)
    engine = encrypted_engine(eimage)
    fired = {"at": None}

    def intervene(eng: Engine):
        fired["at"] = eng.state.counters.instructions_retired
        _apply_scenario(eng, eimage, scenario, rng)

    report = engine.run(step_limit, intervene=intervene,
                        trigger_step=scenario.trigger_step)

    detected = report.outcome in (INTEGRITY_FAULT, MEMORY_FAULT)
    latency = None
    if detected:
        since = fired["at"] or 0
        latency = report.instructions_until_fault - since
    hijacked = False
    if scenario.sentinel_addr is not None:
        hijacked = (engine.state.mem.load_word(scenario.sentinel_addr)
                    == scenario.sentinel_value)
    return AttackOutcome(detected=detected, instructions_until_fault=latency,
                         hijack_succeeded=hijacked, report=report)


def run_trials(eimage: EncryptedImage, kind: str, n_trials: int, seed: int,
               step_limit: int = DEFAULT_STEP_LIMIT) -> list[AttackOutcome]:
    """Randomized attack instances with trigger/target drawn from `seed`."""
    if n_trials < 1:
        raise ValueError("n_trials must be positive")
    baseline = run_encrypted(eimage, step_limit)
    if baseline.outcome != HALT:
        raise HarnessError("program does not halt unattacked; cannot place triggers")
    horizon = baseline.counters.instructions_retired
    rng = random.Random(seed)
    outcomes = []
    for trial in range(n_trials):
        scenario = AttackScenario(kind=kind, trigger_step=rng.randrange(horizon))
        outcomes.append(run_attack(eimage, scenario,
                                   seed=rng.getrandbits(63), step_limit=step_limit))
    return outcomes


def survival_trials(eimage: EncryptedImage, kind: str, n_trials: int, seed: int,
                    step_limit: int = DEFAULT_STEP_LIMIT) -> list[int]:
    """Fault-latency sample; undetected runs are censored at step_limit."""
    outcomes = run_trials(eimage, kind, n_trials, seed, step_limit)
    return [o.instructions_until_fault if o.detected else step_limit
            for o in outcomes]


def write_trials_csv(outcomes: list[AttackOutcome], fh,
                     step_limit: int = DEFAULT_STEP_LIMIT) -> None:
    writer = csv.writer(fh)
    writer.writerow(["trial", "detected", "latency"])
    for trial, outcome in enumerate(outcomes):
        latency = outcome.instructions_until_fault if outcome.detected else step_limit
        writer.writerow([trial, int(outcome.detected), latency])
