"""Rendering and serialization: text forms, global-type JSON, trace files."""
from __future__ import annotations

import json
from typing import Optional

from ..choreo import (
    GEnd,
    GEND,
    GChoice,
    GMsg,
    GPar,
    GRec,
    GRecVar,
    GlobalType,
)
from ..contracts import (
    Contract,
    End,
    Rec,
    RecVar,
    RecvChoice,
    SendChoice,
    SEND,
)
from ..runtime import (
    Call,
    Co2System,
    Delim,
    FuseReport,
    PFuse,
    PNil,
    PTau,
    PTell,
    Par,
    Prefix,
    Process,
    StepLabel,
    Sum,
    Trace,
)


# --------------------------------------------------------------------------
# Contracts
# --------------------------------------------------------------------------

def render_contract(c: Contract) -> str:
    if isinstance(c, End):
        return "end"
    if isinstance(c, RecVar):
        return c.var
    if isinstance(c, Rec):
        return f"rec {c.var} . {render_contract(c.body)}"
    if isinstance(c, SendChoice):
        parts = [_branch_text(f"{to}!{sort}", cont) for to, sort, cont in c.branches]
        return " (+) ".join(parts)
    parts = [_branch_text(f"{c.source}?{sort}", cont) for sort, cont in c.branches]
    return " + ".join(parts)


def _branch_text(head: str, cont: Contract) -> str:
    if isinstance(cont, End):
        return head
    tail = render_contract(cont)
    if _needs_parens(cont):
        tail = f"({tail})"
    return f"{head} . {tail}"


def _needs_parens(c: Contract) -> bool:
    if isinstance(c, SendChoice):
        return len(c.branches) > 1
    if isinstance(c, RecvChoice):
        return len(c.branches) > 1
    return isinstance(c, Rec)


# --------------------------------------------------------------------------
# Global types
# --------------------------------------------------------------------------

def _dangling_rec(g: GlobalType) -> bool:
    # a trailing recursion binder would swallow a following choice or
    # parallel separator, because its body extends as far right as possible
    if isinstance(g, GRec):
        return True
    if isinstance(g, GMsg):
        if isinstance(g.cont, (GChoice, GPar)):
            return False  # rendered in parentheses
        return _dangling_rec(g.cont)
    if isinstance(g, GPar):
        return _dangling_rec(g.branches[-1])
    return False


def render_global(g: GlobalType) -> str:
    if isinstance(g, GEnd):
        return "end"
    if isinstance(g, GRecVar):
        return g.var
    if isinstance(g, GRec):
        return f"rec {g.var} . {render_global(g.body)}"
    if isinstance(g, GMsg):
        head = f"{g.src} -> {g.dst} : {g.sort}"
        if isinstance(g.cont, GEnd):
            return head
        tail = render_global(g.cont)
        if isinstance(g.cont, (GChoice, GPar)):
            tail = f"({tail})"
        return f"{head} ; {tail}"
    if isinstance(g, GChoice):
        bits = []
        for i, b in enumerate(g.branches):
            text = render_global(b)
            if isinstance(b, GChoice) or (i + 1 < len(g.branches) and _dangling_rec(b)):
                text = f"({text})"
            bits.append(text)
        return " \\/ ".join(bits)
    bits = []
    for i, b in enumerate(g.branches):
        text = render_global(b)
        if isinstance(b, (GChoice, GPar)) or (
            i + 1 < len(g.branches) and _dangling_rec(b)
        ):
            text = f"({text})"
        bits.append(text)
    return " || ".join(bits)


def global_to_json(g: GlobalType) -> dict:
    if isinstance(g, GEnd):
        return {"kind": "end"}
    if isinstance(g, GRecVar):
        return {"kind": "var", "var": g.var}
    if isinstance(g, GRec):
        return {"kind": "rec", "var": g.var, "body": global_to_json(g.body)}
    if isinstance(g, GMsg):
        return {
            "kind": "msg",
            "from": g.src,
            "to": g.dst,
            "sort": g.sort,
            "cont": global_to_json(g.cont),
        }
    if isinstance(g, GChoice):
        return {"kind": "choice", "branches": [global_to_json(b) for b in g.branches]}
    return {"kind": "par", "branches": [global_to_json(b) for b in g.branches]}


def global_from_json(data: dict) -> GlobalType:
    kind = data["kind"]
    if kind == "end":
        return GEND
    if kind == "var":
        return GRecVar(data["var"])
    if kind == "rec":
        return GRec(data["var"], global_from_json(data["body"]))
    if kind == "msg":
        return GMsg(data["from"], data["to"], data["sort"], global_from_json(data["cont"]))
    if kind == "choice":
        return GChoice(tuple(global_from_json(b) for b in data["branches"]))
    if kind == "par":
        return GPar(tuple(global_from_json(b) for b in data["branches"]))
    raise ValueError(f"unknown global-type node {kind!r}")


# --------------------------------------------------------------------------
# Processes and systems
# --------------------------------------------------------------------------

def render_prefix(p: Prefix) -> str:
    if isinstance(p, PTau):
        return "tau"
    if isinstance(p, PTell):
        return f"tell {p.target} @{p.session_var} {{ {render_contract(p.contract)} }}"
    if isinstance(p, PFuse):
        opts = []
        if p.policy.min_participants != 2:
            opts.append(f"min={p.policy.min_participants}")
        if p.policy.mode != "plain":
            opts.append(p.policy.mode)
        if p.policy.prefer_smallest:
            opts.append("smallest")
        return f"fuse({', '.join(opts)})" if opts else "fuse"
    mark = "!" if p.dir == SEND else "?"
    return f"do {p.session} {p.peer}{mark}{p.sort}"


def render_process(p: Process) -> str:
    if isinstance(p, PNil):
        return "0"
    if isinstance(p, Sum):
        parts = []
        for prefix, cont in p.branches:
            if isinstance(cont, PNil):
                parts.append(render_prefix(prefix))
            else:
                tail = render_process(cont)
                if isinstance(cont, Sum) and len(cont.branches) > 1:
                    tail = f"({tail})"
                elif isinstance(cont, Par):
                    tail = f"({tail})"
                parts.append(f"{render_prefix(prefix)} . {tail}")
        return " + ".join(parts)
    if isinstance(p, Par):
        bits = []
        for q in p.parts:
            text = render_process(q)
            if isinstance(q, Sum) and len(q.branches) > 1:
                text = f"({text})"
            bits.append(text)
        return " | ".join(bits)
    if isinstance(p, Call):
        sess = ", ".join(p.session_args)
        parts = ", ".join(p.part_args)
        return f"{p.name}({sess}; {parts})" if parts else f"{p.name}({sess})"
    if isinstance(p, Delim):
        sess = ", ".join(p.session_vars)
        parts = ", ".join(p.part_vars)
        head = f"({sess}; {parts})" if parts else f"({sess})"
        body = render_process(p.body)
        if isinstance(p.body, Par) or (
            isinstance(p.body, Sum) and len(p.body.branches) > 1
        ):
            body = f"({body})"
        return f"{head} {body}"
    raise ValueError(f"cannot render {type(p).__name__}")


def render_system(system: Co2System) -> str:
    lines: list[str] = []
    for name, proc in system.processes:
        lines.append(f"participant {name} {{")
        lines.append(f"  {render_process(proc)}")
        lines.append("}")
    for sname, t in system.sessions:
        lines.append(f"session {sname} {{")
        for pname, c in t.contracts:
            lines.append(f"  {pname}: {render_contract(c)}")
        for frm, to, msgs in t.queues:
            if msgs:
                lines.append(f"  queue {frm} -> {to} : [{', '.join(msgs)}]")
        lines.append("}")
    for dname, d in system.definitions:
        sess = ", ".join(d.session_params)
        parts = ", ".join(d.part_params)
        header = f"def {dname}({sess}; {parts})" if parts else f"def {dname}({sess})"
        lines.append(f"{header} = {render_process(d.body)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Traces
# --------------------------------------------------------------------------

def _label_to_json(step: int, label: StepLabel, digest: str) -> dict:
    record: dict = {"step": step, "actor": label.actor, "kind": label.kind}
    if label.session is not None:
        record["session"] = label.session
    if label.peer is not None:
        record["peer"] = label.peer
    if label.sort is not None:
        record["sort"] = label.sort
    if label.dir is not None:
        record["dir"] = label.dir
    if label.target is not None:
        record["target"] = label.target
    if label.session_var is not None:
        record["sessionVar"] = label.session_var
    if label.callee is not None:
        record["callee"] = label.callee
    if label.fuse is not None:
        record["fuseReport"] = {
            "session": label.fuse.session,
            "participants": list(label.fuse.participants),
            "sigma": dict(label.fuse.sigma),
            "pi": dict(label.fuse.pi),
            "globalType": global_to_json(label.fuse.global_type),
        }
    record["stateDigest"] = digest
    return record


def trace_to_jsonl(trace: Trace) -> str:
    lines = [
        json.dumps(_label_to_json(i + 1, label, digest), sort_keys=True)
        for i, (label, digest) in enumerate(zip(trace.steps, trace.digests))
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def trace_from_jsonl(text: str) -> tuple[tuple[StepLabel, ...], tuple[str, ...]]:
    steps: list[StepLabel] = []
    digests: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"trace line {lineno} is not valid JSON: {exc}") from exc
        fuse: Optional[FuseReport] = None
        if "fuseReport" in record:
            fr = record["fuseReport"]
            fuse = FuseReport(
                session=fr["session"],
                participants=tuple(fr["participants"]),
                sigma=tuple(sorted(fr["sigma"].items())),
                pi=tuple(sorted(fr["pi"].items())),
                global_type=global_from_json(fr["globalType"]),
            )
        steps.append(
            StepLabel(
                actor=record["actor"],
                kind=record["kind"],
                session=record.get("session"),
                peer=record.get("peer"),
                sort=record.get("sort"),
                dir=record.get("dir"),
                target=record.get("target"),
                session_var=record.get("sessionVar"),
                callee=record.get("callee"),
                fuse=fuse,
            )
        )
        digests.append(record["stateDigest"])
    return tuple(steps), tuple(digests)
