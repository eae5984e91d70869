"""Recursive-descent parsers for contracts, global types and system files.

Case separates the lexical classes: participant names start uppercase,
variables (participant, session and recursion alike) and sorts lowercase.
Internal choice is written `(+)`, external choice `+`; a missing
continuation after a prefix means end. A `rec x .` body extends as far
right as possible, so choices after it sit inside the binder unless
parenthesised.

System files hold `participant NAME { process }` blocks, `def` blocks for
named processes, and (for snapshots mid-execution) `session` blocks with
stipulated contracts and queue contents.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from ..contracts import (
    Contract,
    ContractError,
    END,
    Rec,
    RecVar,
    free_rec_vars,
    free_participant_vars,
    is_guarded,
    is_part_name,
    make_system,
    recv_choice,
    send_choice,
    RecvChoice,
    SendChoice,
)
from ..choreo import GEND, GlobalType, GMsg, GRec, GRecVar, gchoice, gpar
from ..contracts import RECV, SEND
from ..runtime import (
    Call,
    Co2System,
    Delim,
    FusePolicy,
    NIL,
    Par,
    PDo,
    PFuse,
    PTau,
    PTell,
    ProcDef,
    Process,
    Sum,
    make_co2,
    normalize,
)
from .lex import Diagnostic, ParseError, Token, tokenize


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.diags: list[Diagnostic] = []

    # -- token plumbing ----------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        i = min(self.pos + ahead, len(self.tokens) - 1)
        return self.tokens[i]

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.text == text and t.kind in ("punct", "ident")

    def eat(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def accept(self, text: str) -> Optional[Token]:
        if self.at(text):
            return self.eat()
        return None

    def expect(self, text: str) -> Token:
        if self.at(text):
            return self.eat()
        return self.fail(f"expected {text!r}, found {self.peek().text!r}")

    def ident(self, what: str = "identifier") -> Token:
        t = self.peek()
        if t.kind != "ident":
            return self.fail(f"expected {what}, found {t.text or 'end of input'!r}")
        return self.eat()

    def fail(self, message: str, span=None):
        self.diags.append(Diagnostic("error", message, span or self.peek().span))
        raise ParseError(self.diags)

    def done(self) -> bool:
        return self.peek().kind == "eof"

    # -- contracts -----------------------------------------------------------

    def contract(self) -> Contract:
        first_tok = self.peek()
        units = [self.contract_unit()]
        op = None
        while self.at("(+)") or self.at("+"):
            tok = self.eat()
            if op is None:
                op = tok.text
            elif op != tok.text:
                self.fail("cannot mix internal and external choice", tok.span)
            units.append(self.contract_unit())
        if op is None:
            return units[0]
        if op == "(+)":
            branches = []
            for u in units:
                if not isinstance(u, SendChoice):
                    self.fail("internal-choice branches must send", first_tok.span)
                branches.extend(u.branches)
            try:
                return send_choice(branches)
            except ContractError as exc:
                self.fail(str(exc), first_tok.span)
        sources = set()
        branches = []
        for u in units:
            if not isinstance(u, RecvChoice):
                self.fail("external-choice branches must receive", first_tok.span)
            sources.add(u.source)
            branches.extend(u.branches)
        if len(sources) != 1:
            self.fail(
                f"external choice must receive from one participant, got {sorted(sources)}",
                first_tok.span,
            )
        try:
            return recv_choice(sources.pop(), branches)
        except ContractError as exc:
            self.fail(str(exc), first_tok.span)

    def contract_unit(self) -> Contract:
        t = self.peek()
        if self.at("("):
            self.eat()
            c = self.contract()
            self.expect(")")
            return c
        if t.kind != "ident":
            self.fail(f"expected a contract, found {t.text!r}")
        if t.text == "end":
            self.eat()
            return END
        if t.text == "rec":
            self.eat()
            var = self.ident("recursion variable")
            if is_part_name(var.text):
                self.fail("recursion variables are lowercase", var.span)
            self.expect(".")
            body = self.contract()
            if not is_guarded(Rec(var.text, body)):
                self.fail(f"unguarded recursion on {var.text!r}", var.span)
            return Rec(var.text, body)
        nxt = self.peek(1)
        if nxt.text in ("!", "?"):
            part = self.eat()
            dir_tok = self.eat()
            sort = self.ident("sort")
            if is_part_name(sort.text):
                self.fail("sorts are lowercase", sort.span)
            cont: Contract = END
            if self.accept("."):
                cont = self.contract_unit()
            if dir_tok.text == "!":
                return send_choice([(part.text, sort.text, cont)])
            return recv_choice(part.text, [(sort.text, cont)])
        var = self.eat()
        if is_part_name(var.text):
            self.fail("a bare identifier here is a recursion variable (lowercase)", var.span)
        return RecVar(var.text)

    # -- global types ----------------------------------------------------------

    def global_type(self) -> GlobalType:
        parts = [self.global_par()]
        while self.accept("\\/"):
            parts.append(self.global_par())
        return gchoice(parts) if len(parts) > 1 else parts[0]

    def global_par(self) -> GlobalType:
        parts = [self.global_seq()]
        while self.accept("||"):
            parts.append(self.global_seq())
        return gpar(parts) if len(parts) > 1 else parts[0]

    def global_seq(self) -> GlobalType:
        t = self.peek()
        if self.at("("):
            self.eat()
            g = self.global_type()
            self.expect(")")
            return g
        if t.kind != "ident":
            self.fail(f"expected a global type, found {t.text!r}")
        if t.text == "end":
            self.eat()
            return GEND
        if t.text == "rec":
            self.eat()
            var = self.ident("recursion variable")
            self.expect(".")
            return GRec(var.text, self.global_type())
        if self.peek(1).text == "->":
            src = self.eat()
            self.eat()  # ->
            dst = self.ident("participant name")
            self.expect(":")
            sort = self.ident("sort")
            for tok in (src, dst):
                if not is_part_name(tok.text):
                    self.fail("interactions connect participant names", tok.span)
            if src.text == dst.text:
                self.fail("a participant cannot message itself", dst.span)
            cont: GlobalType = GEND
            if self.accept(";"):
                cont = self.global_seq()
            return GMsg(src.text, dst.text, sort.text, cont)
        var = self.eat()
        if is_part_name(var.text):
            self.fail("a bare identifier here is a recursion variable (lowercase)", var.span)
        return GRecVar(var.text)

    # -- processes ---------------------------------------------------------------

    def process(self) -> Process:
        parts = [self.proc_sum()]
        while self.accept("|"):
            parts.append(self.proc_sum())
        if len(parts) == 1:
            return parts[0]
        return Par(tuple(parts))

    def proc_sum(self) -> Process:
        first_tok = self.peek()
        terms = [self.proc_term()]
        while self.accept("+"):
            terms.append(self.proc_term())
        if len(terms) == 1:
            return terms[0]
        branches = []
        for term in terms:
            if not isinstance(term, Sum):
                self.fail("choice branches must be prefix-guarded", first_tok.span)
            branches.extend(term.branches)
        return Sum(tuple(branches))

    def proc_term(self) -> Process:
        t = self.peek()
        if t.text == "0":
            self.eat()
            return NIL
        if self.at("("):
            saved = self.pos
            delim = self._try_delim()
            if delim is not None:
                return delim
            self.pos = saved
            self.eat()
            p = self.process()
            self.expect(")")
            return p
        if t.kind != "ident":
            self.fail(f"expected a process, found {t.text!r}")
        if t.text == "tau":
            self.eat()
            return Sum(((PTau(), self._cont()),))
        if t.text == "tell":
            self.eat()
            target = self.ident("participant")
            self.expect("@")
            handle = self.ident("session variable")
            if is_part_name(handle.text):
                self.fail("session handles are lowercase variables", handle.span)
            self.expect("{")
            contract = self.contract()
            self.expect("}")
            self._check_contract(contract, handle.span)
            return Sum(((PTell(target.text, handle.text, contract), self._cont()),))
        if t.text == "fuse":
            self.eat()
            policy = self._policy()
            return Sum(((PFuse(policy), self._cont()),))
        if t.text == "do":
            self.eat()
            sess = self.ident("session reference")
            peer = self.ident("participant")
            d = self.peek()
            if d.text not in ("!", "?"):
                self.fail("a contractual action needs a direction (! or ?)")
            self.eat()
            sort = self.ident("sort")
            if is_part_name(sort.text):
                self.fail("sorts are lowercase", sort.span)
            prefix = PDo(sess.text, peer.text, sort.text, SEND if d.text == "!" else RECV)
            return Sum(((prefix, self._cont()),))
        if self.peek(1).text == "(":
            name = self.eat()
            if not is_part_name(name.text):
                self.fail("process definitions are named uppercase", name.span)
            self.eat()  # (
            sess_args, part_args = self._arg_lists()
            self.expect(")")
            return Call(name.text, tuple(sess_args), tuple(part_args))
        self.fail(f"expected a process, found {t.text!r}")

    def _cont(self) -> Process:
        if self.accept("."):
            return self.proc_term()
        return NIL

    def _check_contract(self, c: Contract, span) -> None:
        free = free_rec_vars(c)
        if free:
            self.fail(f"unbound recursion variable {sorted(free)[0]!r}", span)

    def _policy(self) -> FusePolicy:
        if not self.at("("):
            return FusePolicy()
        # distinguish `fuse (x) P`-style grouping? a policy list holds only
        # known option words, so probe and backtrack otherwise
        saved = self.pos
        self.eat()
        minimum = 2
        mode = "plain"
        smallest = False
        while True:
            t = self.peek()
            if t.text == "min":
                self.eat()
                self.expect("=")
                num = self.peek()
                if num.kind != "number":
                    self.fail("min= needs a number")
                self.eat()
                minimum = int(num.text)
                if minimum < 2:
                    self.fail("sessions need at least two participants", num.span)
            elif t.text == "terminating":
                self.eat()
                mode = "terminating"
            elif t.text == "recursive":
                self.eat()
                mode = "recursive"
            elif t.text == "smallest":
                self.eat()
                smallest = True
            else:
                self.pos = saved
                return FusePolicy()
            if self.accept(","):
                continue
            self.expect(")")
            return FusePolicy(minimum, mode, smallest)

    def _try_delim(self) -> Optional[Process]:
        # pure lookahead: never emits diagnostics, restores position on failure
        saved = self.pos
        self.eat()  # (
        first: list[str] = []
        second: list[str] = []
        current = first
        while True:
            if current is first and not first and self.at(";"):
                self.eat()  # participant-only delimitation: (; a, b)
                current = second
                continue
            t = self.peek()
            if (
                t.kind != "ident"
                or is_part_name(t.text)
                or t.text in ("tau", "tell", "fuse", "do", "end", "rec")
            ):
                self.pos = saved
                return None
            current.append(self.eat().text)
            if self.accept(","):
                continue
            if self.at(";"):
                self.eat()
                if current is second:
                    self.pos = saved
                    return None
                current = second
                continue
            if self.at(")"):
                self.eat()
                break
            self.pos = saved
            return None
        nxt = self.peek()
        if nxt.kind == "ident" or nxt.text in ("(", "0"):
            body = self.proc_term()
            return Delim(tuple(first), tuple(second), body)
        self.pos = saved
        return None

    def _arg_lists(self) -> tuple[list[str], list[str]]:
        sess: list[str] = []
        parts: list[str] = []
        current = sess
        if self.at(")"):
            return sess, parts
        while True:
            if self.at(";"):
                self.eat()
                current = parts
                continue
            t = self.ident("argument")
            current.append(t.text)
            if self.accept(","):
                continue
            if self.accept(";"):
                if current is parts:
                    self.fail("too many ';' in argument list", t.span)
                current = parts
                continue
            return sess, parts

    # -- system files -----------------------------------------------------------

    def system_file(self) -> Co2System:
        processes: dict[str, Process] = {}
        sessions: dict[str, object] = {}
        definitions: dict[str, ProcDef] = {}
        while not self.done():
            t = self.peek()
            if t.text == "participant":
                self.eat()
                name = self.ident("participant name")
                if not is_part_name(name.text):
                    self.fail("participant names start uppercase", name.span)
                if name.text in processes:
                    self.fail(f"duplicate participant {name.text}", name.span)
                self.expect("{")
                processes[name.text] = self.process()
                self.expect("}")
            elif t.text == "def":
                self.eat()
                name = self.ident("definition name")
                if not is_part_name(name.text):
                    self.fail("definition names start uppercase", name.span)
                if name.text in definitions:
                    self.fail(f"duplicate definition {name.text}", name.span)
                self.expect("(")
                sess_params, part_params = self._arg_lists()
                self.expect(")")
                self.expect("=")
                body = self.process()
                definitions[name.text] = ProcDef(
                    tuple(sess_params), tuple(part_params), body
                )
            elif t.text == "session":
                self.eat()
                name = self.ident("session name")
                if is_part_name(name.text):
                    self.fail("session names start lowercase", name.span)
                if name.text in sessions:
                    self.fail(f"duplicate session {name.text}", name.span)
                self.expect("{")
                sessions[name.text] = self._session_body(name)
                self.expect("}")
            else:
                self.fail(
                    "expected 'participant', 'def' or 'session' at top level"
                )
        self._validate_calls(processes, definitions)
        try:
            system = make_co2(processes, {}, sessions, definitions)  # type: ignore[arg-type]
        except (ContractError, ValueError) as exc:
            self.fail(str(exc))
        return normalize(system)

    def _session_body(self, header: Token):
        contracts: dict[str, Contract] = {}
        queues: dict[tuple[str, str], tuple[str, ...]] = {}
        while not self.at("}"):
            t = self.peek()
            if t.text == "queue":
                self.eat()
                frm = self.ident("participant name")
                self.expect("->")
                to = self.ident("participant name")
                self.expect(":")
                self.expect("[")
                msgs: list[str] = []
                if not self.at("]"):
                    while True:
                        msgs.append(self.ident("sort").text)
                        if not self.accept(","):
                            break
                self.expect("]")
                queues[(frm.text, to.text)] = tuple(msgs)
                continue
            name = self.ident("participant name")
            if not is_part_name(name.text):
                self.fail("stipulated contracts belong to named participants", name.span)
            if name.text in contracts:
                self.fail(f"duplicate contract for {name.text}", name.span)
            self.expect(":")
            c = self.contract()
            bad = free_participant_vars(c)
            if bad:
                self.fail(
                    f"stipulated contract of {name.text} mentions variables {sorted(bad)}",
                    name.span,
                )
            contracts[name.text] = c
        try:
            return make_system(contracts, queues)
        except ContractError as exc:
            self.fail(str(exc), header.span)

    def _validate_calls(self, processes, definitions) -> None:
        def walk(p: Process, bound_s: frozenset[str], bound_p: frozenset[str], where: str):
            if isinstance(p, Sum):
                for prefix, cont in p.branches:
                    walk(cont, bound_s, bound_p, where)
            elif isinstance(p, Par):
                for q in p.parts:
                    walk(q, bound_s, bound_p, where)
            elif isinstance(p, Delim):
                walk(
                    p.body,
                    bound_s | frozenset(p.session_vars),
                    bound_p | frozenset(p.part_vars),
                    where,
                )
            elif isinstance(p, Call):
                if p.name not in definitions:
                    self.fail(f"call to undefined process {p.name} in {where}")
                d = definitions[p.name]
                if len(d.session_params) != len(p.session_args) or len(
                    d.part_params
                ) != len(p.part_args):
                    self.fail(f"arity mismatch calling {p.name} in {where}")

        for name, proc in processes.items():
            walk(proc, frozenset(), frozenset(), f"participant {name}")
        for name, d in definitions.items():
            walk(
                d.body,
                frozenset(d.session_params),
                frozenset(d.part_params),
                f"def {name}",
            )
            free = _free_proc_vars(d.body, frozenset(d.session_params), frozenset(d.part_params))
            if free:
                self.fail(
                    f"def {name} uses {sorted(free)[0]!r} which is neither a parameter "
                    f"nor delimited"
                )


def _free_proc_vars(
    p: Process, bound_s: frozenset[str], bound_p: frozenset[str]
) -> set[str]:
    out: set[str] = set()
    if isinstance(p, Sum):
        for prefix, cont in p.branches:
            if isinstance(prefix, PTell):
                if not is_part_name(prefix.target) and prefix.target not in bound_p:
                    out.add(prefix.target)
                if prefix.session_var not in bound_s:
                    out.add(prefix.session_var)
                out |= {
                    v for v in free_participant_vars(prefix.contract) if v not in bound_p
                }
            elif isinstance(prefix, PDo):
                if prefix.session not in bound_s:
                    out.add(prefix.session)
                if not is_part_name(prefix.peer) and prefix.peer not in bound_p:
                    out.add(prefix.peer)
            out |= _free_proc_vars(cont, bound_s, bound_p)
    elif isinstance(p, Par):
        for q in p.parts:
            out |= _free_proc_vars(q, bound_s, bound_p)
    elif isinstance(p, Delim):
        out |= _free_proc_vars(
            p.body, bound_s | frozenset(p.session_vars), bound_p | frozenset(p.part_vars)
        )
    elif isinstance(p, Call):
        out |= {u for u in p.session_args if u not in bound_s}
        out |= {
            a for a in p.part_args if not is_part_name(a) and a not in bound_p
        }
    return out


# --------------------------------------------------------------------------
# Entry points
# --------------------------------------------------------------------------

CONTRACT_FILE = "contract"
SYSTEM_FILE = "system"
GLOBAL_TYPE_FILE = "global-type"

_KIND_BY_SUFFIX = {
    ".ctr": CONTRACT_FILE,
    ".co2": SYSTEM_FILE,
    ".gt": GLOBAL_TYPE_FILE,
    ".gt.json": GLOBAL_TYPE_FILE,
}


@dataclass(frozen=True)
class SourceFile:
    path: str
    text: str
    kind: str

    def parse(self):
        if self.kind == CONTRACT_FILE:
            return parse_named_contracts(self.text)
        if self.kind == SYSTEM_FILE:
            return parse_system(self.text)
        if self.kind == GLOBAL_TYPE_FILE:
            if self.path.endswith(".json"):
                import json

                from .emit import global_from_json

                return global_from_json(json.loads(self.text))
            return parse_global(self.text)
        raise ValueError(f"unknown source kind {self.kind!r}")


def load_source(path) -> SourceFile:
    from pathlib import Path

    p = Path(path)
    name = p.name
    kind = None
    for suffix, k in sorted(_KIND_BY_SUFFIX.items(), key=lambda kv: -len(kv[0])):
        if name.endswith(suffix):
            kind = k
            break
    if kind is None:
        raise ValueError(f"cannot tell the format of {name!r} from its extension")
    return SourceFile(str(p), p.read_text(encoding="utf-8"), kind)


def parse_contract(text: str, start_line: int = 1) -> Contract:
    p = _Parser(tokenize(text, start_line))
    c = p.contract()
    if not p.done():
        p.fail(f"trailing input after contract: {p.peek().text!r}")
    return c


def parse_global(text: str) -> GlobalType:
    p = _Parser(tokenize(text))
    g = p.global_type()
    if not p.done():
        p.fail(f"trailing input after global type: {p.peek().text!r}")
    return g


def parse_system(text: str) -> Co2System:
    p = _Parser(tokenize(text))
    return p.system_file()


_HEADER = re.compile(r"^\s*([A-Z][A-Za-z0-9_']*)\s*:", re.M)


def parse_named_contracts(text: str) -> dict[str, Contract]:
    """Parse `Name: contract` entries; a contract runs until the next header."""
    headers = list(_HEADER.finditer(text))
    if not headers:
        stripped = [
            ln for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")
        ]
        if not stripped:
            return {}
        raise ParseError(
            [Diagnostic("error", "expected 'Name: contract' entries", (1, 1, 1, 1))]
        )
    leading = text[: headers[0].start()]
    if any(ln.strip() and not ln.strip().startswith("#") for ln in leading.splitlines()):
        raise ParseError(
            [Diagnostic("error", "text before the first 'Name:' header", (1, 1, 1, 1))]
        )
    out: dict[str, Contract] = {}
    for i, m in enumerate(headers):
        name = m.group(1)
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        body = text[m.end() : end]
        line = text[: m.end()].count("\n") + 1
        if name in out:
            raise ParseError(
                [Diagnostic("error", f"duplicate contract for {name}", (line, 1, line, 1))]
            )
        out[name] = parse_contract(body, start_line=line)
    return out
