"""Behavioural contracts (local session types) and their FIFO-queue semantics.

A contract promises the communication behaviour of one participant: internal
choices of sends, external choices of receives, guarded recursion, or end.
A session holds one stipulated contract per participant plus one FIFO queue
per ordered pair of participants; sends append to a queue, receives pop the
matching head.

Everything here is immutable; operations are pure functions returning new
values, so concurrent use needs no locking.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

SEND = "send"
RECV = "recv"

# Cap on chained unfoldings while head-normalising; guarded contracts need at
# most one unfold per nested binder, so hitting this means a malformed input.
_MAX_UNFOLD = 1000


class ContractError(Exception):
    """A contract or contract-system invariant was violated."""


def is_part_name(ref: str) -> bool:
    """Participant names start with an uppercase letter."""
    return ref[:1].isupper()


def is_part_var(ref: str) -> bool:
    """Participant variables start with a lowercase letter."""
    return ref[:1].islower()


# --------------------------------------------------------------------------
# Contract AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class End:
    pass


@dataclass(frozen=True)
class RecVar:
    var: str


@dataclass(frozen=True)
class Rec:
    var: str
    body: "Contract"


@dataclass(frozen=True)
class SendChoice:
    """Internal choice: each branch is (peer, sort, continuation)."""

    branches: tuple[tuple[str, str, "Contract"], ...]


@dataclass(frozen=True)
class RecvChoice:
    """External choice: receive one of several sorts from a single peer."""

    source: str
    branches: tuple[tuple[str, "Contract"], ...]


Contract = Union[End, RecVar, Rec, SendChoice, RecvChoice]

END = End()


def send_choice(branches: Iterable[tuple[str, str, Contract]]) -> SendChoice:
    """Build an internal choice in canonical branch order.

    Branches are sorted by (peer, sort), which makes commutativity and
    associativity of the choice operator an identity of representations.
    """
    bs = tuple(sorted(branches, key=lambda b: (b[0], b[1])))
    if not bs:
        raise ContractError("internal choice needs at least one branch")
    keys = [(to, sort) for to, sort, _ in bs]
    if len(set(keys)) != len(keys):
        raise ContractError("duplicate (peer, sort) in internal choice")
    return SendChoice(bs)


def recv_choice(source: str, branches: Iterable[tuple[str, Contract]]) -> RecvChoice:
    """Build an external choice in canonical branch order (sorted by sort)."""
    bs = tuple(sorted(branches, key=lambda b: b[0]))
    if not bs:
        raise ContractError("external choice needs at least one branch")
    sorts = [sort for sort, _ in bs]
    if len(set(sorts)) != len(sorts):
        raise ContractError("duplicate sort in external choice")
    return RecvChoice(source, bs)


def send(to: str, sort: str, cont: Contract = END) -> SendChoice:
    return send_choice([(to, sort, cont)])


def recv(source: str, sort: str, cont: Contract = END) -> RecvChoice:
    return recv_choice(source, [(sort, cont)])


def rec(var: str, body: Contract) -> Contract:
    if not _is_guarded(body, frozenset([var])):
        raise ContractError(f"unguarded recursion on {var!r}")
    return Rec(var, body)


# --------------------------------------------------------------------------
# Structural helpers
# --------------------------------------------------------------------------

def free_participant_vars(c: Contract) -> frozenset[str]:
    """All participant variables occurring in c."""
    out: set[str] = set()
    _collect_part_vars(c, out)
    return frozenset(out)


def _collect_part_vars(c: Contract, out: set[str]) -> None:
    if isinstance(c, SendChoice):
        for to, _, cont in c.branches:
            if is_part_var(to):
                out.add(to)
            _collect_part_vars(cont, out)
    elif isinstance(c, RecvChoice):
        if is_part_var(c.source):
            out.add(c.source)
        for _, cont in c.branches:
            _collect_part_vars(cont, out)
    elif isinstance(c, Rec):
        _collect_part_vars(c.body, out)


def mentioned_participants(c: Contract) -> frozenset[str]:
    """All peer references (names and variables) occurring in c."""
    out: set[str] = set()

    def walk(node: Contract) -> None:
        if isinstance(node, SendChoice):
            for to, _, cont in node.branches:
                out.add(to)
                walk(cont)
        elif isinstance(node, RecvChoice):
            out.add(node.source)
            for _, cont in node.branches:
                walk(cont)
        elif isinstance(node, Rec):
            walk(node.body)

    walk(c)
    return frozenset(out)


def free_rec_vars(c: Contract) -> frozenset[str]:
    if isinstance(c, RecVar):
        return frozenset([c.var])
    if isinstance(c, Rec):
        return free_rec_vars(c.body) - {c.var}
    if isinstance(c, SendChoice):
        return frozenset().union(*(free_rec_vars(b[2]) for b in c.branches))
    if isinstance(c, RecvChoice):
        return frozenset().union(*(free_rec_vars(b[1]) for b in c.branches))
    return frozenset()


def is_closed(c: Contract) -> bool:
    return not free_rec_vars(c)


def _is_guarded(c: Contract, pending: frozenset[str]) -> bool:
    # `pending` holds binders not yet separated from this node by a prefix.
    if isinstance(c, RecVar):
        return c.var not in pending
    if isinstance(c, Rec):
        return _is_guarded(c.body, pending | {c.var})
    if isinstance(c, SendChoice):
        return all(_is_guarded(cont, frozenset()) for _, _, cont in c.branches)
    if isinstance(c, RecvChoice):
        return all(_is_guarded(cont, frozenset()) for _, cont in c.branches)
    return True


def is_guarded(c: Contract) -> bool:
    return _is_guarded(c, frozenset())


def subst_rec(c: Contract, var: str, replacement: Contract) -> Contract:
    """Substitute RecVar(var) by replacement; inner binders of var shadow."""
    if isinstance(c, RecVar):
        return replacement if c.var == var else c
    if isinstance(c, Rec):
        if c.var == var:
            return c
        return Rec(c.var, subst_rec(c.body, var, replacement))
    if isinstance(c, SendChoice):
        return SendChoice(
            tuple((to, sort, subst_rec(cont, var, replacement)) for to, sort, cont in c.branches)
        )
    if isinstance(c, RecvChoice):
        return RecvChoice(
            c.source,
            tuple((sort, subst_rec(cont, var, replacement)) for sort, cont in c.branches),
        )
    return c


def subst_parts(c: Contract, mapping: Mapping[str, str]) -> Contract:
    """Instantiate participant variables according to mapping."""
    if not mapping:
        return c
    if isinstance(c, SendChoice):
        return SendChoice(
            tuple(
                (mapping.get(to, to), sort, subst_parts(cont, mapping))
                for to, sort, cont in c.branches
            )
        )
    if isinstance(c, RecvChoice):
        return RecvChoice(
            mapping.get(c.source, c.source),
            tuple((sort, subst_parts(cont, mapping)) for sort, cont in c.branches),
        )
    if isinstance(c, Rec):
        return Rec(c.var, subst_parts(c.body, mapping))
    return c


def unfold(c: Contract) -> Contract:
    """One-step unfolding of a top-level recursive binder; identity otherwise."""
    if isinstance(c, Rec):
        return subst_rec(c.body, c.var, c)
    return c


def rename_rec_vars(c: Contract) -> Contract:
    """Rename recursion binders to x0, x1, ... in traversal order."""
    counter = [0]

    def walk(node: Contract, env: dict[str, str]) -> Contract:
        if isinstance(node, RecVar):
            return RecVar(env.get(node.var, node.var))
        if isinstance(node, Rec):
            fresh = f"x{counter[0]}"
            counter[0] += 1
            inner = dict(env)
            inner[node.var] = fresh
            return Rec(fresh, walk(node.body, inner))
        if isinstance(node, SendChoice):
            return SendChoice(
                tuple((to, sort, walk(cont, env)) for to, sort, cont in node.branches)
            )
        if isinstance(node, RecvChoice):
            return RecvChoice(
                node.source, tuple((sort, walk(cont, env)) for sort, cont in node.branches)
            )
        return node

    return walk(c, {})


def head_normal(c: Contract) -> Contract:
    """Unfold top-level binders until a choice or end surfaces."""
    for _ in range(_MAX_UNFOLD):
        if not isinstance(c, Rec):
            return c
        c = unfold(c)
    raise ContractError("recursion does not reach a prefix; contract is unguarded")


# --------------------------------------------------------------------------
# Ready sets
# --------------------------------------------------------------------------

ReadySet = frozenset[tuple[str, str]]


def contract_ready_sets(c: Contract) -> frozenset[ReadySet]:
    """The family of interaction sets the contract offers next.

    An internal choice yields one singleton set per branch (the branches are
    mutually exclusive); an external choice yields a single set holding every
    (peer, sort) pair (all must be handled); a finished contract yields the
    empty family, so it demands nothing.
    """
    bad = free_participant_vars(c)
    if bad:
        raise ContractError(f"unstipulated contract: free participant variables {sorted(bad)}")
    node = c
    for _ in range(_MAX_UNFOLD):
        if isinstance(node, Rec):
            node = node.body
            continue
        break
    if isinstance(node, SendChoice):
        return frozenset(frozenset([(to, sort)]) for to, sort, _ in node.branches)
    if isinstance(node, RecvChoice):
        return frozenset([frozenset((node.source, sort) for sort, _ in node.branches)])
    if isinstance(node, End):
        return frozenset()
    raise ContractError("ready sets of an open contract")


# --------------------------------------------------------------------------
# Systems of contracts
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MoveLabel:
    actor: str
    peer: str
    sort: str
    dir: str  # SEND or RECV


@dataclass(frozen=True)
class ContractSystem:
    """Stipulated contracts plus the full grid of FIFO queues.

    contracts is sorted by participant name; queues holds one entry
    (frm, to, messages) for every ordered pair of distinct participants.
    """

    contracts: tuple[tuple[str, Contract], ...]
    queues: tuple[tuple[str, str, tuple[str, ...]], ...]

    @property
    def participants(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.contracts)

    def contract(self, name: str) -> Contract:
        for n, c in self.contracts:
            if n == name:
                return c
        raise KeyError(name)

    def queue(self, frm: str, to: str) -> tuple[str, ...]:
        for f, t, msgs in self.queues:
            if f == frm and t == to:
                return msgs
        raise KeyError((frm, to))

    def with_contract(self, name: str, c: Contract) -> "ContractSystem":
        return ContractSystem(
            tuple((n, c if n == name else old) for n, old in self.contracts),
            self.queues,
        )

    def with_queue(self, frm: str, to: str, msgs: tuple[str, ...]) -> "ContractSystem":
        return ContractSystem(
            self.contracts,
            tuple(
                (f, t, msgs if (f, t) == (frm, to) else old) for f, t, old in self.queues
            ),
        )


def make_system(
    contracts: Mapping[str, Contract],
    queues: Optional[Mapping[tuple[str, str], Sequence[str]]] = None,
) -> ContractSystem:
    """Compose named contracts with the (default empty) queue grid."""
    for name, c in contracts.items():
        if not is_part_name(name):
            raise ContractError(f"{name!r} is not a participant name")
        if not is_closed(c):
            raise ContractError(f"contract of {name} has free recursion variables")
        if not is_guarded(c):
            raise ContractError(f"contract of {name} has unguarded recursion")
        bad = free_participant_vars(c)
        if bad:
            raise ContractError(
                f"contract of {name} still mentions participant variables {sorted(bad)}"
            )
    names = sorted(contracts)
    grid = {}
    for a in names:
        for b in names:
            if a != b:
                grid[(a, b)] = ()
    for (a, b), msgs in (queues or {}).items():
        if (a, b) not in grid:
            raise ContractError(f"queue {a}->{b} does not connect two distinct participants")
        grid[(a, b)] = tuple(msgs)
    return ContractSystem(
        tuple((n, contracts[n]) for n in names),
        tuple((a, b, grid[(a, b)]) for (a, b) in sorted(grid)),
    )


def enabled_moves(system: ContractSystem) -> tuple[MoveLabel, ...]:
    """Every label under which the system can step.

    Sends are always enabled (the queue accepts unboundedly) as long as the
    peer is part of the session; a receive is enabled only when the matching
    queue's head carries one of the expected sorts.
    """
    present = set(system.participants)
    moves: list[MoveLabel] = []
    for name, c in system.contracts:
        head = head_normal(c)
        if isinstance(head, SendChoice):
            for to, sort, _ in head.branches:
                if to in present:
                    moves.append(MoveLabel(name, to, sort, SEND))
        elif isinstance(head, RecvChoice):
            if head.source in present:
                q = system.queue(head.source, name)
                if q and any(q[0] == sort for sort, _ in head.branches):
                    moves.append(MoveLabel(name, head.source, q[0], RECV))
    return tuple(moves)


def contract_step(system: ContractSystem, label: MoveLabel) -> ContractSystem:
    """Apply one send or receive; raises ContractError on a move T forbids."""
    head = head_normal(system.contract(label.actor))
    if label.dir == SEND:
        if not isinstance(head, SendChoice):
            raise ContractError(f"illegal move: {label.actor} is not at an internal choice")
        for to, sort, cont in head.branches:
            if to == label.peer and sort == label.sort:
                if to not in set(system.participants):
                    raise ContractError(f"illegal move: {to} is not in the session")
                q = system.queue(label.actor, label.peer)
                return (
                    system.with_contract(label.actor, cont)
                    .with_queue(label.actor, label.peer, q + (label.sort,))
                )
        raise ContractError(f"illegal move: no branch {label.peer}!{label.sort}")
    if label.dir == RECV:
        if not isinstance(head, RecvChoice) or head.source != label.peer:
            raise ContractError(f"illegal move: {label.actor} does not expect {label.peer}")
        q = system.queue(label.peer, label.actor)
        if not q or q[0] != label.sort:
            raise ContractError(f"illegal move: queue {label.peer}->{label.actor} head mismatch")
        for sort, cont in head.branches:
            if sort == label.sort:
                return (
                    system.with_contract(label.actor, cont)
                    .with_queue(label.peer, label.actor, q[1:])
                )
        raise ContractError(f"illegal move: sort {label.sort} not offered")
    raise ContractError(f"illegal move direction {label.dir!r}")


def is_terminated(system: ContractSystem) -> bool:
    """True iff every contract has finished and every queue is drained.

    An undelivered message keeps the system non-terminated even when all
    contracts are done (the orphan marks a broken exchange).
    """
    for _, c in system.contracts:
        if not isinstance(head_normal(c), End):
            return False
    return all(not msgs for _, _, msgs in system.queues)


def orphan_messages(system: ContractSystem) -> tuple[tuple[str, str, str], ...]:
    """Messages sitting in queues of an otherwise finished system."""
    if any(not isinstance(head_normal(c), End) for _, c in system.contracts):
        return ()
    return tuple(
        (frm, to, msgs[0]) for frm, to, msgs in system.queues if msgs
    )
