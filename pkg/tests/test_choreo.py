import random

import pytest

from co2run.choreo import (
    GEND,
    GMsg,
    GPar,
    GRec,
    GRecVar,
    ProjectionError,
    canonicalize,
    gchoice,
    gpar,
    has_end,
    has_recursion,
    participants,
    project,
    well_formed,
)
from co2run.contracts import END, rename_rec_vars
from co2run.frontend import parse_contract, parse_global

from corpus import random_global

G_STORE3_TEXT = (
    "B1 -> A : req ; B2 -> A : req ; A -> B1 : quote ; "
    "(B1 -> B2 : ok ; B1 -> A : order ; A -> B2 : ok "
    "\\/ B1 -> B2 : bye ; B1 -> A : bye ; A -> B2 : bye)"
)
G_STORE2_TEXT = (
    "B12 -> A : req ; B12 -> A : req ; A -> B12 : quote ; "
    "B12 -> A : order ; A -> B12 : ok"
)


def test_participants_store_choreographies():
    assert participants(parse_global(G_STORE3_TEXT)) == frozenset(["A", "B1", "B2"])
    assert participants(parse_global(G_STORE2_TEXT)) == frozenset(["A", "B12"])
    assert participants(GEND) == frozenset()


def test_has_recursion():
    assert has_recursion(parse_global("rec x . A -> B : ping ; x"))
    assert not has_recursion(parse_global(G_STORE3_TEXT))
    assert not has_recursion(GEND)
    # a binder without occurrences is not recursive behaviour
    assert not has_recursion(GRec("x", GMsg("A", "B", "p", GEND)))


def test_has_end():
    assert has_end(parse_global(G_STORE2_TEXT))
    assert not has_end(parse_global("rec x . A -> B : ping ; B -> A : pong ; x"))
    assert has_end(GEND)


def test_projection_store_pair():
    g = parse_global(G_STORE2_TEXT)
    assert project(g, "B12") == parse_contract("A!req . A!req . A?quote . A!order . A?ok")
    assert project(g, "A") == parse_contract(
        "B12?req . B12?req . B12!quote . B12?order . B12!ok"
    )


def test_projection_store_trio():
    g = parse_global(G_STORE3_TEXT)
    assert project(g, "B2") == parse_contract("A!req . (B1?ok . A?ok + B1?bye . A?bye)")
    assert project(g, "B1") == parse_contract(
        "A!req . A?quote . (B2!ok . A!order (+) B2!bye . A!bye)"
    )
    assert project(g, "A") == parse_contract(
        "B1?req . B2?req . B1!quote . (B1?order . B2!ok + B1?bye . B2!bye)"
    )


def test_projection_skips_uninvolved():
    assert project(GMsg("A", "B", "int", GEND), "C") == END


def test_projection_of_unreceived_choice_fails():
    # the decider's branches must be told apart by everyone else
    g = gchoice([
        GMsg("A", "B", "p", GMsg("C", "B", "u", GEND)),
        GMsg("A", "B", "q", GMsg("C", "B", "v", GEND)),
    ])
    with pytest.raises(ProjectionError):
        project(g, "C")


def test_well_formed_accepts_store():
    ok, diags = well_formed(parse_global(G_STORE3_TEXT))
    assert ok and not diags


def test_well_formed_rejects_two_deciders():
    g = gchoice([GMsg("A", "B", "x", GEND), GMsg("C", "B", "y", GEND)])
    ok, diags = well_formed(g)
    assert not ok
    assert any("decider" in d or "decid" in d for d in diags)


def test_well_formed_rejects_overlapping_parallel():
    g = GPar((GMsg("A", "B", "x", GEND), GMsg("A", "C", "y", GEND)))
    ok, diags = well_formed(g)
    assert not ok
    assert any("share" in d for d in diags)


def test_parallel_participants_disjoint_union():
    g = gpar([GMsg("A", "B", "x", GEND), GMsg("C", "D", "y", GEND)])
    assert participants(g) == frozenset(["A", "B", "C", "D"])
    ok, _ = well_formed(g)
    assert ok
    assert project(g, "C") == parse_contract("D!y")
    assert project(g, "E") == END


def test_canonicalize_sorts_choice_branches():
    g1 = gchoice([GMsg("A", "B", "q", GEND), GMsg("A", "B", "p", GEND)])
    g2 = gchoice([GMsg("A", "B", "p", GEND), GMsg("A", "B", "q", GEND)])
    assert canonicalize(g1) == canonicalize(g2)


def test_canonicalize_renames_binders():
    g = parse_global("rec y . A -> B : p ; y")
    assert canonicalize(g) == GRec("x0", GMsg("A", "B", "p", GRecVar("x0")))


def test_canonicalize_idempotent_and_preserving():
    rng = random.Random(3)
    for _ in range(80):
        g = random_global(rng)
        c = canonicalize(g)
        assert canonicalize(c) == c
        assert participants(c) == participants(g)
        assert has_recursion(c) == has_recursion(g)
        assert has_end(c) == has_end(g)
        for who in sorted(participants(g)):
            assert rename_rec_vars(project(c, who)) == rename_rec_vars(project(g, who))


def test_projection_total_on_well_formed():
    rng = random.Random(5)
    for _ in range(60):
        g = random_global(rng)
        ok, _ = well_formed(g)
        assert ok
        for who in sorted(participants(g)):
            project(g, who)  # must not raise
