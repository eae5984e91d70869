import pytest

from co2run.choreo import canonicalize, participants, well_formed
from co2run.contracts import free_participant_vars, is_terminated
from co2run.frontend import parse_contract, parse_global, parse_system
from co2run.fixtures import fixture_text
from co2run.runtime import (
    FusePolicy,
    LatentContract,
    proc_items,
    NIL,
    Par,
    RuntimeError_,
    Sum,
    apply_step,
    collect_identifiers,
    enabled_steps,
    find_agreement,
    make_co2,
    normalize,
    normalize_proc,
    policy_check,
    reduce_fuse,
    run,
    system_digest,
)

from test_choreo import G_STORE2_TEXT, G_STORE3_TEXT


def _load(name):
    return parse_system(fixture_text(name))


def _drive(state, plan):
    """Apply (kind, actor) steps in order; returns (state, labels)."""
    labels = []
    for kind, actor in plan:
        step = next(
            s for s in enabled_steps(state) if s.kind == kind and s.actor == actor
        )
        state, label = apply_step(state, step)
        labels.append(label)
    return state, labels


S1_PLAN = [("tell", "A"), ("tell", "B1"), ("tell", "B2"), ("fuse", "A")]


# -- normalization -----------------------------------------------------------

def test_normalize_proc_drops_nil_and_flattens():
    p = Par((Par((NIL, NIL)), NIL))
    assert normalize_proc(p) == NIL
    q = parse_system("participant A { tau . 0 | 0 }").process("A")
    assert isinstance(q, Sum)  # the nil side vanished


def test_normalize_idempotent_on_fixtures():
    for name in ("store_s1.co2", "robust_pair.co2", "pingpong.co2", "store_s1pp.co2"):
        s = _load(name)
        assert normalize(s) == s


def test_reductions_preserve_normal_form():
    # every reachable state along random walks is its own normal form, so
    # visited sets never split over representation noise; in particular
    # advertised handles keep linking pools to their process occurrences
    import random

    from co2run.fixtures import FIXTURES

    rng = random.Random(5)
    for name in FIXTURES:
        system = _load(name)
        for _ in range(4):
            state = system
            for _ in range(rng.randrange(2, 14)):
                steps = enabled_steps(state)
                if not steps:
                    break
                state, _ = apply_step(state, steps[rng.randrange(len(steps))])
                assert normalize(state) == state, name


def test_normalize_preserves_enabled_steps():
    for name in ("store_s1.co2", "robust_pair.co2", "subset_fuse.co2"):
        s = _load(name)
        before = sorted((st.actor, st.kind) for st in enabled_steps(s))
        after = sorted((st.actor, st.kind) for st in enabled_steps(normalize(s)))
        assert before == after


def test_shadowed_delimitation_renamed_apart():
    src = """
    participant A {
      tell A @x { B!int } . (x) do x B!int
    }
    participant B { 0 }
    """
    s = parse_system(src)
    # the delimited x is distinct from the advertised handle
    tells = [st for st in enabled_steps(s) if st.kind == "tell"]
    assert tells
    ids = collect_identifiers(s)
    assert "x" in ids and "x_1" in ids


# -- tell ----------------------------------------------------------------------

def test_tell_appends_latent_to_target_pool():
    s = _load("store_s1.co2")
    s2, labels = _drive(s, [("tell", "B1")])
    (host, pool), = s2.pools
    assert host == "A"
    assert pool[0].promiser == "B1"
    assert labels[0].kind == "tell" and labels[0].target == "A"


def test_tell_to_self():
    s = _load("store_s1.co2")
    s2, _ = _drive(s, [("tell", "A")])
    assert s2.pool("A")[0].promiser == "A"


def test_choosing_a_branch_discards_siblings():
    src = """
    participant A { tau . 0 + tell B @x { B!int } . do x B!int }
    participant B { 0 }
    """
    s = parse_system(src)
    tau_step = next(st for st in enabled_steps(s) if st.kind == "tau")
    s2, _ = apply_step(s, tau_step)
    assert s2.process("A") == NIL
    assert not s2.pools


# -- agreement and fuse ---------------------------------------------------------

def test_find_agreement_reproduces_store_substitution():
    s = _load("store_s1.co2")
    s2, _ = _drive(s, [("tell", "A"), ("tell", "B1"), ("tell", "B2")])
    agreement = find_agreement(s2.pool("A"))
    assert agreement is not None
    assert tuple(k.promiser for k in agreement.latents) == ("A", "B1", "B2")
    assert dict(agreement.pi) == {
        "a": "A", "a'": "A", "b1": "B1", "b1'": "B1", "b2": "B2", "b2'": "B2"
    }
    assert canonicalize(agreement.global_type) == canonicalize(parse_global(G_STORE3_TEXT))


def test_find_agreement_empty_pool():
    assert find_agreement(()) is None


def test_initial_store_offers_exactly_three_tells():
    s = _load("store_s1.co2")
    assert sorted((st.actor, st.kind) for st in enabled_steps(s)) == [
        ("A", "tell"), ("B1", "tell"), ("B2", "tell"),
    ]


def test_contract_mixing_names_and_variables():
    # the seller commits to one specific buyer but any shipper
    pool = (
        LatentContract(
            "A", "x",
            parse_contract("B!price . B?ack . a!request . a?tracking . B!tracking"),
        ),
        LatentContract("B", "y", parse_contract("A?price . A!ack . A?tracking")),
        LatentContract("S", "z", parse_contract("c?request . c!tracking")),
    )
    agreement = find_agreement(pool)
    assert agreement is not None
    assert tuple(k.promiser for k in agreement.latents) == ("A", "B", "S")
    assert dict(agreement.pi) == {"a": "S", "c": "A"}
    # without the named buyer on board there is no agreement at all
    assert find_agreement((pool[0], pool[2])) is None


def test_shared_variable_across_advertised_contracts():
    # fusing the first contract pins down b, which the second contract reuses
    src = """
    participant A {
      tell A @x { b!request } . fuse .
      tell A @y { b!invoice } . fuse . (do x b!request | do y b!invoice)
    }
    participant B {
      tell A @z { a?request } .
      tell A @w { a2?invoice } .
      (do z a?request | do w a2?invoice)
    }
    """
    s = parse_system(src)
    plan = [("tell", "A"), ("tell", "B"), ("fuse", "A")]
    state, labels = _drive(s, plan)
    assert dict(labels[-1].fuse.pi)["b"] == "B"
    # the not-yet-advertised second contract now names B explicitly
    items = [
        it for it in proc_items(state.process("A")) if isinstance(it, Sum)
    ]
    tell_prefixes = [
        pre for it in items for pre, _ in it.branches if pre.__class__.__name__ == "PTell"
    ]
    assert len(tell_prefixes) == 1
    assert free_participant_vars(tell_prefixes[0].contract) == frozenset()
    assert "B" in str(tell_prefixes[0].contract)
    # and the whole thing still runs to completion
    t = run(s, seed=0, max_steps=200)
    assert len(t.terminal.sessions) == 2
    assert all(is_terminated(x) for _, x in t.terminal.sessions)


def test_find_agreement_picks_compliant_subset():
    pool = (
        LatentContract("A1", "x", parse_contract("a!int")),
        LatentContract("A2", "y", parse_contract("a'?int")),
        LatentContract("A3", "z", parse_contract("b?bool")),
    )
    agreement = find_agreement(pool)
    assert agreement is not None
    assert tuple(k.promiser for k in agreement.latents) == ("A1", "A2")
    assert canonicalize(agreement.global_type) == canonicalize(parse_global("A1 -> A2 : int"))


def test_fuse_installs_session_and_substitutes():
    s = _load("store_s1.co2")
    s2, labels = _drive(s, S1_PLAN)
    (sname, t), = s2.sessions
    assert sname == "s1"
    assert set(t.participants) == {"A", "B1", "B2"}
    assert all(not msgs for _, _, msgs in t.queues)
    report = labels[-1].fuse
    assert report.participants == ("A", "B1", "B2")
    assert set(dict(report.sigma)) == {"x", "y", "z"}
    assert set(dict(report.sigma).values()) == {"s1"}
    # no fused variable survives anywhere in the system
    leftover = collect_identifiers(s2) & (set(dict(report.sigma)) | set(dict(report.pi)))
    assert not leftover
    assert not s2.pools
    # reduction results stay in normal form
    assert normalize(s2) == s2


def test_fuse_blocked_without_agreement():
    s = _load("store_s1.co2")
    s2, _ = _drive(s, [("tell", "A")])
    assert not any(st.kind == "fuse" for st in enabled_steps(s2))
    with pytest.raises(RuntimeError_):
        reduce_fuse(s2, "A", 0, 0)


def test_honest_store_completes():
    # repair the buyer so it notifies before ordering: the whole session
    # then runs to completion under any seed
    src = fixture_text("store_s1.co2").replace(
        "tau . do y a!req . do y a?quote . do y a!order",
        "tau . do y a!req . do y a?quote . do y b2'!ok . do y a!order",
    )
    honest = parse_system(src)
    for seed in range(8):
        t = run(honest, seed=seed, max_steps=500)
        (sname, sess), = t.terminal.sessions
        assert is_terminated(sess), seed


def test_fuse_reports_are_legal_agreements():
    for name, plan in (
        ("store_s1.co2", S1_PLAN),
        ("store_s2.co2", [("tell", "A"), ("tell", "B12"), ("fuse", "A")]),
    ):
        s = _load(name)
        s2, labels = _drive(s, plan)
        report = labels[-1].fuse
        pi = dict(report.pi)
        sigma = dict(report.sigma)
        assert len(set(sigma.values())) == 1
        ok, diags = well_formed(report.global_type)
        assert ok, diags
        assert set(participants(report.global_type)) <= set(report.participants)


def test_policy_check_gates():
    g2 = parse_global(G_STORE2_TEXT)
    g3 = parse_global(G_STORE3_TEXT)
    loop = parse_global("rec x . A -> B : ping ; B -> A : pong ; x")
    assert not policy_check(g2, FusePolicy(min_participants=3))
    assert policy_check(g3, FusePolicy(min_participants=3))
    assert policy_check(g3, FusePolicy(mode="terminating"))
    assert not policy_check(loop, FusePolicy(mode="terminating"))
    assert policy_check(loop, FusePolicy(mode="recursive"))
    assert not policy_check(g3, FusePolicy(mode="recursive"))


def test_s12_policy_and_order_select_the_session():
    s = _load("store_s12.co2")
    plan = [("tell", "A"), ("tell", "B1"), ("tell", "B2"), ("tell", "B12")]
    s2, _ = _drive(s, plan)
    pool = s2.pool("A")
    # largest-first: the three-party agreement wins
    big = find_agreement(pool)
    assert set(k.promiser for k in big.latents) == {"A", "B1", "B2"}
    # smallest-first: the two-party agreement wins
    small = find_agreement(pool, FusePolicy(prefer_smallest=True))
    assert set(k.promiser for k in small.latents) == {"A", "B12"}
    assert canonicalize(small.global_type) == canonicalize(parse_global(G_STORE2_TEXT))
    # a three-participant floor can only ever build the big session
    floored = find_agreement(pool, FusePolicy(min_participants=3))
    assert set(k.promiser for k in floored.latents) == {"A", "B1", "B2"}


# -- do ---------------------------------------------------------------------------

def test_do_respects_the_contract():
    s = _load("do_int_bool.co2")
    steps = enabled_steps(s)
    assert [(st.actor, st.kind) for st in steps] == [("A", "do")]
    s2, label = apply_step(s, steps[0])
    assert label.sort == "int" and label.dir == "send"
    assert s2.session("s").queue("A", "B") == ("int",)
    steps2 = enabled_steps(s2)
    assert [(st.actor, st.kind) for st in steps2] == [("B", "do")]
    s3, _ = apply_step(s2, steps2[0])
    assert is_terminated(s3.session("s"))
    assert not enabled_steps(s3)


def test_do_on_unknown_session_not_enabled():
    src = """
    participant A { do x B!int }
    participant B { 0 }
    """
    s = parse_system(src)
    assert not enabled_steps(s)


# -- tau and call -----------------------------------------------------------------

def test_tau_consumes_prefix():
    s = _load("store_s1.co2")
    s2, _ = _drive(s, [("tell", "B1")])
    s3, label = _drive(s2, [("tau", "B1")])
    assert label[0].kind == "tau"


def test_call_unfolds_one_level():
    src = """
    participant A { Loop() }
    def Loop() = tau . Loop()
    """
    s = parse_system(src)
    s2, label = _drive(s, [("call", "A")])
    assert label[0].kind == "call" and label[0].callee == "Loop"
    assert any(st.kind == "tau" for st in enabled_steps(s2))
    s3, _ = _drive(s2, [("tau", "A")])
    assert [st.kind for st in enabled_steps(s3)] == ["call"]


def test_pingpong_runs_forever_but_deterministically():
    from co2run.choreo import has_end

    s = _load("pingpong.co2")
    t = run(s, seed=5, max_steps=50)
    assert len(t.steps) == 50
    fuses = [l for l in t.steps if l.kind == "fuse"]
    assert len(fuses) == 1
    assert not has_end(fuses[0].fuse.global_type)
    # the session satisfies the policy it was created under
    assert policy_check(fuses[0].fuse.global_type, FusePolicy(mode="recursive"))


# -- scheduler ---------------------------------------------------------------------

def test_run_deterministic():
    s = _load("store_s12.co2")
    t1 = run(s, seed=9, max_steps=300)
    t2 = run(s, seed=9, max_steps=300)
    assert t1.steps == t2.steps
    assert t1.digests == t2.digests
    assert system_digest(t1.terminal) == system_digest(t2.terminal)


def test_run_zero_steps():
    t = run(_load("store_s1.co2"), seed=0, max_steps=0)
    assert t.steps == ()


def test_stuck_system_yields_no_steps():
    s = _load("stuck_pair.co2")
    t = run(s, seed=0, max_steps=100)
    assert not enabled_steps(t.terminal)
    assert run(t.terminal, seed=1, max_steps=50).steps == ()


def test_fairness_serves_persistent_step():
    src = """
    participant A { do s B!int }
    participant B { do s A?int }
    participant C { Spin() }
    session s {
      A: B!int
      B: A?int
    }
    def Spin() = tau . Spin()
    """
    s = parse_system(src)
    t = run(s, seed=13, max_steps=400, fairness_window=8)
    assert any(l.kind == "do" and l.actor == "A" for l in t.steps)
    assert any(l.kind == "do" and l.actor == "B" for l in t.steps)
    assert is_terminated(t.terminal.session("s"))


def test_make_co2_rejects_lowercase_participant():
    with pytest.raises(RuntimeError_):
        make_co2({"a": NIL})
