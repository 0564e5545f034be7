"""Tests for the ad expression language and matchmaking."""

import random

import pytest
from hypothesis import given, settings, strategies as st

from minigrid import classad
from minigrid.classad import (
    UNDEFINED,
    And,
    Cmp,
    ExprSyntaxError,
    Lit,
    Not,
    Or,
    Ref,
    eval_expr,
    job_ad,
    machine_ad,
    matches,
    matchmake,
    parse_expr,
)


def fig3_machine(name="slot1@grid-b", state="Unclaimed"):
    return machine_ad(name, state=state, memory=1001, opsys="LINUX", arch="INTEL")


class TestEval:
    def test_constant_true(self):
        assert eval_expr("TRUE", job_ad(), fig3_machine()) is True

    def test_memory_threshold_against_pool_slot(self):
        # Slot memory value as advertised by the 1001 MiB pool machines.
        assert eval_expr("TARGET.Memory >= 512", job_ad(), fig3_machine()) is True

    def test_unknown_attribute_is_undefined(self):
        assert eval_expr("TARGET.Missing == 1", job_ad(), fig3_machine()) is UNDEFINED

    def test_type_mismatch_yields_undefined(self):
        assert eval_expr('TARGET.Name < 5', job_ad(), fig3_machine()) is UNDEFINED
        assert eval_expr('"text" < 3', None, None) is UNDEFINED

    def test_numeric_cross_type_comparison(self):
        assert eval_expr("1 == 1.0", None, None) is True
        assert eval_expr("2 > 1.5", None, None) is True

    def test_string_comparison_case_insensitive(self):
        assert eval_expr('TARGET.Arch == "intel"', job_ad(), fig3_machine()) is True

    def test_undefined_propagates_through_comparison(self):
        assert eval_expr("TARGET.Missing >= 512", job_ad(), fig3_machine()) is UNDEFINED

    def test_or_with_true_absorbs_undefined(self):
        assert eval_expr("TARGET.Missing == 1 || TRUE", job_ad(), fig3_machine()) is True

    def test_and_with_false_absorbs_undefined(self):
        assert eval_expr("TARGET.Missing == 1 && FALSE", job_ad(), fig3_machine()) is False

    def test_and_with_true_keeps_undefined(self):
        assert eval_expr("TRUE && TARGET.Missing == 1", job_ad(), fig3_machine()) is UNDEFINED

    def test_not_undefined_is_undefined(self):
        assert eval_expr("!TARGET.Missing", job_ad(), fig3_machine()) is UNDEFINED

    def test_bare_name_resolves_in_my_scope(self):
        job = job_ad(owner="gtuser")
        assert eval_expr('Owner == "gtuser"', job, fig3_machine()) is True

    def test_parentheses_and_precedence(self):
        assert eval_expr("TRUE || FALSE && FALSE", None, None) is True
        assert eval_expr("(TRUE || FALSE) && FALSE", None, None) is False

    def test_parse_rejects_garbage(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("TARGET.Memory >=")
        with pytest.raises(ExprSyntaxError):
            parse_expr('"unterminated')
        with pytest.raises(ExprSyntaxError):
            parse_expr("FOO.Bar == 1")

    def test_self_referential_attribute_stays_total(self):
        job = job_ad(requirements="MY.Requirements")
        assert eval_expr("MY.Requirements", job, fig3_machine()) is UNDEFINED


class TestClassAd:
    def test_attribute_names_case_insensitive_and_unique(self):
        ad = fig3_machine()
        assert ad.get("MEMORY") == 1001
        with pytest.raises(ValueError):
            classad.ClassAd("machine", {"Name": "x", "name": "y", "State": "Unclaimed",
                                        "Activity": "Idle", "LoadAvg": 0.0, "Memory": 1})

    def test_required_attributes_enforced(self):
        with pytest.raises(ValueError):
            classad.ClassAd("machine", {"Name": "x"})
        with pytest.raises(ValueError):
            classad.ClassAd("job", {"Owner": "u"})


class TestMatches:
    def test_trivial_requirements_match_any_machine(self):
        assert matches(job_ad(requirements=True), fig3_machine()) is True

    def test_memory_requirement_exceeding_pool_fails(self):
        job = job_ad(requirements="TARGET.Memory >= 2000")
        assert matches(job, fig3_machine()) is False

    def test_arch_requirement_against_pool_row(self):
        job = job_ad(requirements='TARGET.Arch == "INTEL"')
        assert matches(job, fig3_machine()) is True

    def test_machine_side_requirements_checked_against_job(self):
        machine = machine_ad("slot1@a", requirements='TARGET.Owner == "alice"')
        assert matches(job_ad(owner="alice"), machine) is True
        assert matches(job_ad(owner="bob"), machine) is False

    def test_undefined_requirement_is_non_match(self):
        job = job_ad(requirements="TARGET.Missing == 1")
        assert matches(job, fig3_machine()) is False

    def test_symmetric_structure(self):
        # Whichever side supplies Requirements = TRUE, the other side's test
        # alone decides the outcome.
        picky_job = job_ad(requirements="TARGET.Memory >= 2000")
        picky_machine = machine_ad("slot1@a", requirements="TARGET.Memory >= 2000",
                                   memory=1001)
        lax_job = job_ad(requirements=True, memory=1001)
        lax_machine = fig3_machine()
        assert matches(picky_job, lax_machine) is False
        assert matches(lax_job, picky_machine) is False


class TestMatchmake:
    def test_claimed_slots_excluded(self):
        machines = [fig3_machine("slot1@a"), fig3_machine("slot2@a", state="Claimed")]
        assert matchmake(job_ad(), machines) == ["slot1@a"]

    def test_name_ascending_tie_break(self):
        machines = [fig3_machine("slot2@a"), fig3_machine("slot1@a")]
        assert matchmake(job_ad(), machines) == ["slot1@a", "slot2@a"]

    def test_rank_descending_overrides_name(self):
        machines = [fig3_machine("slot1@a"), machine_ad("slot2@a", memory=4000)]
        job = job_ad(rank="TARGET.Memory")
        assert matchmake(job, machines) == ["slot2@a", "slot1@a"]

    def test_no_match_is_empty_list(self):
        job = job_ad(requirements="TARGET.Memory >= 9999")
        assert matchmake(job, [fig3_machine()]) == []


# ------------------------------------------------------------------ oracle

def brute_force_matchmake(job, machines):
    """Reference: filter every machine explicitly, then sort."""
    entries = []
    for machine in machines:
        state = machine.get("State")
        if not (isinstance(state, str) and state.lower() == "unclaimed"):
            continue
        job_req = eval_expr(job.get("Requirements"), job, machine) \
            if classad._is_expr(job.get("Requirements")) else job.get("Requirements")
        if job_req is not True:
            continue
        if "Requirements" in machine:
            m_req = machine.get("Requirements")
            if classad._is_expr(m_req):
                m_req = eval_expr(m_req, machine, job)
            if m_req is not True:
                continue
        rank = job.get("Rank")
        if classad._is_expr(rank):
            rank = eval_expr(rank, job, machine)
        if not isinstance(rank, (int, float)) or isinstance(rank, bool):
            rank = 0.0
        entries.append((-float(rank), machine.get("Name")))
    out = []
    for _, name in sorted(set(entries)):
        if name not in out:
            out.append(name)
    return out


def random_instance(rng):
    arches = ["INTEL", "X86_64"]
    machines = []
    for i in range(rng.randint(0, 6)):
        machines.append(machine_ad(
            f"slot{rng.randint(1, 4)}@site{rng.randint(1, 2)}",
            state=rng.choice(["Unclaimed", "Unclaimed", "Claimed", "Owner"]),
            memory=rng.choice([256, 1001, 2048, 4096]),
            arch=rng.choice(arches),
        ))
    req = rng.choice([
        "TRUE",
        f"TARGET.Memory >= {rng.choice([100, 1001, 2000, 5000])}",
        f'TARGET.Arch == "{rng.choice(arches)}"',
        f'TARGET.Memory >= {rng.choice([512, 3000])} && TARGET.Arch == "{rng.choice(arches)}"',
    ])
    kwargs = {}
    if rng.random() < 0.5:
        kwargs["rank"] = "TARGET.Memory"
    return job_ad(requirements=req, **kwargs), machines


def test_matchmake_agrees_with_brute_force_oracle():
    rng = random.Random(421)
    for _ in range(300):
        job, machines = random_instance(rng)
        assert matchmake(job, machines) == brute_force_matchmake(job, machines)


def test_matchmake_stable_under_permutation_and_subset():
    rng = random.Random(77)
    for _ in range(100):
        job, machines = random_instance(rng)
        baseline = matchmake(job, machines)
        names = {m.get("Name") for m in machines}
        assert set(baseline) <= names
        assert len(baseline) == len(set(baseline))
        shuffled = machines[:]
        rng.shuffle(shuffled)
        assert matchmake(job, shuffled) == baseline


# ------------------------------------------------------------------- fuzz

_names = st.sampled_from(["Memory", "Arch", "State", "LoadAvg", "Missing", "Name"])
_scopes = st.sampled_from([None, "my", "target"])
_lits = st.one_of(
    st.integers(-5, 5000),
    st.floats(allow_nan=False, allow_infinity=False, min_value=-1e6, max_value=1e6),
    st.booleans(),
    st.sampled_from(["INTEL", "LINUX", "Unclaimed", ""]),
)
_base = st.one_of(st.builds(Lit, _lits), st.builds(Ref, _scopes, _names))
_exprs = st.recursive(
    _base,
    lambda kids: st.one_of(
        st.builds(Not, kids),
        st.builds(And, kids, kids),
        st.builds(Or, kids, kids),
        st.builds(Cmp, st.sampled_from(["==", "!=", "<", "<=", ">", ">="]), kids, kids),
    ),
    max_leaves=64,
)


@settings(max_examples=300, deadline=None)
@given(_exprs)
def test_eval_is_total_on_random_trees(expr):
    result = eval_expr(expr, job_ad(owner="gtuser"), fig3_machine())
    assert result is UNDEFINED or isinstance(result, (bool, int, float, str))
