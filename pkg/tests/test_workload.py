import pytest

from gbsample.alloc import plan_l2
from gbsample.errors import EmptyProblem
from gbsample.query import Atom, Predicate
from gbsample.stats import compute_catalog
from gbsample.workload import (
    QuerySpec,
    derive_aggregation_groups,
    weights_from_frequencies,
    workload_from_json,
    workload_to_json,
)


def demo_workload():
    """Three queries: majors want age+gpa (20x), colleges want age+sat
    (10x), and majors within the Science college want gpa (15x)."""
    science = Predicate((Atom("college", "=", "Science"),))
    return [
        QuerySpec(("major",), ("age", "gpa"), None, 20),
        QuerySpec(("college",), ("age", "sat"), None, 10),
        QuerySpec(("major",), ("gpa",), science, 15),
    ]


def _freq_by_label(table):
    out = {}
    for entity, freq in table.frequencies.items():
        out[(entity.column, entity.group.values)] = freq
    return out


def test_shared_entities_accumulate(student_rel):
    table = derive_aggregation_groups(student_rel, demo_workload())
    freqs = _freq_by_label(table)
    # the Science college contains exactly the CS and Math majors, so the
    # predicate does not change those groups' membership and the gpa
    # entities merge across the two major queries: 20 + 15
    assert freqs[("gpa", ("CS",))] == 35
    assert freqs[("gpa", ("Math",))] == 35
    # entities only the first query induces
    for major in ("CS", "Math", "EE", "ME"):
        assert freqs[("age", (major,))] == 20
    assert freqs[("gpa", ("EE",))] == 20
    assert freqs[("gpa", ("ME",))] == 20
    # college-level entities come from the second query alone
    for college in ("Science", "Engineering"):
        assert freqs[("age", (college,))] == 10
        assert freqs[("sat", (college,))] == 10


def test_frequency_conservation(student_rel):
    table = derive_aggregation_groups(student_rel, demo_workload())
    # sum over queries of repeats * occurring groups * columns:
    # 20*4*2 + 10*2*2 + 15*2*1
    assert table.total() == 160 + 40 + 30


def test_single_query_uniform_frequency(student_rel):
    table = derive_aggregation_groups(
        student_rel, [QuerySpec(("major",), ("age",), None, 7)]
    )
    assert set(table.frequencies.values()) == {7}
    assert len(table) == 4


def test_predicate_restricts_membership(student_rel):
    engineering = Predicate((Atom("college", "=", "Engineering"),))
    unrestricted = derive_aggregation_groups(
        student_rel, [QuerySpec(("college",), ("age",), None, 1)]
    )
    restricted = derive_aggregation_groups(
        student_rel, [QuerySpec(("college",), ("age",), engineering, 1)]
    )
    # groups emptied by the predicate are not materialized
    assert len(restricted) == 1
    (entity,) = restricted.frequencies
    full = {
        e.group.values: e for e in unrestricted.frequencies
    }
    assert entity.member_rows == full[("Engineering",)].member_rows
    assert entity.member_rows < set(range(8)) | {0}  # strict subset of all rows


def test_partial_predicate_splits_entity(student_rel):
    # a predicate that drops one row of a group produces a distinct entity
    young = Predicate((Atom("age", "<", 25.0),))
    table = derive_aggregation_groups(
        student_rel,
        [
            QuerySpec(("major",), ("gpa",), None, 3),
            QuerySpec(("major",), ("gpa",), young, 5),
        ],
    )
    freqs = _freq_by_label(table)
    # CS rows are ages 25 and 22: the restricted entity keeps one row, so
    # the two queries do not share it
    cs_entities = [
        (e, f) for e, f in table.frequencies.items() if e.group.values == ("CS",)
    ]
    assert sorted(f for _, f in cs_entities) == [3, 5]


def test_empty_workload_raises(student_rel):
    with pytest.raises(EmptyProblem):
        derive_aggregation_groups(student_rel, [])


def test_weights_identity_and_sqrt(student_rel):
    table = derive_aggregation_groups(student_rel, demo_workload())
    w_id = weights_from_frequencies(table)
    # query 0 (majors) sees the merged frequency for gpa of CS
    assert w_id.weight(0, _key("major", "CS"), "gpa") == 35.0
    # query 2 (the predicated one) sees the same shared weight
    assert w_id.weight(2, _key("major", "CS"), "gpa") == 35.0
    assert w_id.weight(0, _key("major", "EE"), "age") == 20.0
    assert w_id.weight(1, _key("college", "Science"), "sat") == 10.0
    w_sqrt = weights_from_frequencies(table, "sqrt")
    assert w_sqrt.weight(0, _key("major", "CS"), "gpa") == pytest.approx(35.0**0.5)
    with pytest.raises(ValueError):
        weights_from_frequencies(table, "log")


def _key(attr, value):
    from gbsample.dataset import GroupKey

    return GroupKey((attr,), (value,))


def test_uniform_frequencies_match_unweighted_plan(student_rel):
    table = derive_aggregation_groups(
        student_rel, [QuerySpec(("major",), ("age",), None, 9)]
    )
    weights = weights_from_frequencies(table)
    catalog = compute_catalog(student_rel, ["major"], ["age"])
    weighted = plan_l2(catalog, ["age"], 6, weights=weights)
    plain = plan_l2(catalog, ["age"], 6)
    assert weighted.fractional == pytest.approx(plain.fractional, rel=1e-12)


def test_workload_json_round_trip():
    workload = demo_workload()
    back = workload_from_json(workload_to_json(workload))
    assert back == workload


def test_allocation_inputs_count_shared_entities_once(student_rel):
    from gbsample.alloc import (
        GroupQuery,
        WeightSpec,
        build_finest,
        plan_multi_groupby,
    )
    from gbsample.workload import allocation_inputs

    science = Predicate((Atom("college", "=", "Science"),))
    workload = [
        QuerySpec(("major",), ("gpa",), None, 20),
        QuerySpec(("major",), ("gpa",), science, 15),
    ]
    table = derive_aggregation_groups(student_rel, workload)
    queries, weights = allocation_inputs(table)
    # both workload queries collapse into one synthetic query
    assert queries == [GroupQuery(("major",), ("gpa",))]
    assert weights.weight(0, _key("major", "CS"), "gpa") == 35.0
    assert weights.weight(0, _key("major", "EE"), "gpa") == 20.0
    # never-queried combinations carry zero demand
    assert weights.weight(0, _key("major", "CS"), "age") == 0.0

    fs = build_finest(student_rel, queries)
    got = plan_multi_groupby(fs, 6, weights)
    manual = WeightSpec(
        {
            (0, ("CS",), "gpa"): 35.0,
            (0, ("Math",), "gpa"): 35.0,
            (0, ("EE",), "gpa"): 20.0,
            (0, ("ME",), "gpa"): 20.0,
        }
    )
    expect = plan_multi_groupby(build_finest(student_rel, queries), 6, manual)
    assert got.fractional == pytest.approx(expect.fractional, rel=1e-12)


def test_allocation_inputs_sqrt_transform(student_rel):
    from gbsample.alloc import GroupQuery
    from gbsample.workload import allocation_inputs

    table = derive_aggregation_groups(student_rel, demo_workload())
    queries, weights = allocation_inputs(table, "sqrt")
    qpos = queries.index(GroupQuery(("major",), ("gpa",)))
    assert weights.weight(qpos, _key("major", "CS"), "gpa") == pytest.approx(35.0**0.5)
    assert weights.weight(qpos, _key("major", "EE"), "gpa") == pytest.approx(20.0**0.5)
