import itertools
import sqlite3

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from icuwarn.cohort import instant_times, label_admissions
from icuwarn.features.build import build_matrix, default_spec
from icuwarn.featspec import (QueryError, RelTable, SpecError, bundled_spec, catalog_of,
                              execute_query, generate_sql, parse_spec, print_spec)
from icuwarn.featspec.ast import Column, Renamed, Wildcard


def cells_equal(a: np.ndarray, b: np.ndarray) -> bool:
    """Missing-aware equality: None/NaN match each other and nothing else."""
    if a.dtype == object or b.dtype == object:
        return [None if x is None or x != x else x for x in a] == \
               [None if x is None or x != x else x for x in b]
    return np.array_equal(a.astype(float), b.astype(float), equal_nan=True)


def mismatches(matrix, result) -> list[str]:
    if list(result.columns) != matrix.columns:
        return ["<column order>"]
    return [c for c in matrix.columns if not cells_equal(matrix.column(c), result.columns[c])]


TABLES = {
    "pm": RelTable("pm", ("admission_id", "ts"), {
        "admission_id": np.array(["a", "a", "b"], dtype=object),
        "ts": np.array([0, 7200, 3600], dtype=np.int64)}),
    "adm": RelTable("adm", ("admission_id",), {
        "admission_id": np.array(["a", "b", "c"], dtype=object),
        "admit_ts": np.array([0, 0, 10], dtype=np.int64),
        "prev_admission_id": np.array([None, "c", None], dtype=object),
        "disp": np.array([1, 2, 3], dtype=np.int64)}),
    "vit": RelTable("vit", ("admission_id", "ts"), {
        "admission_id": np.array(["a", "b"], dtype=object),
        "ts": np.array([0, 3600], dtype=np.int64),
        "hr": np.array([80.0, np.nan]), "rr": np.array([12.0, 14.0])}),
}

SMALL = """
base pm alias t1 key (admission_id, ts) { admission_id, ts }
table adm alias t3 join (t1.admission_id = admission_id) { admit_ts }
table adm alias t4 join (t3.prev_admission_id = admission_id) { disp as prev_disp }
expr days = round(hours_between(t1.ts, t3.admit_ts)/24, 1)
table vit alias t6 join (t1.admission_id = admission_id, t1.ts = ts) { * suffix _min }
"""


def test_parse_block_shape():
    ast = parse_spec("base patient_master alias t1 key (admission_id, ts) { ts }\n"
                     "table adm alias t3 join (t1.admission_id = admission_id) "
                     "{ admit_ts, target_ts }")
    assert len(ast.blocks) == 1
    assert ast.blocks[0].selectors == (Column("admit_ts"), Column("target_ts"))
    assert ast.blocks[0].join_map == (("t1", "admission_id", "admission_id"),)


def test_self_join_allowed():
    ast = parse_spec(SMALL)
    assert [b.table for b in ast.blocks] == ["adm", "adm", "vit"]
    assert ast.blocks[1].selectors == (Renamed("disp", "prev_disp"),)
    assert ast.blocks[2].selectors == (Wildcard("*", "_min"),)


def test_undeclared_alias_reported_with_line():
    text = "base pm alias t1 key (ts) { ts }\ntable adm alias t2 join (t9.x = y) { a }\n"
    with pytest.raises(SpecError) as e:
        parse_spec(text)
    d = e.value.diagnostics[0]
    assert "t9" in d.message and d.line == 2


@pytest.mark.parametrize("text,fragment", [
    ("base pm alias t1 key (ts) { ts }\ntable a alias t1 join (t1.x = x) { y }", "duplicate alias"),
    ("base pm alias t1 key (ts) { ts, ts }", "duplicate output name"),
    ("base pm alias t1 key (ts) { ts }\nexpr e = t5.x", "unknown alias t5"),
    ("base pm alias t1 key (ts) { ts } ;", "unexpected character"),
    ("table x alias t1 join (t0.a = b) { c }", "line 1"),
    ("base pm alias t1 key (ts) { ts }\nexpr e = round(t1.ts)", "line 2"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(SpecError, match=fragment):
        parse_spec(text)


def test_bundled_listing_roundtrip():
    ast = parse_spec(bundled_spec("listing1"))
    assert len(ast.blocks) == 6
    assert parse_spec(print_spec(ast)) == ast


# random specs for the printer round trip
names = st.sampled_from(["a", "b", "c", "ts", "x1", "val"])


@st.composite
def exprs(draw, depth=0):
    leaf = st.one_of(st.sampled_from(["1", "2.5", "24", "0.1"]).map(lambda t: ("num", t)),
                     st.tuples(st.just("ref"), st.sampled_from(["t1", "t2"]), names))
    if depth >= 3:
        return draw(leaf)
    return draw(st.one_of(
        leaf,
        st.tuples(st.sampled_from("+-*/"), exprs(depth + 1), exprs(depth + 1)),
        st.tuples(st.just("neg"), exprs(depth + 1)),
        st.tuples(st.just("round"), exprs(depth + 1), st.integers(0, 3)),
        st.tuples(st.just("hb"), exprs(depth + 1), exprs(depth + 1))))


def render(e):
    k = e[0]
    if k == "num":
        return e[1]
    if k == "ref":
        return f"{e[1]}.{e[2]}"
    if k == "neg":
        return f"-({render(e[1])})"
    if k == "round":
        return f"round({render(e[1])}, {e[2]})"
    if k == "hb":
        return f"hours_between({render(e[1])}, {render(e[2])})"
    return f"({render(e[1])}) {k} ({render(e[2])})"


@settings(max_examples=150, deadline=None)
@given(st.lists(exprs(), min_size=1, max_size=3), st.booleans())
def test_print_parse_roundtrip(es, wildcard):
    sel = "* suffix _w" if wildcard else "a as a2, b"
    text = ("base pm alias t1 key (ts) { ts }\n"
            f"table tab alias t2 join (t1.ts = ts) {{ {sel} }}\n"
            + "".join(f"expr e{i} = {render(e)}\n" for i, e in enumerate(es)))
    ast = parse_spec(text)
    printed = print_spec(ast)
    assert parse_spec(printed) == ast
    assert print_spec(parse_spec(printed)) == printed


def test_sql_skeleton_for_listing():
    ast = parse_spec(bundled_spec("listing1"))
    cat = {"patient_master": ["admission_id", "ts", "facility_cd", "patient_id"],
           "target_adm": ["admission_id", "rand"],
           "adm": ["admission_id", "admit_ts", "target_ts", "is_direct_icu_admission",
                   "prev_admission_id", "discharge_disposition"],
           "patient_demographics_features": ["admission_id", "ts", "gender", "admission_age"],
           "vital_signs_min1day": ["admission_id", "ts", "bmi", "rr"],
           "vital_signs_max1day": ["admission_id", "ts", "bmi", "rr"]}
    sql = generate_sql(ast, cat)
    lines = sql.splitlines()
    assert lines[0].startswith("SELECT t1.facility_cd, t1.patient_id, t1.admission_id, t1.ts")
    joins = [ln.strip() for ln in lines if "JOIN" in ln]
    assert joins == [
        "LEFT OUTER JOIN target_adm t2 ON t1.admission_id = t2.admission_id",
        "LEFT OUTER JOIN adm t3 ON t1.admission_id = t3.admission_id",
        "LEFT OUTER JOIN adm t4 ON t3.prev_admission_id = t4.admission_id",
        "LEFT OUTER JOIN patient_demographics_features t5 ON t1.admission_id = t5.admission_id "
        "AND t1.ts = t5.ts",
        "LEFT OUTER JOIN vital_signs_min1day t6 ON t1.admission_id = t6.admission_id "
        "AND t1.ts = t6.ts",
        "LEFT OUTER JOIN vital_signs_max1day t7 ON t1.admission_id = t7.admission_id "
        "AND t1.ts = t7.ts",
    ]
    assert "t6.bmi AS bmi_min_1day, t6.rr AS rr_min_1day" in sql
    assert "t4.discharge_disposition AS prev_discharge_disposition" in sql
    assert ("round(cast(extract(epoch FROM t1.ts - t3.admit_ts)/3600.0/24 AS numeric), 1) "
            "AS days_since_adm") in sql
    assert "FROM patient_master t1" in sql


def test_left_join_semantics():
    res = execute_query(parse_spec(SMALL), TABLES)
    assert len(res) == 3
    assert list(res.columns) == ["admission_id", "ts", "admit_ts", "prev_disp", "days",
                                 "hr_min", "rr_min"]
    np.testing.assert_array_equal(res.columns["hr_min"], [80.0, np.nan, np.nan])
    np.testing.assert_array_equal(res.columns["rr_min"], [12.0, np.nan, 14.0])
    np.testing.assert_array_equal(res.columns["prev_disp"], [np.nan, np.nan, 3.0])
    np.testing.assert_array_equal(res.columns["days"], [0.0, 0.1, 0.0])


def test_hours_between_identity():
    ast = parse_spec("base pm alias t1 key (admission_id, ts) { ts }\n"
                     "expr z = hours_between(t1.ts, t1.ts) / 24")
    assert execute_query(ast, TABLES).columns["z"].tolist() == [0.0, 0.0, 0.0]


def test_query_errors():
    with pytest.raises(QueryError, match="no column nope"):
        execute_query(parse_spec("base pm alias t1 key (ts) { nope }"), TABLES)
    with pytest.raises(QueryError, match="no table"):
        execute_query(parse_spec("base zz alias t1 key (ts) { ts }"), TABLES)
    with pytest.raises(QueryError, match="matches no column"):
        execute_query(parse_spec("base pm alias t1 key (ts) { ts }\n"
                                 "table vit alias t2 join (t1.ts = ts) { q* }"), TABLES)
    dup = RelTable("d", (), {"k": np.array([1, 1], dtype=np.int64)}, check_key=False)
    with pytest.raises(QueryError, match="unique"):
        execute_query(parse_spec("base pm alias t1 key (ts) { ts }\n"
                                 "table d alias t2 join (t1.ts = k) { }"), {**TABLES, "d": dup})


def test_independent_block_permutation():
    blocks = ["table adm alias t3 join (t1.admission_id = admission_id) { admit_ts }",
              "table vit alias t6 join (t1.admission_id = admission_id, t1.ts = ts) { hr, rr }",
              "table adm alias t8 join (t1.admission_id = admission_id) { disp }"]
    head = "base pm alias t1 key (admission_id, ts) { admission_id, ts }\n"
    ref = execute_query(parse_spec(head + "\n".join(blocks)), TABLES)
    for perm in itertools.permutations(blocks):
        res = execute_query(parse_spec(head + "\n".join(perm)), TABLES)
        assert set(res.columns) == set(ref.columns)
        for c in ref.columns:
            assert cells_equal(ref.columns[c], res.columns[c])


@st.composite
def random_tables(draw):
    n_base = draw(st.integers(0, 12))
    ids = draw(st.lists(st.sampled_from("abcdefgh"), min_size=n_base, max_size=n_base))
    base_ts = draw(st.lists(st.integers(0, 3), min_size=n_base, max_size=n_base))
    base = {(i, t) for i, t in zip(ids, base_ts)}
    base = sorted(base)
    right_keys = sorted(set(draw(st.lists(st.tuples(st.sampled_from("abcdefgh"),
                                                    st.integers(0, 3)), max_size=15))))
    vals = draw(st.lists(st.one_of(st.none(), st.floats(-100, 100, allow_nan=False)),
                         min_size=len(right_keys), max_size=len(right_keys)))
    adm_ids = sorted(set(draw(st.lists(st.sampled_from("abcdefgh"), max_size=8))))
    return (
        RelTable("pm", ("admission_id", "ts"), {
            "admission_id": np.array([b[0] for b in base], dtype=object),
            "ts": np.array([b[1] for b in base], dtype=np.int64)}),
        RelTable("vit", ("admission_id", "ts"), {
            "admission_id": np.array([k[0] for k in right_keys], dtype=object),
            "ts": np.array([k[1] for k in right_keys], dtype=np.int64),
            "hr": np.array([np.nan if v is None else v for v in vals], dtype=float)}),
        RelTable("adm", ("admission_id",), {
            "admission_id": np.array(adm_ids, dtype=object),
            "w": np.arange(len(adm_ids), dtype=np.int64)}),
    )


JOIN_SPEC = """
base pm alias t1 key (admission_id, ts) { admission_id, ts }
table vit alias t2 join (t1.admission_id = admission_id, t1.ts = ts) { * suffix _v }
table adm alias t3 join (t1.admission_id = admission_id) { w }
"""


@settings(max_examples=60, deadline=None)
@given(random_tables())
def test_execute_matches_sqlite(tables):
    """The generated SQL, run by sqlite, agrees with the in-process evaluator."""
    ast = parse_spec(JOIN_SPEC)
    res = execute_query(ast, tables)
    assert len(res) == len(tables[0])
    con = sqlite3.connect(":memory:")
    for t in tables:
        cols = t.column_names
        con.execute(f"CREATE TABLE {t.name} ({', '.join(cols)})")
        rows = [tuple(None if (isinstance(v, float) and v != v) else
                      (v.item() if hasattr(v, "item") else v) for v in r)
                for r in zip(*(t.columns[c] for c in cols))]
        con.executemany(f"INSERT INTO {t.name} VALUES ({', '.join('?' * len(cols))})", rows)
    sql = generate_sql(ast, catalog_of(tables))
    got = con.execute(sql).fetchall()
    # sqlite keeps base-table scan order for this join shape; compare as sorted rows
    mine = sorted(zip(*(res.columns[c].tolist() for c in res.columns)), key=repr)
    theirs = sorted(got, key=repr)
    norm = lambda rows: [tuple(None if (isinstance(v, float) and v != v) else v for v in r)
                         for r in rows]
    assert norm(mine) == norm(theirs)


@pytest.fixture(scope="module")
def built(small_ds):
    labels = [lb for lb in label_admissions(small_ds) if not lb.excluded][:80]
    inst = {lb.admission_id: instant_times(small_ds[lb.admission_id], lb) for lb in labels}
    return build_matrix(small_ds, labels, inst)


def test_default_spec_merge_equals_matrix(built):
    matrix, tables = built
    res = execute_query(parse_spec(default_spec(matrix.config)), tables)
    assert len(res) == len(matrix)
    assert mismatches(matrix, res) == []


def test_merge_survives_csv_roundtrip(tmp_path, built):
    matrix, tables = built
    back = {}
    for name, t in tables.items():
        t.write_csv(tmp_path / f"{name}.csv")
        back[name] = RelTable.read_csv(tmp_path / f"{name}.csv", t.key)
    res = execute_query(parse_spec(default_spec(matrix.config)), back)
    assert mismatches(matrix, res) == []


def test_mismatch_detector_is_sensitive(built):
    matrix, tables = built
    res = execute_query(parse_spec(default_spec(matrix.config)), tables)
    res.columns["hr_last"] = res.columns["hr_last"].copy()
    res.columns["hr_last"][0] = 1234.5
    assert mismatches(matrix, res) == ["hr_last"]
