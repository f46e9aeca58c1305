import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_site
from fedlogit.cohort import (
    Cohort,
    CsvSchema,
    GenerationError,
    IntegrityError,
    ParseError,
    SchemaError,
    SmallCohortWarning,
    SyntheticCohortSpec,
    emit_csv,
    generate_synthetic,
    ingest_csv,
    merge_small_sites,
    standard_spec,
)
from fedlogit.evaluation import roc_auc
from fedlogit.model import SolverConfig, predict_scores
from fedlogit.normalize import apply_zscore
from fedlogit.trainers import train_centralized


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_ingest_four_rows_two_sites(tmp_path):
    p = write(tmp_path / "c.csv", "id,site,label,f1,f2\na,s1,0,1.0,2\nb,s1,1,3,4\nc,s2,0,5,6\nd,s2,1,7,8.5\n")
    c = ingest_csv(p)
    assert (c.K, c.n, c.d) == (2, 4, 2)
    assert c.site("s1").ids == ("a", "b")
    np.testing.assert_array_equal(c.site("s2").X, [[5, 6], [7, 8.5]])


def test_ingest_bad_label_names_row(tmp_path):
    rows = ["id,site,label,f1"] + [f"p{i},s,0,{i}" for i in range(5)] + ["p5,s,2,1.0"]
    p = write(tmp_path / "c.csv", "\n".join(rows) + "\n")
    with pytest.raises(ParseError) as err:
        ingest_csv(p)
    assert err.value.row == 7
    assert "row 7" in str(err.value)


def test_ingest_errors(tmp_path):
    with pytest.raises(SchemaError):
        ingest_csv(write(tmp_path / "a.csv", "id,label,f1\na,0,1\n"))
    with pytest.raises(ParseError, match="non-numeric"):
        ingest_csv(write(tmp_path / "b.csv", "id,site,label,f1\na,s,0,abc\n"))
    with pytest.raises(ParseError):
        ingest_csv(write(tmp_path / "c.csv", "id,site,label,f1\na,s,0,\n"))
    with pytest.raises(IntegrityError):
        ingest_csv(write(tmp_path / "d.csv", "id,site,label,f1\na,s,0,1\na,t,1,2\n"))


def test_ingest_with_explicit_schema(tmp_path):
    p = write(tmp_path / "c.csv", "RID,SITE,DX,age,mmse,extra\n1,7,1,70,25,x\n2,7,0,65,29,y\n")
    c = ingest_csv(p, CsvSchema(id="RID", site="SITE", label="DX", features=("age", "mmse")))
    assert c.d == 2 and c.site_ids == ["7"]


def test_624_row_shape(tmp_path):
    # 28 sites, 256 positives and 368 negatives
    rng = np.random.default_rng(3)
    labels = np.array([1] * 256 + [0] * 368)
    rng.shuffle(labels)
    site_of = np.arange(624) % 28
    lines = ["id,site,label,f1,f2"] + [
        f"r{i},site{site_of[i]:02d},{labels[i]},{rng.normal()!r},{rng.normal()!r}" for i in range(624)
    ]
    c = ingest_csv(write(tmp_path / "c.csv", "\n".join(lines) + "\n"))
    assert (c.n, c.K, c.positives) == (624, 28, 256)


def test_csv_round_trip(tmp_path):
    c = generate_synthetic(SyntheticCohortSpec(seed=5, K=5, d=3))
    emit_csv(c, tmp_path / "c.csv")
    assert ingest_csv(tmp_path / "c.csv") == c


def sized_cohort(sizes, ids=None):
    sites = []
    for k, n in enumerate(sizes):
        sid = ids[k] if ids else f"s{k}"
        y = np.arange(n) % 2
        sites.append(make_site(sid, np.arange(2 * n, dtype=float).reshape(n, 2), y))
    return Cohort(tuple(sites), 2)


def test_merge_example():
    merged = merge_small_sites(sized_cohort([12, 4, 3, 9], ["a", "b", "c", "d"]), 10)
    assert sorted(s.n for s in merged.sites) == [12, 16]
    assert "b+c+d" in merged.site_ids


def test_merge_noop_and_residual():
    c = sized_cohort([10, 11, 30])
    assert merge_small_sites(c, 10) == c
    merged = merge_small_sites(sized_cohort([20, 6, 5, 3]), 10)
    # 6+5 closes one pool; 3 is the residual pool
    assert sorted(s.n for s in merged.sites) == [3, 11, 20]


def test_merge_tiny_cohort_warns():
    with pytest.warns(SmallCohortWarning):
        merged = merge_small_sites(sized_cohort([2, 3]), 10)
    assert merged.K == 1 and merged.n == 5


def test_merge_order_independent_of_input_order():
    a = sized_cohort([4, 12, 3, 9], ["b", "a", "c", "d"])
    b = sized_cohort([9, 3, 12, 4], ["d", "c", "a", "b"])
    assert [s.site_id for s in merge_small_sites(a, 10).sites] == [s.site_id for s in merge_small_sites(b, 10).sites]


@given(st.lists(st.integers(1, 25), min_size=1, max_size=12), st.integers(1, 20))
def test_merge_conserves_counts(sizes, min_size):
    c = sized_cohort(sizes)
    if c.n < min_size:
        return
    merged = merge_small_sites(c, min_size)
    assert merged.n == c.n
    assert merged.positives == c.positives
    small = [s for s in merged.sites if s.n < min_size]
    assert len(small) <= 1


def test_generate_deterministic():
    spec = SyntheticCohortSpec(seed=11, K=6)
    assert generate_synthetic(spec) == generate_synthetic(spec)
    assert generate_synthetic(spec) != generate_synthetic(SyntheticCohortSpec(seed=12, K=6))


def test_generate_rejects_degenerate_specs():
    with pytest.raises(GenerationError):
        generate_synthetic(SyntheticCohortSpec(pos_rate_min=0.0, pos_rate_max=0.0))
    with pytest.raises(GenerationError):
        SyntheticCohortSpec(pos_rate_min=0.5, pos_rate_max=1.2)
    with pytest.raises(GenerationError):
        SyntheticCohortSpec(K=0)


def test_zero_separation_has_no_signal():
    spec = SyntheticCohortSpec(seed=1, K=4, separation=0.0)
    train = generate_synthetic(spec)
    # held-out cohort from the same law; site offsets are redrawn so they carry no label information
    test = generate_synthetic(SyntheticCohortSpec(seed=2, K=4, separation=0.0)).pooled()
    run = train_centralized(train, SolverConfig(global_iterations=500))
    auc = roc_auc(predict_scores(run.weights["global"], apply_zscore(test, run.stats["global"])), test.y)
    P, N = test.positives, test.n - test.positives
    null_sd = np.sqrt((P + N + 1) / (12 * P * N))
    assert auc < 0.5 + 3 * null_sd


def test_standard_cohort_shape(standard_cohort):
    sizes = np.array([s.n for s in standard_cohort.sites])
    assert standard_cohort.K == 28
    assert sizes.min() >= 10 and sizes.max() <= 60
    # long right tail: most sites are small
    assert np.median(sizes) < sizes.mean()
    for s in standard_cohort.sites:
        assert 0.1 - 0.5 / s.n <= s.positives / s.n <= 0.7 + 0.5 / s.n
    assert 0 < standard_cohort.positives < standard_cohort.n


def test_fixed_sites_are_planted():
    c = generate_synthetic(standard_spec(seed=0, fixed_sites=((30, 1),)))
    assert (c.sites[0].n, c.sites[0].positives) == (30, 1)


def test_summary_json(standard_cohort):
    import json

    rows = json.loads(standard_cohort.summary_json())
    assert {"site_id", "n_k", "positives"} == set(rows[0])
    assert sum(r["n_k"] for r in rows) == standard_cohort.n
