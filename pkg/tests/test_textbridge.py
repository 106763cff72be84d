import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsbridge import textbridge as tb


# -- content hash ----------------------------------------------------------

def test_fnv1a_reference_vectors():
    # published FNV-1a 64-bit test vectors
    assert tb.fnv1a_64("") == "cbf29ce484222325"
    assert tb.fnv1a_64("a") == "af63dc4c8601ec8c"
    assert tb.fnv1a_64("foobar") == "85944171f73967e8"


def test_identical_texts_share_keys():
    a = tb.Description.from_text("same text")
    b = tb.Description.from_text("same text")
    assert a.key == b.key
    assert tb.Description.from_text("other text").key != a.key


# -- compute_lags ----------------------------------------------------------

def brute_force_circular_acf(x: np.ndarray, lag: int) -> float:
    c = x - x.mean()
    return float(np.sum(c * np.roll(c, -lag)))


def test_sine_period_24_gives_lag_24():
    t = np.arange(480)
    lags, degenerate = tb.compute_lags(np.sin(2 * np.pi * t / 24), k=1)
    assert not degenerate
    assert lags == [24]


def test_lags_match_brute_force_oracle():
    rng = np.random.default_rng(42)
    x = np.sin(2 * np.pi * np.arange(240) / 30) + 0.3 * rng.normal(size=240)
    lags, _ = tb.compute_lags(x, k=3)
    acf = [brute_force_circular_acf(x, l) for l in range(1, 121)]
    expected = sorted(range(1, 121), key=lambda l: (-acf[l - 1], l))[:3]
    assert lags == expected


def test_constant_series_degenerate_fallback():
    lags, degenerate = tb.compute_lags(np.full(64, 3.5), k=5)
    assert degenerate
    assert lags == [1, 2, 3, 4, 5]


def test_white_noise_gives_distinct_lags_in_range():
    x = np.random.default_rng(0).normal(size=480)
    lags, degenerate = tb.compute_lags(x, k=5)
    assert not degenerate
    assert len(set(lags)) == 5
    assert all(1 <= l <= 240 for l in lags)


def test_tie_break_prefers_smaller_lag():
    # period-3 pattern in L=12: lags 3 and 6 tie at the peak, 1/2/4 tie below
    x = np.array([1.0, 0.0, -1.0] * 4)
    lags, _ = tb.compute_lags(x, k=5)
    assert lags == [3, 6, 1, 2, 4]


@settings(max_examples=25, deadline=None)
@given(
    shift=st.floats(min_value=-100, max_value=100, allow_nan=False),
    scale=st.floats(min_value=0.01, max_value=50, allow_nan=False),
)
def test_lags_invariant_to_shift_and_positive_scale(shift, scale):
    t = np.arange(120)
    x = np.sin(2 * np.pi * t / 12) + 0.5 * np.cos(2 * np.pi * t / 40)
    base, _ = tb.compute_lags(x, k=4)
    transformed, _ = tb.compute_lags(scale * x + shift, k=4)
    assert base == transformed


def test_too_short_series_raises():
    with pytest.raises(ValueError, match="too short"):
        tb.compute_lags(np.arange(9.0), k=5)


# -- render_description ------------------------------------------------------

def test_stats_clause_values():
    cfg = tb.TemplateConfig(task_description="T", include_lags=False)
    desc = tb.render_description(np.array([1.0, 2.0, 3.0]), cfg)
    assert "min value 1.0000, max value 3.0000, median value 2.0000" in desc.text


def test_all_flags_false_leaves_task_sentence():
    cfg = tb.TemplateConfig(
        task_description="Electric load trace",
        include_content=False,
        include_stats=False,
    )
    desc = tb.render_description(np.array([1.0, 2.0]), cfg)
    assert desc.text == "Electric load trace."


def test_identical_windows_identical_keys():
    cfg = tb.TemplateConfig(task_description="T")
    w = np.linspace(0, 1, 16)
    assert tb.render_description(w, cfg).key == tb.render_description(w, cfg).key


def test_golden_bytes_without_lags():
    cfg = tb.TemplateConfig(task_description="Synthetic benchmark series", include_lags=False)
    desc = tb.render_description(np.array([0.5, -1.25, 3.0]), cfg)
    assert desc.text == (
        "Synthetic benchmark series. The content is: 0.5000, -1.2500, 3.0000. "
        "Input statistics: min value -1.2500, max value 3.0000, median value 0.5000."
    )


def test_golden_bytes_full_template():
    # lags hand-derived: period-3 pattern ranks [3, 6, 1, 2, 4]
    cfg = tb.TemplateConfig(task_description="Sensor channel")
    desc = tb.render_description(np.array([1.0, 0.0, -1.0] * 4), cfg)
    assert desc.text == (
        "Sensor channel. The content is: 1.0000, 0.0000, -1.0000, 1.0000, 0.0000, "
        "-1.0000, 1.0000, 0.0000, -1.0000, 1.0000, 0.0000, -1.0000. "
        "Input statistics: min value -1.0000, max value 1.0000, median value 0.0000, "
        "top 5 lags [3, 6, 1, 2, 4]."
    )
    assert desc.key == tb.fnv1a_64(desc.text)


def test_precision_and_min_max_median_flag():
    cfg = tb.TemplateConfig(
        task_description="T", precision=2, include_min_max_median=False, lag_count=2
    )
    desc = tb.render_description(np.array([1.0, 0.0, -1.0] * 4), cfg)
    assert desc.text.startswith("T. The content is: 1.00, 0.00, -1.00")
    assert "min value" not in desc.text
    assert "top 2 lags [3, 6]." in desc.text


def test_non_finite_window_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        tb.render_description(np.array([1.0, np.nan]), tb.TemplateConfig())


# -- fallback embedder --------------------------------------------------------

def test_fallback_embed_deterministic():
    d = tb.Description.from_text("hello world")
    v1 = tb.fallback_embed(d, dim=64, seed=9)
    v2 = tb.fallback_embed(d, dim=64, seed=9)
    assert np.array_equal(v1, v2)
    assert not np.array_equal(v1, tb.fallback_embed(d, dim=64, seed=10))


def test_fallback_embed_unit_norm():
    d = tb.Description.from_text("norm check")
    v = tb.fallback_embed(d, dim=4096, seed=0)
    assert abs(np.linalg.norm(v) - 1.0) < 1e-12


def test_fallback_embed_near_orthogonal_pairs():
    # 100 random text pairs at dim 4096: |cosine| stays small
    dims = 4096
    worst = 0.0
    for i in range(100):
        a = tb.fallback_embed(tb.Description.from_text(f"text A {i}"), dims, seed=1)
        b = tb.fallback_embed(tb.Description.from_text(f"text B {i}"), dims, seed=1)
        worst = max(worst, abs(float(a @ b)))
    assert worst < 0.2


# -- embedding file ------------------------------------------------------------

def make_table(n: int, dim: int, seed: int = 0) -> tb.EmbeddingTable:
    table = tb.EmbeddingTable(dim=dim)
    rng = np.random.default_rng(seed)
    for i in range(n):
        table.add(tb.fnv1a_64(f"entry {i}"), rng.normal(size=dim))
    return table


def test_round_trip_identity(tmp_path):
    table = make_table(5, 32)
    path = tmp_path / "emb.ltse"
    tb.write_embedding_file(table, path)
    loaded = tb.load_embedding_file(path)
    assert loaded.dim == table.dim
    assert set(loaded.entries) == set(table.entries)
    for key in table.entries:
        assert np.array_equal(loaded.entries[key], table.entries[key])


def test_file_size_formula(tmp_path):
    table = make_table(10, 4096)
    path = tmp_path / "emb.ltse"
    tb.write_embedding_file(table, path)
    assert path.stat().st_size == 16 + 10 * (8 + 4096 * 4)


def test_empty_file_bad_magic(tmp_path):
    path = tmp_path / "empty.ltse"
    path.write_bytes(b"")
    with pytest.raises(tb.EmbeddingFileError, match="magic"):
        tb.load_embedding_file(path)


def test_version_mismatch(tmp_path):
    table = make_table(1, 4)
    path = tmp_path / "emb.ltse"
    tb.write_embedding_file(table, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 9
    path.write_bytes(bytes(raw))
    with pytest.raises(tb.EmbeddingFileError, match="unsupported version"):
        tb.load_embedding_file(path)


def test_truncated_record(tmp_path):
    table = make_table(2, 8)
    path = tmp_path / "emb.ltse"
    tb.write_embedding_file(table, path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(tb.EmbeddingFileError, match="truncated or oversized"):
        tb.load_embedding_file(path)


def test_duplicate_key_rejected(tmp_path):
    import struct

    path = tmp_path / "twice.ltse"
    record = struct.pack("<Q", 0xABCD) + np.ones(4, dtype="<f4").tobytes()
    header = tb.EMBED_MAGIC + struct.pack("<HHII", tb.EMBED_VERSION, 0, 4, 2)
    path.write_bytes(header + record + record)
    with pytest.raises(tb.EmbeddingFileError, match="duplicate key"):
        tb.load_embedding_file(path)


def test_empty_table_write_rejected(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        tb.write_embedding_file(tb.EmbeddingTable(dim=4), tmp_path / "x.ltse")


def test_missing_key_lookup_is_error():
    table = make_table(1, 4)
    with pytest.raises(tb.MissingKeyError):
        table.lookup("0000000000000000")


# -- descriptions JSONL ----------------------------------------------------------

def test_descriptions_jsonl_round_trip(tmp_path):
    descs = [tb.Description.from_text(f"window {i}") for i in range(4)]
    path = tmp_path / "descs.jsonl"
    tb.write_descriptions_jsonl(descs, path)
    assert tb.read_descriptions_jsonl(path) == descs
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 4


def test_descriptions_jsonl_key_mismatch_detected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"key": "0000000000000000", "text": "mismatched"}\n')
    with pytest.raises(ValueError, match="hash"):
        tb.read_descriptions_jsonl(path)
