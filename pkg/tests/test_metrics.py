import pytest

from rom.metrics import (
    DatasetMismatch,
    EvalRecord,
    ZeroLength,
    aggregate_overall,
    compare_table,
    load_reference_grid,
    re,
    render_table,
    round2,
    se,
    summarize,
    thinking_token_count,
)


def test_se_reference_points():
    assert round2(se(88.33, 4554)) == 1.94
    assert round2(se(100.00, 2043)) == 4.89
    assert se(0, 100) == 0


def test_re_reference_points():
    assert round2(re(88.33, 2954)) == 2.99
    assert round2(re(82.50, 539)) == 15.31
    assert re(0, 1) == 0


def test_zero_length_guard():
    with pytest.raises(ZeroLength):
        se(50.0, 0)
    with pytest.raises(ZeroLength):
        re(50.0, 0)


def test_overall_is_mean_of_dataset_values():
    ses = [3.12, 9.60, 24.44, 18.50, 16.10, 10.57, 4.24]
    summaries = [
        summarize(f"d{i}", [EvalRecord(f"d{i}", True, 50, 100)]) for i in range(len(ses))
    ]
    summaries = [
        type(s)(s.dataset, s.acc, s.mean_rl, s.mean_sl, s.re_val, val, s.n)
        for s, val in zip(summaries, ses)
    ]
    overall = aggregate_overall(summaries)
    assert round2(overall.se_val) == 12.37


def test_overall_never_ratio_of_overall_means():
    grid = load_reference_grid()
    rom_csc = next(m for m in grid["methods"] if m["name"] == "ROM_CSC")
    ratio = round2(se(rom_csc["overall"]["acc"], rom_csc["overall"]["sl"]))
    assert ratio == 8.07  # what the wrong aggregation would produce
    cells = rom_csc["cells"]
    mean_se = round2(sum(se(c["acc"], c["sl"]) for c in cells.values()) / len(cells))
    assert mean_se == 12.37


def test_single_dataset_identity():
    s = summarize("only", [EvalRecord("only", True, 10, 20), EvalRecord("only", False, 10, 20)])
    overall = aggregate_overall([s])
    assert overall.acc == s.acc and overall.se_val == s.se_val


def test_two_dataset_mean():
    a = summarize("a", [EvalRecord("a", True, 50, 100)])
    b = summarize("b", [EvalRecord("b", True, 100, 300)])
    overall = aggregate_overall([a, b])
    assert overall.se_val == pytest.approx((a.se_val + b.se_val) / 2)


def test_scale_invariance():
    records = [EvalRecord("d", True, 100, 200), EvalRecord("d", False, 50, 100)]
    scaled = [EvalRecord("d", r.correct, r.reasoning_len * 3, r.response_len * 3) for r in records]
    assert summarize("d", records).se_val == pytest.approx(3 * summarize("d", scaled).se_val)


def test_reference_grid_recomputes_everywhere():
    grid = load_reference_grid()
    for method in grid["methods"]:
        ses, res = [], []
        for cell in method["cells"].values():
            assert abs(round2(se(cell["acc"], cell["sl"])) - cell["se"]) <= 0.005
            assert abs(round2(re(cell["acc"], cell["rl"])) - cell["re"]) <= 0.005
            ses.append(se(cell["acc"], cell["sl"]))
            res.append(re(cell["acc"], cell["rl"]))
        assert abs(round2(sum(ses) / len(ses)) - method["overall"]["se"]) <= 0.005
        assert abs(round2(sum(res) / len(res)) - method["overall"]["re"]) <= 0.005


def test_compare_table_and_rendering():
    records = [
        EvalRecord("gsm", True, 80, 150),
        EvalRecord("gsm", True, 120, 250),
        EvalRecord("math", False, 300, 400),
        EvalRecord("math", True, 200, 300),
    ]
    table = compare_table([("run_a", records), ("run_b", records)])
    a, b = table["methods"]
    assert a["cells"] == b["cells"]
    assert a["cells"]["gsm"]["acc"] == 100.0
    assert a["cells"]["gsm"]["sl"] == 200.0
    text = render_table(table)
    assert "run_a" in text and "gsm:se" in text

    half_correct = [EvalRecord("d", True, 100, 200), EvalRecord("d", False, 100, 200)]
    t2 = compare_table([("x", half_correct)])
    assert round2(t2["methods"][0]["cells"]["d"]["se"]) == 25.00


def test_compare_table_dataset_mismatch():
    with pytest.raises(DatasetMismatch):
        compare_table(
            [
                ("a", [EvalRecord("d1", True, 1, 2)]),
                ("b", [EvalRecord("d2", True, 1, 2)]),
            ]
        )


def test_eval_record_invariants():
    with pytest.raises(ValueError):
        EvalRecord("d", True, 10, 5)
    with pytest.raises(ValueError):
        EvalRecord("d", True, -1, 5)


def test_round2_half_up():
    assert round2(2.675) == 2.68
    assert round2(1.005) == 1.01
    assert round2(12.3671) == 12.37


def test_thinking_token_count():
    pieces = ["<think>", "\n", "a", " b", "</think>", " after"]
    assert thinking_token_count(pieces) == 3
    assert thinking_token_count(["no", "block"]) == 0
    assert thinking_token_count(["<think>", "</think>"]) == 0
