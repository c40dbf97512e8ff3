"""Tests for ranking tables, impression logs and their file formats."""
import json

import pytest

from .exceptions import LogConsistencyError, LogFormatError
from .logdata import (
    ARM_KEPT,
    ARM_SWAPPED,
    Impression,
    ImpressionLog,
    RankingTable,
    SwapImpression,
    SwapLog,
    parse_impressions,
    parse_rankings,
    parse_swap_log,
    validate_independence_report,
    write_impressions,
    write_rankings,
    write_swap_log,
)


def _write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def _swap_table():
    return RankingTable({("q1", "f1"): ["a", "b"], ("q1", "f2"): ["b", "a"]})


def test_parse_rankings(tmp_path):
    path = _write_lines(
        tmp_path / "rankings.jsonl",
        [
            {"query": "q1", "ranker": "f1", "ranking": ["a", "b", "c"]},
            {"query": "q1", "ranker": "f2", "ranking": ["c", "a", "b"]},
        ],
    )
    table = parse_rankings(path)

    assert len(table) == 2
    assert table.rank("q1", "f2", "a") == 2
    assert table.rank("q1", "f1", "zzz") is None
    assert table.queries() == ["q1"]
    assert table.rankers() == ["f1", "f2"]


def test_parse_rankings_duplicate_document_reports_line(tmp_path):
    path = _write_lines(
        tmp_path / "rankings.jsonl",
        [
            {"query": "q1", "ranker": "f1", "ranking": ["a", "b"]},
            {"query": "q1", "ranker": "f2", "ranking": ["a", "b", "a"]},
        ],
    )
    with pytest.raises(LogFormatError) as exc_info:
        parse_rankings(path)

    assert exc_info.value.line_no == 2
    assert "duplicate document in ranking" in str(exc_info.value)


def test_parse_rankings_duplicate_key(tmp_path):
    record = {"query": "q1", "ranker": "f1", "ranking": ["a"]}
    path = _write_lines(tmp_path / "rankings.jsonl", [record, record])
    with pytest.raises(LogFormatError, match="duplicate \\(query, ranker\\) key"):
        parse_rankings(path)


def test_parse_rankings_malformed_json(tmp_path):
    path = tmp_path / "rankings.jsonl"
    path.write_text('{"query": "q1", "ranker": "f1", "ranking": ["a"]}\n{not json\n', encoding="utf-8")
    with pytest.raises(LogFormatError) as exc_info:
        parse_rankings(path)
    assert exc_info.value.line_no == 2
    assert str(exc_info.value).startswith(f"{path}:2: ")


def test_parse_rankings_missing_field(tmp_path):
    path = _write_lines(tmp_path / "rankings.jsonl", [{"query": "q1", "ranking": ["a"]}])
    with pytest.raises(LogFormatError, match="missing field\\(s\\) ranker"):
        parse_rankings(path)


def test_parse_impressions_counts_traffic(tmp_path):
    table = _swap_table()
    path = _write_lines(
        tmp_path / "impressions.jsonl",
        [
            {"query": "q1", "ranker": "f1", "clicks": [{"doc": "a", "pos": 1}]},
            {"query": "q1", "ranker": "f2", "clicks": []},
            {"query": "q1", "ranker": "f2", "clicks": [{"doc": "a", "pos": 2}]},
        ],
    )
    log = parse_impressions(path, table)

    assert len(log) == 3
    assert log.traffic == {"f1": 1, "f2": 2}
    assert log.total_clicks() == 2
    assert log.impressions[0].clicks == frozenset({("a", 1)})


def test_parse_impressions_click_ranking_mismatch(tmp_path):
    path = _write_lines(
        tmp_path / "impressions.jsonl",
        [{"query": "q1", "ranker": "f1", "clicks": [{"doc": "a", "pos": 2}]}],
    )
    with pytest.raises(LogConsistencyError, match="click/ranking mismatch"):
        parse_impressions(path, _swap_table())


def test_parse_impressions_unknown_ranker(tmp_path):
    path = _write_lines(tmp_path / "impressions.jsonl", [{"query": "q1", "ranker": "f9", "clicks": []}])
    with pytest.raises(LogConsistencyError, match="unknown \\(query, ranker\\)"):
        parse_impressions(path, _swap_table())


@pytest.mark.parametrize(
    "record",
    [
        {"query": ["q1"], "ranker": "f1", "clicks": []},
        {"query": "q1", "ranker": 2, "clicks": []},
    ],
)
def test_parse_impressions_rejects_non_string_ids(tmp_path, record):
    path = _write_lines(tmp_path / "impressions.jsonl", [{"query": "q1", "ranker": "f1", "clicks": []}, record])
    with pytest.raises(LogFormatError, match="query and ranker must be strings") as exc_info:
        parse_impressions(path, _swap_table())
    assert exc_info.value.line_no == 2


def test_parse_impressions_rejects_position_zero(tmp_path):
    path = _write_lines(
        tmp_path / "impressions.jsonl",
        [{"query": "q1", "ranker": "f1", "clicks": [{"doc": "a", "pos": 0}]}],
    )
    with pytest.raises(LogFormatError, match="position 0"):
        parse_impressions(path, _swap_table())


def test_written_files_parse_back(tmp_path):
    table = RankingTable({("q2", "f1"): ["x", "y"], ("q1", "f1"): ["a", "b", "c"]})
    log = ImpressionLog(
        [
            Impression("q1", "f1", frozenset({("c", 3), ("a", 1)})),
            Impression("q2", "f1"),
        ]
    )
    write_rankings(table, tmp_path / "rankings.jsonl")
    write_impressions(log, tmp_path / "impressions.jsonl")

    lines = (tmp_path / "rankings.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(lines[0])["query"] == "q1"
    first_clicks = json.loads((tmp_path / "impressions.jsonl").read_text(encoding="utf-8").splitlines()[0])["clicks"]
    assert [c["pos"] for c in first_clicks] == [1, 3]

    reread = parse_rankings(tmp_path / "rankings.jsonl")
    assert reread.fingerprint() == table.fingerprint()
    assert parse_impressions(tmp_path / "impressions.jsonl", reread).impressions == log.impressions


def test_ranking_table_rejects_duplicate_document():
    with pytest.raises(LogConsistencyError):
        RankingTable({("q", "f"): ["a", "a"]})


def test_candidates_and_consistency():
    table = RankingTable(
        {
            ("q1", "f1"): ["a", "b", "c"],
            ("q1", "f2"): ["b", "a", "c"],
            ("q2", "f1"): ["x", "y"],
            ("q2", "f2"): ["z", "x"],
        }
    )
    assert table.candidates("q1", 2) == ["a", "b"]
    assert table.candidates("q2", 1) == ["x", "z"]
    assert table.check_candidate_consistency(2) == ["q2"]


def test_replicate_and_resample():
    log = ImpressionLog(
        [Impression("q1", "f1"), Impression("q1", "f2", frozenset({("b", 1)}))],
        rankers=["f1", "f2", "f3"],
    )
    doubled = log.replicate(2)
    assert len(doubled) == 4
    assert doubled.traffic == {"f1": 2, "f2": 2, "f3": 0}

    resampled = log.resample([1, 1, 1])
    assert resampled.traffic == {"f1": 0, "f2": 3, "f3": 0}
    assert resampled.total_clicks() == 3

    grouped = log.by_ranker()
    assert list(grouped) == ["f1", "f2", "f3"]
    assert grouped["f2"] == [Impression("q1", "f2", frozenset({("b", 1)}))]
    assert grouped["f3"] == []


def test_swap_log_file(tmp_path):
    swap_log = SwapLog(
        (
            SwapImpression("q1", "f1", (1, 3), ARM_KEPT, frozenset({("a", 1)})),
            SwapImpression("q1", "f1", (1, 3), ARM_SWAPPED),
        )
    )
    write_swap_log(swap_log, tmp_path / "swap.jsonl")
    reread = parse_swap_log(tmp_path / "swap.jsonl")

    assert reread.impressions == swap_log.impressions
    assert reread.pairs() == [(1, 3)]
    assert reread.arm_sizes() == {((1, 3), ARM_KEPT): 1, ((1, 3), ARM_SWAPPED): 1}


@pytest.mark.parametrize(
    "record, message",
    [
        ({"query": "q", "ranker": "f", "pair": [1, 3], "arm": "both", "clicks": []}, "arm must be one of"),
        ({"query": "q", "ranker": "f", "pair": [3, 1], "arm": "kept", "clicks": []}, "pair must be"),
        ({"query": "q", "ranker": "f", "pair": [1], "arm": "kept", "clicks": []}, "pair must be"),
        ({"query": ["q"], "ranker": "f", "pair": [1, 3], "arm": "kept", "clicks": []}, "must be strings"),
    ],
)
def test_parse_swap_log_rejects_bad_records(tmp_path, record, message):
    path = _write_lines(tmp_path / "swap.jsonl", [record])
    with pytest.raises(LogFormatError, match=message):
        parse_swap_log(path)


def test_independence_report_same_distribution():
    impressions = [Impression(q, r) for r in ("f1", "f2") for q in ("q1", "q2", "q3") for _ in range(50)]
    report = validate_independence_report(ImpressionLog(impressions))

    assert report.chi2 == pytest.approx(0.0)
    assert report.divergence == 0.0
    assert not report.disjoint
    assert not report.flagged
    assert report.histograms["f1"] == {"q1": 50, "q2": 50, "q3": 50}


def test_independence_report_disjoint_queries():
    impressions = [Impression("q1", "f1")] * 20 + [Impression("q2", "f2")] * 20
    report = validate_independence_report(ImpressionLog(impressions))

    assert report.disjoint
    assert report.flagged
    assert report.cramers_v == pytest.approx(1.0)
    assert any("maximal divergence" in w for w in report.warnings)


def test_independence_report_skewed_distribution_warns():
    impressions = (
        [Impression("q1", "f1")] * 90
        + [Impression("q2", "f1")] * 10
        + [Impression("q1", "f2")] * 10
        + [Impression("q2", "f2")] * 90
    )
    report = validate_independence_report(ImpressionLog(impressions))

    assert not report.disjoint
    assert report.divergence > 0.1
    assert report.p_value < 0.01
    assert report.flagged


def test_independence_report_single_ranker_never_raises():
    report = validate_independence_report(ImpressionLog([Impression("q1", "f1")], rankers=["f1", "f2"]))
    assert report.divergence == 0.0
    assert "ranker 'f2' has no impressions" in report.warnings
