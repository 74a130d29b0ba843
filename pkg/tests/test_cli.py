from __future__ import annotations

from pathlib import Path

import pytest

from conftest import CORPUS, REPO, sip_request
from zebu import artifact
from zebu.cli import main
from zebu.engine import validate
from zebu.mutate import make_mutant

SIP_SPEC = REPO / "src" / "zebu" / "grammars" / "sip-subset.zebu"
RTSP_SPEC = REPO / "src" / "zebu" / "grammars" / "rtsp-subset.zebu"


@pytest.fixture()
def compiled_artifact(tmp_path):
    out = tmp_path / "sip.zbc"
    assert main(["compile", str(SIP_SPEC), "-o", str(out)]) == 0
    return out


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


# --- check -----------------------------------------------------------------

def test_check_bundled_grammars_pass():
    assert main(["check", str(SIP_SPEC)]) == 0
    assert main(["check", str(RTSP_SPEC)]) == 0


def test_check_reports_cycle(tmp_path, capsys):
    spec = write(tmp_path, "cyclic.zebu",
                 'requestLine = "GO"\nstatusLine = "NO"\nA = B\nB = A\n')
    assert main(["check", str(spec)]) == 1
    err = capsys.readouterr().err
    assert "RULE_CYCLE" in err
    assert str(spec) in err


def test_check_missing_file():
    assert main(["check", "/nonexistent/spec.zebu"]) == 2


def test_check_parse_error_has_position(tmp_path, capsys):
    spec = write(tmp_path, "broken.zebu", 'requestLine = "GO\n')
    assert main(["check", str(spec)]) == 1
    assert "error[SYNTAX]" in capsys.readouterr().err


# --- compile ----------------------------------------------------------------

def test_compile_is_deterministic(tmp_path):
    a = tmp_path / "a.zbc"
    b = tmp_path / "b.zbc"
    assert main(["compile", str(SIP_SPEC), "-o", str(a)]) == 0
    assert main(["compile", str(SIP_SPEC), "-o", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_compile_failing_grammar_writes_nothing(tmp_path):
    spec = write(tmp_path, "bad.zebu",
                 'requestLine = "GO"\nstatusLine = "NO"\nA = Missing\n')
    out = tmp_path / "bad.zbc"
    assert main(["compile", str(spec), "-o", str(out)]) == 1
    assert not out.exists()


def test_artifact_round_trip_agrees_on_corpus(compiled_artifact, sip_ag, sip):
    loaded = artifact.load(compiled_artifact)
    assert artifact.serialize(loaded) == compiled_artifact.read_bytes()
    corpus = [p.read_bytes() for p in sorted(CORPUS.glob("*.msg"))]
    corpus.extend(make_mutant(sip_ag, i, "rt").data for i in range(25))
    for raw in corpus:
        assert validate(loaded, raw).accepted == validate(sip, raw).accepted


def test_artifact_round_trip_agrees_on_large_campaign(compiled_artifact, sip_ag, sip):
    # a loaded artifact must judge an entire fixed-seed campaign identically
    loaded = artifact.load(compiled_artifact)
    disagreements = []

    def both(raw: bytes) -> bool:
        mine = validate(sip, raw).accepted
        theirs = validate(loaded, raw).accepted
        if mine != theirs:
            disagreements.append(raw)
        return mine

    from zebu.mutate import run_campaign
    report = run_campaign(sip_ag, both, n=10_000, seed=20260810)
    assert disagreements == []
    assert report.total == 10_000
    assert report.missed == 0
    assert report.false_rejects == 0


# --- parse ------------------------------------------------------------------

def test_parse_prints_fields_and_verdict(compiled_artifact, tmp_path, capsys):
    msg = tmp_path / "invite.msg"
    msg.write_bytes(sip_request())
    code = main(["parse", str(compiled_artifact), str(msg),
                 "--field", "From.uri.host", "--field", "CSeq.number",
                 "--field", "From.uri.user"])
    out = capsys.readouterr().out
    assert code == 0
    assert "From.uri.host = example.com" in out
    assert "CSeq.number = 314159" in out
    assert "ACCEPT" in out
    assert "exec_counter" in out


def test_parse_rejects_mutant_with_reasons(compiled_artifact, tmp_path, capsys):
    msg = tmp_path / "bad.msg"
    msg.write_bytes(sip_request(cseq=b"2147483648"))
    code = main(["parse", str(compiled_artifact), str(msg)])
    out = capsys.readouterr().out
    assert code == 1
    assert "REJECT RANGE" in out


def test_parse_optional_absent_prints_absent(compiled_artifact, tmp_path, capsys):
    msg = tmp_path / "m.msg"
    msg.write_bytes(sip_request().replace(b"<sip:alice@example.com>",
                                          b"<sip:example.com>"))
    code = main(["parse", str(compiled_artifact), str(msg),
                 "--field", "From.uri.user"])
    assert code == 0
    assert "From.uri.user = ABSENT" in capsys.readouterr().out


def test_parse_unknown_selector_exits_2(compiled_artifact, tmp_path):
    msg = tmp_path / "m.msg"
    msg.write_bytes(sip_request())
    assert main(["parse", str(compiled_artifact), str(msg),
                 "--field", "From.uri.bogus"]) == 2


def test_parse_no_selectors_verdict_only(compiled_artifact, tmp_path, capsys):
    msg = tmp_path / "m.msg"
    msg.write_bytes(sip_request())
    assert main(["parse", str(compiled_artifact), str(msg)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("ACCEPT")


# --- mutate -------------------------------------------------------------------

def test_mutate_writes_corpus_manifest_report(compiled_artifact, tmp_path, capsys):
    out_dir = tmp_path / "mutants"
    code = main(["mutate", str(compiled_artifact), "--count", "40",
                 "--seed", "9", "--out", str(out_dir)])
    assert code == 0
    raws = sorted(out_dir.glob("*.raw"))
    assert len(raws) == 40
    manifest = (out_dir / "manifest.txt").read_text().splitlines()
    assert len(manifest) == 40
    assert manifest[0].startswith("000000 ")
    report = (out_dir / "report.txt").read_text()
    assert "missed 0" in report
    assert "falseRejects 0" in report
    assert "charset" in capsys.readouterr().out


def test_mutate_deterministic_corpora(compiled_artifact, tmp_path):
    dirs = []
    for name in ("m1", "m2"):
        out_dir = tmp_path / name
        assert main(["mutate", str(compiled_artifact), "--count", "30",
                     "--seed", "4", "--out", str(out_dir)]) == 0
        dirs.append(out_dir)
    a, b = dirs
    assert (a / "manifest.txt").read_bytes() == (b / "manifest.txt").read_bytes()
    assert (a / "report.txt").read_bytes() == (b / "report.txt").read_bytes()
    for raw in sorted(p.name for p in a.glob("*.raw")):
        assert (a / raw).read_bytes() == (b / raw).read_bytes()


def test_mutate_jobs_matches_single_process(compiled_artifact, tmp_path):
    single = tmp_path / "single"
    multi = tmp_path / "multi"
    assert main(["mutate", str(compiled_artifact), "--count", "24",
                 "--seed", "6", "--out", str(single)]) == 0
    assert main(["mutate", str(compiled_artifact), "--count", "24",
                 "--seed", "6", "--out", str(multi), "--jobs", "2"]) == 0
    assert (single / "manifest.txt").read_bytes() == (multi / "manifest.txt").read_bytes()
    assert (single / "report.txt").read_bytes() == (multi / "report.txt").read_bytes()


def test_mutate_accepts_spec_path(tmp_path):
    out_dir = tmp_path / "m"
    assert main(["mutate", str(SIP_SPEC), "--count", "10",
                 "--seed", "1", "--out", str(out_dir)]) == 0


def test_mutate_torture_only_mix(compiled_artifact, tmp_path, capsys):
    out_dir = tmp_path / "t"
    code = main(["mutate", str(compiled_artifact), "--count", "15",
                 "--seed", "2", "--mix", "torture=1", "--out", str(out_dir)])
    assert code == 0
    report = (out_dir / "report.txt").read_text()
    lines = [ln for ln in report.splitlines() if ln.startswith(("charset", "repetition", "constraint"))]
    assert all(" 0 " in ln or ln.split()[1] == "0" for ln in lines)
    manifest = (out_dir / "manifest.txt").read_text()
    assert all(" torture " in ln for ln in manifest.splitlines())


def test_mutate_count_zero_is_usage_error(compiled_artifact, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["mutate", str(compiled_artifact), "--count", "0",
              "--seed", "1", "--out", str(tmp_path / "x")])
    assert exc.value.code == 2


# --- bench ----------------------------------------------------------------------

def test_bench_counter_table(compiled_artifact, capsys):
    code = main(["bench", str(compiled_artifact), str(CORPUS),
                 "--headers", "From", "--iters", "30"])
    out = capsys.readouterr().out
    assert code == 0
    lines = {ln.split()[0]: ln.split() for ln in out.splitlines()
             if ln.startswith(("invite", "bye"))}
    # exec counter: command line (1 run) + From parse where present
    assert lines["invite1.msg"][2] == "2"
    assert lines["invite2.msg"][2] == "2"
    assert lines["invite3.msg"][2] == "2"
    assert lines["bye.msg"][2] == "1"  # From absent: command-line match only
    assert all(row[3] == "0" for row in lines.values())  # lazy never forced
    assert "counter property" in out


def test_bench_empty_header_list(compiled_artifact, capsys):
    code = main(["bench", str(compiled_artifact), str(CORPUS),
                 "--headers", "", "--iters", "5"])
    out = capsys.readouterr().out
    assert code == 0
    for ln in out.splitlines():
        if ln.startswith(("invite", "bye")):
            assert int(ln.split()[2]) <= 2


def test_bench_missing_corpus_shape(compiled_artifact, tmp_path):
    assert main(["bench", str(compiled_artifact), str(tmp_path),
                 "--headers", "From"]) == 2
