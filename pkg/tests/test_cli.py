import json
from pathlib import Path


from gradebor.cli import main

CORPUS = Path(__file__).resolve().parent.parent / "src" / "gradebor" / "corpus"


def test_check_accepted(capsys):
    assert main(["check", str(CORPUS / "persimmon.grb")]) == 0
    out = capsys.readouterr().out
    assert "persimmon" in out and "main" in out


def test_check_rejected_with_diagnostic(capsys):
    assert main(["check", str(CORPUS / "viridian.grb")]) == 1
    out = capsys.readouterr().out
    assert "[PermissionNotWritable]" in out


def test_check_missing_file_is_io():
    assert main(["check", "no/such/file.grb"]) == 2


def test_check_json_format(capsys):
    assert main(["check", "--format", "json", str(CORPUS / "scarlet.grb")]) == 1
    payload = json.loads(capsys.readouterr().out)
    assert payload[0]["errors"][0]["kind"] == "LinearReuse"
    assert payload[0]["errors"][0]["line"] is not None


def test_run_prints_value(capsys):
    assert main(["run", str(CORPUS / "amethyst.grb")]) == 0
    out = capsys.readouterr().out
    assert "value:" in out and "*#ref" in out


def test_run_trivial_main(tmp_path, capsys):
    f = tmp_path / "trivial.grb"
    f.write_text("main : Unit; main = ();\n")
    assert main(["run", str(f)]) == 0
    assert "()" in capsys.readouterr().out


def test_run_fuel_exhaustion(tmp_path):
    f = tmp_path / "t.grb"
    f.write_text("main : Unit; main = let () = () in ();\n")
    assert main(["run", str(f), "--fuel", "0"]) == 3


def test_trace_emits_jsonl_and_checks(capsys):
    assert main(["trace", str(CORPUS / "persimmon.grb")]) == 0
    out = capsys.readouterr().out
    lines = [json.loads(line) for line in out.strip().splitlines()]
    assert any(rec.get("rule", "").endswith("splitRef") for rec in lines)
    split_rec = next(rec for rec in lines if rec.get("rule", "").endswith("splitRef"))
    halves = [e["perm"] for e in split_rec["heap"] if e["sort"] == "ref"]
    assert halves == ["1/2", "1/2"]


def test_trace_example_rule_names(capsys):
    assert main(["trace", str(CORPUS / "example_s3.grb")]) == 0
    lines = [json.loads(line) for line in capsys.readouterr().out.strip().splitlines()]
    rules = [rec["rule"] for rec in lines if "rule" in rec]
    assert rules[1:4] == ["appL/congPairR/var", "beta", "congPairL/var"]


def test_props_zero_cases_is_vacuous(capsys):
    assert main(["props", "--cases", "0", "--seed", "1"]) == 0


def test_props_small_run_and_json_stability(capsys):
    assert main(["props", "--cases", "8", "--seed", "3", "--format", "json"]) == 0
    first = capsys.readouterr().out
    assert main(["props", "--cases", "8", "--seed", "3", "--format", "json"]) == 0
    second = capsys.readouterr().out
    assert json.loads(first) == json.loads(second)


def test_props_mutation_fails_borrow_safety(capsys):
    assert main(["props", "--cases", "12", "--seed", "3", "--mutate-split", "--format", "json"]) == 4
    payload = json.loads(capsys.readouterr().out)
    borrow = next(s for s in payload if s["property"] == "borrow-safety")
    assert borrow["failures"]


def test_corpus_command(capsys):
    assert main(["corpus"]) == 0
    out = capsys.readouterr().out
    assert "persimmon" in out and "MISMATCH" not in out


def test_semiring_flag_overrides_pragma(tmp_path):
    f = tmp_path / "d.grb"
    # accepted under the default upper-bound ordering, rejected when forced discrete
    f.write_text("main : Unit;\nmain = let [y] : (Unit [2]) = [()] in let () = y in ();\n")
    assert main(["check", str(f)]) == 0
    assert main(["check", str(f), "--semiring", "nat"]) == 1


def test_fuel_env_var(tmp_path, monkeypatch):
    f = tmp_path / "t.grb"
    f.write_text("main : Unit; main = let () = () in ();\n")
    monkeypatch.setenv("GRADEBOR_FUEL", "0")
    assert main(["run", str(f)]) == 3
    monkeypatch.setenv("GRADEBOR_FUEL", "50")
    assert main(["run", str(f)]) == 0


def test_trace_value_only_main_is_a_single_record(tmp_path, capsys):
    f = tmp_path / "v.grb"
    f.write_text("main : Unit; main = ();\n")
    assert main(["trace", str(f)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 1
    rec = json.loads(lines[0])
    assert rec["value"] == "()" and rec["step"] == 0
