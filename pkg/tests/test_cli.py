import pytest

from mpca_retrieval.cli.app import main
from mpca_retrieval.ml.eval import parse_kv
from mpca_retrieval.storage.formats import read_features, read_index, read_model


@pytest.fixture
def features(tmp_path):
    path = tmp_path / "items.mpft"
    assert main(["gen", "--classes", "3", "--per-class", "8", "--shape", "3,3,4",
                 "--noise", "0.2", "--seed", "2", "-o", str(path)]) == 0
    return path


def test_file_workflow(tmp_path, features, capsys):
    model, projected = tmp_path / "m.mpcm", tmp_path / "p.mpft"
    hashm, codes, index = tmp_path / "h.lsh", tmp_path / "c.mpix", tmp_path / "ix.mpix"
    assert main(["fit", str(features), "--cr", "1/2", "-o", str(model)]) == 0
    assert read_model(model).out_dims == (2, 2, 2)
    assert main(["project", str(model), str(features), "-o", str(projected)]) == 0
    assert read_features(projected).dims == (2, 2, 2)
    assert main(["hash-fit", "--features", str(projected), "--bits", "64", "--seed", "5", "-o", str(hashm)]) == 0
    assert read_model(hashm).dim == 8
    assert main(["encode", str(hashm), str(projected), "-o", str(codes)]) == 0
    assert main(["index", str(codes), "-o", str(index)]) == 0
    assert len(read_index(index)) == 24

    capsys.readouterr()
    assert main(["query", str(index), "--id", "3", "--topk", "4"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    rows = [line.split("\t") for line in lines[1:]]
    assert rows[0][3] == "0"
    # equal codes tie by id, so the query item is among the zero-distance rows
    assert ["3", "0", "0"] in [r[1:] for r in rows]

    report = tmp_path / "eval.txt"
    assert main(["eval", str(index), "--report", str(report)]) == 0
    kv = parse_kv(report.read_text())
    assert kv["bits"] == "64" and kv["n_queries"] == "24"
    assert 0.0 <= float(kv["map"]) <= 1.0


def test_pca_projection_is_flat(tmp_path, features):
    model, projected = tmp_path / "m.pcam", tmp_path / "p.mpft"
    assert main(["fit", str(features), "--method", "pca", "--pca-dim", "5", "-o", str(model)]) == 0
    assert main(["project", str(model), str(features), "-o", str(projected)]) == 0
    assert read_features(projected).dims == (1, 1, 5)


def test_pipeline_report_and_run_log(tmp_path, features, capsys):
    report = tmp_path / "report.txt"
    assert main(["pipeline", str(features), "--cr", "0.5", "--bits", "64",
                 "--report", str(report), "--record"]) == 0
    kv = parse_kv(report.read_text())
    assert kv["dims"] == "2,2,2" and kv["bits"] == "64"
    capsys.readouterr()
    assert main(["runs"]) == 0
    out = capsys.readouterr().out
    assert "mpca" in out and "2,2,2" in out


def test_pipeline_compare_and_sweep(tmp_path, features):
    report, table = tmp_path / "cmp.txt", tmp_path / "sweep.csv"
    assert main(["pipeline", str(features), "--cr", "0.5", "--bits", "32", "--compare",
                 "--report", str(report)]) == 0
    kv = parse_kv(report.read_text())
    assert "mpca.map" in kv and "pca.map" in kv
    assert main(["sweep", str(features), "--crs", "1/3,1/2", "--bits", "32", "-o", str(table)]) == 0
    assert table.read_text().splitlines()[0] == "method,cr,bits,dims,ccr_w,map,fit_ms,query_ms"
    assert len(table.read_text().splitlines()) == 1 + 2 * 2


@pytest.mark.parametrize("argv", [
    [],
    ["fit"],
    ["fit", "x.mpft", "--cr", "0.5", "--dims", "1,1,1", "-o", "m"],
    ["fit", "x.mpft", "--dims", "1,1", "-o", "m"],
    ["fit", "x.mpft", "--target-ccr", "0.9", "-o", "m"],
    ["pipeline", "x.mpft", "--bits", "0", "--cr", "0.5"],
    ["gen", "--seed", "-1", "-o", "x.mpft"],
    ["gen", "--seed", str(2 ** 64), "-o", "x.mpft"],
    ["hash-fit", "--dim", "4", "--seed", "-1", "-o", "h.lsh"],
    ["pipeline", "x.mpft", "--cr", "0.5", "--seed", "-1"],
    ["sweep", "x.mpft", "--seed", "-1"],
    ["query", "x.mpix", "--id", "-1"],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as e:
        main(argv)
    assert e.value.code == 1


def test_format_errors_exit_2(tmp_path, features):
    junk = tmp_path / "junk.mpix"
    junk.write_bytes(b"XXXX0000")
    assert main(["eval", str(junk)]) == 2
    assert main(["project", str(junk), str(features), "-o", str(tmp_path / "p")]) == 2
    assert main(["eval", str(tmp_path / "missing.mpix")]) == 2


def test_numeric_and_argument_failures_exit_2(tmp_path, features):
    assert main(["fit", str(features), "--dims", "9,9,9", "-o", str(tmp_path / "m")]) == 2
    codes = tmp_path / "c.mpix"
    main(["hash-fit", "--dim", "36", "--bits", "16", "-o", str(tmp_path / "h.lsh")])
    main(["encode", str(tmp_path / "h.lsh"), str(features), "-o", str(codes)])
    assert main(["query", str(codes), "--id", "999"]) == 2


def test_eval_rejects_queries_of_another_code_length(tmp_path, features):
    codes = {}
    for bits in (64, 60):
        hashm, codes[bits] = tmp_path / f"h{bits}.lsh", tmp_path / f"c{bits}.mpix"
        assert main(["hash-fit", "--dim", "36", "--bits", str(bits), "-o", str(hashm)]) == 0
        assert main(["encode", str(hashm), str(features), "-o", str(codes[bits])]) == 0
    assert main(["eval", str(codes[64]), "--queries", str(codes[60])]) == 2
    assert main(["query", str(codes[64]), "--queries", str(codes[60]), "--id", "0"]) == 2
    assert main(["eval", str(codes[60]), "--queries", str(codes[60])]) == 0
