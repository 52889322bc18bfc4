import json

import pytest

from prefect_judgeforge.exceptions import RecordFileError
from prefect_judgeforge.models import Instruction, ResponseRecord
from prefect_judgeforge.records import (
    append_jsonl,
    dump_line,
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
)


def test_dump_line_uses_aliases_and_drops_unset():
    instruction = Instruction(id="q1", scenario="math_qa", text="Sum?", reference="4")
    line = json.loads(dump_line(instruction))
    assert line["reference"] == "4"
    assert "reference_answer" not in line
    assert "error" not in json.loads(
        dump_line(ResponseRecord(instruction_id="q1", model="m", text="4"))
    )


def test_write_and_read_jsonl(tmp_path):
    path = tmp_path / "nested" / "responses.jsonl"
    records = [
        ResponseRecord(instruction_id="q1", model="m", text="Zwölf"),
        ResponseRecord(instruction_id="q2", model="m", error="AuthError: revoked"),
    ]
    assert write_jsonl(path, records) == path
    assert not (tmp_path / "nested" / "responses.jsonl.partial").exists()
    assert "Zwölf" in path.read_text(encoding="utf-8")
    assert read_jsonl(path, ResponseRecord) == records


def test_append_jsonl_and_blank_lines(tmp_path):
    path = tmp_path / "responses.jsonl"
    append_jsonl(path, [ResponseRecord(instruction_id="q1", model="m", text="a")])
    with open(path, "a", encoding="utf-8") as handle:
        handle.write("\n")
    append_jsonl(path, [ResponseRecord(instruction_id="q2", model="m", text="b")])
    texts = [record.text for record in read_jsonl(path, ResponseRecord)]
    assert texts == ["a", "b"]


@pytest.mark.parametrize("line", ["{not json", '{"model": "m"}'])
def test_read_jsonl_reports_bad_lines(tmp_path, line):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"instruction_id": "q1", "model": "m"}\n' + line + "\n")
    with pytest.raises(RecordFileError, match=":2 "):
        read_jsonl(path, ResponseRecord)


def test_write_and_read_json(tmp_path):
    path = write_json(tmp_path / "clusters.json", {"0": ["b", "a"], "1": ["c"]})
    assert list(read_json(path)) == ["0", "1"]
    path.write_text("[1, 2")
    with pytest.raises(RecordFileError):
        read_json(path)
