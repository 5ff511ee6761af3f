"""Smoke test for the `aiano` extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
or put the compiled library on PYTHONPATH as `aiano.so`.
"""

import json
import tempfile

import aiano

PROJECT = {
    "name": "smoke",
    "input_schema": {
        "role": "input",
        "fields": [
            {"name": "document_id", "kind": "string", "required": True},
            {"name": "subject_id", "kind": "string", "required": True},
            {"name": "text", "kind": "string", "required": True},
        ],
    },
    "output_schema": {"role": "output", "fields": []},
    "levels": [{"level_id": "rel", "label": "relevant", "color": "", "ordinal": 0}],
    "blocks": [
        {"block_id": "question", "name": "Question", "mode": "plain"},
        {
            "block_id": "answer",
            "name": "Answer",
            "mode": "collaborative",
            "system_prompt": "Antworte kurz.",
            "input_sources": [{"kind": "block_ref", "block_id": "question"}, {"kind": "highlights", "level_id": None}],
        },
    ],
}

DOCS = [
    {"document_id": "d1", "subject_id": "s", "text": "Der Rhein fließt durch Köln."},
    {"document_id": "d2", "subject_id": "s", "text": "Die Elbe fließt durch Dresden."},
]


def check_metrics():
    p, r, f1 = aiano.retrieval_metrics(["a", "b"], ["a", "c", "d", "e"])
    assert (p, r) == (0.5, 0.25) and abs(f1 - 1 / 3) < 1e-12
    assert aiano.macro_average([(1.0, 1.0, 1.0), (0.0, 0.5, 0.0)]) == (0.5, 0.75, 0.5)
    gains = aiano.percent_improvement((0.889, 0.883, 0.860), (0.867, 0.783, 0.787))
    assert [round(g, 1) for g in gains] == [2.5, 12.8, 9.3, 8.2], gains
    try:
        aiano.retrieval_metrics(["a"], [])
    except aiano.AianoError:
        pass
    else:
        raise AssertionError("empty gold accepted")


def check_store(path):
    store = aiano.Store(path)
    pid = store.create_project(json.dumps(PROJECT))
    report = json.loads(store.ingest_documents(pid, json.dumps(DOCS)))
    assert report["accepted"] == 2, report
    assert store.search(pid, "rhein")[0][0] == "d1"
    assert store.find(pid, "d1", "KÖLN") == [(23, 27)]

    entry = {
        "entry_id": "q1",
        "subject_id": "s",
        "highlights": [{"document_id": "d1", "level_id": "rel", "start": 23, "end": 27, "text_snapshot": "Köln"}],
        "block_values": {"question": "Durch welche Stadt fließt der Rhein?"},
    }
    written = json.loads(store.upsert_entry(pid, json.dumps(entry), 0))
    assert written["version"] == 1
    try:
        store.upsert_entry(pid, json.dumps(entry), 0)
    except aiano.VersionConflict:
        pass
    else:
        raise AssertionError("stale write accepted")

    result = json.loads(store.generate_mock(pid, "q1", "answer"))
    assert result["value"].startswith("MOCK:") and result["origin"] == "ai_generated", result
    dataset = store.export_dataset(pid, "question", "answer")
    assert dataset == store.export_dataset(pid, "question", "answer")
    assert json.loads(dataset)[0]["passages"][0]["text"] == "Köln"

    copy = store.import_archive(store.export_archive(pid))
    assert store.export_dataset(copy, "question", "answer") == dataset

    evaluation = json.loads(store.evaluate(pid, json.dumps({"q1": ["d1", "d2"]})))
    assert evaluation["macro_average"]["precision"] == 1.0
    assert evaluation["macro_average"]["recall"] == 0.5
    try:
        store.get_entry(pid, "missing")
    except aiano.NotFoundError:
        pass
    else:
        raise AssertionError("missing entry found")


def main():
    check_metrics()
    check_store(None)
    with tempfile.TemporaryDirectory() as tmp:
        check_store(tmp)
        reopened = aiano.Store(tmp)
        assert len(reopened.list_projects()) == 2
    print("python smoke test passed")


if __name__ == "__main__":
    main()
