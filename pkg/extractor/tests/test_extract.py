"""Extraction contracts: alignment, determinism, loss sanity, CLI.

The interop test loads every emitted file through the selection package's
strict readers; that cross-package round trip is the acceptance bar for
this component.
"""

import json
import logging
from pathlib import Path

import numpy as np
import pytest

from coresel.feature_store import combine_features, load_feature_space, load_sample_meta
from featex import (
    ExtractorJob,
    ModelLoadError,
    build_toy_dataset,
    extract_features,
    extract_irs_losses,
    load_model,
    run_extraction,
)
from featex.cli import main
from featex.dataset import load_records
from featex.io import write_losses, write_matrix
from featex.toydata import ECHO_INDICES

ALL_SPACES = ("lmm", "last_pool", "last_token", "vte", "dino", "e5", "iqa")

EXPECTED_DIMS = {
    "lmm": 144,
    "last_pool": 48,
    "last_token": 48,
    "vte": 96,
    "dino": 64,
    "e5": 64,
    "iqa": 14,
}


@pytest.fixture
def announce(capsys):
    def _announce(name, ok, detail):
        status = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"[criterion] {name}: {status} ({detail})", flush=True)
        assert ok, f"{name}: {detail}"

    return _announce


@pytest.fixture(scope="module")
def corrupt_run(tmp_path_factory):
    """Default toy dataset: sample 7 has a corrupt image, sample 4 an empty answer."""
    root = tmp_path_factory.mktemp("corrupt_run")
    build_toy_dataset(root / "data")
    job = ExtractorJob(dataset_dir=str(root / "data"), out_dir=str(root / "out"), spaces=ALL_SPACES)
    return job, run_extraction(job)


@pytest.fixture(scope="module")
def clean_run(tmp_path_factory):
    """10 decodable samples, no empty answers."""
    root = tmp_path_factory.mktemp("clean_run")
    build_toy_dataset(root / "data", corrupt_index=None, empty_answer_index=None)
    job = ExtractorJob(dataset_dir=str(root / "data"), out_dir=str(root / "out"), spaces=ALL_SPACES)
    return job, run_extraction(job)


def test_corrupt_image_excluded_from_every_space(corrupt_run):
    job, result = corrupt_run
    assert result.skipped_images == [(
        "s007",
        result.skipped_images[0][1],
    )]
    assert "s007" not in result.ids
    assert len(result.ids) == 9
    for space in ALL_SPACES:
        fs = load_feature_space(result.feature_paths[space])
        assert fs.vectors.shape[0] == 9
        assert fs.ids == result.ids


def test_ids_sidecars_byte_identical_across_spaces(corrupt_run):
    job, result = corrupt_run
    payloads = {
        space: Path(str(path) + ".ids").read_bytes()
        for space, path in result.feature_paths.items()
    }
    reference = payloads["lmm"]
    assert all(buf == reference for buf in payloads.values())


def test_space_dimensions(corrupt_run):
    _, result = corrupt_run
    for space, path in result.feature_paths.items():
        fs = load_feature_space(path)
        assert fs.vectors.shape[1] == EXPECTED_DIMS[space], space


def test_secondary_criterion_interop(clean_run, announce):
    """Every emitted file must pass the selection package's loaders as-is."""
    job, result = clean_run
    spaces = {}
    try:
        for name, path in result.feature_paths.items():
            spaces[name] = load_feature_space(path)
        meta = load_sample_meta(result.loss_path)
    except ValueError as e:
        announce("extractor_interop", False, f"loader diagnostic: {e}")
        return
    rows_ok = all(fs.vectors.shape[0] == 10 for fs in spaces.values())
    align_ok = all(fs.ids == result.ids for fs in spaces.values())
    meta_ok = [m.id for m in meta] == result.ids
    combined = combine_features([spaces[s] for s in ALL_SPACES], normalization="per_block_l2")
    combined_ok = combined.ids == result.ids and combined.vectors.shape == (
        10,
        sum(EXPECTED_DIMS.values()),
    )
    ok = rows_ok and align_ok and meta_ok and combined_ok
    announce(
        "extractor_interop",
        ok,
        f"rows 10 in all spaces={rows_ok}, id alignment={align_ok}, "
        f"meta alignment={meta_ok}, combine={combined_ok}",
    )


def test_losses_strictly_positive(corrupt_run):
    _, result = corrupt_run
    meta = load_sample_meta(result.loss_path)
    assert all(m.loss_with_q > 0.0 and m.loss_without_q > 0.0 for m in meta)


def test_empty_answer_row_omitted_and_logged(tmp_path, caplog):
    build_toy_dataset(tmp_path / "data", n=5, corrupt_index=None, empty_answer_index=3)
    job = ExtractorJob(dataset_dir=str(tmp_path / "data"), out_dir=str(tmp_path / "out"))
    with caplog.at_level(logging.WARNING, logger="featex.extract"):
        result = extract_irs_losses(job)
    assert result.skipped_losses == [("s003", "empty answer")]
    assert "empty answer" in caplog.text
    meta = load_sample_meta(result.loss_path)
    assert [m.id for m in meta] == ["s000", "s001", "s002", "s004"]


def test_echo_questions_get_low_irs(corrupt_run):
    """A question stating the answer verbatim must make scoring much easier."""
    _, result = corrupt_run
    meta = {m.id: m.loss_with_q / m.loss_without_q for m in load_sample_meta(result.loss_path)}
    echo_ids = {f"s{i:03d}" for i in ECHO_INDICES}
    echo = [irs for sid, irs in meta.items() if sid in echo_ids]
    other = [irs for sid, irs in meta.items() if sid not in echo_ids]
    assert len(echo) == 2
    assert max(echo) < 0.5
    assert np.mean(echo) < np.mean(other)


def test_repeat_extraction_byte_identical(corrupt_run, tmp_path):
    job, first = corrupt_run
    rerun = ExtractorJob(
        dataset_dir=job.dataset_dir, out_dir=str(tmp_path / "again"), spaces=ALL_SPACES
    )
    second = run_extraction(rerun)
    for space in ALL_SPACES:
        a, b = first.feature_paths[space], second.feature_paths[space]
        assert Path(str(a) + ".ids").read_bytes() == Path(str(b) + ".ids").read_bytes()
        assert a.read_bytes() == b.read_bytes()
        diff = np.abs(load_feature_space(a).vectors - load_feature_space(b).vectors)
        assert float(diff.max()) < 1e-5
    assert first.loss_path.read_bytes() == second.loss_path.read_bytes()


def test_batch_size_does_not_change_output(corrupt_run, tmp_path):
    job, first = corrupt_run
    one_at_a_time = ExtractorJob(
        dataset_dir=job.dataset_dir,
        out_dir=str(tmp_path / "b1"),
        spaces=ALL_SPACES,
        batch_size=1,
    )
    second = extract_features(one_at_a_time)
    for space in ALL_SPACES:
        assert first.feature_paths[space].read_bytes() == second.feature_paths[space].read_bytes()


def test_feature_rows_distinct_across_samples(corrupt_run):
    """Different images and texts must not collapse to one vector."""
    _, result = corrupt_run
    for space in ("dino", "iqa", "e5", "lmm"):
        vectors = load_feature_space(result.feature_paths[space]).vectors
        assert np.unique(vectors, axis=0).shape[0] == vectors.shape[0], space


def test_unknown_model_rejected(tmp_path):
    with pytest.raises(ModelLoadError, match="model load failure"):
        load_model("llava-8b")
    build_toy_dataset(tmp_path / "data", n=3, corrupt_index=None, empty_answer_index=None)
    job = ExtractorJob(
        dataset_dir=str(tmp_path / "data"), out_dir=str(tmp_path / "out"), mllm="llava-8b"
    )
    with pytest.raises(ModelLoadError, match="model load failure"):
        extract_features(job)


def test_job_validation():
    with pytest.raises(ValueError, match="strictly increasing"):
        ExtractorJob(dataset_dir="d", out_dir="o", layer_indices=(6, 3))
    with pytest.raises(ValueError, match="strictly increasing"):
        ExtractorJob(dataset_dir="d", out_dir="o", layer_indices=(3, 3))
    with pytest.raises(ValueError, match="unknown spaces"):
        ExtractorJob(dataset_dir="d", out_dir="o", spaces=("clip",))
    with pytest.raises(ValueError, match="at least one feature space"):
        ExtractorJob(dataset_dir="d", out_dir="o", spaces=())
    with pytest.raises(ValueError, match="duplicate space"):
        ExtractorJob(dataset_dir="d", out_dir="o", spaces=("vte", "vte"))
    with pytest.raises(ValueError, match="batch_size"):
        ExtractorJob(dataset_dir="d", out_dir="o", batch_size=0)


def test_malformed_records_rejected(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    path = data / "records.jsonl"

    path.write_text('{"id": "a", "image": "x.png", "question": "q"}\n')
    with pytest.raises(ValueError, match=r"records\.jsonl:1.*missing fields.*answer"):
        load_records(data)

    path.write_text("not json\n")
    with pytest.raises(ValueError, match=r"records\.jsonl:1.*invalid JSON"):
        load_records(data)

    good = json.dumps({"id": "a", "image": "x.png", "question": "q", "answer": "a"})
    path.write_text(good + "\n" + good + "\n")
    with pytest.raises(ValueError, match=r"records\.jsonl:2.*duplicate id"):
        load_records(data)

    path.write_text(json.dumps({"id": 3, "image": "x", "question": "q", "answer": "a"}) + "\n")
    with pytest.raises(ValueError, match="must be a string"):
        load_records(data)

    path.write_text("\n")
    with pytest.raises(ValueError, match="no records"):
        load_records(data)

    with pytest.raises(ValueError, match="missing records.jsonl"):
        load_records(tmp_path / "nowhere")


def test_all_images_corrupt_rejected(tmp_path):
    build_toy_dataset(tmp_path / "data", n=3, corrupt_index=None, empty_answer_index=None)
    for img in (tmp_path / "data").glob("*.png"):
        img.write_bytes(b"broken")
    job = ExtractorJob(dataset_dir=str(tmp_path / "data"), out_dir=str(tmp_path / "out"))
    with pytest.raises(ValueError, match="no decodable samples"):
        extract_features(job)


def test_writer_validation(tmp_path):
    ids = ["a", "b"]
    with pytest.raises(ValueError, match="2 ids for 3"):
        write_matrix(tmp_path / "x.feat", ids, np.zeros((3, 2)))
    with pytest.raises(ValueError, match="non-finite"):
        write_matrix(tmp_path / "x.feat", ids, np.array([[1.0, np.nan], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="duplicate sample ids"):
        write_matrix(tmp_path / "x.feat", ["a", "a"], np.zeros((2, 2)))
    with pytest.raises(ValueError, match="bad sample id"):
        write_matrix(tmp_path / "x.feat", ["a", "b\nc"], np.zeros((2, 2)))
    with pytest.raises(ValueError, match="nonpositive loss"):
        write_losses(tmp_path / "m.csv", [("a", 0.0, 1.0)])


def test_cli_extract_success(tmp_path, capsys):
    build_toy_dataset(tmp_path / "data")
    code = main(
        [
            "extract",
            "--dataset",
            str(tmp_path / "data"),
            "--out",
            str(tmp_path / "out"),
            "--spaces",
            "lmm,vte,dino,e5,iqa",
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "meta.csv" in out
    assert "skipped 1 samples" in out
    for space in ("lmm", "vte", "dino", "e5", "iqa"):
        assert (tmp_path / "out" / f"{space}.feat").exists()
        assert (tmp_path / "out" / f"{space}.feat.ids").exists()


def test_cli_error_paths(tmp_path, capsys):
    assert main(["extract", "--dataset", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2
    assert "missing records.jsonl" in capsys.readouterr().err

    build_toy_dataset(tmp_path / "data", n=3, corrupt_index=None, empty_answer_index=None)
    dataset = str(tmp_path / "data")
    assert main(["extract", "--dataset", dataset, "--out", str(tmp_path / "o"), "--mllm", "gpt"]) == 2
    assert "model load failure" in capsys.readouterr().err

    assert main(["extract", "--dataset", dataset, "--out", str(tmp_path / "o"), "--layers", "a,b"]) == 2
    assert "cannot parse --layers" in capsys.readouterr().err

    assert main(["extract", "--dataset", dataset, "--out", str(tmp_path / "o"), "--layers", "9,3"]) == 2
    assert "strictly increasing" in capsys.readouterr().err
