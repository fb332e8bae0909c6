"""HTTP surface: every endpoint, error-kind mapping, file outputs."""

import pytest
from fastapi.testclient import TestClient

from qwdgan.data import load_image
from qwdgan.metrics import read_csv_rows
from qwdgan.service import create_app

TINY_OVERRIDES = {
    "train.steps": "2", "train.batch_size": "2", "train.patch_size": "32",
    "generator.base_channels": "8", "generator.scales": "2",
    "generator.wcg_groups": "2", "generator.max_channels": "16",
    "discriminator.base_channels": "8",
}


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def manifest_path(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("data")
    lines = [
        "phantom:filaments:32:1 | gaussian:sigma=0.1,seed=11 | frames=1 | split=train",
        "phantom:blobs:32:2 | gaussian:sigma=0.1,seed=12 | frames=1 | split=train",
        "phantom:edges:32:3 | gaussian:sigma=0.1,seed=13 | frames=2 | split=eval",
        "phantom:mixed:32:4 | gaussian:sigma=0.1,seed=14 | frames=1 | split=eval",
    ]
    path = tmp / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture(scope="module")
def checkpoint_path(client, manifest_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "model.qwdg"
    response = client.post("/train", json={
        "overrides": TINY_OVERRIDES,
        "manifest_path": str(manifest_path),
        "checkpoint_out": str(out)})
    assert response.status_code == 200, response.text
    return out


class TestHealth:
    def test_health(self, client):
        body = client.get("/health").json()
        assert body["status"] == "ok"


class TestSimulate:
    def test_writes_noisy_and_clean_pngs(self, client, manifest_path, tmp_path):
        response = client.post("/simulate", json={
            "manifest_path": str(manifest_path), "output_dir": str(tmp_path)})
        assert response.status_code == 200
        body = response.json()
        assert len(body["written"]) == 8  # 4 records x (noisy + clean)
        noisy = load_image(body["written"][0])
        assert noisy.shape == (32, 32)
        derived = body["manifest_path"]
        assert "simulated_manifest" in derived

    def test_missing_manifest_is_data_error(self, client, tmp_path):
        response = client.post("/simulate", json={
            "manifest_path": str(tmp_path / "nope.txt"), "output_dir": str(tmp_path)})
        assert response.status_code == 422
        assert response.json()["detail"]["error_kind"] == "data"


class TestTrain:
    def test_train_writes_checkpoint_and_log(self, client, manifest_path, tmp_path):
        response = client.post("/train", json={
            "overrides": TINY_OVERRIDES,
            "manifest_path": str(manifest_path),
            "checkpoint_out": str(tmp_path / "m.qwdg"),
            "log_csv": str(tmp_path / "log.csv")})
        assert response.status_code == 200
        body = response.json()
        assert body["steps"] == 2
        assert (tmp_path / "m.qwdg").exists()
        rows = read_csv_rows(tmp_path / "log.csv")
        assert len(rows) == 2

    def test_bad_override_is_usage_error(self, client, tmp_path):
        response = client.post("/train", json={
            "overrides": {"train.stepz": "5"},
            "checkpoint_out": str(tmp_path / "x.qwdg")})
        assert response.status_code == 400
        assert response.json()["detail"]["error_kind"] == "usage"

    def test_resume_from_checkpoint(self, client, manifest_path, checkpoint_path,
                                    tmp_path):
        response = client.post("/train", json={
            "overrides": {"train.steps": "3"},
            "manifest_path": str(manifest_path),
            "checkpoint_out": str(tmp_path / "resumed.qwdg"),
            "resume_from": str(checkpoint_path)})
        assert response.status_code == 200
        assert response.json()["steps"] == 5  # 2 from base + 3 more

    def test_resume_rejects_architecture_overrides(self, client, manifest_path,
                                                   checkpoint_path, tmp_path):
        response = client.post("/train", json={
            "overrides": {"generator.scales": "3"},
            "manifest_path": str(manifest_path),
            "checkpoint_out": str(tmp_path / "r2.qwdg"),
            "resume_from": str(checkpoint_path)})
        assert response.status_code == 400
        assert "resum" in response.json()["detail"]["message"]


class TestDenoise:
    def test_denoises_directory(self, client, manifest_path, checkpoint_path, tmp_path):
        sim = client.post("/simulate", json={
            "manifest_path": str(manifest_path), "output_dir": str(tmp_path / "in"),
            "write_clean": False})
        assert sim.status_code == 200
        response = client.post("/denoise", json={
            "checkpoint_path": str(checkpoint_path),
            "input_dir": str(tmp_path / "in"),
            "output_dir": str(tmp_path / "out")})
        assert response.status_code == 200
        written = response.json()["written"]
        assert len(written) == 4
        for path in written:
            img = load_image(path)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_empty_directory_is_data_error(self, client, checkpoint_path, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        response = client.post("/denoise", json={
            "checkpoint_path": str(checkpoint_path),
            "input_dir": str(empty), "output_dir": str(tmp_path / "o")})
        assert response.status_code == 422


class TestEval:
    def test_metrics_with_baselines(self, client, manifest_path, checkpoint_path,
                                    tmp_path):
        response = client.post("/eval", json={
            "checkpoint_path": str(checkpoint_path),
            "manifest_path": str(manifest_path),
            "output_dir": str(tmp_path), "spectra": True, "svg": True})
        assert response.status_code == 200
        body = response.json()
        methods = {a["method"] for a in body["aggregates"]}
        assert methods == {"model", "noisy", "blur"}
        rows = read_csv_rows(body["metrics_csv"])
        assert len(rows) == body["images"] * 3
        assert list(tmp_path.glob("spectrum_*.csv"))
        assert list(tmp_path.glob("spectrum_*.svg"))

    def test_empty_split_is_data_error(self, client, manifest_path, checkpoint_path,
                                       tmp_path):
        response = client.post("/eval", json={
            "checkpoint_path": str(checkpoint_path),
            "manifest_path": str(manifest_path),
            "output_dir": str(tmp_path), "split": "test"})
        assert response.status_code == 422


class TestSpectrum:
    def test_csv_and_svg(self, client, manifest_path, tmp_path):
        sim = client.post("/simulate", json={
            "manifest_path": str(manifest_path), "output_dir": str(tmp_path / "in"),
            "write_clean": False})
        images = sim.json()["written"][:2]
        response = client.post("/spectrum", json={
            "images": images, "output_dir": str(tmp_path / "spec"), "svg": True})
        assert response.status_code == 200
        body = response.json()
        assert len(body["csv_paths"]) == 2
        rows = read_csv_rows(body["csv_paths"][0])
        assert set(rows[0]) == {"rho", "power"}
        assert body["svg_path"] is not None
        svg = (tmp_path / "spec" / "spectrum.svg").read_text()
        assert svg.startswith("<svg")

    def test_no_images_is_data_error(self, client, tmp_path):
        response = client.post("/spectrum", json={
            "images": [], "output_dir": str(tmp_path)})
        assert response.status_code == 422


class TestAblate:
    def test_two_variants(self, client, manifest_path, tmp_path):
        response = client.post("/ablate", json={
            "overrides": TINY_OVERRIDES,
            "manifest_path": str(manifest_path),
            "variants": ["full", "wavelet_branch_off"],
            "output_csv": str(tmp_path / "cmp.csv")})
        assert response.status_code == 200
        rows = response.json()["rows"]
        assert [r["variant"] for r in rows] == ["full", "wavelet_branch_off"]
        lines = (tmp_path / "cmp.csv").read_text().splitlines()
        assert len(lines) == 3

    def test_unknown_variant_is_usage_error(self, client, manifest_path, tmp_path):
        response = client.post("/ablate", json={
            "overrides": TINY_OVERRIDES,
            "manifest_path": str(manifest_path),
            "variants": ["telepathy"],
            "output_csv": str(tmp_path / "cmp.csv")})
        assert response.status_code == 400

    def test_validation_error_shape(self, client):
        # missing required field -> FastAPI validation (list-shaped detail)
        response = client.post("/ablate", json={})
        assert response.status_code == 422
        assert isinstance(response.json()["detail"], list)
