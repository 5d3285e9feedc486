import json

import numpy as np
import pytest

from database import list_runs, register_run
from errors import ConfigError, DivergenceError, ExportError, ShapeError
from services.storage_service import StorageService
from utils.decorators import EXIT_CHECK_FAILED, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, handle_errors
from utils.formatters import format_mix


class TestStorageService:

    def test_run_dir_created(self, tmp_path):
        storage = StorageService(tmp_path)
        path = storage.run_dir("sweep")
        assert path == tmp_path / "sweep"
        assert path.is_dir()

    def test_run_dir_override(self, tmp_path):
        storage = StorageService(tmp_path / "default")
        assert storage.run_dir("x", tmp_path / "other") == tmp_path / "other" / "x"

    def test_json_is_sorted_and_stable(self, tmp_path):
        storage = StorageService(tmp_path)
        a = storage.write_json({"b": 1, "a": [1.5, 2]}, tmp_path / "a.json")
        b = storage.write_json({"a": [1.5, 2], "b": 1}, tmp_path / "b.json")
        assert a.read_bytes() == b.read_bytes()
        assert list(json.loads(a.read_text())) == ["a", "b"]

    def test_json_unwritable(self, tmp_path):
        with pytest.raises(ExportError):
            StorageService(tmp_path).write_json({}, tmp_path / "missing" / "x.json")

    def test_checkpoint_missing(self, tmp_path):
        with pytest.raises(ExportError):
            StorageService(tmp_path).load_checkpoint(tmp_path / "absent.npz")

    def test_checkpoint_not_a_layer(self, tmp_path):
        path = tmp_path / "other.npz"
        np.savez(path, something=np.zeros(3))
        with pytest.raises(ExportError):
            StorageService(tmp_path).load_checkpoint(path)

    def test_checkpoint_keeps_training_state(self, trained_like_layer, tmp_path):
        trained_like_layer.mark_updated()
        storage = StorageService(tmp_path)
        loaded = storage.load_checkpoint(storage.save_checkpoint(trained_like_layer, tmp_path / "c.npz"))
        assert loaded.version == trained_like_layer.version
        assert loaded.n_experts == 4


class TestRegistry:

    def test_register_and_list(self, registry):
        first = register_run("a", "train", 2 ** 64 - 1, {"x": 1}, 0.5, 0.3, "r.json")
        register_run("b", "ablate", 0, {}, None, None, None, status="diverged", grid_point={"q": 1.1})
        with registry.db_session() as session:
            runs = list_runs(session)
            assert [r.id for r in runs][0] == first
            assert runs[0].seed == str(2 ** 64 - 1)
            assert runs[1].status == "diverged"
            assert json.loads(runs[1].grid_point) == {"q": 1.1}
            assert [r.run_name for r in list_runs(session, "b")] == ["b"]


class TestHandleErrors:

    @pytest.mark.parametrize("exc,code", [
        (ConfigError("bad"), EXIT_USAGE),
        (ShapeError("bad"), EXIT_USAGE),
        (ExportError("bad"), EXIT_USAGE),
        (DivergenceError("nan"), EXIT_DIVERGED),
        (RuntimeError("boom"), EXIT_CHECK_FAILED),
    ])
    def test_exit_codes(self, exc, code, capsys):
        @handle_errors
        def failing():
            raise exc

        assert failing() == code
        assert capsys.readouterr().err.startswith("error:")

    def test_passthrough(self):
        assert handle_errors(lambda: EXIT_OK)() == EXIT_OK


def test_format_mix():
    assert format_mix({"Soft": 0.25, "TopP": 0.75}) == "Soft 25.0% / TopP 75.0%"
