"""
Storage Service - run directories, reports and layer checkpoints

Checkpoint format (numpy .npz, arrays stored bit-exactly):
    w0, router.w_g, experts.<i>.a, experts.<i>.b   parameter arrays
    meta                                           JSON string: format version,
                                                   shapes, scaling, routing config,
                                                   seed, layer id, version
"""
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from config import settings
from errors import ExportError
from models import RoutingConfig
from services.metrics import render_json
from services.mole import LoraExpert, MoleLayer, Router

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class StorageService:
    """Manage experiment artifacts on disk"""

    def __init__(self, output_dir: Optional[Path] = None):
        self.output_dir = Path(output_dir or settings.output_dir)

    def run_dir(self, run_name: str, output_dir: Optional[Path] = None) -> Path:
        """Directory for one run, created on demand"""
        base = Path(output_dir) if output_dir is not None else self.output_dir
        path = base / run_name
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ExportError(f"Could not create run directory ({e.strerror})", path) from e
        return path

    def write_json(self, data: dict, path: Path) -> Path:
        """Deterministic JSON (sorted keys) so equal runs give equal bytes"""
        try:
            path.write_text(render_json(data), encoding="utf-8")
        except OSError as e:
            raise ExportError(f"Could not write JSON ({e.strerror})", path) from e
        logger.info(f"Saved {path}")
        return path

    def save_checkpoint(self, layer: MoleLayer, path: Path) -> Path:
        """Write every layer array plus metadata"""
        arrays = {"w0": layer.w0, "router.w_g": layer.router.w_g}
        for i, expert in enumerate(layer.experts):
            arrays[f"experts.{i}.a"] = expert.a
            arrays[f"experts.{i}.b"] = expert.b

        meta = {
            "format": CHECKPOINT_FORMAT,
            "input_dim": layer.input_dim,
            "output_dim": layer.output_dim,
            "n_experts": layer.n_experts,
            "rank": layer.experts[0].rank if layer.experts else 0,
            "scaling": [expert.scaling for expert in layer.experts],
            "routing": layer.cfg.model_dump(mode="json"),
            "seed": layer.seed,
            "layer_id": layer.layer_id,
            "version": layer.version,
        }

        try:
            with open(path, "wb") as f:
                np.savez(f, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
        except OSError as e:
            raise ExportError(f"Could not write checkpoint ({e.strerror})", path) from e

        logger.info(f"Saved checkpoint: {path}")
        return path

    def load_checkpoint(self, path: Path) -> MoleLayer:
        """Rebuild a layer from ``save_checkpoint`` output"""
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(str(data["meta"]))
                if meta.get("format") != CHECKPOINT_FORMAT:
                    raise ExportError(f"Unsupported checkpoint format {meta.get('format')}", path)
                experts = [
                    LoraExpert(
                        a=data[f"experts.{i}.a"].copy(),
                        b=data[f"experts.{i}.b"].copy(),
                        scaling=meta["scaling"][i],
                    )
                    for i in range(meta["n_experts"])
                ]
                layer = MoleLayer(
                    w0=data["w0"].copy(),
                    router=Router(w_g=data["router.w_g"].copy()),
                    experts=experts,
                    cfg=RoutingConfig.model_validate(meta["routing"]),
                    seed=meta["seed"],
                    layer_id=meta["layer_id"],
                    version=meta["version"],
                )
        except (OSError, KeyError, ValueError) as e:
            raise ExportError(f"Could not read checkpoint ({e})", path) from e

        logger.info(f"Loaded checkpoint: {path}")
        return layer


# Global storage service instance
storage_service = StorageService()
