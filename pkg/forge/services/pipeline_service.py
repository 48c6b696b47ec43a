from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from ..config import PipelineConfig, config_hash, derive_seed
from ..errors import ConfigError, DataError, EmptyInventoryError, StageMissingError
from ..models import BuildingRecord, ClusterModel, EuiRecord, Heightmap
from ..utils.imaging import svg_scatter, tile_sheet, write_pgm
from ..utils.tables import read_config_hash, read_csv, write_csv
from . import cluster_service, energy_service, raster_service, vqae_service
from .inventory_service import InventoryService

logger = logging.getLogger(__name__)

STAGES = ("ingest", "rasterize", "train", "cluster", "archetypes", "energy")


def _write_json(path: Path, payload: Dict[str, Any]) -> Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def artifact_hash(path: Path) -> Optional[str]:
    """Config hash recorded inside an artifact, whatever its format."""
    suffix = path.suffix
    if suffix == ".csv":
        return read_config_hash(path)
    if suffix in (".json", ".geojson"):
        return json.loads(path.read_text(encoding="utf-8")).get("config_hash")
    if suffix == ".ckpt":
        return vqae_service.read_checkpoint_header(path).get("config_hash")
    return None


def emit_reconstruction_sheet(model: vqae_service.VqAutoencoder, samples: Sequence[Heightmap],
                              path: Path, config_hash: Optional[str] = None) -> List[Path]:
    """Originals on the first row, reconstructions on the second, plus a JSON sidecar."""
    if not samples:
        raise DataError("reconstruction sheet needs at least one sample")
    x = vqae_service.to_batch(samples)
    with torch.no_grad():
        x_hat = vqae_service.forward(model, x).x_hat[:, 0].numpy()
    sheet = tile_sheet([[m.pixels for m in samples], list(x_hat)])
    comment = f"config_hash: {config_hash}" if config_hash else None
    pgm = write_pgm(Path(path), sheet, comment)

    pair_mse = vqae_service.pair_errors(model, samples)
    sidecar: Dict[str, Any] = {
        "samples": [m.building_id for m in samples],
        "pair_mse": pair_mse,
        "mean_pair_mse": float(np.mean(pair_mse)),
        "rows": 2,
        "columns": len(samples),
    }
    if config_hash:
        sidecar["config_hash"] = config_hash
    return [pgm, _write_json(pgm.with_suffix(".json"), sidecar)]


class Pipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.paths.output_dir)
        self.config_hash = config_hash(config)
        self.out.mkdir(parents=True, exist_ok=True)

    # ---------- plumbing ----------

    def path(self, name: str) -> Path:
        return self.out / name

    def _comment(self) -> str:
        return f"config_hash: {self.config_hash}"

    def _require(self, stage: str, name: str, prerequisite: str) -> Path:
        path = self.path(name)
        if not path.exists():
            raise StageMissingError(stage, name, prerequisite)
        recorded = artifact_hash(path)
        if recorded is not None and recorded != self.config_hash:
            logger.warning("%s was written under config %s, current config is %s",
                           name, recorded[:12], self.config_hash[:12])
        return path

    def _records(self, stage: str) -> List[BuildingRecord]:
        path = self._require(stage, "inventory.geojson", "ingest")
        service = InventoryService(self.config.storey_height_m, self.config.zone_name)
        records, _ = service.load_buildings(path)
        return records

    def _dataset(self, stage: str, records: Sequence[BuildingRecord]) -> Tuple[List[Heightmap], List[Heightmap]]:
        manifest = read_csv(self._require(stage, "manifest.csv", "rasterize"))
        maps = raster_service.rasterize_all(records, self.config.grid, self.config.height_bin_m)
        return raster_service.split_from_manifest(maps, manifest)

    def _corpus(self, stage: str) -> Tuple[List[BuildingRecord], List[Heightmap], vqae_service.VqAutoencoder]:
        """Records, heightmaps in inventory order, and the trained model."""
        records = self._records(stage)
        train, test = self._dataset(stage, records)
        model = vqae_service.load_checkpoint(self._require(stage, "model.ckpt", "train"))
        keep = {m.building_id: m for m in (*train, *test)}
        maps = [keep[r.id] for r in records if r.id in keep]
        return records, maps, model

    def _points(self, maps: Sequence[Heightmap], model: vqae_service.VqAutoencoder) -> np.ndarray:
        codes = vqae_service.encode_all(maps, model, quantized=self.config.cluster.use_quantized)
        return np.stack([c.embedding for c in codes])

    # ---------- stages ----------

    def ingest(self) -> List[Path]:
        inventory = self.config.paths.inventory
        if inventory is None:
            raise ConfigError("paths.inventory is required for ingest")
        service = InventoryService(self.config.storey_height_m, self.config.zone_name)
        summary_path = self.path("inventory_summary.json")
        try:
            records, summary = service.load_buildings(inventory, self.config.land_use_filter)
        except EmptyInventoryError as e:
            if e.summary is not None:
                _write_json(summary_path, {**e.summary.model_dump(mode="json"), "config_hash": self.config_hash})
            raise
        geojson = service.dump_buildings(records, self.path("inventory.geojson"), self.config_hash)
        _write_json(summary_path, {**summary.model_dump(mode="json"), "config_hash": self.config_hash})
        logger.info("ingest: %d of %d buildings are residential (%.1f%%)", summary.residential_count,
                    summary.total_count, 100.0 * summary.residential_fraction)
        return [geojson, summary_path]

    def rasterize(self) -> List[Path]:
        records = self._records("rasterize")
        train, test = raster_service.build_dataset(
            records, self.config.grid, self.config.test_fraction,
            derive_seed(self.config.seed, "rasterize"), self.config.height_bin_m,
        )
        directory = self.path("heightmaps")
        directory.mkdir(exist_ok=True)
        for stale in directory.glob("*.pgm"):
            stale.unlink()
        written = raster_service.write_heightmaps(directory, [*train, *test], self.config_hash)
        manifest = raster_service.write_manifest(self.path("manifest.csv"), train, test, self.config_hash)
        logger.info("rasterize: %d train / %d test heightmaps", len(train), len(test))
        return [*written, manifest]

    def train(self) -> List[Path]:
        records = self._records("train")
        train, test = self._dataset("train", records)
        vq = self.config.vq.model_copy(update={"seed": derive_seed(self.config.seed, "train")})
        model, curves = vqae_service.train(train, test, vq)

        ckpt = vqae_service.save_checkpoint(model, self.path("model.ckpt"), self.config_hash)
        frame = pd.DataFrame({
            "epoch": np.arange(1, len(curves) + 1),
            "train_mse": curves.train_mse,
            "test_mse": curves.test_mse,
        })
        curves_path = write_csv(self.path("curves.csv"), frame, self.config_hash)
        samples = [*test, *train][: self.config.sheet_samples]
        sheet = emit_reconstruction_sheet(model, samples, self.path("reconstruction_sheet.pgm"), self.config_hash)
        logger.info("train: final train_mse=%.6f test_mse=%.6f", curves.train_mse[-1], curves.test_mse[-1])
        return [ckpt, curves_path, *sheet]

    def cluster(self) -> List[Path]:
        cfg = self.config.cluster
        records, maps, model = self._corpus("cluster")
        points = self._points(maps, model)
        ids = [m.building_id for m in maps]
        seed = derive_seed(self.config.seed, "cluster")
        distinct = np.unique(points, axis=0).shape[0]
        k_hi = min(cfg.k_max, distinct)

        if cfg.k is not None:
            k, chosen_by = cfg.k, "fixed"
            ks = list(range(cfg.k_min, k_hi + 1)) or [k]
            curve = [cluster_service.fit_best(points, kk, seed, cfg.restarts, cfg.max_iter, cfg.tol).wcss
                     for kk in ks]
        else:
            chosen_by = "elbow"
            k, curve = cluster_service.choose_k_wcss(points, cfg.k_min, k_hi, seed, cfg.restarts,
                                                     cfg.max_iter, cfg.tol)
            ks = list(range(cfg.k_min, k_hi + 1))
        fitted = cluster_service.fit_best(points, k, seed, cfg.restarts, cfg.max_iter, cfg.tol)

        assignments = write_csv(self.path("assignments.csv"),
                                pd.DataFrame({"building_id": ids, "cluster": fitted.assignments}),
                                self.config_hash)
        wcss = write_csv(self.path("wcss.csv"), pd.DataFrame({"k": ks, "wcss": curve}), self.config_hash)

        try:
            xy = cluster_service.project_2d(points)
        except DataError as e:
            logger.warning("scatter projection skipped: %s", e.detail)
            xy = np.zeros((len(ids), 2))
        sampled = set(cluster_service.sample_archetype(fitted, points, ids))
        marked = [i for i, b in enumerate(ids) if b in sampled]
        scatter = self.path("scatter.svg")
        scatter.write_text(svg_scatter(xy, fitted.assignments, marked,
                                       title=f"k-means, k={k} (PCA projection)",
                                       comment=self._comment()), encoding="utf-8")

        labels = {r.id: r.label for r in records}
        ari = None
        if all(labels[b] is not None for b in ids):
            ari = cluster_service.adjusted_rand_index([labels[b] for b in ids], fitted.assignments)
            logger.info("cluster: adjusted Rand index vs reference labels %.3f", ari)

        summary = _write_json(self.path("cluster_model.json"), {
            "config_hash": self.config_hash,
            "k": k,
            "chosen_by": chosen_by,
            "seed": fitted.seed,
            "wcss": fitted.wcss,
            "n_iter": fitted.n_iter,
            "wcss_history": list(fitted.wcss_history),
            "centroids": fitted.centroids.tolist(),
            "latent": "quantized" if cfg.use_quantized else "continuous",
            "codebook_usage": vqae_service.codebook_usage(vqae_service.encode_all(maps, model)),
            "projection": {"method": cluster_service.PROJECTION_METHOD,
                           "note": "linear substitute for UMAP; visualization only"},
            "adjusted_rand_index": ari,
        })
        logger.info("cluster: k=%d (%s), wcss=%.6g", k, chosen_by, fitted.wcss)
        return [assignments, wcss, scatter, summary]

    def _cluster_model(self, stage: str, ids: Sequence[str]) -> ClusterModel:
        frame = read_csv(self._require(stage, "assignments.csv", "cluster"))
        meta = json.loads(self._require(stage, "cluster_model.json", "cluster").read_text(encoding="utf-8"))
        by_id = dict(zip(frame["building_id"], frame["cluster"]))
        missing = [b for b in ids if b not in by_id]
        if missing:
            raise DataError(f"assignments.csv has no cluster for {len(missing)} buildings, e.g. {missing[0]}")
        return ClusterModel(
            k=int(meta["k"]),
            centroids=np.asarray(meta["centroids"], dtype=np.float64),
            assignments=np.asarray([by_id[b] for b in ids], dtype=np.int64),
            wcss=float(meta["wcss"]),
            seed=int(meta["seed"]),
            n_iter=int(meta.get("n_iter", 0)),
            wcss_history=tuple(meta.get("wcss_history", ())),
        )

    def archetypes(self) -> List[Path]:
        records, maps, model = self._corpus("archetypes")
        ids = [m.building_id for m in maps]
        fitted = self._cluster_model("archetypes", ids)
        points = self._points(maps, model)
        by_id = {r.id: r for r in records}
        archetypes = cluster_service.build_archetype_set(
            fitted, points, ids, {r.id: r.floor_area_m2 for r in records}, model)
        map_by_id = {m.building_id: m for m in maps}

        for stale in self.out.glob("cluster_*_avg.pgm"):
            stale.unlink()
        written: List[Path] = []
        rows, details = [], []
        for a in archetypes:
            written.append(write_pgm(self.path(f"cluster_{a.cluster}_avg.pgm"), a.averaged_heightmap,
                                     self._comment()))
            sampled_map = map_by_id[a.sampled_member_id]
            sampled_recon = vqae_service.decode(
                vqae_service.encode_all([sampled_map], model)[0].embedding, model)
            rows.append({
                "cluster": a.cluster,
                "archetype_id": energy_service.archetype_id(a.cluster),
                "sampled_member_id": a.sampled_member_id,
                "member_count": len(a.member_ids),
                "member_total_floor_area_m2": a.member_total_floor_area_m2,
            })
            details.append({
                "cluster": a.cluster,
                "sampled_member_id": a.sampled_member_id,
                "member_ids": list(a.member_ids),
                "averaged_entropy": cluster_service.blur_entropy(a.averaged_heightmap),
                "sampled_entropy": cluster_service.blur_entropy(sampled_recon),
            })
        written.append(write_csv(self.path("archetypes.csv"), pd.DataFrame(rows), self.config_hash))
        written.append(_write_json(self.path("archetypes.json"),
                                   {"config_hash": self.config_hash, "archetypes": details}))

        sheet = tile_sheet([[map_by_id[a.sampled_member_id].pixels for a in archetypes],
                            [a.averaged_heightmap for a in archetypes]])
        written.append(write_pgm(self.path("archetype_sheet.pgm"), sheet, self._comment()))

        if all(by_id[b].measured_eui_kwh_m2 is not None for b in ids):
            written.extend(self._eui_stand_ins(archetypes, by_id, map_by_id))
        logger.info("archetypes: %d clusters written", len(archetypes))
        return written

    def _eui_stand_ins(self, archetypes, by_id, map_by_id) -> List[Path]:
        """Measured EUI of the sampled member, and of the member whose heightmap
        is closest to the averaged decode."""
        sampled, averaged = [], []
        for a in archetypes:
            aid = energy_service.archetype_id(a.cluster)
            sampled.append(EuiRecord(archetype_id=aid, eui_kwh_per_m2=by_id[a.sampled_member_id].measured_eui_kwh_m2))
            errors = {m: float(np.mean((map_by_id[m].pixels - a.averaged_heightmap) ** 2)) for m in a.member_ids}
            best = min(errors.values())
            nearest = min(m for m, e in errors.items() if e == best)
            averaged.append(EuiRecord(archetype_id=aid, eui_kwh_per_m2=by_id[nearest].measured_eui_kwh_m2))
        return [
            energy_service.write_eui_table(self.path("eui_sampled.csv"), sampled, self.config_hash),
            energy_service.write_eui_table(self.path("eui_averaged.csv"), averaged, self.config_hash),
        ]

    def _eui_table(self, configured: Optional[Path], name: str) -> List[EuiRecord]:
        if configured is not None:
            return energy_service.load_eui_table(configured)
        return energy_service.load_eui_table(self._require("energy", name, "archetypes"))

    def energy(self) -> List[Path]:
        paths = self.config.paths
        if paths.estimates is not None:
            report = energy_service.compare_totals(energy_service.load_estimates(paths.estimates),
                                                   config_hash=self.config_hash)
            return energy_service.write_report(self.out, report)

        if paths.eui_baseline is None:
            raise ConfigError("paths.eui_baseline is required for energy (or paths.estimates)")
        records = self._records("energy")
        frame = read_csv(self._require("energy", "assignments.csv", "cluster"))
        labels = {str(b): int(c) for b, c in zip(frame["building_id"], frame["cluster"])}
        kept = [r for r in records if r.id in labels]
        if len(kept) < len(records):
            logger.warning("energy: %d buildings have no archetype and are left out", len(records) - len(kept))

        baseline = energy_service.load_eui_table(paths.eui_baseline)
        sampled = self._eui_table(paths.eui_sampled, "eui_sampled.csv")
        averaged = self._eui_table(paths.eui_averaged, "eui_averaged.csv")
        if paths.actuals is not None:
            actuals = energy_service.load_actuals(paths.actuals, kept)
        else:
            actuals = energy_service.actuals_from_measured(kept)

        zones = []
        for zone, members in energy_service.split_by_zone(kept).items():
            if zone not in actuals:
                raise DataError(f"no actual energy for zone '{zone}'")
            zones.append(energy_service.ZoneInput(zone, members, labels, baseline, sampled, averaged, actuals[zone]))
        report = energy_service.compare_report(zones, self.config_hash)
        return energy_service.write_report(self.out, report)

    def all(self) -> List[Path]:
        written: List[Path] = []
        for stage in STAGES:
            written.extend(self.run(stage))
        return written

    def run(self, stage: str) -> List[Path]:
        handlers: Dict[str, Callable[[], List[Path]]] = {s: getattr(self, s) for s in (*STAGES, "all")}
        if stage not in handlers:
            raise ConfigError(f"unknown stage '{stage}'")
        if stage != "all":
            logger.info("stage %s -> %s", stage, self.out)
        return handlers[stage]()


def run(subcommand: str, config: PipelineConfig) -> List[Path]:
    return Pipeline(config).run(subcommand)
