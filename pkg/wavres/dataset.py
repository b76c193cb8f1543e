"""
Dataset - synthetic routine/quarter-dose pairs, the manifest, and
coefficient-space training patches

Seed splitting: the master seed feeds a numpy SeedSequence that is spawned
once per pair; each child yields three 32-bit words (phantom, routine
noise, quarter noise). Pairs are therefore independent of each other and
of the order they are produced in.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .config import TrainingConfig
from .core_image import grid_positions, load_image, save_image
from .ct_sim import (
    GeometryConfig,
    SimConfig,
    fbp_reconstruct,
    forward_project,
    inject_low_dose_noise,
    random_phantom,
    rasterize_phantom,
    relative_to_hu,
    save_sinogram,
    shepp_logan,
    to_hu,
)
from .errors import ConfigError, DimensionError, FormatError
from .filters import FilterBank, default_filter_bank
from .nsct import nsct_forward

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"


def progress_enabled() -> bool:
    return os.getenv("WAVRES_PROGRESS", "1") != "0"


@dataclass
class ManifestEntry:
    """One routine/quarter pair; paths are resolved against the manifest directory"""
    routine: Path
    quarter: Path
    provenance: Dict[str, str] = field(default_factory=dict)

    def load_pair(self) -> Tuple[np.ndarray, np.ndarray]:
        routine = load_image(self.routine)
        quarter = load_image(self.quarter)
        if routine.ndim != 2 or routine.shape != quarter.shape:
            raise DimensionError(
                f"pair {self.routine.name}/{self.quarter.name}: shapes {routine.shape} and {quarter.shape}"
            )
        return routine, quarter

    def artifact(self, key: str) -> Path:
        """Path of an extra artifact recorded in the provenance (clean, clean_fbp, ...)"""
        if key not in self.provenance:
            raise FormatError(f"pair {self.routine.name} has no '{key}' artifact", offset=0)
        return self.routine.parent / self.provenance[key]

    @property
    def name(self) -> str:
        return self.provenance.get("pair", self.routine.stem)


@dataclass
class DatasetManifest:
    entries: List[ManifestEntry] = field(default_factory=list)
    path: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int) -> ManifestEntry:
        return self.entries[index]

    def subset(self, indices: Sequence[int]) -> "DatasetManifest":
        return DatasetManifest([self.entries[i] for i in indices], self.path)

    def validate(self) -> "DatasetManifest":
        """Every referenced file exists, parses and pairs match in size"""
        for entry in self.entries:
            for path in (entry.routine, entry.quarter):
                if not path.exists():
                    raise ConfigError(f"manifest references missing file {path}")
            entry.load_pair()
        return self


def write_manifest(manifest: DatasetManifest, path) -> Path:
    """routine <TAB> quarter <TAB> space-separated key=value provenance"""
    path = Path(path)
    lines = ["# routine\tquarter\tprovenance"]
    for entry in manifest.entries:
        provenance = " ".join(f"{k}={v}" for k, v in entry.provenance.items())
        lines.append(f"{os.path.relpath(entry.routine, path.parent)}\t"
                     f"{os.path.relpath(entry.quarter, path.parent)}\t{provenance}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest.path = path
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"manifest {path} not found")
    entries = []
    offset = 0
    raw = path.read_bytes()
    for line in raw.decode("utf-8").splitlines(keepends=True):
        text = line.strip()
        if text and not text.startswith("#"):
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) < 2:
                raise FormatError(f"{path.name}: expected routine<TAB>quarter", offset=offset)
            provenance = {}
            for token in (parts[2].split() if len(parts) > 2 else []):
                key, sep, value = token.partition("=")
                if not sep:
                    raise FormatError(f"{path.name}: provenance token '{token}' is not key=value", offset=offset)
                provenance[key] = value
            entries.append(ManifestEntry(path.parent / parts[0], path.parent / parts[1], provenance))
        offset += len(line.encode("utf-8"))
    return DatasetManifest(entries, path)


class DatasetSynthesizer:
    """Phantom -> projection -> two dose levels of noise -> FBP, written as WIMG files"""

    def __init__(self, geometry: GeometryConfig, sim: Optional[SimConfig] = None,
                 logger: Optional[logging.Logger] = None):
        self.geometry = geometry.validate()
        self.sim = (sim or SimConfig()).validate()
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def pair_seeds(self, n_phantoms: int, seed: int) -> List[Tuple[int, int, int]]:
        children = np.random.SeedSequence(seed).spawn(n_phantoms)
        return [tuple(int(word) for word in child.generate_state(3)) for child in children]

    def make_pair(self, index: int, seeds: Tuple[int, int, int], out_dir: Path) -> ManifestEntry:
        phantom_seed, routine_seed, quarter_seed = seeds
        sim = self.sim
        size = self.geometry.image_size
        if sim.phantom == "shepp-logan":
            phantom = shepp_logan()
        else:
            phantom = random_phantom(np.random.default_rng(phantom_seed))
        relative = rasterize_phantom(phantom, size)

        clean_sino = forward_project(relative * sim.attenuation_scale, self.geometry)
        i0_quarter = sim.i0_routine * sim.dose_fraction
        routine_sino = inject_low_dose_noise(clean_sino, sim.i0_routine, routine_seed)
        quarter_sino = inject_low_dose_noise(clean_sino, i0_quarter, quarter_seed)

        stem = f"pair{index:03d}"
        names = {
            "clean": f"{stem}_clean.wimg",
            "clean_fbp": f"{stem}_clean_fbp.wimg",
            "routine": f"{stem}_routine.wimg",
            "quarter": f"{stem}_quarter.wimg",
            "routine_sino": f"{stem}_routine_sino.wimg",
            "quarter_sino": f"{stem}_quarter_sino.wimg",
        }
        save_image(out_dir / names["clean"], relative_to_hu(relative))
        save_image(out_dir / names["clean_fbp"], to_hu(fbp_reconstruct(clean_sino, sim.filter), sim))
        save_image(out_dir / names["routine"], to_hu(fbp_reconstruct(routine_sino, sim.filter), sim))
        save_image(out_dir / names["quarter"], to_hu(fbp_reconstruct(quarter_sino, sim.filter), sim))
        save_sinogram(out_dir / names["routine_sino"], routine_sino, {"i0": repr(float(sim.i0_routine))})
        save_sinogram(out_dir / names["quarter_sino"], quarter_sino, {"i0": repr(float(i0_quarter))})

        provenance = {
            "pair": stem,
            "phantom": sim.phantom,
            "phantom_seed": phantom_seed,
            "routine_seed": routine_seed,
            "quarter_seed": quarter_seed,
            "i0_routine": repr(float(sim.i0_routine)),
            "i0_quarter": repr(float(i0_quarter)),
            "geometry": Path(names["routine_sino"]).with_suffix(".geom").name,
            "clean": names["clean"],
            "clean_fbp": names["clean_fbp"],
            "routine_sino": names["routine_sino"],
            "quarter_sino": names["quarter_sino"],
        }
        return ManifestEntry(out_dir / names["routine"], out_dir / names["quarter"],
                             {k: str(v) for k, v in provenance.items()})

    def run(self, n_phantoms: int, seed: int, out_dir) -> DatasetManifest:
        if n_phantoms < 1:
            raise ConfigError(f"need at least one phantom, got {n_phantoms}")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        seeds = self.pair_seeds(n_phantoms, seed)
        entries = [
            self.make_pair(index, pair_seeds, out_dir)
            for index, pair_seeds in enumerate(tqdm(seeds, desc="Synthesizing pairs",
                                                    disable=not progress_enabled()))
        ]
        manifest = DatasetManifest(entries)
        write_manifest(manifest, out_dir / MANIFEST_NAME)
        self.logger.info(f"Wrote {n_phantoms} pairs to {out_dir}")
        return manifest


def synth_dataset(n_phantoms: int, size: int, geometry: Optional[GeometryConfig] = None,
                  i0_routine: Optional[float] = None, seed: int = 2017, out_dir="dataset",
                  sim: Optional[SimConfig] = None) -> DatasetManifest:
    geometry = geometry or GeometryConfig.for_image(size)
    if geometry.image_size != size:
        raise DimensionError(f"geometry reconstructs {geometry.image_size}x{geometry.image_size}, asked for {size}")
    sim = sim or SimConfig()
    if i0_routine is not None:
        sim = replace(sim, i0_routine=float(i0_routine))
    return DatasetSynthesizer(geometry, sim).run(n_phantoms, seed, out_dir)


class TrainingSet:
    """Full-image transforms of every pair, cut into aligned patches on demand.

    Inputs and labels are divided by the intensity scale before they are
    stored, so they are in network units.
    """

    def __init__(self, inputs: List[np.ndarray], labels: List[np.ndarray], config: TrainingConfig):
        if len(inputs) != len(labels) or not inputs:
            raise ConfigError("training set needs at least one input/label pair")
        self.inputs = inputs
        self.labels = labels
        self.config = config
        self.positions: List[Tuple[int, int, int]] = []
        for source, stack in enumerate(inputs):
            _, height, width = stack.shape
            self.positions.extend((source, r, c) for r, c in
                                  grid_positions(height, width, config.patch_size, config.patch_stride))
        self._rng = np.random.default_rng(config.seed)
        self._order = np.empty(0, dtype=np.int64)
        self._cursor = 0
        self.epoch = 0

    def __len__(self) -> int:
        return len(self.positions)

    def patch(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        source, r, c = self.positions[index]
        p = self.config.patch_size
        window = (slice(None), slice(r, r + p), slice(c, c + p))
        return self.inputs[source][window], self.labels[source][window]

    def _next_index(self) -> int:
        if self._cursor >= len(self._order):
            self._order = self._rng.permutation(len(self.positions))
            self._cursor = 0
            self.epoch += 1
        index = int(self._order[self._cursor])
        self._cursor += 1
        return index

    def next_batch(self, batch_size: int) -> Tuple[np.ndarray, np.ndarray]:
        """(inputs, labels), each (batch, bands, p, p), drawn without replacement within an epoch"""
        pairs = [self.patch(self._next_index()) for _ in range(batch_size)]
        return np.stack([x for x, _ in pairs]), np.stack([y for _, y in pairs])

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        """One shuffled epoch of (input patch, label patch)"""
        order = np.random.default_rng(self.config.seed).permutation(len(self.positions))
        for index in order:
            yield self.patch(int(index))


def build_training_set(manifest: DatasetManifest, config: TrainingConfig,
                       bank: Optional[FilterBank] = None) -> TrainingSet:
    """X' = T(quarter); Y' = T(routine) - X' (residual) or T(routine) (direct)"""
    config.validate()
    if len(manifest) == 0:
        raise ConfigError("manifest has no pairs")
    bank = bank or default_filter_bank()
    scale = config.intensity_scale
    inputs, labels = [], []
    for entry in manifest.entries:
        routine, quarter = entry.load_pair()
        x = nsct_forward(quarter, config.decomposition, bank).bands / scale
        y = nsct_forward(routine, config.decomposition, bank).bands / scale
        if config.target_mode == "residual":
            y = y - x
        if config.lowband_mode == "bypass":
            # lowpass is copied from the input at inference, not learned
            y[0] = 0.0
        inputs.append(x)
        labels.append(y)
    training_set = TrainingSet(inputs, labels, config)
    logger.info(f"Training set: {len(manifest)} pairs, {len(training_set)} patches "
                f"of {config.patch_size}x{config.patch_size} ({config.target_mode} labels)")
    return training_set
