# "codec.py" from libRDGSPy by NinjaCheetah & Contributors
#
# See docs/bitstream.md for the GRDO container layout. Encoding removes pruned Gaussians, sorts the survivors into 8
# clusters by their SH-mask bits, entropy-codes the codebook indexes and opacities, and stores positions as float16.

import io
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ecvq import TAGS, TAG_DIMS, QuantizerBank, attribute_vectors, prune_codebook, select_batch, sh_degree_of
from .errors import (BadMagicError, ClusterStartsError, EmptySceneError, IndexRangeError, TruncatedStreamError,
                     UnsupportedVersionError)
from .gaussians import GaussianCloud, PARAMS_PER_GAUSSIAN
from .pruning import MaskSet
from .rangecoder import FrequencyTable, arithmetic_code, arithmetic_decode, quantize_counts
from .shared import sigmoid
from .sh import degree_slice
from .types import CompositionEntry

log = logging.getLogger(__name__)

MAGIC = b"GRDO"
FORMAT_VERSION = 1
CLUSTER_COUNT = 8
OPACITY_LEVELS = 256
F16_MAX = 65504.0
# magic, version, N', 8 cluster starts, alpha_min, step and 6 codebook sizes.
HEADER_SIZE = 4 + 1 + 4 + 4 * CLUSTER_COUNT + 4 + 4 + 4 * len(TAGS)
# Human-readable names of the index streams, in report order.
INDEX_CATEGORIES = {"scale": "Scales", "rotation": "Rotations", "dc": "Base colors", "sh1": "SHs of degree 1",
                    "sh2": "SHs of degree 2", "sh3": "SHs of degree 3", "opacity": "Opacities"}


def cluster_values(sh_hard: np.ndarray) -> np.ndarray:
    """
    Reads each Gaussian's SH hard masks (b1, b2, b3) for degrees 1..3 as the 3-bit integer 4*b1 + 2*b2 + b3.

    Parameters
    ----------
    sh_hard : np.ndarray
        N x 3 hard masks in {0, 1}.

    Returns
    -------
    np.ndarray
        N integers in [0, 7].
    """
    bits = (np.asarray(sh_hard) > 0).astype(np.int64).reshape(-1, 3)
    return 4 * bits[:, 0] + 2 * bits[:, 1] + bits[:, 2]


def degree_kept(value, degree: int):
    """
    Tells whether a cluster value keeps an SH degree (1..3).
    """
    return (np.asarray(value) >> (3 - degree)) & 1


def cluster_rows(starts, count: int, degree: int) -> np.ndarray:
    """
    Gets the rows of a rearranged cloud whose cluster keeps an SH degree, in ascending order.

    Parameters
    ----------
    starts : array-like
        The 8 cluster starts.
    count : int
        The number of Gaussians N'.
    degree : int
        The SH degree, 1..3.

    Returns
    -------
    np.ndarray
        The row indices.
    """
    bounds = list(starts) + [count]
    rows = [np.arange(bounds[v], bounds[v + 1]) for v in range(CLUSTER_COUNT) if degree_kept(v, degree)]
    return np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, dtype=np.int64)


def remove_pruned(cloud: GaussianCloud, masks: MaskSet) -> tuple[GaussianCloud, np.ndarray]:
    """
    Drops every Gaussian whose hard Gaussian mask is 0, keeping the order of the rest.

    Parameters
    ----------
    cloud : GaussianCloud
        The trained cloud.
    masks : MaskSet
        Its trained masks.

    Returns
    -------
    tuple[GaussianCloud, np.ndarray]
        The surviving Gaussians and their N' x 3 SH hard masks.
    """
    masks.check_size(cloud)
    keep = masks.gaussian_hard()[:, 0] > 0
    if not np.any(keep):
        raise EmptySceneError("Every Gaussian was pruned, so the scene is empty and cannot be encoded.")
    return cloud.subset(keep), masks.sh_hard()[keep]


def rearrange(survivors: GaussianCloud, sh_hard: np.ndarray) -> tuple[GaussianCloud, np.ndarray, np.ndarray]:
    """
    Sorts Gaussians into 8 clusters by their SH-mask integer, stably, so that the per-Gaussian masks can be replaced by
    the start index of every cluster.

    Parameters
    ----------
    survivors : GaussianCloud
        The surviving Gaussians.
    sh_hard : np.ndarray
        Their N' x 3 SH hard masks.

    Returns
    -------
    tuple[GaussianCloud, np.ndarray, np.ndarray]
        The reordered cloud, the 8 cluster starts (empty clusters take the start of the next one, or N') and the
        permutation that was applied.
    """
    values = cluster_values(sh_hard)
    order = np.argsort(values, kind="stable")
    starts = np.searchsorted(values[order], np.arange(CLUSTER_COUNT), side="left").astype(np.int64)
    return survivors.subset(order), starts, order


def quantize_opacities(alphas: np.ndarray) -> tuple[np.ndarray, float, float]:
    """
    Quantizes opacities to 256 uniform levels between their minimum and maximum.

    Parameters
    ----------
    alphas : np.ndarray
        N' activated opacities.

    Returns
    -------
    tuple[np.ndarray, float, float]
        The u8 levels, the minimum opacity and the step, both rounded to float32 since that is how they are stored.
        The stored minimum never exceeds the true one and the step is never negative.
    """
    alphas = np.asarray(alphas, dtype=np.float64).reshape(-1)
    low, high = float(alphas.min()), float(alphas.max())
    alpha_min = np.float32(low)
    if float(alpha_min) > low:
        alpha_min = np.nextafter(alpha_min, np.float32(-np.inf), dtype=np.float32)
    if high == low:
        return np.zeros(alphas.shape[0], dtype=np.uint8), float(alpha_min), 0.0
    step = np.float32(max(0.0, high - float(alpha_min)) / (OPACITY_LEVELS - 1))
    if step == 0:
        return np.zeros(alphas.shape[0], dtype=np.uint8), float(alpha_min), 0.0
    levels = np.round((alphas - np.float64(alpha_min)) / np.float64(step))
    return np.clip(levels, 0, OPACITY_LEVELS - 1).astype(np.uint8), float(alpha_min), float(step)


def dequantize_opacities(levels: np.ndarray, alpha_min: float, step: float) -> np.ndarray:
    """
    Turns opacity levels back into float32 opacity logits, alpha = alpha_min + q * step, computed in float32. All 256
    levels are evaluated together and then indexed, so a level always maps to the same logit.
    """
    alphas = np.float32(alpha_min) + np.arange(OPACITY_LEVELS, dtype=np.float32) * np.float32(step)
    alphas = np.clip(alphas, np.float32(1e-7), np.float32(1.0 - 1e-7))
    table = (np.log(alphas) - np.log1p(-alphas)).astype(np.float32)
    return table[np.asarray(levels, dtype=np.int64).reshape(-1)].reshape(-1, 1)


def _read(stream: io.BytesIO, size: int, section: str) -> bytes:
    data = stream.read(size)
    if len(data) != size:
        raise TruncatedStreamError(section, size, len(data))
    return data


@dataclass
class CompressedScene:
    """
    A CompressedScene object holds every section of a GRDO bitstream, and can be loaded from or dumped to bytes.

    Attributes
    ----------
    count : int
        The number of Gaussians N'.
    cluster_starts : np.ndarray
        The first row of each of the 8 SH-mask clusters.
    alpha_min : float
        The smallest opacity, as float32.
    alpha_step : float
        The opacity quantization step, as float32.
    codebooks : dict[str, np.ndarray]
        Pruned float32 codebooks, M x D, per tag.
    counts : dict[str, np.ndarray]
        u16 probability counts per codeword, per tag.
    streams : dict[str, bytes]
        Entropy-coded index streams per tag.
    opacity_counts : np.ndarray
        u16 counts of the 256 opacity levels.
    opacity_stream : bytes
        Entropy-coded opacity levels.
    positions : np.ndarray
        N' x 3 float16 positions.
    """
    count: int = 0
    cluster_starts: np.ndarray = field(default_factory=lambda: np.zeros(CLUSTER_COUNT, dtype=np.int64))
    alpha_min: float = 0.0
    alpha_step: float = 0.0
    codebooks: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)
    streams: dict = field(default_factory=dict)
    opacity_counts: np.ndarray = field(default_factory=lambda: np.zeros(OPACITY_LEVELS, dtype=np.uint16))
    opacity_stream: bytes = b""
    positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.float16))

    def stream_length(self, tag: str) -> int:
        """
        Gets the number of indexes in a tag's stream, derived from N' and the cluster starts.
        """
        degree = sh_degree_of(tag)
        if degree <= 0:
            return self.count
        return int(cluster_rows(self.cluster_starts, self.count, degree).size)

    def load(self, data: bytes) -> None:
        """
        Loads a GRDO bitstream and sets every section of the CompressedScene object. Index streams are not decoded
        here; see decode().

        Parameters
        ----------
        data : bytes
            The bitstream.
        """
        with io.BytesIO(data) as grdo_data:
            magic = grdo_data.read(4)
            if magic != MAGIC:
                raise BadMagicError("This is not a GRDO bitstream (magic " + repr(magic) + ").")
            version = int.from_bytes(_read(grdo_data, 1, "header"), "little")
            if version != FORMAT_VERSION:
                raise UnsupportedVersionError("GRDO format version " + str(version) + " is not supported, only " +
                                              str(FORMAT_VERSION) + " is.")
            header = _read(grdo_data, HEADER_SIZE - 5, "header")
            fields = struct.unpack("<I8Iff6I", header)
            self.count = fields[0]
            self.cluster_starts = np.array(fields[1:9], dtype=np.int64)
            self.alpha_min, self.alpha_step = fields[9], fields[10]
            sizes = dict(zip(TAGS, fields[11:17]))
            starts = self.cluster_starts
            if np.any(np.diff(starts) < 0) or starts[0] != 0 or starts[-1] > self.count:
                raise ClusterStartsError("Cluster starts " + str(starts.tolist()) + " are not nondecreasing from 0 "
                                         "within N' = " + str(self.count) + ".")
            self.codebooks, self.counts, self.streams = {}, {}, {}
            for tag in TAGS:
                size, dim = sizes[tag], TAG_DIMS[tag]
                payload = _read(grdo_data, size * dim * 4, "codebook " + tag)
                self.codebooks[tag] = np.frombuffer(payload, dtype="<f4").reshape(size, dim).astype(np.float32)
                payload = _read(grdo_data, size * 2, "counts " + tag)
                self.counts[tag] = np.frombuffer(payload, dtype="<u2").astype(np.uint16)
                length = int.from_bytes(_read(grdo_data, 4, "indexes " + tag), "little")
                self.streams[tag] = _read(grdo_data, length, "indexes " + tag)
            payload = _read(grdo_data, OPACITY_LEVELS * 2, "counts opacity")
            self.opacity_counts = np.frombuffer(payload, dtype="<u2").astype(np.uint16)
            length = int.from_bytes(_read(grdo_data, 4, "indexes opacity"), "little")
            self.opacity_stream = _read(grdo_data, length, "indexes opacity")
            payload = _read(grdo_data, self.count * 3 * 2, "positions")
            self.positions = np.frombuffer(payload, dtype="<f2").reshape(self.count, 3).astype(np.float16)
            trailing = len(grdo_data.read())
            if trailing:
                raise ValueError("The bitstream has " + str(trailing) + " unexpected bytes after the positions.")

    def dump(self) -> bytes:
        """
        Dumps the CompressedScene object back into a GRDO bitstream.

        Returns
        -------
        bytes
            The bitstream.
        """
        grdo_data = b''
        grdo_data += MAGIC
        grdo_data += int.to_bytes(FORMAT_VERSION, 1, "little")
        grdo_data += struct.pack("<I", self.count)
        grdo_data += struct.pack("<8I", *[int(s) for s in self.cluster_starts])
        grdo_data += struct.pack("<ff", self.alpha_min, self.alpha_step)
        grdo_data += struct.pack("<6I", *[self.codebooks[tag].shape[0] for tag in TAGS])
        for tag in TAGS:
            grdo_data += np.ascontiguousarray(self.codebooks[tag], dtype="<f4").tobytes()
            grdo_data += np.ascontiguousarray(self.counts[tag], dtype="<u2").tobytes()
            grdo_data += struct.pack("<I", len(self.streams[tag]))
            grdo_data += self.streams[tag]
        grdo_data += np.ascontiguousarray(self.opacity_counts, dtype="<u2").tobytes()
        grdo_data += struct.pack("<I", len(self.opacity_stream))
        grdo_data += self.opacity_stream
        grdo_data += np.ascontiguousarray(self.positions, dtype="<f2").tobytes()
        return grdo_data

    def size(self) -> int:
        return sum(entry.size for entry in self.composition())

    def index_composition(self) -> list[CompositionEntry]:
        """
        Breaks the index bytes down by attribute: every entropy-coded stream together with its 4-byte length.

        Returns
        -------
        list[CompositionEntry]
            One entry per attribute, proportions relative to all index bytes.
        """
        sizes = {tag: 4 + len(self.streams[tag]) for tag in TAGS}
        sizes["opacity"] = 4 + len(self.opacity_stream)
        total = sum(sizes.values())
        return [CompositionEntry(INDEX_CATEGORIES[tag], size, size / total if total else 0.0)
                for tag, size in sizes.items()]

    def composition(self) -> list[CompositionEntry]:
        """
        Breaks the bitstream down into header, indexes, codebooks, logits (probability tables) and positions. The
        sizes add up to the length of dump() exactly.

        Returns
        -------
        list[CompositionEntry]
            The five categories with their proportions of the file.
        """
        sizes = {
            "Header": HEADER_SIZE,
            "Indexes": sum(entry.size for entry in self.index_composition()),
            "Codebooks": sum(self.codebooks[tag].size * 4 for tag in TAGS),
            "Logits": sum(self.counts[tag].size * 2 for tag in TAGS) + self.opacity_counts.size * 2,
            "Positions": self.positions.size * 2,
        }
        total = sum(sizes.values())
        return [CompositionEntry(category, size, size / total) for category, size in sizes.items()]

    def bits_per_gaussian(self) -> float:
        return 8.0 * self.size() / self.count if self.count else 0.0

    def bitrate_ladder(self, original_count: int) -> list[CompositionEntry]:
        """
        Gets the size of the scene after each stage of the pipeline, starting from an uncompressed float32 model of
        original_count Gaussians. Proportions hold the saving of each row versus the previous one.

        Parameters
        ----------
        original_count : int
            The number of Gaussians before pruning.

        Returns
        -------
        list[CompositionEntry]
            Rows for the raw model, Gaussian removal, SH-degree removal, ECVQ with fixed-width indexes, and the final
            entropy-coded bitstream.
        """
        raw = original_count * PARAMS_PER_GAUSSIAN * 4
        removed = self.count * PARAMS_PER_GAUSSIAN * 4
        # Positions, log-scales, rotations, opacity and DC stay; each kept degree adds its coefficients.
        sh_trimmed = self.count * (3 + 3 + 4 + 1 + 3) * 4
        ecvq = self.count * (3 + 1) * 4
        for tag in TAGS:
            degree = sh_degree_of(tag)
            length = self.stream_length(tag)
            if degree > 0:
                sh_trimmed += length * TAG_DIMS[tag] * 4
            size = self.codebooks[tag].shape[0]
            index_bits = int(np.ceil(np.log2(size))) if size > 1 else 0
            ecvq += (length * index_bits + 7) // 8 + self.codebooks[tag].size * 4
        rows = [("3DGS", raw), ("Gaussian pruning", removed), ("Adaptive SH pruning", sh_trimmed), ("ECVQ", ecvq),
                ("Entropy coding", self.size())]
        ladder = []
        previous = None
        for category, size in rows:
            saving = 0.0 if previous is None or previous == 0 else 1.0 - size / previous
            ladder.append(CompositionEntry(category, int(size), saving))
            previous = size
        return ladder

    def to_cloud(self) -> GaussianCloud:
        """
        Decodes every index stream and rebuilds the quantized Gaussians.

        Returns
        -------
        GaussianCloud
            The decoded cloud in float32. SH degrees a cluster does not keep are zero.
        """
        n = self.count
        cloud = GaussianCloud(np.zeros((n, 3)))
        cloud.positions = self.positions.astype(np.float32)
        for tag in TAGS:
            length = self.stream_length(tag)
            codebook = self.codebooks[tag]
            if length and codebook.shape[0] == 0:
                raise IndexRangeError("The '" + tag + "' stream has " + str(length) + " indexes but no codebook.")
            indices = arithmetic_decode(self.streams[tag], FrequencyTable(self.counts[tag]), length) \
                if length else np.zeros(0, dtype=np.int64)
            if indices.size and (indices.min() < 0 or indices.max() >= codebook.shape[0]):
                raise IndexRangeError("The '" + tag + "' stream refers to codewords outside [0, " +
                                      str(codebook.shape[0]) + ").")
            values = codebook[indices]
            _place(cloud, tag, _tag_rows(self.cluster_starts, n, tag), values)
        levels = arithmetic_decode(self.opacity_stream, FrequencyTable(self.opacity_counts), n) if n else \
            np.zeros(0, dtype=np.int64)
        cloud.opacity_logits = dequantize_opacities(levels, self.alpha_min, self.alpha_step)
        return cloud

    def sh_hard(self) -> np.ndarray:
        """
        Recovers the N' x 3 SH hard masks from the cluster starts.
        """
        values = np.zeros(self.count, dtype=np.int64)
        bounds = list(self.cluster_starts) + [self.count]
        for v in range(CLUSTER_COUNT):
            values[bounds[v]:bounds[v + 1]] = v
        return np.stack([degree_kept(values, degree) for degree in (1, 2, 3)], axis=1).astype(np.float64)


def _tag_rows(starts, n: int, tag: str) -> np.ndarray:
    degree = sh_degree_of(tag)
    return np.arange(n) if degree <= 0 else cluster_rows(starts, n, degree)


def _place(cloud: GaussianCloud, tag: str, rows: np.ndarray, values: np.ndarray) -> None:
    if tag == "scale":
        cloud.log_scales[rows] = values
    elif tag == "rotation":
        cloud.rotations[rows] = values
    else:
        span = degree_slice(sh_degree_of(tag))
        cloud.sh_coeffs[rows, span, :] = values.reshape(rows.size, span.stop - span.start, 3)


def _first_rows(values: np.ndarray) -> np.ndarray:
    """
    For every row of values, gets the index of the first row with exactly the same bytes.
    """
    if len(values) == 0:
        return np.zeros(0, dtype=np.int64)
    values = np.ascontiguousarray(values).reshape(len(values), -1)
    seen = {}
    return np.array([seen.setdefault(row.tobytes(), i) for i, row in enumerate(values)], dtype=np.int64)


def _merge_duplicates(codewords: np.ndarray, probabilities: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Codewords that are equal once cast to float32 become one, so every stored value has a single index.
    first = _first_rows(codewords)
    keep = first == np.arange(first.size)
    merged = (np.cumsum(keep) - 1)[first]
    return codewords[keep], np.bincount(merged, weights=probabilities, minlength=int(keep.sum())), merged


def _lookup(values: np.ndarray, table: np.ndarray, what: str) -> np.ndarray:
    index = {}
    for i, row in enumerate(np.ascontiguousarray(table).reshape(len(table), -1)):
        index.setdefault(row.tobytes(), i)
    try:
        return np.array([index[row.tobytes()] for row in np.ascontiguousarray(values).reshape(len(values), -1)],
                        dtype=np.int64)
    except KeyError:
        raise ValueError("A " + what + " value of the cloud is not in the bitstream's table, so it cannot be "
                         "re-encoded against it.")


@dataclass
class EncodeResult:
    """
    Everything encode_model() produces.

    Attributes
    ----------
    data : bytes
        The GRDO bitstream.
    scene : CompressedScene
        The parsed sections of data.
    quantized : GaussianCloud
        The encoder-side quantized model. decode(data) reproduces it exactly.
    order : np.ndarray
        For each Gaussian of the bitstream, its row in the input cloud.
    offset : np.ndarray
        The translation subtracted from every position before the float16 cast (zero unless recentering).
    """
    data: bytes
    scene: CompressedScene
    quantized: GaussianCloud
    order: np.ndarray
    offset: np.ndarray


def encode_model(cloud: GaussianCloud, masks: MaskSet, bank: QuantizerBank, position_tolerance: float = 1e-2,
                 recenter: bool = False, threads: int = 1) -> EncodeResult:
    """
    Encodes a trained model into a GRDO bitstream.

    Parameters
    ----------
    cloud : GaussianCloud
        The trained cloud.
    masks : MaskSet
        Its trained masks.
    bank : QuantizerBank
        Its trained quantizers. Codebooks are fixed during encoding.
    position_tolerance : float
        A warning is logged when clamping to the float16 range moves a position by more than this.
    recenter : bool
        Whether to subtract the mean position before the float16 cast. Defaults to False.
    threads : int
        Number of worker threads for the independent index streams.

    Returns
    -------
    EncodeResult
        The bitstream together with the encoder-side quantized model.
    """
    survivors, sh_hard = remove_pruned(cloud, masks)
    survivor_rows = np.nonzero(masks.gaussian_hard()[:, 0] > 0)[0]
    ordered, starts, order = rearrange(survivors, sh_hard)
    n = ordered.count
    log.info("Encoding %d of %d Gaussians", n, cloud.count)
    scene = CompressedScene(count=n, cluster_starts=starts)
    quantized = GaussianCloud(np.zeros((n, 3)))

    def code_tag(tag):
        q = bank[tag]
        rows = _tag_rows(starts, n, tag)
        if rows.size == 0:
            return tag, np.zeros((0, TAG_DIMS[tag]), dtype=np.float32), np.zeros(0, dtype=np.uint16), b"", rows, None
        indices, _, _ = select_batch(attribute_vectors(ordered, tag)[rows], q.codebook, q.entropy_model, q.lam,
                                     bank.rd_selection)
        codebook, model, remap = prune_codebook(q.codebook, q.entropy_model, indices)
        codewords, probabilities, merged = _merge_duplicates(codebook.codewords.astype(np.float32),
                                                             model.probabilities())
        indices = merged[remap[indices]]
        counts = quantize_counts(probabilities)
        return tag, codewords, counts, arithmetic_code(indices, counts), rows, indices

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        coded = list(pool.map(code_tag, TAGS))
    for tag, codewords, counts, stream, rows, indices in coded:
        scene.codebooks[tag], scene.counts[tag], scene.streams[tag] = codewords, counts, stream
        if indices is not None:
            _place(quantized, tag, rows, codewords[indices])

    alphas = sigmoid(ordered.opacity_logits.astype(np.float64))[:, 0]
    levels, scene.alpha_min, scene.alpha_step = quantize_opacities(alphas)
    # Levels that dequantize to the same logit are written as the lowest of them.
    levels = _first_rows(dequantize_opacities(np.arange(OPACITY_LEVELS), scene.alpha_min,
                                              scene.alpha_step))[levels].astype(np.uint8)
    scene.opacity_counts = quantize_counts(np.bincount(levels, minlength=OPACITY_LEVELS))
    scene.opacity_stream = arithmetic_code(levels, scene.opacity_counts)
    quantized.opacity_logits = dequantize_opacities(levels, scene.alpha_min, scene.alpha_step)

    positions = ordered.positions.astype(np.float64)
    offset = positions.mean(axis=0) if recenter else np.zeros(3)
    positions = positions - offset
    clamped = np.clip(positions, -F16_MAX, F16_MAX)
    moved = float(np.max(np.abs(clamped - positions))) if n else 0.0
    if moved > position_tolerance:
        log.warning("Clamping positions to the float16 range moved a Gaussian by %g (tolerance %g)", moved,
                    position_tolerance)
    scene.positions = clamped.astype(np.float16)
    quantized.positions = scene.positions.astype(np.float32)

    data = scene.dump()
    log.info("Encoded %d Gaussians into %d bytes", n, len(data))
    return EncodeResult(data, scene, quantized, survivor_rows[order], offset)


def encode(cloud: GaussianCloud, masks: MaskSet, bank: QuantizerBank, position_tolerance: float = 1e-2,
           recenter: bool = False, threads: int = 1) -> bytes:
    """
    Encodes a trained model and returns only the bitstream. See encode_model().
    """
    return encode_model(cloud, masks, bank, position_tolerance, recenter, threads).data


def decode(data: bytes) -> GaussianCloud:
    """
    Decodes a GRDO bitstream into its quantized Gaussians.

    Parameters
    ----------
    data : bytes
        The bitstream.

    Returns
    -------
    GaussianCloud
        The decoded cloud, identical to the encoder-side quantized model.
    """
    scene = CompressedScene()
    scene.load(data)
    return scene.to_cloud()


def reencode(cloud: GaussianCloud, reference: CompressedScene, threads: int = 1) -> bytes:
    """
    Encodes a decoded cloud against the tables of the bitstream it came from: its cluster starts, codebooks,
    probability counts and opacity range. Every attribute is looked up exactly instead of being selected again, so
    for a bitstream written by encode(), reencode(decode(data), scene) returns data byte for byte.

    Parameters
    ----------
    cloud : GaussianCloud
        The decoded cloud, in bitstream order.
    reference : CompressedScene
        The parsed bitstream the cloud was decoded from.
    threads : int
        Number of worker threads for the independent index streams.

    Returns
    -------
    bytes
        The bitstream.
    """
    n = reference.count
    if cloud.count != n:
        raise ValueError("The cloud has " + str(cloud.count) + " Gaussians, but the bitstream holds " + str(n) + ".")
    scene = CompressedScene(count=n, cluster_starts=reference.cluster_starts.copy(), alpha_min=reference.alpha_min,
                            alpha_step=reference.alpha_step, opacity_counts=reference.opacity_counts.copy())

    def code_tag(tag):
        rows = _tag_rows(reference.cluster_starts, n, tag)
        if rows.size == 0:
            return tag, b""
        vectors = attribute_vectors(cloud, tag)[rows].astype(np.float32)
        return tag, arithmetic_code(_lookup(vectors, reference.codebooks[tag], tag), reference.counts[tag])

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        coded = dict(pool.map(code_tag, TAGS))
    for tag in TAGS:
        scene.codebooks[tag] = reference.codebooks[tag].copy()
        scene.counts[tag] = reference.counts[tag].copy()
        scene.streams[tag] = coded[tag]
    table = dequantize_opacities(np.arange(OPACITY_LEVELS), reference.alpha_min, reference.alpha_step)
    levels = _lookup(cloud.opacity_logits.astype(np.float32), table, "opacity")
    scene.opacity_stream = arithmetic_code(levels, scene.opacity_counts)
    scene.positions = cloud.positions.astype(np.float16)
    return scene.dump()


def transcode(data: bytes) -> bytes:
    """
    Parses a bitstream and writes it back out. The result is byte-identical to the input for any valid bitstream.
    """
    scene = CompressedScene()
    scene.load(data)
    scene.to_cloud()
    return scene.dump()
