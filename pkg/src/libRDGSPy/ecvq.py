# "ecvq.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Entropy-constrained vector quantization. Every quantized attribute has a codebook and an unconditional entropy model
# (a softmax over unnormalized logits), and codewords are picked by the rate-distortion cost
#
#     cost(m) = -log(p_m) / lambda + |x - CB[m]|^2
#
# rather than by distance alone. Rates are in nats.

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import EmptyCodebookError, IndexRangeError, ShapeMismatchError
from .gaussians import GaussianCloud, SH_COEFFS
from .pruning import MaskSet
from .shared import chunk_rows
from .sh import degree_slice
from .types import AttributeView, CloudGradients

log = logging.getLogger(__name__)

# Quantized attributes, in bitstream order.
TAGS = ("scale", "rotation", "dc", "sh1", "sh2", "sh3")
TAG_DIMS = {"scale": 3, "rotation": 4, "dc": 3, "sh1": 9, "sh2": 15, "sh3": 21}
DEFAULT_LAMBDAS = {"scale": 32768.0, "rotation": 256.0, "dc": 256.0, "sh1": 256.0, "sh2": 256.0, "sh3": 256.0}
DEFAULT_SIZES = {"scale": 8192, "rotation": 8192, "dc": 8192, "sh1": 4096, "sh2": 4096, "sh3": 4096}


def scaled_codebook_size(requested: int, vectors: int) -> int:
    """
    Shrinks a requested codebook size to fit the number of vectors it will quantize: at most
    max(ceil(sqrt(V)), V // 128) codewords for V vectors. Scenes with millions of Gaussians keep the requested size,
    while desk-sized ones get codebooks small enough that every codeword is shared.

    Parameters
    ----------
    requested : int
        The configured codebook size.
    vectors : int
        The number of vectors to quantize.

    Returns
    -------
    int
        The codebook size to use, at least 1.
    """
    cap = max(int(np.ceil(np.sqrt(max(0, vectors)))), vectors // 128)
    return max(1, min(int(requested), cap))


def _check_tag(tag: str) -> None:
    if tag not in TAG_DIMS:
        raise ValueError("Unknown attribute tag '" + str(tag) + "'. Valid tags are: " + ", ".join(TAGS) + ".")


def sh_degree_of(tag: str) -> int:
    """
    Gets the SH degree a tag quantizes: 0 for "dc", 1..3 for "sh1".."sh3", and -1 for the geometric tags.
    """
    return {"dc": 0, "sh1": 1, "sh2": 2, "sh3": 3}.get(tag, -1)


class Codebook:
    """
    A Codebook object holds the M codewords of one quantized attribute.

    Attributes
    ----------
    tag : str
        The attribute tag, one of "scale", "rotation", "dc", "sh1", "sh2" and "sh3".
    codewords : np.ndarray
        M x D codewords. D is fixed by the tag.
    """
    def __init__(self, tag: str, codewords=None):
        _check_tag(tag)
        self.tag = tag
        dim = TAG_DIMS[tag]
        if codewords is None:
            codewords = np.zeros((0, dim))
        self.codewords: np.ndarray = np.asarray(codewords, dtype=np.float64).reshape(-1, dim)

    def __len__(self) -> int:
        return self.codewords.shape[0]

    @property
    def dim(self) -> int:
        return TAG_DIMS[self.tag]

    def copy(self) -> "Codebook":
        return Codebook(self.tag, self.codewords.copy())


class EntropyModel:
    """
    An EntropyModel object holds the unnormalized logits w of an unconditional distribution over codewords,
    with p = softmax(-w).

    Attributes
    ----------
    logits : np.ndarray
        The M logits.
    """
    def __init__(self, logits=None):
        self.logits: np.ndarray = np.zeros(0) if logits is None else np.asarray(logits, dtype=np.float64).reshape(-1)

    def __len__(self) -> int:
        return self.logits.shape[0]

    @classmethod
    def uniform(cls, size: int) -> "EntropyModel":
        return cls(np.zeros(size))

    def copy(self) -> "EntropyModel":
        return EntropyModel(self.logits.copy())

    def probabilities(self) -> np.ndarray:
        """
        Gets the codeword probabilities softmax(-w). They are strictly positive and sum to 1.
        """
        return softmax(-self.logits)

    def neg_log_probs(self) -> np.ndarray:
        """
        Gets -log(p_m) for every codeword, in nats.
        """
        return self.logits + logsumexp(-self.logits)


@dataclass
class Quantizer:
    """
    One codebook with its entropy model and rate-distortion trade-off.
    """
    codebook: Codebook
    entropy_model: EntropyModel
    lam: float

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("The rate-distortion trade-off for '" + self.codebook.tag + "' must be positive.")
        if len(self.codebook) != len(self.entropy_model):
            raise ShapeMismatchError("Codebook '" + self.codebook.tag + "' has " + str(len(self.codebook)) +
                                     " codewords but " + str(len(self.entropy_model)) + " logits.")


def select(x, cb: Codebook, em: EntropyModel, lam: float, rd: bool = True) -> tuple[int, float, float]:
    """
    Picks the codeword for one attribute vector by minimizing -log(p_m) / lam + |x - CB[m]|^2. Ties go to the smallest
    index.

    Parameters
    ----------
    x : array-like
        The D-dimensional attribute vector.
    cb : Codebook
        The codebook.
    em : EntropyModel
        The entropy model over the codebook.
    lam : float
        The rate-distortion trade-off.
    rd : bool
        If False, the rate term is ignored and plain nearest-neighbour VQ is done. Defaults to True.

    Returns
    -------
    tuple[int, float, float]
        The index j, the rate -log(p_j) in nats and the distortion |x - CB[j]|^2.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    indices, rates, dists = select_batch(x, cb, em, lam, rd)
    return int(indices[0]), float(rates[0]), float(dists[0])


def select_batch(vectors: np.ndarray, cb: Codebook, em: EntropyModel, lam: float,
                 rd: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Runs select() on every row of an N x D array. The scan is exhaustive and done in chunks.

    Returns
    -------
    tuple[np.ndarray, np.ndarray, np.ndarray]
        N indices, N rates in nats and N squared distances.
    """
    if len(cb) == 0:
        raise EmptyCodebookError("Cannot select from the empty '" + cb.tag + "' codebook.")
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != cb.dim:
        raise ShapeMismatchError("Attribute vectors for '" + cb.tag + "' must be N x " + str(cb.dim) + ", got " +
                                 str(vectors.shape) + ".")
    n = vectors.shape[0]
    nll = em.neg_log_probs()
    penalty = nll / lam if rd else np.zeros_like(nll)
    indices = np.zeros(n, dtype=np.int64)
    dists = np.zeros(n)
    step = chunk_rows(n, len(cb) * cb.dim)
    for start in range(0, n, step):
        chunk = vectors[start:start + step]
        dist = np.sum((chunk[:, None, :] - cb.codewords[None, :, :]) ** 2, axis=2)
        best = np.argmin(penalty[None, :] + dist, axis=1)
        indices[start:start + step] = best
        dists[start:start + step] = dist[np.arange(chunk.shape[0]), best]
    return indices, nll[indices], dists


def attribute_vectors(source, tag: str) -> np.ndarray:
    """
    Gets the N x D vectors one tag quantizes from a cloud or an AttributeView. Scales are taken in log form, rotations
    as stored and SH degrees as their flattened coefficients.
    """
    _check_tag(tag)
    if tag == "scale":
        return np.asarray(source.log_scales, dtype=np.float64)
    if tag == "rotation":
        return np.asarray(source.rotations, dtype=np.float64)
    sh = np.asarray(source.sh_coeffs, dtype=np.float64)
    return sh[:, degree_slice(sh_degree_of(tag)), :].reshape(sh.shape[0], -1)


def _write_attribute(view: AttributeView, tag: str, rows: np.ndarray, values: np.ndarray) -> None:
    if tag == "scale":
        view.log_scales[rows] = values
    elif tag == "rotation":
        view.rotations[rows] = values
    else:
        span = degree_slice(sh_degree_of(tag))
        view.sh_coeffs[rows, span, :] = values.reshape(len(rows), span.stop - span.start, 3)


def tag_rows(masks: MaskSet | None, n: int, tag: str) -> np.ndarray:
    """
    Gets the rows of a cloud whose attribute for this tag is quantized: the Gaussians that survive the Gaussian masks,
    and for SH degrees 1..3 only those that also keep that degree.
    """
    if masks is None:
        return np.arange(n)
    keep = masks.gaussian_hard()[:, 0] > 0
    degree = sh_degree_of(tag)
    if degree > 0:
        keep &= masks.sh_hard()[:, degree - 1] > 0
    return np.nonzero(keep)[0]


class QuantizerBank:
    """
    A QuantizerBank holds the six quantizers of a model, one per attribute tag.

    Attributes
    ----------
    quantizers : dict[str, Quantizer]
        The quantizer for every tag.
    rd_selection : bool
        Whether selection uses the rate term. With False the bank does plain nearest-neighbour VQ.
    """
    def __init__(self, quantizers: dict[str, Quantizer] | None = None, rd_selection: bool = True):
        self.quantizers: dict[str, Quantizer] = quantizers or {}
        self.rd_selection = rd_selection

    def __getitem__(self, tag: str) -> Quantizer:
        return self.quantizers[tag]

    def copy(self) -> "QuantizerBank":
        return QuantizerBank({tag: Quantizer(q.codebook.copy(), q.entropy_model.copy(), q.lam)
                              for tag, q in self.quantizers.items()}, self.rd_selection)

    @classmethod
    def init_from_cloud(cls, cloud: GaussianCloud, masks: MaskSet | None = None, sizes: dict | None = None,
                        seed: int = 0, lambdas: dict | None = None, rd_selection: bool = True,
                        scale_sizes: bool = False) -> "QuantizerBank":
        """
        Creates a bank whose codebooks are sampled from the attribute vectors of the surviving Gaussians: M distinct
        vectors chosen uniformly, with M capped by the number of distinct vectors available. Logits start at 0.

        Parameters
        ----------
        cloud : GaussianCloud
            The cloud to sample codewords from.
        masks : MaskSet, optional
            If set, only surviving Gaussians (and kept SH degrees) are sampled.
        sizes : dict, optional
            Requested codebook size per tag. Missing tags use DEFAULT_SIZES.
        seed : int
            Seed of the sampler.
        lambdas : dict, optional
            Trade-off per tag. Missing tags use DEFAULT_LAMBDAS.
        rd_selection : bool
            Whether to select with the rate term.
        scale_sizes : bool
            Whether to shrink each requested size with scaled_codebook_size() first. Defaults to False.

        Returns
        -------
        QuantizerBank
            The new bank.
        """
        sizes = {**DEFAULT_SIZES, **(sizes or {})}
        lambdas = {**DEFAULT_LAMBDAS, **(lambdas or {})}
        rng = np.random.default_rng(seed)
        quantizers = {}
        for tag in TAGS:
            rows = tag_rows(masks, cloud.count, tag)
            population = np.unique(attribute_vectors(cloud, tag)[rows], axis=0)
            if population.shape[0] == 0:
                # Nothing to sample from; a single zero codeword keeps the codebook usable.
                codewords = np.zeros((1, TAG_DIMS[tag]))
            else:
                requested = scaled_codebook_size(sizes[tag], rows.size) if scale_sizes else int(sizes[tag])
                size = min(requested, population.shape[0])
                if size < int(sizes[tag]):
                    log.debug("Codebook '%s' uses %d of the %d requested codewords", tag, size, int(sizes[tag]))
                codewords = population[rng.choice(population.shape[0], size=size, replace=False)]
            quantizers[tag] = Quantizer(Codebook(tag, codewords), EntropyModel.uniform(codewords.shape[0]),
                                        float(lambdas[tag]))
        return cls(quantizers, rd_selection)

    def to_arrays(self) -> dict[str, np.ndarray]:
        """
        Flattens the bank into named arrays, suitable for np.savez.
        """
        arrays = {"rd_selection": np.array(self.rd_selection)}
        for tag, q in self.quantizers.items():
            arrays["codebook_" + tag] = q.codebook.codewords
            arrays["logits_" + tag] = q.entropy_model.logits
            arrays["lambda_" + tag] = np.array(q.lam)
        return arrays

    @classmethod
    def from_arrays(cls, arrays) -> "QuantizerBank":
        quantizers = {}
        for tag in TAGS:
            if "codebook_" + tag not in arrays:
                continue
            quantizers[tag] = Quantizer(Codebook(tag, arrays["codebook_" + tag]),
                                        EntropyModel(arrays["logits_" + tag]), float(arrays["lambda_" + tag]))
        return cls(quantizers, bool(arrays["rd_selection"]) if "rd_selection" in arrays else True)


@dataclass
class QuantizationResult:
    """
    The outcome of quantize_cloud().

    Attributes
    ----------
    view : AttributeView
        The cloud's quantizable attributes with the selected codewords substituted.
    rows : dict[str, np.ndarray]
        For each tag, the cloud rows that were quantized.
    indices : dict[str, np.ndarray]
        For each tag, the selected codeword of every quantized row.
    survivors : int
        The number of Gaussians that survive the masks, N'.
    rate : float
        L_rate: the sum over tags of -log(p) / lambda, averaged over N'.
    vq : float
        L_VQ: the sum over tags of squared codeword distances, averaged over N'.
    tag_rates : dict[str, float]
        The rate of each tag in nats, summed over rows (not divided by lambda or N').
    """
    view: AttributeView
    rows: dict = field(default_factory=dict)
    indices: dict = field(default_factory=dict)
    survivors: int = 0
    rate: float = 0.0
    vq: float = 0.0
    tag_rates: dict = field(default_factory=dict)


def quantize_cloud(cloud: GaussianCloud, masks: MaskSet | None, bank: QuantizerBank) -> QuantizationResult:
    """
    Quantizes the scale, rotation and SH attributes of a cloud with a bank. Pruned Gaussians are skipped entirely and
    masked SH degrees are skipped per Gaussian. Positions and opacities are never quantized.

    Parameters
    ----------
    cloud : GaussianCloud
        The cloud.
    masks : MaskSet or None
        The masks. With None every Gaussian and degree is quantized.
    bank : QuantizerBank
        The quantizers.

    Returns
    -------
    QuantizationResult
        The quantized view, the selections and the rate and VQ losses.
    """
    if masks is not None:
        masks.check_size(cloud)
    n = cloud.count
    view = AttributeView(cloud.log_scales.astype(np.float64), cloud.rotations.astype(np.float64),
                         cloud.sh_coeffs.astype(np.float64))
    survivors = n if masks is None else int(np.count_nonzero(masks.gaussian_hard()))
    result = QuantizationResult(view, survivors=survivors)
    rate_total, vq_total = 0.0, 0.0
    for tag in TAGS:
        q = bank[tag]
        rows = tag_rows(masks, n, tag)
        result.rows[tag] = rows
        if rows.size == 0:
            result.indices[tag] = np.zeros(0, dtype=np.int64)
            result.tag_rates[tag] = 0.0
            continue
        indices, rates, dists = select_batch(attribute_vectors(cloud, tag)[rows], q.codebook, q.entropy_model, q.lam,
                                             bank.rd_selection)
        result.indices[tag] = indices
        result.tag_rates[tag] = float(np.sum(rates))
        rate_total += float(np.sum(rates)) / q.lam
        vq_total += float(np.sum(dists))
        _write_attribute(view, tag, rows, q.codebook.codewords[indices])
    if survivors > 0:
        result.rate = rate_total / survivors
        result.vq = vq_total / survivors
    return result


@dataclass
class BankGradients:
    """
    Gradients of L_rate + L_VQ for the codewords and logits of every tag.
    """
    codewords: dict
    logits: dict


def quantize_backward(result: QuantizationResult, cloud: GaussianCloud,
                      bank: QuantizerBank) -> tuple[CloudGradients, BankGradients]:
    """
    Gets the gradients of L_rate + L_VQ. The VQ term pulls the input towards its codeword with 2(x - CB[j]) / N' and
    the codeword towards the input with -2(x - CB[j]) / N'. The rate term reaches every logit through the softmax.
    Index choices are treated as constants.

    Parameters
    ----------
    result : QuantizationResult
        The result of quantize_cloud() on the same cloud and bank.
    cloud : GaussianCloud
        The cloud that was quantized.
    bank : QuantizerBank
        The bank that was used.

    Returns
    -------
    tuple[CloudGradients, BankGradients]
        Gradients for the stored attributes (positions and opacities are zero) and for the bank.
    """
    n = cloud.count
    attribute_grads = CloudGradients.zeros(n)
    bank_grads = BankGradients({}, {})
    scale = 1.0 / result.survivors if result.survivors > 0 else 0.0
    sh_grad = np.zeros((n, SH_COEFFS, 3))
    for tag in TAGS:
        q = bank[tag]
        rows, indices = result.rows[tag], result.indices[tag]
        grad_cb = np.zeros_like(q.codebook.codewords)
        grad_logits = np.zeros(len(q.entropy_model))
        if rows.size:
            residual = attribute_vectors(cloud, tag)[rows] - q.codebook.codewords[indices]
            np.add.at(grad_cb, indices, -2.0 * residual * scale)
            counts = np.bincount(indices, minlength=len(q.entropy_model))
            grad_logits = (counts - rows.size * q.entropy_model.probabilities()) * scale / q.lam
            grad_x = 2.0 * residual * scale
            if tag == "scale":
                attribute_grads.log_scales[rows] = grad_x
            elif tag == "rotation":
                attribute_grads.rotations[rows] = grad_x
            else:
                span = degree_slice(sh_degree_of(tag))
                sh_grad[rows, span, :] = grad_x.reshape(rows.size, span.stop - span.start, 3)
        bank_grads.codewords[tag] = grad_cb
        bank_grads.logits[tag] = grad_logits
    attribute_grads.sh_coeffs = sh_grad
    return attribute_grads, bank_grads


def prune_codebook(cb: Codebook, em: EntropyModel, indices) -> tuple[Codebook, EntropyModel, np.ndarray]:
    """
    Removes the codewords an index stream never uses, together with their logits. Survivors keep their relative order
    and their logits are shifted so that softmax(-w) is normalized over the survivors alone.

    Parameters
    ----------
    cb : Codebook
        The full codebook.
    em : EntropyModel
        Its entropy model.
    indices : array-like
        The index stream (or just the set of used indices).

    Returns
    -------
    tuple[Codebook, EntropyModel, np.ndarray]
        The compacted codebook, the compacted entropy model, and a remap array of length M translating old indices to
        new ones (-1 for removed codewords).
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    remap = np.full(len(cb), -1, dtype=np.int64)
    if indices.size == 0:
        return Codebook(cb.tag), EntropyModel(), remap
    if len(cb) == 0:
        raise EmptyCodebookError("The index stream for '" + cb.tag + "' is not empty, but its codebook is.")
    if indices.min() < 0 or indices.max() >= len(cb):
        raise IndexRangeError("Index stream for '" + cb.tag + "' refers to codewords outside [0, " + str(len(cb)) +
                              ").")
    used = np.unique(indices)
    remap[used] = np.arange(used.size)
    logits = em.logits[used]
    # Shift so that logsumexp(-w) == 0, i.e. w = -log(p) over the survivors.
    logits = logits + logsumexp(-logits)
    return Codebook(cb.tag, cb.codewords[used]), EntropyModel(logits), remap
