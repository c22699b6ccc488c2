# "rangecoder.py" from libRDGSPy by NinjaCheetah & Contributors
#
# A 32-bit range coder over static frequency tables, in the style of the LZMA range coder: the low end is kept with
# one carry bit, and bytes that might still receive a carry are held back (a cached byte plus a run of 0xFF bytes)
# until the carry is known. Frequency tables are u16 counts with a total of at most 65536.

import bisect
import logging

import numpy as np

from .errors import IndexRangeError

log = logging.getLogger(__name__)

# The range is renormalized whenever it drops below this value.
TOP = 1 << 24
# Maximum total of a frequency table, so that range // total never drops below 256.
COUNT_TOTAL = 1 << 16
MAX_COUNT = 0xFFFF


def quantize_counts(probs) -> np.ndarray:
    """
    Converts probabilities into u16 counts for a frequency table. Every entry with a nonzero probability gets at
    least one count, and the counts never add up to more than 65536.

    Parameters
    ----------
    probs : array-like
        Symbol probabilities. They don't need to be normalized.

    Returns
    -------
    np.ndarray
        The counts as uint16. Entries with zero probability get zero counts.
    """
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if probs.size == 0:
        return np.zeros(0, dtype=np.uint16)
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ValueError("Probabilities must be finite and nonnegative.")
    total = probs.sum()
    if total <= 0:
        raise ValueError("At least one probability must be positive.")
    probs = probs / total
    used = probs > 0
    spare = COUNT_TOTAL - int(np.count_nonzero(used))
    counts = np.where(used, 1 + np.floor(probs * spare), 0)
    return np.minimum(counts, MAX_COUNT).astype(np.uint16)


class FrequencyTable:
    """
    A FrequencyTable object holds the cumulative form of a count table, shared by the encoder and decoder.

    Attributes
    ----------
    counts : np.ndarray
        The per-symbol counts.
    cumulative : list[int]
        cumulative[s] is the sum of the counts of every symbol below s. It has one more entry than counts.
    total : int
        The sum of all counts.
    """
    def __init__(self, counts):
        self.counts: np.ndarray = np.asarray(counts, dtype=np.int64).reshape(-1)
        if np.any(self.counts < 0):
            raise ValueError("Frequency counts must be nonnegative.")
        self.cumulative: list[int] = [0] + np.cumsum(self.counts).tolist()
        self.total: int = self.cumulative[-1]
        if self.total > COUNT_TOTAL:
            raise ValueError("Frequency counts add up to " + str(self.total) + ", more than " + str(COUNT_TOTAL) + ".")
        nonzero = np.nonzero(self.counts)[0]
        # With a single possible symbol the stream carries no information.
        self.only_symbol: int | None = int(nonzero[0]) if nonzero.size == 1 else None

    def __len__(self) -> int:
        return self.counts.shape[0]


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = 0xFFFFFFFF
        self.cache = 0
        self.cache_size = 1
        self.output = bytearray()

    def _shift_low(self) -> None:
        if (self.low & 0xFFFFFFFF) < 0xFF000000 or (self.low >> 32) != 0:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.output.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low & 0x00FFFFFF) << 8

    def encode(self, symbol: int, table: FrequencyTable) -> None:
        """
        Encodes one symbol with a frequency table.

        Parameters
        ----------
        symbol : int
            The symbol. Its count in the table must be nonzero.
        table : FrequencyTable
            The table.
        """
        if symbol < 0 or symbol >= len(table):
            raise IndexRangeError("Symbol " + str(symbol) + " is outside the table of " + str(len(table)) +
                                  " entries.")
        freq = int(table.counts[symbol])
        if freq == 0:
            raise ValueError("Symbol " + str(symbol) + " has a zero count and cannot be encoded.")
        r = self.range // table.total
        self.low += r * table.cumulative[symbol]
        self.range = r * freq
        while self.range < TOP:
            self.range <<= 8
            self._shift_low()

    def finish(self) -> bytes:
        """
        Flushes the coder and returns every byte written.
        """
        for _ in range(5):
            self._shift_low()
        return bytes(self.output)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.position = 0
        self.range = 0xFFFFFFFF
        self.code = 0
        for _ in range(5):
            self.code = ((self.code << 8) | self._next_byte()) & 0xFFFFFFFF

    def _next_byte(self) -> int:
        # Reading past the end yields zeros, so corrupt streams decode to something instead of failing mid-symbol.
        if self.position >= len(self.data):
            self.position += 1
            return 0
        byte = self.data[self.position]
        self.position += 1
        return byte

    def decode(self, table: FrequencyTable) -> int:
        """
        Decodes one symbol. The result always has a nonzero count in the table, even for corrupt input.
        """
        r = self.range // table.total
        value = min(self.code // r, table.total - 1)
        symbol = bisect.bisect_right(table.cumulative, value) - 1
        self.code -= r * table.cumulative[symbol]
        self.range = r * int(table.counts[symbol])
        while self.range < TOP:
            self.code = ((self.code << 8) | self._next_byte()) & 0xFFFFFFFF
            self.range <<= 8
        return symbol


def arithmetic_code(symbols, counts) -> bytes:
    """
    Encodes a symbol stream with a static count table.

    Parameters
    ----------
    symbols : array-like
        The symbols, each a valid index into counts with a nonzero count.
    counts : array-like or FrequencyTable
        The count table.

    Returns
    -------
    bytes
        The encoded stream. Empty streams, and streams whose table allows a single symbol, encode to no bytes.
    """
    table = counts if isinstance(counts, FrequencyTable) else FrequencyTable(counts)
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size == 0:
        return b""
    if table.only_symbol is not None:
        if np.any(symbols != table.only_symbol):
            raise ValueError("The table only allows symbol " + str(table.only_symbol) + ".")
        return b""
    encoder = RangeEncoder()
    for symbol in symbols.tolist():
        encoder.encode(symbol, table)
    return encoder.finish()


def arithmetic_decode(data: bytes, counts, count: int) -> np.ndarray:
    """
    Decodes count symbols from a stream written by arithmetic_code() with the same table.

    Parameters
    ----------
    data : bytes
        The encoded stream.
    counts : array-like or FrequencyTable
        The count table used for encoding.
    count : int
        The number of symbols to decode.

    Returns
    -------
    np.ndarray
        The decoded symbols as int64.
    """
    table = counts if isinstance(counts, FrequencyTable) else FrequencyTable(counts)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    if table.total == 0:
        raise ValueError("Cannot decode symbols with an empty frequency table.")
    if table.only_symbol is not None:
        return np.full(count, table.only_symbol, dtype=np.int64)
    decoder = RangeDecoder(data)
    return np.array([decoder.decode(table) for _ in range(count)], dtype=np.int64)


def ideal_code_length(symbols, counts) -> float:
    """
    Gets the ideal code length in bits of a symbol stream under a count table, sum of -log2(count / total).
    """
    table = counts if isinstance(counts, FrequencyTable) else FrequencyTable(counts)
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size == 0:
        return 0.0
    probs = table.counts[symbols] / table.total
    return float(-np.sum(np.log2(probs)))
