# "crypto.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Digests of emitted bitstreams, so that runs can be checked for byte-identical output without keeping every file.

from Crypto.Hash import SHA256


def bitstream_digest(data: bytes) -> str:
    """
    Gets the SHA-256 digest of a bitstream.

    Parameters
    ----------
    data : bytes
        The bitstream.

    Returns
    -------
    str
        The digest as 64 lowercase hex characters.
    """
    digest = SHA256.new()
    digest.update(data)
    return digest.hexdigest()


def verify_digest(data: bytes, expected: str) -> bool:
    """
    Checks a bitstream against a digest previously returned by bitstream_digest().
    """
    return bitstream_digest(data) == expected.strip().lower()
