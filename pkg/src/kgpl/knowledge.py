"""Subject attributes -> descriptive sentence -> knowledge embeddings.

The text encoder is pluggable.  ``HashTextEncoder`` is the hermetic default
used throughout the test suite; an external encoder (HTTP endpoint or
subprocess) can be swapped in behind the same interface when a real
pretrained text model is available.
"""

from __future__ import annotations

import hashlib
import os
import struct
import subprocess
import urllib.error
import urllib.request
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .core import MAX_AGE_YEARS, Sex, SubjectAttributes
from .errors import (EncoderFailure, KeyNotFound, MissingPlaceholder, NonFinite,
                     OutOfRange, ShapeMismatch)
from .tensorio import read_tensor, write_tensor

HIDDEN_SIZE = 768
DEFAULT_NUM_TOKENS = 32

DEFAULT_TEMPLATE = (
    "This is a brain magnetic resonance image acquired from a {sex} "
    "with {diagnosis} at {age_decade} years old"
)

_PLACEHOLDERS = ("{sex}", "{diagnosis}", "{age_decade}")

_DECADE_WORDS = (
    "zero", "ten", "twenty", "thirty", "forty", "fifty", "sixty",
    "seventy", "eighty", "ninety", "one hundred", "one hundred ten",
    "one hundred twenty", "one hundred thirty",
)

_SEX_WORDS = {Sex.MALE: "male", Sex.FEMALE: "female", Sex.UNSPECIFIED: "person"}

NO_DIAGNOSIS_PHRASE = "no reported condition"


@dataclass(frozen=True)
class AgeBucket:
    label: str
    lo: int
    hi: int


def bucket_age(age_years: int) -> AgeBucket:
    """Decade bucket [10*floor(age/10), +9] with its English label."""
    if not (0 <= age_years <= MAX_AGE_YEARS):
        raise OutOfRange(f"age_years must be in [0, {MAX_AGE_YEARS}], got {age_years}")
    decade = age_years // 10
    lo = 10 * decade
    return AgeBucket(label=_DECADE_WORDS[decade], lo=lo, hi=lo + 9)


@dataclass(frozen=True)
class PromptSentence:
    text: str
    source_attributes: SubjectAttributes


def render_sentence(attrs: SubjectAttributes, template: str = DEFAULT_TEMPLATE) -> PromptSentence:
    """Substitute subject attributes into the sentence template."""
    missing = [p for p in _PLACEHOLDERS if p not in template]
    if missing:
        raise MissingPlaceholder(f"template lacks placeholder(s): {', '.join(missing)}")
    text = template.format(
        sex=_SEX_WORDS[attrs.sex],
        diagnosis=attrs.diagnosis if attrs.diagnosis else NO_DIAGNOSIS_PHRASE,
        age_decade=bucket_age(attrs.age_years).label,
    )
    return PromptSentence(text=text, source_attributes=attrs)


@dataclass(frozen=True, eq=False)
class KnowledgeEmbedding:
    """An (N, D) token-embedding block produced by a text encoder."""

    tokens: np.ndarray
    encoder_name: str = ""

    def __post_init__(self):
        arr = np.array(self.tokens, dtype=np.float32, copy=True)
        if arr.ndim != 2:
            raise ShapeMismatch(f"embedding must be 2D (N, D), got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFinite("embedding contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "tokens", arr)

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.tokens.shape[1]


class TextEncoder(ABC):
    """Deterministic sentence -> (N, D) embedding backend."""

    name: str = "base"
    max_tokens: int = 128
    hidden_size: int = HIDDEN_SIZE

    @abstractmethod
    def encode(self, sentence: str) -> KnowledgeEmbedding:
        ...


class HashTextEncoder(TextEncoder):
    """Hermetic stand-in for a pretrained text encoder.

    Tokenizes on whitespace and maps each (seed, position, token) to a
    unit-norm D-vector derived from counter-mode sha256: block ``i`` of the
    vector comes from the digest of ``"{seed}|{position}|{i}|{token}"``,
    whose bytes are read as little-endian uint32 and mapped affinely into
    (-1, 1) before normalization.  Bit-identical on every platform.
    """

    def __init__(self, seed: int = 0, hidden_size: int = HIDDEN_SIZE, max_tokens: int = 128):
        self.seed = int(seed)
        self.hidden_size = int(hidden_size)
        self.max_tokens = int(max_tokens)
        self.name = f"hash-v1-seed{self.seed}-d{self.hidden_size}"

    def _token_vector(self, position: int, token: str) -> np.ndarray:
        n_blocks = -(-self.hidden_size // 8)  # 8 uint32 words per digest
        words = np.empty(n_blocks * 8, dtype=np.uint32)
        for i in range(n_blocks):
            digest = hashlib.sha256(
                f"{self.seed}|{position}|{i}|{token}".encode("utf-8")).digest()
            words[8 * i:8 * (i + 1)] = struct.unpack("<8I", digest)
        v = (words[:self.hidden_size].astype(np.float64) + 0.5) / 2.0**32
        v = 2.0 * v - 1.0
        return (v / np.linalg.norm(v)).astype(np.float32)

    def encode(self, sentence: str) -> KnowledgeEmbedding:
        tokens = sentence.split()[: self.max_tokens]
        if not tokens:
            arr = np.zeros((0, self.hidden_size), dtype=np.float32)
        else:
            arr = np.stack([self._token_vector(i, t) for i, t in enumerate(tokens)])
        return KnowledgeEmbedding(tokens=arr, encoder_name=self.name)


def stub_encoder(seed: int = 0) -> TextEncoder:
    """Seeded test double for the pretrained text encoder."""
    return HashTextEncoder(seed=seed)


class ExternalTextEncoder(TextEncoder):
    """Client for an out-of-process encoder.

    Request: the UTF-8 sentence.  Response: a tensor-container blob whose
    single ``data`` tensor is the (N, D) float32 embedding.  The backend is
    either an HTTP endpoint (POST body = sentence) or a subprocess command
    (sentence on stdin, container on stdout).
    """

    def __init__(self, name: str, url: Optional[str] = None,
                 command: Optional[list[str]] = None,
                 hidden_size: int = HIDDEN_SIZE, max_tokens: int = 128,
                 timeout: float = 30.0):
        if (url is None) == (command is None):
            raise EncoderFailure("configure exactly one of url or command")
        self.name = name
        self.url = url
        self.command = command
        self.hidden_size = int(hidden_size)
        self.max_tokens = int(max_tokens)
        self.timeout = timeout

    def _request(self, sentence: str) -> bytes:
        payload = sentence.encode("utf-8")
        if self.url is not None:
            req = urllib.request.Request(self.url, data=payload, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return resp.read()
            except (urllib.error.URLError, OSError) as exc:
                raise EncoderFailure(f"encoder endpoint {self.url} failed: {exc}") from exc
        try:
            proc = subprocess.run(self.command, input=payload, capture_output=True,
                                  timeout=self.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise EncoderFailure(f"encoder command failed: {exc}") from exc
        if proc.returncode != 0:
            raise EncoderFailure(
                f"encoder command exited {proc.returncode}: {proc.stderr.decode(errors='replace')}")
        return proc.stdout

    def encode(self, sentence: str) -> KnowledgeEmbedding:
        blob = self._request(sentence)
        import tempfile
        # The container reader works on paths; stage the blob.
        with tempfile.NamedTemporaryFile(suffix=".kgt", delete=False) as fh:
            fh.write(blob)
            tmp = fh.name
        try:
            arr, _ = read_tensor(tmp)
        except Exception as exc:
            raise EncoderFailure(f"encoder returned an unreadable payload: {exc}") from exc
        finally:
            os.unlink(tmp)
        return KnowledgeEmbedding(tokens=np.asarray(arr, dtype=np.float32),
                                  encoder_name=self.name)


def encode_knowledge(encoder: TextEncoder, sentence: PromptSentence | str,
                     fixed_n: int = DEFAULT_NUM_TOKENS) -> KnowledgeEmbedding:
    """Encode a sentence and truncate/zero-pad the token axis to ``fixed_n``."""
    if fixed_n < 1:
        raise ShapeMismatch(f"fixed_n must be >= 1, got {fixed_n}")
    text = sentence.text if isinstance(sentence, PromptSentence) else sentence
    raw = encoder.encode(text)
    n_raw, d = raw.tokens.shape
    out = np.zeros((fixed_n, d), dtype=np.float32)
    n_keep = min(n_raw, fixed_n)
    out[:n_keep] = raw.tokens[:n_keep]
    return KnowledgeEmbedding(tokens=out, encoder_name=raw.encoder_name)


def stack_embeddings(embeddings: list[KnowledgeEmbedding]) -> np.ndarray:
    """Stack per-subject embeddings into a (B, N, D) batch."""
    if not embeddings:
        raise ShapeMismatch("cannot stack an empty embedding list")
    shapes = {e.tokens.shape for e in embeddings}
    if len(shapes) != 1:
        raise ShapeMismatch(f"embeddings disagree on shape: {sorted(shapes)}")
    return np.stack([e.tokens for e in embeddings])


def embedding_key(encoder_name: str, sentence_text: str, fixed_n: int) -> str:
    """Content-hash cache key for one encoded sentence."""
    blob = f"{encoder_name}\x00{sentence_text}\x00{fixed_n}".encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _cache_path(store: str | os.PathLike, key: str) -> Path:
    return Path(store) / f"{key}.kgt"


def cache_embedding(store: str | os.PathLike, key: str, emb: KnowledgeEmbedding) -> Path:
    path = _cache_path(store, key)
    write_tensor(path, emb.tokens,
                 meta={"encoder": emb.encoder_name, "key": key, "kind": "knowledge_embedding"})
    return path


def load_embedding(store: str | os.PathLike, key: str) -> KnowledgeEmbedding:
    path = _cache_path(store, key)
    if not path.exists():
        raise KeyNotFound(f"no cached embedding for key {key}")
    arr, meta = read_tensor(path)
    return KnowledgeEmbedding(tokens=arr, encoder_name=meta.get("encoder", ""))


def cached_encode(encoder: TextEncoder, sentence: PromptSentence | str,
                  fixed_n: int = DEFAULT_NUM_TOKENS,
                  store: Optional[str | os.PathLike] = None) -> KnowledgeEmbedding:
    """Encode with a write-through cache (``KGPL_CACHE_DIR`` if unset)."""
    text = sentence.text if isinstance(sentence, PromptSentence) else sentence
    store = store if store is not None else os.environ.get("KGPL_CACHE_DIR")
    if store is None:
        return encode_knowledge(encoder, text, fixed_n)
    key = embedding_key(encoder.name, text, fixed_n)
    try:
        return load_embedding(store, key)
    except KeyNotFound:
        emb = encode_knowledge(encoder, text, fixed_n)
        cache_embedding(store, key, emb)
        return emb
