"""RIFF/WAVE audio I/O and parallel-corpus ingestion."""
from __future__ import annotations

import logging
import os
import struct
import tempfile
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (EmptyCorpusError, EmptySignalError, FormatError,
                     RateMismatchError, UnsupportedCodecError)

log = logging.getLogger(__name__)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    @property
    def peak(self):
        return float(np.max(np.abs(self.samples))) if self.samples.size else 0.0

    def with_samples(self, samples):
        return Waveform(samples, self.sample_rate)


def normalize_peak(w: Waveform, peak: float = 0.9) -> Waveform:
    """Scale so the largest magnitude equals `peak`; silence is returned as is."""
    cur = w.peak
    if cur == 0.0:
        return w
    return w.with_samples(w.samples * (peak / cur))


@dataclass(frozen=True, eq=False)
class UtterancePair:
    id: str
    source: Waveform
    target: Waveform

    def __post_init__(self):
        if not self.id:
            raise ValueError("utterance id must be nonempty")
        if self.source.sample_rate != self.target.sample_rate:
            raise RateMismatchError(
                f"{self.id}: source rate {self.source.sample_rate} != "
                f"target rate {self.target.sample_rate}")


@dataclass(frozen=True, eq=False)
class ParallelCorpus:
    pairs: tuple
    source_speaker: str = "source"
    target_speaker: str = "target"
    unmatched_source: tuple = field(default=())
    unmatched_target: tuple = field(default=())

    def __post_init__(self):
        ids = [p.id for p in self.pairs]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate utterance ids in corpus")
        object.__setattr__(self, "pairs", tuple(self.pairs))

    def __len__(self):
        return len(self.pairs)

    @property
    def ids(self):
        return [p.id for p in self.pairs]

    @property
    def sample_rate(self):
        return self.pairs[0].source.sample_rate if self.pairs else None

    def subset(self, ids):
        keep = set(ids)
        return ParallelCorpus(tuple(p for p in self.pairs if p.id in keep),
                              self.source_speaker, self.target_speaker)

    def swapped(self):
        return ParallelCorpus(
            tuple(UtterancePair(p.id, p.target, p.source) for p in self.pairs),
            self.target_speaker, self.source_speaker,
            self.unmatched_target, self.unmatched_source)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        yield cid, body, size
        pos += 8 + size + (size & 1)


def load_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file as a mono Waveform scaled to [-1, 1].

    Multichannel files keep channel 0.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, body, size in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if len(body) < 26:
                    raise FormatError(f"{path}: truncated WAVE_FORMAT_EXTENSIBLE header")
                sub = struct.unpack_from("<H", body, 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                log.warning("%s: data chunk truncated (%d of %d bytes)", path, len(body), size)
            payload = body
    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if payload is None:
        raise FormatError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate <= 0:
        raise FormatError(f"{path}: invalid channel count or sample rate")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedCodecError(f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits)")

    frame_bytes = dtype.itemsize * channels
    n = len(payload) // frame_bytes
    if n == 0:
        raise EmptySignalError(f"{path}: empty data chunk")
    x = np.frombuffer(payload[:n * frame_bytes], dtype=dtype).reshape(n, channels)
    if channels > 1:
        log.warning("%s: %d channels, keeping channel 0", path, channels)
    x = x[:, 0].astype(np.float64) * scale
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite float samples")
    return Waveform(np.clip(x, -1.0, 1.0), rate)


def _quantize(samples):
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def save_wav(w: Waveform, path) -> None:
    """Write 16-bit PCM mono; values are clipped to [-1, 1] first.

    The file is written to a temporary sibling and renamed into place.
    """
    if len(w) == 0:
        raise EmptySignalError("refusing to write an empty waveform")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=".tmp-", suffix=".wav")
    try:
        with os.fdopen(fd, "wb") as fh, wave.open(fh, "wb") as wf:
            wf.setnchannels(1)
            wf.setsampwidth(2)
            wf.setframerate(w.sample_rate)
            wf.writeframes(_quantize(w.samples).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _stems(directory: Path):
    if not directory.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {directory}")
    return {p.stem: p for p in sorted(directory.glob("*.wav"))}


def ingest_corpus(src_dir, tgt_dir, limit=None, normalize=True,
                  source_speaker=None, target_speaker=None) -> ParallelCorpus:
    """Pair `<src_dir>/<id>.wav` with `<tgt_dir>/<id>.wav` by file stem.

    Unmatched stems are logged and recorded on the corpus. At most `limit`
    pairs (in sorted id order) are loaded.
    """
    src_dir, tgt_dir = Path(src_dir), Path(tgt_dir)
    src, tgt = _stems(src_dir), _stems(tgt_dir)
    common = sorted(set(src) & set(tgt))
    only_src = tuple(sorted(set(src) - set(tgt)))
    only_tgt = tuple(sorted(set(tgt) - set(src)))
    for stem in only_src:
        log.warning("unmatched source utterance: %s", stem)
    for stem in only_tgt:
        log.warning("unmatched target utterance: %s", stem)
    if not common:
        raise EmptyCorpusError(f"no matching utterance ids between {src_dir} and {tgt_dir}")
    if limit is not None:
        common = common[:limit]

    pairs = []
    for stem in common:
        s, t = load_wav(src[stem]), load_wav(tgt[stem])
        if normalize:
            s, t = normalize_peak(s), normalize_peak(t)
        pairs.append(UtterancePair(stem, s, t))
    return ParallelCorpus(tuple(pairs),
                          source_speaker or src_dir.name,
                          target_speaker or tgt_dir.name,
                          only_src, only_tgt)
