"""Binary run-file format, event filtering and spectrum histogramming.

File layout (all integers little-endian, fixed width, no padding):

    header:
        magic            4 bytes, b"VIP2"
        format_version   u16        (currently 1)
        run_id_len       u16
        run_id           run_id_len bytes, UTF-8
        current_ma       u32        applied DC current in milliamperes
        live_time_s      u64        live time in whole seconds
        current_on       u8         0 or 1
        event_count      u64
    records, event_count times, 80 bytes each:
        timestamp_ns     u64        non-decreasing within one file
        trigger_flags    u8         bit0 SDD self-trigger, bit1 veto inner,
                                    bit2 veto outer
        sdd_id           u8         0..5, or 255 for veto-only records
        adc              u16        raw amplitude channel
        qdc              32 x u16   scintillator charges
        sdd_timing_ns    i32        SDD time relative to the trigger

A record has sdd_id == 255 exactly when bit0 of trigger_flags is clear.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .core import ResponseModel, RunMeta
from .errors import (BadMagicError, DomainError, FormatError,
                     RecordInvariantError, TruncatedFileError,
                     UnsupportedVersionError)

MAGIC = b"VIP2"
FORMAT_VERSION = 1
QDC_CHANNELS = 32

TRIGGER_SDD = 0x01
TRIGGER_VETO_INNER = 0x02
TRIGGER_VETO_OUTER = 0x04
VETO_COINCIDENCE = TRIGGER_VETO_INNER | TRIGGER_VETO_OUTER
VETO_ONLY_SDD_ID = 255

EVENT_DTYPE = np.dtype([
    ("timestamp_ns", "<u8"),
    ("trigger_flags", "u1"),
    ("sdd_id", "u1"),
    ("adc", "<u2"),
    ("qdc", "<u2", (QDC_CHANNELS,)),
    ("sdd_timing_ns", "<i4"),
])
RECORD_SIZE = EVENT_DTYPE.itemsize

_HEAD_FIXED = struct.Struct("<4sHH")          # magic, version, run_id_len
_HEAD_TAIL = struct.Struct("<IQBQ")           # current_ma, live_time_s, on, count

KEEP_ALL = "keep-all"
REJECT_VETO_COINCIDENCE = "reject-veto-coincidence"


@dataclass(frozen=True)
class RunHeader:
    """Run metadata exactly as stored in the file."""

    run_id: str
    current_ma: int
    live_time_s: int
    current_on: bool
    event_count: int
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_meta(cls, meta: RunMeta, event_count: int) -> "RunHeader":
        return cls(run_id=meta.run_id,
                   current_ma=round(meta.current_a * 1000),
                   live_time_s=round(meta.live_time_s),
                   current_on=meta.current_on,
                   event_count=event_count)

    def to_meta(self) -> RunMeta:
        return RunMeta(run_id=self.run_id, current_a=self.current_ma / 1000.0,
                       live_time_s=float(self.live_time_s),
                       current_on=self.current_on)


def validate_records(events: np.ndarray, base_offset: int = 0) -> None:
    """Raise RecordInvariantError on the first record breaking an invariant."""
    sdd = events["sdd_id"]
    flags = events["trigger_flags"]
    bad_id = ~((sdd <= 5) | (sdd == VETO_ONLY_SDD_ID))
    veto_only = (flags & TRIGGER_SDD) == 0
    inconsistent = veto_only != (sdd == VETO_ONLY_SDD_ID)
    bad = bad_id | inconsistent
    if bad.any():
        i = int(np.argmax(bad))
        raise RecordInvariantError(
            f"record {i}: sdd_id={int(sdd[i])} trigger_flags={int(flags[i]):#04x} "
            "violate the sdd_id/self-trigger invariant",
            offset=base_offset + i * RECORD_SIZE, record_index=i)
    ts = events["timestamp_ns"]
    if ts.size > 1:
        drop = np.diff(ts.astype(np.int64)) < 0
        if drop.any():
            i = int(np.argmax(drop)) + 1
            raise RecordInvariantError(
                f"record {i}: timestamp decreases",
                offset=base_offset + i * RECORD_SIZE, record_index=i)


def _encode_header(header: RunHeader) -> bytes:
    rid = header.run_id.encode("utf-8")
    if len(rid) > 0xFFFF:
        raise FormatError("run_id longer than 65535 bytes")
    return (_HEAD_FIXED.pack(MAGIC, header.format_version, len(rid)) + rid
            + _HEAD_TAIL.pack(header.current_ma, header.live_time_s,
                              int(header.current_on), header.event_count))


def write_run(header: RunHeader, events: np.ndarray,
              destination: BinaryIO | str | Path) -> int:
    """Write one run file; returns the number of bytes written.

    ``events`` must be an EVENT_DTYPE array sorted by timestamp, with
    exactly ``header.event_count`` records.
    """
    events = np.asarray(events, dtype=EVENT_DTYPE)
    if len(events) != header.event_count:
        raise FormatError(
            f"header declares {header.event_count} events, got {len(events)}")
    ts = events["timestamp_ns"]
    if ts.size > 1 and (np.diff(ts.astype(np.int64)) < 0).any():
        raise FormatError("events are not sorted by timestamp")
    head = _encode_header(header)
    validate_records(events, base_offset=len(head))
    payload = events.tobytes()
    if isinstance(destination, (str, Path)):
        with open(destination, "wb") as fh:
            fh.write(head)
            fh.write(payload)
    else:
        destination.write(head)
        destination.write(payload)
    return len(head) + len(payload)


def read_run(source: BinaryIO | bytes | str | Path) -> tuple[RunHeader, np.ndarray]:
    """Parse a run file, validating structure and record invariants.

    Returns the header and the full record array.  Raises a FormatError
    subclass naming the failing byte offset on any structural problem.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            data = fh.read()
    elif isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    else:
        data = source.read()

    if len(data) < _HEAD_FIXED.size:
        raise TruncatedFileError("file ends inside the fixed header",
                                 offset=len(data))
    magic, version, rid_len = _HEAD_FIXED.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"unsupported format version {version}", offset=4)
    pos = _HEAD_FIXED.size
    if len(data) < pos + rid_len + _HEAD_TAIL.size:
        raise TruncatedFileError("file ends inside the header",
                                 offset=len(data))
    run_id = data[pos:pos + rid_len].decode("utf-8")
    pos += rid_len
    current_ma, live_time_s, on_byte, event_count = _HEAD_TAIL.unpack_from(data, pos)
    pos += _HEAD_TAIL.size
    if on_byte not in (0, 1):
        raise FormatError(f"current_on byte must be 0 or 1, got {on_byte}",
                          offset=pos - 1 - 8)
    header = RunHeader(run_id=run_id, current_ma=current_ma,
                       live_time_s=live_time_s, current_on=bool(on_byte),
                       event_count=event_count, format_version=version)

    body = len(data) - pos
    expected = event_count * RECORD_SIZE
    if body < expected:
        raise TruncatedFileError(
            f"expected {event_count} records ({expected} bytes), "
            f"found {body} bytes",
            offset=len(data), record_index=body // RECORD_SIZE)
    if body > expected:
        raise FormatError(f"{body - expected} trailing bytes after the last "
                          "declared record", offset=pos + expected)
    events = np.frombuffer(data[pos:pos + expected], dtype=EVENT_DTYPE).copy()
    validate_records(events, base_offset=pos)
    return header, events


def select_events(events: np.ndarray, trigger_filter: int | None = None,
                  veto_policy: str = REJECT_VETO_COINCIDENCE) -> np.ndarray:
    """Filter records by trigger mask and veto policy.

    ``trigger_filter`` keeps records having all the given flag bits set
    (None keeps everything).  ``reject-veto-coincidence`` additionally
    drops records with both veto-layer bits set; ``keep-all`` is identity.
    """
    if veto_policy not in (KEEP_ALL, REJECT_VETO_COINCIDENCE):
        raise DomainError(f"unknown veto policy {veto_policy!r}")
    keep = np.ones(len(events), dtype=bool)
    flags = events["trigger_flags"]
    if trigger_filter is not None:
        keep &= (flags & trigger_filter) == trigger_filter
    if veto_policy == REJECT_VETO_COINCIDENCE:
        keep &= (flags & VETO_COINCIDENCE) != VETO_COINCIDENCE
    return events[keep]


@dataclass(frozen=True)
class Spectrum:
    """Binned counts on a uniform channel or energy axis.

    ``lo``/``hi`` are the outer bin edges; channel-axis spectra use
    half-integer edges so bin centers are whole channel numbers.
    Under/overflow events are tallied separately so that
    ``counts.sum() + underflow + overflow`` equals the event count.
    """

    kind: str                      # "channel" | "energy"
    lo: float
    hi: float
    counts: np.ndarray
    live_time_s: float = 0.0
    detector_selection: frozenset[int] = frozenset()
    run_ids: tuple[str, ...] = ()
    underflow: int = 0
    overflow: int = 0

    def __post_init__(self):
        if self.kind not in ("channel", "energy"):
            raise DomainError(f"unknown axis kind {self.kind!r}")
        if not self.hi > self.lo:
            raise DomainError("spectrum axis is empty or reversed")
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size == 0:
            raise DomainError("counts must be a non-empty 1-d array")
        if (counts < 0).any():
            raise DomainError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def nbins(self) -> int:
        return int(self.counts.size)

    @property
    def bin_edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.nbins + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        edges = self.bin_edges
        return 0.5 * (edges[:-1] + edges[1:])

    def merge(self, other: "Spectrum") -> "Spectrum":
        """Combine two spectra with identical binning; live times add."""
        if (self.kind, self.lo, self.hi, self.nbins) != \
                (other.kind, other.lo, other.hi, other.nbins):
            raise DomainError("cannot merge spectra with different binning")
        return Spectrum(
            kind=self.kind, lo=self.lo, hi=self.hi,
            counts=self.counts + other.counts,
            live_time_s=self.live_time_s + other.live_time_s,
            detector_selection=self.detector_selection | other.detector_selection,
            run_ids=tuple(sorted(set(self.run_ids) | set(other.run_ids))),
            underflow=self.underflow + other.underflow,
            overflow=self.overflow + other.overflow)

    def __add__(self, other: "Spectrum") -> "Spectrum":
        return self.merge(other)


def histogram(events: np.ndarray, response: ResponseModel | None = None,
              bins: int | None = None, lo: float | None = None,
              hi: float | None = None,
              detectors: Iterable[int] | None = None,
              live_time_s: float = 0.0,
              run_ids: tuple[str, ...] = ()) -> Spectrum:
    """Histogram event amplitudes into a Spectrum.

    With a ResponseModel the axis is energy in eV (events binned at
    ``offset + gain * adc``, default 1 eV bins over 2000-12000 eV); with
    ``response=None`` the axis is the raw channel number, defaulting to
    one bin per channel over the full 16-bit range.
    """
    if response is None:
        kind = "channel"
        nbins = 65536 if bins is None else bins
        lo_ = -0.5 if lo is None else lo
        hi_ = 65535.5 if hi is None else hi
    else:
        kind = "energy"
        nbins = 10000 if bins is None else bins
        lo_ = 2000.0 if lo is None else lo
        hi_ = 12000.0 if hi is None else hi
    if nbins <= 0:
        raise DomainError("bins must be positive")
    if detectors is not None:
        det = frozenset(int(d) for d in detectors)
        events = events[np.isin(events["sdd_id"], sorted(det))]
    else:
        det = frozenset(range(6))

    adc = events["adc"].astype(np.float64)
    values = adc if response is None else response.energy_of(adc)
    # keep the axis half-open: np.histogram would close the last bin
    inside = (values >= lo_) & (values < hi_)
    counts, _ = np.histogram(values[inside], bins=nbins, range=(lo_, hi_))
    underflow = int((values < lo_).sum())
    overflow = int((values >= hi_).sum())
    return Spectrum(kind=kind, lo=lo_, hi=hi_, counts=counts,
                    live_time_s=live_time_s, detector_selection=det,
                    run_ids=run_ids, underflow=underflow, overflow=overflow)


def export_spectrum(spec: Spectrum, destination: BinaryIO | str | Path) -> None:
    """Write a spectrum as two-column text (bin center, counts).

    Metadata lines are prefixed with '#'.
    """
    lines = [
        f"# axis: {spec.kind}",
        f"# range: {spec.lo} {spec.hi}",
        f"# bins: {spec.nbins}",
        f"# live_time_s: {spec.live_time_s}",
        f"# detectors: {','.join(str(d) for d in sorted(spec.detector_selection))}",
        f"# run_ids: {','.join(spec.run_ids)}",
        f"# underflow: {spec.underflow}",
        f"# overflow: {spec.overflow}",
    ]
    for center, n in zip(spec.bin_centers, spec.counts):
        lines.append(f"{center:.6g} {int(n)}")
    text = "\n".join(lines) + "\n"
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text)
    else:
        destination.write(text.encode())
