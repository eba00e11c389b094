"""VNA frequency-sweep ingestion and post-processing.

Reads Touchstone v1 two-port files and sweep CSVs into uniform-grid
records, averages repeated realizations, and turns averaged sweeps into
band-averaged path loss, reflection coefficients and channel impulse
responses (zero padding below the measured band, Hermitian mirroring,
inverse FFT).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from ._halfmax import half_max_width

_GRID_RTOL = 1e-6

SWEEP_CSV_COLUMNS = (
    "freq_hz",
    "s21_re",
    "s21_im",
    "surface",
    "d1_m",
    "d2_m",
    "realization",
    "link",
)


class ParseError(ValueError):
    """Malformed measurement file; message carries the offending line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class SweepMeta:
    """Where and how one sweep was taken."""

    surface: str = "unknown"
    d1_m: float = 0.0
    d2_m: float = 0.0
    realization: int | None = 0
    link: str = "nlos"

    def __post_init__(self):
        if self.link not in ("los", "nlos"):
            raise ValueError(f"link must be 'los' or 'nlos', got {self.link!r}")

    def location_key(self):
        return (self.surface, self.d1_m, self.d2_m, self.link)


def _validated_grid(freqs):
    freqs = np.asarray(freqs, dtype=float)
    if freqs.ndim != 1 or freqs.size < 2:
        raise ValueError("a sweep needs at least 2 frequency points")
    steps = np.diff(freqs)
    if np.any(steps <= 0):
        raise ValueError("frequencies must be strictly increasing")
    df = float(np.mean(steps))
    if np.max(np.abs(steps - df)) > _GRID_RTOL * df:
        raise ValueError("non-uniform frequency step")
    freqs.flags.writeable = False
    return freqs


@dataclass(frozen=True, eq=False)
class SweepRecord:
    """One realization of a frequency sweep: uniform grid plus complex S21."""

    freqs: np.ndarray
    s21: np.ndarray
    meta: SweepMeta

    def __post_init__(self):
        freqs = _validated_grid(self.freqs)
        s21 = np.asarray(self.s21, dtype=complex)
        if s21.shape != freqs.shape:
            raise ValueError("s21 must have one value per frequency")
        s21.flags.writeable = False
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "s21", s21)

    @property
    def f_min(self):
        return float(self.freqs[0])

    @property
    def f_max(self):
        return float(self.freqs[-1])

    @property
    def delta_f(self):
        return float((self.freqs[-1] - self.freqs[0]) / (self.freqs.size - 1))

    @property
    def n_points(self):
        return int(self.freqs.size)


@dataclass(frozen=True, eq=False)
class AveragedSweep:
    """A sweep averaged over repeated realizations at one location."""

    freqs: np.ndarray
    s21_avg: np.ndarray
    n_realizations: int
    meta: SweepMeta

    def __post_init__(self):
        freqs = _validated_grid(self.freqs)
        s21 = np.asarray(self.s21_avg, dtype=complex)
        if s21.shape != freqs.shape:
            raise ValueError("s21_avg must have one value per frequency")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        s21.flags.writeable = False
        object.__setattr__(self, "freqs", freqs)
        object.__setattr__(self, "s21_avg", s21)

    @property
    def f_min(self):
        return float(self.freqs[0])

    @property
    def f_max(self):
        return float(self.freqs[-1])

    @property
    def delta_f(self):
        return float((self.freqs[-1] - self.freqs[0]) / (self.freqs.size - 1))


@dataclass(frozen=True, eq=False)
class Cir:
    """Uniformly sampled real-valued channel impulse response."""

    t_res: float
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if not self.t_res > 0:
            raise ValueError("t_res must be positive")
        samples = np.asarray(self.samples, dtype=float)
        if samples.size == 0:
            raise ValueError("samples must be non-empty")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)

    @property
    def times(self):
        return self.t0 + np.arange(self.samples.size) * self.t_res

    @property
    def peak_time(self):
        return float(self.t0 + int(np.argmax(np.abs(self.samples))) * self.t_res)


# --------------------------------------------------------------------------
# Touchstone v1 (.s2p) reader

_FREQ_UNITS = {"HZ": 1.0, "KHZ": 1e3, "MHZ": 1e6, "GHZ": 1e9}
_S2P_FORMATS = ("RI", "MA", "DB")


def _parse_option_line(tokens, lineno):
    unit, fmt = 1e9, "MA"  # Touchstone defaults: GHz, magnitude-angle
    it = iter(tokens)
    for tok in it:
        up = tok.upper()
        if up in _FREQ_UNITS:
            unit = _FREQ_UNITS[up]
        elif up in _S2P_FORMATS:
            fmt = up
        elif up == "S":
            continue
        elif up in ("Y", "Z", "H", "G"):
            raise ParseError(f"only S-parameter files are supported, got {up}", lineno)
        elif up == "R":
            ref = next(it, None)
            if ref is None:
                raise ParseError("option line: R must be followed by a resistance", lineno)
            try:
                float(ref)
            except ValueError:
                raise ParseError(f"option line: bad reference resistance {ref!r}", lineno) from None
        else:
            raise ParseError(f"option line: unknown token {tok!r}", lineno)
    return unit, fmt


def _s21_from_pair(a, b, fmt):
    if fmt == "RI":
        return complex(a, b)
    mag = a if fmt == "MA" else 10.0 ** (a / 20.0)
    ang = math.radians(b)
    return mag * complex(math.cos(ang), math.sin(ang))


def parse_touchstone(data, meta: SweepMeta = SweepMeta()) -> list[SweepRecord]:
    """Parse Touchstone v1 two-port data and extract the S21 column.

    Accepts RI/MA/DB formats and Hz/kHz/MHz/GHz units from the option line.
    Returns a single-record list; ``meta`` supplies the scenario metadata a
    .s2p file cannot carry.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    option = None
    freqs, values = [], []
    last_f = None
    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.split("!", 1)[0].strip()
        if not line:
            continue
        if line.startswith("#"):
            if option is None:  # later option lines are ignored per v1
                option = _parse_option_line(line[1:].split(), lineno)
            continue
        if option is None:
            raise ParseError("data before option line (# <unit> S <fmt> R <ref>)", lineno)
        tokens = line.split()
        if len(tokens) != 9:
            raise ParseError(f"expected 9 columns (f, S11, S21, S12, S22), got {len(tokens)}", lineno)
        try:
            nums = [float(t) for t in tokens]
        except ValueError:
            raise ParseError(f"non-numeric data field in {line!r}", lineno) from None
        unit, fmt = option
        f = nums[0] * unit
        if last_f is not None and f <= last_f:
            raise ParseError("non-monotonic frequencies", lineno)
        last_f = f
        freqs.append(f)
        values.append(_s21_from_pair(nums[3], nums[4], fmt))
    if option is None:
        raise ParseError("missing option line")
    if not freqs:
        raise ParseError("no data rows")
    try:
        record = SweepRecord(np.array(freqs), np.array(values), meta)
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    return [record]


# --------------------------------------------------------------------------
# Sweep CSV reader/writer

def parse_sweep_csv(data) -> list[SweepRecord]:
    """Parse the canonical sweep CSV into one record per realization.

    Header: ``freq_hz,s21_re,s21_im,surface,d1_m,d2_m,realization,link``.
    Rows are grouped by metadata; groups are returned ordered by location and
    realization so repeated realizations of a location stay together.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    reader = csv.reader(io.StringIO(data))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file") from None
    header = [h.strip() for h in header]
    missing = [c for c in SWEEP_CSV_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"missing columns: {', '.join(missing)}", line=1)
    extra = [c for c in header if c not in SWEEP_CSV_COLUMNS]
    if extra:
        raise ParseError(f"unexpected columns: {', '.join(extra)}", line=1)
    col = {name: header.index(name) for name in SWEEP_CSV_COLUMNS}

    groups: dict[tuple, list] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            f = float(row[col["freq_hz"]])
            re_v = float(row[col["s21_re"]])
            im_v = float(row[col["s21_im"]])
            d1 = float(row[col["d1_m"]])
            d2 = float(row[col["d2_m"]])
            realization = int(row[col["realization"]])
        except ValueError:
            raise ParseError(f"non-numeric field in {row!r}", lineno) from None
        surface = row[col["surface"]].strip()
        link = row[col["link"]].strip().lower()
        if link not in ("los", "nlos"):
            raise ParseError(f"link must be 'los' or 'nlos', got {link!r}", lineno)
        key = (surface, d1, d2, link, realization)
        groups.setdefault(key, []).append((f, complex(re_v, im_v)))

    if not groups:
        raise ParseError("no data rows")

    records = []
    for key in sorted(groups):
        surface, d1, d2, link, realization = key
        pairs = sorted(groups[key], key=lambda p: p[0])
        freqs = np.array([p[0] for p in pairs])
        s21 = np.array([p[1] for p in pairs])
        meta = SweepMeta(surface, d1, d2, realization, link)
        try:
            records.append(SweepRecord(freqs, s21, meta))
        except ValueError as exc:
            raise ParseError(f"group {key}: {exc}") from None
    return records


def write_sweep_csv(records) -> str:
    """Serialize records to the canonical sweep CSV (lossless round trip)."""
    out = io.StringIO()
    out.write(",".join(SWEEP_CSV_COLUMNS) + "\n")
    for rec in records:
        m = rec.meta
        for f, v in zip(rec.freqs, rec.s21):
            out.write(
                f"{float(f)!r},{float(v.real)!r},{float(v.imag)!r},{m.surface},"
                f"{float(m.d1_m)!r},{float(m.d2_m)!r},{m.realization},{m.link}\n"
            )
    return out.getvalue()


# --------------------------------------------------------------------------
# Averaging and band metrics

def average_realizations(records, mode: str = "complex") -> AveragedSweep:
    """Average repeated realizations of one location.

    ``mode='complex'`` takes the pointwise complex mean (phase-coherent VNA
    sweeps).  ``mode='power'`` averages |S21|**2 and stores its square root,
    discarding phase.
    """
    if not records:
        raise ValueError("no records to average")
    if mode not in ("complex", "power"):
        raise ValueError(f"unknown averaging mode {mode!r}")
    first = records[0]
    for rec in records[1:]:
        if rec.meta.location_key() != first.meta.location_key():
            raise ValueError("records disagree on surface/distance/link metadata")
        if not np.array_equal(rec.freqs, first.freqs):
            raise ValueError("records disagree on the frequency grid")
    stack = np.vstack([rec.s21 for rec in records])
    if mode == "complex":
        avg = stack.mean(axis=0)
    else:
        avg = np.sqrt((np.abs(stack) ** 2).mean(axis=0)).astype(complex)
    meta = replace(first.meta, realization=None)
    return AveragedSweep(first.freqs, avg, len(records), meta)


def path_loss_from_sweep(sweep: AveragedSweep) -> float:
    """Band-averaged electrical path loss: -10*log10(mean |S21|**2)."""
    p = float(np.mean(np.abs(sweep.s21_avg) ** 2))
    if p == 0.0:
        raise ValueError("all S21 values are zero; path loss undefined")
    return -10.0 * math.log10(p)


def reflection_coefficient(nlos_at_ref: AveragedSweep, los_at_ref: AveragedSweep) -> float:
    """Ratio of band-averaged NLoS gain to LoS gain at the reference distance.

    Gain is sqrt(mean |S21|**2) over the measured band.
    """
    if not np.array_equal(nlos_at_ref.freqs, los_at_ref.freqs):
        raise ValueError("sweeps must share the same frequency grid")
    g_nlos = math.sqrt(float(np.mean(np.abs(nlos_at_ref.s21_avg) ** 2)))
    g_los = math.sqrt(float(np.mean(np.abs(los_at_ref.s21_avg) ** 2)))
    if g_los == 0.0:
        raise ValueError("LoS gain is zero; reflection coefficient undefined")
    return g_nlos / g_los


# --------------------------------------------------------------------------
# CIR extraction

def cir_from_sweep(sweep: AveragedSweep, f_target: float, window: str | None = None) -> Cir:
    """Channel impulse response from an averaged sweep.

    Builds a one-sided spectrum on the sweep's frequency step from DC to
    ``f_target`` (zeros below the measured band and above it), mirrors it
    with complex conjugation into a Hermitian double-sided spectrum with the
    DC and Nyquist bins zeroed, and applies the inverse FFT.  The sample
    spacing of the result is 1/(2*n*df) for the n-bin one-sided grid; the
    resolvable pulse width is 1/(f_target - f_min), which is what drives the
    choice of ``f_target`` for a wanted resolution.

    Measured bins are snapped to the nearest grid bin; the sweep step must
    divide ``f_target`` to within 1e-6 relative, otherwise this is an error
    (no resampling is ever performed).  ``window='hann'`` applies a Hann
    window across the measured band before padding (default: none).
    """
    if f_target < sweep.f_max * (1.0 - 1e-12):
        raise ValueError("f_target must be at or above the sweep's maximum frequency")
    df = sweep.delta_f
    n_half = int(round(f_target / df))
    if n_half < 2:
        raise ValueError("f_target too small for the sweep's frequency step")
    if abs(n_half * df - f_target) > _GRID_RTOL * f_target:
        raise ValueError(
            f"sweep frequency step {df} Hz does not divide the target grid "
            f"0..{f_target} Hz within tolerance"
        )
    bins = np.rint(sweep.freqs / df).astype(np.int64)
    if np.any(np.diff(bins) != 1):
        raise ValueError("measured bins do not map onto consecutive grid bins")
    if bins[-1] > n_half:
        raise ValueError("measured band extends beyond the target grid")

    values = sweep.s21_avg
    if window == "hann":
        values = values * np.hanning(values.size)
    elif window is not None:
        raise ValueError(f"unknown window {window!r}")

    one_sided = np.zeros(n_half + 1, dtype=complex)
    one_sided[bins] = values

    n = 2 * n_half
    spectrum = np.zeros(n, dtype=complex)
    spectrum[1:n_half] = one_sided[1:n_half]
    spectrum[n_half + 1:] = np.conj(one_sided[1:n_half][::-1])
    # DC and Nyquist carry no measured energy and must be real: keep at 0.

    h = np.fft.ifft(spectrum)
    peak = float(np.max(np.abs(h)))
    if peak > 0 and float(np.max(np.abs(h.imag))) > 1e-9 * peak:
        raise ValueError("Hermitian construction failed: non-real impulse response")
    return Cir(t_res=1.0 / (n * df), samples=h.real)


def fwhm(cir: Cir) -> float:
    """Full width at half maximum of |h(t)|, linearly interpolated.

    Errors if the magnitude never crosses half of its peak on either side.
    """
    return half_max_width(cir.samples, cir.t_res, require_left_crossing=True)


# --------------------------------------------------------------------------
# Plot-data exports

def cir_to_csv(cir: Cir) -> str:
    """CIR as ``t_s,h`` CSV text."""
    out = io.StringIO()
    out.write("t_s,h\n")
    for t, h in zip(cir.times, cir.samples):
        out.write(f"{t:.12g},{h:.12g}\n")
    return out.getvalue()


def path_loss_csv(entries) -> str:
    """Path-loss table as ``surface,d2_m,pl_db`` CSV text."""
    out = io.StringIO()
    out.write("surface,d2_m,pl_db\n")
    for surface, d2_m, pl_db in entries:
        out.write(f"{surface},{d2_m:.12g},{pl_db:.12g}\n")
    return out.getvalue()
