"""DCO-OFDM transceiver: Gray QAM, Hermitian-symmetric IFFT frames, cyclic
prefix, DC bias, linear optical channel with photodiode responsivity and
AWGN, and one-tap zero-forcing reception with minimum-distance decisions.

The IFFT/FFT pair is unitary (scaled by sqrt(N)), so a frame's energy is
identical in both domains.  LED clipping and nonlinearity are deliberately
not modeled; the channel is linear.

The Gray constellation is fixed and documented (see docs/constellations.md):
each axis carries a binary-reflected Gray code over the PAM levels ordered
from most positive to most negative, the first half of a symbol's bits maps
the I axis and the second half the Q axis, and symbols are scaled to unit
average energy.  For 4-QAM, bits "00" map to (1+1j)/sqrt(2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

_ALLOWED_QAM = (4, 16, 64)


@dataclass(frozen=True)
class OfdmConfig:
    """Modem parameters.

    ``dc_bias`` is in units of the transmitted signal's standard deviation.
    ``p_t_dbm`` is the average electrical transmit power of the information
    signal, before the bias is added.  ``t_s`` is bookkeeping only: nothing
    here depends on the absolute sample rate.
    """

    n_sub: int = 64
    n_cp: int = 4
    m_order: int = 4
    t_s: float = 1e-6
    dc_bias: float = 3.0
    p_t_dbm: float = -12.0

    def __post_init__(self):
        if self.n_sub < 4 or self.n_sub & (self.n_sub - 1):
            raise ValueError("n_sub must be a power of two, at least 4")
        if not 0 <= self.n_cp < self.n_sub:
            raise ValueError("n_cp must satisfy 0 <= n_cp < n_sub")
        if self.m_order not in _ALLOWED_QAM:
            raise ValueError(f"m_order must be one of {_ALLOWED_QAM}")
        if not self.t_s > 0:
            raise ValueError("t_s must be positive")
        if self.dc_bias < 0:
            raise ValueError("dc_bias must be non-negative")

    @property
    def n_data(self) -> int:
        return self.n_sub // 2 - 1

    @property
    def bits_per_symbol(self) -> int:
        return int(math.log2(self.m_order))

    @property
    def bits_per_frame(self) -> int:
        return self.n_data * self.bits_per_symbol

    @property
    def frame_len(self) -> int:
        return self.n_sub + self.n_cp

    @property
    def p_t_watts(self) -> float:
        return 1e-3 * 10.0 ** (self.p_t_dbm / 10.0)

    @property
    def tx_scale(self) -> float:
        # unit-energy symbols fill N-2 of N bins, so the raw frame's mean
        # sample power is (N-2)/N; compensate to hit P_T on average
        return math.sqrt(self.p_t_watts * self.n_sub / (self.n_sub - 2))


# --------------------------------------------------------------------------
# Gray-mapped square QAM

def _gray_levels(bits_per_axis: int) -> np.ndarray:
    """PAM level for each bit pattern (pattern value indexes the array)."""
    n_levels = 1 << bits_per_axis
    levels = np.empty(n_levels)
    for code in range(n_levels):
        v = code
        shift = 1
        while shift < bits_per_axis + 1:  # Gray -> binary
            v ^= v >> shift
            shift <<= 1
        levels[code] = (n_levels - 1) - 2 * v
    return levels


def _qam_scale(m_order: int) -> float:
    return math.sqrt(3.0 / (2.0 * (m_order - 1)))


def qam_map(bits, m_order: int) -> np.ndarray:
    """Map a bit array to Gray-coded square-QAM symbols of unit mean energy."""
    if m_order not in _ALLOWED_QAM:
        raise ValueError(f"m_order must be one of {_ALLOWED_QAM}")
    bits = np.asarray(bits, dtype=np.int64).ravel()
    k = int(math.log2(m_order))
    if bits.size % k:
        raise ValueError(f"bit count must be a multiple of {k}")
    half = k // 2
    groups = bits.reshape(-1, k)
    weights = 1 << np.arange(half - 1, -1, -1)  # MSB first
    codes_i = groups[:, :half] @ weights
    codes_q = groups[:, half:] @ weights
    levels = _gray_levels(half)
    return _qam_scale(m_order) * (levels[codes_i] + 1j * levels[codes_q])


def qam_demap(symbols, m_order: int) -> np.ndarray:
    """Minimum-distance decisions back to bits (inverse of qam_map)."""
    if m_order not in _ALLOWED_QAM:
        raise ValueError(f"m_order must be one of {_ALLOWED_QAM}")
    symbols = np.asarray(symbols, dtype=complex).ravel()
    k = int(math.log2(m_order))
    half = k // 2
    n_levels = 1 << half
    scale = _qam_scale(m_order)

    def axis_codes(values):
        v = np.rint(((n_levels - 1) - values / scale) / 2.0).astype(np.int64)
        v = np.clip(v, 0, n_levels - 1)
        return v ^ (v >> 1)  # binary -> Gray

    codes_i = axis_codes(symbols.real)
    codes_q = axis_codes(symbols.imag)
    bits = np.empty((symbols.size, k), dtype=np.int64)
    for b in range(half):
        shift = half - 1 - b
        bits[:, b] = (codes_i >> shift) & 1
        bits[:, half + b] = (codes_q >> shift) & 1
    return bits.ravel()


def constellation(m_order: int):
    """(bit-string, symbol) table of the deployed Gray constellation."""
    k = int(math.log2(m_order))
    table = []
    for value in range(m_order):
        bits = [(value >> (k - 1 - i)) & 1 for i in range(k)]
        sym = complex(qam_map(np.array(bits), m_order)[0])
        table.append(("".join(str(b) for b in bits), sym))
    return table


# --------------------------------------------------------------------------
# Framing

@dataclass(frozen=True, eq=False)
class Frame:
    """One DCO-OFDM frame: payload bits, QAM symbols, real time samples."""

    bits: np.ndarray | None
    symbols: np.ndarray
    time_samples: np.ndarray


def hermitian_spectrum(symbols, n_sub: int) -> np.ndarray:
    """Subcarrier vector [0, s_1..s_{N/2-1}, 0, conj reversed] of length N."""
    symbols = np.atleast_2d(np.asarray(symbols, dtype=complex))
    n_data = n_sub // 2 - 1
    if symbols.shape[-1] != n_data:
        raise ValueError(f"need exactly {n_data} symbols per frame, got {symbols.shape[-1]}")
    x = np.zeros((symbols.shape[0], n_sub), dtype=complex)
    x[:, 1 : n_sub // 2] = symbols
    x[:, n_sub // 2 + 1 :] = np.conj(symbols[:, ::-1])
    return x


def _frames_to_time(symbols_2d, config: OfdmConfig) -> np.ndarray:
    """Unit-scale real time samples with CP, one frame per row."""
    spectrum = hermitian_spectrum(symbols_2d, config.n_sub)
    x = np.fft.ifft(spectrum, axis=-1) * math.sqrt(config.n_sub)
    peak = float(np.max(np.abs(x))) or 1.0
    if float(np.max(np.abs(x.imag))) > 1e-10 * peak:
        raise ValueError("Hermitian symmetry violated: non-real IFFT output")
    body = x.real
    if config.n_cp:
        body = np.concatenate([body[:, -config.n_cp :], body], axis=-1)
    return body


def build_frame(symbols, config: OfdmConfig, bits=None) -> Frame:
    """Assemble one frame from exactly N/2 - 1 QAM symbols."""
    symbols = np.asarray(symbols, dtype=complex).ravel()
    time_samples = _frames_to_time(symbols[None, :], config)[0]
    return Frame(bits=None if bits is None else np.asarray(bits), symbols=symbols,
                 time_samples=time_samples)


def transmit(frame: Frame, config: OfdmConfig) -> np.ndarray:
    """Scale a frame to the configured average electrical power and add bias.

    The scale is the deterministic expected-power factor (not a per-frame
    normalization), so the bias ``dc_bias * sigma`` is the same constant for
    every frame.  No clipping is applied.
    """
    sigma = math.sqrt(config.p_t_watts)
    return config.tx_scale * frame.time_samples + config.dc_bias * sigma


def modulate_bits(bits, config: OfdmConfig) -> np.ndarray:
    """Bits to a multi-frame transmit waveform (vectorized frame pipeline)."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size == 0 or bits.size % config.bits_per_frame:
        raise ValueError(f"bit count must be a positive multiple of {config.bits_per_frame}")
    symbols = qam_map(bits, config.m_order).reshape(-1, config.n_data)
    body = _frames_to_time(symbols, config)
    sigma = math.sqrt(config.p_t_watts)
    return (config.tx_scale * body + config.dc_bias * sigma).ravel()


# --------------------------------------------------------------------------
# Channel

@dataclass(frozen=True, eq=False)
class ChannelSpec:
    """Linear optical channel: flat gain or FIR taps, responsivity, AWGN.

    ``noise_power_dbm`` is the total noise power (noise PSD times system
    bandwidth) in electrical dBm; -inf disables noise.
    """

    kind: str
    gain: float | None
    taps: np.ndarray | None
    responsivity: float
    noise_power_dbm: float

    def __post_init__(self):
        if self.kind == "flat":
            if self.gain is None or not self.gain > 0:
                raise ValueError("flat channel needs a positive gain")
        elif self.kind == "fir":
            taps = np.asarray(self.taps, dtype=float)
            if taps.size == 0:
                raise ValueError("fir channel needs at least one tap")
            object.__setattr__(self, "taps", taps)
        else:
            raise ValueError(f"channel kind must be 'flat' or 'fir', got {self.kind!r}")
        if not self.responsivity > 0:
            raise ValueError("responsivity must be positive")

    @classmethod
    def flat(cls, gain: float, responsivity: float, noise_power_dbm: float):
        return cls("flat", gain, None, responsivity, noise_power_dbm)

    @classmethod
    def fir(cls, taps, responsivity: float, noise_power_dbm: float):
        return cls("fir", None, taps, responsivity, noise_power_dbm)

    @property
    def noise_variance(self) -> float:
        if self.noise_power_dbm == -math.inf:
            return 0.0
        return 1e-3 * 10.0 ** (self.noise_power_dbm / 10.0)


def apply_channel(waveform, channel: ChannelSpec, rng_seed=0) -> np.ndarray:
    """Propagate a waveform: y = R * (h * x) + AWGN, deterministic per seed."""
    x = np.asarray(waveform, dtype=float)
    if x.size == 0:
        raise ValueError("waveform must be non-empty")
    if channel.kind == "flat":
        y = channel.responsivity * channel.gain * x
    else:
        y = channel.responsivity * np.convolve(x, channel.taps)[: x.size]
    var = channel.noise_variance
    if var > 0.0:
        rng = np.random.default_rng(rng_seed)
        y = y + rng.normal(0.0, math.sqrt(var), x.size)
    return y


def known_channel_estimate(channel: ChannelSpec, config: OfdmConfig) -> np.ndarray:
    """Per-subcarrier complex gain from unit-energy symbols to received bins.

    Includes the transmit power scale and the photodiode responsivity, i.e.
    everything a zero-forcing receiver with perfect channel knowledge divides
    out.
    """
    base = channel.responsivity * config.tx_scale
    if channel.kind == "flat":
        return np.full(config.n_sub, base * channel.gain, dtype=complex)
    return base * np.fft.fft(channel.taps, config.n_sub)


def receive(waveform, n_frames: int, channel_estimate, config: OfdmConfig) -> np.ndarray:
    """Recover bits: remove DC mean, strip CP, FFT, zero-force, decide."""
    w = np.asarray(waveform, dtype=float)
    total = n_frames * config.frame_len
    if w.size < total:
        raise ValueError(f"waveform truncated: need {total} samples, got {w.size}")
    w = w[:total] - w[:total].mean()
    frames = w.reshape(n_frames, config.frame_len)[:, config.n_cp :]
    bins = np.fft.fft(frames, axis=-1) / math.sqrt(config.n_sub)
    est = np.asarray(channel_estimate, dtype=complex)
    if est.ndim == 0:
        est = np.full(config.n_sub, complex(est))
    data = bins[:, 1 : config.n_sub // 2] / est[1 : config.n_sub // 2]
    return qam_demap(data.ravel(), config.m_order)


# --------------------------------------------------------------------------
# AWGN theory

def qfunc(x):
    """Gaussian tail probability Q(x)."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


def qam_ber_awgn(m_order: int, snr_symbol):
    """Exact Gray-coded square-QAM bit error rate over AWGN.

    ``snr_symbol`` is the per-symbol SNR (symbol energy over total complex
    noise variance).  Uses the exact per-bit PAM expansion, summed over both
    axes.
    """
    if m_order not in _ALLOWED_QAM:
        raise ValueError(f"m_order must be one of {_ALLOWED_QAM}")
    gamma = np.asarray(snr_symbol, dtype=float)
    L = int(math.sqrt(m_order))
    kbits = int(math.log2(L))
    arg = np.sqrt(3.0 * gamma / (m_order - 1))
    total = np.zeros_like(gamma)
    for k in range(1, kbits + 1):
        pk = np.zeros_like(gamma)
        for i in range(int((1 - 2.0**-k) * L)):
            sign = (-1) ** ((i * 2 ** (k - 1)) // L)
            weight = 2 ** (k - 1) - (i * 2 ** (k - 1)) // L - (1 if (i * 2 ** (k - 1)) % L >= L / 2 else 0)
            pk = pk + sign * weight * qfunc((2 * i + 1) * arg)
        total = total + (2.0 / L) * pk
    out = total / kbits
    return out if out.ndim else float(out)


def symbol_snr(channel: ChannelSpec, config: OfdmConfig):
    """Per-subcarrier symbol SNR seen by the equalizer.

    Flat channels give a scalar; FIR channels an array over all N bins.
    """
    var = channel.noise_variance
    if var == 0.0:
        return math.inf
    est = known_channel_estimate(channel, config)
    snr = np.abs(est) ** 2 / var
    if channel.kind == "flat":
        return float(snr[1])
    return snr
