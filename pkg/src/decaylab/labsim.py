"""Synthetic scattered-light measurement: multi-exposure imaging, HDR fusion, p(t) extraction.

Forward model per pixel of waveguide n at scan position t and exposure tau:

    population_n(t) * 10^(-loss_db_per_cm * t[cm] / 10) * tau * gain * (1 + eta)

eta is static speckle (identical for every exposure), truncated at -1, then
the value is rounded and clipped at the sensor ceiling.
"""

from __future__ import annotations

import io
import json
import math
import zipfile
from functools import lru_cache
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import FitError, ParameterError
from .evolve import site_population_history
from .model import ChainParams


def _default_exposures() -> tuple[float, ...]:
    return tuple(float(x) for x in np.geomspace(1.0, 63.0, 7))


@dataclass(frozen=True)
class LabConfig:
    loss_db_per_cm: float = 0.6
    speckle_rel_sigma: float = 0.05
    exposures_ms: tuple = field(default_factory=_default_exposures)
    bit_depth: int = 8
    window_mm: float = 0.2
    step_mm: float = 0.5
    t_max_mm: float = 88.0
    seed: int = 0
    pixels_per_waveguide: int = 20
    rows_per_window: int = 4
    n_waveguides: int = 40
    saturation_target: float = 0.9
    quantize: bool = True

    def __post_init__(self):
        exposures = tuple(float(x) for x in self.exposures_ms)
        object.__setattr__(self, "exposures_ms", exposures)
        if not exposures or any(e <= 0 for e in exposures) or any(b <= a for a, b in zip(exposures, exposures[1:])):
            raise ParameterError("exposures_ms must be positive and strictly increasing")
        if self.bit_depth < 1:
            raise ParameterError("bit_depth must be >= 1")
        if not self.window_mm > 0 or not self.step_mm > 0 or not self.t_max_mm > 0:
            raise ParameterError("window_mm, step_mm and t_max_mm must be positive")
        if self.speckle_rel_sigma < 0 or self.loss_db_per_cm < 0:
            raise ParameterError("speckle_rel_sigma and loss_db_per_cm must be >= 0")
        for key in ("pixels_per_waveguide", "rows_per_window", "n_waveguides"):
            if getattr(self, key) < 1:
                raise ParameterError(f"{key} must be >= 1")
        if self.n_waveguides < 3:
            raise ParameterError("n_waveguides must be >= 3")
        if not 0 < self.saturation_target <= 1:
            raise ParameterError("saturation_target must lie in (0, 1]")

    @property
    def ceiling(self) -> int:
        return 2**self.bit_depth - 1

    def positions(self) -> np.ndarray:
        n = int(math.floor(self.t_max_mm / self.step_mm + 1e-9)) + 1
        return np.arange(n) * self.step_mm

    def row_offsets(self) -> np.ndarray:
        r = self.rows_per_window
        return self.window_mm * ((np.arange(r) + 0.5) / r - 0.5)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["exposures_ms"] = list(self.exposures_ms)
        return out


@dataclass(frozen=True)
class ImageStack:
    """Frames indexed (position, exposure, row, waveguide, pixel)."""

    t: np.ndarray
    frames: np.ndarray
    populations: np.ndarray
    gain: float
    config: LabConfig
    params: Optional[ChainParams] = None

    @property
    def ceiling(self) -> int:
        return self.config.ceiling

    @property
    def exposures(self) -> np.ndarray:
        return np.asarray(self.config.exposures_ms)

    def header(self) -> dict:
        n_pos, n_exp, rows, n_wg, ppw = self.frames.shape
        return {
            "format": "decaylab-image-stack",
            "version": 1,
            "axes": ["position", "exposure", "row", "waveguide", "pixel"],
            "shape": [n_pos, n_exp, rows, n_wg, ppw],
            "exposures_ms": list(self.config.exposures_ms),
            "seed": self.config.seed,
            "gain_per_ms": self.gain,
            "ceiling": self.ceiling,
            "config": self.config.as_dict(),
            "params": None if self.params is None else self.params.as_dict(),
        }


def _sample_times(lab: LabConfig) -> np.ndarray:
    # rows before the input facet see only the first waveguide
    return np.clip(lab.positions()[:, None] + lab.row_offsets()[None, :], 0.0, None)


def loss_factor(t_mm, loss_db_per_cm: float):
    return 10.0 ** (-loss_db_per_cm * np.asarray(t_mm, dtype=float) / 100.0)


def _speckle(lab: LabConfig, n_pos: int) -> np.ndarray:
    shape = (lab.rows_per_window, lab.n_waveguides, lab.pixels_per_waveguide)
    if lab.speckle_rel_sigma == 0:
        return np.zeros((n_pos,) + shape)
    # one independent stream per scan position
    children = np.random.SeedSequence(lab.seed).spawn(n_pos)
    eta = np.stack([np.random.default_rng(c).normal(0.0, lab.speckle_rel_sigma, shape) for c in children])
    return np.maximum(eta, -1.0)


@lru_cache(maxsize=16)
def _populations(params: ChainParams, lab: LabConfig) -> np.ndarray:
    sample_t = _sample_times(lab)
    pops = site_population_history(params, sample_t.ravel(), lab.n_waveguides)
    pops = pops.reshape(sample_t.shape + (lab.n_waveguides,))
    pops.setflags(write=False)
    return pops


def _geometry(lab: LabConfig) -> LabConfig:
    # populations depend only on the sampling geometry
    return LabConfig(
        window_mm=lab.window_mm, step_mm=lab.step_mm, t_max_mm=lab.t_max_mm,
        rows_per_window=lab.rows_per_window, n_waveguides=lab.n_waveguides,
    )


def synthesize_stack(params: ChainParams, lab: LabConfig) -> ImageStack:
    t = lab.positions()
    pops = _populations(params, _geometry(lab))
    eta = _speckle(lab, t.size)

    # loss taken at the window centre: the same factor for every pixel of a position
    loss = loss_factor(t, lab.loss_db_per_cm)
    signal = pops[..., None] * loss[:, None, None, None] * (1.0 + eta)
    exposures = np.asarray(lab.exposures_ms)
    # brightest pixel of the stack sits at saturation_target at the shortest exposure
    gain = lab.saturation_target * lab.ceiling / (signal.max() * exposures[0])
    raw = signal[:, None] * (exposures[None, :, None, None, None] * gain)
    if lab.quantize:
        frames = np.minimum(np.rint(raw), lab.ceiling).astype(np.uint16 if lab.bit_depth <= 16 else np.uint32)
    else:
        frames = np.minimum(raw, float(lab.ceiling))
    return ImageStack(t=t, frames=frames, populations=pops, gain=float(gain), config=lab, params=params)


@dataclass(frozen=True)
class Reconstruction:
    """Per-pixel intensity in counts/ms with the exposure that produced it."""

    t: np.ndarray
    intensity: np.ndarray
    exposure_index: np.ndarray
    valid: np.ndarray
    config: LabConfig

    def invalid_positions(self, waveguides=None) -> np.ndarray:
        valid = self.valid if waveguides is None else self.valid[:, :, waveguides]
        bad = ~valid.reshape(valid.shape[0], -1).all(axis=1)
        return self.t[bad]


def hdr_reconstruct(stack: ImageStack, strict: bool = False) -> Reconstruction:
    """Per pixel, keep the longest exposure below the ceiling and divide by its duration.

    Pixels saturated even at the shortest exposure are marked invalid; with
    ``strict`` their positions raise instead.
    """
    frames = stack.frames
    unsaturated = frames < stack.ceiling
    n_exp = frames.shape[1]
    # index of the last unsaturated exposure along axis 1
    reversed_ok = unsaturated[:, ::-1]
    last = n_exp - 1 - np.argmax(reversed_ok, axis=1)
    valid = unsaturated.any(axis=1)
    last = np.where(valid, last, 0)
    chosen = np.take_along_axis(frames, last[:, None], axis=1)[:, 0].astype(float)
    intensity = chosen / stack.exposures[last]
    intensity = np.where(valid, intensity, np.nan)
    recon = Reconstruction(t=stack.t, intensity=intensity, exposure_index=last, valid=valid, config=stack.config)
    if strict:
        bad = recon.invalid_positions()
        if bad.size:
            raise ParameterError(f"saturated at every exposure at t = {', '.join(f'{x:g}' for x in bad)} mm")
    return recon


@dataclass(frozen=True)
class HdrProfile:
    t: np.ndarray
    p1: np.ndarray
    p_tot: np.ndarray
    p: np.ndarray
    sigma_p: np.ndarray
    sigma_t: float
    sigma_p_over_p: float
    quantization_p: np.ndarray
    window_mm: float
    dropped: tuple = ()
    decaying_total: bool = True


def estimate_uncertainty(profile: HdrProfile, loss_configured: bool = True) -> tuple[float, float, bool]:
    """(sigma_p/p, sigma_t, total-power-decays flag) from an exponential fit to P_tot.

    sigma_p/p is the RMS of the fit residuals relative to the fitted values;
    sigma_t is the standard deviation of a uniform window of width w.
    """
    if profile.t.size < 10:
        raise FitError("uncertainty estimate needs at least 10 positions")
    coef = np.polyfit(profile.t, np.log(profile.p_tot), 1)
    fitted = np.exp(np.polyval(coef, profile.t))
    rel = profile.p_tot / fitted - 1.0
    sigma_rel = float(np.sqrt(np.mean(rel**2)))
    decaying = not (loss_configured and coef[0] >= 0)
    return sigma_rel, profile.window_mm / math.sqrt(12.0), decaying


def extract_survival(recon: Reconstruction, lab: Optional[LabConfig] = None) -> HdrProfile:
    """Sum window rows and pixels into P_1 (first waveguide) and P_tot; p = P_1/P_tot."""
    lab = lab or recon.config
    bad = ~recon.valid.reshape(recon.valid.shape[0], -1).all(axis=1)
    keep = ~bad
    intensity = recon.intensity[keep]
    p1 = intensity[:, :, 0, :].sum(axis=(1, 2))
    p_tot = intensity.sum(axis=(1, 2, 3))
    p = p1 / p_tot

    # half a count per pixel, rescaled by each pixel's exposure
    half_step = 0.5 / np.asarray(lab.exposures_ms)[recon.exposure_index[keep]] if lab.quantize else np.zeros_like(intensity)
    dp1 = half_step[:, :, 0, :].sum(axis=(1, 2))
    dtot = half_step.sum(axis=(1, 2, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        quant = p * (np.where(p1 > 0, dp1 / p1, 0.0) + dtot / p_tot)

    partial = HdrProfile(
        t=recon.t[keep], p1=p1, p_tot=p_tot, p=p, sigma_p=np.zeros_like(p), sigma_t=lab.window_mm / math.sqrt(12.0),
        sigma_p_over_p=0.0, quantization_p=quant, window_mm=lab.window_mm,
        dropped=tuple(float(x) for x in recon.t[bad]),
    )
    if partial.t.size < 10:
        return partial
    sigma_rel, sigma_t, decaying = estimate_uncertainty(partial, loss_configured=lab.loss_db_per_cm > 0)
    return HdrProfile(
        t=partial.t, p1=p1, p_tot=p_tot, p=p, sigma_p=p * sigma_rel, sigma_t=sigma_t, sigma_p_over_p=sigma_rel,
        quantization_p=quant, window_mm=lab.window_mm, dropped=partial.dropped, decaying_total=decaying,
    )


def ground_truth(stack: ImageStack) -> np.ndarray:
    """Window-averaged first-waveguide population at every scan position."""
    return stack.populations[:, :, 0].mean(axis=1)


def dynamic_range(recon: Reconstruction) -> float:
    """Brightest over faintest non-zero reconstructed pixel intensity."""
    values = recon.intensity[recon.valid]
    values = values[values > 0]
    return float(values.max() / values.min()) if values.size else 0.0


def save_stack(stack: ImageStack, path) -> None:
    """Write a .npz archive: frames, ground-truth populations and a JSON header.

    Entries carry a fixed timestamp so identical stacks give identical bytes.
    """
    header = json.dumps(stack.header(), sort_keys=True)
    arrays = {
        "header": np.frombuffer(header.encode(), dtype=np.uint8),
        "t_mm": stack.t,
        "frames": stack.frames,
        "populations": np.ascontiguousarray(stack.populations),
    }
    with zipfile.ZipFile(path, "w") as zf:
        for name, array in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(array), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_stack(path) -> ImageStack:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        config = dict(header["config"])
        config["exposures_ms"] = tuple(config["exposures_ms"])
        params = None if header["params"] is None else ChainParams(**header["params"])
        return ImageStack(
            t=data["t_mm"].copy(),
            frames=data["frames"].copy(),
            populations=data["populations"].copy(),
            gain=float(header["gain_per_ms"]),
            config=LabConfig(**config),
            params=params,
        )
