"""Forward measurement synthesis: exact predictions and noisy draws.

Channels per radar: range d = ||r - s|| + N(0, sigma_d^2), direction
u ~ VMF((r - s)/||r - s||, kappa), Doppler f = (2 f_c / c) u_pred . v
+ N(0, sigma_f^2).
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    SPEED_OF_LIGHT,
    EARTH_RADIUS,
    GeometryError,
    MeasurementTuple,
    RadarSite,
    Scenario,
    StateVector,
    derive_stream,
)
from .vmf import VmfParams, vmf_sample

MIN_SITE_DISTANCE = 1e3  # m

CSV_HEADER = "radar_id,sx,sy,sz,sigma_d,kappa,sigma_f,f_c,d,ux,uy,uz,f"


@dataclass(frozen=True)
class PredictedMeasurement:
    d_pred: float
    u_pred: np.ndarray
    f_pred: float


def predict(state: StateVector, site: RadarSite) -> PredictedMeasurement:
    """Noiseless observation of `state` from `site`."""
    z = state.r - site.s
    d = float(np.linalg.norm(z))
    if d < MIN_SITE_DISTANCE:
        raise GeometryError(f"singular geometry: state within {MIN_SITE_DISTANCE} m of site")
    u = z / d
    f = float((2.0 * site.f_c / SPEED_OF_LIGHT) * (u @ state.v))
    u.flags.writeable = False
    return PredictedMeasurement(d_pred=d, u_pred=u, f_pred=f)


def simulate_tuple(state: StateVector, site: RadarSite,
                   stream: np.random.Generator) -> MeasurementTuple:
    """One noisy measurement tuple. Non-positive range draws are redrawn
    (clamping would bias the Gaussian model the likelihood assumes)."""
    pred = predict(state, site)
    d = pred.d_pred + stream.normal(0.0, site.sigma_d)
    retries = 0
    while d <= 0.0:
        retries += 1
        if retries > 100:
            raise RuntimeError("implausible noise configuration: "
                               "100 consecutive non-positive range draws")
        d = pred.d_pred + stream.normal(0.0, site.sigma_d)
    u = vmf_sample(VmfParams(mu=pred.u_pred, kappa=site.kappa), stream)
    f = pred.f_pred + stream.normal(0.0, site.sigma_f)
    return MeasurementTuple(d=float(d), u=u, f=float(f))


def simulate_scenario(scn: Scenario) -> list[MeasurementTuple]:
    """One tuple per site; site i uses derive_stream(scn.seed, i)."""
    return [simulate_tuple(scn.truth, site, derive_stream(scn.seed, i))
            for i, site in enumerate(scn.sites)]


def noiseless_tuples(state: StateVector, sites: Sequence[RadarSite]) -> list[MeasurementTuple]:
    """Exact predictions packaged as measurements (zero-noise limit)."""
    out = []
    for site in sites:
        p = predict(state, site)
        out.append(MeasurementTuple(d=p.d_pred, u=p.u_pred, f=p.f_pred))
    return out


def generate_sites(truth_r: np.ndarray, n: int, stream: np.random.Generator,
                   sigma_d: float, kappa: float, sigma_f: float, f_c: float,
                   radius: float = EARTH_RADIUS) -> list[RadarSite]:
    """Radar sites uniform on the sphere of given radius, restricted to the
    hemisphere visible from truth_r. Guarantees geometric diversity."""
    rhat = np.asarray(truth_r, dtype=float)
    rhat = rhat / np.linalg.norm(rhat)
    dirs = stream.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    # reflect into the visible hemisphere
    dots = dirs @ rhat
    dirs[dots < 0.0] -= 2.0 * dots[dots < 0.0, None] * rhat
    return [RadarSite(s=radius * d, sigma_d=sigma_d, kappa=kappa,
                      sigma_f=sigma_f, f_c=f_c) for d in dirs]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_measurement_csv(path: str, sites: Sequence[RadarSite],
                          meas: Sequence[MeasurementTuple]) -> None:
    """Write the fixed-format measurement CSV atomically (write-then-rename)."""
    if len(sites) != len(meas):
        raise ValueError("sites and measurements must have equal length")
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    for i, (site, m) in enumerate(zip(sites, meas)):
        row = [str(i), _fmt(site.s[0]), _fmt(site.s[1]), _fmt(site.s[2]),
               _fmt(site.sigma_d), _fmt(site.kappa), _fmt(site.sigma_f),
               _fmt(site.f_c), _fmt(m.d), _fmt(m.u[0]), _fmt(m.u[1]),
               _fmt(m.u[2]), _fmt(m.f)]
        buf.write(",".join(row) + "\n")
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


class CsvFormatError(ValueError):
    """Malformed measurement CSV; carries the offending row number."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


def read_measurement_csv(path: str) -> tuple[list[RadarSite], list[MeasurementTuple]]:
    """Parse the fixed-format measurement CSV back into sites + tuples."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != CSV_HEADER:
        raise CsvFormatError(1, f"expected header '{CSV_HEADER}'")
    sites: list[RadarSite] = []
    meas: list[MeasurementTuple] = []
    for idx, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 13:
            raise CsvFormatError(idx, f"expected 13 fields, got {len(parts)}")
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise CsvFormatError(idx, str(exc)) from exc
        try:
            sites.append(RadarSite(s=vals[0:3], sigma_d=vals[3], kappa=vals[4],
                                   sigma_f=vals[5], f_c=vals[6]))
            u = np.asarray(vals[8:11])
            nu = np.linalg.norm(u)
            if nu == 0.0:
                raise ValueError("zero direction vector")
            meas.append(MeasurementTuple(d=vals[7], u=u / nu, f=vals[11]))
        except ValueError as exc:
            raise CsvFormatError(idx, str(exc)) from exc
    if not sites:
        raise CsvFormatError(2, "no data rows")
    return sites, meas
