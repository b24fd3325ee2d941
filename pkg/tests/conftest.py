"""Shared builders for the test suite.

All synthetic sweeps are generated from the forward model so round-trip
tests have exact ground truth.  Seeds are fixed; nothing here depends on
wall time or filesystem state outside pytest tmp dirs.
"""

from __future__ import annotations

import numpy as np
import pytest

from ofetsim.extract import IvSweep
from ofetsim.model import DeviceGeometry, OtftParams, drain_current_with_contacts


REF_GEOM = DeviceGeometry(w=380e-6, l=35e-6, lov=5e-6)


def ref_params(**overrides) -> OtftParams:
    base = dict(polarity="p", mu0=2.35e-5, vth=-0.8, ss=0.18, lam=0.015,
                gamma=0.0, rc=30e3, cox=3.5e-4, geom=REF_GEOM)
    base.update(overrides)
    return OtftParams(**base)


def synth_transfer(p: OtftParams, vds: float, v_start: float = 0.0,
                   v_stop: float | None = None, step: float = 0.25,
                   noise: float = 0.0, seed: int = 0,
                   device_id: str = "dut") -> IvSweep:
    sgn = -1.0 if p.polarity == "p" else 1.0
    if v_stop is None:
        v_stop = sgn * 30.0
    n = int(round(abs(v_stop - v_start) / step)) + 1
    v = np.linspace(v_start, v_stop, n)
    i = drain_current_with_contacts(p, v, np.full(n, vds))
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        i = i * (1.0 + noise * rng.standard_normal(n))
    return IvSweep(device_id=device_id, kind="transfer", geom=p.geom,
                   cox=p.cox, fixed_bias=vds, v=v, i=i)


def synth_output(p: OtftParams, vgs: float, step: float = 0.5,
                 noise: float = 0.0, seed: int = 1,
                 device_id: str = "dut") -> IvSweep:
    sgn = -1.0 if p.polarity == "p" else 1.0
    v = np.linspace(0.0, sgn * 30.0, int(round(30.0 / step)) + 1)
    i = drain_current_with_contacts(p, np.full(v.size, vgs), v)
    if noise > 0.0:
        rng = np.random.default_rng(seed)
        i = i * (1.0 + noise * rng.standard_normal(v.size))
    return IvSweep(device_id=device_id, kind="output", geom=p.geom,
                   cox=p.cox, fixed_bias=vgs, v=v, i=i)


@pytest.fixture
def pcard() -> OtftParams:
    return ref_params()
