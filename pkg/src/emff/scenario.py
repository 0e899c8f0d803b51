"""JSON scenario files and the built-in three-satellite maneuver.

Every quantity carries its unit in the field name.  Interaction frequencies are
exact rational multiples of pi, ``{"num": 200, "den": 1, "times_pi": true}``,
so the common period stays exact.
"""
from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

import numpy as np

from .model import ConstraintParams, PhysicalParams, pair_index
from .mpc import DEFAULT_ACCEL_WEIGHT, MpcConfig
from .safety import CbfConfig
from .sim import Scenario


class ScenarioError(ValueError):
    """Malformed scenario file; the message names the line or field."""


_MISSING = object()


class _Reader:
    def __init__(self, data: dict, path: str = ""):
        if not isinstance(data, dict):
            raise ScenarioError(f"{path or 'scenario'}: expected an object")
        self.data = data
        self.path = path

    def _name(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def raw(self, key: str, default=_MISSING):
        if key not in self.data:
            if default is _MISSING:
                raise ScenarioError(f"field '{self._name(key)}': missing")
            return default
        return self.data[key]

    def section(self, key: str) -> "_Reader":
        return _Reader(self.raw(key), self._name(key))

    def number(self, key: str, default=_MISSING) -> float:
        value = self.raw(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(f"field '{self._name(key)}': expected a number, got {value!r}")
        return float(value)

    def array(self, key: str, shape: tuple[int, ...], default=_MISSING) -> np.ndarray:
        value = self.raw(key, default)
        try:
            arr = np.array(value, dtype=float)
        except (TypeError, ValueError):
            raise ScenarioError(f"field '{self._name(key)}': expected numbers") from None
        if arr.shape != shape:
            raise ScenarioError(f"field '{self._name(key)}': expected shape {shape}, got {arr.shape}")
        return arr

    def pair_map(self, key: str, n: int, parse):
        value = self.raw(key)
        labels = pair_index(n).labels()
        if not isinstance(value, dict) or sorted(value) != sorted(labels):
            raise ScenarioError(f"field '{self._name(key)}': expected one entry per pair {labels}")
        out = []
        for label in labels:
            try:
                out.append(parse(value[label]))
            except (TypeError, ValueError, KeyError) as exc:
                raise ScenarioError(f"field '{self._name(key)}.{label}': {exc}") from None
        return out


def _omega(entry) -> Fraction:
    if not isinstance(entry, dict) or "num" not in entry:
        raise ValueError("expected {num, den, times_pi}")
    if entry.get("times_pi") is not True:
        raise ValueError("times_pi must be true")
    den = int(entry.get("den", 1))
    if den <= 0:
        raise ValueError("den must be positive")
    return Fraction(int(entry["num"]), den)


def _vec3(entry) -> list[float]:
    arr = np.array(entry, dtype=float)
    if arr.shape != (3,):
        raise ValueError("expected 3 numbers")
    return arr.tolist()


def scenario_from_dict(data: dict) -> Scenario:
    top = _Reader(data)
    n = int(top.number("n_satellites"))
    if n < 2:
        raise ScenarioError("field 'n_satellites': need at least 2")
    npairs = len(pair_index(n))

    phys = top.section("physical")
    constr = top.section("constraints")
    mpc = top.section("mpc")
    cbf = top.section("cbf")
    init = top.section("initial")
    integ = top.section("integration")

    try:
        params = PhysicalParams(
            m=phys.number("mass_kg"),
            n_turns=phys.number("coil_turns"),
            coil_area=phys.number("coil_area_m2"),
            coil_resistance=phys.number("coil_resistance_ohm"),
            coil_inductance=phys.number("coil_inductance_H"),
            omega_over_pi=tuple(phys.pair_map("omega_rad_per_s", n, _omega)),
        )
    except ValueError as exc:
        raise ScenarioError(f"section 'physical': {exc}") from None
    try:
        constraints = ConstraintParams(
            r_min=constr.number("r_min_m"), v_max=constr.number("v_max_m_per_s"),
            q_max=constr.number("q_max_VA"), eps1=constr.number("eps1_A2m4", 1e-3),
            eps2=constr.number("eps2_A4m8", 1e-3))
    except ValueError as exc:
        raise ScenarioError(f"section 'constraints': {exc}") from None

    w_input = mpc.raw("W_input", None)
    try:
        mpc_cfg = MpcConfig(
            d=np.array(mpc.pair_map("d_m", n, _vec3)),
            horizon=mpc.number("horizon_s"),
            step=mpc.number("step_s"),
            w_pos=mpc.array("W_pos", (3, 3)),
            w_vel=mpc.array("W_vel", (3, 3)),
            w_zeta=None if w_input is None else mpc.array("W_input", (3 * npairs, 3 * npairs)),
            accel_weight=mpc.number("accel_weight", DEFAULT_ACCEL_WEIGHT),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"section 'mpc': {exc}") from None
    try:
        cbf_cfg = CbfConfig(
            a=cbf.number("a_per_s"), sigma=cbf.number("sigma_per_s"), rho=cbf.number("rho"),
            k0=cbf.number("k0_per_s"), k1=cbf.number("k1_per_s"), kv=cbf.number("kv_per_s"),
            alpha_gain=cbf.number("alpha_per_s"), gamma_slack=cbf.number("gamma_slack"))
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"section 'cbf': {exc}") from None

    nu0 = init.raw("nu0", None)
    try:
        return Scenario(
            params=params, constraints=constraints, mpc=mpc_cfg, cbf=cbf_cfg,
            r0=init.array("r_m", (n, 3)),
            v0=init.array("v_m_per_s", (n, 3)),
            nu0=None if nu0 is None else init.array("nu0", (npairs, 3)),
            duration=integ.number("duration_s"),
            dt=integ.number("dt_s"),
            dt_full=integ.number("dt_full_s"),
            use_filter=bool(integ.raw("use_filter", True)),
            log_every=int(integ.number("log_every", 1)),
            name=str(top.raw("name", "scenario")),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"section 'initial'/'integration': {exc}") from None


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data)


def scenario_to_dict(sc: Scenario) -> dict:
    n = sc.n
    labels = pair_index(n).labels()
    p, c, m, k = sc.params, sc.constraints, sc.mpc, sc.cbf
    mpc = {
        "horizon_s": m.horizon, "step_s": m.step,
        "W_pos": m.w_pos.tolist(), "W_vel": m.w_vel.tolist(),
        "accel_weight": m.accel_weight,
        "d_m": {lab: m.d[q].tolist() for q, lab in enumerate(labels)},
    }
    if m.w_zeta is not None:
        mpc["W_input"] = m.w_zeta.tolist()
    return {
        "name": sc.name,
        "n_satellites": n,
        "physical": {
            "mass_kg": p.m, "coil_turns": p.n_turns, "coil_area_m2": p.coil_area,
            "coil_resistance_ohm": p.coil_resistance, "coil_inductance_H": p.coil_inductance,
            "omega_rad_per_s": {lab: {"num": w.numerator, "den": w.denominator, "times_pi": True}
                                for lab, w in zip(labels, p.omega_over_pi)},
        },
        "constraints": {"r_min_m": c.r_min, "v_max_m_per_s": c.v_max, "q_max_VA": c.q_max,
                        "eps1_A2m4": c.eps1, "eps2_A4m8": c.eps2},
        "mpc": mpc,
        "cbf": {"a_per_s": k.a, "sigma_per_s": k.sigma, "rho": k.rho, "k0_per_s": k.k0,
                "k1_per_s": k.k1, "kv_per_s": k.kv, "alpha_per_s": k.alpha_gain,
                "gamma_slack": k.gamma_slack},
        "initial": {"r_m": sc.r0.tolist(), "v_m_per_s": sc.v0.tolist(), "nu0": sc.nu0.tolist()},
        "integration": {"duration_s": sc.duration, "dt_s": sc.dt, "dt_full_s": sc.dt_full,
                        "log_every": sc.log_every, "use_filter": sc.use_filter},
    }


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def swap_scenario(**overrides) -> Scenario:
    """Three satellites swapping their along-track order under tight power.

    The target for pair 13 is ``d_12 + d_23`` so the formation is consistent.
    The smoothing constants of the power bound are set relative to the force
    scale ``Q_max N^2 A^2 / Z_min`` (about 7e8 A^2 m^4): ``eps1`` is ~1.4% of it
    and ``sqrt(eps2)`` ~4%.  Much smaller values leave kinks at zero force that
    make the filtered closed loop stiff.
    """
    params = PhysicalParams(m=15.0, n_turns=400, coil_area=0.1963, coil_resistance=0.3673,
                            coil_inductance=0.12, omega_over_pi=(200, 400, 600))
    constraints = ConstraintParams(r_min=1.0, v_max=1.0, q_max=9e6, eps1=1e7, eps2=1e15)
    d12 = np.array([1.1, 1.3, 0.5])
    d23 = np.array([1.1, 1.3, 0.5])
    mpc = MpcConfig(d=np.array([d12, d12 + d23, d23]))
    fields = dict(
        params=params, constraints=constraints, mpc=mpc, cbf=CbfConfig(),
        r0=[[1.2, 6.4, 8.5], [2.5, 7.5, 9.0], [3.8, 8.6, 9.5]], v0=np.zeros((3, 3)),
        duration=200.0, dt=0.01, dt_full=5e-5, name="three-satellite swap",
    )
    fields.update(overrides)
    return Scenario(**fields)
