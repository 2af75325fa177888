"""JSON config handling: unit-suffixed file keys mapped onto the config
dataclasses, with paper-table defaults."""

from __future__ import annotations

import copy
import json

import numpy as np

from .dynmodel import SystemParams, equilateral_attachments
from .extend import PotentialConfig, StepConfig
from .planner import PlannerConfig
from .sampler import SamplerConfig
from .trajopt import OptConfig

DEFAULTS: dict = {
    "sampler": {
        "regions": 27,
        "prior_strength": 10.0,
        "uniform_mix": 0.2,
        "goal_bias": 0.2,
        "density_samples": 500,
    },
    "potential": {
        "k_rep": 1.0,
        "k_att": 1.0,
        "k_line": 0.5,
        "amplitude": 1.0,
        "eta": 1.0,
        "influence_dist_m": 3.0,
        "force_scale_n": 1.0,
        "fallback_prob": 0.2,
    },
    "step": {
        "base_step_m": 3.0,
        "turn_penalty": 2.5,
        "tau_floor": 0.3,
        "softmin_sharpness": 8.0,
        "density_gain": 1.0,
        "density_saturation": 0.5,
    },
    "planner": {
        "max_iters": 3000,
        "r_min_m": None,  # None -> derived from the system geometry
        "gamma": None,
        "goal_tol_m": None,
        "w_length": 1.0,
        "w_accel": 1.0,
        "d_ref_m": 2.3,
        "v_ref_m_s": 1.0,
        "dt_s": 0.01,
        "variant": "enhanced",
    },
    "trajopt": {
        "smooth_order": 5,
        "degree": 9,
        "samples_per_segment": 10,
        "weight_force_rate": 10.0,
        "weight_force_mag": 1.0,
        "weight_share": 1.0,
        "weight_moment": 0.1,
        "tension_max_n": 35.0,
        "tension_min_warn_n": 1.0,
        "tilt_max_deg": 22.0,
        "v_max_m_s": 2.0,
        "a_max_m_s2": 1.0,
    },
    "system": {
        "payload_mass_kg": 5.0,
        "payload_inertia_kg_m2": [0.6875, 0.59375, 0.78333],
        "cable_count": 3,
        "uav_mass_kg": 1.0,
        "cable_length_m": 0.75,
        "attachment_circumradius_m": 0.5,
        "uav_radius_m": 0.3,
    },
    "bench": {
        "seeds": 50,
        "max_iters": 3000,
        "variants": ["enhanced", "stube", "aetube"],
        "workers": None,
        "start": [6.0, 2.0, 10.0],
        "goal": [40.0, 40.0, 5.0],
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    with open(path) as fh:
        return _merge(DEFAULTS, json.load(fh))


def sampler_config(cfg: dict) -> SamplerConfig:
    s = cfg["sampler"]
    return SamplerConfig(
        K=int(s["regions"]),
        kappa_p=float(s["prior_strength"]),
        epsilon_u=float(s["uniform_mix"]),
        p_g=float(s["goal_bias"]),
        density_samples=int(s["density_samples"]),
    )


def potential_config(cfg: dict) -> PotentialConfig:
    p = cfg["potential"]
    return PotentialConfig(
        K_rep=float(p["k_rep"]),
        K_att=float(p["k_att"]),
        K_line=float(p["k_line"]),
        A=float(p["amplitude"]),
        eta=float(p["eta"]),
        d0=float(p["influence_dist_m"]),
        F0=float(p["force_scale_n"]),
        p_e=float(p["fallback_prob"]),
    )


def step_config(cfg: dict) -> StepConfig:
    s = cfg["step"]
    return StepConfig(
        epsilon_0=float(s["base_step_m"]),
        beta=float(s["turn_penalty"]),
        tau=float(s["tau_floor"]),
        alpha_soft=float(s["softmin_sharpness"]),
        k_lambda=float(s["density_gain"]),
        S_lambda_max=float(s["density_saturation"]),
    )


def system_params(cfg: dict) -> SystemParams:
    s = cfg["system"]
    return SystemParams(
        m0=float(s["payload_mass_kg"]),
        J0=np.diag(s["payload_inertia_kg_m2"]),
        n_C=int(s["cable_count"]),
        m_i=float(s["uav_mass_kg"]),
        l_i=float(s["cable_length_m"]),
        rho_i=equilateral_attachments(float(s["attachment_circumradius_m"]),
                                      int(s["cable_count"])),
        uav_radius=float(s["uav_radius_m"]),
        payload_half_diag=float(s["attachment_circumradius_m"]),
    )


def planner_config(cfg: dict, variant: str | None = None) -> PlannerConfig:
    p = cfg["planner"]
    r_min = p["r_min_m"]
    if r_min is None:
        params = system_params(cfg)
        tilt = np.deg2rad(float(cfg["trajopt"]["tilt_max_deg"]))
        r_min = params.min_tube_radius(tilt)
    return PlannerConfig(
        max_iters=int(p["max_iters"]),
        r_min=float(r_min),
        gamma=None if p["gamma"] is None else float(p["gamma"]),
        goal_tol=None if p["goal_tol_m"] is None else float(p["goal_tol_m"]),
        w_L=float(p["w_length"]),
        w_A=float(p["w_accel"]),
        d_ref=float(p["d_ref_m"]),
        v_ref=float(p["v_ref_m_s"]),
        dt=float(p["dt_s"]),
        variant=variant or p["variant"],
    )


def opt_config(cfg: dict) -> OptConfig:
    t = cfg["trajopt"]
    s = cfg["system"]
    return OptConfig(
        r=int(t["smooth_order"]),
        n=int(t["degree"]),
        samples_per_segment=int(t["samples_per_segment"]),
        lambda_f=float(t["weight_force_rate"]),
        lambda_T=float(t["weight_force_mag"]),
        lambda_share=float(t["weight_share"]),
        lambda_M=float(t["weight_moment"]),
        T_u=float(t["tension_max_n"]),
        alpha_u=float(np.deg2rad(t["tilt_max_deg"])),
        v_max=float(t["v_max_m_s"]),
        a_max=float(t["a_max_m_s2"]),
        m0=float(s["payload_mass_kg"]),
        n_cables=int(s["cable_count"]),
        attachments=equilateral_attachments(float(s["attachment_circumradius_m"]),
                                            int(s["cable_count"])),
        T_l=float(t["tension_min_warn_n"]),
    )
