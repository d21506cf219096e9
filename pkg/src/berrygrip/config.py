"""TOML configuration: one gripper instance plus campaign settings.

The config path comes from ``--config``, else ``$BERRYGRIP_CONFIG``, else
the packaged ``default.toml``.
"""
from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .control import ActuatorModel, ControllerParams, LoopSetup
from .finger import CurvatureMap, FingerGeometry, GripperGeometry
from .grasp import ContactModel
from .sensing import AdcModel, SensorCalibration, preset

CONFIG_ENV = "BERRYGRIP_CONFIG"


@dataclass(frozen=True)
class GripperConfig:
    gripper: GripperGeometry = field(default_factory=GripperGeometry)
    cmap: CurvatureMap = field(default_factory=CurvatureMap)
    contact: ContactModel = field(default_factory=ContactModel)
    setup: LoopSetup = field(default_factory=lambda: LoopSetup(preset("procedure")))

    @property
    def cal(self) -> SensorCalibration:
        return self.setup.cal


def _pick(cls, table: dict, section: str):
    known = {f.name for f in fields(cls)}
    extra = set(table) - known
    if extra:
        raise ValueError(f"[{section}] unknown keys: {sorted(extra)}")
    return table


def gripper_from_dict(doc: dict) -> GripperConfig:
    finger = FingerGeometry(**_pick(FingerGeometry, doc.get("finger", {}), "finger"))
    g = dict(doc.get("gripper", {}))
    gripper = GripperGeometry(finger=finger, **_pick(GripperGeometry, g, "gripper"))
    cm = dict(doc.get("curvature_map", {}))
    csv_path = cm.pop("csv", None)
    cm.setdefault("max_tendon_force", finger.max_tendon_force)
    cmap = CurvatureMap.from_csv(csv_path, **cm) if csv_path else CurvatureMap(**_pick(CurvatureMap, cm, "curvature_map"))

    c = dict(doc.get("contact", {}))
    contact = ContactModel(gripper=gripper, cmap=cmap, **_pick(ContactModel, c, "contact"))

    s = dict(doc.get("sensor", {}))
    # no explicit slope: fall back to the procedure preset
    name = s.pop("preset", None if "slope" in s else "procedure")
    cal = preset(name) if name else SensorCalibration(**_pick(SensorCalibration, s, "sensor"))
    if name and s:
        cal = SensorCalibration(**{**{f.name: getattr(cal, f.name) for f in fields(cal)}, **s})
    adc_t = doc.get("adc")
    adc = AdcModel(**adc_t) if adc_t and adc_t.pop("enabled", True) else None
    params = ControllerParams(**_pick(ControllerParams, doc.get("controller", {}), "controller"))
    a = dict(doc.get("actuator", {}))
    if "travel" in a:
        a["travel"] = tuple(a["travel"])
    actuator = ActuatorModel(**_pick(ActuatorModel, a, "actuator"))
    noise = doc.get("noise", {})
    setup = LoopSetup(cal=cal, params=params, actuator=actuator,
                      noise_sd=float(noise.get("std_dev", 0.005)), adc=adc,
                      n_fingers=gripper.n_fingers)
    if actuator.travel[1] > cmap.retraction_max:
        raise ValueError("actuator travel exceeds the characterised retraction domain")
    return GripperConfig(gripper, cmap, contact, setup)


def default_config_path():
    return resources.files("berrygrip") / "data" / "default.toml"


def resolve_config_path(path=None):
    if path:
        return path
    env = os.environ.get(CONFIG_ENV)
    if env:
        return env
    return default_config_path()


def load_document(path=None) -> dict:
    p = resolve_config_path(path)
    with open(p, "rb") as fh:
        return tomllib.load(fh)


def load_config(path=None) -> tuple[GripperConfig, dict]:
    """Parsed gripper plus the raw document (for campaign/experiment tables)."""
    doc = load_document(path)
    return gripper_from_dict(doc), doc
