"""
Regenerate src/data/default_soc.json from its design targets.

The thermal network has one slow common mode (all hotspots heating together)
and faster differential modes. B is chosen so that every hotspot's mean gain
over the resources gives the scalar pair a = 0.9994, b = 0.0121 after
reduction, while the big and GPU columns keep a spatial gradient. Leakage
constants put the convergence-region knee between 3 and 4 W of CPU + GPU power.

Usage: python -m scripts.calibrate_default_model [--out PATH]
"""
import argparse
import logging

import numpy as np

from src.config.settings import settings
from src.thermal.model import LeakageParams, ThermalModel, model_to_file, to_kelvin
from src.thermal.siso import reduce_hotspot
from src.utils.console import setup_logging
from src.utils.io import write_json

logger = logging.getLogger(__name__)

HOTSPOTS = ("big0", "big1", "big2", "big3", "gpu")
RESOURCES = ("little", "big", "mem", "gpu")

COMMON_POLE = 0.9994
DIFFERENTIAL_POLE = 0.9991
ROW_SUM = 0.0484
LITTLE_GAIN = 0.0080
MEM_GAIN = 0.0090
BIG_GAIN_NEAR = 0.0170
BIG_GAIN_STEP = 0.0004
BIG_GAIN_AT_GPU = 0.0134


def build_model() -> ThermalModel:
    n = len(HOTSPOTS)
    common = np.full((n, n), 1.0 / n)
    A = COMMON_POLE * common + DIFFERENTIAL_POLE * (np.eye(n) - common)

    big = np.array([BIG_GAIN_NEAR - k * BIG_GAIN_STEP for k in range(n - 1)] + [BIG_GAIN_AT_GPU])
    B = np.column_stack([
        np.full(n, LITTLE_GAIN),
        big,
        np.full(n, MEM_GAIN),
        ROW_SUM - LITTLE_GAIN - MEM_GAIN - big,
    ])

    leakage = (
        LeakageParams(voltage=1.0, kappa1=1.0e-3, kappa2=-3000.0, driving_hotspot=0, active=False),
        LeakageParams(voltage=1.0, kappa1=1.1e-3, kappa2=-3000.0, driving_hotspot=2),
        LeakageParams(voltage=1.0, kappa1=1.0e-3, kappa2=-3000.0, driving_hotspot=0, active=False),
        LeakageParams(voltage=0.9, kappa1=1.0e-3, kappa2=-3000.0, driving_hotspot=4),
    )
    return ThermalModel(
        A=np.round(A, 12),
        B=np.round(B, 12),
        hotspot_names=HOTSPOTS,
        resource_names=RESOURCES,
        leakage=leakage,
        domain=(to_kelvin(15.0), to_kelvin(120.0)),
        ambient=to_kelvin(25.0),
        sample_period=0.1,
        name="default_soc",
    )


def main():
    parser = argparse.ArgumentParser(description="Regenerate the bundled SoC model")
    parser.add_argument("--out", default=str(settings.DEFAULT_MODEL_PATH))
    args = parser.parse_args()
    setup_logging(settings.LOG_LEVEL)

    model = build_model()
    for i, name in enumerate(model.hotspot_names):
        params = reduce_hotspot(model, i, np.ones(model.n_resources))
        logger.info(f"{name}: a = {params.a:.6f}, b = {params.b:.6f}, theta = {params.theta:.4f} K/W")
    logger.info(f"Dominant time constant: {model.dominant_time_constant:.1f} s")

    doc = model_to_file(
        model,
        description="Octa-core big.LITTLE SoC with GPU: four big-core hotspots and one GPU hotspot, 100 ms sampling.",
    )
    write_json(args.out, doc.model_dump(mode="json"))
    logger.info(f"Wrote {args.out}")
    return 0


if __name__ == "__main__":
    exit(main())
