import math

from daebranch.config import build_semi_explicit


def semi(f, g, h, tau_max=0.0, period=2 * math.pi, **extra):
    cfg = {"kind": "semi_explicit", "name": "adhoc", "f": f, "g": g, "h": h,
           "period": period, "tau_max": tau_max}
    cfg.update(extra)
    return build_semi_explicit(cfg)
