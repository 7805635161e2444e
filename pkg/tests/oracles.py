"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math

from decwatt import trace as T

HVD_MODES = {2, 10, 26, 34}


def log2_exact(v):
    return math.log2(v + 2)


def log2_fixed(v):
    x = v + 2
    p = x.bit_length() - 1
    return p + (0.585 if p >= 1 and (x >> (p - 1)) & 1 else 0.0)


def _mode_class(m):
    if m == 0:
        return "pla"
    if m == 1:
        return "dc"
    if m in HVD_MODES:
        return "hvd"
    return "ang"


def _pu_label(ev):
    base = "merge" if ev.merge else "inter"
    if ev.part_mode == 0:
        return base
    if ev.part_mode in (1, 2):
        return base + "SMP"
    return base + "AMP"


def _chroma_depth(ev):
    return ev.depth if ev.plane == "Y" else min(ev.depth + 1, 4)


def _hor(ev):
    if ev.mv_x % 4 == 0:
        return 0
    return ev.pb_w * ev.pb_h + (6 * ev.pb_w if ev.mv_y % 4 else 0)


def _ver(ev):
    return ev.pb_w * ev.pb_h if ev.mv_y % 4 else 0


def increment(ev, name, depth, fixed=False):
    """Contribution of one event to feature (name, depth), written rule by rule."""
    lg = log2_fixed if fixed else log2_exact
    if name == "E_0":
        return 1 if isinstance(ev, T.StreamBegin) else 0
    if name == "Islice":
        return 1 if isinstance(ev, T.Slice) and ev.slice_type == "I" else 0
    if name == "PBslice":
        return 1 if isinstance(ev, T.Slice) and ev.slice_type in ("P", "B") else 0
    if name == "intraCU":
        return 1 if isinstance(ev, T.CuIntra) else 0
    if name in ("pla", "dc", "hvd", "ang"):
        return 1 if isinstance(ev, T.IntraLumaMode) and ev.depth == depth and _mode_class(ev.mode) == name else 0
    if name == "all":
        return 1 if isinstance(ev, T.IntraLumaMode) and ev.depth == depth else 0
    if name == "noMPM":
        return 1 if isinstance(ev, T.IntraLumaMode) and not ev.mpm_hit else 0
    if name == "skip":
        return 1 if isinstance(ev, T.CuSkip) and ev.depth == depth else 0
    if name in ("merge", "mergeSMP", "mergeAMP", "inter", "interSMP", "interAMP"):
        return 1 if isinstance(ev, T.PuInter) and ev.depth == depth and _pu_label(ev) == name else 0
    if name == "interCU":
        return 1 if isinstance(ev, T.CuInter) and ev.depth == depth else 0
    if name == "fracpelVer":
        return _ver(ev) if isinstance(ev, T.MotionVector) and ev.depth == depth else 0
    if name == "fracpelHor":
        return _hor(ev) if isinstance(ev, T.MotionVector) and ev.depth == depth else 0
    if name == "fracpelAvg":
        return _ver(ev) + _hor(ev) if isinstance(ev, T.MotionVector) else 0
    if name == "chrHalfpel":
        if not (isinstance(ev, T.MotionVector) and ev.depth == depth):
            return 0
        hits = (ev.mv_x % 8 == 4) + (ev.mv_y % 8 == 4)
        return hits * (ev.pb_w / 2) * (ev.pb_h / 2)
    if name == "bi":
        return (ev.pb_w / 4) * (ev.pb_h / 4) if isinstance(ev, T.BiPu) else 0
    if name == "MVD":
        return lg(ev.abs_mvd_minus2) if isinstance(ev, T.MvdLarge) else 0
    if name == "coeff":
        return 1 if isinstance(ev, T.Coeff) else 0
    if name == "coeffg1":
        return 1 if isinstance(ev, T.CoeffG1) else 0
    if name == "CSBF":
        return 1 if isinstance(ev, T.CsbfNonDc) else 0
    if name == "val":
        return lg(ev.value) if isinstance(ev, T.CoeffRemaining) else 0
    if name in ("TrIntraY", "TrIntraC", "TrInterY", "TrInterC", "Tr"):
        if not (isinstance(ev, T.Cbf) and _chroma_depth(ev) == depth):
            return 0
        if name == "Tr":
            return 1
        want_intra = name.startswith("TrIntra")
        want_luma = name.endswith("Y")
        return 1 if ev.intra == want_intra and (ev.plane == "Y") == want_luma else 0
    if name == "TSF":
        return 1 if isinstance(ev, T.TransformSkip) else 0
    if name in ("Bs0", "Bs1", "Bs2"):
        return 1 if isinstance(ev, T.BoundaryStrength) and ev.bs == int(name[2]) else 0
    if name == "Bs":
        return 1 if isinstance(ev, T.BoundaryStrength) else 0
    if isinstance(ev, T.SaoCtu):
        y, cb, cr = ev.type_y, ev.type_cb, ev.type_cr
        table = {
            "SAO_Y_BO": int(y == 1),
            "SAO_Y_EO": int(y == 2),
            "SAO_Y": int(y != 0),
            "SAO_C_BO": (cb == 1) + (cr == 1),
            "SAO_C_EO": (cb == 2) + (cr == 2),
            "SAO_C": (cb != 0) + (cr != 0),
            "SAO_allComps": int(y != 0 and cb != 0 and cr != 0),
        }
        return table[name]
    if name.startswith("SAO"):
        return 0
    raise KeyError(name)


def naive_counts(events, ids, fixed=False):
    """One full rescan of the event list per feature id."""
    out = []
    for fid in ids:
        total = 0.0
        for ev in events:
            total += increment(ev, fid.name, fid.depth, fixed)
        out.append(total)
    return out
