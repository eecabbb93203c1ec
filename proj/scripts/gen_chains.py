#!/usr/bin/env python3
"""Generates the bundled chain description files under data/."""
import json
import math
import os

ROOT = os.path.join(os.path.dirname(__file__), "..", "data")


def joint(name, parent, axis, pos, limits, quat=(1, 0, 0, 0)):
    return {
        "name": name,
        "parent": parent,
        "axis": list(axis),
        "origin": {"pos": list(pos), "quat": list(quat)},
        "limits": list(limits),
    }


def link(name, p0, p1, radius):
    return {"name": name, "capsule": {"p0": list(p0), "p1": list(p1), "radius": radius}}


def quat_about_x(deg):
    h = math.radians(deg) / 2
    return (round(math.cos(h), 12), round(math.sin(h), 12), 0.0, 0.0)


def quat_about_z(deg):
    h = math.radians(deg) / 2
    return (round(math.cos(h), 12), 0.0, 0.0, round(math.sin(h), 12))


def arm7_joints():
    # 7-DoF arm, alternating z/y axes, ~0.75 m reach, shoulder at z=0.267.
    js = [
        joint("j1", -1, (0, 0, 1), (0, 0, 0.267), (-3.1, 3.1)),
        joint("j2", 0, (0, 1, 0), (0, 0, 0.0), (-2.0, 2.0)),
        joint("j3", 1, (0, 0, 1), (0, 0, 0.293), (-3.1, 3.1)),
        joint("j4", 2, (0, 1, 0), (0.0525, 0, 0), (-0.19, 3.7)),
        joint("j5", 3, (0, 0, 1), (0.0775, 0, 0.2), (-3.1, 3.1)),
        joint("j6", 4, (0, 1, 0), (0, 0, 0.1425), (-1.6, 3.1)),
        joint("j7", 5, (0, 0, 1), (0.076, 0, 0.097), (-3.1, 3.1)),
    ]
    ls = [
        link("link1", (0, 0, 0), (0, 0, 0.12), 0.05),
        link("link2", (0, 0, 0), (0, 0, 0.293), 0.05),
        link("link3", (0, 0, 0), (0.0525, 0, 0), 0.045),
        link("link4", (0, 0, 0), (0.0775, 0, 0.2), 0.045),
        link("link5", (0, 0, 0), (0, 0, 0.1425), 0.04),
        link("link6", (0, 0, 0), (0.076, 0, 0.097), 0.04),
        link("link7", (0, 0, 0), (0, 0, 0.05), 0.035),
    ]
    return js, ls


def finger(js, ls, name, parent, base_pos, base_quat):
    """Four joints: abduction about x, then three flexion joints about y.
    Finger extends along +z of its mount frame; positive flexion bends
    toward +x (the palm normal)."""
    n = len(js)
    js.append(joint(f"{name}_abd", parent, (1, 0, 0), base_pos, (-0.45, 0.45), base_quat))
    ls.append(link(f"{name}_base", (0, 0, 0), (0, 0, 0.018), 0.013))
    js.append(joint(f"{name}_prox", n, (0, 1, 0), (0, 0, 0.018), (-0.20, 1.70)))
    ls.append(link(f"{name}_prox", (0, 0, 0), (0, 0, 0.054), 0.012))
    js.append(joint(f"{name}_mid", n + 1, (0, 1, 0), (0, 0, 0.054), (-0.17, 1.80)))
    ls.append(link(f"{name}_mid", (0, 0, 0), (0, 0, 0.038), 0.011))
    js.append(joint(f"{name}_dist", n + 2, (0, 1, 0), (0, 0, 0.038), (-0.23, 1.75)))
    ls.append(link(f"{name}_tip", (0, 0, 0), (0, 0, 0.044), 0.010))


def write(name, doc):
    path = os.path.join(ROOT, name)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
    print("wrote", path)


def main():
    os.makedirs(ROOT, exist_ok=True)

    js, ls = arm7_joints()
    write("arm7.chain.json", {"name": "arm7", "joints": js, "links": ls})

    js, ls = arm7_joints()
    # Palm frame sits on link7 (the flange); fingers extend along +z, the
    # palm faces +x. Three fingers in a row plus an opposing thumb.
    for i, fname in enumerate(["index", "middle", "ring"]):
        y = (1 - i) * 0.045
        finger(js, ls, fname, 6, (0.015, y, 0.095), (1, 0, 0, 0))
    # Thumb: mounted low on the -x side, rotated to oppose the fingers.
    finger(js, ls, "thumb", 6, (0.04, 0.02, 0.03), quat_about_x(-90))
    write("arm7_hand16.chain.json", {"name": "arm7_hand16", "joints": js, "links": ls})

    # Small 5-DoF chain for toy tasks: 3-joint planar arm on a pedestal plus
    # a two-finger gripper pointing down from the palm.
    js = [
        joint("shoulder_pitch", -1, (0, 1, 0), (0, 0, 0.45), (-1.2, 1.4)),
        joint("elbow_pitch", 0, (0, 1, 0), (0.30, 0, 0), (-0.2, 2.0)),
        joint("wrist_pitch", 1, (0, 1, 0), (0.25, 0, 0), (-1.5, 1.5)),
        joint("finger_l", 2, (-1, 0, 0), (0.10, 0.035, 0), (0.0, 1.2)),
        joint("finger_r", 2, (1, 0, 0), (0.10, -0.035, 0), (0.0, 1.2)),
    ]
    ls = [
        link("upper_arm", (0, 0, 0), (0.30, 0, 0), 0.040),
        link("forearm", (0, 0, 0), (0.25, 0, 0), 0.035),
        link("palm", (0, 0, 0), (0.10, 0, 0), 0.030),
        link("finger_l_tip", (0, 0, 0), (0, 0, -0.09), 0.010),
        link("finger_r_tip", (0, 0, 0), (0, 0, -0.09), 0.010),
    ]
    write("mini5.chain.json", {"name": "mini5", "joints": js, "links": ls})


if __name__ == "__main__":
    main()
