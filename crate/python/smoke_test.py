"""Smoke test for the silrig_py extension.

Build first: pip install --no-build-isolation -e crates/py
"""

import json
import math
import sys
import tempfile
from pathlib import Path

import silrig_py as sr


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        sys.exit(1)


def main():
    check("plain_tpose" in sr.fixture_names(), "fixture names")
    check(sr.default_params()["kappa"] == 32, "default params")

    fx = sr.make_fixture("plain_tpose")
    sil = fx.silhouette
    check(sil.width == 256 and sil.count() > 1000, f"fixture silhouette {sil!r}")

    rec = fx.reconstruct({"smoothing_iterations": 1})
    mesh = rec.mesh
    check(rec.iou >= 0.98, f"silhouette IoU {rec.iou:.4f}")
    check(mesh.is_closed(), f"closed mesh {mesh!r}")
    check(rec.report["vertices"] == mesh.vertex_count, "report matches mesh")
    w = mesh.weights()
    check(max(abs(sum(r) - 1.0) for r in w) < 1e-9, "weight rows sum to one")

    rest = mesh.animate({"fps": 30.0, "frames": [{"rotations": {}}]})[0]
    d = max(math.dist(a, b) for a, b in zip(rest, mesh.vertices()))
    check(d < 1e-9, f"rest pose leaves vertices ({d:.2e})")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        gltf = mesh.write_gltf(str(tmp), "smoke")
        doc = json.loads(Path(gltf).read_text())
        check(len(doc["skins"][0]["joints"]) == len(mesh.joint_names()), "glTF skin")
        (tmp / "mesh.json").write_text(mesh.to_json())
        back = sr.RiggedMesh.load(str(tmp / "mesh.json"))
        check(back.vertex_count == mesh.vertex_count, "mesh dump round trip")

        fx.save(str(tmp / "fx"))
        again = sr.reconstruct(fixture=str(tmp / "fx"), params={"smoothing_iterations": 1})
        check(again.mesh.to_json() == mesh.to_json(), "fixture dir run is identical")

        empty = sr.Mask.from_rows([[False] * 32 for _ in range(32)])
        empty.save(str(tmp / "empty.png"))
        try:
            sr.reconstruct(mask=str(tmp / "empty.png"))
            check(False, "empty mask rejected")
        except sr.InputError as e:
            check(True, f"empty mask rejected ({e})")

    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    check(sr.match_boundaries(square, square, 2) == [0, 1, 2, 3], "boundary matching identity")
    check(abs(sr.mask_iou(sil, sil) - 1.0) < 1e-12, "mask IoU")
    print("smoke test passed")


if __name__ == "__main__":
    main()
