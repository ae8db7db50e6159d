import os
import sys
import time
import numpy as np
import torch
import garmseg as g
from garmseg.refinement import create_session, refine, regression_guard
from garmseg.toybody import build_toy_body

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 2
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 25
lr = float(sys.argv[3]) if len(sys.argv) > 3 else 5e-3
lam_w = float(sys.argv[4]) if len(sys.argv) > 4 else 1.0

model, parts = build_toy_body()
splits = g.load_suite("/tmp/suite_exp3/manifest.json")
CKPT = "/tmp/full_model.ckpt"
if not os.path.exists(CKPT):
    cfg = g.TrainConfig(network=g.NetworkConfig(k=10), seed=0)
    net, hist = g.train(splits["train"], splits["val"], cfg, model)
    g.save_checkpoint(CKPT, net, g.DEFAULT_TAXONOMY)
net, _ = g.load_checkpoint(CKPT, g.DEFAULT_TAXONOMY)

rep = g.evaluate(splits["test"], net, model)
suite_base = rep.mean_iou
target_id = min(rep.per_scan, key=rep.per_scan.get)
scan = next(s for s in splits["test"] if s.id == target_id)
print("target:", target_id, "scan IoU", round(rep.per_scan[target_id], 4))

preds, conf = g.segment(scan, net, model, restrict=True)
n = scan.num_points
errs = np.flatnonzero(preds != scan.labels)
print("restricted-pred errors on target:", len(errs), "/", n)
# 10% patch centered on the densest error region
c_size = int(round(0.10 * n))
center = scan.points[errs[0]]
dist = np.linalg.norm(scan.points - center, axis=1)
C = np.argsort(dist)[:c_size]
overlap = int((preds[C] != scan.labels[C]).sum())
print(f"|C|={c_size} patch error overlap: {overlap}")
present = scan.garments.present_indices()
pos = np.searchsorted(present, preds[C])
corrupted = preds.copy()
corrupted[C] = present[(pos + 1) % len(present)]

t0 = time.time()
session = create_session(net, scan, C, scan.labels[C], model,
                         base_labels=corrupted,
                         lambdas={"c": 0.1, "f": 1.0, "w": lam_w})
report = refine(session, epochs=epochs, steps_per_epoch=steps, lr=lr,
                suite=splits["test"], body_model=model)
print("refine %.1fs  (epochs=%d steps=%d lr=%g lam_w=%g)"
      % (time.time() - t0, epochs, steps, lr, lam_w))
inc = report["target_iou_after"] - report["target_iou_before"]
drop = (report["suite_miou_before"] - report["suite_miou_after"]) * 100
print("target iou: %.4f -> %.4f (%+.4f) strict increase: %s"
      % (report["target_iou_before"], report["target_iou_after"], inc, inc > 0))
print("suite: %.4f -> %.4f drop %.3f points (budget 1.5)"
      % (report["suite_miou_before"], report["suite_miou_after"], drop))
print("weight delta:", round(report["weight_delta_norm"], 4))
