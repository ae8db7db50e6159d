import sys
import time
import numpy as np
from collections import Counter
import garmseg as g
from garmseg.refinement import create_session, refine
from garmseg.toybody import build_toy_body

wd = float(sys.argv[1])
model, _ = build_toy_body()
splits = g.load_suite("/tmp/suite_exp3/manifest.json")
t0 = time.time()
cfg = g.TrainConfig(network=g.NetworkConfig(k=10), weight_decay=wd, seed=0)
net, hist = g.train(splits["train"], splits["val"], cfg, model)
rep = g.evaluate(splits["test"], net, model)
print("wd=%g: train %.0fs  test mIoU %.4f" % (wd, time.time() - t0, rep.mean_iou))
g.save_checkpoint(f"/tmp/model_wd{wd:g}.ckpt", net, g.DEFAULT_TAXONOMY)

probe = g.generate(g.SynthConfig(
    seed=4242, n_points=400,
    garments=("T-shirt", "Pants", "Shoes", "Hair", "Hat")))
preds, conf = g.segment(probe, net, model, restrict=True)
errs = np.flatnonzero(preds != probe.labels)
n = probe.num_points
c_size = int(round(0.10 * n))
order = np.argsort(conf)
wrong_first = np.concatenate([errs, order[~np.isin(order, errs)]])
C = np.sort(wrong_first[:c_size].astype(np.int64))
present = probe.garments.present_indices()
pos = np.searchsorted(present, preds[C])
corrupted = preds.copy()
corrupted[C] = present[(pos + 1) % len(present)]
print("probe errors %d (%.1f%%)" % (len(errs), 100 * len(errs) / n))
for lr in (0.1, 0.3):
    session = create_session(net, probe, C, probe.labels[C], model,
                             base_labels=corrupted)
    repo = refine(session, epochs=2, steps_per_epoch=25, lr=lr,
                  suite=splits["test"], body_model=model)
    inc = repo["target_iou_after"] - repo["target_iou_before"]
    drop = (repo["suite_miou_before"] - repo["suite_miou_after"]) * 100
    print("  lr=%g: inc %+.4f suite drop %+.3f" % (lr, inc, drop))
