"""Retrain with weight decay, then run the full refinement analog."""
import time
import numpy as np
import torch
from collections import Counter
import garmseg as g
from garmseg.refinement import create_session, refine
from garmseg.toybody import build_toy_body

model, _ = build_toy_body()
splits = g.load_suite("/tmp/suite_exp3/manifest.json")

t0 = time.time()
cfg = g.TrainConfig(network=g.NetworkConfig(k=10), seed=0)
net, hist = g.train(splits["train"], splits["val"], cfg, model)
print("train %.0fs, final loss %.4f" % (time.time() - t0, hist[-1]["train_loss"]))
g.save_checkpoint("/tmp/full_model_wd.ckpt", net, g.DEFAULT_TAXONOMY)
rep = g.evaluate(splits["test"], net, model)
print("test mIoU with weight decay: %.4f" % rep.mean_iou)
print({g.CLASS_NAMES[i]: round(v, 3) for i, v in enumerate(rep.per_class)
       if v is not None})

probe = g.generate(g.SynthConfig(
    seed=4242, n_points=400,
    garments=("T-shirt", "Pants", "Shoes", "Hair", "Hat")))
preds, conf = g.segment(probe, net, model, restrict=True)
errs = np.flatnonzero(preds != probe.labels)
n = probe.num_points
print(f"probe errors {len(errs)} ({len(errs)/n:.1%})",
      Counter((g.CLASS_NAMES[a], g.CLASS_NAMES[b]) for a, b in
              zip(preds[errs], probe.labels[errs])).most_common(4))
c_size = int(round(0.10 * n))
order = np.argsort(conf)
wrong_first = np.concatenate([errs, order[~np.isin(order, errs)]])
C = np.sort(wrong_first[:c_size].astype(np.int64))
present = probe.garments.present_indices()
pos = np.searchsorted(present, preds[C])
corrupted = preds.copy()
corrupted[C] = present[(pos + 1) % len(present)]

for lr in (0.1, 0.3, 0.5):
    session = create_session(net, probe, C, probe.labels[C], model,
                             base_labels=corrupted)
    repo = refine(session, epochs=2, steps_per_epoch=25, lr=lr,
                  suite=splits["test"], body_model=model)
    inc = repo["target_iou_after"] - repo["target_iou_before"]
    drop = (repo["suite_miou_before"] - repo["suite_miou_after"]) * 100
    print(f"lr={lr}: before {repo['target_iou_before']:.4f} inc {inc:+.4f} "
          f"suite drop {drop:+.3f} delta {repo['weight_delta_norm']:.4f}")
