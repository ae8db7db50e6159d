import time
import numpy as np
import garmseg as g
from garmseg.refinement import create_session, refine
from garmseg.toybody import build_toy_body

model, _ = build_toy_body()
splits = g.load_suite("/tmp/suite_exp3/manifest.json")  # n400, master_seed 11

cfg = g.TrainConfig(network=g.NetworkConfig(k=10, dropout=0.0), epochs=120,
                    batch_size=2, lr=1e-2, seed=0, sample_points=512,
                    weight_decay=0.0)
t0 = time.time()
net, hist = g.train(splits["train"], splits["val"], cfg, model)
print("train %.0fs" % (time.time() - t0))
rep = g.evaluate(splits["test"], net, model)
print("test mIoU %.4f" % rep.mean_iou)
g.save_checkpoint("/tmp/final_model.ckpt", net, g.DEFAULT_TAXONOMY)

probe = g.generate(g.SynthConfig(
    seed=4242, n_points=400,
    garments=("T-shirt", "Pants", "Shoes", "Hair", "Hat")))
preds, conf = g.segment(probe, net, model, restrict=True)
errs = np.flatnonzero(preds != probe.labels)
n = probe.num_points
print("probe errors %d (%.1f%%)" % (len(errs), 100 * len(errs) / n))
c_size = int(round(0.10 * n))
order = np.argsort(conf)
wrong_first = np.concatenate([errs, order[~np.isin(order, errs)]])
C = np.sort(wrong_first[:c_size].astype(np.int64))
present = probe.garments.present_indices()
pos = np.searchsorted(present, preds[C])
corrupted = preds.copy()
corrupted[C] = present[(pos + 1) % len(present)]

for lw in (0.1, 0.03, 0.01):
    for lr in (0.3, 0.5):
        session = create_session(net, probe, C, probe.labels[C], model,
                                 base_labels=corrupted,
                                 lambdas={"c": 0.1, "f": 1.0, "w": lw})
        repo = refine(session, epochs=2, steps_per_epoch=25, lr=lr,
                      suite=splits["test"], body_model=model)
        inc = repo["target_iou_after"] - repo["target_iou_before"]
        drop = (repo["suite_miou_before"] - repo["suite_miou_after"]) * 100
        print(f"lw={lw} lr={lr}: inc {inc:+.4f} suitedrop {drop:+.2f} "
              f"delta {repo['weight_delta_norm']:.3f}", flush=True)
