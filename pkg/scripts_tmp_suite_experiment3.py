import sys
import time
import numpy as np
import garmseg as g
from garmseg.toybody import build_toy_body

batch, lr, epochs, sample = (int(sys.argv[1]), float(sys.argv[2]),
                             int(sys.argv[3]), int(sys.argv[4]))
model, parts = build_toy_body()
suite = g.generate_suite(20, 5, 5,
                         ["T-shirt", "Shirt", "Pants", "Short-Pants",
                          "Jacket", "Hoodies"],
                         "/tmp/suite_exp3", master_seed=11, n_points=400)
splits = g.load_suite("/tmp/suite_exp3/manifest.json")

cfg = g.TrainConfig(network=g.NetworkConfig(k=10), epochs=epochs,
                    batch_size=batch, lr=lr, seed=0, sample_points=sample)
t0 = time.time()
net, hist = g.train(splits["train"], splits["val"], cfg, model)
print("FULL train %.0fs  batch=%d lr=%g epochs=%d sample=%d"
      % (time.time() - t0, batch, lr, epochs, sample))
print("loss:", [round(h["train_loss"], 3) for h in hist[::max(1, epochs // 8)]])
print("val :", [round(h["val_miou"], 3) for h in hist[::max(1, epochs // 8)]])
rep = g.evaluate(splits["test"], net, model)
print("FULL TEST mIoU: %.4f" % rep.mean_iou)
print({g.CLASS_NAMES[i]: round(v, 3) for i, v in enumerate(rep.per_class) if v is not None})

abl = g.TrainConfig(network=g.NetworkConfig(
    k=10, body_encoder="none", clothing_encoder="none"),
    epochs=epochs, batch_size=batch, lr=lr, seed=0, sample_points=sample)
t0 = time.time()
net_a, _ = g.train(splits["train"], splits["val"], abl, None)
print("ABL train %.0fs" % (time.time() - t0))
rep_a = g.evaluate(splits["test"], net_a, None)
print("ABL TEST mIoU: %.4f" % rep_a.mean_iou)
print({g.CLASS_NAMES[i]: round(v, 3) for i, v in enumerate(rep_a.per_class) if v is not None})
print("gap: %.2f points" % ((rep.mean_iou - rep_a.mean_iou) * 100))
