import sys
import time
import numpy as np
import garmseg as g
from garmseg.toybody import build_toy_body

batch, lr, epochs = int(sys.argv[1]), float(sys.argv[2]), int(sys.argv[3])
model, parts = build_toy_body()
splits = g.load_suite("/tmp/suite_exp/manifest.json")
cfg = g.TrainConfig(network=g.NetworkConfig(k=10), epochs=epochs,
                    batch_size=batch, lr=lr, seed=0)
t0 = time.time()
net, hist = g.train(splits["train"], splits["val"], cfg, model)
print("train %.0fs  batch=%d lr=%g epochs=%d" % (time.time() - t0, batch, lr, epochs))
print("loss:", [round(h["train_loss"], 3) for h in hist[::max(1, epochs // 8)]])
print("val :", [round(h["val_miou"], 3) for h in hist[::max(1, epochs // 8)]])
rep = g.evaluate(splits["test"], net, model)
print("TEST mIoU: %.4f" % rep.mean_iou)
print({g.CLASS_NAMES[i]: round(v, 3) for i, v in enumerate(rep.per_class) if v is not None})
