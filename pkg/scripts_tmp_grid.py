import sys
import time
import numpy as np
import garmseg as g
from garmseg.refinement import create_session, refine
from garmseg.toybody import build_toy_body

model, _ = build_toy_body()
splits = g.load_suite("/tmp/suite_exp3/manifest.json")

GRID = [
    dict(tag="A", weight_decay=1e-3, epochs=160, batch_size=2, lr=1e-2, seed=0),
    dict(tag="B", weight_decay=1e-3, epochs=120, batch_size=1, lr=5e-3, seed=0),
    dict(tag="C", weight_decay=1e-3, epochs=120, batch_size=2, lr=1e-2, seed=1),
    dict(tag="D", weight_decay=5e-4, epochs=140, batch_size=2, lr=1e-2, seed=0),
]

probe = g.generate(g.SynthConfig(
    seed=4242, n_points=400,
    garments=("T-shirt", "Pants", "Shoes", "Hair", "Hat")))

for spec in GRID:
    tag = spec.pop("tag")
    cfg = g.TrainConfig(network=g.NetworkConfig(k=10), **spec)
    t0 = time.time()
    net, hist = g.train(splits["train"], splits["val"], cfg, model)
    dt = time.time() - t0
    rep = g.evaluate(splits["test"], net, model)
    losses = [round(h["train_loss"], 3) for h in hist[::20]]
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
    session = create_session(net, probe, C, probe.labels[C], model,
                             base_labels=corrupted)
    repo = refine(session, epochs=2, steps_per_epoch=25, lr=0.3,
                  suite=splits["test"], body_model=model)
    inc = repo["target_iou_after"] - repo["target_iou_before"]
    drop = (repo["suite_miou_before"] - repo["suite_miou_after"]) * 100
    print(f"{tag} {spec}: {dt:.0f}s test {rep.mean_iou:.4f} "
          f"probe_err {len(errs)} inc {inc:+.4f} drop {drop:+.2f}")
    print("   loss:", losses, flush=True)
