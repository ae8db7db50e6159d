import time
import numpy as np
import garmseg as g
from garmseg.refinement import create_session, refine
from garmseg.toybody import build_toy_body

model, _ = build_toy_body()
g.generate_suite(20, 5, 5,
                 ["T-shirt", "Shirt", "Pants", "Short-Pants", "Jacket",
                  "Hoodies"],
                 "/tmp/suite_n700", master_seed=11, n_points=700)
splits = g.load_suite("/tmp/suite_n700/manifest.json")
print("sizes:", [s.num_points for s in splits["train"][:5]], flush=True)

probe = g.generate(g.SynthConfig(
    seed=4242, n_points=700,
    garments=("T-shirt", "Pants", "Shoes", "Hair", "Hat")))

GRID = [
    dict(tag="E", weight_decay=1e-3),
    dict(tag="F", weight_decay=1e-4),
    dict(tag="G", weight_decay=0.0),
]
for spec in GRID:
    tag = spec.pop("tag")
    cfg = g.TrainConfig(network=g.NetworkConfig(k=10), epochs=120,
                        batch_size=2, lr=1e-2, seed=0, sample_points=512,
                        **spec)
    t0 = time.time()
    net, hist = g.train(splits["train"], splits["val"], cfg, model)
    dt = time.time() - t0
    rep = g.evaluate(splits["test"], net, model)
    g.save_checkpoint(f"/tmp/grid2_{tag}.ckpt", net, g.DEFAULT_TAXONOMY)
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
    repo = refine(session, epochs=2, suite=splits["test"], body_model=model)
    inc = repo["target_iou_after"] - repo["target_iou_before"]
    drop = (repo["suite_miou_before"] - repo["suite_miou_after"]) * 100
    print(f"{tag} wd={spec['weight_decay']}: {dt:.0f}s test {rep.mean_iou:.4f} "
          f"probe_err {len(errs)} inc {inc:+.4f} drop {drop:+.2f}")
    print("   val:", [round(h["val_miou"], 3) for h in hist[::15]], flush=True)
