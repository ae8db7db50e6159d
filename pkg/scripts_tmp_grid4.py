import time
import numpy as np
import garmseg as g
from garmseg.refinement import create_session, refine
from garmseg.toybody import build_toy_body

model, _ = build_toy_body()
splits = g.load_suite("/tmp/suite_n700/manifest.json")
probe = g.generate(g.SynthConfig(
    seed=4242, n_points=700,
    garments=("T-shirt", "Pants", "Shoes", "Hair", "Hat")))

GRID = [
    dict(tag="G2", k=10, dropout=0.2, seed=0),
    dict(tag="G3", k=14, dropout=0.3, seed=0),
    dict(tag="G4", k=10, dropout=0.3, seed=1),
]
for spec in GRID:
    tag, k, dropout, seed = (spec["tag"], spec["k"], spec["dropout"],
                             spec["seed"])
    cfg = g.TrainConfig(network=g.NetworkConfig(k=k, dropout=dropout),
                        epochs=120, batch_size=2, lr=1e-2, seed=seed,
                        sample_points=512, weight_decay=0.0)
    t0 = time.time()
    net, hist = g.train(splits["train"], splits["val"], cfg, model)
    dt = time.time() - t0
    rep = g.evaluate(splits["test"], net, model)
    percls = {g.CLASS_NAMES[i]: round(v, 2) for i, v in
              enumerate(rep.per_class) if v is not None}
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
    print(f"{tag} k={k} drop={dropout} seed={seed}: {dt:.0f}s "
          f"test {rep.mean_iou:.4f} probe_err {len(errs)} "
          f"inc {inc:+.4f} suitedrop {drop:+.2f}")
    print("  ", percls)
    print("   val:", [round(h["val_miou"], 3) for h in hist[::15]], flush=True)
