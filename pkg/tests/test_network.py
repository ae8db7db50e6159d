import numpy as np
import pytest
import torch

import garmseg as g
from garmseg.errors import ValidationError
from garmseg.network import (DEFAULT_REFINE_LAYERS, LAYER_GROUPS,
                             export_attention_map, params_for_layers,
                             positional_encoding)

TINY = g.NetworkConfig(k=2, l=2, global_width=2, n_heads=2, num_classes=3,
                       pe_bands=1, decoder_widths=(3,))
# finite differences need a fixed computation topology: a static graph keeps
# parameter perturbations from flipping kNN edges mid-check
TINY_STATIC = g.NetworkConfig(k=2, l=2, global_width=2, n_heads=2,
                              num_classes=3, pe_bands=1, decoder_widths=(3,),
                              static_graph=True)


def tiny_inputs(rng, n=12, num_classes=3, all_present=True):
    feats9 = torch.from_numpy(rng.standard_normal((n, 9)))
    body = torch.from_numpy(rng.standard_normal((n, 3)))
    bits = np.ones(num_classes) if all_present else \
        (rng.uniform(size=num_classes) > 0.5).astype(float)
    if not bits.any():
        bits[rng.integers(num_classes)] = 1
    garments = torch.from_numpy(bits.astype(np.float64))
    labels = torch.from_numpy(rng.integers(0, num_classes, size=n))
    return feats9, garments, body, labels


# ---------------------------------------------------------------------------
# numpy oracles

def np_layernorm(x, weight, bias, eps=1e-5):
    mean = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)  # biased, like torch.nn.LayerNorm
    return (x - mean) / np.sqrt(var + eps) * weight + bias


def np_leaky(x, slope=0.2):
    return np.where(x >= 0, x, slope * x)


def edgeconv_oracle(layer, feats, neighbors):
    """Per-point python loop reimplementation in numpy."""
    w = layer.linear.weight.detach().numpy()
    ln_w = layer.norm.weight.detach().numpy()
    ln_b = layer.norm.bias.detach().numpy()
    x = feats.detach().numpy()
    out = []
    for i in range(x.shape[0]):
        rows = []
        for j in neighbors[i]:
            edge = np.concatenate([x[i], x[j] - x[i]])
            rows.append(np_leaky(np_layernorm(edge @ w.T, ln_w, ln_b)))
        out.append(np.max(rows, axis=0))
    return np.array(out)


def attention_oracle(module, queries, positions, garments):
    """Explicit softmax(qK^T/sqrt(d))V loop in numpy, one head at a time."""
    cfg = module.config
    heads, dh = cfg.n_heads, module.head_width
    q_w = module.q_proj.weight.detach().numpy()
    q_b = module.q_proj.bias.detach().numpy()
    k_w = module.k_proj.weight.detach().numpy()
    k_b = module.k_proj.bias.detach().numpy()
    v_w = module.v_proj.weight.detach().numpy()
    v_b = module.v_proj.bias.detach().numpy()
    o_w = module.out_proj.weight.detach().numpy()
    o_b = module.out_proj.bias.detach().numpy()
    codebook = module.codebook.detach().numpy()
    pe = positional_encoding(positions, cfg.pe_bands).numpy()
    k_full = codebook @ k_w.T + k_b
    v_full = codebook @ v_w.T + v_b
    present = garments.numpy().astype(bool)
    out = []
    for i in range(queries.shape[0]):
        q_full = np.concatenate([queries[i].numpy(), pe[i]]) @ q_w.T + q_b
        head_outs = []
        for h in range(heads):
            q = q_full[h * dh:(h + 1) * dh]
            k = k_full[:, h * dh:(h + 1) * dh]
            v = v_full[:, h * dh:(h + 1) * dh]
            logits = k @ q / np.sqrt(dh)
            logits = np.where(present, logits, -np.inf)
            weights = np.exp(logits - logits[present].max())
            weights = weights / weights.sum()
            head_outs.append(weights @ v)
        out.append(np.concatenate(head_outs) @ o_w.T + o_b)
    return np.array(out)


# ---------------------------------------------------------------------------
# finite differences

def fd_max_rel_error(loss_fn, params, eps=3e-6):
    """Central differences vs autograd over every parameter entry.

    The relative-error denominator is floored at 1e-6: float64 central
    differences are absolutely accurate to ~1e-10, so gradients below the
    floor are checked at that absolute precision while every meaningful
    gradient is held to the relative tolerance.
    """
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, params)
    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(params, analytic):
            flat = param.view(-1)
            gflat = grad.reshape(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = loss_fn().item()
                flat[idx] = orig - eps
                down = loss_fn().item()
                flat[idx] = orig
                fd = (up - down) / (2 * eps)
                an = gflat[idx].item()
                rel = abs(fd - an) / (1e-6 + max(abs(fd), abs(an)))
                worst = max(worst, rel)
    return worst


def test_tiny_config_is_small_enough():
    net = g.SegmentationNet(TINY, seed=0)
    assert sum(p.numel() for p in net.parameters()) <= 200


class TestEdgeConv:
    def test_k1_max_degenerates_to_single_neighbor(self, rng):
        layer = g.SegmentationNet(TINY, seed=1).point_encoder.convs[0]
        feats = torch.from_numpy(rng.standard_normal((6, 9)))
        nbrs = torch.from_numpy(
            g.build_knn_graph(feats[:, :3].numpy(), 1).neighbors)
        got = layer(feats, nbrs).detach().numpy()
        assert np.allclose(got, edgeconv_oracle(layer, feats, nbrs.numpy()),
                           atol=1e-12)

    def test_duplicated_points_identical_rows(self, rng):
        layer = g.SegmentationNet(TINY, seed=1).point_encoder.convs[0]
        base = rng.standard_normal((5, 9))
        feats = torch.from_numpy(np.concatenate([base, base]))
        nbrs = torch.from_numpy(
            g.build_knn_graph(feats[:, :3].numpy(), 3).neighbors)
        out = layer(feats, nbrs).detach().numpy()
        assert np.allclose(out[:5], out[5:], atol=1e-12)

    def test_matches_loop_oracle_random(self):
        rng = np.random.default_rng(8)
        for trial in range(20):
            cfg = g.NetworkConfig(k=int(rng.integers(1, 6)), l=4,
                                  global_width=4, n_heads=2, num_classes=3,
                                  pe_bands=1, decoder_widths=(4,))
            layer = g.SegmentationNet(cfg, seed=trial).point_encoder.convs[0]
            feats = torch.from_numpy(rng.standard_normal((50, 9)))
            nbrs = torch.from_numpy(
                g.build_knn_graph(feats.numpy(), cfg.k).neighbors)
            got = layer(feats, nbrs).detach().numpy()
            exp = edgeconv_oracle(layer, feats, nbrs.numpy())
            assert np.abs(got - exp).max() < 1e-6

    def test_width_mismatch_rejected(self, rng):
        layer = g.SegmentationNet(TINY, seed=1).point_encoder.convs[0]
        bad = torch.from_numpy(rng.standard_normal((4, 5)))
        with pytest.raises(ValidationError):
            layer(bad, torch.zeros((4, 1), dtype=torch.int64))


class TestPointEncoder:
    def test_shape_contract_minimal_cloud(self, rng):
        cfg = g.NetworkConfig(k=1)
        net = g.SegmentationNet(cfg, seed=0)
        feats = torch.from_numpy(rng.standard_normal((2, 9)))
        per_layer, pooled, f_p = net.point_encoder(feats)
        assert [tuple(p.shape) for p in per_layer] == [(2, 64)] * 3
        assert tuple(pooled.shape) == (1024,)
        assert tuple(f_p.shape) == (2, 3 * 64 + 1024)

    def test_global_vector_order_invariant(self, rng):
        net = g.SegmentationNet(g.NetworkConfig(k=4), seed=0)
        feats = torch.from_numpy(rng.standard_normal((30, 9)))
        _, pooled, _ = net.point_encoder(feats)
        perm = torch.from_numpy(rng.permutation(30))
        _, pooled_p, _ = net.point_encoder(feats[perm])
        assert torch.equal(pooled, pooled_p)

    def test_f_p_rows_permute_with_input(self, rng):
        net = g.SegmentationNet(g.NetworkConfig(k=4), seed=0)
        feats = torch.from_numpy(rng.standard_normal((25, 9)))
        _, _, f_p = net.point_encoder(feats)
        perm = torch.from_numpy(rng.permutation(25))
        _, _, f_p_perm = net.point_encoder(feats[perm])
        assert torch.equal(f_p_perm, f_p[perm])


class TestClothingAttention:
    def test_single_present_class_one_hot(self, rng):
        net = g.SegmentationNet(TINY, seed=3)
        queries = torch.from_numpy(rng.standard_normal((7, TINY.l)))
        positions = torch.from_numpy(rng.standard_normal((7, 3)))
        garments = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
        out, weights = net.clothing(queries, positions, garments,
                                    return_weights=True)
        assert torch.all(weights[:, :, 1] == 1.0)
        assert torch.all(weights[:, :, [0, 2]] == 0.0)
        # output equals that class's value projection pushed through out_proj
        v = net.clothing.v_proj(net.clothing.codebook)[1]
        expected = net.clothing.out_proj(v[None, :].expand(7, -1))
        assert torch.allclose(out, expected, atol=1e-12)

    def test_two_equal_logit_classes_split_half(self):
        net = g.SegmentationNet(TINY, seed=3)
        # identical codebook rows 0 and 1 -> identical keys -> equal logits
        with torch.no_grad():
            net.clothing.codebook[1] = net.clothing.codebook[0]
        queries = torch.zeros((4, TINY.l), dtype=torch.float64)
        positions = torch.zeros((4, 3), dtype=torch.float64)
        garments = torch.tensor([1.0, 1.0, 0.0], dtype=torch.float64)
        _, weights = net.clothing(queries, positions, garments,
                                  return_weights=True)
        assert torch.allclose(weights[:, :, 0], torch.full_like(
            weights[:, :, 0], 0.5), atol=1e-12)
        assert torch.allclose(weights[:, :, 1], torch.full_like(
            weights[:, :, 1], 0.5), atol=1e-12)

    def test_matches_naive_oracle_full_presence(self):
        rng = np.random.default_rng(11)
        for trial in range(20):
            cfg = g.NetworkConfig(k=2, l=8, global_width=4,
                                  n_heads=int(rng.choice([1, 2, 4])),
                                  num_classes=int(rng.integers(2, 18)),
                                  pe_bands=int(rng.integers(1, 4)),
                                  decoder_widths=(4,))
            net = g.SegmentationNet(cfg, seed=100 + trial)
            n = int(rng.integers(2, 30))
            queries = torch.from_numpy(rng.standard_normal((n, cfg.l)))
            positions = torch.from_numpy(rng.standard_normal((n, 3)))
            garments = torch.ones(cfg.num_classes, dtype=torch.float64)
            got = net.clothing(queries, positions, garments).detach().numpy()
            exp = attention_oracle(net.clothing, queries, positions, garments)
            assert np.abs(got - exp).max() < 1e-6

    def test_masked_classes_get_exact_zero(self):
        rng = np.random.default_rng(12)
        net = g.SegmentationNet(g.NetworkConfig(k=2), seed=5)
        for _ in range(20):
            n = int(rng.integers(2, 40))
            queries = torch.from_numpy(rng.standard_normal((n, 64)))
            positions = torch.from_numpy(rng.standard_normal((n, 3)))
            bits = (rng.uniform(size=18) > 0.6).astype(float)
            if not bits.any():
                bits[int(rng.integers(18))] = 1.0
            garments = torch.from_numpy(bits)
            _, weights = net.clothing(queries, positions, garments,
                                      return_weights=True)
            absent = ~torch.from_numpy(bits.astype(bool))
            assert torch.all(weights[:, :, absent] == 0.0)
            sums = weights.sum(dim=2)
            assert torch.all((sums - 1.0).abs() < 1e-6)

    def test_all_absent_rejected(self, rng):
        net = g.SegmentationNet(TINY, seed=3)
        queries = torch.zeros((2, TINY.l), dtype=torch.float64)
        positions = torch.zeros((2, 3), dtype=torch.float64)
        with pytest.raises(ValidationError, match="garment"):
            net.clothing(queries, positions, torch.zeros(3))

    def test_zero_key_mode_keeps_nonzero_weights(self, rng):
        cfg = g.NetworkConfig(k=2, l=2, global_width=2, n_heads=2,
                              num_classes=3, pe_bands=1, decoder_widths=(3,),
                              mask_mode="zero_key")
        net = g.SegmentationNet(cfg, seed=3)
        queries = torch.from_numpy(rng.standard_normal((5, 2)))
        positions = torch.from_numpy(rng.standard_normal((5, 3)))
        garments = torch.tensor([1.0, 0.0, 1.0], dtype=torch.float64)
        _, weights = net.clothing(queries, positions, garments,
                                  return_weights=True)
        # literal masking zeroes key rows: absent classes keep logit 0,
        # hence a nonzero softmax weight
        assert torch.all(weights[:, :, 1] > 0.0)


class TestForward:
    def test_softmax_rows_normalize(self, rng):
        net = g.SegmentationNet(TINY, seed=4)
        feats9, garments, body, _ = tiny_inputs(rng)
        logits = net(feats9, garments, body)
        probs = torch.softmax(logits, dim=1)
        assert torch.all((probs.sum(dim=1) - 1.0).abs() < 1e-6)

    def test_restriction_masks_argmax(self, rng):
        net = g.SegmentationNet(TINY, seed=4)
        feats9, _, body, _ = tiny_inputs(rng, n=30)
        garments = torch.tensor([0.0, 1.0, 1.0], dtype=torch.float64)
        logits = net(feats9, garments, body, restrict=True)
        assert torch.all(logits[:, 0] == -torch.inf)
        assert set(logits.argmax(dim=1).tolist()) <= {1, 2}

    def test_deterministic_across_runs(self, rng):
        feats9, garments, body, _ = tiny_inputs(rng, n=20)
        first = g.SegmentationNet(TINY, seed=9)(feats9, garments, body)
        second = g.SegmentationNet(TINY, seed=9)(feats9, garments, body)
        assert torch.equal(first, second)

    def test_permutation_equivariance_bitwise(self):
        rng = np.random.default_rng(17)
        net = g.SegmentationNet(g.NetworkConfig(k=5), seed=2)
        with torch.no_grad():
            for trial in range(5):
                feats9 = torch.from_numpy(rng.standard_normal((40, 9)))
                body = torch.from_numpy(rng.standard_normal((40, 3)))
                bits = np.zeros(18)
                bits[rng.choice(18, size=4, replace=False)] = 1
                garments = torch.from_numpy(bits)
                logits = net(feats9, garments, body)
                perm = torch.from_numpy(rng.permutation(40))
                permuted = net(feats9[perm], garments, body[perm])
                assert torch.equal(permuted, logits[perm])

    def test_body_feats_required_for_canonical(self, rng):
        net = g.SegmentationNet(TINY, seed=4)
        feats9, garments, _, _ = tiny_inputs(rng)
        with pytest.raises(ValidationError, match="encode_body"):
            net(feats9, garments, None)

    def test_ablation_widths(self):
        for clothing, extra in (("attention", 64), ("binary", 18), ("none", 0)):
            for body, body_w in (("canonical", 3), ("none", 0)):
                cfg = g.NetworkConfig(body_encoder=body,
                                      clothing_encoder=clothing)
                assert cfg.decoder_input_width == 3 * 64 + 1024 + body_w + extra
                net = g.SegmentationNet(cfg, seed=0)
                assert net.decoder.hidden[0].in_features == \
                    cfg.decoder_input_width

    def test_binary_mode_forward(self, rng):
        cfg = g.NetworkConfig(k=2, l=2, global_width=2, n_heads=2,
                              num_classes=3, pe_bands=1, decoder_widths=(3,),
                              clothing_encoder="binary")
        net = g.SegmentationNet(cfg, seed=0)
        assert net.clothing is None
        feats9, garments, body, _ = tiny_inputs(rng)
        assert net(feats9, garments, body).shape == (12, 3)


class TestCeLoss:
    def test_uniform_logits_ln_k(self):
        logits = torch.zeros((1, 18), dtype=torch.float64)
        labels = torch.tensor([4])
        loss = g.ce_loss(logits, labels)
        assert abs(loss.item() - np.log(18)) < 1e-12

    def test_large_margin_loss_vanishes(self):
        logits = torch.full((1, 18), -100.0, dtype=torch.float64)
        logits[0, 3] = 100.0
        assert g.ce_loss(logits, torch.tensor([3])).item() < 1e-12

    def test_out_of_range_label(self):
        with pytest.raises(ValidationError):
            g.ce_loss(torch.zeros((1, 3), dtype=torch.float64),
                      torch.tensor([3]))


class TestGradients:
    def test_full_network_finite_differences(self, rng):
        net = g.SegmentationNet(TINY_STATIC, seed=6)
        feats9, garments, body, labels = tiny_inputs(rng, n=10)

        def loss_fn():
            return g.ce_loss(net(feats9, garments, body), labels)

        params = list(net.parameters())
        assert fd_max_rel_error(loss_fn, params) < 1e-4

    def test_codebook_receives_gradient(self, rng):
        net = g.SegmentationNet(TINY, seed=6)
        feats9, garments, body, labels = tiny_inputs(rng, n=8)
        loss = g.ce_loss(net(feats9, garments, body), labels)
        loss.backward()
        assert net.clothing.codebook.grad is not None
        assert net.clothing.codebook.grad.abs().sum() > 0


class TestAttentionMap:
    def test_constant_features_normalize_to_zero(self):
        net = g.SegmentationNet(TINY, seed=7)
        feats9 = torch.zeros((6, 9), dtype=torch.float64)
        feats9[:, 0] = torch.arange(6)  # distinct positions, same appearance
        with torch.no_grad():  # force constant layer-2 features
            for conv in net.point_encoder.convs:
                conv.linear.weight.zero_()
        scores = export_attention_map(net, feats9, 0)
        assert np.all(scores == 0.0)

    def test_scores_in_unit_interval_and_match_dot_oracle(self, rng):
        net = g.SegmentationNet(TINY, seed=7)
        feats9 = torch.from_numpy(rng.standard_normal((15, 9)))
        scores, raw = export_attention_map(net, feats9, 1, return_raw=True)
        assert scores.min() >= 0.0 and scores.max() <= 1.0
        with torch.no_grad():
            per_layer, _, _ = net.point_encoder(feats9)
        expected = per_layer[2].numpy() @ net.clothing.codebook[1].detach().numpy()
        assert np.allclose(raw, expected, atol=1e-12)

    def test_unknown_class_rejected(self, rng):
        net = g.SegmentationNet(TINY, seed=7)
        feats9 = torch.from_numpy(rng.standard_normal((4, 9)))
        with pytest.raises(ValidationError):
            export_attention_map(net, feats9, 3)


class TestCheckpoints:
    def test_roundtrip_bitwise(self, tmp_path, rng):
        net = g.SegmentationNet(TINY, seed=8)
        path = tmp_path / "m.ckpt"
        g.save_checkpoint(path, net, g.DEFAULT_TAXONOMY, extra={"note": 1})
        back, extra = g.load_checkpoint(path, g.DEFAULT_TAXONOMY)
        assert extra == {"note": 1}
        for (name, p1), p2 in zip(net.state_dict().items(),
                                  back.state_dict().values()):
            assert torch.equal(p1, p2), name
        feats9, garments, body, _ = tiny_inputs(rng)
        assert torch.equal(net(feats9, garments, body),
                           back(feats9, garments, body))

    def test_taxonomy_hash_mismatch_refused(self, tmp_path):
        net = g.SegmentationNet(TINY, seed=8)
        path = tmp_path / "m.ckpt"
        g.save_checkpoint(path, net, g.DEFAULT_TAXONOMY)
        other = g.LabelTaxonomy(
            classes=tuple(reversed(g.DEFAULT_TAXONOMY.classes)),
            palette=dict(g.DEFAULT_TAXONOMY.palette),
            merge3=dict(g.DEFAULT_TAXONOMY.merge3))
        with pytest.raises(ValidationError, match="taxonomy"):
            g.load_checkpoint(path, other)


class TestLayerGroups:
    def test_default_mask_selects_decoder_last_and_global_mlp(self):
        net = g.SegmentationNet(g.NetworkConfig(), seed=0)
        selected = params_for_layers(net, DEFAULT_REFINE_LAYERS)
        assert all(name.startswith(("decoder.out.",
                                    "point_encoder.global_mlp."))
                   for name in selected)
        assert any(name.startswith("decoder.out.") for name in selected)

    def test_unknown_layer_name(self):
        net = g.SegmentationNet(TINY, seed=0)
        with pytest.raises(ValidationError, match="unknown"):
            params_for_layers(net, ("decoder_last", "mystery"))

    def test_every_group_resolves_on_full_config(self):
        net = g.SegmentationNet(g.NetworkConfig(), seed=0)
        for name in LAYER_GROUPS:
            assert params_for_layers(net, (name,))


def test_config_validation():
    with pytest.raises(ValidationError):
        g.NetworkConfig(l=10, n_heads=4)
    with pytest.raises(ValidationError):
        g.NetworkConfig(k=0)
    with pytest.raises(ValidationError):
        g.NetworkConfig(body_encoder="wings")
