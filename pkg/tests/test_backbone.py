import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skiptrack.backbone import (BackboneWeights, BlockWeights, LayerFeatures, apply_block, block_flops,
                                block_param_count, direct_candidates, embed_flops, flop_estimate,
                                forward_all, forward_prefix, forward_skip, init_backbone, param_count,
                                patch_embed, patchify, transformer_block)
from skiptrack.config import ModelConfig
from skiptrack.errors import ConfigError, ShapeError

from conftest import TINY

DEFAULT = ModelConfig()


def random_block(d, rng, hidden=None, scale=1.0):
    hidden = hidden or 4 * d
    f = lambda *s: (rng.normal(size=s) * scale).astype(np.float32)  # noqa: E731
    return BlockWeights(f(d), f(d), f(d, 3 * d), f(3 * d), f(d, d), f(d), f(d), f(d),
                        f(d, hidden), f(hidden), f(hidden, d), f(d))


def identity_block(d, hidden=None):
    hidden = hidden or 4 * d
    z = lambda *s: np.zeros(s, np.float32)  # noqa: E731
    return BlockWeights(z(d), z(d), z(d, 3 * d), z(3 * d), z(d, d), z(d), z(d), z(d),
                        z(d, hidden), z(hidden), z(hidden, d), z(d))


def scalar_block(x, blk, eps=1e-6):
    """Single-head pre-norm block evaluated with Python scalars."""
    n, d = len(x), len(x[0])
    P = lambda a: [[float(v) for v in row] for row in a]  # noqa: E731
    V = lambda a: [float(v) for v in a]  # noqa: E731

    def ln(rows, g, b):
        out = []
        for r in rows:
            m = sum(r) / d
            var = sum((v - m) ** 2 for v in r) / d
            out.append([(r[j] - m) / math.sqrt(var + eps) * g[j] + b[j] for j in range(d)])
        return out

    def lin(rows, w, b):
        return [[sum(r[i] * w[i][j] for i in range(len(r))) + b[j] for j in range(len(b))] for r in rows]

    h = ln(x, V(blk.ln1_gamma), V(blk.ln1_beta))
    qkv = lin(h, P(blk.qkv_w), V(blk.qkv_b))
    q = [r[:d] for r in qkv]
    k = [r[d:2 * d] for r in qkv]
    v = [r[2 * d:] for r in qkv]
    att = []
    for i in range(n):
        s = [sum(q[i][t] * k[j][t] for t in range(d)) / math.sqrt(d) for j in range(n)]
        m = max(s)
        e = [math.exp(a - m) for a in s]
        p = [a / sum(e) for a in e]
        att.append([sum(p[j] * v[j][t] for j in range(n)) for t in range(d)])
    proj = lin(att, P(blk.proj_w), V(blk.proj_b))
    x1 = [[x[i][t] + proj[i][t] for t in range(d)] for i in range(n)]
    h2 = ln(x1, V(blk.ln2_gamma), V(blk.ln2_beta))
    f1 = lin(h2, P(blk.fc1_w), V(blk.fc1_b))
    g1 = [[0.5 * a * (1 + math.erf(a / math.sqrt(2))) for a in r] for r in f1]
    f2 = lin(g1, P(blk.fc2_w), V(blk.fc2_b))
    return np.array([[x1[i][t] + f2[i][t] for t in range(d)] for i in range(n)])


def tiny_weights(cfg, seed=0):
    return init_backbone(cfg, np.random.default_rng(seed))


# config -----------------------------------------------------------------------

def test_default_token_counts():
    assert (DEFAULT.n_template, DEFAULT.n_search, DEFAULT.n_tokens) == (64, 256, 320)
    assert DEFAULT.k_choices == 4


@pytest.mark.parametrize("bad", [dict(l_star=12), dict(l_star=0), dict(heads=5), dict(template_side=120)])
def test_config_rejects_invalid(bad):
    with pytest.raises(ConfigError):
        DEFAULT.with_(**bad)


def test_config_round_trip_and_fingerprint(tmp_path):
    cfg = DEFAULT.with_(depth=6, l_star=3)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.fingerprint() != DEFAULT.fingerprint()
    assert cfg.fingerprint() == ModelConfig.from_dict(cfg.to_dict()).fingerprint()
    p = tmp_path / "c.json"
    p.write_text('{"depth": 6, "l_star": 3}')
    assert ModelConfig.load(p) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"depthh": 3})


# embedding --------------------------------------------------------------------

def test_patchify_order():
    img = np.arange(3 * 4 * 4, dtype=np.float32).reshape(3, 4, 4)
    p = patchify(img, 2)
    assert p.shape == (4, 12)
    # second patch is the top-right 2x2 block, flattened channel-major
    expected = np.concatenate([img[c, 0:2, 2:4].ravel() for c in range(3)])
    np.testing.assert_array_equal(p[1], expected)


def test_patch_embed_zero_inputs_give_zero_tokens(tiny_cfg):
    w = tiny_weights(tiny_cfg)
    w.pos_template[:] = 0
    w.pos_search[:] = 0
    Z = np.zeros((3, 16, 16), np.float32)
    S = np.zeros((3, 32, 32), np.float32)
    x0 = patch_embed(Z, S, tiny_cfg, w)
    assert x0.layer_index == 0 and x0.tokens.shape == (tiny_cfg.n_tokens, 16)
    assert not x0.tokens.any()


def test_patch_embed_single_patch_matches_dot_products(rng):
    cfg = ModelConfig(depth=2, l_star=1, embed_dim=4, heads=1, patch=2, template_side=2, search_side=2,
                      selector_hidden=4, head_channels=2)
    w = init_backbone(cfg, rng)
    w.patch_b = rng.normal(size=4).astype(np.float32)
    Z = rng.normal(size=(3, 2, 2)).astype(np.float32)
    S = rng.normal(size=(3, 2, 2)).astype(np.float32)
    tokens = patch_embed(Z, S, cfg, w).tokens
    for row, img, pos in ((0, Z, w.pos_template[0]), (1, S, w.pos_search[0])):
        flat = [float(img[c, y, x]) for c in range(3) for y in range(2) for x in range(2)]
        for j in range(4):
            ref = sum(flat[i] * float(w.patch_w[i, j]) for i in range(12)) + float(w.patch_b[j]) + float(pos[j])
            assert abs(tokens[row, j] - ref) < 1e-5


def test_patch_embed_rejects_wrong_size(tiny_cfg):
    w = tiny_weights(tiny_cfg)
    with pytest.raises(ShapeError):
        patch_embed(np.zeros((3, 8, 8), np.float32), np.zeros((3, 32, 32), np.float32), tiny_cfg, w)


def test_swapping_identical_template_and_search_permutes_token_blocks(rng):
    cfg = ModelConfig(depth=2, l_star=1, embed_dim=8, heads=2, patch=4, template_side=8, search_side=8,
                      selector_hidden=4, head_channels=2)
    w = init_backbone(cfg, rng)
    w.pos_template[:] = 0
    w.pos_search[:] = 0
    A = rng.normal(size=(3, 8, 8)).astype(np.float32)
    B = rng.normal(size=(3, 8, 8)).astype(np.float32)
    out_ab = forward_prefix(patch_embed(A, B, cfg, w), cfg, w, 2).tokens
    out_ba = forward_prefix(patch_embed(B, A, cfg, w), cfg, w, 2).tokens
    n = cfg.n_template
    np.testing.assert_allclose(out_ab[:n], out_ba[n:], atol=1e-5)
    np.testing.assert_allclose(out_ab[n:], out_ba[:n], atol=1e-5)


# transformer block ------------------------------------------------------------

def test_zeroed_branches_leave_input_unchanged(rng):
    x = rng.normal(size=(5, 4)).astype(np.float32)
    np.testing.assert_array_equal(transformer_block(x, identity_block(4), 2), x)


def test_block_matches_unrolled_scalar_oracle(rng):
    blk = random_block(2, rng, scale=0.7)
    x = rng.normal(size=(2, 2)).astype(np.float32)
    out = transformer_block(x, blk, 1)
    ref = scalar_block(x.astype(float).tolist(), blk)
    assert np.max(np.abs(out - ref)) < 1e-4


def test_block_matches_scalar_oracle_larger(rng):
    blk = random_block(4, rng, scale=0.5)
    x = rng.normal(size=(3, 4)).astype(np.float32)
    assert np.max(np.abs(transformer_block(x, blk, 1) - scalar_block(x.tolist(), blk))) < 1e-4


def test_block_is_permutation_equivariant(rng):
    blk = random_block(6, rng, scale=0.3)
    x = rng.normal(size=(7, 6)).astype(np.float32)
    perm = rng.permutation(7)
    np.testing.assert_allclose(transformer_block(x[perm], blk, 3), transformer_block(x, blk, 3)[perm], atol=1e-5)


def test_block_preserves_shape_and_rejects_bad_heads(rng):
    blk = random_block(6, rng, scale=0.1)
    x = rng.normal(size=(3, 6)).astype(np.float32)
    assert transformer_block(x, blk, 2).shape == (3, 6)
    with pytest.raises(ShapeError):
        transformer_block(x, blk, 4)


# forward passes ---------------------------------------------------------------

def test_forward_all_first_element_is_one_block(rng):
    # l_star < depth forbids a 1-block config, so check the first element of a 2-block stack
    blk = random_block(8, rng, scale=0.2)
    x = rng.normal(size=(4, 8)).astype(np.float32)
    cfg = ModelConfig(depth=2, l_star=1, embed_dim=8, heads=2, patch=4, template_side=4, search_side=4,
                      selector_hidden=4, head_channels=2)
    w = init_backbone(cfg, rng)
    w.blocks[0] = blk
    out = forward_all(LayerFeatures(0, x), cfg, w)
    np.testing.assert_array_equal(out[0].tokens, transformer_block(x, blk, 2))
    assert [f.layer_index for f in out] == [1, 2]


def test_forward_all_identity_blocks(tiny_cfg, rng):
    w = tiny_weights(tiny_cfg)
    w.blocks = [identity_block(16) for _ in range(tiny_cfg.depth)]
    x0 = LayerFeatures(0, rng.normal(size=(tiny_cfg.n_tokens, 16)).astype(np.float32))
    for f in forward_all(x0, tiny_cfg, w):
        np.testing.assert_array_equal(f.tokens, x0.tokens)


def test_forward_all_prefix_matches_manual_composition(tiny_cfg, rng):
    w = tiny_weights(tiny_cfg, 4)
    x = rng.normal(size=(tiny_cfg.n_tokens, 16)).astype(np.float32)
    feats = forward_all(LayerFeatures(0, x), tiny_cfg, w)
    manual = x
    for i in range(tiny_cfg.depth):
        manual = transformer_block(manual, w.blocks[i], tiny_cfg.heads)
        np.testing.assert_array_equal(feats[i].tokens, manual)


def test_forward_skip_equals_direct_application(tiny_cfg, rng):
    # depth 4, l_star 2, k 2: block 4 applied to the output of blocks 1, 2
    w = tiny_weights(tiny_cfg, 5)
    x0 = LayerFeatures(0, rng.normal(size=(tiny_cfg.n_tokens, 16)).astype(np.float32))
    trace = []
    out = forward_skip(x0, tiny_cfg, w, 2, trace)
    sat = forward_all(x0, tiny_cfg, w)[tiny_cfg.l_star - 1]
    expected = transformer_block(sat.tokens, w.blocks[3], tiny_cfg.heads)
    assert np.max(np.abs(out.tokens - expected)) <= 1e-6
    assert out.layer_index == 4 and trace == [1, 2, 4]


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 2), st.integers(0, 1000))
def test_forward_skip_runs_l_star_plus_one_blocks(k, seed):
    w = tiny_weights(TINY, seed)
    x0 = LayerFeatures(0, np.random.default_rng(seed).normal(size=(TINY.n_tokens, 16)).astype(np.float32))
    trace = []
    out = forward_skip(x0, TINY, w, k, trace)
    assert len(trace) == TINY.l_star + 1
    assert out.layer_index == TINY.l_star + k
    assert out.tokens.shape == x0.tokens.shape


def test_forward_skip_without_skipping_equals_full_pass(rng):
    cfg = ModelConfig(depth=3, l_star=2, embed_dim=8, heads=2, patch=4, template_side=4, search_side=8,
                      selector_hidden=4, head_channels=2)
    w = init_backbone(cfg, rng)
    x0 = LayerFeatures(0, rng.normal(size=(cfg.n_tokens, 8)).astype(np.float32))
    np.testing.assert_array_equal(forward_skip(x0, cfg, w, 1).tokens, forward_all(x0, cfg, w)[-1].tokens)


def test_forward_skip_rejects_out_of_range_k(tiny_cfg, rng):
    w = tiny_weights(tiny_cfg)
    x0 = LayerFeatures(0, np.zeros((tiny_cfg.n_tokens, 16), np.float32))
    for k in (0, 3):
        with pytest.raises(ValueError):
            forward_skip(x0, tiny_cfg, w, k)


def test_direct_candidates_and_apply_block_checks(tiny_cfg, rng):
    w = tiny_weights(tiny_cfg)
    x0 = LayerFeatures(0, rng.normal(size=(tiny_cfg.n_tokens, 16)).astype(np.float32))
    sat = forward_prefix(x0, tiny_cfg, w, tiny_cfg.l_star)
    cands = direct_candidates(sat, tiny_cfg, w)
    assert [c.layer_index for c in cands] == [3, 4]
    np.testing.assert_array_equal(cands[1].tokens, forward_skip(x0, tiny_cfg, w, 2).tokens)
    with pytest.raises(ValueError):
        direct_candidates(x0, tiny_cfg, w)
    with pytest.raises(ValueError):
        apply_block(x0, tiny_cfg.depth + 1, tiny_cfg, w)
    with pytest.raises(ValueError):
        forward_prefix(sat, tiny_cfg, w, 1)


def test_named_round_trip(tiny_cfg):
    w = tiny_weights(tiny_cfg)
    back = BackboneWeights.from_named(w.named(), tiny_cfg)
    for name, arr in back.named().items():
        np.testing.assert_array_equal(arr, w.named()[name])


# counting ---------------------------------------------------------------------

def test_flop_formula_pinned_at_defaults():
    n, d = 320, 192
    per_block = 8 * n * d * d + 4 * n * n * d + 4 * 4 * n * d * d
    assert block_flops(DEFAULT) == per_block == 361_758_720
    assert embed_flops(DEFAULT) == 2 * n * 3 * 16 * 16 * d
    assert flop_estimate(DEFAULT, "full") == 4_435_476_480


def test_block_flop_ratio_skip_over_full():
    ratio = (DEFAULT.l_star + 1) * block_flops(DEFAULT) / (DEFAULT.depth * block_flops(DEFAULT))
    assert ratio == 0.75


def test_doubling_width_quadruples_square_terms():
    small, big = DEFAULT, DEFAULT.with_(embed_dim=384, heads=6)
    n = 320
    sq = lambda c: block_flops(c) - 4 * n * n * c.embed_dim  # noqa: E731
    assert sq(big) == 4 * sq(small)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 16), st.data())
def test_skip_is_cheaper_whenever_blocks_are_skipped(depth, data):
    l_star = data.draw(st.integers(1, depth - 1))
    cfg = DEFAULT.with_(depth=depth, l_star=l_star)
    if l_star + 1 < depth:
        assert flop_estimate(cfg, "full") > flop_estimate(cfg, "skip")


def test_param_count_matches_tensor_sizes(tiny_cfg):
    w = tiny_weights(tiny_cfg)
    assert param_count(tiny_cfg) == sum(a.size for a in w.named().values())
    assert block_param_count(tiny_cfg) == sum(a.size for a in vars(w.blocks[0]).values())


def test_flop_estimate_unknown_mode():
    with pytest.raises(ValueError):
        flop_estimate(DEFAULT, "half")
