import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roomgen import losses as L
from roomgen import model as M
from roomgen import tensor as T
from roomgen import tokenizer as tok
from roomgen import vocab
from roomgen.dataset import SynthConfig, synth_generate
from roomgen.room import Entity
from roomgen.tokenizer import DEC_SCHEMA, DecToken
from roomgen.trainer import TrainConfig, batch_losses, make_batch, prepare

from gradcheck import REL_TOL, check_op, check_params

N_CASES = 20
HEAD_SIZES = {"type_logits": len(DecToken), "category_logits": len(vocab.ENTITY_CATEGORIES),
              "edge_logits": vocab.MAX_EDGES, "t_value": 1, "delta": 1, "size": 2, "rho": 1,
              "extra_logits": len(vocab.ENTITY_EXTRAS)}


def heads_from(arrays):
    return M.HeadOutputs(**dict(zip(HEAD_SIZES, arrays)))


def zero_heads(b, s, overrides=None):
    arrays = {k: np.zeros((b, s, n)) for k, n in HEAD_SIZES.items()}
    arrays.update(overrides or {})
    return M.HeadOutputs(**{k: T.Tensor(v) for k, v in arrays.items()})


def prop(t=0.25, delta=0.3, w=0.5, d=2.0, rho=0.5, cat=None):
    cat = vocab.category_id("bed") if cat is None else cat
    return Entity(vocab.PROP, cat, 1, t, delta, w, d, rho, 2)


def targets_for(entities):
    return tok.encode_entity_sequence(entities).targets()[None, :, : len(entities) + 1]


# -- ddep ----------------------------------------------------------------------------------

def test_ddep_zero_for_perfect_predictions():
    e = prop()
    y = targets_for([e])
    big = 1e3
    o = {k: np.zeros((1, 2, n)) for k, n in HEAD_SIZES.items()}
    o["type_logits"][0, 0, DecToken.PROP] = big
    o["type_logits"][0, 1, DecToken.EOS] = big
    o["category_logits"][0, 0, e.category] = big
    o["edge_logits"][0, 0, e.edge_index] = big
    o["extra_logits"][0, 0, e.extra] = big
    o["t_value"][0, 0, 0] = e.t
    o["delta"][0, 0, 0] = e.delta
    o["size"][0, 0] = (e.width, e.depth)
    o["rho"][0, 0, 0] = e.rho
    assert L.ddep_loss(zero_heads(1, 2, o), y).item() == pytest.approx(0.0, abs=1e-12)


def test_ddep_hand_case():
    e = prop()
    y = targets_for([e])  # position 0 -> PROP entity, position 1 -> EOS
    o = {"t_value": np.full((1, 2, 1), 0.5), "delta": np.full((1, 2, 1), 0.1), "size": np.ones((1, 2, 2))}
    total, parts = L.ddep_loss(zero_heads(1, 2, o), y, {"t": 2.0}, return_parts=True)
    assert parts["type"].item() == pytest.approx(math.log(5))
    assert parts["category"].item() == pytest.approx(math.log(24))
    assert parts["edge"].item() == pytest.approx(math.log(16))
    assert parts["extra"].item() == pytest.approx(math.log(4))
    assert parts["t"].item() == pytest.approx(0.0625)
    assert parts["delta"].item() == pytest.approx(0.04)
    assert parts["size"].item() == pytest.approx((0.25 + 1.0) / 2)
    assert parts["rho"].item() == pytest.approx(0.25)
    want = math.log(5) + math.log(24) + math.log(16) + math.log(4) + 2 * 0.0625 + 0.04 + 0.625 + 0.25
    assert total.item() == pytest.approx(want, abs=1e-12)


def test_ddep_uniform_logits_per_active_position():
    ents = [prop(t=0.1), prop(t=0.9)]
    y = targets_for(ents)
    _, parts = L.ddep_loss(zero_heads(1, 3), y, return_parts=True)
    assert parts["type"].item() == pytest.approx(math.log(len(DecToken)))
    assert parts["category"].item() == pytest.approx(math.log(len(vocab.ENTITY_CATEGORIES)))


def test_ddep_masked_targets_do_not_matter():
    cw = Entity(vocab.CASEWORK, vocab.category_id("base_cabinet"), 0, 0.4, 0.3, 0.6, 0.6)
    y = targets_for([cw, prop()])
    rng = np.random.default_rng(0)
    heads = zero_heads(1, 3, {k: rng.normal(size=(1, 3, n)) for k, n in HEAD_SIZES.items()})
    base = L.ddep_loss(heads, y).item()
    y2 = y.copy()
    y2[0, DEC_SCHEMA.offsets["rho"], 0] = 123.0  # rho of the casework target is inapplicable
    y2[0, DEC_SCHEMA.offsets["t"], 2] = 55.0  # the EOS target carries no entity values
    assert L.ddep_loss(heads, y2).item() == base


def _random_targets(rng, b):
    seqs = []
    for _ in range(b):
        n = int(rng.integers(0, 4))
        ents = []
        for _ in range(n):
            if rng.random() < 0.5:
                ents.append(prop(t=rng.random(), delta=rng.normal(), rho=rng.normal(), cat=vocab.category_id("bed")))
            else:
                ents.append(Entity(vocab.CASEWORK, vocab.category_id("base_cabinet"), int(rng.integers(0, 4)),
                                   rng.random(), rng.random(), 0.6, 0.6))
        seqs.append(tok.encode_entity_sequence(ents))
    s = max(m.n_active for m in seqs) - 1
    return np.stack([m.targets()[:, :s] for m in seqs]), s


def test_ddep_gradients():
    for seed in range(N_CASES):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(1, 4))
        y, s = _random_targets(rng, b)
        lam = {h: float(rng.uniform(0.1, 2)) for h in L.HEADS}
        arrays = [rng.normal(size=(b, s, n)) for n in HEAD_SIZES.values()]
        err = check_op(lambda *ts: L.ddep_loss(heads_from(ts), y, lam), arrays, rng)
        assert err < REL_TOL


# -- room-type CE ------------------------------------------------------------------------------

def test_room_ce_values_and_gradient():
    assert L.room_cls_loss(T.Tensor(np.zeros(8)), 3).item() == pytest.approx(math.log(8))
    assert abs(L.room_cls_loss(T.Tensor(np.eye(8)[2] * 1e3), 2).item()) < 1e-12
    logits = np.array([[1.0, 0.0, -1.0], [0.0, 2.0, 0.0]])
    want = 0.5 * (-math.log(math.exp(1) / (math.e + 1 + math.exp(-1)))
                  - math.log(1 / (2 + math.exp(2))))
    assert L.room_cls_loss(T.Tensor(logits), [0, 2]).item() == pytest.approx(want)
    for seed in range(N_CASES):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(1, 5))
        labels = rng.integers(0, 8, size=b)
        assert check_op(lambda z: L.room_cls_loss(z, labels), [rng.normal(size=(b, 8))], rng) < REL_TOL


# -- masked ids ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def enc_batch():
    rooms = synth_generate(SynthConfig(seed=41), 6)
    return make_batch(prepare(rooms))


def test_mlm_mask_rate(enc_batch):
    x, mask = enc_batch.x_enc, enc_batch.enc_mask
    rng = np.random.default_rng(0)
    picked = total = 0
    for _ in range(10_000 // int(mask.sum()) + 1):
        _, sel, _ = L.mlm_mask(x, mask, 0.15, rng)
        assert not (sel & ~mask).any()
        picked += int(sel.sum())
        total += int(mask.sum())
    # 4-sigma binomial interval (the occasional redraw only nudges this upward)
    sd = math.sqrt(0.15 * 0.85 / total)
    assert abs(picked / total - 0.15) < 4 * sd


def test_mlm_replaces_selected_ids_only(enc_batch):
    x, mask = enc_batch.x_enc, enc_batch.enc_mask
    xm, sel, orig = L.mlm_mask(x, mask, 0.3, np.random.default_rng(1))
    row = tok.ENC_SCHEMA.offsets["token_id"]
    assert (xm[:, row][sel] == L.MASK_ID).all()
    assert np.array_equal(xm[:, row][~sel], x[:, row][~sel])
    assert np.array_equal(orig, x[:, row])


class CopyOracle:
    """Stand-in model whose id head puts all mass on the original ids."""

    def __init__(self, x):
        ids = x[:, tok.ENC_SCHEMA.offsets["token_id"], :]
        self.ids = np.where(ids == tok.SENTINEL, 0, ids).astype(int)

    def encode(self, x, mask):
        return None

    def id_logits(self, mem):
        return T.Tensor(np.eye(vocab.MAX_TOKEN_ID)[self.ids] * 1e3)


def test_mlm_copy_oracle_zero(enc_batch):
    x, mask = enc_batch.x_enc, enc_batch.enc_mask
    loss = L.mlm_loss(CopyOracle(x), x, mask, 0.3, np.random.default_rng(2))
    assert abs(loss.item()) < 1e-12


class FixedLogits:
    """Stand-in model whose id logits do not depend on its input."""

    def __init__(self, shape):
        self.logits = np.random.default_rng(4).normal(size=shape + (vocab.MAX_TOKEN_ID,))

    def encode(self, x, mask):
        return None

    def id_logits(self, mem):
        return T.Tensor(self.logits)


def test_mlm_unselected_targets_irrelevant(enc_batch):
    x, mask = enc_batch.x_enc, enc_batch.enc_mask
    oracle = FixedLogits(mask.shape)
    base = L.mlm_loss(oracle, x, mask, 0.3, np.random.default_rng(3)).item()
    _, sel, _ = L.mlm_mask(x, mask, 0.3, np.random.default_rng(3))
    x2 = x.copy()
    ids = x2[:, tok.ENC_SCHEMA.offsets["token_id"]]
    ids[~sel & mask] = (ids[~sel & mask] + 7) % vocab.MAX_TOKEN_ID
    assert L.mlm_loss(oracle, x2, mask, 0.3, np.random.default_rng(3)).item() == base


def test_mlm_gradients(enc_batch):
    m = M.LayoutTransformer(M.ModelConfig(d=8, n_layers_enc=1, n_layers_dec=0, n_heads=2, seed=1))
    params = [p for k, p in m.named_parameters() if not k.startswith("enc_embed")] + \
        [m.enc_embed.positions]

    def loss():
        return L.mlm_loss(m, enc_batch.x_enc, enc_batch.enc_mask, 0.3, np.random.default_rng(5))

    assert check_params(loss, params, max_entries=3) < REL_TOL


# -- triplet -------------------------------------------------------------------------------------

def test_triplet_worked_values():
    za = np.array([[0.0, 0.0]])
    assert L.triplet_loss(za, za, np.array([[2.0, 0.0]]), 0.2).item() == 0.0
    assert L.triplet_loss(za, np.array([[1.0, 0.0]]), za, 0.2).item() == pytest.approx(1.2, abs=1e-15)
    assert L.triplet_loss(za, za, za, 0.2).item() == pytest.approx(0.2, abs=1e-15)


def test_triplet_gradients():
    for seed in range(N_CASES):
        rng = np.random.default_rng(seed)
        b, d = int(rng.integers(1, 5)), int(rng.integers(2, 6))
        arrays = [rng.normal(size=(b, d)) for _ in range(3)]
        # keep hinge arguments away from the kink
        while True:
            a, p, n = arrays
            margin = np.linalg.norm(a - p, axis=1) - np.linalg.norm(a - n, axis=1) + 0.2
            if np.all(np.abs(margin) > 1e-3):
                break
            arrays = [rng.normal(size=(b, d)) for _ in range(3)]
        assert check_op(lambda a, p, n: L.triplet_loss(a, p, n, 0.2), arrays, rng) < REL_TOL


def test_sample_triplets_labels():
    labels = np.array([0, 0, 1, 1, 2])
    a, p, n = L.sample_triplets(labels, np.random.default_rng(0))
    assert list(a) == [0, 1, 2, 3]
    assert (labels[a] == labels[p]).all() and (a != p).all()
    assert (labels[a] != labels[n]).all()
    a, _, _ = L.sample_triplets(np.array([1, 1, 1]), np.random.default_rng(0))
    assert len(a) == 0


# -- geometry preservation ------------------------------------------------------------------------

def test_geom_identity_and_scaling():
    g = np.random.default_rng(0).normal(size=(5, 5))
    assert L.geom_preserve_loss(g, g).item() == pytest.approx(0.0, abs=1e-15)
    assert L.geom_preserve_loss(3.5 * g, g).item() == pytest.approx(0.0, abs=1e-15)


def test_geom_three_point_hand_case():
    z = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    g = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    # normalized distances: z -> (1/sqrt2, 1/sqrt2, 1), g -> (2/sqrt5, 1/sqrt5, 1)
    a = 1 / math.sqrt(2) - 2 / math.sqrt(5)
    b = 1 / math.sqrt(2) - 1 / math.sqrt(5)
    want = 2 * (a * a + b * b) / 6
    assert L.geom_preserve_loss(z, g).item() == pytest.approx(want, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), s1=st.floats(0.1, 10), s2=st.floats(0.1, 10))
def test_geom_invariances(seed, s1, s2):
    rng = np.random.default_rng(seed)
    z, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 5))
    base = L.geom_preserve_loss(z, g).item()
    assert L.geom_preserve_loss(s1 * z, s2 * g).item() == pytest.approx(base, rel=1e-9, abs=1e-12)
    perm = rng.permutation(4)
    assert L.geom_preserve_loss(z[perm], g[perm]).item() == pytest.approx(base, rel=1e-9, abs=1e-12)
    assert base >= 0


def test_geom_gradients_and_errors():
    for seed in range(N_CASES):
        rng = np.random.default_rng(seed)
        b = int(rng.integers(2, 6))
        g = rng.normal(size=(b, 5))
        assert check_op(lambda z: L.geom_preserve_loss(z, g), [rng.normal(size=(b, 4))], rng) < REL_TOL
    with pytest.raises(ValueError):
        L.geom_preserve_loss(np.zeros((1, 3)), np.zeros((1, 5)))
    # coincident embeddings: no division by zero
    assert np.isfinite(L.geom_preserve_loss(np.zeros((3, 2)), np.eye(3)).item())


def test_standardize():
    g = np.array([[1.0, 5.0], [3.0, 5.0]])
    s = L.standardize(g)
    np.testing.assert_allclose(s[:, 0], [-1.0, 1.0])
    np.testing.assert_array_equal(s[:, 1], [0.0, 0.0])


# -- total ------------------------------------------------------------------------------------

def test_total_loss_weighting():
    cfg0 = L.LossConfig(beta_room=0, beta_mlm=0, beta_triplet=0, beta_geom=0)
    parts = {k: T.Tensor(v) for k, v in zip(("ddep", "room", "mlm", "triplet", "geom"), (1.0, 2.0, 3.0, 4.0, 5.0))}
    assert L.total_loss(parts, cfg0).item() == 1.0
    assert L.total_loss({k: T.Tensor(0.0) for k in parts}, L.LossConfig()).item() == 0.0
    cfg = L.LossConfig(beta_room=0.1, beta_mlm=0.1, beta_triplet=0.1, beta_geom=0.1)
    assert L.total_loss(parts, cfg).item() == pytest.approx(2.4, abs=1e-15)
    assert L.total_loss(parts, L.LossConfig()).item() == pytest.approx(1 + 1.0 + 1.5 + 0.8 + 0.5)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        L.LossConfig(head_weights={"bogus": 1.0})
    with pytest.raises(ValueError):
        L.LossConfig(beta_mlm=-1)
    with pytest.raises(ValueError):
        L.LossConfig.from_dict({"alpha": 0.2})
    assert L.LossConfig(head_weights={"t": 3.0}).head_weights["category"] == 1.0


# -- whole model --------------------------------------------------------------------------------

def full_model_gradient_error(max_entries=2, seed=0):
    """Finite-difference check of the joint objective over every parameter tensor, d=16, one-room batch."""
    room = synth_generate(SynthConfig(seed=51), 1)[0]
    m = M.LayoutTransformer(M.ModelConfig(d=16, n_layers_enc=1, n_layers_dec=1, n_heads=2, seed=seed))
    b = make_batch(prepare([room]))
    cfg = TrainConfig()

    def loss():
        parts = batch_losses(m, b, cfg, np.random.default_rng(9))
        return L.total_loss(parts, cfg.loss)

    return check_params(loss, m.parameters(), max_entries=max_entries, rng=np.random.default_rng(seed))


def test_full_model_gradient():
    assert full_model_gradient_error() < REL_TOL
