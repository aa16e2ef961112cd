from __future__ import annotations

import numpy as np
import pytest
import torch

from uniskel.errors import CorruptCheckpoint, EmptySet, MalformedSequence, NonFiniteLoss, VersionError
from uniskel.mst import (
    EOS,
    PAD,
    SOS,
    DecodeInvalid,
    MSTConfig,
    Trainer,
    batch_loss,
    build_model,
    collection_tensors,
    decode_step,
    encode,
    encode_tokens,
    grad_check_mst,
    greedy_decode,
    load_model,
    make_batch,
    predict_skeleton,
    save_model,
    train_mst,
)
from uniskel.checkpoint import load_arrays, save_arrays
from uniskel.sets import SetCollection, generate_sets
from uniskel.skeleton import as_skeleton, canonical_equal

SMALL = MSTConfig(d=32, heads=4, inducing=8, k_seed=2, n_isab=1, n_decoder=1)
TINY_VOCAB = (PAD, SOS, EOS, "c", "x", "add", "mul", "sin")
TINY = MSTConfig(d=8, heads=2, inducing=2, k_seed=1, n_isab=1, n_decoder=1, ff_mult=1, max_len=8, vocab=TINY_VOCAB, dtype="float64")


def _collection(seed=0, n_sets=4, n=32, text="add mul c sin mul c x c"):
    return generate_sets(as_skeleton(text), n_sets, n, np.random.default_rng(seed))


def _z(model, coll):
    return encode(model, coll).double().numpy()


def test_encoder_shape_and_row_permutation_invariance():
    model = build_model(SMALL)
    coll = _collection()
    z = _z(model, coll)
    assert z.shape == (SMALL.k_seed, SMALL.d)
    rng = np.random.default_rng(1)
    perms = [rng.permutation(len(x)) for x in coll.xs]
    shuffled = SetCollection([x[p] for x, p in zip(coll.xs, perms)], [y[p] for y, p in zip(coll.ys, perms)])
    assert np.allclose(z, _z(model, shuffled), atol=1e-5)


def test_encoder_set_permutation_invariance():
    model = build_model(SMALL)
    coll = _collection()
    order = [2, 0, 3, 1]
    swapped = SetCollection([coll.xs[i] for i in order], [coll.ys[i] for i in order])
    assert np.allclose(_z(model, coll), _z(model, swapped), atol=1e-5)


def test_padding_does_not_change_encoding():
    model = build_model(SMALL)
    short = _collection(n_sets=2, n=16)
    longer = SetCollection(
        [np.random.default_rng(5).uniform(-1, 1, 40) for _ in range(3)],
        [np.random.default_rng(6).uniform(-1, 1, 40) for _ in range(3)],
    )
    rows, row_mask, set_mask, _ = collection_tensors([short, longer])
    with torch.no_grad():
        batched = model.encode_tensor(rows, row_mask, set_mask)[0].double().numpy()
    assert np.allclose(batched, _z(model, short), atol=1e-5)


@pytest.mark.parametrize("n", [8, 33, 128])
def test_variable_set_sizes(n):
    model = build_model(SMALL)
    z = _z(model, _collection(n=n))
    assert np.isfinite(z).all()


def test_all_zero_rows_stay_finite():
    model = build_model(SMALL)
    coll = SetCollection([np.zeros(10)] * 2, [np.zeros(10)] * 2)
    assert np.isfinite(_z(model, coll)).all()


def test_empty_inputs_rejected():
    with pytest.raises(EmptySet):
        collection_tensors([])
    with pytest.raises(EmptySet):
        collection_tensors([SetCollection([np.zeros(0)], [np.zeros(0)])])


def test_decode_step_is_a_distribution():
    model = build_model(SMALL)
    z = encode(model, _collection())
    p = decode_step(model, z, [SMALL.vocab.index(SOS), 5, 4])
    assert p.shape == (len(SMALL.vocab),)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12
    with pytest.raises(ValueError):
        decode_step(model, z, [5])


def test_decoder_is_causal():
    model = build_model(SMALL)
    z = encode(model, _collection())[None]
    a = torch.tensor([[1, 5, 6, 4, 3, 3]])
    b = a.clone()
    b[0, 4:] = torch.tensor([7, 8])
    with torch.no_grad():
        la, lb = model.logits(z, a), model.logits(z, b)
    assert torch.allclose(la[:, :4], lb[:, :4], atol=1e-6)
    assert not torch.allclose(la[:, 4:], lb[:, 4:])


def test_zero_output_layer_gives_uniform_distribution():
    model = build_model(SMALL)
    with torch.no_grad():
        model.out.weight.zero_()
        model.out.bias.zero_()
    p = decode_step(model, encode(model, _collection()), [SMALL.vocab.index(SOS)])
    assert np.allclose(p, 1.0 / len(SMALL.vocab))


def test_token_encoding():
    ids = encode_tokens(["add", "x", "c"], TINY_VOCAB)
    assert ids == [1, 5, 4, 3, 2]
    with pytest.raises(MalformedSequence):
        encode_tokens(["add", "cos", "x"], TINY_VOCAB)


def test_fully_masked_targets_give_zero_loss_and_gradient():
    model = build_model(SMALL)
    batch = make_batch([_collection()], SMALL)
    batch.weights.zero_()
    loss = batch_loss(model, batch)
    loss.backward()
    assert float(loss.detach()) == 0.0
    assert all(float(p.grad.abs().max()) == 0.0 for p in model.parameters() if p.grad is not None)


def test_loss_decreases_on_repeated_batch():
    model = build_model(SMALL)
    batch = make_batch([_collection(i) for i in range(4)], SMALL)
    trainer = Trainer(model)
    losses = [trainer.step(batch) for _ in range(50)]
    assert losses[-1] < 0.5 * losses[0]
    assert sum(b < a for a, b in zip(losses, losses[1:])) >= 45


def test_non_finite_loss_raises_before_update():
    model = build_model(SMALL)
    batch = make_batch([_collection()], SMALL)
    batch.rows[0, 0, 0, 0] = float("nan")
    before = [p.detach().clone() for p in model.parameters()]
    with pytest.raises(NonFiniteLoss):
        Trainer(model).step(batch)
    assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))


def test_gradient_check_tiny_model():
    model = build_model(TINY)
    coll = SetCollection(
        [np.array([0.1, -0.5, 0.7, 0.3]), np.array([-0.2, 0.9, 0.4, -0.8])],
        [np.array([1.0, 0.2, -0.4, 0.5]), np.array([0.3, -0.6, 0.8, 0.1])],
        as_skeleton("add mul c sin x c"),
    )
    assert grad_check_mst(model, make_batch([coll], TINY)) <= 1e-4


def test_overfits_a_single_record():
    model = build_model(SMALL)
    coll = _collection()
    train_mst(model, [coll], 150, batch_size=1)
    model.eval()
    pred = predict_skeleton(model, coll)
    assert not isinstance(pred, DecodeInvalid)
    assert canonical_equal(pred, coll.target)


def test_truncated_decode_is_reported():
    model = build_model(SMALL)
    with torch.no_grad():
        model.out.weight.zero_()
        model.out.bias.zero_()
        model.out.bias[SMALL.vocab.index("add")] = 10.0
    got = greedy_decode(model, encode(model, _collection()), max_len=6)
    assert isinstance(got, DecodeInvalid) and got.truncated
    assert got.tokens == ["add"] * 6


def test_inference_is_deterministic():
    a, b = build_model(SMALL), build_model(SMALL)
    coll = _collection()
    assert np.array_equal(_z(a, coll), _z(b, coll))
    assert str(predict_skeleton(a, coll)) == str(predict_skeleton(b, coll))


def test_checkpoint_roundtrip(tmp_path):
    model = build_model(SMALL)
    train_mst(model, [_collection()], 3, batch_size=1)
    path = tmp_path / "mst.bin"
    save_model(model, path)
    loaded = load_model(path)
    coll = _collection(3)
    assert loaded.config == model.config
    model.eval()
    assert np.array_equal(_z(model, coll), _z(loaded, coll))


def test_checkpoint_errors(tmp_path):
    model = build_model(TINY)
    path = tmp_path / "mst.bin"
    save_model(model, path)
    meta, arrays = load_arrays(path, "mst")
    save_arrays(tmp_path / "v2.bin", "mst", {**meta, "version": 2}, arrays)
    with pytest.raises(VersionError):
        load_model(tmp_path / "v2.bin")
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(CorruptCheckpoint):
        load_model(path)


def test_config_validation():
    with pytest.raises(ValueError):
        MSTConfig(d=30, heads=4)
    with pytest.raises(ValueError):
        MSTConfig(vocab=("x", "c"))
    with pytest.raises(ValueError):
        MSTConfig(optimizer="rmsprop")
