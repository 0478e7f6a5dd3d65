import math

import pytest
import torch
import torch.nn as nn

from Core.neural import (
    ModelDims, PositionalEncoding, TransformerDecoder, TransformerEncoder, count_parameters, cross_entropy_loss,
    decode_generate, embed, grad_check,
)


@pytest.fixture
def decoder():
    torch.manual_seed(0)
    embedding = nn.Embedding(10, 8)
    return TransformerDecoder(embedding, PositionalEncoding(8), 8, 2, 1, 16).double().eval()


def test_model_dims():
    assert ModelDims(vocab_size=20, d_model=8, n_heads=2).d_ff == 32
    with pytest.raises(ValueError):
        ModelDims(vocab_size=20, d_model=10, n_heads=3)


def test_positional_encoding():
    pe = PositionalEncoding(8, max_len=16)
    table = pe(5)
    assert table.shape == (5, 8)
    assert table[0].tolist() == [0.0, 1.0] * 4
    assert PositionalEncoding(7)(4).shape == (4, 7)
    assert not PositionalEncoding(8, enabled=False)(5).any()
    with pytest.raises(ValueError):
        pe(17)


def test_embed_checks_ids():
    embedding = nn.Embedding(10, 4)
    assert embed(torch.tensor([[1, 2, 3]]), embedding).shape == (1, 3, 4)
    with pytest.raises(IndexError):
        embed(torch.tensor([[1, 10]]), embedding)


def test_encoder_ignores_padding():
    torch.manual_seed(0)
    encoder = TransformerEncoder(8, 2, 2, 16).double()
    x = torch.randn(1, 5, 8, dtype=torch.float64)
    mask = torch.tensor([[False, False, False, True, True]])
    padded = encoder(x, mask)
    trimmed = encoder(x[:, :3])
    assert padded.shape == x.shape
    assert torch.allclose(padded[:, :3], trimmed, atol=1e-12)


def test_decoder_is_causal(decoder):
    memory = torch.randn(1, 4, 8, dtype=torch.float64)
    a = decoder(torch.tensor([[2, 3, 4]]), memory)
    b = decoder(torch.tensor([[2, 3, 9]]), memory)
    assert a.shape == (1, 3, 10)
    assert torch.allclose(a[:, :2], b[:, :2], atol=1e-12)
    assert not torch.allclose(a[:, 2], b[:, 2])


def test_cross_entropy_of_uniform_logits():
    logits = torch.zeros(1, 3, 7, dtype=torch.float64)
    gold = torch.tensor([[1, 2, 0]])
    assert cross_entropy_loss(logits, gold, pad_id=0).item() == pytest.approx(math.log(7), abs=1e-12)


def test_cross_entropy_rejects_bad_input():
    with pytest.raises(ValueError):
        cross_entropy_loss(torch.zeros(1, 3, 7), torch.tensor([[1, 2]]), pad_id=0)
    with pytest.raises(ValueError):
        cross_entropy_loss(torch.zeros(1, 2, 7), torch.tensor([[0, 0]]), pad_id=0)


def test_decode_generate(decoder):
    memory = torch.randn(2, 3, 8, dtype=torch.float64)
    assert decode_generate(memory, decoder, 0, bos_id=1, eos_id=2) == [[], []]
    greedy = decode_generate(memory, decoder, 4, bos_id=1, eos_id=2)
    beam = decode_generate(memory, decoder, 4, bos_id=1, eos_id=2, beam_size=3)
    for out in (greedy, beam):
        assert len(out) == 2
        for ids in out:
            assert len(ids) <= 4
            assert 2 not in ids
            assert all(isinstance(i, int) and 0 <= i < 10 for i in ids)
    assert decode_generate(memory, decoder, 4, 1, 2) == greedy
    with pytest.raises(ValueError):
        decode_generate(memory, decoder, 4, 1, 2, beam_size=0)


def test_count_parameters():
    layer = nn.Linear(3, 2)
    assert count_parameters(layer) == 8
    layer.bias.requires_grad_(False)
    assert count_parameters(layer, trainable_only=True) == 6
    assert count_parameters(layer) == 8


def test_grad_check_on_smooth_function():
    torch.manual_seed(0)
    w = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    v = torch.randn(3, dtype=torch.float64, requires_grad=True)
    x = torch.randn(5, 4, dtype=torch.float64)
    f = lambda: torch.tanh(x @ w + v).pow(2).sum()
    assert grad_check(f, [w, v], n_samples=15) < 1e-6


def test_grad_check_detects_wrong_gradients():
    w = torch.tensor([1.0, 2.0, 3.0], dtype=torch.float64, requires_grad=True)

    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x.pow(2).sum()

        @staticmethod
        def backward(ctx, grad):
            return torch.zeros(3, dtype=torch.float64) + grad

    assert grad_check(lambda: Wrong.apply(w) + 10.0 * w.pow(2).sum(), [w], n_samples=3) > 1e-2
