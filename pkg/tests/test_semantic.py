import math

import pytest
import torch

from onedc.errors import ContractViolation
from onedc.hyperprior import SemanticDecoder, fsq_bound, fsq_quantize
from onedc.semantic import CodePredictor, aux_loss, top1_accuracy


@pytest.fixture(scope="module")
def predictor():
    torch.manual_seed(0)
    return CodePredictor(sem_dim=32, codebook_size=64, width=32, depth=4, window=4, head_dim=16)


def test_logit_grid_shape(predictor):
    tokens = torch.randn(2, 4, 32)  # 2x2 hyper grid
    logits = predictor(tokens, (2, 2))
    assert logits.shape == (2, 64, 8, 8)  # 4x upsample to the 1/16 grid


def test_token_count_contract(predictor):
    with pytest.raises(ContractViolation):
        predictor(torch.randn(1, 3, 32), (2, 2))


def test_window_level_permutation_equivariance(predictor):
    # pre-positional stage: permuting 1/64 cells permutes their 4x4 blocks
    tokens = torch.randn(1, 4, 32)
    with torch.no_grad():
        base = predictor.upsample_tokens(tokens, (2, 2))
    perm = torch.tensor([2, 3, 0, 1])
    with torch.no_grad():
        shuffled = predictor.upsample_tokens(tokens[:, perm], (2, 2))
    # cell (i,j) of the permuted input lands where the permutation sends it
    blocks = base.unfold(2, 4, 4).unfold(3, 4, 4)  # (1, c, 2, 2, 4, 4)
    blocks = blocks.reshape(1, base.shape[1], 4, 4, 4)
    shuffled_blocks = shuffled.unfold(2, 4, 4).unfold(3, 4, 4).reshape(1, base.shape[1], 4, 4, 4)
    assert torch.allclose(shuffled_blocks, blocks[:, :, perm], atol=1e-6)


def test_uniform_logits_cross_entropy_is_log_k():
    logits = torch.zeros(2, 512, 4, 4)
    targets = torch.randint(0, 512, (2, 4, 4))
    loss = aux_loss(logits, targets)
    assert abs(float(loss) - math.log(512)) < 1e-5
    assert abs(float(loss) - 6.238) < 1e-3


def test_one_hot_logits_drive_loss_to_zero():
    targets = torch.randint(0, 64, (1, 4, 4))
    logits = torch.full((1, 64, 4, 4), -50.0)
    logits.scatter_(1, targets.unsqueeze(1), 50.0)
    assert float(aux_loss(logits, targets)) < 1e-6
    assert top1_accuracy(logits, targets) == 1.0


def test_aux_loss_nonnegative(rng):
    torch.manual_seed(0)
    logits = torch.randn(2, 64, 4, 4)
    targets = torch.randint(0, 64, (2, 4, 4))
    assert float(aux_loss(logits, targets)) >= 0.0


def test_target_out_of_range_rejected():
    logits = torch.zeros(1, 64, 2, 2)
    bad = torch.full((1, 2, 2), 64, dtype=torch.long)
    with pytest.raises(ContractViolation):
        aux_loss(logits, bad)


def test_shape_mismatch_rejected():
    with pytest.raises(ContractViolation):
        aux_loss(torch.zeros(1, 64, 2, 2), torch.zeros(1, 3, 3, dtype=torch.long))


def test_gradient_reaches_semantic_decoder():
    torch.manual_seed(0)
    h_sem = SemanticDecoder(sem_dim=32, width=16)
    predictor = CodePredictor(sem_dim=32, codebook_size=64, width=32, depth=2, window=4, head_dim=16)
    z = torch.randn(1, 7, 2, 2)
    codes, _ = fsq_quantize(z)
    tokens = h_sem(codes, fsq_bound(z))
    logits = predictor(tokens, (2, 2))
    targets = torch.randint(0, 64, (1, 8, 8))
    aux_loss(logits, targets).backward()
    norms = [p.grad.abs().sum() for p in h_sem.parameters() if p.grad is not None]
    assert sum(float(n) for n in norms) > 0


def test_shifted_window_blocks_still_work_on_odd_grids(predictor):
    tokens = torch.randn(1, 6, 32)  # 2x3 hyper grid -> 8x12 logits grid
    logits = predictor(tokens, (2, 3))
    assert logits.shape == (1, 64, 8, 12)
    assert torch.isfinite(logits).all()
