"""Prompt bank selection, joint ensembling algebra, and init determinism."""

import pytest
import torch

from crossview.errors import ConfigurationError, ValidationError
from crossview.prompts import ViewPromptBank


def _bank(seed=0, views=("v1", "v2", "v3"), blocks=4, n=2, d=8):
    return ViewPromptBank(views, blocks, n, d, seed=seed)


def test_shapes_and_selection():
    bank = _bank()
    assert bank.prompts.shape == (3, 4, 2, 8)
    assert bank.num_views == 3 and bank.prompts_per_block == 2
    sel = bank.select("v2")
    assert sel.shape == (4, 2, 8)
    assert torch.equal(sel, bank.prompts[1])
    # shared storage: writing through the bank is visible in the slice
    with torch.no_grad():
        bank.prompts[1].add_(1.0)
    assert torch.equal(sel, bank.prompts[1])
    with pytest.raises(ValidationError):
        bank.select("nope")
    assert bank.index_of("v3") == 2


def test_joint_matches_loop_oracle():
    bank = _bank(seed=3)
    oracle = torch.zeros(4, 2, 8)
    for v in bank.view_ids:
        oracle = oracle + bank.select(v).detach()
    assert torch.equal(bank.joint_matrices().detach(), oracle)


def test_joint_single_view_identity():
    bank = ViewPromptBank(["only"], 2, 3, 5, seed=1)
    assert torch.equal(bank.joint_matrices(), bank.select("only"))


def test_joint_cancellation():
    bank = ViewPromptBank(["a", "b"], 2, 2, 4, seed=2)
    with torch.no_grad():
        bank.prompts[1] = -bank.prompts[0]
    assert torch.count_nonzero(bank.joint_matrices()) == 0


def test_joint_is_autograd_connected():
    bank = _bank()
    bank.joint_matrices().sum().backward()
    assert bank.prompts.grad is not None
    assert torch.all(bank.prompts.grad == 1.0)


def test_init_deterministic_and_truncated():
    a = _bank(seed=9)
    b = _bank(seed=9)
    c = _bank(seed=10)
    assert torch.equal(a.prompts, b.prompts)
    assert not torch.equal(a.prompts, c.prompts)
    # truncated at 2 std = 0.04
    assert float(a.prompts.detach().abs().max()) <= 0.04 + 1e-6
    assert float(a.prompts.detach().std()) > 0.005


def test_bank_validation():
    with pytest.raises(ConfigurationError):
        ViewPromptBank(["a", "a"], 2, 2, 4)
    with pytest.raises(ConfigurationError):
        ViewPromptBank(["a"], 0, 2, 4)
    with pytest.raises(ConfigurationError):
        ViewPromptBank(["a"], 2, -1, 4)
    # n=0 is a legal "no prompt tokens" bank
    empty = ViewPromptBank(["a"], 2, 0, 4)
    assert empty.select("a").shape == (2, 0, 4)
