import numpy as np
import pytest
import torch

from dice_export.errors import ExportConfigError
from dice_export.model import REGISTRY, build_model
from dice_export.tokenizer import encode


def _images(seed, n=2, size=240):
    rng = np.random.default_rng(seed)
    return torch.from_numpy(rng.uniform(0, 1, (n, 3, size, size)).astype(np.float32))


def test_registry_geometry():
    spec = REGISTRY["ViT-B-16-plus-240"]
    assert spec.embed_dim == 640
    assert spec.image_size == 240
    assert spec.patch_size == 16
    assert spec.grid == 15
    assert REGISTRY["dev-16-240-small"].grid == 15


def test_unknown_model_id():
    with pytest.raises(ExportConfigError, match="unknown model id"):
        build_model("ViT-H-莫须有")


def test_unavailable_device():
    if torch.cuda.is_available():
        pytest.skip("cuda present")
    with pytest.raises(ExportConfigError, match="not available"):
        build_model("dev-16-240-small", device="cuda")


def test_seeded_build_is_reproducible():
    a = build_model("dev-16-240-small")
    b = build_model("dev-16-240-small")
    for key, value in a.state_dict().items():
        assert torch.equal(value, b.state_dict()[key]), key


def test_parameters_frozen(dev_model):
    assert all(not p.requires_grad for p in dev_model.parameters())


def test_vision_shapes(dev_model):
    cls, patches = dev_model.visual(_images(0))
    assert cls.shape == (2, 64)
    assert patches.shape == (2, 15, 15, 64)
    assert torch.isfinite(cls).all() and torch.isfinite(patches).all()


def test_dual_path_differs_from_standard(dev_model):
    images = _images(1, n=1)
    _, vv = dev_model.visual(images)
    std = dev_model.visual.forward_standard_patches(images)
    # the value-value rewiring of the last block must actually change
    # the patch tokens, not just relabel the standard path
    assert (vv - std).abs().max() > 1e-3


def test_batch_composition_invariance(dev_model):
    images = _images(2, n=3)
    _, together = dev_model.visual(images)
    _, alone = dev_model.visual(images[1:2])
    assert torch.allclose(together[1], alone[0], atol=1e-5)


def _embed(model, prompts):
    spec = model.spec
    pairs = [encode(p, spec.context) for p in prompts]
    tokens = torch.tensor([ids for ids, _ in pairs])
    eot = torch.tensor([idx for _, idx in pairs])
    return model.text(tokens, eot)


def test_duplicate_prompts_identical_rows(dev_model):
    out = _embed(dev_model, ["a photo", "a photo", "another"])
    assert torch.equal(out[0], out[1])
    assert not torch.equal(out[0], out[2])


def test_prompt_embedding_ignores_batch_padding(dev_model):
    # causal attention plus EOT pooling: a longer neighbour in the batch
    # must not leak into a short prompt's embedding
    short = _embed(dev_model, ["tiny"])
    mixed = _embed(dev_model, ["tiny", "a considerably longer prompt than that one"])
    assert torch.allclose(short[0], mixed[0], atol=1e-6)


def test_checkpoint_round_trip(tmp_path, dev_model):
    path = tmp_path / "dev.pt"
    torch.save(dev_model.state_dict(), path)
    reloaded = build_model("dev-16-240-small", checkpoint=path)
    images = _images(3, n=1)
    _, a = dev_model.visual(images)
    _, b = reloaded.visual(images)
    assert torch.equal(a, b)


def test_checkpoint_changes_outputs(tmp_path, dev_model):
    state = {k: v.clone() for k, v in dev_model.state_dict().items()}
    state["visual.proj"] = torch.randn_like(state["visual.proj"])
    path = tmp_path / "tweaked.pt"
    torch.save(state, path)
    tweaked = build_model("dev-16-240-small", checkpoint=path)
    images = _images(4, n=1)
    _, a = dev_model.visual(images)
    _, b = tweaked.visual(images)
    assert not torch.allclose(a, b)


def test_checkpoint_load_failure(tmp_path):
    garbage = tmp_path / "bad.pt"
    garbage.write_bytes(b"not a state dict")
    with pytest.raises(ExportConfigError, match="model load failure"):
        build_model("dev-16-240-small", checkpoint=garbage)


def test_checkpoint_architecture_mismatch(tmp_path, dev_model):
    state = dev_model.state_dict()
    state.pop("visual.proj")
    path = tmp_path / "partial.pt"
    torch.save(state, path)
    with pytest.raises(ExportConfigError, match="model load failure"):
        build_model("dev-16-240-small", checkpoint=path)
