import numpy as np
import pytest

from stylesynth.corpus import (
    NEUTRAL_STYLE,
    RENDER_GRID,
    ContentFactors,
    CorpusBundle,
    CorpusConfig,
    CorpusError,
    StyleFactors,
    build_corpus,
    mixing_matrices,
    render,
    render_linear,
    sample_factors,
)


def test_semantics_pool_uses_neutral_style():
    (_, style), = sample_factors(seed=7, n=1, role="semantics_db")
    assert style.encode().tolist() == list(NEUTRAL_STYLE)


def test_sample_factors_deterministic():
    a = sample_factors(seed=7, n=3, role="target")
    b = sample_factors(seed=7, n=3, role="target")
    assert a == b


def test_sample_factors_within_ranges():
    for content, style in sample_factors(seed=7, n=1000, role="target"):
        content.validate()
        style.validate()


def test_sample_factors_rejects_bad_input():
    with pytest.raises(CorpusError):
        sample_factors(seed=1, n=0, role="target")
    with pytest.raises(CorpusError):
        sample_factors(seed=1, n=1, role="nope")


def test_linear_mode_zero_factors_give_zero_vector():
    assert np.array_equal(render_linear(np.zeros(8), np.zeros(6)), np.zeros(64))


def test_linear_mode_superposition():
    gamma = ContentFactors(2, 0.4, 0.6, 0.2).encode()
    sigma = StyleFactors(0.7, 1.5, 0.5, 0.8, 0.9, 2.0).encode()
    _, w_s = mixing_matrices()
    lhs = render_linear(gamma, sigma) - render_linear(gamma, np.zeros(6))
    assert np.allclose(lhs, w_s @ sigma, atol=1e-12)


def _render_oracle(content: ContentFactors, style: StyleFactors) -> np.ndarray:
    """Direct transcription of the render-mode pixel formula."""
    h, w, _ = RENDER_GRID
    out = np.zeros(RENDER_GRID)
    for i in range(h):
        for j in range(w):
            u = (j + 0.5) / w
            v = (i + 0.5) / h
            du, dv = u - content.center_x, v - content.center_y
            size = content.size
            if content.shape_class == 0:
                sd = size - np.hypot(du, dv)
            elif content.shape_class == 1:
                sd = size - max(abs(du), abs(dv))
            elif content.shape_class == 2:
                sd = min(-0.866 * du + 0.5 * (dv + size), 0.866 * du + 0.5 * (dv + size), 0.5 * size - dv)
            elif content.shape_class == 3:
                arm = size / 3.0
                sd = max(min(size - abs(du), arm - abs(dv)), min(arm - abs(du), size - abs(dv)))
            else:
                r = np.hypot(du, dv)
                sd = min(size - r, r - 0.6 * size)
            mask = 1.0 / (1.0 + np.exp(-20.0 * sd))
            texture = 0.5 + 0.5 * np.sin(2.0 * np.pi * style.texture_freq * (u + v))
            base = style.brightness + style.contrast * (mask * texture - 0.5) + 0.5
            for ch, tint in enumerate((style.tint_r, style.tint_g, style.tint_b)):
                out[i, j, ch] = min(max(tint * base, 0.0), 1.0)
    return out.ravel()


def test_render_zero_texture_frequency_is_flat_texture():
    content = ContentFactors(0, 0.5, 0.5, 0.3)
    style = StyleFactors(0.5, 1.0, 1.0, 0.9, 0.8, 0.0)
    item = render(content, style, "render")
    assert np.allclose(item.data, _render_oracle(content, style), atol=1e-12)


@pytest.mark.parametrize("shape_class", range(5))
def test_render_matches_formula_oracle(shape_class):
    content = ContentFactors(shape_class, 0.35, 0.62, 0.25)
    style = StyleFactors(0.4, 1.7, 0.9, 0.5, 0.7, 3.1)
    item = render(content, style, "render")
    assert np.allclose(item.data, _render_oracle(content, style), atol=1e-12)


def test_render_mode_bounds():
    for content, style in sample_factors(seed=3, n=50, role="target"):
        item = render(content, style, "render")
        assert item.data.min() >= 0.0 and item.data.max() <= 1.0


def test_render_rejects_out_of_range_factors():
    with pytest.raises(CorpusError):
        render(ContentFactors(0, 0.05, 0.5, 0.3), StyleFactors.neutral(), "linear")


def test_linear_content_changes_stay_in_content_space():
    w_c, _ = mixing_matrices()
    rng = np.random.default_rng(0)
    for _ in range(5):
        g1, g2 = rng.uniform(size=8), rng.uniform(size=8)
        s = rng.uniform(size=6)
        diff = render_linear(g1, s) - render_linear(g2, s)
        residual = diff - w_c @ (w_c.T @ diff)
        assert np.linalg.norm(residual) < 1e-10


def test_build_corpus_minimal_counts():
    bundle = build_corpus(CorpusConfig(n_target=1, n_style=1, n_semantics=1), seed=5)
    assert len(bundle) == 3
    sem = bundle.ids_for_role("semantics_db")
    assert bundle.sigma[sem[0]].tolist() == list(NEUTRAL_STYLE)


def test_build_corpus_rejects_bad_counts():
    with pytest.raises(CorpusError):
        build_corpus(CorpusConfig(n_target=0), seed=5)


def test_default_role_histogram():
    bundle = build_corpus(CorpusConfig(n_target=20, n_style=30, n_semantics=40), seed=5)
    assert len(bundle) == 90
    assert [len(bundle.ids_for_role(r)) for r in ("target", "style_db", "semantics_db")] == [20, 30, 40]


def test_container_roundtrip_and_byte_identity(tmp_path):
    config = CorpusConfig(n_target=5, n_style=5, n_semantics=5)
    bundle = build_corpus(config, seed=9)
    d1 = bundle.save(tmp_path / "a")
    d2 = build_corpus(config, seed=9).save(tmp_path / "b")
    assert (d1 / "manifest.json").read_bytes() == (d2 / "manifest.json").read_bytes()
    assert (d1 / "items.f32").read_bytes() == (d2 / "items.f32").read_bytes()

    loaded = CorpusBundle.load(d1)
    assert loaded.content_hash() == bundle.content_hash()
    assert np.allclose(loaded.data, bundle.data, atol=1e-6)
    assert np.array_equal(loaded.gamma, bundle.gamma)
    assert loaded.role_of(0) == "target"


def test_render_mode_corpus_grid():
    bundle = build_corpus(CorpusConfig(mode="render", n_target=2, n_style=2, n_semantics=2), seed=1)
    assert bundle.grid == RENDER_GRID
    assert bundle.data.shape[1] == 432
