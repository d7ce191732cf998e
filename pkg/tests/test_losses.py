import math

import numpy as np
import pytest

from epigraph_splat import losses, synthetic
from epigraph_splat.errors import ContractError
from epigraph_splat.losses import Image, LossWeights

KERNEL = [1 / 16, 4 / 16, 6 / 16, 4 / 16, 1 / 16]


def reflect101(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


def loop_blur(x, kernel):
    H, W = x.shape
    tmp = np.zeros_like(x)
    for r in range(H):
        for c in range(W):
            tmp[r, c] = sum(kernel[t] * x[reflect101(r + t - 2, H), c] for t in range(5))
    out = np.zeros_like(x)
    for r in range(H):
        for c in range(W):
            out[r, c] = sum(kernel[t] * tmp[r, reflect101(c + t - 2, W)] for t in range(5))
    return out


def loop_pyramid(x, L):
    gauss = [x]
    for _ in range(L - 1):
        b = loop_blur(gauss[-1], KERNEL)
        gauss.append(np.array([[b[r, c] for c in range(0, b.shape[1], 2)] for r in range(0, b.shape[0], 2)]))
    levels = []
    for g, gn in zip(gauss[:-1], gauss[1:]):
        z = np.zeros_like(g)
        for r in range(gn.shape[0]):
            for c in range(gn.shape[1]):
                z[2 * r, 2 * c] = gn[r, c]
        levels.append(g - loop_blur(z, [2 * k for k in KERNEL]))
    levels.append(gauss[-1])
    return levels


def loop_ncc(a, b, w):
    H, W = a.shape
    scores = []
    for r in range(H - w + 1):
        for c in range(W - w + 1):
            pa = [a[r + i, c + j] for i in range(w) for j in range(w)]
            pb = [b[r + i, c + j] for i in range(w) for j in range(w)]
            n = len(pa)
            ma, mb = sum(pa) / n, sum(pb) / n
            cov = sum((x - ma) * (y - mb) for x, y in zip(pa, pb)) / n
            sa = math.sqrt(sum((x - ma) ** 2 for x in pa) / n)
            sb = math.sqrt(sum((y - mb) ** 2 for y in pb) / n)
            scores.append(cov / (sa * sb + 1e-8))
    return 1 - sum(scores) / len(scores)


def loop_ssim(a, b):
    g = [math.exp(-((i - 5) ** 2) / (2 * 1.5**2)) for i in range(11)]
    s = sum(g)
    g = [v / s for v in g]
    H, W = a.shape
    vals = []
    for r in range(H - 10):
        for c in range(W - 10):
            wts = [(g[i] * g[j], a[r + i, c + j], b[r + i, c + j]) for i in range(11) for j in range(11)]
            mx = sum(w * x for w, x, _ in wts)
            my = sum(w * y for w, _, y in wts)
            vx = sum(w * (x - mx) ** 2 for w, x, _ in wts)
            vy = sum(w * (y - my) ** 2 for w, _, y in wts)
            cxy = sum(w * (x - mx) * (y - my) for w, x, y in wts)
            c1, c2 = 0.01**2, 0.03**2
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


@pytest.fixture
def tex(rng):
    return synthetic.texture_image(rng, 40, 36)


# --- ncc --------------------------------------------------------------------

def test_ncc_matches_loop_oracle(backend, rng):
    a, b = rng.random((32, 32)), rng.random((32, 32))
    assert abs(losses.ncc_loss(a, b, 11) - loop_ncc(a, b, 11)) < 1e-10


def test_ncc_identity_and_affine(backend, tex):
    assert losses.ncc_loss(tex, tex) < 1e-6
    assert losses.ncc_loss(tex, 0.5 * tex + 0.1) < 1e-6
    assert losses.ncc_loss(tex, 0.8 * tex) < 1e-6


def test_ncc_symmetric_and_bounded(rng):
    a, b = rng.random((20, 24, 3)), rng.random((20, 24, 3))
    assert abs(losses.ncc_loss(a, b) - losses.ncc_loss(b, a)) < 1e-12
    assert 0 <= losses.ncc_loss(a, b) <= 2 + 1e-9
    assert losses.ncc_loss(a, 1 - a) > 1.9


def test_ncc_contract_errors(rng):
    a = rng.random((20, 20))
    with pytest.raises(ContractError):
        losses.ncc_loss(a, a[:19])
    with pytest.raises(ContractError):
        losses.ncc_loss(a, a, 10)
    with pytest.raises(ContractError):
        losses.ncc_loss(a, a, 21)


# --- pyramid ----------------------------------------------------------------

def test_pyramid_matches_loop_oracle(rng):
    x = rng.random((13, 10))
    ours = losses.laplacian_pyramid(x, 3)
    ref = loop_pyramid(x, 3)
    for p, q in zip(ours, ref):
        assert p.shape[:2] == q.shape
        assert np.max(np.abs(p[..., 0] - q)) < 1e-12


def test_pyramid_dims():
    levels = losses.laplacian_pyramid(np.zeros((64, 64)), 4)
    assert [lv.shape[:2] for lv in levels] == [(64, 64), (32, 32), (16, 16), (8, 8)]
    levels = losses.laplacian_pyramid(np.zeros((17, 9)), 3)
    assert [lv.shape[:2] for lv in levels] == [(17, 9), (9, 5), (5, 3)]


def test_pyramid_constant_image():
    levels = losses.laplacian_pyramid(np.full((32, 24), 0.375), 4)
    assert all(not np.any(lv) for lv in levels[:-1])
    assert np.all(levels[-1] == 0.375)


@pytest.mark.parametrize("shape", [(64, 64), (37, 50, 3), (8, 8)])
def test_pyramid_reconstruction(rng, shape):
    x = rng.random(shape)
    rec = losses.collapse_pyramid(losses.laplacian_pyramid(x, 4))
    assert np.max(np.abs(rec - losses._as_array(x))) < 1e-6


def test_pyramid_too_small():
    with pytest.raises(ContractError):
        losses.laplacian_pyramid(np.zeros((7, 30)), 4)
    with pytest.raises(ContractError):
        losses.laplacian_pyramid(np.zeros((8, 8)), 0)


def test_laplacian_loss_examples(rng, tex):
    assert losses.laplacian_loss(tex, tex) == 0.0
    base = 0.8 * rng.random((32, 32))
    assert losses.laplacian_loss(base, base + 0.1) == pytest.approx(0.1, abs=1e-9)


def test_laplacian_loss_matches_oracle(rng):
    a, b = rng.random((16, 20)), rng.random((16, 20))
    ref = sum(np.mean(np.abs(p - q)) for p, q in zip(loop_pyramid(a, 3), loop_pyramid(b, 3)))
    assert abs(losses.laplacian_loss(a, b, 3) - ref) < 1e-10


# --- ssim -------------------------------------------------------------------

def test_ssim_identities(rng, tex):
    assert losses.ssim(tex, tex) == pytest.approx(1.0, abs=1e-9)
    flat = np.full((16, 16), 0.5)
    assert losses.ssim(flat, flat) == pytest.approx(1.0, abs=1e-9)
    a, b = rng.random((20, 20)), rng.random((20, 20))
    assert abs(losses.ssim(a, b) - losses.ssim(b, a)) < 1e-9


def test_ssim_matches_window_oracle(rng):
    a = rng.random((16, 18))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert abs(losses.ssim(a, b) - loop_ssim(a, b)) < 1e-8


def test_ssim_needs_window():
    with pytest.raises(ContractError):
        losses.ssim(np.zeros((10, 30)), np.zeros((10, 30)))


# --- volume -----------------------------------------------------------------

def test_volume_examples(backend):
    assert losses.volume_regularization([(1, 1, 1), (2, 2, 2)]) == 9.0
    assert losses.volume_regularization([]) == 0.0


def test_volume_matches_loop_exactly(backend, rng):
    s = rng.uniform(0.01, 3.0, (100, 3))
    total = 0.0
    for x, y, z in s:
        total += x * y * z
    assert losses.volume_regularization(s) == total


def test_volume_additive_over_concatenation(backend, rng):
    # dyadic values keep every partial sum exact
    a = rng.integers(1, 64, (30, 3)) / 16.0
    b = rng.integers(1, 64, (20, 3)) / 16.0
    assert losses.volume_regularization(np.vstack([a, b])) == (
        losses.volume_regularization(a) + losses.volume_regularization(b)
    )


def test_volume_rejects_nonpositive():
    with pytest.raises(ContractError):
        losses.volume_regularization([(1, 0, 1)])


# --- pixel / total ----------------------------------------------------------

def test_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda_ssim, w.lambda_vol, w.lambda_laplacian, w.lambda_ncc) == (0.2, 0.001, 1.0, 0.01)
    with pytest.raises(ContractError):
        LossWeights(lambda_ncc=-1.0)


def test_pixel_loss_examples(tex):
    assert losses.pixel_loss(tex, tex) == pytest.approx(0.0, abs=1e-9)
    assert losses.pixel_loss(tex, tex, [(1, 1, 1)]) == pytest.approx(0.001, abs=1e-9)


def test_total_identical_images(tex):
    assert losses.total_loss(tex, tex).total < 1e-5


def test_total_recombines_independent_terms(rng):
    a, b = rng.random((24, 24)), rng.random((24, 24))
    scales = rng.uniform(0.1, 1, (5, 3))
    w = LossWeights()
    rep = losses.total_loss(a, b, scales, w)
    l1 = np.mean(np.abs(a - b))
    pixel = l1 + 0.2 * (1 - loop_ssim(a, b)) + 0.001 * sum(x * y * z for x, y, z in scales)
    lap = sum(np.mean(np.abs(p - q)) for p, q in zip(loop_pyramid(a, 4), loop_pyramid(b, 4)))
    total = pixel + 1.0 * lap + 0.01 * loop_ncc(a, b, 11)
    assert abs(rep.total - total) < 1e-12
    assert rep.total == rep.pixel + w.lambda_laplacian * rep.laplacian + w.lambda_ncc * rep.ncc


@pytest.mark.parametrize("name", ["lambda_ssim", "lambda_vol", "lambda_laplacian", "lambda_ncc"])
def test_total_linear_in_each_weight(rng, name):
    a, b = rng.random((24, 24)), rng.random((24, 24))
    scales = [(0.5, 1.0, 2.0)]
    base = LossWeights(**{name: 0.0})
    t0 = losses.total_loss(a, b, scales, base).total
    t1 = losses.total_loss(a, b, scales, LossWeights(**{name: 0.3})).total
    t2 = losses.total_loss(a, b, scales, LossWeights(**{name: 0.6})).total
    assert t2 - t0 == pytest.approx(2 * (t1 - t0), rel=1e-12, abs=1e-15)


def test_multichannel_is_channel_mean(rng):
    a, b = rng.random((20, 20, 3)), rng.random((20, 20, 3))
    per = [losses.ssim(a[..., c], b[..., c]) for c in range(3)]
    assert losses.ssim(a, b) == pytest.approx(np.mean(per), abs=1e-15)
    per = [losses.ncc_loss(a[..., c], b[..., c]) for c in range(3)]
    assert losses.ncc_loss(a, b) == pytest.approx(np.mean(per), abs=1e-15)


def test_image_validation():
    with pytest.raises(ContractError):
        Image(np.full((4, 4), 1.5))
    with pytest.raises(ContractError):
        Image(np.zeros((4, 4, 2)))
    img = Image(np.zeros((4, 5)))
    assert (img.height, img.width, img.channels) == (4, 5, 1)


def test_report_as_dict(tex):
    d = losses.total_loss(tex, tex).as_dict()
    assert set(d) == {"l1", "ssim_loss", "vol", "pixel", "ncc", "laplacian", "total"}
