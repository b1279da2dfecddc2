import numpy as np
import pytest
import torch
from PIL import Image as PILImage

import styler.substrate as substrate
from styler.errors import ImageIOError, InvalidInputError
from styler.losses import gram_loss
from styler.substrate import (
    DatasetCursor,
    covariance,
    downsample2,
    finite_diff_grad,
    load_image,
    resize,
    save_image,
    sym_eig,
)


class TestSymEig:
    def test_identity(self):
        vals, vecs = sym_eig(np.eye(3))
        assert np.allclose(vals, [1.0, 1.0, 1.0])
        assert np.allclose(vecs.T @ vecs, np.eye(3), atol=1e-12)

    def test_diagonal(self):
        vals, vecs = sym_eig(np.diag([4.0, 1.0]))
        assert np.allclose(vals, [4.0, 1.0])
        # axis-aligned up to sign
        assert np.allclose(np.abs(vecs), np.eye(2), atol=1e-10)

    def test_construct_then_decompose(self):
        rng = np.random.default_rng(42)
        q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
        lam = np.sort(rng.uniform(0.1, 5.0, 8))[::-1]
        a = q @ np.diag(lam) @ q.T
        vals, _ = sym_eig(a)
        assert np.abs(vals - lam).max() < 1e-6

    @pytest.mark.parametrize("n", [2, 4, 16, 64, 129, 512])
    def test_reconstruction_up_to_512(self, n):
        rng = np.random.default_rng(n)
        m = rng.standard_normal((n, n))
        a = (m + m.T) / 2
        vals, vecs = sym_eig(a)
        rec = vecs @ np.diag(vals) @ vecs.T
        assert np.linalg.norm(rec - a) <= 1e-5 * np.linalg.norm(a)
        assert np.abs(vecs.T @ vecs - np.eye(n)).max() <= 1e-6
        assert np.all(np.diff(vals) <= 1e-12)

    def test_not_symmetric(self):
        with pytest.raises(InvalidInputError, match="symmetric"):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_non_finite(self):
        with pytest.raises(InvalidInputError, match="finite"):
            sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))

    def test_python_fallback_matches_kernel(self):
        rng = np.random.default_rng(5)
        m = rng.standard_normal((24, 24))
        a = (m + m.T) / 2
        work = np.ascontiguousarray(a.copy())
        vt = np.eye(24)
        rp, rq = substrate._round_robin_rounds(24)
        substrate._jacobi_rounds_python(work, vt, rp, rq, 1e-10 * np.linalg.norm(a), 100)
        rec = vt.T @ np.diag(np.diag(work)) @ vt
        assert np.linalg.norm(rec - a) <= 1e-8 * np.linalg.norm(a)


class TestCovariance:
    def test_constant_feature(self):
        mean, cov = covariance(torch.full((2, 3, 3), 5.0))
        assert np.allclose(mean, [5.0, 5.0])
        assert np.allclose(cov, 0.0)

    def test_hand_arithmetic(self):
        mean, cov = covariance(torch.tensor([[[1.0, -1.0]]]))
        assert np.allclose(mean, [0.0])
        assert np.allclose(cov, [[1.0]])

    def test_identical_channels_low_rank(self):
        x = torch.rand(1, 4, 4, generator=torch.Generator().manual_seed(0))
        feat = torch.cat([x, x], dim=0)
        _, cov = covariance(feat)
        assert np.linalg.matrix_rank(cov, tol=1e-10) <= 1

    def test_symmetric_psd(self):
        feat = torch.rand(6, 5, 5, generator=torch.Generator().manual_seed(1))
        _, cov = covariance(feat)
        assert np.abs(cov - cov.T).max() < 1e-8
        assert np.linalg.eigvalsh(cov).min() > -1e-8

    def test_spatial_permutation_invariance(self):
        gen = torch.Generator().manual_seed(2)
        feat = torch.rand(4, 3, 5, generator=gen)
        flat = feat.reshape(4, -1)
        perm = torch.randperm(15, generator=gen)
        mean_a, cov_a = covariance(feat)
        mean_b, cov_b = covariance(flat[:, perm].reshape(4, 3, 5))
        assert np.allclose(mean_a, mean_b)
        assert np.allclose(cov_a, cov_b)


class TestFiniteDiffGrad:
    def test_quadratic(self):
        x = torch.tensor([3.0], dtype=torch.float64)
        grad = finite_diff_grad(lambda t: float((t ** 2).sum()), x, 1e-4)
        assert abs(float(grad[0]) - 6.0) < 1e-6

    def test_linear(self):
        x = torch.rand(2, 3, dtype=torch.float64)
        grad = finite_diff_grad(lambda t: float(t.sum()), x, 1e-4)
        assert torch.allclose(grad, torch.ones_like(x), atol=1e-8)

    def test_gram_loss_gradient(self):
        gen = torch.Generator().manual_seed(3)
        target = torch.rand(2, 2, 2, generator=gen, dtype=torch.float64)
        x = torch.rand(2, 2, 2, generator=gen, dtype=torch.float64)
        x_ad = x.clone().requires_grad_(True)
        gram_loss(target, x_ad).backward()
        numeric = finite_diff_grad(lambda t: float(gram_loss(target, t)), x, 1e-5)
        denom = x_ad.grad.norm()
        assert (numeric - x_ad.grad).norm() / denom < 1e-3

    def test_quadratic_form_matches_qx(self):
        rng = np.random.default_rng(7)
        m = rng.standard_normal((5, 5))
        q = torch.tensor((m + m.T) / 2)
        x = torch.tensor(rng.standard_normal(5))
        numeric = finite_diff_grad(lambda t: float(0.5 * t @ q @ t), x, 1e-5)
        expected = q @ x
        assert (numeric - expected).norm() / expected.norm() < 1e-5

    def test_bad_eps(self):
        with pytest.raises(InvalidInputError):
            finite_diff_grad(lambda t: 0.0, torch.zeros(1), 0.0)


class TestImageIO:
    def test_round_trip(self, tmp_path):
        img = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(9))
        path = tmp_path / "img.png"
        save_image(img, path)
        loaded = load_image(path)
        assert (loaded - img).abs().max() <= 1.0 / 255.0

    def test_grayscale_broadcast(self, tmp_path):
        arr = ((np.arange(64).reshape(8, 8) * 3) % 256).astype(np.uint8)
        path = tmp_path / "gray.png"
        PILImage.fromarray(arr, mode="L").save(path)
        img = load_image(path)
        assert img.shape == (3, 8, 8)
        assert torch.equal(img[0], img[1]) and torch.equal(img[1], img[2])

    def test_truncated_file(self, tmp_path):
        good = tmp_path / "good.png"
        save_image(torch.rand(3, 16, 16), good)
        bad = tmp_path / "bad.png"
        bad.write_bytes(good.read_bytes()[:40])
        with pytest.raises(ImageIOError):
            load_image(bad)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageIOError, match="not found"):
            load_image(tmp_path / "nope.png")


class TestResizeDownsample:
    def test_constant_preserved(self):
        out = downsample2(torch.full((3, 4, 4), 0.5))
        assert out.shape == (3, 2, 2)
        assert torch.equal(out, torch.full((3, 2, 2), 0.5))

    def test_block_mean(self):
        img = torch.zeros(3, 2, 2)
        img[0] = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
        out = downsample2(img)
        assert float(out[0, 0, 0]) == pytest.approx(0.5)

    def test_halving_512(self):
        assert downsample2(torch.rand(3, 512, 512)).shape == (3, 256, 256)

    def test_odd_dims_rejected(self):
        with pytest.raises(InvalidInputError, match="even"):
            downsample2(torch.rand(3, 9, 8))

    def test_mean_preserving(self):
        img = torch.rand(3, 32, 32, generator=torch.Generator().manual_seed(4))
        out = downsample2(img)
        for ch in range(3):
            assert abs(float(img[ch].mean()) - float(out[ch].mean())) < 1e-6

    def test_resize_shapes(self):
        out = resize(torch.rand(3, 20, 30), 8, 12)
        assert out.shape == (3, 8, 12)
        with pytest.raises(InvalidInputError):
            resize(torch.rand(3, 8, 8), 0, 4)


class TestDatasetCursor:
    def test_deterministic_order(self, tmp_path):
        for i in range(6):
            save_image(torch.full((3, 8, 8), i / 6.0), tmp_path / f"{i}.png")
        a = [img.mean() for _, img in zip(range(9), DatasetCursor(tmp_path, seed=3))]
        b = [img.mean() for _, img in zip(range(9), DatasetCursor(tmp_path, seed=3))]
        assert a == b
        c = [img.mean() for _, img in zip(range(6), DatasetCursor(tmp_path, seed=4))]
        assert sorted(a[:6]) == sorted(c)

    def test_skips_bad_files(self, tmp_path, caplog):
        save_image(torch.rand(3, 8, 8), tmp_path / "ok.png")
        (tmp_path / "broken.png").write_bytes(b"not a png")
        cursor = DatasetCursor(tmp_path, seed=0)
        imgs = [next(cursor) for _ in range(3)]
        assert all(img.shape == (3, 8, 8) for img in imgs)
        assert any("skipping" in rec.message for rec in caplog.records)

    def test_empty_root(self, tmp_path):
        cursor = DatasetCursor(tmp_path, seed=0)
        assert cursor.files == []
        with pytest.raises(StopIteration):
            next(cursor)

    def test_recursive_scan(self, tmp_path):
        (tmp_path / "sub").mkdir()
        save_image(torch.rand(3, 8, 8), tmp_path / "sub" / "a.jpg")
        assert len(DatasetCursor(tmp_path, seed=0).files) == 1
