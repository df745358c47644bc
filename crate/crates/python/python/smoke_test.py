"""Quick check of the compiled `hebae` extension.

Build and install first, e.g. `maturin develop` or
`maturin build && pip install target/wheels/hebae-*.whl`, then run
`python python/smoke_test.py`.
"""

import math
import struct
import tempfile
import os

import hebae


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    assert close(hebae.kl_diag_to_std([1.0], [1.0]), 0.5)
    assert close(hebae.kl_full_to_std([0.0, 0.0], [[2.0, 0.0], [0.0, 2.0]]), 1.0 - math.log(2.0))
    assert close(hebae.kl_conditional_hebae([[1.0, 0.0], [0.0, 1.0]]), 0.0)
    assert close(hebae.mmd_unbiased([[0.0], [0.0]], [[1.0], [1.0]]), 2.0 / 3.0, 1e-15)

    r = hebae.cholesky([[4.0, 2.0], [2.0, 3.0]])
    assert close(r[0][0], 2.0) and close(r[1][0], 1.0) and close(r[1][1], math.sqrt(2.0))
    try:
        hebae.cholesky([[1.0, 2.0], [2.0, 1.0]])
        raise AssertionError("indefinite matrix accepted")
    except ValueError:
        pass

    xs = [float(i) for i in range(2000)]
    assert close(hebae.binned_mi(xs, xs, 16), math.log(16), 1e-12)

    labels = struct.pack(">II", 2049, 3) + bytes([3, 0, 9])
    assert list(hebae.parse_idx_labels(labels)) == [3, 0, 9]
    images = struct.pack(">IIII", 2051, 1, 2, 2) + bytes([0, 64, 128, 255])
    count, rows, cols, pixels = hebae.parse_idx_images(images)
    assert (count, rows, cols, list(pixels)) == (1, 2, 2, [0, 64, 128, 255])

    model = hebae.Model("hebae", 3, seed=1)
    assert model.kind == "hebae" and model.latent_dim == 3
    mu, log_var = model.encode([[0.5] * 784, [0.1] * 784])
    assert len(mu) == 2 and len(mu[0]) == 3 and log_var is not None
    out = model.decode(mu)
    assert len(out) == 2 and all(0.0 < p < 1.0 for p in out[0])

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.ckpt")
        model.save(path)
        again = hebae.Model.load(path)
        assert again.decode(mu) == out

    cfg = hebae.TrainingConfig("model = wae\nk = 5\n")
    assert cfg.model == "wae" and cfg.k == 5 and cfg.lambda_ == 10.0
    assert hebae.TrainingConfig(cfg.to_text()).to_text() == cfg.to_text()

    print("hebae python smoke test: ok")


if __name__ == "__main__":
    main()
