"""Smoke test for the `pgn` extension module.

Build first:  pip install --no-build-isolation -e crates/py
Run:          python python/smoke_test.py
"""

import tempfile
from pathlib import Path

import pgn


def main():
    train = pgn.Dataset.synthetic(64, seed=0)
    test = pgn.Dataset.synthetic(32, seed=0, split="test")
    assert train.shape == [64, 3, 32, 32] and len(test) == 32
    assert all(0 <= l < train.classes for l in train.labels)

    f = pgn.Classifier.train(train, train, epochs=2, seed=0)
    top1, map_ = f.score(test)
    assert 0.0 <= top1 <= 1.0 and map_ is not None
    assert f.black_box().score(test)[1] is None
    before = f.checksum()

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "f.params"
        f.save(str(path))
        assert pgn.Classifier.load(str(path)).checksum() == before
        train.save(str(Path(tmp) / "data"))
        back = pgn.Dataset.load(str(Path(tmp) / "data"))
        assert back.labels == train.labels and back.images() == train.images()

    cfg = pgn.TrainConfig("adversarial", epochs=1, batch_size=16, seed=1)
    run = pgn.train_pgn(train, f, cfg)
    rows = run.rows()
    assert len(rows) == 1 and rows[0]["l_r"] >= 0.0
    assert run.perturb(test).shape == test.shape
    assert f.checksum() == before

    # lam = 0 leaves the images untouched.
    idle = pgn.train_pgn(train, f, pgn.TrainConfig("enhance", lam=0.0, epochs=1, batch_size=16))
    assert idle.perturb(test).images() == test.images()

    bb = pgn.train_pgn(train, f.black_box(), pgn.TrainConfig("adversarial", epochs=1, batch_size=16, black_box=True))
    assert bb.rows()[0]["map"] is None

    try:
        pgn.TrainConfig("sideways")
    except pgn.PgnError as e:
        assert "mode" in str(e)
    else:
        raise AssertionError("bad mode accepted")

    assert 0.0 <= f.fgsm_accuracy(test, 0.03) <= 1.0
    checks = pgn.verify_theory(0)
    assert checks and all(passed for *_, passed in checks)
    print(f"ok: classifier top1 {top1:.3f}, {len(checks)} theory checks passed")


if __name__ == "__main__":
    main()
