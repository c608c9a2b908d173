"""Smoke test for the pycodistill extension module.

Build and install first:
    cd crates/py && maturin build --release -o /tmp/wheels
    pip install --force-reinstall /tmp/wheels/pycodistill-*.whl
"""

import math

import pycodistill as cd


def close(a, b, tol=1e-6):
    return abs(a - b) <= tol


def main():
    # Primitives.
    assert close(cd.cosine([3.0, 4.0], [4.0, 3.0]), 0.96)
    assert all(close(a, b) for a, b in zip(cd.l2_normalize([3.0, 4.0]), [0.6, 0.8]))
    loss = cd.infonce_loss([1.0, 0.0], [1.0, 0.0], [[0.0, 1.0], [0.0, -1.0]], 1.0)
    assert close(loss, math.log(1 + 2 * math.exp(-1)))
    assert close(cd.margin(0.6, 0.8, "ratio"), 0.75)
    assert cd.count_tokens("  a b\tc ") == 3
    assert cd.featurize("ab", 16, [2], 7) == {2: 2.0, 15: 1.0}

    # Margin search on the 2x2 hand example.
    best, rate = cd.align([[1.0, 0.0], [0.0, 1.0]], [[0.8, 0.6], [0.6, 0.8]], k=1)
    assert [b[0] for b in best] == [0, 1] and rate == 0.0
    assert close(best[0][1], 1.0)

    # Distillation on a small cipher task.
    pairs = cd.gen_cipher_corpus(1200, max_len=20)
    train, held = pairs[:1000], pairs[1000:]
    teacher = cd.Encoder.random(32, hash_seed=11, seed=7)
    assert teacher.frozen and teacher.dim == 32
    before = cd.xsim_error_rate(
        cd.Encoder.student_for(teacher, 1).encode_batch([s for s, _ in held]),
        teacher.encode_batch([t for _, t in held]),
    )
    config = cd.TrainConfig(queue_size=256, epochs=8, shuffle=False, prefilter=True, seed=1)
    student, trace = cd.train_distill(train, teacher, config)
    assert len(trace) == 8 and trace[-1]["loss"] < trace[0]["loss"]
    after = cd.xsim_error_rate(
        student.encode_batch([s for s, _ in held]),
        teacher.encode_batch([t for _, t in held]),
    )
    assert after < before, (before, after)

    again, _ = cd.train_distill(train, teacher, config)
    assert again == student

    # Filtering a noisy copy of the held-out pairs.
    noisy, labels = cd.inject_noise(held, 0.3, 42)
    assert sum(labels) == 60
    scores = cd.score_corpus(noisy, student, teacher)
    tokens = [cd.count_tokens(t) for _, t in noisy]
    chosen = cd.select_by_token_budget(scores, tokens, 500)
    assert sum(tokens[i] for i in chosen) <= 500

    try:
        cd.TrainConfig(tau=0.0)
    except ValueError as e:
        assert "tau" in str(e)
    else:
        raise AssertionError("tau=0 accepted")

    print(f"smoke test ok: xsim error {before:.1f}% -> {after:.1f}%, "
          f"{len(chosen)} pairs under a 500-token budget")


if __name__ == "__main__":
    main()
