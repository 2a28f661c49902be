import numpy as np
import pytest

from face_forge import autodiff as ad
from face_forge.autodiff import (Tape, Tensor, UsageError, backward,
                                 finite_difference_grad, relative_error)
from face_forge.emotion import (EmotionParams, augment_emotion,
                                emotion_distribution, mine_augment,
                                mine_candidates, visual_query)


def make_params(d, rng=None, identity=False):
    def mat():
        if identity:
            return np.eye(d)
        if rng is None:
            return np.zeros((d, d))
        return rng.standard_normal((d, d)) * 0.4
    return EmotionParams(phi_f=Tensor(mat(), requires_grad=True),
                         phi_v=Tensor(mat(), requires_grad=True),
                         phi_e=Tensor(mat(), requires_grad=True))


class TestMineCandidates:
    def test_single_dictionary_row(self, rng):
        d = 5
        row = rng.standard_normal((1, d))
        out = mine_candidates(Tensor(rng.standard_normal((3, d))), Tensor(row))
        assert np.allclose(out.data, np.tile(row, (3, 1)), atol=1e-15)

    def test_dictionary_permutation_invariance(self, rng):
        d = 6
        facts = Tensor(rng.standard_normal((4, d)))
        dictionary = rng.standard_normal((9, d))
        perm = rng.permutation(9)
        assert np.allclose(mine_candidates(facts, Tensor(dictionary)).data,
                           mine_candidates(facts, Tensor(dictionary[perm])).data,
                           atol=1e-12)

    def test_rows_in_dictionary_hull(self, rng):
        d = 4
        dictionary = rng.standard_normal((7, d))
        out = mine_candidates(Tensor(rng.standard_normal((5, d))),
                              Tensor(dictionary)).data
        assert np.all(out <= dictionary.max(axis=0) + 1e-12)
        assert np.all(out >= dictionary.min(axis=0) - 1e-12)

    def test_empty_dictionary_rejected(self, rng):
        with pytest.raises(UsageError):
            mine_candidates(Tensor(rng.standard_normal((2, 3))),
                            Tensor(np.zeros((0, 3))))

    def test_default_dimension_shapes(self, rng):
        # 16 frames at width 300 against the 179-word dictionary
        out = mine_candidates(Tensor(rng.standard_normal((16, 300))),
                              Tensor(rng.standard_normal((179, 300))))
        assert out.data.shape == (16, 300)


class TestVisualQuery:
    def test_zero_maps_give_uniform(self, rng):
        n, d = 4, 5
        q_v = visual_query(Tensor(rng.standard_normal((n, d))),
                           Tensor(rng.standard_normal((n, d))),
                           make_params(d)).data
        assert np.allclose(q_v, 1.0 / n, atol=1e-15)

    def test_single_frame(self, rng):
        q_v = visual_query(Tensor(rng.standard_normal((1, 3))),
                           Tensor(rng.standard_normal((1, 3))),
                           make_params(3, rng=rng)).data
        assert np.allclose(q_v, [[1.0]], atol=1e-15)

    def test_rows_stochastic(self, rng):
        n, d = 6, 4
        for _ in range(50):
            q_v = visual_query(Tensor(rng.standard_normal((n, d)) * 3),
                               Tensor(rng.standard_normal((n, d)) * 3),
                               make_params(d, rng=rng)).data
            assert np.all(q_v > 0)
            assert np.max(np.abs(q_v.sum(axis=1) - 1.0)) < 1e-12

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(UsageError):
            visual_query(Tensor(rng.standard_normal((3, 4))),
                         Tensor(rng.standard_normal((2, 4))), make_params(4))


class TestAugmentEmotion:
    def test_identity_map_passthrough(self, rng):
        n, d = 4, 4
        candidates = rng.standard_normal((n, d))
        out = augment_emotion(Tensor(np.eye(n)), Tensor(candidates),
                              make_params(d, identity=True)).data
        assert np.allclose(out, candidates, atol=1e-15)

    def test_uniform_query_gives_mean_row(self, rng):
        n, d = 5, 3
        candidates = rng.standard_normal((n, d))
        params = make_params(d, rng=rng)
        out = augment_emotion(Tensor(np.full((n, n), 1.0 / n)), Tensor(candidates),
                              params).data
        mean_row = (candidates @ params.phi_e.data).mean(axis=0)
        assert np.allclose(out, np.tile(mean_row, (n, 1)), atol=1e-12)

    def test_hand_multiplication_oracle(self, rng):
        q_v = rng.uniform(0.0, 1.0, size=(3, 3))
        q_v /= q_v.sum(axis=1, keepdims=True)
        candidates = rng.standard_normal((3, 3))
        params = make_params(3, identity=True)
        out = augment_emotion(Tensor(q_v), Tensor(candidates), params).data
        expected = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                for k in range(3):
                    expected[i, j] += q_v[i, k] * candidates[k, j]
        assert np.allclose(out, expected, atol=1e-12)

    def test_rows_bounded_by_projected_dictionary_hull(self, rng):
        n, d, n_words = 4, 5, 8
        dictionary = rng.standard_normal((n_words, d))
        params = make_params(d, rng=rng)
        out = mine_augment(Tensor(rng.standard_normal((n, d))),
                           Tensor(rng.standard_normal((n, d))),
                           Tensor(dictionary), params).data
        projected = dictionary @ params.phi_e.data
        assert np.all(out <= projected.max(axis=0) + 1e-12)
        assert np.all(out >= projected.min(axis=0) - 1e-12)


class TestEndToEndGradients:
    def test_composition_matches_finite_differences(self, rng):
        n, d, n_words = 3, 4, 5
        facts = rng.standard_normal((n, d))
        video = rng.standard_normal((n, d))
        dictionary = rng.standard_normal((n_words, d))
        params = make_params(d, rng=rng)

        inputs = {
            "facts": facts, "video": video, "dictionary": dictionary,
            "phi_f": params.phi_f.data.copy(),
            "phi_v": params.phi_v.data.copy(),
            "phi_e": params.phi_e.data.copy(),
        }

        def run(vals: dict) -> float:
            p = EmotionParams(phi_f=Tensor(vals["phi_f"]),
                              phi_v=Tensor(vals["phi_v"]),
                              phi_e=Tensor(vals["phi_e"]))
            out = mine_augment(Tensor(vals["facts"]), Tensor(vals["video"]),
                               Tensor(vals["dictionary"]), p)
            return ad.tsum(out).item()

        with Tape() as tape:
            f_t = Tensor(facts, requires_grad=True)
            v_t = Tensor(video, requires_grad=True)
            d_t = Tensor(dictionary, requires_grad=True)
            backward(ad.tsum(mine_augment(f_t, v_t, d_t, params)), tape)
        grads = {"facts": f_t.grad, "video": v_t.grad, "dictionary": d_t.grad,
                 "phi_f": params.phi_f.grad, "phi_v": params.phi_v.grad,
                 "phi_e": params.phi_e.grad}
        for key in inputs:
            def f(values: np.ndarray, _k=key) -> float:
                vals = dict(inputs)
                vals[_k] = values
                return run(vals)
            numeric = finite_difference_grad(f, inputs[key], h=1e-5)
            assert relative_error(grads[key], numeric) < 1e-4, key


class TestDiagnostics:
    def test_distribution_sums_to_one(self, rng):
        dist = emotion_distribution(rng.standard_normal((4, 6)),
                                    rng.standard_normal((9, 6)))
        assert dist.shape == (9,)
        assert np.all(dist > 0)
        assert abs(dist.sum() - 1.0) < 1e-12
