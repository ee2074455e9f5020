import numpy as np
import pytest

from dualproto.core import l2_normalize_rows
from dualproto.errors import ClassOutOfRange, ZeroVector
from dualproto.proto_store import (
    CUMULATIVE_AVG,
    EXPONENTIAL_AVG,
    FULL_UPDATE,
    NO_UPDATE,
    TextualStore,
    VisualStore,
    load_checkpoint,
    save_checkpoint,
)
from dualproto.stream_io import ClassTextSet

from conftest import unit_rows

E1 = np.array([1.0, 0.0])
E2 = np.array([0.0, 1.0])


class TestTextualInit:
    def test_single_prompt_passthrough(self):
        rng = np.random.default_rng(0)
        rows = unit_rows(rng, 3, 5)
        cts = ClassTextSet(["a", "b", "c"], [rows[i : i + 1] for i in range(3)])
        store = TextualStore.from_classtext(cts)
        np.testing.assert_allclose(store.prototypes, rows, atol=1e-12)
        assert store.k == 0

    def test_two_prompt_mean(self):
        cts = ClassTextSet(["a", "b"], [np.stack([E1, E2]), np.stack([E2, E1])])
        store = TextualStore.from_classtext(cts)
        diag = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(store.prototypes, [[diag, diag], [diag, diag]])

    def test_cancelling_prompts_rejected(self):
        cts = ClassTextSet(["a", "b"], [np.stack([E1, -E1]), np.stack([E2, E2])])
        with pytest.raises(ZeroVector):
            TextualStore.from_classtext(cts)


class TestTextualEvolve:
    def make(self, rule, k=0):
        return TextualStore(np.stack([E1, E2]), rule=rule, k=k)

    def test_gate_rejects_all_rules(self):
        target = np.stack([E2, E1])
        for rule in (NO_UPDATE, FULL_UPDATE, EXPONENTIAL_AVG, CUMULATIVE_AVG):
            store = self.make(rule)
            assert store.evolve(target, gate_entropy=0.5, tau_t=0.1) is False
            np.testing.assert_array_equal(store.prototypes, np.stack([E1, E2]))
            assert store.k == 0

    def test_cumulative_first_acceptance_dominates(self):
        store = self.make(CUMULATIVE_AVG)
        target = np.stack([E2, E1])
        assert store.evolve(target, gate_entropy=0.02, tau_t=0.1) is True
        np.testing.assert_allclose(store.prototypes, target, atol=1e-12)
        assert store.k == 1

    def test_cumulative_second_acceptance_averages(self):
        store = self.make(CUMULATIVE_AVG, k=1)
        target = np.stack([E2, E1])
        store.evolve(target, gate_entropy=0.0, tau_t=0.1)
        diag = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(store.prototypes, [[diag, diag], [diag, diag]])
        assert store.k == 2

    def test_full_update_is_exact_replacement(self):
        store = self.make(FULL_UPDATE)
        target = np.stack([E2, E1])
        assert store.evolve(target, gate_entropy=0.0, tau_t=0.1) is True
        np.testing.assert_array_equal(store.prototypes, target)
        assert store.k == 0  # the counter belongs to the cumulative rule

    def test_no_update_leaves_store(self):
        store = self.make(NO_UPDATE)
        assert store.evolve(np.stack([E2, E1]), 0.0, 0.1) is False
        np.testing.assert_array_equal(store.prototypes, np.stack([E1, E2]))

    def test_rules_match_their_formulas(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            base = unit_rows(rng, 4, 6)
            target = unit_rows(rng, 4, 6)
            k = int(rng.integers(0, 10))
            gamma = float(rng.uniform(0.5, 0.99))

            store = TextualStore(base, rule=CUMULATIVE_AVG, k=k)
            store.evolve(target, 0.0, 1.0)
            np.testing.assert_allclose(
                store.prototypes, l2_normalize_rows(k * base + target), rtol=1e-12
            )
            assert store.k == k + 1

            store = TextualStore(base, rule=EXPONENTIAL_AVG, ema_gamma=gamma)
            store.evolve(target, 0.0, 1.0)
            np.testing.assert_allclose(
                store.prototypes,
                l2_normalize_rows(gamma * base + (1 - gamma) * target),
                rtol=1e-12,
            )

    def test_cumulative_fixed_point(self):
        rng = np.random.default_rng(2)
        target = unit_rows(rng, 3, 4)
        store = TextualStore(unit_rows(rng, 3, 4), rule=CUMULATIVE_AVG)
        for _ in range(5):
            store.evolve(target, 0.0, 1.0)
            np.testing.assert_allclose(store.prototypes, target, atol=1e-12)

    def test_rows_stay_unit(self):
        rng = np.random.default_rng(3)
        store = TextualStore(unit_rows(rng, 5, 8), rule=CUMULATIVE_AVG)
        for _ in range(200):
            store.evolve(unit_rows(rng, 5, 8), float(rng.uniform(0, 0.2)), 0.1)
        np.testing.assert_allclose(
            np.linalg.norm(store.prototypes, axis=1), 1.0, atol=1e-12
        )


class TestVisualQueue:
    def make(self, classes=2, dim=3, capacity=3, **kw):
        rng = np.random.default_rng(4)
        return VisualStore(unit_rows(rng, classes, dim), capacity, **kw)

    def test_insert_into_empty(self):
        store = self.make()
        f = np.array([0.0, 1.0, 0.0])
        assert store.update(0, f, 0.7) is True
        assert store.queue_entropies(0) == [0.7]
        protos, has = store.prototypes()
        np.testing.assert_allclose(protos[0], f)
        assert has.tolist() == [True, False]

    def test_replacement_of_worst(self):
        store = self.make()
        for h in (0.1, 0.5, 0.9):
            store.update(0, np.array([1.0, 0.0, 0.0]), h)
        assert store.update(0, np.array([0.0, 1.0, 0.0]), 0.4) is True
        assert store.queue_entropies(0) == [0.1, 0.4, 0.5]

    def test_discard_when_not_better(self):
        store = self.make()
        for h in (0.1, 0.5, 0.9):
            store.update(0, np.array([1.0, 0.0, 0.0]), h)
        assert store.update(0, np.array([0.0, 1.0, 0.0]), 1.2) is False
        assert store.queue_entropies(0) == [0.1, 0.5, 0.9]

    def test_class_out_of_range(self):
        store = self.make()
        with pytest.raises(ClassOutOfRange):
            store.update(2, np.array([1.0, 0.0, 0.0]), 0.1)

    def test_prototype_is_normalized_mean(self):
        store = self.make(dim=2)
        store.update(1, E1, 0.3)
        store.update(1, E2, 0.2)
        protos, _ = store.prototypes()
        diag = 1.0 / np.sqrt(2.0)
        np.testing.assert_allclose(protos[1], [diag, diag])

    def test_raw_mean_when_normalization_disabled(self):
        store = self.make(dim=2, normalize_prototypes=False)
        store.update(0, E1, 0.3)
        store.update(0, E2, 0.2)
        protos, _ = store.prototypes()
        np.testing.assert_allclose(protos[0], [0.5, 0.5])

    def test_empty_classes_report_placeholder(self):
        rng = np.random.default_rng(5)
        placeholder = unit_rows(rng, 3, 4)
        store = VisualStore(placeholder, capacity=2)
        protos, has = store.prototypes()
        np.testing.assert_array_equal(protos, placeholder)
        assert not has.any()


class TestQueueMatchesMinSelectionOracle:
    """The online replace-worst rule must equal brute-force min-M selection
    with FIFO tie-breaking, after every single operation."""

    def test_thousand_ops(self):
        rng = np.random.default_rng(6)
        classes, capacity = 5, 3
        store = VisualStore(unit_rows(rng, classes, 4), capacity)
        offers: list[list[tuple[float, int]]] = [[] for _ in range(classes)]
        seq = 0
        for _ in range(1500):
            label = int(rng.integers(0, classes))
            h = float(rng.integers(0, 12)) / 10.0  # coarse: ties occur often
            store.update(label, unit_rows(rng, 1, 4)[0], h)
            offers[label].append((h, seq))
            seq += 1
            q = store.queue_entropies(label)
            assert q == sorted(q) and len(q) <= capacity
            stored = sorted((h_, s_) for h_, s_, _ in store._queues[label])
            assert stored == sorted(offers[label])[:capacity]


class TestCheckpoint:
    def test_round_trip_and_continuation(self, tmp_path):
        rng = np.random.default_rng(7)
        textual = TextualStore(unit_rows(rng, 4, 6), rule=CUMULATIVE_AVG, k=5)
        visual = VisualStore(unit_rows(rng, 4, 6), capacity=3)
        for _ in range(20):
            visual.update(int(rng.integers(0, 4)), unit_rows(rng, 1, 6)[0],
                          float(rng.uniform(0, 2)))
        initial = unit_rows(rng, 4, 6)

        path = str(tmp_path / "state.dpek")
        save_checkpoint(path, textual, visual, initial)
        textual2, visual2, initial2 = load_checkpoint(path)

        np.testing.assert_array_equal(textual2.prototypes, textual.prototypes)
        assert (textual2.k, textual2.rule) == (textual.k, textual.rule)
        np.testing.assert_array_equal(initial2, initial)
        np.testing.assert_array_equal(visual2._protos, visual._protos)
        np.testing.assert_array_equal(visual2._has, visual._has)
        for qa, qb in zip(visual._queues, visual2._queues):
            assert [(h, s) for h, s, _ in qa] == [(h, s) for h, s, _ in qb]

        # identical behavior after resume
        feature = unit_rows(rng, 1, 6)[0]
        assert visual.update(1, feature, 0.05) == visual2.update(1, feature, 0.05)
        np.testing.assert_array_equal(visual._protos, visual2._protos)
